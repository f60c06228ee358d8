//! Trace reports kept by id, optionally mirrored to `<dir>/<id>.json`.
//! The id counter lives in `<dir>/sequence` so ids survive wipes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fctrace_core::{Result, Timestamp, TraceReport};

#[derive(Debug, Default)]
pub struct ReportStore {
    dir: Option<PathBuf>,
    reports: BTreeMap<String, TraceReport>,
    next: u64,
}

fn sequence(id: &str) -> Option<u64> {
    id.strip_prefix('T')?.parse().ok()
}

impl ReportStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Reads every report already in `dir`.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut store = ReportStore { dir: Some(dir.to_path_buf()), ..Self::default() };
        let seq = dir.join("sequence");
        if seq.exists() {
            store.next = fs::read_to_string(&seq)?
                .trim()
                .parse()
                .map_err(|_| fctrace_core::Error::Snapshot {
                    file: seq.display().to_string(),
                    line: 1,
                    message: "not a number".into(),
                })?;
        }
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).filter(|_| path.extension().is_some_and(|e| e == "json")) else {
                continue;
            };
            let report: TraceReport = serde_json::from_slice(&fs::read(&path)?)?;
            store.next = store.next.max(sequence(id).map_or(0, |n| n + 1));
            store.reports.insert(id.to_string(), report);
        }
        Ok(store)
    }

    /// Ids run `T000000`, `T000001`, ...
    pub fn next_id(&mut self) -> String {
        let id = format!("T{:06}", self.next);
        self.next += 1;
        id
    }

    pub fn insert(&mut self, id: String, report: TraceReport) -> Result<()> {
        if let Some(n) = sequence(&id) {
            self.next = self.next.max(n + 1);
        }
        if let Some(dir) = &self.dir {
            fs::write(dir.join(format!("{id}.json")), serde_json::to_vec_pretty(&report)?)?;
            fs::write(dir.join("sequence"), self.next.to_string())?;
        }
        self.reports.insert(id, report);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&TraceReport> {
        self.reports.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.reports.keys()
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Drops reports computed before `cutoff`; they name phones whose visit
    /// records are gone.
    pub fn wipe_before(&mut self, cutoff: Timestamp) -> Result<usize> {
        let old: Vec<String> = self.reports.iter().filter(|(_, r)| r.as_of < cutoff).map(|(id, _)| id.clone()).collect();
        for id in &old {
            self.reports.remove(id);
            if let Some(dir) = &self.dir {
                let path = dir.join(format!("{id}.json"));
                if path.exists() {
                    fs::remove_file(path)?;
                }
            }
        }
        Ok(old.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fctrace_core::{PhoneId, Window};

    fn report(as_of: Timestamp) -> TraceReport {
        TraceReport {
            patient: PhoneId::parse("5550000000").unwrap(),
            period: Window::new(0, as_of),
            as_of,
            sections: vec![],
            contacts: vec![],
        }
    }

    #[test]
    fn ids_continue_after_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReportStore::open(dir.path()).unwrap();
        let a = s.next_id();
        s.insert(a.clone(), report(10)).unwrap();
        let b = s.next_id();
        s.insert(b.clone(), report(20)).unwrap();
        assert_eq!((a.as_str(), b.as_str()), ("T000000", "T000001"));
        let mut back = ReportStore::open(dir.path()).unwrap();
        assert_eq!(back.get(&b), Some(&report(20)));
        assert_eq!(back.next_id(), "T000002");
        assert_eq!(back.wipe_before(15).unwrap(), 1);
        let mut after = ReportStore::open(dir.path()).unwrap();
        assert_eq!(after.len(), 1);
        assert_eq!(after.wipe_before(100).unwrap(), 1);
        assert_eq!(ReportStore::open(dir.path()).unwrap().next_id(), "T000002");
    }
}
