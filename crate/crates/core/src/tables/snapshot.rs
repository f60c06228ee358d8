//! Tab-separated table snapshots: a header line naming the fields, then one
//! record per line in schema order. Empty field means "absent".

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::ids::{BleId, FacilityId, PhoneId, Timestamp};

use super::{ContactEvent, LocationFix, MasterRecord, SymbolicLocation, VisitRecord};

pub trait TsvRecord: Sized {
    const HEADER: &'static [&'static str];

    fn to_fields(&self) -> Vec<String>;

    fn from_fields(fields: &[&str]) -> Result<Self, String>;
}

pub fn write_tsv<'a, R, W>(mut out: W, records: impl IntoIterator<Item = &'a R>) -> Result<()>
where
    R: TsvRecord + 'a,
    W: Write,
{
    writeln!(out, "{}", R::HEADER.join("\t"))?;
    for rec in records {
        writeln!(out, "{}", rec.to_fields().join("\t"))?;
    }
    out.flush()?;
    Ok(())
}

/// `name` only labels error messages.
pub fn read_tsv<R: TsvRecord, B: BufRead>(input: B, name: &str) -> Result<Vec<R>> {
    let err = |line: usize, message: String| Error::Snapshot {
        file: name.to_owned(),
        line,
        message,
    };
    let mut lines = input.lines();
    let header = lines.next().transpose()?.ok_or_else(|| err(1, "missing header".into()))?;
    if header.split('\t').collect::<Vec<_>>() != R::HEADER {
        return Err(err(1, format!("expected header {:?}", R::HEADER.join("\t"))));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != R::HEADER.len() {
            return Err(err(i + 2, format!("expected {} fields, got {}", R::HEADER.len(), fields.len())));
        }
        out.push(R::from_fields(&fields).map_err(|m| err(i + 2, m))?);
    }
    Ok(out)
}

fn time(s: &str) -> Result<Timestamp, String> {
    s.parse().map_err(|_| format!("bad timestamp {s:?}"))
}

fn float(s: &str) -> Result<f64, String> {
    s.parse().map_err(|_| format!("bad number {s:?}"))
}

impl TsvRecord for VisitRecord {
    const HEADER: &'static [&'static str] = &["phone", "facility", "visitor", "time"];

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.phone.to_string(),
            self.facility.to_string(),
            self.visitor.to_hex(),
            self.time.to_string(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        Ok(VisitRecord {
            phone: PhoneId::parse(f[0]).map_err(|e| e.to_string())?,
            facility: FacilityId::new(f[1]),
            visitor: f[2].parse().map_err(|e: Error| e.to_string())?,
            time: time(f[3])?,
        })
    }
}

impl TsvRecord for MasterRecord {
    const HEADER: &'static [&'static str] = &["visitor", "device", "time_in", "time_out"];

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.visitor.to_hex(),
            self.device.to_string(),
            self.time_in.to_string(),
            self.time_out.map(|t| t.to_string()).unwrap_or_default(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        Ok(MasterRecord {
            visitor: f[0].parse().map_err(|e: Error| e.to_string())?,
            device: BleId::new(f[1]),
            time_in: time(f[2])?,
            time_out: if f[3].is_empty() { None } else { Some(time(f[3])?) },
        })
    }
}

impl TsvRecord for ContactEvent {
    const HEADER: &'static [&'static str] = &["device_a", "device_b", "time", "distance"];

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.device_a.to_string(),
            self.device_b.to_string(),
            self.time.to_string(),
            self.distance.to_string(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        let distance = float(f[3])?;
        if !(distance.is_finite() && distance > 0.0) {
            return Err(format!("distance must be finite and positive, got {distance}"));
        }
        if f[0] == f[1] {
            return Err("contact event between a device and itself".into());
        }
        Ok(ContactEvent {
            device_a: BleId::new(f[0]),
            device_b: BleId::new(f[1]),
            time: time(f[2])?,
            distance,
        })
    }
}

impl TsvRecord for LocationFix {
    const HEADER: &'static [&'static str] = &["device", "zone", "col", "row", "resolution", "time"];

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.device.to_string(),
            self.location.zone.to_string(),
            self.location.col.to_string(),
            self.location.row.to_string(),
            self.location.resolution.to_string(),
            self.time.to_string(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        let cell = |s: &str| s.parse::<u32>().map_err(|_| format!("bad cell index {s:?}"));
        Ok(LocationFix {
            device: BleId::new(f[0]),
            location: SymbolicLocation {
                zone: f[1].into(),
                col: cell(f[2])?,
                row: cell(f[3])?,
                resolution: float(f[4])?,
            },
            time: time(f[5])?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::VisitorId;
    use proptest::prelude::*;

    fn roundtrip<R: TsvRecord + PartialEq + std::fmt::Debug>(records: &[R]) {
        let mut buf = Vec::new();
        write_tsv(&mut buf, records).unwrap();
        let back: Vec<R> = read_tsv(&buf[..], "t").unwrap();
        assert_eq!(back, records);
    }

    proptest! {
        #[test]
        fn master_and_contact_rows_roundtrip(
            bytes in any::<[u8; 16]>(),
            t_in in 0u64..1_000_000,
            dur in proptest::option::of(0u64..10_000),
            dist in 0.01f64..1e6,
        ) {
            roundtrip(&[MasterRecord {
                visitor: VisitorId::from_bytes(bytes),
                device: BleId::new("dev-1"),
                time_in: t_in,
                time_out: dur.map(|d| t_in + d),
            }]);
            roundtrip(&[ContactEvent {
                device_a: BleId::new("a"),
                device_b: BleId::new("b"),
                time: t_in,
                distance: dist,
            }]);
        }
    }

    #[test]
    fn header_and_shape_checked() {
        let bad = b"visitor\tdevice\n";
        assert!(read_tsv::<MasterRecord, _>(&bad[..], "m").is_err());
        let short = b"device_a\tdevice_b\ttime\tdistance\na\tb\t1\n";
        let e = read_tsv::<ContactEvent, _>(&short[..], "c").unwrap_err();
        assert!(e.to_string().contains("line 2"));
        let neg = b"device_a\tdevice_b\ttime\tdistance\na\tb\t1\t-2\n";
        assert!(read_tsv::<ContactEvent, _>(&neg[..], "c").is_err());
    }

    #[test]
    fn location_row_roundtrip() {
        roundtrip(&[LocationFix {
            device: BleId::new("B1"),
            location: SymbolicLocation {
                zone: "food court".into(),
                col: 3,
                row: 4,
                resolution: 0.5,
            },
            time: 77,
        }]);
    }
}
