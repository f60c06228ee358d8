use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use fctrace_cli::client::{HttpFacility, RegistryClient};
use fctrace_cli::config::Config;
use fctrace_cli::reports::ReportStore;
use fctrace_cli::service::{self, facility_router, now_secs, registry_router, FacilityService, RegistryService};
use fctrace_core::protocol::FacilityDirectory;
use fctrace_core::sim::{generate_scenario_with, write_event, Replay, ScenarioSpec};
use fctrace_core::{
    render_text, Deployment, RetentionPolicy, Facility, FacilityId, PhoneId, ProximityParams, Registry, Timestamp, TraceReport, TraceRequest,
    Window,
};

type BoxError = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(name = "fctrace", version, about = "Facility-owned contact tracing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario and run it through an in-process deployment.
    Simulate {
        /// Scenario spec JSON.
        spec: PathBuf,
        /// Output directory for events.tsv, truth.json and the deployment data.
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
    /// Run the registry service.
    ServeRegistry {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one facility's service.
    ServeFacility {
        id: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Trace a patient's contacts and store the report.
    Trace {
        phone: String,
        #[arg(long)]
        since: Option<Timestamp>,
        #[arg(long)]
        until: Option<Timestamp>,
        /// Reference time; defaults to now.
        #[arg(long)]
        as_of: Option<Timestamp>,
        /// Proximity radius, meters.
        #[arg(long)]
        radius: Option<f64>,
        /// Proximity window, seconds.
        #[arg(long)]
        window: Option<u64>,
        #[command(flatten)]
        target: Target,
    },
    /// Drop every record older than the retention horizon.
    Wipe {
        #[arg(long)]
        now: Timestamp,
        #[command(flatten)]
        target: Target,
    },
    /// Print a stored trace report.
    Report {
        id: String,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        target: Target,
    },
}

/// A local data directory written by `simulate`, or the registry named in
/// the config.
#[derive(clap::Args)]
struct Target {
    /// Deployment data directory.
    #[arg(long, conflicts_with = "config")]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

enum Backend {
    Local(PathBuf),
    Remote(RegistryClient),
}

impl Target {
    fn backend(&self) -> Result<Backend, BoxError> {
        if let Some(d) = &self.data {
            return Ok(Backend::Local(d.clone()));
        }
        let config = Config::load(&Config::locate(self.config.as_deref())?)?;
        Ok(Backend::Remote(RegistryClient::new(config.registry_url(), config.registry.token.clone())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<(), BoxError> {
    match cmd {
        Command::Simulate { spec, out } => simulate(&spec, &out),
        Command::ServeRegistry { config } => serve_registry(config.as_deref()),
        Command::ServeFacility { id, config } => serve_facility(&id, config.as_deref()),
        Command::Trace { phone, since, until, as_of, radius, window, target } => {
            let mut req = TraceRequest::new(PhoneId::parse(&phone)?);
            req.as_of = as_of;
            let mut proximity = ProximityParams::default();
            proximity.radius = radius.unwrap_or(proximity.radius);
            proximity.window = window.unwrap_or(proximity.window);
            req.proximity = proximity;
            if since.is_some() || until.is_some() {
                let end = until.or(as_of).unwrap_or_else(now_secs);
                let start = since.unwrap_or(end.saturating_sub(RetentionPolicy::TWO_WEEKS));
                req.period = Some(Window::new(start, end));
            }
            let (id, report) = match target.backend()? {
                Backend::Local(dir) => trace_local(&dir, &req)?,
                Backend::Remote(client) => {
                    let resp = client.case(&req)?;
                    (resp.trace_id, resp.report)
                }
            };
            print_trace(&id, &report);
            Ok(())
        }
        Command::Wipe { now, target } => match target.backend()? {
            Backend::Local(dir) => {
                let mut d = Deployment::load(&dir)?;
                let summary = d.wipe_expired(now);
                let mut reports = ReportStore::open(&dir.join("reports"))?;
                let dropped = reports.wipe_before(d.registry.policy().cutoff(now))?;
                d.save(&dir)?;
                println!("wiped {} records, {} reports", summary.total(), dropped);
                Ok(())
            }
            Backend::Remote(client) => {
                let resp = client.wipe(Some(now))?;
                let facility: usize = resp.facilities.values().map(|c| c.total()).sum();
                println!("wiped {} records, {} reports", resp.registry + facility, resp.reports);
                for (id, e) in &resp.errors {
                    eprintln!("facility {id}: {}: {}", e.code, e.message);
                }
                if resp.errors.is_empty() {
                    Ok(())
                } else {
                    Err(format!("{} facilities failed to wipe", resp.errors.len()).into())
                }
            }
        },
        Command::Report { id, format, target } => {
            let report = match target.backend()? {
                Backend::Local(dir) => ReportStore::open(&dir.join("reports"))?
                    .get(&id)
                    .cloned()
                    .ok_or_else(|| format!("unknown report {id}"))?,
                Backend::Remote(client) => client.report(&id)?,
            };
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
                Format::Text => print!("{}", render_text(&report)),
            }
            Ok(())
        }
    }
}

fn print_trace(id: &str, report: &TraceReport) {
    eprintln!("trace {id}: {} contacts", report.phones().len());
    for s in &report.sections {
        for e in &s.errors {
            eprintln!("facility {} ({}): {}: {}", s.facility, e.mode.as_str(), e.code, e.message);
        }
    }
    for p in report.phones() {
        println!("{p}");
    }
}

fn trace_local(dir: &Path, req: &TraceRequest) -> Result<(String, TraceReport), BoxError> {
    let d = Deployment::load(dir)?;
    let mut reports = ReportStore::open(&dir.join("reports"))?;
    let id = reports.next_id();
    let report = d.trace(req, &id, now_secs())?;
    reports.insert(id.clone(), report.clone())?;
    Ok((id, report))
}

fn simulate(spec_path: &Path, out: &Path) -> Result<(), BoxError> {
    let spec: ScenarioSpec = serde_json::from_slice(&fs::read(spec_path)?)?;
    spec.validate()?;
    fs::create_dir_all(out)?;
    let deployment = Deployment::new(spec.facility_configs(), Default::default(), Some(spec.seed))?;
    let mut replay = Replay::new(deployment);
    let mut events = BufWriter::new(File::create(out.join("events.tsv"))?);
    let mut count = 0usize;
    let truth = generate_scenario_with(&spec, |ev| {
        write_event(&mut events, &ev)?;
        count += 1;
        replay.feed(ev)
    })?;
    events.flush()?;
    let deployment = replay.finish()?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("truth.json"))?), &truth)?;
    deployment.save(out)?;
    println!("{count} events, {} visits, {} planted contacts", truth.visits.len(), truth.planted.len());
    if let Some(p) = truth.patient {
        println!("patient {}", truth.visits.iter().find(|v| v.visitor == p).map(|v| v.phone.to_string()).unwrap_or_default());
    }
    println!("data written to {}", out.display());
    Ok(())
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()
}

fn serve_registry(config: Option<&Path>) -> Result<(), BoxError> {
    let config = Config::load(&Config::locate(config)?)?;
    let mut directory = FacilityDirectory::new();
    for f in &config.facilities {
        directory.insert(f.id.clone(), f.mode, f.facility_type, Arc::new(HttpFacility::new(f.url(), f.token.clone())));
    }
    let policy = config.retention();
    let r = &config.registry;
    let svc = match &r.data_dir {
        Some(d) => RegistryService::open(config.resolve(d), directory, policy, r.seed)?,
        None => RegistryService::new(match r.seed {
            Some(s) => Registry::with_seed(directory, policy, s),
            None => Registry::new(directory, policy),
        }),
    };
    let router = registry_router(svc.clone(), r.token.clone(), None);
    runtime()?.block_on(service::serve_until_ctrl_c(router, &r.listen))?;
    svc.save()?;
    Ok(())
}

fn serve_facility(id: &str, config: Option<&Path>) -> Result<(), BoxError> {
    let config = Config::load(&Config::locate(config)?)?;
    let section = config.facility(&FacilityId::from(id))?;
    let fc = config.facility_config(section)?;
    let svc = match &section.data_dir {
        Some(d) => FacilityService::open(config.resolve(d), || Facility::new(fc))?,
        None => FacilityService::new(fctrace_core::LocalFacility::new(Facility::new(fc)?)),
    };
    let router = facility_router(svc.clone(), section.token.clone(), None);
    runtime()?.block_on(service::serve_until_ctrl_c(router, &section.listen))?;
    svc.save()?;
    Ok(())
}
