use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use fctrace_core::api::{
    BadgeScanRequest, CaseResponse, FrequentRequest, Health, RegistryWipeResponse, SignInRequest, SignInResponse, WipeRequest,
};
use fctrace_core::protocol::{ErrorBody, FacilityDirectory};
use fctrace_core::{render_text, run_trace, Registry, Result, RetentionPolicy, TraceRequest};
use parking_lot::{Mutex, RwLock};
use serde::Deserialize;

use super::{assemble, blocking, json, now_secs, parse, ApiError, Tap};
use crate::reports::ReportStore;

struct Inner {
    registry: RwLock<Registry>,
    reports: Mutex<ReportStore>,
    data_dir: Option<PathBuf>,
}

/// The registry's tables and stored reports behind its HTTP endpoints.
#[derive(Clone)]
pub struct RegistryService {
    inner: Arc<Inner>,
}

impl RegistryService {
    pub fn new(registry: Registry) -> Self {
        RegistryService {
            inner: Arc::new(Inner {
                registry: RwLock::new(registry),
                reports: Mutex::new(ReportStore::in_memory()),
                data_dir: None,
            }),
        }
    }

    /// Loads the registry snapshot and reports in `dir` when present, else
    /// starts empty; later saves go to `dir`.
    pub fn open(dir: PathBuf, directory: FacilityDirectory, policy: RetentionPolicy, seed: Option<u64>) -> Result<Self> {
        let registry = if dir.join("visits.tsv").exists() {
            Registry::load(&dir, directory, policy)?
        } else {
            match seed {
                Some(s) => Registry::with_seed(directory, policy, s),
                None => Registry::new(directory, policy),
            }
        };
        let reports = ReportStore::open(&dir.join("reports"))?;
        Ok(RegistryService {
            inner: Arc::new(Inner {
                registry: RwLock::new(registry),
                reports: Mutex::new(reports),
                data_dir: Some(dir),
            }),
        })
    }

    pub fn registry(&self) -> &RwLock<Registry> {
        &self.inner.registry
    }

    pub fn reports(&self) -> &Mutex<ReportStore> {
        &self.inner.reports
    }

    pub fn save(&self) -> Result<()> {
        match &self.inner.data_dir {
            Some(dir) => self.inner.registry.read().save(dir),
            None => Ok(()),
        }
    }
}

async fn health() -> Response {
    json(&Health { service: "registry".into(), facility: None })
}

async fn sign_in(State(s): State<RegistryService>, body: Bytes) -> Result<Response, ApiError> {
    let req: SignInRequest = parse(&body)?;
    let now = req.time.unwrap_or_else(now_secs);
    let out = blocking(move || {
        let mut reg = s.inner.registry.write();
        let (assignment, sms) = if req.gov_id {
            reg.sign_in_by_gov_id(&req.phone, &req.facility, now, req.device)?
        } else {
            reg.sign_in(&req.phone, &req.facility, now, req.device)?
        };
        reg.drain_sms();
        Ok(SignInResponse { assignment, sms })
    })
    .await?;
    Ok(json(&out))
}

async fn frequent(State(s): State<RegistryService>, body: Bytes) -> Result<Response, ApiError> {
    let req: FrequentRequest = parse(&body)?;
    let out = blocking(move || s.inner.registry.write().register_frequent(&req.phone, &req.facility, &req.badge)).await?;
    Ok(json(&out))
}

async fn badge_scan(State(s): State<RegistryService>, body: Bytes) -> Result<Response, ApiError> {
    let req: BadgeScanRequest = parse(&body)?;
    let now = req.time.unwrap_or_else(now_secs);
    let out = blocking(move || s.inner.registry.write().badge_scan(&req.badge, &req.facility, now)).await?;
    Ok(json(&out))
}

async fn case(State(s): State<RegistryService>, body: Bytes) -> Result<Response, ApiError> {
    let req: TraceRequest = parse(&body)?;
    let now = now_secs();
    let out = blocking(move || {
        let trace_id = s.inner.reports.lock().next_id();
        let report = run_trace(&s.inner.registry.read(), &req, &trace_id, now)?;
        s.inner.reports.lock().insert(trace_id.clone(), report.clone())?;
        Ok(CaseResponse { trace_id, report })
    })
    .await?;
    Ok(json(&out))
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn report(State(s): State<RegistryService>, Path(id): Path<String>, Query(q): Query<ReportQuery>) -> Result<Response, ApiError> {
    let store = s.inner.reports.lock();
    let report = store
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_report", format!("no report {id}")))?;
    match q.format.as_deref() {
        None | Some("json") => Ok(json(report)),
        Some("text") => {
            Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("text/plain; charset=utf-8"))], render_text(report)).into_response())
        }
        Some(other) => Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_parameter", format!("unknown format {other:?}"))),
    }
}

async fn wipe(State(s): State<RegistryService>, body: Bytes) -> Result<Response, ApiError> {
    let req: WipeRequest = if body.is_empty() { WipeRequest::default() } else { parse(&body)? };
    let now = req.now.unwrap_or_else(now_secs);
    let out = blocking(move || {
        let mut reg = s.inner.registry.write();
        let registry = reg.wipe_expired(now);
        let reports = s.inner.reports.lock().wipe_before(reg.policy().cutoff(now))?;
        let mut facilities = BTreeMap::new();
        let mut errors = BTreeMap::new();
        let ids: Vec<_> = reg.directory().ids().cloned().collect();
        for id in ids {
            let entry = reg.directory().get(&id).expect("listed");
            match entry.link.wipe(now) {
                Ok(c) => {
                    facilities.insert(id, c);
                }
                Err(e) => {
                    errors.insert(id.clone(), ErrorBody::from(&e.into_error(&id)));
                }
            }
        }
        drop(reg);
        s.save()?;
        Ok(RegistryWipeResponse { now, registry, reports, facilities, errors })
    })
    .await?;
    Ok(json(&out))
}

/// `POST /signin`, `/frequent`, `/badge-scan`, `/case`, `/wipe` and
/// `GET /report/{id}` behind the bearer token; `GET /health` open.
pub fn registry_router(service: RegistryService, token: Option<String>, tap: Option<Tap>) -> Router {
    let protected = Router::new()
        .route("/signin", post(sign_in))
        .route("/frequent", post(frequent))
        .route("/badge-scan", post(badge_scan))
        .route("/case", post(case))
        .route("/report/{id}", get(report))
        .route("/wipe", post(wipe))
        .with_state(service);
    let open = Router::new().route("/health", get(health));
    assemble(protected, open, token, tap)
}
