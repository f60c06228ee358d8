use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use fctrace_core::api::{Health, IngestRequest, IngestResponse, ReturnRequest, ReturnResponse, WipeRequest};
use fctrace_core::protocol::{ExchangeRequest, FacilityQueryMessage};
use fctrace_core::{Facility, LocalFacility, Result};

use super::{assemble, blocking, json, now_secs, parse, ApiError, Tap};

/// One facility's tables behind its HTTP endpoints.
#[derive(Clone)]
pub struct FacilityService {
    facility: LocalFacility,
    data_dir: Option<Arc<PathBuf>>,
}

impl FacilityService {
    pub fn new(facility: LocalFacility) -> Self {
        FacilityService { facility, data_dir: None }
    }

    /// Loads the snapshot in `dir` when there is one, else starts from
    /// `fresh`; later saves go to `dir`.
    pub fn open(dir: PathBuf, fresh: impl FnOnce() -> Result<Facility>) -> Result<Self> {
        let facility = if dir.join("facility.json").exists() { Facility::load(&dir)? } else { fresh()? };
        Ok(FacilityService {
            facility: LocalFacility::new(facility),
            data_dir: Some(Arc::new(dir)),
        })
    }

    pub fn facility(&self) -> &LocalFacility {
        &self.facility
    }

    /// Writes the snapshot if a data directory is configured.
    pub fn save(&self) -> Result<()> {
        match &self.data_dir {
            Some(dir) => self.facility.0.read().save(dir),
            None => Ok(()),
        }
    }
}

async fn health(State(s): State<FacilityService>) -> Response {
    json(&Health {
        service: "facility".into(),
        facility: Some(s.facility.0.read().id().clone()),
    })
}

async fn exchange(State(s): State<FacilityService>, body: Bytes) -> Result<Response, ApiError> {
    let req: ExchangeRequest = parse(&body)?;
    let out = blocking(move || s.facility.0.write().exchange(&req)).await?;
    Ok(json(&out))
}

async fn return_device(State(s): State<FacilityService>, body: Bytes) -> Result<Response, ApiError> {
    let req: ReturnRequest = parse(&body)?;
    let time = req.time.unwrap_or_else(now_secs);
    blocking(move || s.facility.0.write().sign_out(&req.device, time).map(|_| ReturnResponse { device: req.device, time }))
        .await
        .map(|r| json(&r))
}

async fn ingest(State(s): State<FacilityService>, body: Bytes) -> Result<Response, ApiError> {
    let req: IngestRequest = parse(&body)?;
    let out = blocking(move || {
        let mut f = s.facility.0.write();
        let mut out = IngestResponse::default();
        if !req.device_logs.is_empty() {
            out.contacts = Some(f.ingest_device_logs(&req.device_logs)?);
        }
        if !req.gateway_readings.is_empty() {
            out.locations = Some(f.ingest_gateway_readings(&req.gateway_readings)?);
        }
        Ok(out)
    })
    .await?;
    Ok(json(&out))
}

async fn trace_query(State(s): State<FacilityService>, body: Bytes) -> Result<Response, ApiError> {
    let msg: FacilityQueryMessage = parse(&body)?;
    let out = blocking(move || s.facility.0.read().handle_query(&msg)).await?;
    Ok(json(&out))
}

async fn wipe(State(s): State<FacilityService>, body: Bytes) -> Result<Response, ApiError> {
    let req: WipeRequest = if body.is_empty() { WipeRequest::default() } else { parse(&body)? };
    let now = req.now.unwrap_or_else(now_secs);
    let out = blocking(move || {
        let counts = s.facility.0.write().wipe_expired(now);
        s.save()?;
        Ok(counts)
    })
    .await?;
    Ok(json(&out))
}

/// `POST /exchange`, `/return`, `/ingest`, `/trace-query`, `/wipe` behind
/// the bearer token; `GET /health` open.
pub fn facility_router(service: FacilityService, token: Option<String>, tap: Option<Tap>) -> Router {
    let protected = Router::new()
        .route("/exchange", post(exchange))
        .route("/return", post(return_device))
        .route("/ingest", post(ingest))
        .route("/trace-query", post(trace_query))
        .route("/wipe", post(wipe))
        .with_state(service.clone());
    let open = Router::new().route("/health", get(health)).with_state(service);
    assemble(protected, open, token, tap)
}
