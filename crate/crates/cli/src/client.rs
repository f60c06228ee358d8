//! Blocking HTTP clients for the registry and facility endpoints.

use std::collections::BTreeMap;
use std::time::Duration;

use fctrace_core::api::{
    CaseResponse, IngestRequest, IngestResponse, RegistryWipeResponse, ReturnRequest, ReturnResponse, SignInRequest,
    SignInResponse, WipeRequest,
};
use fctrace_core::protocol::{
    ErrorBody, ExchangeRequest, ExchangeResponse, FacilityLink, FacilityQueryMessage, FacilityResponseMessage, LinkError,
};
use fctrace_core::sim::Backend;
use fctrace_core::{BleId, FacilityId, GatewayReading, PhoneId, RawReading, Timestamp, TraceReport, TraceRequest, WipeCounts};
use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{url}: {message}")]
    Transport { url: String, message: String },
    #[error("{url}: HTTP {status} {code}: {message}")]
    Api { url: String, status: u16, code: String, message: String },
    #[error("{url}: unreadable response: {message}")]
    Decode { url: String, message: String },
    #[error(transparent)]
    Core(#[from] fctrace_core::Error),
}

impl ClientError {
    /// The machine-readable code of an API rejection.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

impl From<ClientError> for LinkError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Transport { message, .. } => LinkError::Unreachable(message),
            ClientError::Api { code, message, .. } => LinkError::Rejected { code, message },
            ClientError::Decode { message, .. } => LinkError::Rejected { code: "malformed_json".into(), message },
            ClientError::Core(e) => e.into(),
        }
    }
}

/// One service base URL plus its bearer token.
#[derive(Clone)]
pub struct HttpClient {
    agent: Agent,
    base: String,
    token: Option<String>,
}

impl HttpClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        HttpClient { agent, base: base.into().trim_end_matches('/').to_string(), token }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn finish(&self, url: String, resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Vec<u8>, ClientError> {
        let mut resp = resp.map_err(|e| ClientError::Transport { url: url.clone(), message: e.to_string() })?;
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(|e| ClientError::Transport { url: url.clone(), message: e.to_string() })?;
        if (200..300).contains(&status) {
            return Ok(bytes);
        }
        let body: ErrorBody = serde_json::from_slice(&bytes).unwrap_or_else(|_| ErrorBody {
            code: format!("http_{status}"),
            message: String::from_utf8_lossy(&bytes).into_owned(),
        });
        Err(ClientError::Api { url, status, code: body.code, message: body.message })
    }

    pub fn post_bytes<B: Serialize>(&self, path: &str, body: &B) -> Result<Vec<u8>, ClientError> {
        let url = format!("{}{path}", self.base);
        let payload = serde_json::to_vec(body).map_err(fctrace_core::Error::from)?;
        let mut req = self.agent.post(&url).content_type("application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        self.finish(url, req.send(&payload[..]))
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, ClientError> {
        let bytes = self.post_bytes(path, body)?;
        decode(&format!("{}{path}", self.base), &bytes)
    }

    pub fn get_bytes(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        let url = format!("{}{path}", self.base);
        let mut req = self.agent.get(&url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        self.finish(url, req.call())
    }
}

fn decode<R: DeserializeOwned>(url: &str, bytes: &[u8]) -> Result<R, ClientError> {
    serde_json::from_slice(bytes).map_err(|e| ClientError::Decode { url: url.into(), message: e.to_string() })
}

/// The registry's link to a remote facility, also used by device-return
/// and upload clients.
#[derive(Clone)]
pub struct HttpFacility(pub HttpClient);

impl HttpFacility {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        HttpFacility(HttpClient::new(base, token))
    }

    pub fn ingest(&self, req: &IngestRequest) -> Result<IngestResponse, ClientError> {
        self.0.post("/ingest", req)
    }

    pub fn return_device(&self, device: &BleId, time: Timestamp) -> Result<ReturnResponse, ClientError> {
        self.0.post("/return", &ReturnRequest { device: device.clone(), time: Some(time) })
    }
}

impl FacilityLink for HttpFacility {
    fn exchange(&self, req: &ExchangeRequest) -> Result<ExchangeResponse, LinkError> {
        Ok(self.0.post("/exchange", req)?)
    }

    fn trace_query(&self, msg: &FacilityQueryMessage) -> Result<FacilityResponseMessage, LinkError> {
        Ok(self.0.post("/trace-query", msg)?)
    }

    fn wipe(&self, now: Timestamp) -> Result<WipeCounts, LinkError> {
        Ok(self.0.post("/wipe", &WipeRequest { now: Some(now) })?)
    }
}

#[derive(Clone)]
pub struct RegistryClient(pub HttpClient);

impl RegistryClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        RegistryClient(HttpClient::new(base, token))
    }

    pub fn sign_in(&self, req: &SignInRequest) -> Result<SignInResponse, ClientError> {
        self.0.post("/signin", req)
    }

    pub fn case(&self, req: &TraceRequest) -> Result<CaseResponse, ClientError> {
        self.0.post("/case", req)
    }

    pub fn report(&self, id: &str) -> Result<TraceReport, ClientError> {
        let path = format!("/report/{id}");
        decode(&path, &self.0.get_bytes(&path)?)
    }

    pub fn report_text(&self, id: &str) -> Result<String, ClientError> {
        let bytes = self.0.get_bytes(&format!("/report/{id}?format=text"))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn wipe(&self, now: Option<Timestamp>) -> Result<RegistryWipeResponse, ClientError> {
        self.0.post("/wipe", &WipeRequest { now })
    }
}

/// Replays a scenario against running services: sign-ins through the
/// registry, returns and uploads straight to each facility.
pub struct WireBackend {
    pub registry: RegistryClient,
    pub facilities: BTreeMap<FacilityId, HttpFacility>,
}

impl WireBackend {
    fn facility(&self, id: &FacilityId) -> Result<&HttpFacility, ClientError> {
        self.facilities.get(id).ok_or_else(|| fctrace_core::Error::UnknownFacility(id.clone()).into())
    }
}

impl Backend for WireBackend {
    type Error = ClientError;

    fn sign_in(&mut self, phone: &PhoneId, facility: &FacilityId, time: Timestamp, device: &BleId) -> Result<(), ClientError> {
        self.registry.sign_in(&SignInRequest {
            phone: phone.clone(),
            facility: facility.clone(),
            time: Some(time),
            device: Some(device.clone()),
            gov_id: false,
        })?;
        Ok(())
    }

    fn sign_out(&mut self, facility: &FacilityId, device: &BleId, time: Timestamp) -> Result<(), ClientError> {
        self.facility(facility)?.return_device(device, time)?;
        Ok(())
    }

    fn upload_device_log(&mut self, facility: &FacilityId, readings: &[RawReading]) -> Result<(), ClientError> {
        self.facility(facility)?.ingest(&IngestRequest { device_logs: readings.to_vec(), ..IngestRequest::default() })?;
        Ok(())
    }

    fn upload_gateway_readings(&mut self, facility: &FacilityId, readings: &[GatewayReading]) -> Result<(), ClientError> {
        self.facility(facility)?.ingest(&IngestRequest { gateway_readings: readings.to_vec(), ..IngestRequest::default() })?;
        Ok(())
    }
}
