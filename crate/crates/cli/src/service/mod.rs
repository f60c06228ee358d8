//! HTTP services: the registry and the facility servers, plus the
//! plumbing they share (bearer auth, error bodies, traffic capture and
//! background startup for tests and local runs).

mod facility;
mod registry;

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use axum::Router;
use fctrace_core::protocol::ErrorBody;
use fctrace_core::{Error, Timestamp};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::oneshot;

pub use facility::{facility_router, FacilityService};
pub use registry::{registry_router, RegistryService};

/// Largest accepted request body.
pub const BODY_LIMIT: usize = 512 * 1024 * 1024;

/// Every request a server received: path, headers and body, appended in
/// arrival order.
pub type Tap = Arc<Mutex<Vec<u8>>>;

pub fn now_secs() -> Timestamp {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody { code: code.into(), message: message.into() },
        }
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "unknown_visitor" | "unknown_facility" | "unknown_device" | "unknown_badge" | "unknown_gateway" | "unknown_report" => {
            StatusCode::NOT_FOUND
        }
        "device_busy" | "window_overlap" | "pool_exhausted" | "device_not_assigned" => StatusCode::CONFLICT,
        "unsupported_mode" => StatusCode::UNPROCESSABLE_ENTITY,
        "facility_unreachable" | "facility_rejected" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let body = ErrorBody::from(&e);
        let status = if e.is_client_error() || matches!(e, Error::FacilityUnreachable { .. }) {
            status_for(&body.code)
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        ApiError { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, json_bytes(&self.body)).into_response()
    }
}

fn json_bytes<T: Serialize>(value: &T) -> ([(header::HeaderName, HeaderValue); 1], Vec<u8>) {
    let bytes = serde_json::to_vec(value).expect("wire types serialize");
    ([(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], bytes)
}

pub(crate) fn json<T: Serialize>(value: &T) -> Response {
    json_bytes(value).into_response()
}

pub(crate) fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.to_string()))
}

/// Runs table work off the async workers.
pub(crate) async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

async fn require_token(State(token): State<Arc<str>>, req: Request, next: Next) -> Response {
    let ok = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == &*token);
    if ok {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response()
    }
}

async fn record(State(tap): State<Tap>, req: Request, next: Next) -> Response {
    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, BODY_LIMIT).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "body_too_large", e.to_string()).into_response(),
    };
    {
        let mut t = tap.lock();
        t.extend_from_slice(parts.method.as_str().as_bytes());
        t.push(b' ');
        t.extend_from_slice(parts.uri.to_string().as_bytes());
        t.push(b'\n');
        for (name, value) in &parts.headers {
            t.extend_from_slice(name.as_str().as_bytes());
            t.extend_from_slice(b": ");
            t.extend_from_slice(value.as_bytes());
            t.push(b'\n');
        }
        t.extend_from_slice(&bytes);
        t.push(b'\n');
    }
    next.run(Request::from_parts(parts, Body::from(bytes))).await
}

/// Wraps `protected` routes with auth and, outermost, the tap; `open`
/// routes skip auth.
pub(crate) fn assemble(protected: Router, open: Router, token: Option<String>, tap: Option<Tap>) -> Router {
    let protected = match token {
        Some(t) => protected.layer(axum::middleware::from_fn_with_state(Arc::<str>::from(t), require_token)),
        None => protected,
    };
    let app = protected.merge(open).layer(axum::extract::DefaultBodyLimit::max(BODY_LIMIT));
    match tap {
        Some(tap) => app.layer(axum::middleware::from_fn_with_state(tap, record)),
        None => app,
    }
}

/// Serves `router` on `listen` until ctrl-c.
pub async fn serve_until_ctrl_c(router: Router, listen: &str) -> io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// A server on its own thread and runtime; stopped on drop.
pub struct Running {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl Running {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.halt()
    }

    fn halt(&mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.halt();
    }
}

/// Binds `listen` (port 0 picks a free port) and serves in the background.
pub fn spawn(router: Router, listen: &str) -> io::Result<Running> {
    let std_listener = std::net::TcpListener::bind(listen)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new().name(format!("server-{addr}")).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    })?;
    Ok(Running { addr, shutdown: Some(tx), thread: Some(thread) })
}
