//! HTTP/1.1 front end over [`Gateway`].

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Body;
use axum::extract::{ConnectInfo, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::Router;
use tokio::sync::oneshot;

use crate::wire::{Method, Request, Response};
use crate::Gateway;

pub const MAX_BODY_BYTES: usize = 64 * 1024;

/// Releases the guard slot even if the client goes away mid-request.
struct Slot {
    gateway: Arc<Gateway>,
    ip: std::net::IpAddr,
}

impl Drop for Slot {
    fn drop(&mut self) {
        self.gateway.release(self.ip);
    }
}

async fn handle(
    State(gateway): State<Arc<Gateway>>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    request: axum::extract::Request,
) -> axum::response::Response {
    let ip = peer.ip().to_canonical();
    if let Err(rejected) = gateway.admit(ip) {
        return into_http(rejected);
    }
    let slot = Slot { gateway: gateway.clone(), ip };
    let (parts, body) = request.into_parts();
    let mut req = Request::new(Method::parse(parts.method.as_str()), parts.uri.path(), ip);
    for (name, value) in &parts.headers {
        req.headers
            .entry(name.as_str().to_string())
            .or_insert_with(|| String::from_utf8_lossy(value.as_bytes()).into_owned());
    }
    let response = match axum::body::to_bytes(body, MAX_BODY_BYTES).await {
        Err(_) => gateway.reject_body(&req, "TooLong"),
        Ok(bytes) => {
            req.body = bytes.to_vec();
            let g = gateway.clone();
            tokio::task::spawn_blocking(move || g.process(&req))
                .await
                .unwrap_or_else(|_| Response::error(500, "InternalError"))
        }
    };
    drop(slot);
    into_http(response)
}

fn into_http(response: Response) -> axum::response::Response {
    let mut out = axum::response::Response::new(Body::from(response.body));
    *out.status_mut() = StatusCode::from_u16(response.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    for (name, value) in response.headers {
        if let (Ok(name), Ok(value)) = (HeaderName::try_from(name), HeaderValue::try_from(value)) {
            out.headers_mut().append(name, value);
        }
    }
    out
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new().fallback(handle).with_state(gateway)
}

pub async fn serve(
    gateway: Arc<Gateway>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(gateway).into_make_service_with_connect_info::<SocketAddr>();
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// A server on its own runtime thread; dropped or [`ServerHandle::stop`]ped
/// handles shut it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown_now()
    }

    fn shutdown_now(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown_now();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub fn spawn(gateway: Arc<Gateway>, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new().name("prometheus-http".into()).spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            serve(gateway, listener, async {
                let _ = rx.await;
            })
            .await
        })
    })?;
    Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}
