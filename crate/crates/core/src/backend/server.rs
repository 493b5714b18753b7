//! Serves any [`Backend`] over the HTTP wire protocol.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Method, Response, Server};

use super::{validate, wire, Backend, BackendError, Role};

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server thread exits (it only does so after `shutdown`).
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn json_response(status: u16, body: &serde_json::Value) -> Response<std::io::Cursor<Vec<u8>>> {
    let bytes = serde_json::to_vec(body).expect("json values serialize");
    Response::from_data(bytes)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn error_response(err: &BackendError) -> Response<std::io::Cursor<Vec<u8>>> {
    let (status, body) = wire::error_to_json(err);
    json_response(status, &serde_json::to_value(body).expect("error body serializes"))
}

fn handle(backend: &dyn Backend, mut req: tiny_http::Request) {
    let path = req.url().split('?').next().unwrap_or("").to_string();
    let response = match (req.method(), Role::from_endpoint(&path)) {
        (Method::Post, Some(role)) => {
            let mut body = Vec::new();
            match req.as_reader().read_to_end(&mut body) {
                Err(e) => error_response(&BackendError::Protocol(e.to_string())),
                Ok(_) => match wire::request_from_json(role, &body) {
                    Err(e) => error_response(&e),
                    Ok(request) => match backend.call(&request) {
                        Err(e) => error_response(&e),
                        // A malformed answer is the server's fault, not the caller's.
                        Ok(r) => match validate(&request, &r) {
                            Ok(()) => json_response(200, &wire::response_to_json(&r)),
                            Err(e) => error_response(&BackendError::Model(e.to_string())),
                        },
                    },
                },
            }
        }
        _ => {
            let body = wire::ErrorBody {
                error: wire::ErrorDetail {
                    kind: wire::KIND_NOT_FOUND.to_string(),
                    message: format!("no endpoint {} {}", req.method(), path),
                },
            };
            json_response(404, &serde_json::to_value(body).expect("error body serializes"))
        }
    };
    if let Err(e) = req.respond(response) {
        log::warn!("failed to write response: {e}");
    }
}

/// Binds `addr` (use port 0 for an ephemeral port) and serves requests on a
/// background thread, one at a time.
pub fn serve(backend: Arc<dyn Backend>, addr: &str) -> std::io::Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| std::io::Error::other(e.to_string()))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("server bound to a non-IP address"))?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let thread = std::thread::spawn(move || {
        while !flag.load(Ordering::SeqCst) {
            match server.recv_timeout(Duration::from_millis(50)) {
                Ok(Some(req)) => handle(backend.as_ref(), req),
                Ok(None) => {}
                Err(e) => {
                    log::error!("server receive failed: {e}");
                    break;
                }
            }
        }
    });
    Ok(ServerHandle {
        addr: bound,
        stop,
        thread: Some(thread),
    })
}
