//! In-process conformance stub of the guidance service.
//!
//! Answers every valid prediction with the constant `t / 1000`, rejects
//! malformed requests with 400 and reports 503 until marked ready.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use crate::condition::ConditionStack;
use crate::distill::schedule::TIMESTEPS;

use super::http::{decode_f32, encode_f32, Health, WireRequest, WireResponse};

pub const STUB_MODEL_ID: &str = "conformance-stub";

#[derive(Debug, Default)]
struct Shared {
    ready: AtomicBool,
    stop: AtomicBool,
    served: AtomicUsize,
}

/// A running stub server; shuts down on drop.
#[derive(Debug)]
pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn spawn(addr: &str, ready: bool) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared { ready: AtomicBool::new(ready), ..Shared::default() });
        let worker = Arc::clone(&shared);
        let handle = thread::spawn(move || {
            for conn in listener.incoming() {
                if worker.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let shared = Arc::clone(&worker);
                thread::spawn(move || {
                    if let Err(e) = serve(stream, &shared) {
                        log::debug!("stub connection error: {e}");
                    }
                });
            }
        });
        Ok(Self { addr, shared, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn set_ready(&self, ready: bool) {
        self.shared.ready.store(ready, Ordering::SeqCst);
    }

    /// Number of successful predictions served.
    pub fn served(&self) -> usize {
        self.shared.served.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let (method, path) = (parts.next().unwrap_or("").to_string(), parts.next().unwrap_or("").to_string());
    let mut length = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;

    let ready = shared.ready.load(Ordering::SeqCst);
    let (status, payload) = match (method.as_str(), path.as_str()) {
        ("GET", "/health") => {
            let h = Health {
                status: if ready { "ok" } else { "loading" }.into(),
                model_id: if ready { STUB_MODEL_ID.into() } else { String::new() },
                ready,
            };
            (if ready { 200 } else { 503 }, serde_json::to_string(&h).unwrap_or_default())
        }
        ("POST", "/predict_noise") if !ready => (503, error_json("model not ready")),
        ("POST", "/predict_noise") => match predict(&body) {
            Ok(resp) => {
                shared.served.fetch_add(1, Ordering::SeqCst);
                (200, serde_json::to_string(&resp).unwrap_or_default())
            }
            Err(msg) => (400, error_json(&msg)),
        },
        _ => (404, error_json("not found")),
    };
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        _ => "Service Unavailable",
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        payload.len()
    )?;
    out.write_all(payload.as_bytes())?;
    out.flush()
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn predict(body: &[u8]) -> Result<WireResponse, String> {
    let req: WireRequest = serde_json::from_slice(body).map_err(|e| format!("bad JSON: {e}"))?;
    let image = decode_f32(&req.image)?;
    if req.width == 0 || req.height == 0 || image.len() != req.width * req.height * 3 {
        return Err(format!("image has {} values, expected {}x{}x3", image.len(), req.width, req.height));
    }
    if !(1..=TIMESTEPS).contains(&req.t) {
        return Err(format!("t = {} outside [1, {TIMESTEPS}]", req.t));
    }
    if !matches!(req.slot.as_str(), "positive" | "null" | "negative") {
        return Err(format!("unknown slot {:?}", req.slot));
    }
    if !(0.0..=1.0).contains(&req.control_scale) {
        return Err(format!("control_scale {} outside [0, 1]", req.control_scale));
    }
    let cond = B64.decode(&req.condition).map_err(|e| format!("bad base64 condition: {e}"))?;
    let cond = ConditionStack::decode(&cond).map_err(|e| e.to_string())?;
    if cond.width() != req.width || cond.height() != req.height {
        return Err("condition size does not match image".into());
    }
    let value = req.t as f32 / TIMESTEPS as f32;
    Ok(WireResponse { noise: encode_f32(&vec![value; image.len()]), model_id: STUB_MODEL_ID.into(), latency_ms: 0.0 })
}
