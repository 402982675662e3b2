//! Minimal OpenAI-compatible HTTP endpoint backed by any [`LlmBackend`].
//! Used to exercise [`RemoteBackend`](super::RemoteBackend) end to end
//! without a model server.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Deserialize;
use serde_json::json;

use super::{BackendError, ChatMessage, CompletionRequest, SharedBackend};

#[derive(Deserialize)]
struct Body {
    #[serde(default)]
    model: String,
    messages: Vec<ChatMessage>,
    #[serde(default)]
    temperature: f64,
    #[serde(default = "default_max_tokens")]
    max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    2048
}

struct Shared {
    backend: SharedBackend,
    requests: AtomicUsize,
    fail_first: usize,
    shutdown: AtomicBool,
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves until dropped.
    pub fn start(backend: SharedBackend, addr: &str) -> io::Result<Self> {
        Self::start_flaky(backend, addr, 0)
    }

    /// Like [`start`](Self::start) but answers the first `fail_first`
    /// requests with HTTP 503.
    pub fn start_flaky(backend: SharedBackend, addr: &str, fail_first: usize) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared { backend, requests: AtomicUsize::new(0), fail_first, shutdown: AtomicBool::new(false) });
        let s = shared.clone();
        let accept = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if s.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let s = s.clone();
                    std::thread::spawn(move || {
                        if let Err(e) = serve(stream, &s) {
                            tracing::debug!("stub connection closed: {e}");
                        }
                    });
                }
            }
        });
        Ok(Self { addr, shared, accept: Some(accept) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to hand to `RemoteConfig`.
    pub fn url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Requests received so far, failed ones included.
    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Blocks the calling thread until the process exits.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, s: &Shared) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut out = stream;
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line)? == 0 {
            return Ok(());
        }
        let mut content_length = 0usize;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Ok(());
            }
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0; content_length];
        reader.read_exact(&mut body)?;
        let (status, payload) = respond(&request_line, &body, s);
        write!(
            out,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: keep-alive\r\n\r\n{payload}",
            payload.len()
        )?;
        out.flush()?;
    }
}

fn respond(request_line: &str, body: &[u8], s: &Shared) -> (&'static str, String) {
    let mut parts = request_line.split_whitespace();
    let (method, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    if method != "POST" || !path.ends_with("/chat/completions") {
        return ("404 Not Found", json!({"error": {"message": "not found"}}).to_string());
    }
    let n = s.requests.fetch_add(1, Ordering::SeqCst);
    if n < s.fail_first {
        return ("503 Service Unavailable", json!({"error": {"message": "warming up"}}).to_string());
    }
    let body: Body = match serde_json::from_slice(body) {
        Ok(b) => b,
        Err(e) => return ("400 Bad Request", json!({"error": {"message": e.to_string()}}).to_string()),
    };
    let req = CompletionRequest {
        messages: body.messages,
        temperature: body.temperature,
        max_tokens: body.max_tokens,
        model_id: body.model,
    };
    let (content, finish) = match s.backend.complete(&req) {
        Ok(text) => (text, "stop"),
        Err(BackendError::TokenLimitExceeded) => (String::new(), "length"),
        Err(e) => return ("400 Bad Request", json!({"error": {"message": e.to_string()}}).to_string()),
    };
    let payload = json!({
        "object": "chat.completion",
        "model": req.model_id,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": finish}],
    });
    ("200 OK", payload.to_string())
}
