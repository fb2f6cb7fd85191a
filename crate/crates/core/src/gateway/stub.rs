//! Minimal in-process chat-completions server for tests and offline runs.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

use super::{INSTANCE_HEADER, STAGE_HEADER};

#[derive(Clone, Debug)]
pub struct StubRequest {
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

impl StubRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn instance(&self) -> Option<&str> {
        self.header(INSTANCE_HEADER)
    }

    pub fn stage(&self) -> Option<&str> {
        self.header(STAGE_HEADER)
    }

    /// Concatenated text parts of the user message.
    pub fn text(&self) -> String {
        let content = &self.body["messages"][0]["content"];
        match content {
            Value::String(s) => s.clone(),
            Value::Array(parts) => parts.iter().filter_map(|p| p["text"].as_str()).collect(),
            _ => String::new(),
        }
    }

    pub fn image_count(&self) -> usize {
        self.body["messages"][0]["content"]
            .as_array()
            .map_or(0, |a| a.iter().filter(|p| p["type"] == "image_url").count())
    }
}

#[derive(Clone, Debug)]
pub enum StubReply {
    /// A 200 completion whose message content is the given text.
    Content(String),
    /// An empty reply with this status code.
    Status(u16),
    Raw { status: u16, body: String },
}

#[derive(Default)]
struct Stats {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stats: Arc<Stats>,
    handle: Option<JoinHandle<()>>,
}

type Handler = dyn Fn(&StubRequest) -> StubReply + Send + Sync;

impl StubServer {
    pub fn start<F>(handler: F) -> std::io::Result<StubServer>
    where
        F: Fn(&StubRequest) -> StubReply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(Stats::default());
        let handler: Arc<Handler> = Arc::new(handler);
        let (stop2, stats2) = (stop.clone(), stats.clone());
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let (h, st) = (handler.clone(), stats2.clone());
                std::thread::spawn(move || {
                    let _ = serve(stream, &*h, &st);
                });
            }
        });
        Ok(StubServer { addr, stop, stats, handle: Some(handle) })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.stats.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.stats.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub fn completion_body(content: &str) -> String {
    json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0},
    })
    .to_string()
}

fn serve(stream: TcpStream, handler: &Handler, stats: &Stats) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.is_empty() {
        return Ok(());
    }
    let mut headers = Vec::new();
    let mut length = 0usize;
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.eq_ignore_ascii_case("content-length") {
                length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;

    stats.requests.fetch_add(1, Ordering::SeqCst);
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let req = StubRequest { headers, body: serde_json::from_slice(&body).unwrap_or(Value::Null) };
    let (status, text) = match handler(&req) {
        StubReply::Content(c) => (200, completion_body(&c)),
        StubReply::Status(s) => (s, String::new()),
        StubReply::Raw { status, body } => (status, body),
    };
    let mut out = stream;
    let head = format!(
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        text.len()
    );
    let written = out.write_all(head.as_bytes()).and_then(|_| out.write_all(text.as_bytes())).and_then(|_| out.flush());
    stats.in_flight.fetch_sub(1, Ordering::SeqCst);
    written
}
