#![allow(dead_code)]
pub mod props;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

/// What the stub answers for a request body: status and response body.
pub type Handler = dyn Fn(&serde_json::Value) -> (u16, String) + Send + Sync;

#[derive(Default)]
pub struct StubStats {
    pub connections: AtomicUsize,
    pub requests: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub auth_headers: Mutex<Vec<Option<String>>>,
}

pub struct Stub {
    pub base_url: String,
    pub stats: Arc<StubStats>,
}

/// A one-request-per-connection HTTP server on a random local port.
pub fn spawn_stub(delay: Duration, handler: Arc<Handler>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let stats = Arc::new(StubStats::default());
    let shared = stats.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            shared.connections.fetch_add(1, Ordering::SeqCst);
            let stats = shared.clone();
            let handler = handler.clone();
            thread::spawn(move || serve(stream, delay, &stats, &*handler));
        }
    });
    Stub {
        base_url: format!("http://{addr}/v1"),
        stats,
    }
}

fn serve(stream: TcpStream, delay: Duration, stats: &StubStats, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
    let mut auth = None;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((name, value)) = trimmed.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().unwrap_or(0),
                "authorization" => auth = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();

    stats.requests.fetch_add(1, Ordering::SeqCst);
    stats.auth_headers.lock().unwrap().push(auth);
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
    thread::sleep(delay);
    let (status, text) = handler(&json);
    stats.in_flight.fetch_sub(1, Ordering::SeqCst);

    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    let _ = out.flush();
}

/// A chat-completions body whose first choice says `content`.
pub fn completion(content: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}
