//! Network front end. One TCP port carries three protocols, told apart by
//! the first request: newline-delimited JSON frames, a WebSocket upgrade,
//! or a plain HTTP GET for static files.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tungstenite::Message;

use crate::hub::{Hub, HubCommand, SimBridge, TickMode};
use crate::protocol::{decode, salvage, DecodeError};
use crate::queue::{ClientQueue, Pop};
use crate::table::ClientId;

pub const DEFAULT_PORT: u16 = 9090;
/// Longest accepted frame on the stream transport.
pub const MAX_FRAME_BYTES: usize = 1 << 20;
const MAX_HTTP_HEAD: usize = 16 * 1024;
const WS_POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
    pub static_dir: Option<PathBuf>,
    pub tick: TickMode,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            static_dir: None,
            tick: TickMode::RealTime { speed: 1.0 },
        }
    }
}

type Streams = Arc<Mutex<HashMap<ClientId, TcpStream>>>;

pub struct ServerHandle {
    addr: SocketAddr,
    tx: Sender<HubCommand>,
    stop: Arc<AtomicBool>,
    streams: Streams,
    accept: Option<JoinHandle<()>>,
    hub: Option<JoinHandle<SimBridge>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Advances a manually ticked server and returns the new tick count.
    pub fn step(&self, ticks: u64) -> u64 {
        let (done, rx) = mpsc::channel();
        if self.tx.send(HubCommand::Step { ticks, done }).is_err() {
            return 0;
        }
        rx.recv().unwrap_or(0)
    }

    /// Blocks until the hub stops on its own (tick limit or idle).
    pub fn wait(mut self) -> Option<SimBridge> {
        let sim = self.hub.take().and_then(|h| h.join().ok());
        self.close();
        sim
    }

    /// Stops the hub and every connection, returning the simulator.
    pub fn shutdown(mut self) -> Option<SimBridge> {
        let _ = self.tx.send(HubCommand::Shutdown);
        let sim = self.hub.take().and_then(|h| h.join().ok());
        self.close();
        sim
    }

    fn close(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.accept.take() {
            let _ = a.join();
        }
        for s in self.streams.lock().expect("streams lock").values() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.tx.send(HubCommand::Shutdown);
        self.close();
        if let Some(h) = self.hub.take() {
            let _ = h.join();
        }
    }
}

/// Binds, starts the hub and the accept loop.
pub fn start(sim: SimBridge, cfg: ServerConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind((cfg.bind.as_str(), cfg.port))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = mpsc::channel();
    let hub = Hub::new(sim, cfg.tick, tx.clone());
    let hub = thread::Builder::new().name("navsim-hub".into()).spawn(move || hub.run(rx))?;

    let stop = Arc::new(AtomicBool::new(false));
    let streams: Streams = Arc::default();
    let next_id = Arc::new(AtomicU64::new(1));
    let static_dir = cfg.static_dir.map(Arc::new);
    let accept = {
        let (tx, stop, streams) = (tx.clone(), stop.clone(), streams.clone());
        thread::Builder::new().name("navsim-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let client = next_id.fetch_add(1, Ordering::SeqCst);
                if let Ok(clone) = stream.try_clone() {
                    streams.lock().expect("streams lock").insert(client, clone);
                }
                let (tx, streams, static_dir) = (tx.clone(), streams.clone(), static_dir.clone());
                let _ = thread::Builder::new().name(format!("navsim-client-{client}")).spawn(move || {
                    if let Err(e) = connection(stream, client, &tx, static_dir.as_deref().map(PathBuf::as_path)) {
                        log::debug!("client {client}: {e}");
                    }
                    streams.lock().expect("streams lock").remove(&client);
                });
            }
        })?
    };
    Ok(ServerHandle {
        addr,
        tx,
        stop,
        streams,
        accept: Some(accept),
        hub: Some(hub),
    })
}

fn connection(stream: TcpStream, client: ClientId, tx: &Sender<HubCommand>, static_dir: Option<&Path>) -> io::Result<()> {
    let mut first = [0u8; 1];
    if stream.peek(&mut first)? == 0 {
        return Ok(());
    }
    if first[0].is_ascii_uppercase() {
        http(stream, client, tx, static_dir)
    } else {
        json_stream(stream, client, tx)
    }
}

fn forward(tx: &Sender<HubCommand>, client: ClientId, bytes: &[u8]) {
    let cmd = match decode(bytes) {
        Ok(msg) => HubCommand::Frame { client, msg },
        Err(error) => {
            let (topic, id) = salvage(bytes);
            HubCommand::Invalid { client, error, topic, id }
        }
    };
    let _ = tx.send(cmd);
}

enum ReadFrame {
    Frame,
    TooLong,
    Eof,
}

/// Reads one `\n`-terminated frame into `buf`, without the separator. A
/// frame longer than `max` is discarded up to its separator.
fn read_frame(r: &mut impl BufRead, max: usize, buf: &mut Vec<u8>) -> io::Result<ReadFrame> {
    buf.clear();
    let mut too_long = false;
    loop {
        let avail = match r.fill_buf() {
            Ok(a) => a,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        if avail.is_empty() {
            return Ok(match (too_long, buf.is_empty()) {
                (true, _) => ReadFrame::TooLong,
                (false, true) => ReadFrame::Eof,
                (false, false) => ReadFrame::Frame,
            });
        }
        let (chunk, done) = match avail.iter().position(|&b| b == b'\n') {
            Some(i) => (&avail[..i], i + 1),
            None => (avail, avail.len()),
        };
        if !too_long {
            if buf.len() + chunk.len() > max {
                too_long = true;
                buf.clear();
            } else {
                buf.extend_from_slice(chunk);
            }
        }
        let found = done > chunk.len();
        r.consume(done);
        if found {
            return Ok(if too_long { ReadFrame::TooLong } else { ReadFrame::Frame });
        }
    }
}

fn json_stream(stream: TcpStream, client: ClientId, tx: &Sender<HubCommand>) -> io::Result<()> {
    let queue = Arc::new(ClientQueue::default());
    let _ = tx.send(HubCommand::Connect {
        client,
        queue: queue.clone(),
    });
    let mut out = stream.try_clone()?;
    let writer = {
        let queue = queue.clone();
        thread::spawn(move || loop {
            match queue.pop_timeout(Duration::from_secs(1)) {
                Pop::Frame(f) => {
                    let mut line = Vec::with_capacity(f.len() + 1);
                    line.extend_from_slice(f.as_bytes());
                    line.push(b'\n');
                    if out.write_all(&line).is_err() {
                        break;
                    }
                }
                Pop::Empty => {}
                Pop::Closed => {
                    let _ = out.flush();
                    break;
                }
            }
        })
    };
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    let result = loop {
        match read_frame(&mut reader, MAX_FRAME_BYTES, &mut buf) {
            Ok(ReadFrame::Frame) => {
                let line = buf.strip_suffix(b"\r").unwrap_or(&buf);
                if !line.iter().all(u8::is_ascii_whitespace) {
                    forward(tx, client, line);
                }
            }
            Ok(ReadFrame::TooLong) => {
                let _ = tx.send(HubCommand::Invalid {
                    client,
                    error: DecodeError::MalformedFrame(format!("frame exceeds {MAX_FRAME_BYTES} bytes")),
                    topic: None,
                    id: None,
                });
            }
            Ok(ReadFrame::Eof) => break Ok(()),
            Err(e) => break Err(e),
        }
    };
    let _ = tx.send(HubCommand::Disconnect { client });
    queue.close();
    let _ = writer.join();
    result
}

/// Replays bytes already consumed from the socket before reading more.
struct Prefixed {
    head: Vec<u8>,
    pos: usize,
    inner: TcpStream,
}

impl Read for Prefixed {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos < self.head.len() {
            let n = buf.len().min(self.head.len() - self.pos);
            buf[..n].copy_from_slice(&self.head[self.pos..self.pos + n]);
            self.pos += n;
            return Ok(n);
        }
        self.inner.read(buf)
    }
}

impl Write for Prefixed {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.inner.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn http(mut stream: TcpStream, client: ClientId, tx: &Sender<HubCommand>, static_dir: Option<&Path>) -> io::Result<()> {
    // Byte at a time, so nothing past the head is consumed.
    let mut head = Vec::new();
    let mut byte = [0u8; 1];
    while !head.ends_with(b"\r\n\r\n") {
        if head.len() >= MAX_HTTP_HEAD || stream.read(&mut byte)? == 0 {
            return respond(&mut stream, "400 Bad Request", "text/plain", b"bad request\n", true);
        }
        head.push(byte[0]);
    }
    let text = String::from_utf8_lossy(&head).into_owned();
    let mut lines = text.split("\r\n");
    let mut request = lines.next().unwrap_or_default().split(' ');
    let (method, target) = (request.next().unwrap_or_default(), request.next().unwrap_or("/"));
    let upgrade = lines.any(|l| {
        l.split_once(':')
            .is_some_and(|(k, v)| k.trim().eq_ignore_ascii_case("upgrade") && v.trim().eq_ignore_ascii_case("websocket"))
    });
    if upgrade && method == "GET" {
        let ws = tungstenite::accept(Prefixed {
            head,
            pos: 0,
            inner: stream.try_clone()?,
        })
        .map_err(|e| io::Error::other(e.to_string()))?;
        stream.set_read_timeout(Some(WS_POLL))?;
        return websocket(ws, client, tx);
    }
    serve_static(&mut stream, method, target, static_dir)
}

fn websocket(mut ws: tungstenite::WebSocket<Prefixed>, client: ClientId, tx: &Sender<HubCommand>) -> io::Result<()> {
    let queue = Arc::new(ClientQueue::default());
    let _ = tx.send(HubCommand::Connect {
        client,
        queue: queue.clone(),
    });
    'session: loop {
        match ws.read() {
            Ok(Message::Text(t)) => forward(tx, client, t.as_bytes()),
            Ok(Message::Binary(b)) => forward(tx, client, &b),
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                break;
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        loop {
            match queue.try_pop() {
                Pop::Frame(f) => {
                    if ws.send(Message::text(f.to_string())).is_err() {
                        break 'session;
                    }
                }
                Pop::Empty => break,
                Pop::Closed => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    break 'session;
                }
            }
        }
    }
    let _ = tx.send(HubCommand::Disconnect { client });
    queue.close();
    Ok(())
}

fn respond(stream: &mut TcpStream, status: &str, content_type: &str, body: &[u8], with_body: bool) -> io::Result<()> {
    let head = format!(
        "HTTP/1.1 {status}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(head.as_bytes())?;
    if with_body {
        stream.write_all(body)?;
    }
    stream.flush()
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or_default() {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "wasm" => "application/wasm",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// File under `root` named by a request path, if it stays inside `root`.
pub fn resolve_static(root: &Path, target: &str) -> Option<PathBuf> {
    let path = target.split(['?', '#']).next().unwrap_or_default();
    let mut file = root.to_path_buf();
    for seg in path.split('/').filter(|s| !s.is_empty()) {
        if seg == ".." || seg == "." || seg.contains('\\') || seg.contains('\0') {
            return None;
        }
        file.push(seg);
    }
    if file.is_dir() {
        file.push("index.html");
    }
    let root = root.canonicalize().ok()?;
    let file = file.canonicalize().ok()?;
    (file.starts_with(&root) && file.is_file()).then_some(file)
}

fn serve_static(stream: &mut TcpStream, method: &str, target: &str, root: Option<&Path>) -> io::Result<()> {
    if method != "GET" && method != "HEAD" {
        return respond(stream, "405 Method Not Allowed", "text/plain", b"method not allowed\n", true);
    }
    let with_body = method == "GET";
    match root.and_then(|r| resolve_static(r, target)) {
        Some(file) => match std::fs::read(&file) {
            Ok(body) => respond(stream, "200 OK", content_type(&file), &body, with_body),
            Err(_) => respond(stream, "500 Internal Server Error", "text/plain", b"read error\n", with_body),
        },
        None => respond(stream, "404 Not Found", "text/plain", b"not found\n", with_body),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(input: &[u8], max: usize) -> Vec<Option<Vec<u8>>> {
        let mut r = BufReader::with_capacity(4, input);
        let mut buf = Vec::new();
        let mut out = Vec::new();
        loop {
            match read_frame(&mut r, max, &mut buf).unwrap() {
                ReadFrame::Frame => out.push(Some(buf.clone())),
                ReadFrame::TooLong => out.push(None),
                ReadFrame::Eof => return out,
            }
        }
    }

    #[test]
    fn frames_split_on_newlines_with_a_length_cap() {
        assert_eq!(
            frames(b"ab\ncdefgh\n\nxy", 5),
            vec![Some(b"ab".to_vec()), None, Some(vec![]), Some(b"xy".to_vec())]
        );
        assert_eq!(frames(b"", 5), Vec::<Option<Vec<u8>>>::new());
        assert_eq!(frames(b"toolongtail", 3), vec![None]);
    }

    #[test]
    fn static_paths_stay_inside_root() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("index.html"), "<p>hi</p>").unwrap();
        std::fs::create_dir(dir.path().join("js")).unwrap();
        std::fs::write(dir.path().join("js/app.js"), "1").unwrap();
        let root = dir.path();
        assert!(resolve_static(root, "/").unwrap().ends_with("index.html"));
        assert!(resolve_static(root, "/js/app.js?v=2").unwrap().ends_with("app.js"));
        assert_eq!(resolve_static(root, "/../etc/passwd"), None);
        assert_eq!(resolve_static(root, "/js/../../x"), None);
        assert_eq!(resolve_static(root, "/missing.js"), None);
        assert_eq!(content_type(Path::new("a.js")), "text/javascript; charset=utf-8");
    }
}
