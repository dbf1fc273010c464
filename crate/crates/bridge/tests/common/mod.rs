#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use navsim_bridge::hub::{PlannerMode, SimBridge, TickMode};
use navsim_bridge::server::{start, ServerConfig, ServerHandle};
use navsim_bridge::{decode, BusMessage};
use navsim_core::procgen::{generate_environment, EnvironmentSpec};
use navsim_core::session::{Session, SessionConfig};
use serde_json::Value;
use tungstenite::{Message, WebSocket};

pub const WAIT: Duration = Duration::from_secs(10);

pub fn sim(seed: u64, planner: PlannerMode) -> SimBridge {
    let spec = EnvironmentSpec::fetch_and_deliver(seed);
    let world = generate_environment(&spec).expect("generates");
    SimBridge::new(Session::new(world, SessionConfig::default()), spec, planner)
}

pub fn serve(sim: SimBridge) -> ServerHandle {
    start(
        sim,
        ServerConfig {
            port: 0,
            tick: TickMode::Manual,
            ..ServerConfig::default()
        },
    )
    .expect("server starts")
}

pub enum Client {
    Tcp(BufReader<TcpStream>, TcpStream),
    Ws(WebSocket<TcpStream>),
}

impl Client {
    pub fn tcp(addr: SocketAddr) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
        Client::Tcp(BufReader::new(s.try_clone().unwrap()), s)
    }

    pub fn ws(addr: SocketAddr) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        let (ws, _) = tungstenite::client(format!("ws://{addr}/"), s).unwrap();
        ws.get_ref().set_read_timeout(Some(Duration::from_millis(50))).unwrap();
        Client::Ws(ws)
    }

    pub fn send_raw(&mut self, frame: &str) {
        match self {
            Client::Tcp(_, w) => {
                w.write_all(frame.as_bytes()).unwrap();
                w.write_all(b"\n").unwrap();
            }
            Client::Ws(ws) => ws.send(Message::text(frame)).unwrap(),
        }
    }

    pub fn send(&mut self, v: Value) {
        self.send_raw(&v.to_string());
    }

    /// Next text frame, or None after `timeout`.
    pub fn recv_within(&mut self, timeout: Duration) -> Option<String> {
        let end = Instant::now() + timeout;
        match self {
            Client::Tcp(r, _) => {
                let mut line = String::new();
                loop {
                    match r.read_line(&mut line) {
                        Ok(0) => return None,
                        Ok(_) if line.ends_with('\n') => {
                            line.pop();
                            return Some(line);
                        }
                        Ok(_) => {}
                        Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                        Err(_) => return None,
                    }
                    if Instant::now() >= end {
                        return None;
                    }
                }
            }
            Client::Ws(ws) => loop {
                match ws.read() {
                    Ok(Message::Text(t)) => return Some(t.to_string()),
                    Ok(Message::Close(_)) => return None,
                    Ok(_) => {}
                    Err(tungstenite::Error::Io(e))
                        if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                    Err(_) => return None,
                }
                if Instant::now() >= end {
                    return None;
                }
            },
        }
    }

    pub fn recv(&mut self) -> String {
        self.recv_within(WAIT).expect("frame before timeout")
    }

    pub fn recv_msg(&mut self) -> BusMessage {
        decode(self.recv().as_bytes()).expect("server frames decode")
    }

    /// Skips frames until one satisfies `pred`.
    pub fn recv_until(&mut self, mut pred: impl FnMut(&BusMessage) -> bool) -> BusMessage {
        let end = Instant::now() + WAIT;
        while Instant::now() < end {
            if let Some(f) = self.recv_within(end - Instant::now()) {
                let m = decode(f.as_bytes()).expect("server frames decode");
                if pred(&m) {
                    return m;
                }
            }
        }
        panic!("no matching frame before timeout");
    }

    /// Sends a request with an id and waits for its acknowledgement,
    /// returning every frame received before it.
    pub fn request(&mut self, mut v: Value, id: &str) -> Vec<BusMessage> {
        v["id"] = id.into();
        self.send(v);
        let mut before = Vec::new();
        loop {
            let m = self.recv_msg();
            if m.id.as_deref() == Some(id) && m.status_code() == Some("Ok") {
                return before;
            }
            before.push(m);
        }
    }
}
