mod common;

use std::io::Write;
use std::net::TcpStream;

use common::{serve, sim, Client};
use navsim_bridge::server::MAX_FRAME_BYTES;
use navsim_bridge::PlannerMode;
use proptest::prelude::*;
use serde_json::json;
use tungstenite::Message;

fn still_serving(c: &mut Client, id: &str) {
    let before = c.request(json!({"op":"subscribe","topic":"/probe"}), id);
    for m in before {
        assert_eq!(m.topic, "/status", "unexpected frame {m:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn garbage_lines_get_error_statuses(lines in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..200), 1..20)) {
        let server = serve(sim(1, PlannerMode::None));
        let mut c = Client::tcp(server.local_addr());
        // A stream opening with an uppercase letter is routed as HTTP.
        still_serving(&mut c, "hello");
        let Client::Tcp(_, w) = &mut c else { unreachable!() };
        let mut sent = 0;
        for mut l in lines {
            l.retain(|&b| b != b'\n' && b != b'\r');
            if l.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            // Garbage that happens to decode is not the point here.
            if navsim_bridge::decode(&l).is_ok() {
                continue;
            }
            l.push(b'\n');
            w.write_all(&l).unwrap();
            sent += 1;
        }
        for _ in 0..sent {
            let m = c.recv_msg();
            prop_assert_eq!(m.type_name.as_deref(), Some("navsim/Status"));
            prop_assert_eq!(m.msg.as_ref().unwrap()["level"].as_str(), Some("error"));
        }
        still_serving(&mut c, "ok");
        server.shutdown();
    }
}

#[test]
fn oversized_and_binary_frames_do_not_kill_the_server() {
    let server = serve(sim(1, PlannerMode::None));
    let addr = server.local_addr();

    let mut c = Client::tcp(addr);
    let mut huge = vec![b'x'; MAX_FRAME_BYTES + 10];
    huge.push(b'\n');
    if let Client::Tcp(_, w) = &mut c {
        w.write_all(&huge).unwrap();
        w.write_all(&[0xff, 0xfe, b'{', b'\n']).unwrap();
    }
    assert_eq!(c.recv_msg().status_code(), Some("MalformedFrame"));
    assert_eq!(c.recv_msg().status_code(), Some("MalformedFrame"));
    still_serving(&mut c, "a");

    let mut ws = Client::ws(addr);
    if let Client::Ws(s) = &mut ws {
        s.send(Message::binary(vec![0u8, 1, 2])).unwrap();
        s.send(Message::text("[1,2]")).unwrap();
        s.send(Message::Ping(vec![1].into())).unwrap();
    }
    assert_eq!(ws.recv_msg().status_code(), Some("MalformedFrame"));
    assert_eq!(ws.recv_msg().status_code(), Some("MalformedFrame"));
    still_serving(&mut ws, "b");

    // Abrupt disconnects, mid-frame and mid-handshake.
    for junk in [&b"{\"op\":\"subscr"[..], b"GET / HTTP/1.1\r\nUpgrade: websocket\r\n"] {
        let mut s = TcpStream::connect(addr).unwrap();
        s.write_all(junk).unwrap();
        drop(s);
    }
    let mut late = Client::tcp(addr);
    still_serving(&mut late, "c");
    still_serving(&mut c, "d");
    server.shutdown();
}

#[test]
fn disconnect_cleans_up_subscriptions() {
    let server = serve(sim(1, PlannerMode::None));
    let addr = server.local_addr();
    let mut p = Client::tcp(addr);
    p.request(json!({"op":"advertise","topic":"/x","type":"test/T"}), "a");
    {
        let mut s = Client::ws(addr);
        s.request(json!({"op":"subscribe","topic":"/x"}), "s");
    }
    let mut s2 = Client::tcp(addr);
    s2.request(json!({"op":"subscribe","topic":"/x"}), "s");
    for i in 0..50 {
        p.send(json!({"op":"publish","topic":"/x","msg":i}));
    }
    for i in 0..50 {
        assert_eq!(s2.recv_msg().msg.unwrap(), json!(i));
    }
    server.shutdown();
}
