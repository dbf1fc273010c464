use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use navsim_core::lang::{parse_plan, render_world_description};
use navsim_core::planner::{
    extract_calls, llm_plan, stub_plan, HttpBackend, LlmEndpointConfig, PlannerError, PromptContext, ReplayBackend,
};
use navsim_core::procgen::{generate_environment, EnvironmentSpec};
use navsim_core::world::WorldState;
use navsim_core::Color;

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn world() -> WorldState {
    generate_environment(&EnvironmentSpec::fetch_and_deliver(7)).unwrap()
}

fn ctx(w: &WorldState) -> PromptContext {
    PromptContext::new(render_world_description(w), "deliver the orange ball to the green zone")
}

#[test]
fn recorded_transcript_matches_stub() {
    let w = world();
    let raw = fixture("fetch_deliver_transcript.txt");
    let calls = extract_calls(&raw).unwrap();
    assert_eq!(
        calls,
        "search_ball(`Orange'); catch_the_ball(`Orange'); search_zone(`Green'); go_to_zone(`Green'); leave_ball();"
    );
    let stub = stub_plan(&w, Color::Orange, Color::Green).unwrap();
    assert_eq!(parse_plan(&calls).unwrap(), stub.plan);

    let mut backend = ReplayBackend::new([raw]);
    let resp = llm_plan(&ctx(&w), &w, &mut backend).unwrap();
    assert_eq!(resp.plan, stub.plan);
    assert!(resp.answer.starts_with("``I will search for and catch the Orange Ball"));
    assert_eq!(resp.reasoning.lines().count(), 6);
    assert_eq!(backend.prompts.len(), 1);
}

#[test]
fn noisy_corpus_yields_the_same_plan() {
    let w = world();
    let expected = stub_plan(&w, Color::Orange, Color::Green).unwrap().plan;
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/noisy");
    let mut names: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() >= 5);
    for name in names {
        let raw = fixture(&format!("noisy/{name}"));
        let calls = extract_calls(&raw).unwrap_or_else(|e| panic!("{name}: {e}"));
        let plan = parse_plan(&calls).unwrap_or_else(|e| panic!("{name}: {e} in {calls:?}"));
        assert_eq!(plan, expected, "{name}");
    }
}

#[test]
fn invalid_color_in_transcript_is_a_validation_failure() {
    let w = world();
    let raw = fixture("fetch_deliver_transcript.txt").replace("Green", "Purple");
    let mut backend = ReplayBackend::new([raw]);
    match llm_plan(&ctx(&w), &w, &mut backend) {
        Err(PlannerError::ValidationFailed(report)) => assert!(!report.errors.is_empty()),
        other => panic!("{other:?}"),
    }
}

/// Reads one HTTP request with a Content-Length body.
fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream);
    let mut len = 0;
    let mut head = String::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        head.push_str(&line);
        if line == "\r\n" || line.is_empty() {
            break;
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    head + &String::from_utf8(body).unwrap()
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let reply = format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(reply.as_bytes()).unwrap();
}

fn endpoint(port: u16, timeout_secs: f64) -> LlmEndpointConfig {
    LlmEndpointConfig {
        url: format!("http://127.0.0.1:{port}/v1/chat/completions"),
        model: "fixture-model".into(),
        token_env: "NAVSIM_TEST_TOKEN_UNSET".into(),
        timeout_secs,
    }
}

#[test]
fn http_backend_against_local_mock() {
    let w = world();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let transcript = fixture("fetch_deliver_transcript.txt");
    let server = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let req = read_request(&mut s);
        let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": transcript}}]});
        respond(&mut s, "200 OK", &body.to_string());
        req
    });
    let mut backend = HttpBackend::new(endpoint(port, 5.0));
    let resp = llm_plan(&ctx(&w), &w, &mut backend).unwrap();
    assert_eq!(resp.plan, stub_plan(&w, Color::Orange, Color::Green).unwrap().plan);
    let req = server.join().unwrap();
    assert!(req.starts_with("POST /v1/chat/completions"));
    assert!(req.contains("\"model\":\"fixture-model\""));
    assert!(req.contains("Area 1 has 1 Orange Ball"));
    assert!(!req.to_ascii_lowercase().contains("authorization"));
}

#[test]
fn http_error_status_is_reported() {
    let w = world();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        read_request(&mut s);
        respond(&mut s, "503 Service Unavailable", "{}");
    });
    let mut backend = HttpBackend::new(endpoint(port, 5.0));
    let err = llm_plan(&ctx(&w), &w, &mut backend).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err, PlannerError::Http { status: Some(503), .. }), "{err:?}");
}

#[test]
fn silent_endpoint_times_out() {
    let w = world();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    // Accepts and reads but never answers.
    let server = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        read_request(&mut s);
        thread::sleep(Duration::from_secs(2));
    });
    let mut backend = HttpBackend::new(endpoint(port, 0.5));
    let start = Instant::now();
    let err = llm_plan(&ctx(&w), &w, &mut backend).unwrap_err();
    assert_eq!(err, PlannerError::Timeout);
    assert!(start.elapsed() < Duration::from_secs(2));
    server.join().unwrap();
}

#[test]
fn refused_connection_is_an_http_error() {
    let w = world();
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut backend = HttpBackend::new(endpoint(port, 2.0));
    let err = llm_plan(&ctx(&w), &w, &mut backend).unwrap_err();
    assert!(matches!(err, PlannerError::Http { status: None, .. }), "{err:?}");
}
