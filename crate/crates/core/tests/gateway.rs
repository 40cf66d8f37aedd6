mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{completion, spawn_stub};
use trajaudit::gateway::{ChatMessage, ChatRequest, Gateway, GatewayConfig, GatewayError, GatewayMode};

fn live(base_url: &str, max_retries: u32) -> GatewayConfig {
    GatewayConfig {
        base_url: base_url.to_string(),
        model_name: "stub-model".into(),
        auth_token_env_var: "TRAJAUDIT_TEST_UNSET_TOKEN".into(),
        timeout_ms: 5_000,
        max_retries,
        backoff_base_ms: 1,
        concurrency_budget: 4,
        mode: GatewayMode::Live,
    }
}

fn request(text: &str) -> ChatRequest {
    ChatRequest::new(vec![ChatMessage::system("audit"), ChatMessage::user(text)])
}

#[test]
fn server_errors_exhaust_retries() {
    let stub = spawn_stub(Duration::ZERO, Arc::new(|_| (500, "boom".into())));
    let gw = Gateway::new(live(&stub.base_url, 2)).unwrap();
    match gw.chat_complete(&request("x")) {
        Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn rate_limits_exhaust_retries() {
    let stub = spawn_stub(Duration::ZERO, Arc::new(|_| (429, "slow down".into())));
    let gw = Gateway::new(live(&stub.base_url, 1)).unwrap();
    assert!(matches!(
        gw.chat_complete(&request("x")),
        Err(GatewayError::RateLimited { attempts: 2 })
    ));
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 2);
}

#[test]
fn client_errors_and_bad_bodies_are_not_retried() {
    let stub = spawn_stub(Duration::ZERO, Arc::new(|_| (400, "bad request".into())));
    let gw = Gateway::new(live(&stub.base_url, 3)).unwrap();
    assert!(matches!(
        gw.chat_complete(&request("x")),
        Err(GatewayError::Status { status: 400, .. })
    ));
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 1);

    let stub = spawn_stub(Duration::ZERO, Arc::new(|_| (200, "not json".into())));
    let gw = Gateway::new(live(&stub.base_url, 3)).unwrap();
    assert!(matches!(gw.chat_complete(&request("x")), Err(GatewayError::Protocol(_))));
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn recovers_after_transient_failures() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let stub = spawn_stub(
        Duration::ZERO,
        Arc::new(move |_| {
            if seen.fetch_add(1, Ordering::SeqCst) < 2 {
                (503, "later".into())
            } else {
                (200, completion("fine"))
            }
        }),
    );
    let gw = Gateway::new(live(&stub.base_url, 2)).unwrap();
    assert_eq!(gw.chat_complete(&request("x")).unwrap(), "fine");
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn concurrency_budget_bounds_in_flight_requests() {
    let stub = spawn_stub(Duration::from_millis(80), Arc::new(|_| (200, completion("ok"))));
    let gw = Arc::new(
        Gateway::new(GatewayConfig {
            concurrency_budget: 2,
            ..live(&stub.base_url, 0)
        })
        .unwrap(),
    );
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let gw = gw.clone();
            std::thread::spawn(move || gw.chat_complete(&request(&format!("q{i}"))).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), "ok");
    }
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 8);
    let max = stub.stats.max_in_flight.load(Ordering::SeqCst);
    assert!((1..=2).contains(&max), "max in flight {max}");
}

#[test]
fn record_then_replay_offline() {
    let stub = spawn_stub(
        Duration::ZERO,
        Arc::new(|body| {
            let last = body["messages"][1]["content"].as_str().unwrap_or("").to_string();
            (200, completion(&format!("echo: {last}")))
        }),
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rec.jsonl");
    let recorder = Gateway::new(GatewayConfig {
        mode: GatewayMode::Record { recording: path.clone() },
        ..live(&stub.base_url, 0)
    })
    .unwrap();
    assert_eq!(recorder.chat_complete(&request("one")).unwrap(), "echo: one");
    assert_eq!(recorder.chat_complete(&request("two")).unwrap(), "echo: two");
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 2);

    let replay = Gateway::new(GatewayConfig {
        mode: GatewayMode::Replay { recording: path },
        ..live(&stub.base_url, 0)
    })
    .unwrap();
    let a = replay.chat_complete(&request("one")).unwrap();
    let b = replay.chat_complete(&request("one")).unwrap();
    assert_eq!(a, "echo: one");
    assert_eq!(a, b);
    assert!(matches!(
        replay.chat_complete(&request("three")),
        Err(GatewayError::MissingRecording { .. })
    ));
    assert_eq!(stub.stats.requests.load(Ordering::SeqCst), 2);
}

#[test]
fn replay_without_a_recording_file_fails_at_construction() {
    let dir = tempfile::tempdir().unwrap();
    let err = Gateway::new(GatewayConfig::replay(dir.path().join("missing.jsonl"))).unwrap_err();
    assert!(matches!(err, GatewayError::Recording(_)));
}

#[test]
fn bearer_header_comes_from_the_environment() {
    let stub = spawn_stub(Duration::ZERO, Arc::new(|_| (200, completion("ok"))));
    std::env::set_var("TRAJAUDIT_TEST_TOKEN_SET", "s3cret");
    let gw = Gateway::new(GatewayConfig {
        auth_token_env_var: "TRAJAUDIT_TEST_TOKEN_SET".into(),
        ..live(&stub.base_url, 0)
    })
    .unwrap();
    gw.chat_complete(&request("x")).unwrap();
    let gw = Gateway::new(live(&stub.base_url, 0)).unwrap();
    gw.chat_complete(&request("y")).unwrap();
    let headers = stub.stats.auth_headers.lock().unwrap().clone();
    assert_eq!(headers, vec![Some("Bearer s3cret".to_string()), None]);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let gw = Gateway::new(live(&format!("http://127.0.0.1:{port}/v1"), 1)).unwrap();
    assert!(matches!(
        gw.chat_complete(&request("x")),
        Err(GatewayError::Transport { attempts: 2, .. })
    ));
}
