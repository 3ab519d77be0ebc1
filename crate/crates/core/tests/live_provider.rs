//! Live-provider behavior against a local stub HTTP server: transient
//! failures retry with backoff, fatal statuses do not, usage counts flow
//! through.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use memfl_core::gateway::{
    ChatRequest, Gateway, GatewayConfig, GatewayError, LiveProvider, Message, PriceTable,
    RetryPolicy,
};

/// Serves scripted HTTP statuses, one connection each; the body only
/// matters for 200s.
fn stub_server(statuses: Vec<u16>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for status in statuses {
            let (mut stream, _) = match listener.accept() {
                Ok(s) => s,
                Err(_) => return,
            };
            counter.fetch_add(1, Ordering::SeqCst);
            // Read until the blank line, then the content-length body.
            let mut buf = Vec::new();
            let mut byte = [0u8; 1];
            while !buf.ends_with(b"\r\n\r\n") {
                if stream.read(&mut byte).unwrap_or(0) == 0 {
                    break;
                }
                buf.push(byte[0]);
            }
            let header = String::from_utf8_lossy(&buf).to_lowercase();
            let content_length: usize = header
                .lines()
                .find_map(|l| l.strip_prefix("content-length:"))
                .and_then(|v| v.trim().parse().ok())
                .unwrap_or(0);
            let mut body = vec![0u8; content_length];
            let _ = stream.read_exact(&mut body);

            let (line, payload) = if status == 200 {
                let reply = serde_json::json!({
                    "choices": [{"message": {"role": "assistant", "content": "stubbed reply"}}],
                    "usage": {"prompt_tokens": 11, "completion_tokens": 7},
                })
                .to_string();
                ("HTTP/1.1 200 OK", reply)
            } else if status == 429 {
                ("HTTP/1.1 429 Too Many Requests", "{}".to_string())
            } else if status == 400 {
                ("HTTP/1.1 400 Bad Request", "{}".to_string())
            } else {
                ("HTTP/1.1 500 Internal Server Error", "{}".to_string())
            };
            let response = format!(
                "{line}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://{addr}"), hits)
}

fn request() -> ChatRequest {
    ChatRequest {
        model: "stub-model".into(),
        messages: vec![Message::user("ping")],
        temperature: 0.0,
        max_output_tokens: 32,
        tag: "review:bug-001".into(),
        step: "review".into(),
        bug_id: Some("bug-001".into()),
    }
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 5,
        base_delay_ms: 1,
    }
}

#[test]
fn three_5xx_then_success_records_three_retries() {
    let (base_url, hits) = stub_server(vec![500, 500, 500, 200]);
    let provider = LiveProvider::new(&base_url, "test-key", fast_retry(), 7);
    let gateway = Gateway::new(
        Box::new(provider),
        GatewayConfig {
            prices: PriceTable::default().with_price("stub-model", 1.0, 1.0),
            ..Default::default()
        },
    )
    .unwrap();
    let exchange = gateway.complete(request()).unwrap();
    assert_eq!(exchange.reply_text, "stubbed reply");
    assert_eq!(
        exchange.retries, 3,
        "three transient failures before success"
    );
    assert_eq!(hits.load(Ordering::SeqCst), 4);
    assert_eq!(
        (exchange.prompt_tokens, exchange.completion_tokens),
        (11, 7)
    );
    assert_eq!(exchange.cost_micros, 18);
    assert_eq!(gateway.ledger_len(), 1, "one exchange despite the retries");
    assert!(
        gateway.ledger()[0].latency_micros > 0,
        "live latency is measured"
    );
}

#[test]
fn retries_exhaust_into_provider_unavailable() {
    let (base_url, hits) = stub_server(vec![429; 6]);
    let provider = LiveProvider::new(&base_url, "test-key", fast_retry(), 7);
    let gateway = Gateway::new(Box::new(provider), GatewayConfig::default()).unwrap();
    let err = gateway.complete(request()).unwrap_err();
    match err {
        GatewayError::ProviderUnavailable { attempts, .. } => assert_eq!(attempts, 6),
        other => panic!("expected ProviderUnavailable, got {other}"),
    }
    assert_eq!(
        hits.load(Ordering::SeqCst),
        6,
        "max 5 retries after the first attempt"
    );
}

#[test]
fn client_errors_fail_fast_without_retry() {
    let (base_url, hits) = stub_server(vec![400, 200]);
    let provider = LiveProvider::new(&base_url, "test-key", fast_retry(), 7);
    let gateway = Gateway::new(Box::new(provider), GatewayConfig::default()).unwrap();
    let err = gateway.complete(request()).unwrap_err();
    assert!(matches!(
        err,
        GatewayError::ProviderUnavailable { attempts: 1, .. }
    ));
    assert_eq!(hits.load(Ordering::SeqCst), 1, "a 400 must not be retried");
}
