use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rehab_vlm::vlm::{
    BackendRequest, EncodedFrame, HttpBackend, HttpConfig, RequestTag, RetryPolicy, VlmClient, VlmError,
};

/// Serves one canned `(status, body)` per connection, in order, and returns
/// the request bodies it saw.
fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(String::from_utf8(buf).unwrap());
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
        bodies
    });
    (url, handle)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] }).to_string()
}

fn client(url: String, max_retries: u32) -> VlmClient {
    let backend = HttpBackend::new(HttpConfig {
        url,
        model: "test-model".into(),
        api_key: Some("secret".into()),
        timeout: Duration::from_secs(10),
    })
    .unwrap();
    VlmClient::new(Arc::new(backend)).with_retry(RetryPolicy {
        max_retries,
        initial_backoff: Duration::from_millis(1),
        max_backoff: Duration::from_millis(5),
    })
}

fn request() -> BackendRequest {
    BackendRequest::new(vec![EncodedFrame::new("image/png", b"px".to_vec())], "Is the hand moving?", RequestTag::new("v", 2, "motion"))
}

#[test]
fn rate_limited_requests_are_retried() {
    let (url, server) = serve(vec![(429, "{}".into()), (429, "{}".into()), (200, ok_body("Yes."))]);
    let c = client(url, 4);
    assert_eq!(c.query(&request()).unwrap(), "Yes.");
    let bodies = server.join().unwrap();
    assert_eq!(bodies.len(), 3);
    assert!(bodies.iter().all(|b| b == &bodies[0]), "retries resend the same body");
    let v: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(v["temperature"], 0.0);
    assert_eq!(v["model"], "test-model");
    let records = c.transcript().records();
    assert_eq!(records.iter().map(|r| r.attempt).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(records[0].status.as_deref().unwrap().contains("429"));
    assert_eq!(records[2].response.as_deref(), Some("Yes."));
}

#[test]
fn retries_are_bounded() {
    let (url, server) = serve(vec![(503, "busy".into()), (503, "busy".into())]);
    let c = client(url, 1);
    match c.query(&request()) {
        Err(VlmError::Transport { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("expected transport error, got {other:?}"),
    }
    server.join().unwrap();
}

#[test]
fn client_errors_are_not_retried() {
    let (url, server) = serve(vec![(401, "bad key".into())]);
    let c = client(url, 4);
    assert!(matches!(c.query(&request()), Err(VlmError::Transport { attempts: 1, .. })));
    server.join().unwrap();
    assert_eq!(c.transcript().len(), 1);
}

#[test]
fn malformed_reply_is_a_protocol_error() {
    let (url, server) = serve(vec![(200, "{\"choices\": []}".into())]);
    let c = client(url, 4);
    assert!(matches!(c.query(&request()), Err(VlmError::Protocol(_))));
    server.join().unwrap();
}
