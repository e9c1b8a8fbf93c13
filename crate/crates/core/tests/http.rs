use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use sitewalk::gateway::{
    ChatBackend, ChatRequest, GatewayError, GenerationParams, HttpBackend, LlmConfig, BackendKind,
};

/// A one-thread HTTP server answering each request with the next canned
/// (status, body) pair and recording the request bodies it saw.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(serde_json::from_slice(&buf).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn completion(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn backend(url: &str) -> HttpBackend {
    let config = LlmConfig {
        backend: BackendKind::Http,
        model: "test-model".into(),
        base_url: url.into(),
        api_key_env: "SITEWALK_TEST_NO_SUCH_KEY".into(),
        timeout_s: 5,
        ..LlmConfig::scripted(None, false)
    };
    HttpBackend::from_config(&config).unwrap().with_backoff(Duration::from_millis(10))
}

fn request() -> ChatRequest {
    ChatRequest::new("act", "system text".into(), "user text".into(), GenerationParams::default())
}

#[test]
fn default_sampling_parameters_reach_the_wire() {
    let (url, seen) = serve(vec![(200, completion("click [3]"))]);
    assert_eq!(backend(&url).complete(&request()).unwrap(), "click [3]");
    let bodies = seen.lock().unwrap();
    let body = &bodies[0];
    assert_eq!(body["temperature"], json!(0.5));
    assert_eq!(body["top_p"], json!(0.95));
    assert_eq!(body["model"], json!("test-model"));
    let messages = body["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 2);
    assert_eq!(messages[0]["role"], json!("system"));
    assert_eq!(messages[1]["content"], json!("user text"));
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) = serve(vec![(500, "oops".into()), (200, completion("ok"))]);
    assert_eq!(backend(&url).complete(&request()).unwrap(), "ok");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, "bad".into()), (200, completion("unused"))]);
    let err = backend(&url).complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Status { status: 400, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn retries_stop_after_three_attempts() {
    let (url, seen) = serve(vec![(503, "a".into()), (503, "b".into()), (503, "c".into()), (200, completion("late"))]);
    let err = backend(&url).complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Status { status: 503, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = backend(&format!("http://127.0.0.1:{port}")).complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }), "{err:?}");
}
