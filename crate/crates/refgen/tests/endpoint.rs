use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use groundkit_core::records::AreaType;
use groundkit_refgen::{
    annotate, build_long_prompt, build_longgold_prompt, call_endpoint, EndpointConfig, RefgenError,
};
use serde_json::{json, Value};

const FIXTURE: &str = include_str!("fixtures/longgold_response.txt");

struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<(String, Value)>>>,
    handle: JoinHandle<()>,
}

fn read_request(stream: &mut TcpStream) -> (String, Value) {
    let mut reader = BufReader::new(stream);
    let mut len = 0usize;
    let mut auth = String::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        if lower.starts_with("authorization:") {
            auth = line["authorization:".len()..].trim().to_string();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (auth, serde_json::from_slice(&body).unwrap())
}

/// Serves one scripted `(status, body)` reply per connection, in order.
fn stub(replies: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&requests);
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            log.lock().unwrap().push(read_request(&mut stream));
            let reason = match status {
                200 => "OK",
                401 => "Unauthorized",
                429 => "Too Many Requests",
                _ => "Error",
            };
            write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    Stub {
        url,
        requests,
        handle,
    }
}

fn completion(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn config(url: &str, env: &str) -> EndpointConfig {
    std::env::set_var(env, "secret-token");
    EndpointConfig {
        base_url: url.into(),
        auth_token_env_var: env.into(),
        model_name: "stub-model".into(),
        timeout_ms: 5_000,
        max_retries: 3,
        backoff_base_ms: 10,
        max_backoff_ms: 1_000,
        ..Default::default()
    }
}

fn assets(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let shot = dir.join("shot.png");
    let crop = dir.join("crop.png");
    std::fs::write(&shot, b"\x89PNG shot").unwrap();
    std::fs::write(&crop, b"\x89PNG crop").unwrap();
    (shot, crop)
}

#[test]
fn retries_rate_limits_with_backoff() {
    let server = stub(vec![
        (429, "{}".into()),
        (429, "{}".into()),
        (200, completion(FIXTURE)),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let (shot, crop) = assets(dir.path());
    let payload = build_longgold_prompt(&shot, &crop).unwrap();
    let cfg = config(&server.url, "GK_TEST_TOKEN_RETRY");
    let out = call_endpoint(&payload, &cfg).unwrap();
    server.handle.join().unwrap();
    assert_eq!(out.attempts, 3);
    assert_eq!(
        out.backoffs,
        vec![Duration::from_millis(10), Duration::from_millis(20)]
    );
    assert_eq!(out.text, FIXTURE);

    let requests = server.requests.lock().unwrap();
    assert_eq!(requests.len(), 3);
    let (auth, body) = &requests[2];
    assert_eq!(auth, "Bearer secret-token");
    assert_eq!(body["model"], "stub-model");
    let user = body["messages"][1]["content"].as_array().unwrap();
    assert_eq!(user[0]["text"], "# Screenshot with highlight");
    assert!(user[1]["image_url"]["url"]
        .as_str()
        .unwrap()
        .starts_with("data:image/png;base64,"));
    assert_eq!(user[2]["text"], "# Cropped target image");
    assert_eq!(body["messages"][0]["content"], payload.system_text);
}

#[test]
fn exhausted_retries_report_rate_limit() {
    let server = stub(vec![(429, "{}".into()); 3]);
    let dir = tempfile::tempdir().unwrap();
    let (shot, _) = assets(dir.path());
    let payload = build_long_prompt(&shot, "open settings").unwrap();
    let mut cfg = config(&server.url, "GK_TEST_TOKEN_EXHAUST");
    cfg.max_retries = 2;
    let err = call_endpoint(&payload, &cfg).unwrap_err();
    server.handle.join().unwrap();
    assert!(
        matches!(err, RefgenError::RateLimited { attempts: 3 }),
        "{err:?}"
    );
}

#[test]
fn unauthorized_is_not_retried() {
    let server = stub(vec![(401, "{\"error\": \"bad key\"}".into())]);
    let dir = tempfile::tempdir().unwrap();
    let (shot, crop) = assets(dir.path());
    let payload = build_longgold_prompt(&shot, &crop).unwrap();
    let cfg = config(&server.url, "GK_TEST_TOKEN_AUTH");
    let err = call_endpoint(&payload, &cfg).unwrap_err();
    server.handle.join().unwrap();
    assert!(matches!(err, RefgenError::AuthError(_)), "{err:?}");
    assert_eq!(server.requests.lock().unwrap().len(), 1);
}

#[test]
fn missing_token_is_an_auth_error() {
    let dir = tempfile::tempdir().unwrap();
    let (shot, crop) = assets(dir.path());
    let payload = build_longgold_prompt(&shot, &crop).unwrap();
    let cfg = EndpointConfig {
        base_url: "http://127.0.0.1:9".into(),
        auth_token_env_var: "GK_TEST_TOKEN_UNSET".into(),
        ..Default::default()
    };
    assert!(matches!(
        call_endpoint(&payload, &cfg),
        Err(RefgenError::AuthError(_))
    ));
}

#[test]
fn canned_gold_response_end_to_end() {
    let server = stub(vec![
        (200, completion(FIXTURE)),
        (200, completion("I cannot help with that.")),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let (shot, crop) = assets(dir.path());
    let payload = build_longgold_prompt(&shot, &crop).unwrap();
    let cfg = config(&server.url, "GK_TEST_TOKEN_E2E");
    let bundle = annotate("el-7", &payload, &cfg, None).unwrap();
    assert_eq!(bundle.area_type, Some(AreaType::Icon));
    assert_eq!(bundle.interactive, Some(true));
    assert!(bundle.appearance.contains("'Shapes'"));
    assert!(bundle.positional.starts_with("Located on the toolbar"));
    assert!(!bundle.context.is_empty() && !bundle.functional.is_empty());

    let reject = annotate("el-8", &payload, &cfg, None).unwrap_err();
    server.handle.join().unwrap();
    assert_eq!(reject.item_id, "el-8");
    assert_eq!(reject.error, "no_json_block");
    assert_eq!(
        reject.raw_response.as_deref(),
        Some("I cannot help with that.")
    );
}
