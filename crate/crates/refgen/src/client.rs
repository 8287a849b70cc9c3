//! Blocking client for an OpenAI-compatible chat-completions endpoint with
//! retry, exponential backoff, rate limiting and bounded concurrency.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::RefgenError;
use crate::prompts::{PromptPayload, UserPart};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_token_env_var: String,
    pub model_name: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_backoff_ms: u64,
    pub temperature: f32,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            auth_token_env_var: "GROUNDKIT_API_TOKEN".into(),
            model_name: "annotator".into(),
            timeout_ms: 60_000,
            max_retries: 4,
            backoff_base_ms: 500,
            max_backoff_ms: 30_000,
            temperature: 0.0,
        }
    }
}

impl EndpointConfig {
    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(
            self.backoff_base_ms
                .saturating_mul(factor)
                .min(self.max_backoff_ms),
        )
    }

    fn token(&self) -> Result<String, RefgenError> {
        std::env::var(&self.auth_token_env_var)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| {
                RefgenError::AuthError(format!(
                    "environment variable `{}` is not set",
                    self.auth_token_env_var
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallOutcome {
    pub text: String,
    pub attempts: u32,
    pub backoffs: Vec<Duration>,
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

/// Builds the chat-completions request body, inlining images as data URLs.
pub fn request_body(payload: &PromptPayload, cfg: &EndpointConfig) -> Result<Value, RefgenError> {
    let mut content = Vec::new();
    for part in &payload.user_parts {
        match part {
            UserPart::Image { header, path } => {
                let bytes = fs::read(path).map_err(|_| RefgenError::MissingAsset(path.clone()))?;
                content.push(json!({"type": "text", "text": header}));
                content.push(json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:{};base64,{}", mime_for(path), STANDARD.encode(bytes))}
                }));
            }
            UserPart::Text { text } => content.push(json!({"type": "text", "text": text})),
        }
    }
    Ok(json!({
        "model": cfg.model_name,
        "temperature": cfg.temperature,
        "messages": [
            {"role": "system", "content": payload.system_text},
            {"role": "user", "content": content},
        ]
    }))
}

fn completion_text(body: &str) -> Result<String, RefgenError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| RefgenError::ProtocolError(format!("response body: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| {
            RefgenError::ProtocolError("response has no choices[0].message.content".into())
        })
}

enum Attempt {
    Done(String),
    Retry(RefgenError),
    Fatal(RefgenError),
}

fn attempt(agent: &ureq::Agent, url: &str, token: &str, body: &str) -> Attempt {
    let request = agent
        .post(url)
        .set("Authorization", &format!("Bearer {token}"))
        .set("Content-Type", "application/json");
    match request.send_string(body) {
        Ok(resp) => match resp.into_string() {
            Ok(text) => match completion_text(&text) {
                Ok(t) => Attempt::Done(t),
                Err(e) => Attempt::Fatal(e),
            },
            Err(e) if e.kind() == std::io::ErrorKind::TimedOut => {
                Attempt::Retry(RefgenError::Timeout { attempts: 0 })
            }
            Err(e) => Attempt::Retry(RefgenError::ProtocolError(format!("reading body: {e}"))),
        },
        Err(ureq::Error::Status(code, resp)) => {
            let detail = resp.into_string().unwrap_or_default();
            match code {
                401 | 403 => {
                    Attempt::Fatal(RefgenError::AuthError(format!("HTTP {code}: {detail}")))
                }
                429 => Attempt::Retry(RefgenError::RateLimited { attempts: 0 }),
                500..=599 => {
                    Attempt::Retry(RefgenError::ProtocolError(format!("HTTP {code}: {detail}")))
                }
                _ => Attempt::Fatal(RefgenError::ProtocolError(format!("HTTP {code}: {detail}"))),
            }
        }
        Err(ureq::Error::Transport(t)) => {
            let msg = t.to_string();
            if msg.contains("timed out") || msg.contains("Timeout") {
                Attempt::Retry(RefgenError::Timeout { attempts: 0 })
            } else {
                Attempt::Retry(RefgenError::ProtocolError(format!("transport: {msg}")))
            }
        }
    }
}

fn with_attempts(err: RefgenError, attempts: u32) -> RefgenError {
    match err {
        RefgenError::Timeout { .. } => RefgenError::Timeout { attempts },
        RefgenError::RateLimited { .. } => RefgenError::RateLimited { attempts },
        other => other,
    }
}

/// Sends one prompt. Rate limits, server errors and timeouts are retried up
/// to `max_retries` times with exponential backoff; authentication failures
/// and other client errors are returned immediately.
pub fn call_endpoint(
    payload: &PromptPayload,
    cfg: &EndpointConfig,
) -> Result<CallOutcome, RefgenError> {
    let token = cfg.token()?;
    let body = request_body(payload, cfg)?.to_string();
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_millis(cfg.timeout_ms))
        .build();
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
    let mut backoffs = Vec::new();
    let mut attempts = 0;
    loop {
        attempts += 1;
        match attempt(&agent, &url, &token, &body) {
            Attempt::Done(text) => {
                return Ok(CallOutcome {
                    text,
                    attempts,
                    backoffs,
                })
            }
            Attempt::Fatal(e) => return Err(with_attempts(e, attempts)),
            Attempt::Retry(e) => {
                if attempts > cfg.max_retries {
                    return Err(with_attempts(e, attempts));
                }
                let delay = cfg.backoff(attempts - 1);
                backoffs.push(delay);
                std::thread::sleep(delay);
            }
        }
    }
}

/// Token-bucket limiter shared between worker threads.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: u32, refill_per_sec: f64) -> Self {
        let capacity = f64::from(capacity.max(1));
        Self {
            capacity,
            refill_per_sec: refill_per_sec.max(f64::MIN_POSITIVE),
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes one token, returning the wait that would be needed if none is
    /// available.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut guard = self.state.lock().expect("limiter lock");
        let (tokens, last) = &mut *guard;
        let now = Instant::now();
        *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.refill_per_sec)
            .min(self.capacity);
        *last = now;
        if *tokens >= 1.0 {
            *tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64(
                (1.0 - *tokens) / self.refill_per_sec,
            ))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}

/// Maps `f` over `items` on at most `concurrency` threads; results keep
/// input order.
pub fn run_bounded<T, R, F>(items: &[T], concurrency: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..concurrency.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .expect("slot lock")
                .expect("every slot filled")
        })
        .collect()
}

/// One quarantined annotation attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub item_id: String,
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

impl RejectRecord {
    pub fn new(
        item_id: impl Into<String>,
        err: &RefgenError,
        raw_response: Option<String>,
    ) -> Self {
        Self {
            item_id: item_id.into(),
            error: err.tag().into(),
            message: err.to_string(),
            raw_response,
        }
    }
}

/// Appends rejects to a JSONL quarantine file.
pub fn append_rejects(path: &Path, rejects: &[RejectRecord]) -> Result<(), RefgenError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    for r in rejects {
        let line =
            serde_json::to_string(r).map_err(|e| RefgenError::ProtocolError(e.to_string()))?;
        writeln!(file, "{line}")?;
    }
    file.sync_all()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let cfg = EndpointConfig {
            backoff_base_ms: 100,
            max_backoff_ms: 1000,
            ..Default::default()
        };
        let ms: Vec<u128> = (0..6).map(|a| cfg.backoff(a).as_millis()).collect();
        assert_eq!(ms, [100, 200, 400, 800, 1000, 1000]);
        assert_eq!(cfg.backoff(200).as_millis(), 1000);
    }

    #[test]
    fn bucket_limits_bursts() {
        let bucket = TokenBucket::new(3, 1.0);
        for _ in 0..3 {
            bucket.try_acquire().unwrap();
        }
        let wait = bucket.try_acquire().unwrap_err();
        assert!(wait > Duration::from_millis(900) && wait <= Duration::from_secs(1));
    }

    #[test]
    fn bounded_map_keeps_order() {
        let items: Vec<u32> = (0..100).collect();
        let active = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let out = run_bounded(&items, 4, |&x| {
            let now = active.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(1));
            active.fetch_sub(1, Ordering::SeqCst);
            x * 2
        });
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(peak.load(Ordering::SeqCst) <= 4);
    }

    #[test]
    fn rejects_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rejects.jsonl");
        let r = RejectRecord::new("el-1", &RefgenError::NoJsonBlock, Some("prose".into()));
        append_rejects(&path, std::slice::from_ref(&r)).unwrap();
        append_rejects(&path, std::slice::from_ref(&r)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: RejectRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back.error, "no_json_block");
    }
}
