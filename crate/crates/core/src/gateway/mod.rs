//! Prompt assembly and chat-completions transport.

mod prompt;
pub mod stub;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use prompt::{
    build_prompt, field_table, format_value, gradient_table, instance_images, metadata_block, table_block,
    ImageAttachment, PromptPayload, QueryMode, PREVIEW_ROWS,
};

pub const INSTANCE_HEADER: &str = "X-Visa-Instance";
pub const STAGE_HEADER: &str = "X-Visa-Stage";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("missing artifact {path}: {source}")]
    MissingArtifact { path: PathBuf, source: std::io::Error },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Where and how to send requests. The token itself is only ever read from
/// the named environment variable at request time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
    pub timeout_secs: f64,
    pub max_tokens: u32,
    pub retries: u32,
    pub backoff_ms: u64,
    pub temperature: f64,
    pub concurrency: usize,
}

impl EndpointConfig {
    pub fn new(base_url: &str, model: &str) -> EndpointConfig {
        EndpointConfig {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            token_env: None,
            timeout_secs: 300.0,
            max_tokens: 8192,
            retries: 4,
            backoff_ms: 1000,
            temperature: 0.0,
            concurrency: 4,
        }
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn token(&self) -> Option<String> {
        self.token_env.as_deref().and_then(|k| std::env::var(k).ok()).filter(|t| !t.is_empty())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransportStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw: String,
    pub finish_reason: Option<String>,
    pub latency_ms: f64,
    pub usage: Option<Usage>,
    pub status: TransportStatus,
    /// Requests sent, including retries.
    pub attempts: u32,
    /// Last HTTP status seen, if any.
    pub http_status: Option<u16>,
}

impl ModelResponse {
    pub fn is_ok(&self) -> bool {
        self.status == TransportStatus::Ok
    }

    pub fn failure(&self) -> Option<&str> {
        match &self.status {
            TransportStatus::Ok => None,
            TransportStatus::Failed { reason } => Some(reason),
        }
    }
}

/// Chat-completions request body: one user message, text then images.
pub fn request_body(p: &PromptPayload, cfg: &EndpointConfig) -> Value {
    let mut content = vec![json!({"type": "text", "text": p.text})];
    for img in &p.images {
        content.push(json!({"type": "image_url", "image_url": {"url": img.data_url()}}));
    }
    json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": cfg.max_tokens,
        "temperature": cfg.temperature,
    })
}

struct Reply {
    content: String,
    finish_reason: Option<String>,
    usage: Option<Usage>,
}

fn parse_reply(body: &str) -> Option<Reply> {
    let v: Value = serde_json::from_str(body).ok()?;
    let choice = v.get("choices")?.get(0)?;
    let content = match choice.get("message")?.get("content")? {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        Value::Array(parts) => parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect(),
        _ => return None,
    };
    let finish_reason = choice.get("finish_reason").and_then(Value::as_str).map(str::to_string);
    let usage = v.get("usage").map(|u| Usage {
        prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64),
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64),
        total_tokens: u.get("total_tokens").and_then(Value::as_u64),
    });
    Some(Reply { content, finish_reason, usage })
}

enum Attempt {
    Done(u16, String),
    Retry(Option<u16>, String),
}

fn send_once(agent: &ureq::Agent, url: &str, body: &Value, p: &PromptPayload, token: Option<&str>) -> Attempt {
    let mut req = agent.post(url).header(INSTANCE_HEADER, &p.instance).header(STAGE_HEADER, &p.stage);
    if let Some(t) = token {
        req = req.header("Authorization", format!("Bearer {t}"));
    }
    match req.send_json(body) {
        Ok(mut resp) => {
            let status = resp.status().as_u16();
            let text = match resp.body_mut().with_config().limit(64 << 20).read_to_string() {
                Ok(t) => t,
                Err(e) => return Attempt::Retry(Some(status), format!("reading body: {e}")),
            };
            if status == 429 || status >= 500 {
                Attempt::Retry(Some(status), format!("HTTP {status}"))
            } else {
                Attempt::Done(status, text)
            }
        }
        Err(e) => Attempt::Retry(None, format!("transport: {e}")),
    }
}

/// Sends one request, retrying transport errors, 429 and 5xx with
/// exponential backoff. Never panics on network failure.
pub fn query(p: &PromptPayload, cfg: &EndpointConfig) -> ModelResponse {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs.max(0.001))))
        .http_status_as_error(false)
        .build()
        .into();
    let body = request_body(p, cfg);
    let token = cfg.token();
    let url = cfg.completions_url();
    let start = Instant::now();
    let mut attempts = 0;
    let finish = |raw: String, finish_reason, usage, status, attempts, http_status| ModelResponse {
        raw,
        finish_reason,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
        usage,
        status,
        attempts,
        http_status,
    };
    loop {
        attempts += 1;
        match send_once(&agent, &url, &body, p, token.as_deref()) {
            Attempt::Done(status, text) if (200..300).contains(&status) => {
                return match parse_reply(&text) {
                    Some(r) => finish(r.content, r.finish_reason, r.usage, TransportStatus::Ok, attempts, Some(status)),
                    None => {
                        let reason = "malformed completion body".to_string();
                        finish(String::new(), None, None, TransportStatus::Failed { reason }, attempts, Some(status))
                    }
                };
            }
            Attempt::Done(status, _) => {
                let reason = format!("HTTP {status}");
                return finish(String::new(), None, None, TransportStatus::Failed { reason }, attempts, Some(status));
            }
            Attempt::Retry(status, reason) => {
                if attempts > cfg.retries {
                    let reason = format!("{reason} after {attempts} attempts");
                    return finish(String::new(), None, None, TransportStatus::Failed { reason }, attempts, status);
                }
                log::warn!("{} [{}]: {reason}, retrying", p.instance, p.stage);
                let wait = cfg.backoff_ms.saturating_mul(1u64 << (attempts - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
        }
    }
}

/// Maps `f` over `items` with at most `cap` calls running at once. Results
/// keep input order.
pub fn bounded_map<T, R, F>(items: Vec<T>, cap: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let n = items.len();
    let queue: Mutex<std::vec::IntoIter<(usize, T)>> =
        Mutex::new(items.into_iter().enumerate().collect::<Vec<_>>().into_iter());
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    let done = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cap.max(1).min(n.max(1)) {
            scope.spawn(|| loop {
                let Some((i, item)) = queue.lock().unwrap().next() else { break };
                let r = f(item);
                out.lock().unwrap()[i] = Some(r);
                done.fetch_add(1, Ordering::Relaxed);
            });
        }
    });
    debug_assert_eq!(done.load(Ordering::Relaxed), n);
    out.into_inner().unwrap().into_iter().map(|r| r.expect("every item mapped")).collect()
}

/// Queries every payload with the endpoint's concurrency cap.
pub fn dispatch(payloads: Vec<PromptPayload>, cfg: &EndpointConfig) -> Vec<ModelResponse> {
    bounded_map(payloads, cfg.concurrency, |p| query(&p, cfg))
}

/// Request summary and response written under `dir/{instance}/{stage}.*`.
/// Images are recorded by name and hash only.
pub fn write_transcript(dir: &Path, p: &PromptPayload, r: &ModelResponse) -> Result<(), GatewayError> {
    let base = dir.join(&p.instance);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GatewayError::Io { path, source }
    };
    std::fs::create_dir_all(&base).map_err(io(&base))?;
    let images: Vec<Value> = p
        .images
        .iter()
        .map(|i| json!({"name": i.name, "media_type": i.media_type, "sha256": crate::dataset::sha256_hex(&i.bytes)}))
        .collect();
    let request = json!({"instance": p.instance, "stage": p.stage, "text": p.text, "images": images});
    let req_path = base.join(format!("{}.request.json", p.stage));
    let text = serde_json::to_string_pretty(&request).expect("json value serializes");
    std::fs::write(&req_path, text).map_err(io(&req_path))?;
    let resp_path = base.join(format!("{}.response.json", p.stage));
    let text = serde_json::to_string_pretty(r).expect("response serializes");
    std::fs::write(&resp_path, text).map_err(io(&resp_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_shape() {
        let mut p = PromptPayload::text_only("a-0001", "test", "hello".into());
        p.images.push(ImageAttachment::png("field.png", vec![1, 2, 3]));
        let b = request_body(&p, &EndpointConfig::new("http://h/v1", "m"));
        let content = &b["messages"][0]["content"];
        assert_eq!(content[0]["text"], "hello");
        assert_eq!(content[1]["image_url"]["url"], "data:image/png;base64,AQID");
        assert_eq!(b["model"], "m");
    }

    #[test]
    fn reply_parsing() {
        let r = parse_reply(r#"{"choices":[{"message":{"content":"x"},"finish_reason":"stop"}],"usage":{"total_tokens":5}}"#)
            .unwrap();
        assert_eq!(r.content, "x");
        assert_eq!(r.finish_reason.as_deref(), Some("stop"));
        assert_eq!(r.usage.unwrap().total_tokens, Some(5));
        assert!(parse_reply("{}").is_none());
        assert!(parse_reply("not json").is_none());
    }

    #[test]
    fn config_never_carries_token() {
        let mut cfg = EndpointConfig::new("http://h/v1/", "m");
        cfg.token_env = Some("VISA_TEST_TOKEN_UNSET".into());
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("VISA_TEST_TOKEN_UNSET"));
        assert_eq!(cfg.completions_url(), "http://h/v1/chat/completions");
    }

    #[test]
    fn bounded_map_keeps_order() {
        let out = bounded_map((0..50).collect(), 3, |i: i32| i * 2);
        assert_eq!(out, (0..50).map(|i| i * 2).collect::<Vec<_>>());
        assert!(bounded_map(Vec::<i32>::new(), 3, |i| i).is_empty());
    }
}
