//! Chat-completion backends: a retrying wrapper, offline mocks and an HTTP
//! client for the common chat-completions JSON API.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackendError {
    pub message: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retryable: false,
        }
    }
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `attempt` (0-based): `base * 2^attempt`,
    /// capped at `max_delay`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Calls `backend`, retrying retryable failures with exponential backoff.
pub fn complete_with_retry(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<String, BackendError> {
    let mut attempt = 0;
    loop {
        match backend.complete(request) {
            Ok(text) => return Ok(text),
            Err(e) if e.retryable && attempt < policy.max_retries => {
                std::thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// The `X: sentence` lines following `EDITED:` in a rendered prompt.
pub(crate) fn labeled_candidates(user: &str) -> Vec<(char, &str)> {
    user.lines()
        .skip_while(|l| l.trim() != "EDITED:")
        .skip(1)
        .map_while(|l| {
            let mut chars = l.chars();
            let label = chars.next()?;
            let rest = chars.as_str().strip_prefix(": ")?;
            label.is_ascii_uppercase().then_some((label, rest))
        })
        .collect()
}

/// Deterministic offline stand-ins for a hosted model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MockBackend {
    /// Ranks candidates by their text (ties by label) and answers with the
    /// full ranking, so the decision depends only on content.
    LexMin,
    /// Always answers with this label.
    Label(char),
}

impl std::str::FromStr for MockBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lexmin" => Ok(MockBackend::LexMin),
            "first" => Ok(MockBackend::Label('A')),
            other => match other.strip_prefix("label:") {
                Some(l) if l.len() == 1 && l.as_bytes()[0].is_ascii_uppercase() => {
                    Ok(MockBackend::Label(l.as_bytes()[0] as char))
                }
                _ => Err(format!(
                    "unknown mock `{other}` (expected `lexmin`, `first` or `label:<A-Z>`)"
                )),
            },
        }
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        match self {
            MockBackend::Label(l) => Ok(format!("OUTPUT:\n{l}")),
            MockBackend::LexMin => {
                let mut cands = labeled_candidates(&request.user);
                if cands.is_empty() {
                    return Err(BackendError::fatal("mock: no candidates in prompt"));
                }
                cands.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
                let labels: Vec<String> = cands.iter().map(|(l, _)| l.to_string()).collect();
                Ok(format!("OUTPUT:\n{}", labels.join(" ")))
            }
        }
    }
}

/// Fails the first `failures` calls with a transient error, then delegates.
#[derive(Debug)]
pub struct FlakyBackend<B> {
    inner: B,
    failures: usize,
    calls: AtomicUsize,
}

impl<B> FlakyBackend<B> {
    pub fn new(inner: B, failures: usize) -> Self {
        FlakyBackend {
            inner,
            failures,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: ChatBackend> ChatBackend for FlakyBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(BackendError::transient(format!("flaky: failure {}", n + 1)))
        } else {
            self.inner.complete(request)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_token_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout_secs() -> u64 {
    60
}

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        HttpBackend {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            token: std::env::var(&config.token_env)
                .ok()
                .filter(|t| !t.is_empty()),
        }
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let response = req
            .send_json(self.request_body(request))
            .map_err(|e| match e {
                ureq::Error::StatusCode(code) if code == 429 || code >= 500 || code == 408 => {
                    BackendError::transient(format!("HTTP {code}"))
                }
                ureq::Error::StatusCode(code) => BackendError::fatal(format!("HTTP {code}")),
                ureq::Error::BadUri(u) => BackendError::fatal(format!("bad URL {u}")),
                other => BackendError::transient(other.to_string()),
            })?;
        let body: serde_json::Value = response
            .into_body()
            .read_json()
            .map_err(|e| BackendError::transient(format!("unreadable response: {e}")))?;
        body.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .ok_or_else(|| BackendError::fatal("response has no choices[0].message.content"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn req(user: &str) -> ChatRequest {
        ChatRequest {
            system: "sys".into(),
            user: user.into(),
            temperature: 1.0,
        }
    }

    const PROMPT: &str = "ORIGINAL:\nI likes turtles .\nEDITED:\nA: I like turtles .\nB: I likes turtles .\nC: I like turtles .\n\nSelect.";

    #[test]
    fn lexmin_ranks_by_text() {
        let out = MockBackend::LexMin.complete(&req(PROMPT)).unwrap();
        assert_eq!(out, "OUTPUT:\nA C B");
        assert!(MockBackend::LexMin.complete(&req("nothing")).is_err());
    }

    #[test]
    fn parse_mock_names() {
        assert_eq!("lexmin".parse::<MockBackend>(), Ok(MockBackend::LexMin));
        assert_eq!("first".parse::<MockBackend>(), Ok(MockBackend::Label('A')));
        assert_eq!(
            "label:C".parse::<MockBackend>(),
            Ok(MockBackend::Label('C'))
        );
        assert!("label:c".parse::<MockBackend>().is_err());
        assert!("gpt".parse::<MockBackend>().is_err());
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_secs(2));
        assert_eq!(p.delay(10), Duration::from_secs(8));
    }

    #[test]
    fn retries_transient_failures() {
        let flaky = FlakyBackend::new(MockBackend::Label('B'), 3);
        let out = complete_with_retry(&flaky, &req(PROMPT), &RetryPolicy::no_delay(3)).unwrap();
        assert_eq!(out, "OUTPUT:\nB");
        assert_eq!(flaky.calls(), 4);

        let flaky = FlakyBackend::new(MockBackend::Label('B'), 4);
        assert!(complete_with_retry(&flaky, &req(PROMPT), &RetryPolicy::no_delay(3)).is_err());
        assert_eq!(flaky.calls(), 4);
    }

    struct Fatal(AtomicUsize);
    impl ChatBackend for Fatal {
        fn complete(&self, _: &ChatRequest) -> Result<String, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::fatal("no"))
        }
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let b = Fatal(AtomicUsize::new(0));
        assert!(complete_with_retry(&b, &req(PROMPT), &RetryPolicy::no_delay(3)).is_err());
        assert_eq!(b.0.load(Ordering::SeqCst), 1);
    }

    /// One-shot HTTP server returning `status` and `body`; hands back the raw
    /// request it received.
    fn serve_once(
        status: &'static str,
        body: &'static str,
    ) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut payload = vec![0; content_length];
            reader.read_exact(&mut payload).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            head + &String::from_utf8(payload).unwrap()
        });
        (format!("http://{addr}/v1"), handle)
    }

    #[test]
    fn http_backend_speaks_chat_completions() {
        let (url, server) = serve_once(
            "200 OK",
            r#"{"choices":[{"index":0,"message":{"role":"assistant","content":"OUTPUT:\nC"}}]}"#,
        );
        std::env::set_var("GEC_TEST_TOKEN_OK", "secret-token");
        let backend = HttpBackend::new(&HttpConfig {
            base_url: url,
            model: "test-model".into(),
            token_env: "GEC_TEST_TOKEN_OK".into(),
            timeout_secs: 10,
        });
        let out = backend.complete(&req(PROMPT)).unwrap();
        assert_eq!(out, "OUTPUT:\nC");

        let raw = server.join().unwrap();
        assert!(raw.starts_with("POST /v1/chat/completions "));
        assert!(raw
            .to_ascii_lowercase()
            .contains("authorization: bearer secret-token"));
        let body: serde_json::Value =
            serde_json::from_str(&raw[raw.find("\r\n\r\n").unwrap() + 4..]).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"], PROMPT);
    }

    #[test]
    fn http_status_classification() {
        let (url, server) = serve_once("503 Service Unavailable", "{}");
        let backend = HttpBackend::new(&HttpConfig {
            base_url: url,
            model: "m".into(),
            token_env: "GEC_TEST_TOKEN_UNSET".into(),
            timeout_secs: 10,
        });
        let err = backend.complete(&req(PROMPT)).unwrap_err();
        assert!(err.retryable, "{err}");
        server.join().unwrap();

        let (url, server) = serve_once("401 Unauthorized", "{}");
        let backend = HttpBackend::new(&HttpConfig {
            base_url: url,
            model: "m".into(),
            token_env: "GEC_TEST_TOKEN_UNSET".into(),
            timeout_secs: 10,
        });
        assert!(!backend.complete(&req(PROMPT)).unwrap_err().retryable);
        server.join().unwrap();
    }
}
