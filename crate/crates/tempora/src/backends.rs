//! HTTP model backends and an in-flight limiter shared by all backends.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use tempora_core::gateway::{
    ChatBackend, CompletionParams, GatewayError, LogprobBackend, Span, TokenScore,
};

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn credential(auth_ref: Option<&str>) -> Result<Option<String>, GatewayError> {
    match auth_ref {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .ok()
            .filter(|v| !v.is_empty())
            .map(Some)
            .ok_or_else(|| GatewayError::AuthMissing(var.to_string())),
    }
}

fn post_json(agent: &ureq::Agent, endpoint: &str, token: Option<&str>, body: &Value) -> Result<Value, GatewayError> {
    let transport = |detail: String| GatewayError::Transport {
        endpoint: endpoint.to_string(),
        detail,
    };
    let mut req = agent.post(endpoint).header("Content-Type", "application/json");
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    let mut resp = req.send(body.to_string()).map_err(|e| transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(|e| transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        let snippet: String = text.chars().take(200).collect();
        return Err(transport(format!("HTTP {status}: {snippet}")));
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::ProtocolMismatch(format!("response is not JSON: {e}")))
}

/// Completions endpoint used in echo mode: `max_tokens: 0, echo: true`
/// returns the prompt's own tokens with their logprobs.
pub struct HttpLogprob {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    token: Option<String>,
}

impl HttpLogprob {
    pub fn new(endpoint: &str, model: &str, auth_ref: Option<&str>, timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            agent: agent(timeout),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            token: credential(auth_ref)?,
        })
    }

    fn echo(&self, text: &str) -> Result<Vec<TokenScore>, GatewayError> {
        let body = json!({
            "model": self.model,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": true,
            "temperature": 0.0,
        });
        let resp = post_json(&self.agent, &self.endpoint, self.token.as_deref(), &body)?;
        parse_echo(&resp, text)
    }
}

/// Turn an echo response into token scores over `text`.
///
/// `text_offset` entries count Unicode scalar values from the start of the
/// prompt and are converted to byte offsets; a token ends where the next
/// begins. A null logprob (usually the first token) marks the token
/// missing.
pub fn parse_echo(resp: &Value, text: &str) -> Result<Vec<TokenScore>, GatewayError> {
    let bad = |m: &str| GatewayError::ProtocolMismatch(m.to_string());
    let lp = resp
        .pointer("/choices/0/logprobs")
        .ok_or_else(|| bad("missing choices[0].logprobs"))?;
    let tokens = lp.get("tokens").and_then(Value::as_array).ok_or_else(|| bad("missing logprobs.tokens"))?;
    let logprobs = lp
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing logprobs.token_logprobs"))?;
    let offsets = lp
        .get("text_offset")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing logprobs.text_offset"))?;
    if tokens.len() != logprobs.len() || tokens.len() != offsets.len() {
        return Err(GatewayError::ProtocolMismatch(format!(
            "{} tokens, {} logprobs, {} offsets",
            tokens.len(),
            logprobs.len(),
            offsets.len()
        )));
    }
    if let Some(echoed) = resp.pointer("/choices/0/text").and_then(Value::as_str) {
        if !echoed.starts_with(text) {
            return Err(bad("echoed text differs from the prompt"));
        }
    }
    if tokens.is_empty() && !text.is_empty() {
        return Err(bad("no tokens returned for nonempty text"));
    }

    // Scalar-value index → byte index.
    let mut byte_at: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    byte_at.push(text.len());
    let n_chars = byte_at.len() - 1;

    let mut starts = Vec::with_capacity(offsets.len());
    for o in offsets {
        let c = o.as_u64().ok_or_else(|| bad("text_offset entry is not an integer"))? as usize;
        if c > n_chars {
            return Err(GatewayError::ProtocolMismatch(format!(
                "text_offset {c} beyond the {n_chars}-character prompt"
            )));
        }
        starts.push(byte_at[c]);
    }
    if starts.first().is_some_and(|&s| s != 0) {
        return Err(bad("first token does not start the prompt"));
    }
    let mut out = Vec::with_capacity(tokens.len());
    for i in 0..tokens.len() {
        let start = starts[i];
        let end = starts.get(i + 1).copied().unwrap_or(text.len());
        if end < start {
            return Err(bad("text_offset is not increasing"));
        }
        let token_text = &text[start..end];
        match &logprobs[i] {
            Value::Null => out.push(TokenScore::unscored(token_text, (start, end))),
            v => {
                let x = v.as_f64().ok_or_else(|| bad("token logprob is not a number"))?;
                out.push(TokenScore::scored(token_text, x, (start, end)));
            }
        }
    }
    Ok(out)
}

impl LogprobBackend for HttpLogprob {
    fn tokenize(&self, text: &str) -> Result<Vec<Span>, GatewayError> {
        Ok(self
            .echo(text)?
            .into_iter()
            .map(|t| Span {
                start: t.byte_span.0,
                end: t.byte_span.1,
            })
            .collect())
    }

    fn score_segment(&self, segment: &str) -> Result<Vec<TokenScore>, GatewayError> {
        self.echo(segment)
    }
}

/// Chat-completions endpoint.
pub struct HttpChat {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    token: Option<String>,
}

impl HttpChat {
    pub fn new(endpoint: &str, model: &str, auth_ref: Option<&str>, timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            agent: agent(timeout),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            token: credential(auth_ref)?,
        })
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let resp = post_json(&self.agent, &self.endpoint, self.token.as_deref(), &body)?;
        let msg = resp
            .pointer("/choices/0/message")
            .ok_or_else(|| GatewayError::ProtocolMismatch("missing choices[0].message".into()))?;
        Ok(msg.get("content").and_then(Value::as_str).unwrap_or("").to_string())
    }
}

/// Counting semaphore.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn enter(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// A backend with at most `cap` calls in flight.
pub struct Throttled<B: ?Sized> {
    gate: Gate,
    inner: Arc<B>,
}

impl<B: ?Sized> Throttled<B> {
    pub fn new(inner: Arc<B>, cap: usize) -> Self {
        Self {
            gate: Gate {
                free: Mutex::new(cap.max(1)),
                cv: Condvar::new(),
            },
            inner,
        }
    }
}

impl<B: LogprobBackend + ?Sized> LogprobBackend for Throttled<B> {
    fn tokenize(&self, text: &str) -> Result<Vec<Span>, GatewayError> {
        let _p = self.gate.enter();
        self.inner.tokenize(text)
    }

    fn score_segment(&self, segment: &str) -> Result<Vec<TokenScore>, GatewayError> {
        let _p = self.gate.enter();
        self.inner.score_segment(segment)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Throttled<B> {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, GatewayError> {
        let _p = self.gate.enter();
        self.inner.complete(prompt, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn echo_with_null_first_token() {
        let resp = json!({"choices": [{"text": "héllo world", "logprobs": {
            "tokens": ["hé", "llo", " world"],
            "token_logprobs": [null, -1.5, -0.25],
            "text_offset": [0, 2, 5]
        }}]});
        let t = parse_echo(&resp, "héllo world").unwrap();
        assert_eq!(t.len(), 3);
        assert!(t[0].missing);
        assert_eq!(t[0].byte_span, (0, 3));
        assert_eq!(t[1].byte_span, (3, 6));
        assert_eq!(t[2].token_text, " world");
        assert_eq!(t[2].logprob_nats, -0.25);
    }

    #[test]
    fn echo_mismatches() {
        let counts = json!({"choices": [{"logprobs": {"tokens": ["a", "b"], "token_logprobs": [null], "text_offset": [0, 1]}}]});
        assert!(matches!(parse_echo(&counts, "ab"), Err(GatewayError::ProtocolMismatch(_))));
        let beyond = json!({"choices": [{"logprobs": {"tokens": ["a"], "token_logprobs": [-1.0], "text_offset": [9]}}]});
        assert!(parse_echo(&beyond, "ab").is_err());
        let other = json!({"choices": [{"text": "zz", "logprobs": {"tokens": ["a"], "token_logprobs": [-1.0], "text_offset": [0]}}]});
        assert!(parse_echo(&other, "ab").is_err());
    }

    #[test]
    fn missing_credential() {
        let r = HttpChat::new("http://127.0.0.1:9", "m", Some("TEMPORA_TEST_UNSET_VAR"), Duration::from_secs(1));
        assert!(matches!(r, Err(GatewayError::AuthMissing(v)) if v == "TEMPORA_TEST_UNSET_VAR"));
    }

    #[test]
    fn unreachable_endpoint_names_it() {
        let chat = HttpChat::new("http://127.0.0.1:9/v1/chat", "m", None, Duration::from_secs(2)).unwrap();
        match chat.complete("hi", &CompletionParams::default()) {
            Err(GatewayError::Transport { endpoint, .. }) => assert_eq!(endpoint, "http://127.0.0.1:9/v1/chat"),
            other => panic!("unexpected {other:?}"),
        }
    }

    struct Probe {
        now: AtomicUsize,
        peak: AtomicUsize,
    }

    impl ChatBackend for Probe {
        fn complete(&self, _: &str, _: &CompletionParams) -> Result<String, GatewayError> {
            let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(n, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(10));
            self.now.fetch_sub(1, Ordering::SeqCst);
            Ok(String::new())
        }
    }

    #[test]
    fn in_flight_cap() {
        let probe = Arc::new(Probe {
            now: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let t = Throttled::new(Arc::clone(&probe), 2);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| t.complete("", &CompletionParams::default()).unwrap());
            }
        });
        assert!(probe.peak.load(Ordering::SeqCst) <= 2);
    }
}
