//! Transcription endpoints: local greedy decoding, a scriptable stub, and
//! a rate-limited remote client with retry.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::audio::{wav_bytes, Waveform};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Transcript};

/// Retry knobs for the remote client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// First backoff; doubles each retry.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_ms: 100 }
    }
}

/// Minimal HTTP abstraction so the remote client can be exercised without
/// sockets.
pub trait HttpTransport: Send + Sync {
    fn post(&self, url: &str, bearer: &str, body: &[u8], timeout: Duration) -> Result<HttpResponse>;
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

/// Production transport over a blocking HTTP client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post(&self, url: &str, bearer: &str, body: &[u8], timeout: Duration) -> Result<HttpResponse> {
        let response = self
            .client
            .post(url)
            .bearer_auth(bearer)
            .header("content-type", "audio/wav")
            .timeout(timeout)
            .body(body.to_vec())
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    Error::Timeout { attempts: 1, reason: e.to_string() }
                } else {
                    Error::Transport(e.to_string())
                }
            })?;
        let status = response.status().as_u16();
        let body = response
            .bytes()
            .map_err(|e| Error::Transport(e.to_string()))?
            .to_vec();
        Ok(HttpResponse { status, body })
    }
}

/// Minimum-interval limiter: enforces `rate_per_s` by spacing requests.
pub struct RateLimiter {
    interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(rate_per_s: f64) -> Result<Self> {
        if rate_per_s <= 0.0 {
            return Err(Error::Configuration("rate limit must be positive".into()));
        }
        Ok(Self {
            interval: Duration::from_secs_f64(1.0 / rate_per_s),
            last: Mutex::new(None),
        })
    }

    /// Blocks until a request slot is available, then claims it.
    pub fn acquire(&self) {
        let mut last = self.last.lock().unwrap();
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.interval {
                std::thread::sleep(self.interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

/// Expected response body of the remote transcription service.
#[derive(Debug, Deserialize)]
struct RemoteResponseBody {
    transcript: String,
}

/// A transcript plus bookkeeping about how it was obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscribeOutcome {
    pub transcript: Transcript,
    pub retries: u32,
}

/// Remote speech-to-text client: POSTs WAV bytes, honors a rate limit, and
/// retries retryable failures with exponential backoff.
pub struct RemoteTranscriber {
    url: String,
    credential: String,
    rate: RateLimiter,
    retry: RetryPolicy,
    timeout: Duration,
    transport: Box<dyn HttpTransport>,
}

impl RemoteTranscriber {
    /// Resolves the credential from the named environment variable before
    /// any request is issued.
    pub fn new(
        url: &str,
        credential_env: &str,
        rate_per_s: f64,
        retry: RetryPolicy,
        transport: Box<dyn HttpTransport>,
    ) -> Result<Self> {
        let credential = std::env::var(credential_env).map_err(|_| {
            Error::Configuration(format!(
                "credential environment variable {credential_env} is not set"
            ))
        })?;
        if retry.max_attempts == 0 {
            return Err(Error::Configuration("max_attempts must be >= 1".into()));
        }
        Ok(Self {
            url: url.to_string(),
            credential,
            rate: RateLimiter::new(rate_per_s)?,
            retry,
            timeout: Duration::from_secs(30),
            transport,
        })
    }

    pub fn transcribe(&self, w: &Waveform) -> Result<TranscribeOutcome> {
        let body = wav_bytes(w);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.rate.acquire();
            let outcome = self
                .transport
                .post(&self.url, &self.credential, &body, self.timeout);
            match outcome {
                Ok(resp) => match resp.status {
                    200 => {
                        let parsed: RemoteResponseBody = serde_json::from_slice(&resp.body)
                            .map_err(|e| Error::MalformedResponse(e.to_string()))?;
                        return Ok(TranscribeOutcome {
                            transcript: Transcript::parse(&parsed.transcript),
                            retries: attempt - 1,
                        });
                    }
                    401 | 403 => return Err(Error::Auth(resp.status)),
                    429 | 500..=599 => {
                        if attempt >= self.retry.max_attempts {
                            return Err(Error::Timeout {
                                attempts: attempt,
                                reason: format!("HTTP {} persisted", resp.status),
                            });
                        }
                    }
                    other => {
                        return Err(Error::Transport(format!("unexpected HTTP status {other}")))
                    }
                },
                Err(Error::Timeout { reason, .. }) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(Error::Timeout { attempts: attempt, reason });
                    }
                }
                Err(e) => return Err(e),
            }
            let backoff = self.retry.backoff_ms.saturating_mul(1 << (attempt - 1));
            std::thread::sleep(Duration::from_millis(backoff));
        }
    }
}

/// Canned transcriber for tests and offline runs; cycles through its
/// script.
pub struct StubTranscriber {
    script: Vec<Transcript>,
    cursor: Mutex<usize>,
}

impl StubTranscriber {
    pub fn new(script: Vec<Transcript>) -> Result<Self> {
        if script.is_empty() {
            return Err(Error::Configuration("stub needs at least one transcript".into()));
        }
        Ok(Self { script, cursor: Mutex::new(0) })
    }

    pub fn transcribe(&self) -> TranscribeOutcome {
        let mut cursor = self.cursor.lock().unwrap();
        let t = self.script[*cursor % self.script.len()].clone();
        *cursor += 1;
        TranscribeOutcome { transcript: t, retries: 0 }
    }
}

/// A transcription target: a local model, a canned stub, or a remote API.
pub enum Transcriber {
    Local(Box<ModelParams>),
    Stub(StubTranscriber),
    Remote(RemoteTranscriber),
}

impl Transcriber {
    pub fn local(params: ModelParams) -> Self {
        Transcriber::Local(Box::new(params))
    }

    pub fn transcribe(&self, w: &Waveform) -> Result<TranscribeOutcome> {
        match self {
            Transcriber::Local(params) => Ok(TranscribeOutcome {
                transcript: params.decode_greedy(w)?,
                retries: 0,
            }),
            Transcriber::Stub(stub) => Ok(stub.transcribe()),
            Transcriber::Remote(remote) => remote.transcribe(w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Scripted transport: pops queued responses and records call times.
    struct ScriptedTransport {
        responses: Mutex<Vec<Result<HttpResponse>>>,
        calls: Arc<AtomicUsize>,
        times: Mutex<Vec<Instant>>,
    }

    impl ScriptedTransport {
        fn new(mut responses: Vec<Result<HttpResponse>>) -> Self {
            responses.reverse();
            Self {
                responses: Mutex::new(responses),
                calls: Arc::new(AtomicUsize::new(0)),
                times: Mutex::new(Vec::new()),
            }
        }
    }

    impl HttpTransport for ScriptedTransport {
        fn post(&self, _url: &str, _bearer: &str, _body: &[u8], _t: Duration) -> Result<HttpResponse> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.times.lock().unwrap().push(Instant::now());
            self.responses
                .lock()
                .unwrap()
                .pop()
                .unwrap_or(Ok(HttpResponse { status: 200, body: b"{\"transcript\":\"\"}".to_vec() }))
        }
    }

    fn ok_body(text: &str) -> HttpResponse {
        HttpResponse {
            status: 200,
            body: format!("{{\"transcript\":\"{text}\"}}").into_bytes(),
        }
    }

    fn test_wave() -> Waveform {
        Waveform::new(vec![0.1; 600]).unwrap()
    }

    #[test]
    fn stub_returns_canned_transcript() {
        let stub = StubTranscriber::new(vec![Transcript::parse("arc bay")]).unwrap();
        let out = stub.transcribe();
        assert_eq!(out.transcript, Transcript::parse("arc bay"));
        assert_eq!(out.retries, 0);
    }

    #[test]
    fn retry_on_429_then_success() {
        std::env::set_var("ADVOX_TEST_KEY_RETRY", "secret");
        let transport = ScriptedTransport::new(vec![
            Ok(HttpResponse { status: 429, body: Vec::new() }),
            Ok(ok_body("arc bay")),
        ]);
        let calls = transport.calls.clone();
        let remote = RemoteTranscriber::new(
            "http://localhost/never-contacted",
            "ADVOX_TEST_KEY_RETRY",
            1000.0,
            RetryPolicy { max_attempts: 3, backoff_ms: 1 },
            Box::new(transport),
        )
        .unwrap();
        let out = remote.transcribe(&test_wave()).unwrap();
        assert_eq!(out.transcript, Transcript::parse("arc bay"));
        assert_eq!(out.retries, 1);
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn missing_credential_fails_before_any_request() {
        std::env::remove_var("ADVOX_TEST_KEY_MISSING");
        let transport = ScriptedTransport::new(vec![Ok(ok_body("x"))]);
        let calls = transport.calls.clone();
        let err = RemoteTranscriber::new(
            "http://localhost/x",
            "ADVOX_TEST_KEY_MISSING",
            10.0,
            RetryPolicy::default(),
            Box::new(transport),
        )
        .err()
        .unwrap();
        assert!(matches!(err, Error::Configuration(_)));
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        std::env::set_var("ADVOX_TEST_KEY_AUTH", "secret");
        let transport = ScriptedTransport::new(vec![
            Ok(HttpResponse { status: 401, body: Vec::new() }),
            Ok(ok_body("never")),
        ]);
        let calls = transport.calls.clone();
        let remote = RemoteTranscriber::new(
            "http://localhost/x",
            "ADVOX_TEST_KEY_AUTH",
            1000.0,
            RetryPolicy { max_attempts: 3, backoff_ms: 1 },
            Box::new(transport),
        )
        .unwrap();
        assert!(matches!(remote.transcribe(&test_wave()), Err(Error::Auth(401))));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn exhausted_retries_is_timeout() {
        std::env::set_var("ADVOX_TEST_KEY_EXHAUST", "secret");
        let transport = ScriptedTransport::new(vec![
            Ok(HttpResponse { status: 503, body: Vec::new() }),
            Ok(HttpResponse { status: 503, body: Vec::new() }),
        ]);
        let remote = RemoteTranscriber::new(
            "http://localhost/x",
            "ADVOX_TEST_KEY_EXHAUST",
            1000.0,
            RetryPolicy { max_attempts: 2, backoff_ms: 1 },
            Box::new(transport),
        )
        .unwrap();
        assert!(matches!(
            remote.transcribe(&test_wave()),
            Err(Error::Timeout { attempts: 2, .. })
        ));
    }

    #[test]
    fn malformed_body_is_a_distinct_error() {
        std::env::set_var("ADVOX_TEST_KEY_BAD", "secret");
        let transport = ScriptedTransport::new(vec![Ok(HttpResponse {
            status: 200,
            body: b"not json".to_vec(),
        })]);
        let remote = RemoteTranscriber::new(
            "http://localhost/x",
            "ADVOX_TEST_KEY_BAD",
            1000.0,
            RetryPolicy::default(),
            Box::new(transport),
        )
        .unwrap();
        assert!(matches!(
            remote.transcribe(&test_wave()),
            Err(Error::MalformedResponse(_))
        ));
    }

    #[test]
    fn rate_limit_spaces_requests() {
        std::env::set_var("ADVOX_TEST_KEY_RATE", "secret");
        let transport = ScriptedTransport::new(
            (0..4).map(|_| Ok(ok_body("arc"))).collect(),
        );
        let times_handle = {
            // Keep a second handle on the times log through raw pointer-free
            // sharing: wrap the transport in Arc and use a trait-object Box
            // around a forwarding shim.
            struct Fwd(Arc<ScriptedTransport>);
            impl HttpTransport for Fwd {
                fn post(&self, u: &str, b: &str, body: &[u8], t: Duration) -> Result<HttpResponse> {
                    self.0.post(u, b, body, t)
                }
            }
            let shared = Arc::new(transport);
            let remote = RemoteTranscriber::new(
                "http://localhost/x",
                "ADVOX_TEST_KEY_RATE",
                50.0, // 20 ms spacing
                RetryPolicy::default(),
                Box::new(Fwd(shared.clone())),
            )
            .unwrap();
            for _ in 0..4 {
                remote.transcribe(&test_wave()).unwrap();
            }
            shared
        };
        let times = times_handle.times.lock().unwrap();
        assert_eq!(times.len(), 4);
        for pair in times.windows(2) {
            let gap = pair[1].duration_since(pair[0]);
            assert!(
                gap >= Duration::from_millis(19),
                "requests only {gap:?} apart"
            );
        }
    }
}
