use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::retry::{run_with_retry, AttemptError, TransientCause};
use super::{
    Backend, BackendEndpoint, BackendError, GenerateRequest, GenerateResponse, PredictRequest, PredictResponse,
    TrainRequest, TrainResponse,
};

/// Blocking JSON-over-HTTP client. Retries transport failures and
/// 502/503/504 responses; any other non-2xx status is returned as is.
pub struct HttpBackend {
    endpoint: BackendEndpoint,
    agent: ureq::Agent,
    attempts: AtomicU64,
}

impl HttpBackend {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, BackendError> {
        endpoint.validate()?;
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            endpoint,
            agent: config.into(),
            attempts: AtomicU64::new(0),
        })
    }

    /// Total HTTP attempts made by this client, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), path)
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = self.url(path);
        let payload = serde_json::to_string(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let (resp, attempts) = run_with_retry(&self.endpoint.retry, &url, |_| {
            self.attempts.fetch_add(1, Ordering::Relaxed);
            self.attempt(&url, path, &payload)
        })?;
        if attempts > 1 {
            log::info!("{url}: succeeded after {attempts} attempts");
        }
        Ok(resp)
    }

    fn attempt<Resp: DeserializeOwned>(&self, url: &str, path: &str, payload: &str) -> Result<Resp, AttemptError> {
        let mut req = self.agent.post(url).header("content-type", "application/json");
        if let Some(token) = &self.endpoint.auth_token {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(payload).map_err(classify)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(classify)?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| AttemptError::Fatal(BackendError::Protocol(format!("{url}: malformed response: {e}")))),
            502..=504 => Err(AttemptError::Transient(TransientCause::Unavailable(status))),
            400 | 422 if path == "/v1/train" => Err(AttemptError::Fatal(BackendError::Plan(text))),
            _ => Err(AttemptError::Fatal(BackendError::Rejected { status, message: text })),
        }
    }
}

fn classify(err: ureq::Error) -> AttemptError {
    match err {
        ureq::Error::Timeout(_) => AttemptError::Transient(TransientCause::Timeout),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => {
            AttemptError::Transient(TransientCause::Timeout)
        }
        ureq::Error::Io(e) => AttemptError::Transient(TransientCause::Connect(e.to_string())),
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            AttemptError::Transient(TransientCause::Connect(err.to_string()))
        }
        other => AttemptError::Fatal(BackendError::Protocol(other.to_string())),
    }
}

impl Backend for HttpBackend {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
        self.post("/v1/generate", req)
    }

    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, BackendError> {
        self.post("/v1/predict", req)
    }

    fn train(&self, req: &TrainRequest) -> Result<TrainResponse, BackendError> {
        self.post("/v1/train", req)
    }
}
