//! HTTP language-model backend: a thin blocking client speaking one JSON
//! schema, with bounded retries and an optional JSONL transcript log.
//!
//! Configuration comes from the environment:
//! - `SEQPLAN_LLM_URL`: completion endpoint (required).
//! - `SEQPLAN_LLM_TOKEN`: bearer token (optional).
//! - `SEQPLAN_LLM_LOG`: path to append a JSONL transcript to (optional).

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LlmBackend, LlmError};

const TIMEOUT: Duration = Duration::from_secs(30);
const ATTEMPTS: u32 = 3;

/// Request schema shared by completion and scoring calls. Scoring sets
/// `continuation`; completion leaves it empty. Temperature is always zero so
/// repeated runs are as reproducible as the serving stack allows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LlmRequest {
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub continuation: Option<String>,
    pub max_tokens: usize,
    pub temperature: f64,
}

/// Response schema: completions fill `text`, scoring fills `logprob` (the
/// summed token log-probability of the continuation).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LlmResponse {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub logprob: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TranscriptEntry<'a> {
    request: &'a LlmRequest,
    response: &'a LlmResponse,
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    token: Option<String>,
    log: Mutex<Option<PathBuf>>,
}

impl HttpBackend {
    pub fn new(url: &str, token: Option<&str>, log: Option<PathBuf>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(TIMEOUT)
            .build()
            .expect("client construction cannot fail with static options");
        Self {
            client,
            url: url.to_string(),
            token: token.map(str::to_string),
            log: Mutex::new(log),
        }
    }

    /// Build from `SEQPLAN_LLM_*` environment variables.
    pub fn from_env() -> Result<Self, LlmError> {
        let url = std::env::var("SEQPLAN_LLM_URL").map_err(|_| LlmError::Backend {
            message: "SEQPLAN_LLM_URL is not set".to_string(),
            candidate: None,
        })?;
        let token = std::env::var("SEQPLAN_LLM_TOKEN").ok();
        let log = std::env::var("SEQPLAN_LLM_LOG").ok().map(PathBuf::from);
        Ok(Self::new(&url, token.as_deref(), log))
    }

    fn call(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let mut last_error = String::new();
        for attempt in 0..ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 << attempt));
            }
            let mut builder = self.client.post(&self.url).json(request);
            if let Some(token) = &self.token {
                builder = builder.bearer_auth(token);
            }
            match builder.send().and_then(|r| r.error_for_status()) {
                Ok(response) => match response.json::<LlmResponse>() {
                    Ok(parsed) => {
                        self.log_exchange(request, &parsed);
                        return Ok(parsed);
                    }
                    Err(e) => last_error = format!("bad response body: {e}"),
                },
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(LlmError::Backend {
            message: format!("{} attempts failed, last: {last_error}", ATTEMPTS),
            candidate: None,
        })
    }

    fn log_exchange(&self, request: &LlmRequest, response: &LlmResponse) {
        let guard = self.log.lock().expect("transcript lock");
        let Some(path) = guard.as_ref() else { return };
        let entry = TranscriptEntry { request, response };
        if let Ok(line) = serde_json::to_string(&entry) {
            if let Ok(mut file) = OpenOptions::new().create(true).append(true).open(path) {
                let _ = writeln!(file, "{line}");
            }
        }
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, LlmError> {
        let request = LlmRequest {
            prompt: prompt.to_string(),
            continuation: None,
            max_tokens,
            temperature: 0.0,
        };
        let response = self.call(&request)?;
        response.text.ok_or_else(|| LlmError::Backend {
            message: "response carried no text".to_string(),
            candidate: None,
        })
    }

    fn score(&self, prompt: &str, continuation: &str) -> Result<f64, LlmError> {
        let request = LlmRequest {
            prompt: prompt.to_string(),
            continuation: Some(continuation.to_string()),
            max_tokens: 0,
            temperature: 0.0,
        };
        let response = self.call(&request)?;
        response.logprob.ok_or_else(|| LlmError::Backend {
            message: "response carried no logprob".to_string(),
            candidate: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_schema_is_stable() {
        let req = LlmRequest {
            prompt: "p".to_string(),
            continuation: None,
            max_tokens: 64,
            temperature: 0.0,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"prompt":"p","max_tokens":64,"temperature":0.0}"#
        );
        let req = LlmRequest {
            continuation: Some("pick(red box)".to_string()),
            ..req
        };
        assert!(serde_json::to_string(&req).unwrap().contains("continuation"));
    }

    #[test]
    fn response_fields_are_optional() {
        let r: LlmResponse = serde_json::from_str(r#"{"text":"hi"}"#).unwrap();
        assert_eq!(r.text.as_deref(), Some("hi"));
        assert_eq!(r.logprob, None);
        let r: LlmResponse = serde_json::from_str(r#"{"logprob":-1.5}"#).unwrap();
        assert_eq!(r.logprob, Some(-1.5));
    }

    #[test]
    fn from_env_requires_url() {
        std::env::remove_var("SEQPLAN_LLM_URL");
        assert!(HttpBackend::from_env().is_err());
    }
}
