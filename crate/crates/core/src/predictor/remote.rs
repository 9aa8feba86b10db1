//! OpenAI-compatible chat-completions client.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{PredictError, PromptBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub request_timeout_ms: u64,
    pub max_retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_base_ms: u64,
    pub max_concurrent: usize,
    pub temperature: f64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            request_timeout_ms: 60_000,
            max_retries: 3,
            backoff_base_ms: 500,
            max_concurrent: 4,
            temperature: 0.0,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Semaphore {
        Semaphore {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(PredictError),
}

pub struct RemoteClient {
    config: RemoteConfig,
    http: Client,
    slots: Semaphore,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<RemoteClient, PredictError> {
        let http = Client::builder()
            .timeout(Duration::from_millis(config.request_timeout_ms))
            .build()
            .map_err(|e| PredictError::Transport(e.to_string()))?;
        Ok(RemoteClient {
            slots: Semaphore::new(config.max_concurrent),
            config,
            http,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Sends one request and returns the first choice's message content.
    pub fn complete(&self, prompt: &PromptBundle) -> Result<String, PredictError> {
        let key = std::env::var(&self.config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| {
                PredictError::Auth(format!(
                    "environment variable {} is not set",
                    self.config.api_key_env
                ))
            })?;
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": self.config.temperature,
        });

        let _permit = self.slots.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let delay = self
                    .config
                    .backoff_base_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&key, &body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(PredictError::Transport(format!(
            "giving up after {} attempts: {last}",
            self.config.max_retries + 1
        )))
    }

    fn attempt(&self, key: &str, body: &serde_json::Value) -> Attempt {
        let resp = match self
            .http
            .post(&self.config.endpoint)
            .bearer_auth(key)
            .json(body)
            .send()
        {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Attempt::Fail(PredictError::Auth(format!("server answered {status}")));
        }
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Attempt::Retry(format!("server answered {status}"));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Attempt::Fail(PredictError::Transport(format!(
                "server answered {status}: {text}"
            )));
        }
        match resp.json::<Completion>() {
            Ok(c) => match c.choices.into_iter().next().and_then(|c| c.message.content) {
                Some(text) => Attempt::Done(text),
                None => Attempt::Fail(PredictError::Transport(
                    "response has no message content".into(),
                )),
            },
            Err(e) => Attempt::Fail(PredictError::Transport(format!("malformed response: {e}"))),
        }
    }
}
