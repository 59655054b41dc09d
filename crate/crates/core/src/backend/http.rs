use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{
    BackendConfig, BackendError, CompletionBackend, CompletionRequest, CompletionResponse,
};

const CHAT_PATH: &str = "v1/chat/completions";
const EXCERPT_CHARS: usize = 200;

/// OpenAI-compatible chat-completions client with bounded retries.
#[derive(Debug)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: reqwest::Url,
    api_key_env_var: Option<String>,
    max_retries: u32,
    backoff_base: Duration,
}

#[derive(Debug, Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(Result<CompletionResponse, BackendError>),
    Retry(BackendError),
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, String> {
        let base = config
            .base_url
            .as_deref()
            .ok_or_else(|| "http backend requires base_url".to_string())?;
        let mut base = reqwest::Url::parse(base).map_err(|e| format!("invalid base_url: {e}"))?;
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        let endpoint = base
            .join(CHAT_PATH)
            .map_err(|e| format!("invalid base_url: {e}"))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| format!("cannot build http client: {e}"))?;
        Ok(Self {
            client,
            endpoint,
            api_key_env_var: config.api_key_env_var.clone(),
            max_retries: config.max_retries,
            backoff_base: config.retry_backoff_base(),
        })
    }

    pub fn endpoint(&self) -> &reqwest::Url {
        &self.endpoint
    }

    fn api_key(&self) -> Option<String> {
        let var = self.api_key_env_var.as_deref()?;
        std::env::var(var).ok().filter(|k| !k.is_empty())
    }

    fn attempt(&self, body: &[u8], attempts: u32, start: Instant) -> Attempt {
        let mut builder = self
            .client
            .post(self.endpoint.clone())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(key) = self.api_key() {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout { attempts }),
            Err(e) => {
                return Attempt::Retry(BackendError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        let status = response.status();
        let text = match response.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout { attempts }),
            Err(e) => {
                return Attempt::Retry(BackendError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        if !status.is_success() {
            let err = BackendError::Status {
                status: status.as_u16(),
                attempts,
                body_excerpt: excerpt(&text),
            };
            return if status.is_server_error() {
                Attempt::Retry(err)
            } else {
                Attempt::Done(Err(err))
            };
        }
        Attempt::Done(parse_reply(&text, start.elapsed()))
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_CHARS).collect()
}

fn parse_reply(body: &str, latency: Duration) -> Result<CompletionResponse, BackendError> {
    let reply: ChatReply = serde_json::from_str(body).map_err(|e| BackendError::Protocol {
        message: e.to_string(),
        body_excerpt: excerpt(body),
    })?;
    let choice = reply
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol {
            message: "response has no choices".into(),
            body_excerpt: excerpt(body),
        })?;
    let text = choice.message.content.unwrap_or_default();
    if text.trim().is_empty() {
        return Err(BackendError::EmptyCompletion);
    }
    let usage = reply.usage.unwrap_or_default();
    Ok(CompletionResponse {
        text,
        prompt_tokens: usage.prompt_tokens,
        completion_tokens: usage.completion_tokens,
        latency,
    })
}

/// JSON body sent to the chat-completions endpoint. The system message is
/// omitted when the system prompt is empty.
pub(crate) fn request_body(request: &CompletionRequest) -> Vec<u8> {
    let mut messages = Vec::with_capacity(2);
    if !request.system_prompt.is_empty() {
        messages.push(ChatMessage {
            role: "system",
            content: &request.system_prompt,
        });
    }
    messages.push(ChatMessage {
        role: "user",
        content: &request.user_prompt,
    });
    serde_json::to_vec(&ChatBody {
        model: &request.model_name,
        messages,
        max_tokens: request.max_tokens,
        temperature: request.temperature,
    })
    .expect("chat body serializes")
}

impl CompletionBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.endpoint)
    }

    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let body = request_body(request);
        let start = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body, attempts, start) {
                Attempt::Done(result) => return result,
                Attempt::Retry(err) if attempts > self.max_retries => return Err(err),
                Attempt::Retry(err) => {
                    let delay = self
                        .backoff_base
                        .saturating_mul(1 << (attempts - 1).min(16));
                    warn!(
                        "attempt {attempts} to {} failed: {err}; retrying in {delay:?}",
                        self.endpoint
                    );
                    thread::sleep(delay);
                }
            }
            debug!("retrying request to {}", self.endpoint);
        }
    }
}
