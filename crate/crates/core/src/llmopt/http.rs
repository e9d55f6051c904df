//! Blocking client for chat-completions style HTTP endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::client::{LlmClient, LlmError};
use super::instruction::{split_system, InstructionStyle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct HttpChatClient {
    endpoint: String,
    model: String,
    temperature: f64,
    timeout: Duration,
    api_key: Option<String>,
    style: InstructionStyle,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(
        endpoint: String,
        model: String,
        temperature: f64,
        timeout: Duration,
        api_key: Option<String>,
        style: InstructionStyle,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint, model, temperature, timeout, api_key, style, agent }
    }

    /// Request body for `instruction`. Llama style sends the first paragraph
    /// as a system message.
    pub fn request_body(&self, instruction: &str) -> ChatRequest {
        let message = |role: &str, content: &str| ChatMessage {
            role: role.to_string(),
            content: content.to_string(),
        };
        let messages = match self.style {
            InstructionStyle::Gpt => vec![message("user", instruction)],
            InstructionStyle::Llama => {
                let (system, user) = split_system(instruction);
                vec![message("system", system), message("user", user)]
            }
        };
        ChatRequest { model: self.model.clone(), temperature: self.temperature, messages }
    }

    fn map_err(&self, e: ureq::Error) -> LlmError {
        match e {
            ureq::Error::Timeout(_) => LlmError::Timeout(self.timeout),
            other => LlmError::Transport(other.to_string()),
        }
    }
}

impl LlmClient for HttpChatClient {
    fn complete(&mut self, instruction: &str) -> Result<String, LlmError> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(self.request_body(instruction)).map_err(|e| self.map_err(e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(LlmError::Transport(format!("http status {status}: {body}")));
        }
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(|e| self.map_err(e))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Transport("response has no message content".into()))
    }
}
