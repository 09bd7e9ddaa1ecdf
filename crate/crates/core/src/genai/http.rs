use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::client::{Completion, Message, ModelClient, Prompt, Usage};
use super::GenaiError;

pub const API_BASE_ENV: &str = "SPECREPAIR_API_BASE";
pub const MODEL_ENV: &str = "SPECREPAIR_MODEL";
pub const API_KEY_ENV: &str = "SPECREPAIR_API_KEY";
pub const PRICE_TABLE_ENV: &str = "SPECREPAIR_PRICE_TABLE";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    /// Base URL; `/chat/completions` is appended.
    pub api_base: String,
    pub model: String,
    pub api_key: Option<String>,
    pub top_p: f64,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub timeout: Duration,
}

impl HttpSettings {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into(),
            model: model.into(),
            api_key: None,
            top_p: 0.95,
            temperature: None,
            max_tokens: None,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn from_env() -> Result<Self, GenaiError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        let base = var(API_BASE_ENV)
            .ok_or_else(|| GenaiError::Config(format!("{API_BASE_ENV} is not set")))?;
        let model =
            var(MODEL_ENV).ok_or_else(|| GenaiError::Config(format!("{MODEL_ENV} is not set")))?;
        let mut s = Self::new(base, model);
        s.api_key = var(API_KEY_ENV);
        Ok(s)
    }
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    messages: &'a [Message],
    top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

/// Chat-completions client over blocking HTTP.
#[derive(Debug)]
pub struct HttpClient {
    settings: HttpSettings,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(settings: HttpSettings) -> Result<Self, GenaiError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| GenaiError::Config(e.to_string()))?;
        Ok(Self { settings, http })
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.settings.api_base.trim_end_matches('/')
        )
    }
}

fn parse_response(body: &Value) -> Result<Completion, GenaiError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GenaiError::Malformed("missing choices[0].message.content".into()))?;
    let count = |key: &str| {
        body.pointer(&format!("/usage/{key}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok(Completion {
        text: text.to_owned(),
        usage: Usage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
        },
    })
}

impl ModelClient for HttpClient {
    fn identity(&self) -> &str {
        &self.settings.model
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn complete(&self, prompt: &Prompt) -> Result<Completion, GenaiError> {
        let request = Request {
            model: &self.settings.model,
            messages: &prompt.messages,
            top_p: self.settings.top_p,
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
        };
        let mut builder = self.http.post(self.url()).json(&request);
        if let Some(key) = &self.settings.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| GenaiError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| GenaiError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GenaiError::Status {
                status: status.as_u16(),
                body: body.chars().take(500).collect(),
            });
        }
        let value: Value =
            serde_json::from_str(&body).map_err(|e| GenaiError::Malformed(e.to_string()))?;
        parse_response(&value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genai::{with_retries, PromptKind};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given (status, body) pairs one connection each and
    /// returns the request bodies it saw.
    fn serve(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (base, handle)
    }

    fn prompt() -> Prompt {
        Prompt {
            bug_id: "b".into(),
            kind: PromptKind::Patch,
            messages: vec![Message::system("sys"), Message::user("fix it")],
        }
    }

    #[test]
    fn round_trip_against_local_endpoint() {
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"```\nprint(1)\n```"}}],"usage":{"prompt_tokens":12,"completion_tokens":5}}"#;
        let (base, server) = serve(vec![(200, reply.to_owned())]);
        let mut settings = HttpSettings::new(base, "m-1");
        settings.api_key = Some("k".into());
        let client = HttpClient::new(settings).unwrap();
        let patch = client.generate_patch(&prompt()).unwrap();
        assert_eq!(patch.source.as_deref(), Some("print(1)\n"));
        assert_eq!(patch.usage.prompt_tokens, 12);
        assert_eq!(patch.usage.completion_tokens, 5);

        let sent: Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
        assert_eq!(sent["model"], "m-1");
        assert_eq!(sent["messages"][1]["role"], "user");
        assert_eq!(sent["top_p"], 0.95);
        assert!(sent.get("temperature").is_none());
    }

    #[test]
    fn server_errors_are_retried() {
        let ok = r#"{"choices":[{"message":{"content":"done"}}]}"#;
        let (base, server) = serve(vec![(503, "busy".into()), (200, ok.into())]);
        let client = HttpClient::new(HttpSettings::new(base, "m")).unwrap();
        let c = with_retries(2, || client.complete(&prompt())).unwrap();
        assert_eq!(c.text, "done");
        assert_eq!(c.usage, Usage::default());
        assert_eq!(server.join().unwrap().len(), 2);
    }

    #[test]
    fn client_errors_are_not_retryable() {
        let (base, server) = serve(vec![(400, "bad".into())]);
        let client = HttpClient::new(HttpSettings::new(base, "m")).unwrap();
        let err = with_retries(2, || client.complete(&prompt())).unwrap_err();
        assert!(matches!(err, GenaiError::Status { status: 400, .. }));
        server.join().unwrap();
    }
}
