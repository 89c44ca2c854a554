use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GroundingError;

pub trait LlmClient: Sync {
    /// Returns the model's reply to `prompt`. `instruction` is the operator
    /// text embedded in it, for clients keyed on the instruction alone.
    fn complete(&self, instruction: &str, prompt: &str) -> Result<String, GroundingError>;
}

/// Lowercase hex SHA-256 of the prompt.
pub fn prompt_hash(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Canned replies keyed by instruction.
#[derive(Clone, Debug, Default)]
pub struct MockClient {
    pub responses: BTreeMap<String, String>,
}

impl MockClient {
    pub fn new<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        MockClient { responses: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect() }
    }
}

impl LlmClient for MockClient {
    fn complete(&self, instruction: &str, _prompt: &str) -> Result<String, GroundingError> {
        self.responses.get(instruction).cloned().ok_or_else(|| GroundingError::MissingFixture(instruction.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub prompt_hash: String,
    pub response: String,
}

/// Replies looked up by prompt hash in a recorded cassette.
#[derive(Clone, Debug, Default)]
pub struct ReplayClient {
    entries: HashMap<String, String>,
}

impl ReplayClient {
    pub fn from_entries(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        ReplayClient { entries: entries.into_iter().map(|e| (e.prompt_hash, e.response)).collect() }
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, GroundingError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: CassetteEntry = serde_json::from_str(line)
                .map_err(|e| GroundingError::Cassette { path: path.to_string(), message: format!("line {}: {e}", i + 1) })?;
            entries.push(e);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn load(path: &Path) -> Result<Self, GroundingError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| GroundingError::Cassette { path: name.clone(), message: e.to_string() })?;
        Self::parse(&text, &name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl LlmClient for ReplayClient {
    fn complete(&self, _instruction: &str, prompt: &str) -> Result<String, GroundingError> {
        let h = prompt_hash(prompt);
        self.entries.get(&h).cloned().ok_or(GroundingError::MissingFixture(h))
    }
}

/// Forwards to an inner client and keeps every exchange for a cassette.
pub struct RecordingClient<C> {
    inner: C,
    recorded: Mutex<BTreeMap<String, String>>,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        RecordingClient { inner, recorded: Mutex::new(BTreeMap::new()) }
    }

    /// Entries sorted by hash, so the cassette does not depend on call order.
    pub fn entries(&self) -> Vec<CassetteEntry> {
        let map = self.recorded.lock().expect("recorder lock");
        map.iter().map(|(h, r)| CassetteEntry { prompt_hash: h.clone(), response: r.clone() }).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), GroundingError> {
        let err = |e: std::io::Error| GroundingError::Cassette { path: path.display().to_string(), message: e.to_string() };
        let mut f = std::fs::File::create(path).map_err(err)?;
        for e in self.entries() {
            writeln!(f, "{}", serde_json::to_string(&e).expect("entry serializes")).map_err(err)?;
        }
        Ok(())
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn complete(&self, instruction: &str, prompt: &str) -> Result<String, GroundingError> {
        let reply = self.inner.complete(instruction, prompt)?;
        self.recorded.lock().expect("recorder lock").insert(prompt_hash(prompt), reply.clone());
        Ok(reply)
    }
}

pub const API_KEY_VAR: &str = "MRSG_LLM_API_KEY";
pub const BASE_URL_VAR: &str = "MRSG_LLM_BASE_URL";
pub const MODEL_VAR: &str = "MRSG_LLM_MODEL";

/// Chat-completion client for an OpenAI-compatible HTTP endpoint.
#[derive(Clone, Debug)]
pub struct LiveClient {
    pub base_url: String,
    pub model: String,
    api_key: String,
    pub timeout: Duration,
}

impl LiveClient {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        LiveClient { base_url: base_url.into(), model: model.into(), api_key: api_key.into(), timeout: Duration::from_secs(120) }
    }

    /// Reads the key, base URL and model from the environment.
    pub fn from_env() -> Result<Self, GroundingError> {
        let key = std::env::var(API_KEY_VAR)
            .map_err(|_| GroundingError::Transport { message: format!("{API_KEY_VAR} is not set"), retriable: false })?;
        let base = std::env::var(BASE_URL_VAR).unwrap_or_else(|_| "https://api.openai.com/v1".into());
        let model = std::env::var(MODEL_VAR).unwrap_or_else(|_| "gpt-4.1".into());
        Ok(Self::new(base, model, key))
    }
}

impl LlmClient for LiveClient {
    fn complete(&self, _instruction: &str, prompt: &str) -> Result<String, GroundingError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        log::debug!("request to {url}: {body}");
        let reply = ureq::post(&url)
            .timeout(self.timeout)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let reply: serde_json::Value = match reply {
            Ok(r) => r.into_json().map_err(|e| GroundingError::Transport { message: e.to_string(), retriable: true })?,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                log::debug!("response {code}: {text}");
                return Err(GroundingError::Transport {
                    message: format!("HTTP {code}: {text}"),
                    retriable: code == 429 || code >= 500,
                });
            }
            Err(e) => return Err(GroundingError::Transport { message: e.to_string(), retriable: true }),
        };
        log::debug!("response: {reply}");
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GroundingError::Transport { message: format!("no message content in {reply}"), retriable: false })
    }
}
