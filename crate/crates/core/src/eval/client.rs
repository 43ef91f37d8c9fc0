//! External scoring services: an LLM judge and a toxicity scorer.
//!
//! Wire contract for both: `POST` a JSON body `{"text": ...}`. The judge
//! answers `{"persuasiveness": p, "informativeness": i}`, the toxicity service
//! `{"toxicity": t}`, all in `[0, 1]`. The offline stubs replay recorded
//! responses and are what every test uses.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("no recorded response for this text")]
    NotRecorded,
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("transport: {0}")]
    Transport(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub persuasiveness: f64,
    pub informativeness: f64,
}

impl JudgeScores {
    fn checked(self) -> Result<Self, ClientError> {
        for v in [self.persuasiveness, self.informativeness] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ClientError::OutOfRange(v));
            }
        }
        Ok(self)
    }
}

pub trait JudgeClient: Send + Sync {
    fn judge(&self, text: &str) -> Result<JudgeScores, ClientError>;
}

pub trait ToxicityClient: Send + Sync {
    fn toxicity(&self, text: &str) -> Result<f64, ClientError>;
}

/// Replays recorded judge responses, falling back to a fixed default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StubJudge {
    pub recorded: HashMap<String, JudgeScores>,
    pub default: Option<JudgeScores>,
}

impl StubJudge {
    pub fn constant(persuasiveness: f64, informativeness: f64) -> Self {
        Self { recorded: HashMap::new(), default: Some(JudgeScores { persuasiveness, informativeness }) }
    }

    /// Lines of `{"text", "persuasiveness", "informativeness"}`.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, ClientError> {
        #[derive(Deserialize)]
        struct Line {
            text: String,
            #[serde(flatten)]
            scores: JudgeScores,
        }
        let mut recorded = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line).map_err(|e| ClientError::Malformed { line: n + 1, message: e.to_string() })?;
            recorded.insert(l.text, l.scores.checked()?);
        }
        Ok(Self { recorded, default: None })
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl JudgeClient for StubJudge {
    fn judge(&self, text: &str) -> Result<JudgeScores, ClientError> {
        self.recorded.get(text).copied().or(self.default).ok_or(ClientError::NotRecorded)
    }
}

/// Replays recorded toxicity scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StubToxicity {
    pub recorded: HashMap<String, f64>,
    pub default: Option<f64>,
}

impl StubToxicity {
    /// Lines of `{"text", "toxicity"}`.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, ClientError> {
        #[derive(Deserialize)]
        struct Line {
            text: String,
            toxicity: f64,
        }
        let mut recorded = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line).map_err(|e| ClientError::Malformed { line: n + 1, message: e.to_string() })?;
            if !(0.0..=1.0).contains(&l.toxicity) {
                return Err(ClientError::OutOfRange(l.toxicity));
            }
            recorded.insert(l.text, l.toxicity);
        }
        Ok(Self { recorded, default: None })
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl ToxicityClient for StubToxicity {
    fn toxicity(&self, text: &str) -> Result<f64, ClientError> {
        self.recorded.get(text).copied().or(self.default).ok_or(ClientError::NotRecorded)
    }
}

#[cfg(feature = "http")]
pub use http::{HttpJudge, HttpToxicity};

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde::Deserialize;

    use super::{ClientError, JudgeClient, JudgeScores, ToxicityClient};

    /// Environment variable holding a bearer token for the scoring services.
    pub const API_KEY_VAR: &str = "COUNTERSPEECH_API_KEY";

    fn agent(timeout: Duration) -> ureq::Agent {
        ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(true).build().into()
    }

    fn post<T: for<'de> Deserialize<'de>>(agent: &ureq::Agent, endpoint: &str, text: &str) -> Result<T, ClientError> {
        let mut req = agent.post(endpoint);
        if let Ok(key) = std::env::var(API_KEY_VAR) {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req.send_json(serde_json::json!({ "text": text })).map_err(map_err)?;
        resp.into_body().read_json::<T>().map_err(map_err)
    }

    fn map_err(e: ureq::Error) -> ClientError {
        match e {
            ureq::Error::Timeout(_) => ClientError::Timeout,
            other => ClientError::Transport(other.to_string()),
        }
    }

    pub struct HttpJudge {
        endpoint: String,
        agent: ureq::Agent,
    }

    impl HttpJudge {
        pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
            Self { endpoint: endpoint.into(), agent: agent(timeout) }
        }
    }

    impl JudgeClient for HttpJudge {
        fn judge(&self, text: &str) -> Result<JudgeScores, ClientError> {
            post::<JudgeScores>(&self.agent, &self.endpoint, text)?.checked()
        }
    }

    pub struct HttpToxicity {
        endpoint: String,
        agent: ureq::Agent,
    }

    impl HttpToxicity {
        pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
            Self { endpoint: endpoint.into(), agent: agent(timeout) }
        }
    }

    impl ToxicityClient for HttpToxicity {
        fn toxicity(&self, text: &str) -> Result<f64, ClientError> {
            #[derive(Deserialize)]
            struct Resp {
                toxicity: f64,
            }
            let t = post::<Resp>(&self.agent, &self.endpoint, text)?.toxicity;
            if (0.0..=1.0).contains(&t) {
                Ok(t)
            } else {
                Err(ClientError::OutOfRange(t))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_replays_and_defaults() {
        let src = "{\"text\":\"a\",\"persuasiveness\":0.2,\"informativeness\":0.9}\n";
        let mut j = StubJudge::read(src.as_bytes()).unwrap();
        assert_eq!(j.judge("a").unwrap().informativeness, 0.9);
        assert!(matches!(j.judge("b"), Err(ClientError::NotRecorded)));
        j.default = Some(JudgeScores { persuasiveness: 0.5, informativeness: 0.5 });
        assert_eq!(j.judge("b").unwrap().persuasiveness, 0.5);
        assert!(StubJudge::read("{\"text\":\"a\",\"persuasiveness\":2,\"informativeness\":0}".as_bytes()).is_err());
    }
}
