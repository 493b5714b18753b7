//! Scripted backend replaying a JSONL fixture.
//!
//! One fixture line per scripted answer:
//!
//! ```text
//! {"role": "generate", "match": {"seq": 1}, "response": {"latex": "x^{a}"}}
//! {"role": "localize", "match": {"image_sha256": "<hex>"}, "response": {"index": 3}}
//! {"role": "refine",   "match": {"seq": 2}, "error": "model exploded"}
//! ```
//!
//! * `role` is `generate`, `localize` or `refine`.
//! * `match` is either `{"seq": n}`, the 1-based ordinal of the call within
//!   that role, or `{"image_sha256": h}`, the [`PixelGrid::content_hash`] of the
//!   request image. An image match wins over a sequence match.
//! * exactly one of `response` (the role's wire response body) or `error`
//!   (a message returned as a backend model error).
//!
//! Blank lines and lines starting with `#` are ignored. Two lines with the same
//! role and match key are rejected.
//!
//! [`PixelGrid::content_hash`]: crate::raster::PixelGrid::content_hash

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{wire, Backend, BackendError, BackendRequest, BackendResponse, Role};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture io: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchKey {
    #[serde(rename = "seq")]
    Seq(usize),
    #[serde(rename = "image_sha256")]
    ImageSha256(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    role: Role,
    #[serde(rename = "match")]
    key: MatchKey,
    response: Option<Value>,
    error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Scripted {
    Reply(BackendResponse),
    Fail(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub generate: usize,
    pub localize: usize,
    pub refine: usize,
}

impl CallCounts {
    pub fn total(&self) -> usize {
        self.generate + self.localize + self.refine
    }

    fn bump(&mut self, role: Role) -> usize {
        let slot = match role {
            Role::Generate => &mut self.generate,
            Role::Localize => &mut self.localize,
            Role::Refine => &mut self.refine,
        };
        *slot += 1;
        *slot
    }
}

#[derive(Debug, Default)]
pub struct MockBackend {
    script: HashMap<(Role, MatchKey), Scripted>,
    calls: Mutex<CallCounts>,
}

impl MockBackend {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut script = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| FixtureError::Parse { line, message };
            let entry: FixtureLine = serde_json::from_str(trimmed).map_err(|e| err(e.to_string()))?;
            if let MatchKey::Seq(0) = entry.key {
                return Err(err("seq is 1-based".into()));
            }
            let scripted = match (entry.response, entry.error) {
                (Some(body), None) => {
                    let bytes = serde_json::to_vec(&body).expect("value re-serializes");
                    Scripted::Reply(wire::response_from_json(entry.role, &bytes).map_err(|e| err(e.to_string()))?)
                }
                (None, Some(message)) => Scripted::Fail(message),
                _ => return Err(err("exactly one of `response` or `error` is required".into())),
            };
            let key = (entry.role, entry.key);
            if script.contains_key(&key) {
                return Err(err(format!("duplicate entry for {} {:?}", key.0, key.1)));
            }
            script.insert(key, scripted);
        }
        Ok(MockBackend {
            script,
            calls: Mutex::new(CallCounts::default()),
        })
    }

    pub fn calls(&self) -> CallCounts {
        *self.calls.lock().expect("mock state poisoned")
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }
}

impl Backend for MockBackend {
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let role = request.role();
        let hash = request.image().content_hash();
        // Matching happens under the lock so concurrent callers see a single
        // consistent sequence numbering.
        let mut calls = self.calls.lock().expect("mock state poisoned");
        let seq = calls.bump(role);
        let hit = self
            .script
            .get(&(role, MatchKey::ImageSha256(hash.clone())))
            .or_else(|| self.script.get(&(role, MatchKey::Seq(seq))));
        match hit {
            Some(Scripted::Reply(r)) => Ok(r.clone()),
            Some(Scripted::Fail(m)) => Err(BackendError::Model(m.clone())),
            None => Err(BackendError::Unscripted(format!(
                "no {role} entry for seq {seq} or image {hash}"
            ))),
        }
    }
}
