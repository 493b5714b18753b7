//! The three model roles (generate, localize, refine) behind one protocol.
//!
//! Learned components never live in this crate. They are reached through a
//! [`Backend`]: the HTTP client in [`http`], the scripted [`mock::MockBackend`],
//! or anything else implementing the trait.

pub mod head;
pub mod http;
pub mod mock;
pub mod server;
pub mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::PixelGrid;

pub use head::{fl_head_forward, AttentionHead, HeadError};
pub use http::{HttpBackend, BACKEND_URL_ENV};
pub use mock::{CallCounts, MockBackend};
pub use server::{serve, ServerHandle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generate,
    Localize,
    Refine,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Generate, Role::Localize, Role::Refine];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Generate => "generate",
            Role::Localize => "localize",
            Role::Refine => "refine",
        }
    }

    pub fn endpoint(self) -> &'static str {
        match self {
            Role::Generate => "/v1/generate",
            Role::Localize => "/v1/localize",
            Role::Refine => "/v1/refine",
        }
    }

    pub fn from_endpoint(path: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.endpoint() == path)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendRequest {
    /// Target image only.
    Generate { image: PixelGrid },
    /// Composed delta view plus the candidate's tokens.
    Localize { image: PixelGrid, tokens: Vec<String> },
    /// Composed delta view plus the rotated refinement prompt.
    Refine { image: PixelGrid, prompt_tokens: Vec<String> },
}

impl BackendRequest {
    pub fn role(&self) -> Role {
        match self {
            BackendRequest::Generate { .. } => Role::Generate,
            BackendRequest::Localize { .. } => Role::Localize,
            BackendRequest::Refine { .. } => Role::Refine,
        }
    }

    pub fn image(&self) -> &PixelGrid {
        match self {
            BackendRequest::Generate { image }
            | BackendRequest::Localize { image, .. }
            | BackendRequest::Refine { image, .. } => image,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendResponse {
    Generate { latex: String },
    /// 0-based token position; `tokens.len()` means the fault is at the end.
    Localize { index: usize },
    Refine { completion_tokens: Vec<String> },
}

impl BackendResponse {
    pub fn role(&self) -> Role {
        match self {
            BackendResponse::Generate { .. } => Role::Generate,
            BackendResponse::Localize { .. } => Role::Localize,
            BackendResponse::Refine { .. } => Role::Refine,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("backend model error: {0}")]
    Model(String),
    #[error("unscripted request: {0}")]
    Unscripted(String),
}

pub trait Backend: Send + Sync {
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).call(request)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).call(request)
    }
}

/// Checks a response against the request that produced it.
pub fn validate(request: &BackendRequest, response: &BackendResponse) -> Result<(), BackendError> {
    if request.role() != response.role() {
        return Err(BackendError::Protocol(format!(
            "{} request answered with a {} response",
            request.role(),
            response.role()
        )));
    }
    if let (BackendRequest::Localize { tokens, .. }, BackendResponse::Localize { index }) = (request, response) {
        if *index > tokens.len() {
            return Err(BackendError::Protocol(format!(
                "fault index {index} outside 0..={}",
                tokens.len()
            )));
        }
    }
    Ok(())
}

/// Calls `backend` and rejects role-mismatched or out-of-range responses.
pub fn call(backend: &dyn Backend, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
    let response = backend.call(request)?;
    validate(request, &response)?;
    Ok(response)
}
