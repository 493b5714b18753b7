//! JSON bodies exchanged with a backend over HTTP.
//!
//! ```text
//! POST /v1/generate {"image_png_base64": s}                          -> {"latex": s}
//! POST /v1/localize {"image_png_base64": s, "tokens": [s]}           -> {"index": n}
//! POST /v1/refine   {"image_png_base64": s, "prompt_tokens": [s]}    -> {"completion_tokens": [s]}
//! error (any non-2xx)                      {"error": {"kind": s, "message": s}}
//! ```
//!
//! Error kinds: `bad_request`, `unscripted_request`, `model_error`,
//! `unconfigured_role`, `not_found`. Unknown fields are rejected.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, BackendRequest, BackendResponse, Role};
use crate::raster::PixelGrid;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub image_png_base64: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeRequest {
    pub image_png_base64: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineRequest {
    pub image_png_base64: String,
    pub prompt_tokens: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateResponse {
    pub latex: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeResponse {
    pub index: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineResponse {
    pub completion_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

pub const KIND_BAD_REQUEST: &str = "bad_request";
pub const KIND_UNSCRIPTED: &str = "unscripted_request";
pub const KIND_MODEL: &str = "model_error";
pub const KIND_UNCONFIGURED: &str = "unconfigured_role";
pub const KIND_NOT_FOUND: &str = "not_found";

fn protocol(e: impl std::fmt::Display) -> BackendError {
    BackendError::Protocol(e.to_string())
}

pub fn encode_image(image: &PixelGrid) -> Result<String, BackendError> {
    let png = image.encode_png().map_err(protocol)?;
    Ok(B64.encode(png))
}

pub fn decode_image(b64: &str) -> Result<PixelGrid, BackendError> {
    let bytes = B64.decode(b64).map_err(|e| protocol(format!("image_png_base64: {e}")))?;
    PixelGrid::decode_png(&bytes).map_err(|e| protocol(format!("image_png_base64: {e}")))
}

pub fn request_to_json(request: &BackendRequest) -> Result<Value, BackendError> {
    let v = match request {
        BackendRequest::Generate { image } => serde_json::to_value(GenerateRequest {
            image_png_base64: encode_image(image)?,
        }),
        BackendRequest::Localize { image, tokens } => serde_json::to_value(LocalizeRequest {
            image_png_base64: encode_image(image)?,
            tokens: tokens.clone(),
        }),
        BackendRequest::Refine { image, prompt_tokens } => serde_json::to_value(RefineRequest {
            image_png_base64: encode_image(image)?,
            prompt_tokens: prompt_tokens.clone(),
        }),
    };
    v.map_err(protocol)
}

pub fn request_from_json(role: Role, body: &[u8]) -> Result<BackendRequest, BackendError> {
    Ok(match role {
        Role::Generate => {
            let r: GenerateRequest = serde_json::from_slice(body).map_err(protocol)?;
            BackendRequest::Generate {
                image: decode_image(&r.image_png_base64)?,
            }
        }
        Role::Localize => {
            let r: LocalizeRequest = serde_json::from_slice(body).map_err(protocol)?;
            BackendRequest::Localize {
                image: decode_image(&r.image_png_base64)?,
                tokens: r.tokens,
            }
        }
        Role::Refine => {
            let r: RefineRequest = serde_json::from_slice(body).map_err(protocol)?;
            BackendRequest::Refine {
                image: decode_image(&r.image_png_base64)?,
                prompt_tokens: r.prompt_tokens,
            }
        }
    })
}

pub fn response_to_json(response: &BackendResponse) -> Value {
    let v = match response {
        BackendResponse::Generate { latex } => serde_json::to_value(GenerateResponse { latex: latex.clone() }),
        BackendResponse::Localize { index } => serde_json::to_value(LocalizeResponse { index: *index }),
        BackendResponse::Refine { completion_tokens } => serde_json::to_value(RefineResponse {
            completion_tokens: completion_tokens.clone(),
        }),
    };
    v.expect("plain structs serialize")
}

pub fn response_from_json(role: Role, body: &[u8]) -> Result<BackendResponse, BackendError> {
    Ok(match role {
        Role::Generate => {
            let r: GenerateResponse = serde_json::from_slice(body).map_err(protocol)?;
            BackendResponse::Generate { latex: r.latex }
        }
        Role::Localize => {
            let r: LocalizeResponse = serde_json::from_slice(body).map_err(protocol)?;
            BackendResponse::Localize { index: r.index }
        }
        Role::Refine => {
            let r: RefineResponse = serde_json::from_slice(body).map_err(protocol)?;
            BackendResponse::Refine {
                completion_tokens: r.completion_tokens,
            }
        }
    })
}

/// Wire error body for a backend error, with the HTTP status to send it under.
pub fn error_to_json(err: &BackendError) -> (u16, ErrorBody) {
    let (status, kind, message) = match err {
        BackendError::Protocol(m) => (400, KIND_BAD_REQUEST, m),
        BackendError::Unscripted(m) => (422, KIND_UNSCRIPTED, m),
        BackendError::Model(m) => (500, KIND_MODEL, m),
        BackendError::Transport(m) => (502, KIND_MODEL, m),
    };
    (
        status,
        ErrorBody {
            error: ErrorDetail {
                kind: kind.to_string(),
                message: message.clone(),
            },
        },
    )
}

/// Maps a non-2xx reply back onto the error taxonomy.
pub fn error_from_json(status: u16, body: &[u8]) -> BackendError {
    match serde_json::from_slice::<ErrorBody>(body) {
        Ok(ErrorBody { error }) => match error.kind.as_str() {
            KIND_UNSCRIPTED => BackendError::Unscripted(error.message),
            KIND_MODEL | KIND_UNCONFIGURED => BackendError::Model(error.message),
            _ => BackendError::Protocol(format!("{} ({}): {}", error.kind, status, error.message)),
        },
        Err(_) => BackendError::Protocol(format!(
            "HTTP {status} with malformed error body: {}",
            String::from_utf8_lossy(body)
        )),
    }
}
