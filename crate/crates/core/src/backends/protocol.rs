//! JSON-over-HTTP wire protocol shared by every backend role.
//!
//! ```text
//! POST /v1/vqa       {"image_png_b64": "...", "question": "..."} -> {"answer": "..."}
//! POST /v1/iqa       {"image_png_b64": "..."}                    -> {"score": 0.83}
//! POST /v1/generate  {"prompt": "..."}                           -> {"text": "..."}
//! non-2xx            {"error": "..."}
//! ```
//!
//! Baseline scorers that need the caption (CLIPScore-like) receive it in the
//! optional `text` field of the IQA request; pure quality models ignore it.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

pub const VQA_PATH: &str = "/v1/vqa";
pub const IQA_PATH: &str = "/v1/iqa";
pub const GENERATE_PATH: &str = "/v1/generate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub image_png_b64: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaReply {
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IqaRequest {
    pub image_png_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqaReply {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateReply {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
}

pub fn encode_image(png: &[u8]) -> String {
    STANDARD.encode(png)
}

pub fn decode_image(b64: &str) -> Result<Vec<u8>, base64::DecodeError> {
    STANDARD.decode(b64)
}
