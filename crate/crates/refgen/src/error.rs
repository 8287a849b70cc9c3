use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefgenError {
    #[error("asset `{0}` does not exist")]
    MissingAsset(PathBuf),
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("template `{name}` does not match its pinned checksum")]
    TemplateChecksum { name: &'static str },
    #[error("response has no JSON block after `# Output`")]
    NoJsonBlock,
    #[error("response JSON is invalid: {0}")]
    InvalidJson(String),
    #[error("response is missing key `{0}`")]
    MissingKey(String),
    #[error("response key `{key}` has unexpected value `{value}`")]
    BadEnum { key: String, value: String },
    #[error("authentication rejected: {0}")]
    AuthError(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RefgenError {
    /// Short stable tag for reject logs.
    pub fn tag(&self) -> &'static str {
        match self {
            RefgenError::MissingAsset(_) => "missing_asset",
            RefgenError::EmptyInstruction => "empty_instruction",
            RefgenError::TemplateChecksum { .. } => "template_checksum",
            RefgenError::NoJsonBlock => "no_json_block",
            RefgenError::InvalidJson(_) => "invalid_json",
            RefgenError::MissingKey(_) => "missing_key",
            RefgenError::BadEnum { .. } => "bad_enum",
            RefgenError::AuthError(_) => "auth_error",
            RefgenError::Timeout { .. } => "timeout",
            RefgenError::RateLimited { .. } => "rate_limited",
            RefgenError::ProtocolError(_) => "protocol_error",
            RefgenError::Io(_) => "io",
        }
    }
}
