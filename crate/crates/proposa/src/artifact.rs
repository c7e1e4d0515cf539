//! Optimizable artifacts and their content hashing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Declares how an artifact body is to be parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatTag {
    /// A YAML rule classifier document.
    RuleYaml,
    /// A flat JSON object mapping parameter names to numbers.
    NumericConfig,
    /// Uninterpreted text, scored by an external evaluator.
    OpaqueText,
}

/// The object under optimization: a body of text plus a format tag and a
/// stable content hash.
///
/// Immutable after construction; the hash is always consistent with the body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    format_tag: FormatTag,
    body: String,
    content_hash: u64,
}

impl Artifact {
    /// Builds an artifact, hashing the body. Empty bodies are rejected.
    pub fn new(format_tag: FormatTag, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        let content_hash = hash_artifact(&body)?;
        Ok(Self { format_tag, body, content_hash })
    }

    pub fn format_tag(&self) -> FormatTag {
        self.format_tag
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn content_hash(&self) -> u64 {
        self.content_hash
    }
}

/// 64-bit FNV-1a over the UTF-8 bytes of `body`.
///
/// Pure integer arithmetic, so the value is identical on every platform.
/// Offset basis 0xcbf29ce484222325, prime 0x100000001b3. Not cryptographic;
/// it exists for bookkeeping, not for adversaries.
pub fn hash_artifact(body: &str) -> Result<u64> {
    if body.is_empty() {
        return Err(Error::InvalidArtifact("artifact body is empty".into()));
    }
    let mut hash = FNV_OFFSET_BASIS;
    for byte in body.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    Ok(hash)
}
