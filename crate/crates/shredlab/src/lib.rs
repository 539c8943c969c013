//! Lab companion to `shred-core`: the on-disk field container, checkpoint
//! and manifest formats, JSON run configs with schema validation, and the
//! command implementations behind the `shredlab` binary.
//!
//! Everything numerical lives in `shred-core`; this crate owns IO, JSON, and
//! process concerns (exit codes, parallel sweep execution, environment
//! variables). All structured outputs are validated against the schemas
//! shipped in `schemas/` before they are written.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod schema;
pub mod stf;

use shred_core::Real;

/// Errors surfaced by the CLI, each mapped to a process exit code:
/// 2 for usage/config/IO problems, 3 for numerical failures.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Stf(#[from] stf::StfError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(shred_core::CoreError),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Numerical(_)
            | LabError::Core(shred_core::CoreError::Diverged { .. })
            | LabError::Core(shred_core::CoreError::NonFinite(_)) => 3,
            _ => 2,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> LabError {
        let context = context.into();
        move |source| LabError::Io { context, source }
    }

    pub fn json(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> LabError {
        let context = context.into();
        move |source| LabError::Json { context, source }
    }
}

impl From<shred_core::CoreError> for LabError {
    fn from(e: shred_core::CoreError) -> Self {
        LabError::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

/// Float width selection for a run. Checkpoints record which width wrote
/// them; `f64` is the default because it is the reproducibility mode every
/// determinism guarantee is stated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn token(&self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(LabError::Usage(format!(
                "precision must be f32 or f64, got {other:?}"
            ))),
        }
    }

    /// Resolve with precedence: CLI flag, then `SHREDLAB_PRECISION`, then
    /// the config file, then the f64 default.
    pub fn resolve(flag: Option<&str>, config: Option<&str>) -> Result<Self> {
        if let Some(s) = flag {
            return Precision::parse(s);
        }
        if let Ok(s) = std::env::var("SHREDLAB_PRECISION") {
            return Precision::parse(&s);
        }
        if let Some(s) = config {
            return Precision::parse(s);
        }
        Ok(Precision::default())
    }
}

/// A concrete float width usable as model scalar, with its serialized form.
pub trait Scalar: Real + 'static {
    const DTYPE: &'static str;
    const BYTES: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Hex SHA-256 of a byte string; the checksum used for datasets and
/// idempotence checks.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(LabError::Usage("x".into()).exit_code(), 2);
        assert_eq!(LabError::Numerical("x".into()).exit_code(), 3);
        assert_eq!(
            LabError::Core(shred_core::CoreError::Diverged { epoch: 3, batch: 1 }).exit_code(),
            3
        );
        assert_eq!(
            LabError::Core(shred_core::CoreError::InvalidConfig("x".into())).exit_code(),
            2
        );
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn precision_parses_and_rejects() {
        assert_eq!(Precision::parse("f32").unwrap(), Precision::F32);
        assert_eq!(Precision::parse("f64").unwrap(), Precision::F64);
        assert!(Precision::parse("f16").is_err());
        assert_eq!(Precision::default(), Precision::F64);
    }
}
