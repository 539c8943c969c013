//! Run manifests and validated artifact writing.
//!
//! Every artifact directory gets exactly one `manifest.json` recording the
//! full config snapshot (after CLI overrides), the build, the dataset
//! checksum, the seeds, and the output paths — enough to replay the run.
//! JSON artifacts are checked against the shipped schemas at write time, so
//! a schema drift fails the writer instead of shipping an invalid file.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use shred_core::sindy::{Equation, HeadSystem, SymbolicSystem, Term};

use crate::schema;
use crate::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildInfo {
    pub package: String,
    pub version: String,
    pub build_id: String,
}

impl BuildInfo {
    pub fn current() -> Self {
        BuildInfo {
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            build_id: option_env!("SHREDLAB_BUILD_ID")
                .unwrap_or("dev")
                .to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    /// Full config snapshot after CLI overrides were applied.
    pub config: Value,
    pub build: BuildInfo,
    pub dataset_checksum: String,
    pub seeds: Vec<u64>,
    pub precision: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Artifact label to path, relative to the manifest's directory.
    pub outputs: BTreeMap<String, String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Serialize, validate against a shipped schema, and write atomically-ish
/// (full buffer in one call). The schema check is a self-check: failing it
/// is a bug in this crate, reported as a numerical-infrastructure error.
pub fn write_json_validated<T: Serialize>(value: &T, schema_text: &str, path: &Path) -> Result<()> {
    let v = serde_json::to_value(value).map_err(LabError::json("serializing artifact"))?;
    let schema = schema::parse_schema(schema_text);
    let errors = schema::validate(&schema, &v);
    if !errors.is_empty() {
        return Err(LabError::Usage(format!(
            "internal: {} fails its schema: {}",
            path.display(),
            errors.join("; ")
        )));
    }
    let text = serde_json::to_string_pretty(&v).map_err(LabError::json("rendering artifact"))?;
    std::fs::write(path, text + "\n").map_err(LabError::io(format!("writing {}", path.display())))
}

pub fn write_manifest(manifest: &RunManifest, dir: &Path) -> Result<()> {
    write_json_validated(
        manifest,
        schema::MANIFEST_SCHEMA,
        &dir.join("manifest.json"),
    )
}

// ---------------------------------------------------------------------------
// Metrics and ODE artifacts.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub best_val: f64,
    pub test_mse: f64,
    pub best_epoch: usize,
    pub param_count: usize,
    pub wall_s: f64,
}

pub fn write_metrics(metrics: &Metrics, path: &Path) -> Result<()> {
    write_json_validated(metrics, schema::METRICS_SCHEMA, path)
}

/// Serde image of [`SymbolicSystem`]; coefficients keep full precision here
/// while the text rendering rounds to three decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdesJson {
    pub systems: Vec<HeadSystemJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSystemJson {
    pub layer: usize,
    pub head: usize,
    pub equations: Vec<EquationJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationJson {
    pub lhs: usize,
    pub terms: Vec<TermJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermJson {
    pub coeff: f64,
    pub monomial: String,
}

impl OdesJson {
    pub fn from_core(sys: &SymbolicSystem) -> Self {
        OdesJson {
            systems: sys
                .systems
                .iter()
                .map(|h| HeadSystemJson {
                    layer: h.layer,
                    head: h.head,
                    equations: h
                        .equations
                        .iter()
                        .map(|eq| EquationJson {
                            lhs: eq.lhs,
                            terms: eq
                                .terms
                                .iter()
                                .map(|t| TermJson {
                                    coeff: t.coeff,
                                    monomial: t.monomial.clone(),
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_core(&self) -> SymbolicSystem {
        SymbolicSystem {
            systems: self
                .systems
                .iter()
                .map(|h| HeadSystem {
                    layer: h.layer,
                    head: h.head,
                    equations: h
                        .equations
                        .iter()
                        .map(|eq| Equation {
                            lhs: eq.lhs,
                            terms: eq
                                .terms
                                .iter()
                                .map(|t| Term {
                                    coeff: t.coeff,
                                    monomial: t.monomial.clone(),
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

pub fn write_odes(sys: &SymbolicSystem, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("odes.txt"), sys.render_text())
        .map_err(LabError::io("writing odes.txt"))?;
    write_json_validated(
        &OdesJson::from_core(sys),
        schema::ODES_SCHEMA,
        &dir.join("odes.json"),
    )
}
