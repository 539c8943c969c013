//! JSON run configuration: serde mirrors of the core model types, dataset
//! sources (a container path or an inline generator spec), and the train
//! and sweep job files the CLI consumes.
//!
//! A job is one JSON file; CLI flags override top-level keys so sweeps stay
//! serializable. Encoders are named by the grid's row labels — `lstm`,
//! `sl-lstm`, `gru`, `sl-gru`, `t`, `sl-t`, `sa-t`, `sasl-t` — where the
//! `sl-` prefix turns on the SINDy latent loss and `sa` marks
//! SINDy-attention.

use serde::{Deserialize, Serialize};
use shred_core::decoder::DecoderConfig;
use shred_core::encoder::{EncoderConfig, PositionalEncoding};
use shred_core::field::SyntheticSpec;
use shred_core::library::LibrarySpec;
use shred_core::model::{ModelConfig, DEFAULT_SINDY_DT, DEFAULT_SINDY_K_STEPS};
use shred_core::train::{
    DecoderFamily, EncoderLabel, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LAMBDA_REG,
    DEFAULT_LAMBDA_SINDY, DEFAULT_MIN_CHECKPOINT_EPOCH, DEFAULT_PRUNE_EVERY, DEFAULT_PRUNE_TAU,
    EXPERIMENT1_LAYER_COUNTS, EXPERIMENT1_LRS,
};

use crate::{LabError, Result};

// ---------------------------------------------------------------------------
// Library / decoder / encoder mirrors.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryJson {
    #[serde(default = "default_true")]
    pub include_bias: bool,
    #[serde(default = "default_poly_order")]
    pub poly_order: u32,
    #[serde(default)]
    pub fourier_k: u32,
}

fn default_true() -> bool {
    true
}
fn default_poly_order() -> u32 {
    1
}

impl LibraryJson {
    pub fn to_core(self) -> LibrarySpec {
        LibrarySpec {
            include_bias: self.include_bias,
            poly_order: self.poly_order,
            fourier_k: self.fourier_k,
        }
    }

    pub fn from_core(spec: &LibrarySpec) -> Self {
        LibraryJson {
            include_bias: spec.include_bias,
            poly_order: spec.poly_order,
            fourier_k: spec.fourier_k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecoderJson {
    Mlp {
        #[serde(default = "default_mlp_layers")]
        n_layers: usize,
        #[serde(default = "default_mlp_hidden")]
        hidden_width: usize,
    },
    Cnn {
        #[serde(default = "default_cnn_channels")]
        channels: [usize; 3],
    },
}

fn default_mlp_layers() -> usize {
    2
}
fn default_mlp_hidden() -> usize {
    64
}
fn default_cnn_channels() -> [usize; 3] {
    [16, 16, 8]
}

impl DecoderJson {
    pub fn to_core(self) -> DecoderConfig {
        match self {
            DecoderJson::Mlp {
                n_layers,
                hidden_width,
            } => DecoderConfig::Mlp {
                n_layers,
                hidden_width,
            },
            DecoderJson::Cnn { channels } => DecoderConfig::Cnn {
                channels: (channels[0], channels[1], channels[2]),
            },
        }
    }

    pub fn from_core(cfg: &DecoderConfig) -> Self {
        match *cfg {
            DecoderConfig::Mlp {
                n_layers,
                hidden_width,
            } => DecoderJson::Mlp {
                n_layers,
                hidden_width,
            },
            DecoderConfig::Cnn { channels } => DecoderJson::Cnn {
                channels: [channels.0, channels.1, channels.2],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderJson {
    /// Base cell: `lstm`, `gru`, `transformer`, or `sindy_attention`.
    pub variant: String,
    pub n_layers: usize,
    pub d_model: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    #[serde(default)]
    pub d_ff: Option<usize>,
    #[serde(default)]
    pub library: Option<LibraryJson>,
    #[serde(default)]
    pub use_sindy_loss: bool,
    #[serde(default = "default_positional")]
    pub positional: String,
    #[serde(default)]
    pub causal: bool,
    #[serde(default)]
    pub wrap_norm: bool,
    #[serde(default)]
    pub residual_euler: bool,
}

fn default_n_heads() -> usize {
    2
}
fn default_positional() -> String {
    "sinusoidal".into()
}

impl EncoderJson {
    pub fn to_core(&self) -> Result<EncoderConfig> {
        use shred_core::encoder::EncoderVariant::*;
        let variant = match self.variant.as_str() {
            "lstm" => Lstm,
            "gru" => Gru,
            "transformer" => TransformerVanilla,
            "sindy_attention" => TransformerSindy,
            other => {
                return Err(LabError::Usage(format!(
                    "unknown encoder variant {other:?}"
                )))
            }
        };
        let positional = match self.positional.as_str() {
            "sinusoidal" => PositionalEncoding::Sinusoidal,
            "none" => PositionalEncoding::None,
            other => {
                return Err(LabError::Usage(format!(
                    "positional must be \"sinusoidal\" or \"none\", got {other:?}"
                )))
            }
        };
        let cfg = EncoderConfig {
            variant,
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff.unwrap_or(4 * self.d_model),
            library: self.library.map(|l| l.to_core()),
            use_sindy_loss: self.use_sindy_loss,
            positional,
            causal: self.causal,
            wrap_norm: self.wrap_norm,
            residual_euler: self.residual_euler,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_core(cfg: &EncoderConfig) -> Self {
        EncoderJson {
            variant: cfg.variant.token().into(),
            n_layers: cfg.n_layers,
            d_model: cfg.d_model,
            n_heads: cfg.n_heads,
            d_ff: Some(cfg.d_ff),
            library: cfg.library.as_ref().map(LibraryJson::from_core),
            use_sindy_loss: cfg.use_sindy_loss,
            positional: match cfg.positional {
                PositionalEncoding::Sinusoidal => "sinusoidal".into(),
                PositionalEncoding::None => "none".into(),
            },
            causal: cfg.causal,
            wrap_norm: cfg.wrap_norm,
            residual_euler: cfg.residual_euler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub encoder: EncoderJson,
    pub decoder: DecoderJson,
    pub n_sensors: usize,
    pub grid_dims: [usize; 2],
    pub k_lag: usize,
    #[serde(default = "default_sindy_dt")]
    pub sindy_dt: f64,
    #[serde(default = "default_sindy_k_steps")]
    pub sindy_k_steps: usize,
}

fn default_sindy_dt() -> f64 {
    DEFAULT_SINDY_DT
}
fn default_sindy_k_steps() -> usize {
    DEFAULT_SINDY_K_STEPS
}

impl ModelJson {
    pub fn to_core(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(
            self.encoder.to_core()?,
            self.decoder.to_core(),
            self.n_sensors,
            (self.grid_dims[0], self.grid_dims[1]),
            self.k_lag,
        );
        cfg.sindy_dt = self.sindy_dt;
        cfg.sindy_k_steps = self.sindy_k_steps;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_core(cfg: &ModelConfig) -> Self {
        ModelJson {
            encoder: EncoderJson::from_core(&cfg.encoder),
            decoder: DecoderJson::from_core(&cfg.decoder),
            n_sensors: cfg.n_sensors,
            grid_dims: [cfg.grid_dims.0, cfg.grid_dims.1],
            k_lag: cfg.k_lag,
            sindy_dt: cfg.sindy_dt,
            sindy_k_steps: cfg.sindy_k_steps,
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset sources.

/// Inline synthetic-field spec; also the schema of `generate`'s input file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenerateSpec {
    TravelingWaves {
        grid_dims: [usize; 2],
        n_time: usize,
        #[serde(default = "default_dt")]
        dt: f64,
        n_waves: usize,
        period_steps: usize,
        #[serde(default)]
        seed: u64,
    },
    LinearModes {
        grid_dims: [usize; 2],
        n_time: usize,
        #[serde(default = "default_dt")]
        dt: f64,
        n_modes: usize,
        #[serde(default)]
        seed: u64,
    },
    NoisyMix {
        grid_dims: [usize; 2],
        n_time: usize,
        #[serde(default = "default_dt")]
        dt: f64,
        n_waves: usize,
        n_modes: usize,
        period_steps: usize,
        noise_sigma: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_dt() -> f64 {
    1.0
}

impl GenerateSpec {
    pub fn seed(&self) -> u64 {
        match *self {
            GenerateSpec::TravelingWaves { seed, .. }
            | GenerateSpec::LinearModes { seed, .. }
            | GenerateSpec::NoisyMix { seed, .. } => seed,
        }
    }

    pub fn with_seed(mut self, new_seed: u64) -> Self {
        match &mut self {
            GenerateSpec::TravelingWaves { seed, .. }
            | GenerateSpec::LinearModes { seed, .. }
            | GenerateSpec::NoisyMix { seed, .. } => *seed = new_seed,
        }
        self
    }

    pub fn to_core(&self) -> SyntheticSpec {
        match *self {
            GenerateSpec::TravelingWaves {
                grid_dims,
                n_time,
                dt,
                n_waves,
                period_steps,
                ..
            } => SyntheticSpec::TravelingWaves {
                grid_dims: (grid_dims[0], grid_dims[1]),
                n_time,
                dt,
                n_waves,
                period_steps,
            },
            GenerateSpec::LinearModes {
                grid_dims,
                n_time,
                dt,
                n_modes,
                ..
            } => SyntheticSpec::LinearModes {
                grid_dims: (grid_dims[0], grid_dims[1]),
                n_time,
                dt,
                n_modes,
            },
            GenerateSpec::NoisyMix {
                grid_dims,
                n_time,
                dt,
                n_waves,
                n_modes,
                period_steps,
                noise_sigma,
                ..
            } => SyntheticSpec::NoisyMix {
                grid_dims: (grid_dims[0], grid_dims[1]),
                n_time,
                dt,
                n_waves,
                n_modes,
                period_steps,
                noise_sigma,
            },
        }
    }
}

/// Where a job's field comes from: an STF1 file or an inline generator.
/// Exactly one of the two must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSpec>,
}

impl DatasetSource {
    pub fn validate(&self) -> Result<()> {
        match (&self.path, &self.generate) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(LabError::Usage(
                "dataset must set exactly one of \"path\" or \"generate\"".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// One global min/max over every time step (the default).
    #[default]
    Full,
    /// Statistics fit on the training split only.
    Train,
}

// ---------------------------------------------------------------------------
// Train jobs.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub normalize: NormalizeMode,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    pub n_sensors: usize,
    pub k_lag: usize,
    #[serde(default = "default_target_offset")]
    pub target_offset: usize,
    /// Grid row label, e.g. `gru` or `sasl-t`.
    pub encoder: String,
    pub decoder: DecoderJson,
    pub n_layers: usize,
    pub d_model: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    #[serde(default)]
    pub d_ff: Option<usize>,
    #[serde(default)]
    pub library: Option<LibraryJson>,
    pub lr: f64,
    pub n_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lambda_sindy")]
    pub lambda_sindy: f64,
    #[serde(default = "default_lambda_reg")]
    pub lambda_reg: f64,
    #[serde(default = "default_prune_every")]
    pub prune_every: usize,
    #[serde(default = "default_prune_tau")]
    pub prune_tau: f64,
    #[serde(default = "default_min_checkpoint_epoch")]
    pub min_checkpoint_epoch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn default_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}
fn default_target_offset() -> usize {
    1
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_lambda_sindy() -> f64 {
    DEFAULT_LAMBDA_SINDY
}
fn default_lambda_reg() -> f64 {
    DEFAULT_LAMBDA_REG
}
fn default_prune_every() -> usize {
    DEFAULT_PRUNE_EVERY
}
fn default_prune_tau() -> f64 {
    DEFAULT_PRUNE_TAU
}
fn default_min_checkpoint_epoch() -> usize {
    DEFAULT_MIN_CHECKPOINT_EPOCH
}

impl TrainJob {
    pub fn encoder_label(&self) -> Result<EncoderLabel> {
        EncoderLabel::from_token(&self.encoder).map_err(|e| LabError::Usage(e.to_string()))
    }

    /// Assemble the core encoder config for this job's label.
    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let label = self.encoder_label()?;
        let json = EncoderJson {
            variant: label.variant().token().into(),
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            library: self.library,
            use_sindy_loss: label.use_sindy_loss(),
            positional: "sinusoidal".into(),
            causal: false,
            wrap_norm: false,
            residual_euler: false,
        };
        json.to_core()
    }

    pub fn model_config(&self, grid_dims: (usize, usize)) -> Result<ModelConfig> {
        let cfg = ModelConfig::new(
            self.encoder_config()?,
            self.decoder.to_core(),
            self.n_sensors,
            grid_dims,
            self.k_lag,
        );
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, shuffle_seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.lr,
            n_epochs: self.n_epochs,
            batch_size: self.batch_size,
            lambda_sindy: self.lambda_sindy,
            lambda_reg: self.lambda_reg,
            prune_every: self.prune_every,
            prune_tau: self.prune_tau,
            min_checkpoint_epoch: self.min_checkpoint_epoch,
            optimizer: shred_core::optim::OptimizerKind::Adam,
            shuffle_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Sweep jobs.

/// Per-cell settings that do not vary across the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTemplate {
    pub d_model: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    #[serde(default)]
    pub d_ff: Option<usize>,
    #[serde(default)]
    pub library: Option<LibraryJson>,
    #[serde(default = "default_mlp_layers")]
    pub mlp_n_layers: usize,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden_width: usize,
    #[serde(default = "default_cnn_channels")]
    pub cnn_channels: [usize; 3],
    pub n_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lambda_sindy")]
    pub lambda_sindy: f64,
    #[serde(default = "default_lambda_reg")]
    pub lambda_reg: f64,
    #[serde(default = "default_prune_every")]
    pub prune_every: usize,
    #[serde(default = "default_prune_tau")]
    pub prune_tau: f64,
    #[serde(default = "default_min_checkpoint_epoch")]
    pub min_checkpoint_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepJob {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub normalize: NormalizeMode,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    pub n_sensors: usize,
    pub k_lag: usize,
    #[serde(default = "default_target_offset")]
    pub target_offset: usize,
    pub template: SweepTemplate,
    /// Axis subsets; omitted axes default to the full experiment-1 grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoders: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoders: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lrs: Option<Vec<f64>>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl SweepJob {
    /// Enumerate this job's cells in the deterministic full-grid order.
    /// With no axis subsets this is exactly the 128-cell experiment-1 grid.
    pub fn cells(&self) -> Result<Vec<shred_core::train::SweepCell>> {
        let encoders: Vec<EncoderLabel> = match &self.encoders {
            None => EncoderLabel::ALL.to_vec(),
            Some(toks) => toks
                .iter()
                .map(|t| EncoderLabel::from_token(t).map_err(|e| LabError::Usage(e.to_string())))
                .collect::<Result<_>>()?,
        };
        let decoders: Vec<DecoderFamily> = match &self.decoders {
            None => DecoderFamily::ALL.to_vec(),
            Some(toks) => toks
                .iter()
                .map(|t| DecoderFamily::from_token(t).map_err(|e| LabError::Usage(e.to_string())))
                .collect::<Result<_>>()?,
        };
        let layer_counts = self
            .n_layers
            .clone()
            .unwrap_or_else(|| EXPERIMENT1_LAYER_COUNTS.to_vec());
        let lrs = self.lrs.clone().unwrap_or_else(|| EXPERIMENT1_LRS.to_vec());
        if encoders.is_empty() || decoders.is_empty() || layer_counts.is_empty() || lrs.is_empty() {
            return Err(LabError::Usage("sweep grid has an empty axis".into()));
        }
        if self.seeds.is_empty() {
            return Err(LabError::Usage("sweep needs at least one seed".into()));
        }
        let mut cells = Vec::new();
        for &encoder in &encoders {
            for &decoder in &decoders {
                for &n_layers in &layer_counts {
                    for &lr in &lrs {
                        cells.push(shred_core::train::SweepCell {
                            encoder,
                            decoder,
                            n_layers,
                            lr,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }

    /// Materialize the train-job settings for one grid cell and seed.
    pub fn cell_job(&self, cell: &shred_core::train::SweepCell, seed: u64) -> TrainJob {
        let decoder = match cell.decoder {
            DecoderFamily::Mlp => DecoderJson::Mlp {
                n_layers: self.template.mlp_n_layers,
                hidden_width: self.template.mlp_hidden_width,
            },
            DecoderFamily::Cnn => DecoderJson::Cnn {
                channels: self.template.cnn_channels,
            },
        };
        TrainJob {
            dataset: self.dataset.clone(),
            normalize: self.normalize,
            fractions: self.fractions,
            n_sensors: self.n_sensors,
            k_lag: self.k_lag,
            target_offset: self.target_offset,
            encoder: cell.encoder.token().into(),
            decoder,
            n_layers: cell.n_layers,
            d_model: self.template.d_model,
            n_heads: self.template.n_heads,
            d_ff: self.template.d_ff,
            library: self.template.library,
            lr: cell.lr,
            n_epochs: self.template.n_epochs,
            batch_size: self.template.batch_size,
            lambda_sindy: self.template.lambda_sindy,
            lambda_reg: self.template.lambda_reg,
            prune_every: self.template.prune_every,
            prune_tau: self.template.prune_tau,
            min_checkpoint_epoch: self.template.min_checkpoint_epoch,
            seed,
            precision: self.precision.clone(),
            out_dir: None,
        }
    }
}

/// Parse a JSON config file into a typed job, naming the file in errors.
pub fn read_json_config<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(LabError::io(format!("{}", path.display())))?;
    serde_json::from_str(&text).map_err(LabError::json(format!("{}", path.display())))
}
