//! The full shallow-recurrent-decoder model: encoder, decoder, and the
//! latent dynamical systems whose coefficients are learned, pruned, and
//! extracted as symbolic ODEs.
//!
//! A model owns its [`ParamStore`] plus one [`SindySystem`] descriptor per
//! latent system:
//!
//! * one per SINDy-attention head (layer-major), whose coefficients sit
//!   inside the forward graph, and
//! * one model-level system over the encoder's latent sequence when the
//!   SINDy consistency loss is enabled.
//!
//! Each descriptor tracks the coefficient parameter and its pruning mask;
//! masked entries are pinned to zero in the forward graph (so they receive
//! no gradient) and excluded from regularization.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use crate::decoder::{decode_graph, register_decoder, DecoderConfig, DecoderParams};
use crate::encoder::{
    encode_graph, register_encoder, EncoderConfig, EncoderParams, EncoderVariant, LatentSequence,
};
use crate::error::{CoreError, Result};
use crate::library::LibrarySpec;
use crate::mat::Matrix;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::real::Real;
use crate::sindy::{HeadSystem, SindyCoefficients, SymbolicSystem};
use crate::tape::{Tape, Var};

pub const DEFAULT_SINDY_DT: f64 = 1.0;
pub const DEFAULT_SINDY_K_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemLabel {
    /// A SINDy-attention head's trajectory.
    Head { layer: usize, head: usize },
    /// The model-level system over the encoder latent sequence.
    Latent,
}

/// One latent dynamical system: which parameter holds its coefficients and
/// which entries are still active.
#[derive(Debug, Clone)]
pub struct SindySystem {
    pub label: SystemLabel,
    pub xi: ParamId,
    pub latent_dim: usize,
    pub spec: LibrarySpec,
    /// Row-major over the `[width x latent_dim]` coefficient matrix;
    /// `false` entries are pruned.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub n_sensors: usize,
    pub grid_dims: (usize, usize),
    pub k_lag: usize,
    /// Time step covered by one latent transition; the Euler rollout splits
    /// it into `sindy_k_steps` sub-steps.
    pub sindy_dt: f64,
    pub sindy_k_steps: usize,
}

impl ModelConfig {
    pub fn new(
        encoder: EncoderConfig,
        decoder: DecoderConfig,
        n_sensors: usize,
        grid_dims: (usize, usize),
        k_lag: usize,
    ) -> Self {
        ModelConfig {
            encoder,
            decoder,
            n_sensors,
            grid_dims,
            k_lag,
            sindy_dt: DEFAULT_SINDY_DT,
            sindy_k_steps: DEFAULT_SINDY_K_STEPS,
        }
    }

    pub fn n_state(&self) -> usize {
        self.grid_dims.0 * self.grid_dims.1
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate(self.grid_dims, self.n_state())?;
        if self.n_sensors == 0 {
            return Err(CoreError::InvalidConfig(
                "model needs n_sensors >= 1".into(),
            ));
        }
        if self.k_lag == 0 {
            return Err(CoreError::InvalidConfig("model needs k_lag >= 1".into()));
        }
        if self.sindy_k_steps == 0 {
            return Err(CoreError::InvalidConfig(
                "model needs sindy_k_steps >= 1".into(),
            ));
        }
        if !(self.sindy_dt.is_finite() && self.sindy_dt > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "sindy_dt must be positive and finite, got {}",
                self.sindy_dt
            )));
        }
        Ok(())
    }
}

pub struct ShredModel<T: Real> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    enc: EncoderParams,
    dec: DecoderParams,
    pub systems: Vec<SindySystem>,
}

/// Per-tape handles: every parameter bound once, plus the mask-multiplied
/// coefficient var of every system (aligned with `model.systems`).
pub struct BoundModel {
    pub bound: BoundParams,
    pub masked_xi: Vec<Var>,
    n_head_systems: usize,
}

/// Per-sample forward results.
pub struct ForwardOut {
    /// Reconstructed state `[1 x n_state]`.
    pub pred: Var,
    /// Latent sequence `[k_lag x d_model]`.
    pub latent: Var,
    /// Trajectory per system, aligned with `model.systems`.
    pub sys_trajs: Vec<Var>,
}

impl<T: Real> ShredModel<T> {
    pub fn new(cfg: ModelConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new(init_seed);
        let enc = register_encoder(&cfg.encoder, cfg.n_sensors, &mut params)?;
        let dec = register_decoder(
            &cfg.decoder,
            cfg.encoder.d_model,
            cfg.n_state(),
            cfg.grid_dims,
            &mut params,
        )?;

        let mut systems = Vec::new();
        let lib = cfg.encoder.latent_library();
        if cfg.encoder.variant == EncoderVariant::TransformerSindy {
            let kh = cfg.encoder.head_width();
            let width = lib.width(kh);
            for (layer, head, name) in crate::encoder::head_xi_names(&cfg.encoder) {
                systems.push(SindySystem {
                    label: SystemLabel::Head { layer, head },
                    xi: params.id(&name)?,
                    latent_dim: kh,
                    spec: lib,
                    mask: alloc::vec![true; width * kh],
                });
            }
        }
        if cfg.encoder.use_sindy_loss {
            let d = cfg.encoder.d_model;
            let width = lib.width(d);
            let xi = params.add_weight("model.latent.xi", width, d, width)?;
            systems.push(SindySystem {
                label: SystemLabel::Latent,
                xi,
                latent_dim: d,
                spec: lib,
                mask: alloc::vec![true; width * d],
            });
        }

        Ok(ShredModel {
            cfg,
            params,
            enc,
            dec,
            systems,
        })
    }

    pub fn n_head_systems(&self) -> usize {
        self.systems
            .iter()
            .filter(|s| matches!(s.label, SystemLabel::Head { .. }))
            .count()
    }

    pub fn param_count(&self) -> usize {
        self.params.n_scalars()
    }

    /// Euler sub-step size used for rollouts of every latent system.
    pub fn sindy_h_step(&self) -> f64 {
        self.cfg.sindy_dt / self.cfg.sindy_k_steps as f64
    }

    /// Bind all parameters to a tape and pin pruned coefficients to zero.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundModel> {
        let bound = self.params.bind(tape);
        let mut masked_xi = Vec::with_capacity(self.systems.len());
        for sys in &self.systems {
            let xi = bound.var(sys.xi);
            let mask = self.mask_matrix(sys);
            masked_xi.push(tape.mul_const(xi, Rc::new(mask))?);
        }
        Ok(BoundModel {
            bound,
            masked_xi,
            n_head_systems: self.n_head_systems(),
        })
    }

    fn mask_matrix(&self, sys: &SindySystem) -> Matrix<T> {
        let width = sys.spec.width(sys.latent_dim);
        let mut m = Matrix::zeros(width, sys.latent_dim);
        for (dst, &keep) in m.data_mut().iter_mut().zip(&sys.mask) {
            *dst = if keep { T::ONE } else { T::ZERO };
        }
        m
    }

    /// Build the forward graph for one lag window `[k_lag x n_sensors]`.
    pub fn forward(&self, tape: &mut Tape<T>, bm: &BoundModel, window: Var) -> Result<ForwardOut> {
        let (rows, cols) = tape.value(window).shape();
        if rows != self.cfg.k_lag || cols != self.cfg.n_sensors {
            return Err(CoreError::ShapeMismatch {
                op: "model forward window",
                left: (rows, cols),
                right: (self.cfg.k_lag, self.cfg.n_sensors),
            });
        }
        let head_xi = &bm.masked_xi[..bm.n_head_systems];
        let enc_out = encode_graph(
            tape,
            &self.cfg.encoder,
            &self.enc,
            &bm.bound,
            window,
            head_xi,
        )?;
        let last = tape.slice_rows(enc_out.seq, self.cfg.k_lag - 1, 1)?;
        let pred = decode_graph(tape, &self.dec, &bm.bound, last)?;

        let mut sys_trajs = enc_out.head_trajs;
        if self.systems.len() > sys_trajs.len() {
            // The remaining system is the model-level latent one.
            sys_trajs.push(enc_out.seq);
        }
        Ok(ForwardOut {
            pred,
            latent: enc_out.seq,
            sys_trajs,
        })
    }

    /// Plain reconstruction for one window (no gradients kept).
    pub fn predict(&self, window: &Matrix<T>) -> Result<Matrix<T>> {
        let mut tape = Tape::new();
        let bm = self.bind(&mut tape)?;
        let w = tape.leaf(window.clone());
        let out = self.forward(&mut tape, &bm, w)?;
        Ok(tape.value(out.pred).clone())
    }

    /// Latent sequence for one window (no gradients kept).
    pub fn encode(&self, window: &Matrix<T>) -> Result<LatentSequence<T>> {
        let mut tape = Tape::new();
        let bm = self.bind(&mut tape)?;
        let w = tape.leaf(window.clone());
        let out = self.forward(&mut tape, &bm, w)?;
        Ok(LatentSequence {
            values: tape.value(out.latent).clone(),
        })
    }

    /// Coefficient view of one system (for rollouts and extraction).
    pub fn coefficients(&self, sys_idx: usize) -> Result<SindyCoefficients<T>> {
        let sys = &self.systems[sys_idx];
        SindyCoefficients::from_parts(
            self.params.value(sys.xi).clone(),
            sys.mask.clone(),
            self.sindy_h_step(),
            self.cfg.sindy_k_steps,
        )
    }

    /// Prune every system: entries with `|xi| < tau` are masked and zeroed.
    /// Returns how many coefficients were newly pruned; the train loop must
    /// also clear the optimizer state of pruned entries.
    pub fn prune(&mut self, tau: f64) -> usize {
        let mut newly = 0;
        for i in 0..self.systems.len() {
            let sys = &mut self.systems[i];
            let xi = self.params.value_mut(sys.xi);
            for (v, m) in xi.data_mut().iter_mut().zip(sys.mask.iter_mut()) {
                if *m && v.to_f64().abs() < tau {
                    *m = false;
                    newly += 1;
                }
                if !*m {
                    *v = T::ZERO;
                }
            }
        }
        newly
    }

    /// Restore pruning masks (checkpoint load); re-zeros masked entries.
    pub fn restore_masks(&mut self, masks: &[Vec<bool>]) -> Result<()> {
        if masks.len() != self.systems.len() {
            return Err(CoreError::InvalidConfig(format!(
                "expected {} masks, got {}",
                self.systems.len(),
                masks.len()
            )));
        }
        for (sys, mask) in self.systems.iter_mut().zip(masks) {
            if mask.len() != sys.mask.len() {
                return Err(CoreError::InvalidConfig(format!(
                    "mask length {} does not match system size {}",
                    mask.len(),
                    sys.mask.len()
                )));
            }
            sys.mask.clone_from(mask);
        }
        for i in 0..self.systems.len() {
            let sys = &self.systems[i];
            let mask = sys.mask.clone();
            let xi = self.params.value_mut(sys.xi);
            for (v, keep) in xi.data_mut().iter_mut().zip(mask) {
                if !keep {
                    *v = T::ZERO;
                }
            }
        }
        Ok(())
    }

    /// Symbolic form of every SINDy-attention head system.
    ///
    /// Errors unless the encoder has SINDy-attention layers: the model-level
    /// latent system exists at much higher dimension and is not rendered.
    pub fn extract(&self) -> Result<SymbolicSystem> {
        let mut heads = Vec::new();
        for (i, sys) in self.systems.iter().enumerate() {
            if let SystemLabel::Head { layer, head } = sys.label {
                let coeffs = self.coefficients(i)?;
                heads.push(HeadSystem::from_coefficients(
                    layer, head, &coeffs, &sys.spec,
                ));
            }
        }
        if heads.is_empty() {
            return Err(CoreError::InvalidConfig(
                "ODE extraction requires a SINDy-attention encoder".into(),
            ));
        }
        Ok(SymbolicSystem { systems: heads })
    }

    /// Human-readable one-line summary, used in logs and manifests.
    pub fn describe(&self) -> String {
        format!(
            "{}+{} layers={} d_model={} sensors={} lag={} params={}",
            self.cfg.encoder.variant.token(),
            self.cfg.decoder.token(),
            self.cfg.encoder.n_layers,
            self.cfg.encoder.d_model,
            self.cfg.n_sensors,
            self.cfg.k_lag,
            self.param_count()
        )
    }
}
