//! Sequence encoders: GRU/LSTM stacks and transformer layers with either
//! vanilla attention or SINDy-attention heads.
//!
//! Every encoder maps a lag window `[k_lag x n_sensors]` to a latent
//! sequence `[k_lag x d_model]`. The raw window first passes through an
//! affine lift to `d_model`; transformer variants then add a sinusoidal
//! positional encoding (on by default, configurable off).
//!
//! Transformer layers follow the post-norm arrangement: attention and
//! feed-forward sublayers each sit inside a residual connection closed by a
//! layer norm, with per-head projections `[d_model x head_width]` and
//! softmax(Q K^T / sqrt(head_width)) V attention.
//!
//! A SINDy-attention layer replaces the output projection and MLP: each
//! head's attention output `T` is pushed through a candidate-function
//! library and a sparse coefficient matrix (`S = theta(T) Xi`), heads are
//! concatenated, and two linear maps (no activation in between) mix them
//! back to `d_model`. Following the reference formulation literally there is
//! no residual or norm around that block; `wrap_norm` optionally adds one,
//! and `residual_euler` switches to the Euler-step form
//! `S = T + theta(T) Xi h`. The attention outputs `T` double as latent
//! trajectories that the SINDy loss and pruning act on.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::library::LibrarySpec;
use crate::mat::Matrix;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderVariant {
    Lstm,
    Gru,
    TransformerVanilla,
    TransformerSindy,
}

impl EncoderVariant {
    pub fn is_transformer(&self) -> bool {
        matches!(
            self,
            EncoderVariant::TransformerVanilla | EncoderVariant::TransformerSindy
        )
    }

    pub fn token(&self) -> &'static str {
        match self {
            EncoderVariant::Lstm => "lstm",
            EncoderVariant::Gru => "gru",
            EncoderVariant::TransformerVanilla => "transformer",
            EncoderVariant::TransformerSindy => "sindy_attention",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositionalEncoding {
    #[default]
    Sinusoidal,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub n_layers: usize,
    pub d_model: usize,
    /// Attention heads (transformer variants only); must divide `d_model`.
    pub n_heads: usize,
    /// Feed-forward width of transformer layers.
    pub d_ff: usize,
    /// Candidate library: required for SINDy-attention heads; also used for
    /// the model-level latent system when the SINDy loss is enabled
    /// (defaults to the linear library when absent).
    pub library: Option<LibrarySpec>,
    /// Adds the Euler-consistency loss on every latent system during
    /// training.
    pub use_sindy_loss: bool,
    pub positional: PositionalEncoding,
    /// Mask attention to past positions only (off by default).
    pub causal: bool,
    /// Wrap the SINDy-attention block in a residual + layer norm like the
    /// vanilla layer (off by default: the plain formulation has neither).
    pub wrap_norm: bool,
    /// SINDy-attention heads emit `T + theta(T) Xi h` instead of
    /// `theta(T) Xi`.
    pub residual_euler: bool,
}

impl EncoderConfig {
    pub fn gru(n_layers: usize, d_model: usize) -> Self {
        EncoderConfig {
            variant: EncoderVariant::Gru,
            n_layers,
            d_model,
            n_heads: 1,
            d_ff: 1,
            library: None,
            use_sindy_loss: false,
            positional: PositionalEncoding::Sinusoidal,
            causal: false,
            wrap_norm: false,
            residual_euler: false,
        }
    }

    pub fn lstm(n_layers: usize, d_model: usize) -> Self {
        EncoderConfig {
            variant: EncoderVariant::Lstm,
            ..Self::gru(n_layers, d_model)
        }
    }

    pub fn transformer(n_layers: usize, d_model: usize, n_heads: usize, d_ff: usize) -> Self {
        EncoderConfig {
            variant: EncoderVariant::TransformerVanilla,
            n_layers,
            d_model,
            n_heads,
            d_ff,
            ..Self::gru(n_layers, d_model)
        }
    }

    pub fn sindy_attention(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
        library: LibrarySpec,
    ) -> Self {
        EncoderConfig {
            variant: EncoderVariant::TransformerSindy,
            library: Some(library),
            ..Self::transformer(n_layers, d_model, n_heads, d_ff)
        }
    }

    /// Per-head projection width.
    pub fn head_width(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Library used for latent systems (heads and the model-level system).
    pub fn latent_library(&self) -> LibrarySpec {
        self.library.unwrap_or_else(LibrarySpec::linear)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(CoreError::InvalidConfig(
                "encoder needs n_layers >= 1".into(),
            ));
        }
        if self.d_model == 0 {
            return Err(CoreError::InvalidConfig(
                "encoder needs d_model >= 1".into(),
            ));
        }
        if self.variant.is_transformer() {
            if self.n_heads == 0 {
                return Err(CoreError::InvalidConfig(
                    "transformer needs n_heads >= 1".into(),
                ));
            }
            if !self.d_model.is_multiple_of(self.n_heads) {
                return Err(CoreError::InvalidConfig(format!(
                    "n_heads {} must divide d_model {}",
                    self.n_heads, self.d_model
                )));
            }
            if self.d_ff == 0 {
                return Err(CoreError::InvalidConfig(
                    "transformer needs d_ff >= 1".into(),
                ));
            }
        }
        if self.variant == EncoderVariant::TransformerSindy {
            match &self.library {
                None => {
                    return Err(CoreError::InvalidConfig(
                        "sindy_attention encoder requires a library spec".into(),
                    ))
                }
                Some(lib) => lib.validate()?,
            }
        }
        Ok(())
    }
}

/// Latent sequence produced by an encoder: one row per window position.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence<T: Real> {
    pub values: Matrix<T>,
}

impl<T: Real> LatentSequence<T> {
    /// The row handed to the decoder (the window's final position).
    pub fn last(&self) -> &[T] {
        self.values.row(self.values.rows() - 1)
    }
}

// ---------------------------------------------------------------------------
// Parameter registration.

#[derive(Debug, Clone)]
pub struct GateParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Debug, Clone)]
pub enum LayerParams {
    /// GRU gates in order r (reset), u (update), c (candidate).
    Gru { gates: [GateParams; 3] },
    /// LSTM gates in order i, f, o, g.
    Lstm { gates: [GateParams; 4] },
    Transformer {
        heads: Vec<HeadParams>,
        wo: ParamId,
        ff_w1: ParamId,
        ff_w2: ParamId,
        ln1: (ParamId, ParamId),
        ln2: (ParamId, ParamId),
    },
    SindyAttention {
        heads: Vec<HeadParams>,
        /// One coefficient matrix per head, aligned with `heads`.
        xi: Vec<ParamId>,
        ff_w1: ParamId,
        ff_w2: ParamId,
        /// Present only under `wrap_norm`.
        ln: Option<(ParamId, ParamId)>,
    },
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub lift_w: ParamId,
    pub lift_b: ParamId,
    pub layers: Vec<LayerParams>,
}

fn gate<T: Real>(
    store: &mut ParamStore<T>,
    layer: usize,
    name: &str,
    d: usize,
) -> Result<GateParams> {
    Ok(GateParams {
        w_x: store.add_weight(&format!("enc.l{layer}.w_x{name}"), d, d, d)?,
        w_h: store.add_weight(&format!("enc.l{layer}.w_h{name}"), d, d, d)?,
        b: store.add_zeros(&format!("enc.l{layer}.b_{name}"), 1, d)?,
    })
}

/// Register all encoder parameters; `xi` head coefficients are registered by
/// the model (which owns their pruning masks) and patched into the returned
/// structure via [`EncoderParams`]'s `xi` slots.
pub fn register_encoder<T: Real>(
    cfg: &EncoderConfig,
    n_sensors: usize,
    store: &mut ParamStore<T>,
) -> Result<EncoderParams> {
    cfg.validate()?;
    if n_sensors == 0 {
        return Err(CoreError::InvalidConfig(
            "encoder needs n_sensors >= 1".into(),
        ));
    }
    let d = cfg.d_model;
    let lift_w = store.add_weight("enc.lift.w", n_sensors, d, n_sensors)?;
    let lift_b = store.add_zeros("enc.lift.b", 1, d)?;

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let layer = match cfg.variant {
            EncoderVariant::Gru => LayerParams::Gru {
                gates: [
                    gate(store, l, "r", d)?,
                    gate(store, l, "u", d)?,
                    gate(store, l, "c", d)?,
                ],
            },
            EncoderVariant::Lstm => LayerParams::Lstm {
                gates: [
                    gate(store, l, "i", d)?,
                    gate(store, l, "f", d)?,
                    gate(store, l, "o", d)?,
                    gate(store, l, "g", d)?,
                ],
            },
            EncoderVariant::TransformerVanilla => {
                let heads = register_heads(cfg, l, store)?;
                LayerParams::Transformer {
                    heads,
                    wo: store.add_weight(&format!("enc.l{l}.wo"), d, d, d)?,
                    ff_w1: store.add_weight(&format!("enc.l{l}.ff.w1"), d, cfg.d_ff, d)?,
                    ff_w2: store.add_weight(&format!("enc.l{l}.ff.w2"), cfg.d_ff, d, cfg.d_ff)?,
                    ln1: (
                        store.add_ones(&format!("enc.l{l}.ln1.g"), 1, d)?,
                        store.add_zeros(&format!("enc.l{l}.ln1.b"), 1, d)?,
                    ),
                    ln2: (
                        store.add_ones(&format!("enc.l{l}.ln2.g"), 1, d)?,
                        store.add_zeros(&format!("enc.l{l}.ln2.b"), 1, d)?,
                    ),
                }
            }
            EncoderVariant::TransformerSindy => {
                let heads = register_heads(cfg, l, store)?;
                let lib = cfg.latent_library();
                let kh = cfg.head_width();
                let width = lib.width(kh);
                let mut xi = Vec::with_capacity(cfg.n_heads);
                for h in 0..cfg.n_heads {
                    xi.push(store.add_weight(&format!("enc.l{l}.h{h}.xi"), width, kh, width)?);
                }
                let ln = if cfg.wrap_norm {
                    Some((
                        store.add_ones(&format!("enc.l{l}.ln.g"), 1, d)?,
                        store.add_zeros(&format!("enc.l{l}.ln.b"), 1, d)?,
                    ))
                } else {
                    None
                };
                LayerParams::SindyAttention {
                    heads,
                    xi,
                    ff_w1: store.add_weight(&format!("enc.l{l}.ff.w1"), d, cfg.d_ff, d)?,
                    ff_w2: store.add_weight(&format!("enc.l{l}.ff.w2"), cfg.d_ff, d, cfg.d_ff)?,
                    ln,
                }
            }
        };
        layers.push(layer);
    }

    Ok(EncoderParams {
        lift_w,
        lift_b,
        layers,
    })
}

fn register_heads<T: Real>(
    cfg: &EncoderConfig,
    layer: usize,
    store: &mut ParamStore<T>,
) -> Result<Vec<HeadParams>> {
    let d = cfg.d_model;
    let kh = cfg.head_width();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        heads.push(HeadParams {
            wq: store.add_weight(&format!("enc.l{layer}.h{h}.wq"), d, kh, d)?,
            wk: store.add_weight(&format!("enc.l{layer}.h{h}.wk"), d, kh, d)?,
            wv: store.add_weight(&format!("enc.l{layer}.h{h}.wv"), d, kh, d)?,
        });
    }
    Ok(heads)
}

// ---------------------------------------------------------------------------
// Forward graphs.

/// Sinusoidal positional encoding table `[n x d]`.
pub fn sinusoidal_positional_encoding<T: Real>(n: usize, d: usize) -> Matrix<T> {
    let ln_base = Real::ln(10_000.0f64);
    Matrix::from_fn(n, d, |t, c| {
        let pair = (c - c % 2) as f64;
        let angle = t as f64 * Real::exp(-ln_base * pair / d as f64);
        if c % 2 == 0 {
            T::from_f64(Real::sin(angle))
        } else {
            T::from_f64(Real::cos(angle))
        }
    })
}

/// Additive causal mask: 0 on and below the diagonal, a large negative
/// number above, so softmax zeroes attention to future positions.
pub fn causal_mask<T: Real>(n: usize) -> Matrix<T> {
    Matrix::from_fn(
        n,
        n,
        |i, j| {
            if j > i {
                T::from_f64(-1e30)
            } else {
                T::ZERO
            }
        },
    )
}

/// Everything the rest of the model needs from an encoder pass.
pub struct EncodeOut {
    /// Latent sequence `[k_lag x d_model]` after the final layer.
    pub seq: Var,
    /// Attention-head trajectories `T^(h)` of every SINDy-attention layer,
    /// layer-major then head order; empty for other variants.
    pub head_trajs: Vec<Var>,
}

/// Build the encoder forward graph for one window `[k_lag x n_sensors]`.
///
/// `masked_xi` must hold the masked coefficient vars for every
/// SINDy-attention head in layer-major order (see
/// [`crate::sindy::masked_xi_var`]); pass an empty slice for other variants.
pub fn encode_graph<T: Real>(
    tape: &mut Tape<T>,
    cfg: &EncoderConfig,
    eparams: &EncoderParams,
    bound: &BoundParams,
    window: Var,
    masked_xi: &[Var],
) -> Result<EncodeOut> {
    let (n, _) = tape.value(window).shape();
    if n == 0 {
        return Err(CoreError::TooShort {
            n_time: 0,
            required: 1,
        });
    }

    // Affine lift to d_model.
    let lifted = tape.matmul(window, bound.var(eparams.lift_w))?;
    let mut x = tape.add_row(lifted, bound.var(eparams.lift_b))?;

    if cfg.variant.is_transformer() && cfg.positional == PositionalEncoding::Sinusoidal {
        let pe = sinusoidal_positional_encoding::<T>(n, cfg.d_model);
        x = tape.add_const(x, &pe)?;
    }

    let mask = if cfg.causal && cfg.variant.is_transformer() {
        Some(causal_mask::<T>(n))
    } else {
        None
    };

    let mut head_trajs = Vec::new();
    let mut xi_cursor = 0usize;
    for layer in &eparams.layers {
        x = match layer {
            LayerParams::Gru { gates } => rnn_scan(tape, x, n, cfg.d_model, |tape, xt, state| {
                let h = state[0];
                let hn = gru_step(tape, xt, h, gates, bound)?;
                Ok((hn, alloc::vec![hn]))
            })?,
            LayerParams::Lstm { gates } => rnn_scan(tape, x, n, cfg.d_model, |tape, xt, state| {
                let (h, c) = (state[0], state[1]);
                let (hn, cn) = lstm_step(tape, xt, h, c, gates, bound)?;
                Ok((hn, alloc::vec![hn, cn]))
            })?,
            LayerParams::Transformer {
                heads,
                wo,
                ff_w1,
                ff_w2,
                ln1,
                ln2,
            } => {
                let mut outs = Vec::with_capacity(heads.len());
                for head in heads {
                    let (t, _) = attention_head(tape, x, head, bound, cfg, mask.as_ref())?;
                    outs.push(t);
                }
                let concat = tape.concat_cols(&outs)?;
                let mhsa = tape.matmul(concat, bound.var(*wo))?;
                let res1 = tape.add(x, mhsa)?;
                let xt = tape.layer_norm(res1, bound.var(ln1.0), bound.var(ln1.1))?;
                let a1 = tape.matmul(xt, bound.var(*ff_w1))?;
                let act = tape.relu(a1);
                let ff = tape.matmul(act, bound.var(*ff_w2))?;
                let res2 = tape.add(xt, ff)?;
                tape.layer_norm(res2, bound.var(ln2.0), bound.var(ln2.1))?
            }
            LayerParams::SindyAttention {
                heads,
                xi: _,
                ff_w1,
                ff_w2,
                ln,
            } => {
                let lib = cfg.latent_library();
                let mut outs = Vec::with_capacity(heads.len());
                for head in heads {
                    let (t, _) = attention_head(tape, x, head, bound, cfg, mask.as_ref())?;
                    head_trajs.push(t);
                    let xi_m = *masked_xi.get(xi_cursor).ok_or_else(|| {
                        CoreError::InvalidConfig(
                            "missing masked xi var for a SINDy-attention head".into(),
                        )
                    })?;
                    xi_cursor += 1;
                    let theta = crate::library::eval_library_tape(tape, t, &lib)?;
                    let s = tape.matmul(theta, xi_m)?;
                    let s = if cfg.residual_euler {
                        let stepped = tape.scale(s, T::from_f64(SINDY_ATTENTION_EULER_H));
                        tape.add(t, stepped)?
                    } else {
                        s
                    };
                    outs.push(s);
                }
                let concat = tape.concat_cols(&outs)?;
                let mix1 = tape.matmul(concat, bound.var(*ff_w1))?;
                let z = tape.matmul(mix1, bound.var(*ff_w2))?;
                match ln {
                    Some((g, b)) => {
                        let res = tape.add(x, z)?;
                        tape.layer_norm(res, bound.var(*g), bound.var(*b))?
                    }
                    None => z,
                }
            }
        };
    }

    Ok(EncodeOut { seq: x, head_trajs })
}

/// Sub-step size used by the `residual_euler` head form.
pub const SINDY_ATTENTION_EULER_H: f64 = 1.0;

/// One attention head: returns `(softmax(QK^T / sqrt(kh)) V, scores)`.
fn attention_head<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    head: &HeadParams,
    bound: &BoundParams,
    cfg: &EncoderConfig,
    mask: Option<&Matrix<T>>,
) -> Result<(Var, Var)> {
    let q = tape.matmul(x, bound.var(head.wq))?;
    let k = tape.matmul(x, bound.var(head.wk))?;
    let v = tape.matmul(x, bound.var(head.wv))?;
    let kt = tape.transpose(k);
    let raw = tape.matmul(q, kt)?;
    let scaled = tape.scale(
        raw,
        T::ONE / T::from_f64(Real::sqrt(cfg.head_width() as f64)),
    );
    let scores = match mask {
        Some(m) => tape.add_const(scaled, m)?,
        None => scaled,
    };
    let attn = tape.row_softmax(scores)?;
    let out = tape.matmul(attn, v)?;
    Ok((out, attn))
}

/// Run a recurrent cell across the rows of `x`, collecting outputs into a
/// `[n x d]` sequence. `step` maps (input row, state rows) to
/// (output row, next state rows); initial state is all zeros.
fn rnn_scan<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    n: usize,
    d: usize,
    mut step: impl FnMut(&mut Tape<T>, Var, &[Var]) -> Result<(Var, Vec<Var>)>,
) -> Result<Var> {
    let h0 = tape.leaf(Matrix::zeros(1, d));
    let c0 = tape.leaf(Matrix::zeros(1, d));
    let mut state = alloc::vec![h0, c0];
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        let xt = tape.slice_rows(x, t, 1)?;
        let (out, next) = step(tape, xt, &state)?;
        rows.push(out);
        state = next;
        if state.len() < 2 {
            state.push(c0);
        }
    }
    tape.concat_rows(&rows)
}

fn gru_step<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    h: Var,
    gates: &[GateParams; 3],
    bound: &BoundParams,
) -> Result<Var> {
    let [gr, gu, gc] = gates;
    let r = gate_preact(tape, x, h, gr, bound)?;
    let r = tape.sigmoid(r);
    let u = gate_preact(tape, x, h, gu, bound)?;
    let u = tape.sigmoid(u);

    // Candidate uses the reset-gated hidden state.
    let rh = tape.mul(r, h)?;
    let xa = tape.matmul(x, bound.var(gc.w_x))?;
    let ha = tape.matmul(rh, bound.var(gc.w_h))?;
    let s = tape.add(xa, ha)?;
    let s = tape.add_row(s, bound.var(gc.b))?;
    let c = tape.tanh(s);

    // h' = u ⊙ h + (1 - u) ⊙ c : all-zero parameters give u = 1/2, c = 0,
    // so the hidden state halves each step.
    let uh = tape.mul(u, h)?;
    let (n, d) = tape.value(u).shape();
    let ones = tape.leaf(Matrix::filled(n, d, T::ONE));
    let one_minus_u = tape.sub(ones, u)?;
    let uc = tape.mul(one_minus_u, c)?;
    tape.add(uh, uc)
}

fn lstm_step<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    h: Var,
    c: Var,
    gates: &[GateParams; 4],
    bound: &BoundParams,
) -> Result<(Var, Var)> {
    let [gi, gf, go, gg] = gates;
    let i = gate_preact(tape, x, h, gi, bound)?;
    let i = tape.sigmoid(i);
    let f = gate_preact(tape, x, h, gf, bound)?;
    let f = tape.sigmoid(f);
    let o = gate_preact(tape, x, h, go, bound)?;
    let o = tape.sigmoid(o);
    let g = gate_preact(tape, x, h, gg, bound)?;
    let g = tape.tanh(g);

    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let cn = tape.add(fc, ig)?;
    let tc = tape.tanh(cn);
    let hn = tape.mul(o, tc)?;
    Ok((hn, cn))
}

fn gate_preact<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    h: Var,
    gate: &GateParams,
    bound: &BoundParams,
) -> Result<Var> {
    let xa = tape.matmul(x, bound.var(gate.w_x))?;
    let ha = tape.matmul(h, bound.var(gate.w_h))?;
    let s = tape.add(xa, ha)?;
    tape.add_row(s, bound.var(gate.b))
}

/// Names of all per-head coefficient parameters in layer-major order,
/// with their `(layer, head)` labels.
pub fn head_xi_names(cfg: &EncoderConfig) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    if cfg.variant == EncoderVariant::TransformerSindy {
        for l in 0..cfg.n_layers {
            for h in 0..cfg.n_heads {
                out.push((l, h, format!("enc.l{l}.h{h}.xi")));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn build<T: Real>(
        cfg: &EncoderConfig,
        n_sensors: usize,
        seed: u64,
    ) -> (ParamStore<T>, EncoderParams) {
        let mut store = ParamStore::new(seed);
        let eparams = register_encoder(cfg, n_sensors, &mut store).unwrap();
        (store, eparams)
    }

    fn run_encoder(
        cfg: &EncoderConfig,
        store: &ParamStore<f64>,
        eparams: &EncoderParams,
        window: Matrix<f64>,
    ) -> Matrix<f64> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let w = tape.leaf(window);
        // Tests here never use sindy variants (those need masked xi vars and
        // are exercised through the model).
        let out = encode_graph(&mut tape, cfg, eparams, &bound, w, &[]).unwrap();
        tape.value(out.seq).clone()
    }

    #[test]
    fn zero_parameter_gru_halves_hidden_state() {
        let cfg = EncoderConfig::gru(1, 3);
        let mut store = ParamStore::<f64>::new(1);
        let eparams = register_encoder(&cfg, 2, &mut store).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        // Zero weights mean the input is ignored entirely; with h0 = 0 the
        // state stays exactly zero, so instead check one handmade step: set
        // h via the candidate path by fixing the lift bias.
        // Simpler: drive the recurrence manually through gru_step.
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let h = tape.leaf(Matrix::from_vec(1, 3, alloc::vec![0.8, -0.4, 0.2]));
        let x = tape.leaf(Matrix::zeros(1, 3));
        let gates = match &eparams.layers[0] {
            LayerParams::Gru { gates } => gates,
            _ => unreachable!(),
        };
        let hn = gru_step(&mut tape, x, h, gates, &bound).unwrap();
        assert_eq!(tape.value(hn).data(), &[0.4, -0.2, 0.1]);
    }

    #[test]
    fn lstm_forget_bias_ten_preserves_cell_state() {
        let cfg = EncoderConfig::lstm(1, 3);
        let mut store = ParamStore::<f64>::new(2);
        let eparams = register_encoder(&cfg, 2, &mut store).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        store.value_mut(store.id("enc.l0.b_f").unwrap()).fill(10.0);

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let h = tape.leaf(Matrix::zeros(1, 3));
        let c = tape.leaf(Matrix::from_vec(1, 3, alloc::vec![1.0, -0.5, 0.25]));
        let x = tape.leaf(Matrix::zeros(1, 3));
        let gates = match &eparams.layers[0] {
            LayerParams::Lstm { gates } => gates,
            _ => unreachable!(),
        };
        let (_, cn) = lstm_step(&mut tape, x, h, c, gates, &bound).unwrap();
        for (before, after) in tape.value(c).data().iter().zip(tape.value(cn).data()) {
            assert!(
                (before - after).abs() < 1e-4,
                "cell state should be near-preserved: {before} -> {after}"
            );
        }
    }

    #[test]
    fn permuting_sensors_with_lift_rows_is_invariant() {
        let cfg = EncoderConfig::transformer(2, 8, 2, 16);
        let (mut store, eparams) = build::<f64>(&cfg, 5, 42);
        let mut rng = crate::rng::Pcg32::new(7);
        let window = Matrix::from_fn(6, 5, |_, _| rng.uniform(-1.0, 1.0));
        let base = run_encoder(&cfg, &store, &eparams, window.clone());

        // Apply a permutation to sensor channels and the same permutation to
        // the lift matrix rows.
        let perm = [3usize, 0, 4, 1, 2];
        let permuted_window = Matrix::from_fn(6, 5, |r, c| window[(r, perm[c])]);
        let lift_id = store.id("enc.lift.w").unwrap();
        let lift = store.value(lift_id).clone();
        let permuted_lift = Matrix::from_fn(lift.rows(), lift.cols(), |r, c| lift[(perm[r], c)]);
        *store.value_mut(lift_id) = permuted_lift;
        let permuted = run_encoder(&cfg, &store, &eparams, permuted_window);

        let mut max_diff = 0.0f64;
        for (a, b) in base.data().iter().zip(permuted.data()) {
            max_diff = max_diff.max((a - b).abs());
        }
        assert!(max_diff < 1e-6, "max diff {max_diff}");
    }

    #[test]
    fn positional_encoding_changes_transformer_output() {
        let mut cfg = EncoderConfig::transformer(1, 4, 2, 8);
        let (store, eparams) = build::<f64>(&cfg, 3, 5);
        let mut rng = crate::rng::Pcg32::new(8);
        let window = Matrix::from_fn(4, 3, |_, _| rng.uniform(-1.0, 1.0));
        let with_pe = run_encoder(&cfg, &store, &eparams, window.clone());
        cfg.positional = PositionalEncoding::None;
        let without = run_encoder(&cfg, &store, &eparams, window);
        assert_ne!(with_pe, without);
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        // With causal masking, output row 0 attends only to position 0, so
        // changing the last window row must not affect latent row 0.
        let mut cfg = EncoderConfig::transformer(1, 4, 1, 8);
        cfg.causal = true;
        cfg.positional = PositionalEncoding::None;
        let (store, eparams) = build::<f64>(&cfg, 3, 11);
        let mut rng = crate::rng::Pcg32::new(9);
        let window = Matrix::from_fn(5, 3, |_, _| rng.uniform(-1.0, 1.0));
        let mut tweaked = window.clone();
        tweaked.row_mut(4)[0] += 0.5;

        let a = run_encoder(&cfg, &store, &eparams, window);
        let b = run_encoder(&cfg, &store, &eparams, tweaked);
        for (x, y) in a.row(0).iter().zip(b.row(0)) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_ne!(a.row(4), b.row(4), "last row must see the change");
    }

    #[test]
    fn sinusoidal_table_matches_reference_formula() {
        let pe = sinusoidal_positional_encoding::<f64>(3, 4);
        assert_eq!(pe[(0, 0)], 0.0);
        assert_eq!(pe[(0, 1)], 1.0);
        let expect_21 = (2.0f64 / 10_000.0f64.powf(0.0)).cos();
        assert!((pe[(2, 1)] - expect_21).abs() < 1e-12);
        let expect_23 = (2.0f64 / 10_000.0f64.powf(2.0 / 4.0)).cos();
        assert!((pe[(2, 3)] - expect_23).abs() < 1e-12);
    }

    #[test]
    fn config_validation_catches_bad_heads() {
        let cfg = EncoderConfig::transformer(1, 6, 4, 8);
        assert!(matches!(cfg.validate(), Err(CoreError::InvalidConfig(_))));
        let cfg = EncoderConfig::transformer(1, 6, 2, 8);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn sindy_variant_requires_library() {
        let mut cfg = EncoderConfig::sindy_attention(1, 6, 2, 12, LibrarySpec::linear());
        assert!(cfg.validate().is_ok());
        cfg.library = None;
        assert!(cfg.validate().is_err());
    }
}
