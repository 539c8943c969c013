//! Decoders mapping a latent row `[1 x d_model]` to the full state
//! `[1 x n_state]`.
//!
//! Two families:
//!
//! * **MLP** — `n_layers` affine maps with ReLU between them and a linear
//!   final layer.
//! * **CNN** — an affine lift to a coarse `c0 x (g1/4) x (g2/4)` feature
//!   map, two stride-2 transposed convolutions (kernel 4, padding 1, ReLU
//!   after each) that recover the full grid resolution, and a linear 1x1
//!   convolution down to a single channel. Both grid dimensions must be
//!   multiples of four so the two doublings land exactly on the grid.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{ConvTSpec, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderConfig {
    Mlp {
        /// Number of affine layers (>= 1); `n_layers - 1` of them are
        /// followed by ReLU.
        n_layers: usize,
        hidden_width: usize,
    },
    Cnn {
        /// Channel counts: coarse feature map, after the first upsample,
        /// after the second.
        channels: (usize, usize, usize),
    },
}

impl DecoderConfig {
    pub fn mlp(n_layers: usize, hidden_width: usize) -> Self {
        DecoderConfig::Mlp {
            n_layers,
            hidden_width,
        }
    }

    pub fn cnn(channels: (usize, usize, usize)) -> Self {
        DecoderConfig::Cnn { channels }
    }

    pub fn token(&self) -> &'static str {
        match self {
            DecoderConfig::Mlp { .. } => "mlp",
            DecoderConfig::Cnn { .. } => "cnn",
        }
    }

    pub fn validate(&self, grid_dims: (usize, usize), n_state: usize) -> Result<()> {
        if n_state == 0 {
            return Err(CoreError::InvalidConfig(
                "decoder needs n_state >= 1".into(),
            ));
        }
        match *self {
            DecoderConfig::Mlp {
                n_layers,
                hidden_width,
            } => {
                if n_layers == 0 {
                    return Err(CoreError::InvalidConfig(
                        "MLP decoder needs n_layers >= 1".into(),
                    ));
                }
                if n_layers > 1 && hidden_width == 0 {
                    return Err(CoreError::InvalidConfig(
                        "MLP decoder needs hidden_width >= 1".into(),
                    ));
                }
                Ok(())
            }
            DecoderConfig::Cnn { channels } => {
                let (g1, g2) = grid_dims;
                if g1 % 4 != 0 || g2 % 4 != 0 {
                    return Err(CoreError::InvalidConfig(format!(
                        "CNN decoder needs grid dims divisible by 4, got {g1}x{g2}"
                    )));
                }
                if g1 * g2 != n_state {
                    return Err(CoreError::InvalidConfig(format!(
                        "CNN decoder grid {g1}x{g2} does not cover n_state {n_state}"
                    )));
                }
                if channels.0 == 0 || channels.1 == 0 || channels.2 == 0 {
                    return Err(CoreError::InvalidConfig(
                        "CNN decoder channel counts must be >= 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum DecoderParams {
    Mlp {
        /// `(weight, bias)` per layer in forward order.
        layers: Vec<(ParamId, ParamId)>,
    },
    Cnn {
        lift_w: ParamId,
        lift_b: ParamId,
        ct1_w: ParamId,
        ct1_b: ParamId,
        ct2_w: ParamId,
        ct2_b: ParamId,
        out_w: ParamId,
        out_b: ParamId,
        spec1: ConvTSpec,
        spec2: ConvTSpec,
    },
}

pub fn register_decoder<T: Real>(
    cfg: &DecoderConfig,
    d_model: usize,
    n_state: usize,
    grid_dims: (usize, usize),
    store: &mut ParamStore<T>,
) -> Result<DecoderParams> {
    cfg.validate(grid_dims, n_state)?;
    match *cfg {
        DecoderConfig::Mlp {
            n_layers,
            hidden_width,
        } => {
            let mut layers = Vec::with_capacity(n_layers);
            let mut width_in = d_model;
            for l in 0..n_layers {
                let width_out = if l + 1 == n_layers {
                    n_state
                } else {
                    hidden_width
                };
                let w = store.add_weight(&format!("dec.l{l}.w"), width_in, width_out, width_in)?;
                let b = store.add_zeros(&format!("dec.l{l}.b"), 1, width_out)?;
                layers.push((w, b));
                width_in = width_out;
            }
            Ok(DecoderParams::Mlp { layers })
        }
        DecoderConfig::Cnn { channels } => {
            let (c0, c1, c2) = channels;
            let (g1, g2) = grid_dims;
            let (h0, w0) = (g1 / 4, g2 / 4);
            let spec1 = ConvTSpec {
                in_channels: c0,
                out_channels: c1,
                in_h: h0,
                in_w: w0,
                kernel: 4,
                stride: 2,
                pad: 1,
            };
            let spec2 = ConvTSpec {
                in_channels: c1,
                out_channels: c2,
                in_h: spec1.out_h(),
                in_w: spec1.out_w(),
                kernel: 4,
                stride: 2,
                pad: 1,
            };
            debug_assert_eq!(spec2.out_h(), g1);
            debug_assert_eq!(spec2.out_w(), g2);

            let coarse = c0 * h0 * w0;
            let (w1_rows, w1_cols) = spec1.weight_shape();
            let (w2_rows, w2_cols) = spec2.weight_shape();
            Ok(DecoderParams::Cnn {
                lift_w: store.add_weight("dec.lift.w", d_model, coarse, d_model)?,
                lift_b: store.add_zeros("dec.lift.b", 1, coarse)?,
                // Transposed-conv fan-in: contributions per output pixel are
                // bounded by in_channels * (kernel/stride)^2.
                ct1_w: store.add_weight("dec.ct1.w", w1_rows, w1_cols, c0 * 4)?,
                ct1_b: store.add_zeros("dec.ct1.b", c1, 1)?,
                ct2_w: store.add_weight("dec.ct2.w", w2_rows, w2_cols, c1 * 4)?,
                ct2_b: store.add_zeros("dec.ct2.b", c2, 1)?,
                out_w: store.add_weight("dec.out.w", 1, c2, c2)?,
                out_b: store.add_zeros("dec.out.b", 1, 1)?,
                spec1,
                spec2,
            })
        }
    }
}

/// Build the decoder forward graph: latent row `[1 x d_model]` to state
/// row `[1 x n_state]`.
pub fn decode_graph<T: Real>(
    tape: &mut Tape<T>,
    dparams: &DecoderParams,
    bound: &BoundParams,
    z: Var,
) -> Result<Var> {
    match dparams {
        DecoderParams::Mlp { layers } => {
            let mut h = z;
            for (i, (w, b)) in layers.iter().enumerate() {
                let a = tape.matmul(h, bound.var(*w))?;
                h = tape.add_row(a, bound.var(*b))?;
                if i + 1 < layers.len() {
                    h = tape.relu(h);
                }
            }
            Ok(h)
        }
        DecoderParams::Cnn {
            lift_w,
            lift_b,
            ct1_w,
            ct1_b,
            ct2_w,
            ct2_b,
            out_w,
            out_b,
            spec1,
            spec2,
        } => {
            let lifted = tape.matmul(z, bound.var(*lift_w))?;
            let lifted = tape.add_row(lifted, bound.var(*lift_b))?;
            let fm = tape.reshape(lifted, spec1.in_channels, spec1.in_h * spec1.in_w)?;

            let up1 = tape.conv_transpose2d(fm, bound.var(*ct1_w), *spec1)?;
            let up1 = tape.add_col(up1, bound.var(*ct1_b))?;
            let up1 = tape.relu(up1);

            let up2 = tape.conv_transpose2d(up1, bound.var(*ct2_w), *spec2)?;
            let up2 = tape.add_col(up2, bound.var(*ct2_b))?;
            let up2 = tape.relu(up2);

            // 1x1 convolution = linear mix of channels at every pixel.
            let mixed = tape.matmul(bound.var(*out_w), up2)?;
            tape.add_col(mixed, bound.var(*out_b))
        }
    }
}
