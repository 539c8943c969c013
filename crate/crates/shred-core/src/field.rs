//! Spatio-temporal fields and dataset preparation: normalization,
//! chronological splits, sensor sampling, lag-window extraction, synthetic
//! generators, and the randomized-SVD reduced-order model.
//!
//! A [`SpatioTemporalField`] stores one scalar field time-major as
//! `[n_time x n_cells]` in `f32`, with a validity mask over grid cells
//! (ocean vs. land, say). Masked cells are pinned to zero in storage;
//! sensors are only ever sampled from valid cells and losses only count
//! valid cells. Heavier numerics (ROM bases, generator integration) run in
//! `f64` and are rounded to storage precision at the end.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::linalg::{expm, rsvd, DEFAULT_OVERSAMPLE, DEFAULT_POWER_ITERS};
use crate::mat::Matrix;
use crate::real::Real;
use crate::rng::Pcg32;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalField {
    pub name: String,
    /// `[n_time x n_cells]`, row t = flattened grid snapshot at step t.
    pub values: Matrix<f32>,
    pub grid_dims: (usize, usize),
    /// Per-cell validity; `false` cells hold 0.0 and never carry sensors.
    pub mask: Vec<bool>,
    /// Physical time between consecutive rows.
    pub dt: f64,
}

impl SpatioTemporalField {
    pub fn new(
        name: impl Into<String>,
        values: Matrix<f32>,
        grid_dims: (usize, usize),
        mask: Vec<bool>,
        dt: f64,
    ) -> Result<Self> {
        let n_cells = grid_dims.0 * grid_dims.1;
        if values.cols() != n_cells {
            return Err(CoreError::ShapeMismatch {
                op: "field grid",
                left: (values.rows(), values.cols()),
                right: (values.rows(), n_cells),
            });
        }
        if mask.len() != n_cells {
            return Err(CoreError::InvalidConfig(format!(
                "mask length {} does not match {} grid cells",
                mask.len(),
                n_cells
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "dt must be positive and finite, got {dt}"
            )));
        }
        if !values.all_finite() {
            return Err(CoreError::NonFinite("field values".into()));
        }
        let mut values = values;
        for t in 0..values.rows() {
            for (v, &keep) in values.row_mut(t).iter_mut().zip(&mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        Ok(SpatioTemporalField {
            name: name.into(),
            values,
            grid_dims,
            mask,
            dt,
        })
    }

    /// Field with every cell valid.
    pub fn dense(
        name: impl Into<String>,
        values: Matrix<f32>,
        grid_dims: (usize, usize),
        dt: f64,
    ) -> Result<Self> {
        let n_cells = grid_dims.0 * grid_dims.1;
        Self::new(name, values, grid_dims, vec![true; n_cells], dt)
    }

    pub fn n_time(&self) -> usize {
        self.values.rows()
    }

    pub fn n_cells(&self) -> usize {
        self.values.cols()
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| if m { Some(i) } else { None })
            .collect()
    }

    /// Copy of the payload in `f64` (ROM and diagnostics).
    pub fn to_f64(&self) -> Matrix<f64> {
        self.values.convert()
    }
}

// ---------------------------------------------------------------------------
// Normalization.

/// Global min-max scaler fit over valid cells; masked cells stay zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    pub min: f32,
    pub max: f32,
}

impl Scaler {
    /// Fit over all rows, or over `rows.0..rows.1` only (fit on the train
    /// segment to avoid leaking test statistics).
    pub fn fit(field: &SpatioTemporalField, rows: Option<(usize, usize)>) -> Result<Self> {
        let (lo, hi) = rows.unwrap_or((0, field.n_time()));
        if lo >= hi || hi > field.n_time() {
            return Err(CoreError::InvalidConfig(format!(
                "scaler row range {lo}..{hi} invalid for {} rows",
                field.n_time()
            )));
        }
        let mut min = f32::INFINITY;
        let mut max = f32::NEG_INFINITY;
        for t in lo..hi {
            for (v, &keep) in field.values.row(t).iter().zip(&field.mask) {
                if keep {
                    min = min.min(*v);
                    max = max.max(*v);
                }
            }
        }
        if !min.is_finite() || !max.is_finite() {
            return Err(CoreError::InvalidConfig(
                "scaler fit found no valid cells".into(),
            ));
        }
        Ok(Scaler { min, max })
    }

    fn factor(&self) -> f32 {
        let span = self.max - self.min;
        if span > 0.0 {
            1.0 / span
        } else {
            0.0 // constant field: normalize() sends everything to 0
        }
    }

    /// Map valid cells through `(x - min) / (max - min)`.
    pub fn normalize(&self, field: &SpatioTemporalField) -> Result<SpatioTemporalField> {
        let f = self.factor();
        let mut values = field.values.clone();
        for t in 0..values.rows() {
            for (v, &keep) in values.row_mut(t).iter_mut().zip(&field.mask) {
                if keep {
                    *v = (*v - self.min) * f;
                }
            }
        }
        SpatioTemporalField::new(
            field.name.clone(),
            values,
            field.grid_dims,
            field.mask.clone(),
            field.dt,
        )
    }

    /// Inverse map back to original units.
    pub fn denormalize_value(&self, x: f32) -> f32 {
        if self.max > self.min {
            x * (self.max - self.min) + self.min
        } else {
            self.min
        }
    }
}

// ---------------------------------------------------------------------------
// Chronological split.

/// Split a field into contiguous train/validation/test segments. Boundaries
/// land at `floor(n * cumulative_fraction)`; the fractions must be
/// non-negative and sum to one.
pub fn chronological_split(
    field: &SpatioTemporalField,
    fractions: (f64, f64, f64),
) -> Result<(
    SpatioTemporalField,
    SpatioTemporalField,
    SpatioTemporalField,
)> {
    let (a, b, c) = fractions;
    if a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(CoreError::InvalidConfig(
            "split fractions must be non-negative".into(),
        ));
    }
    let sum = a + b + c;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidConfig(format!(
            "split fractions must sum to 1, got {sum}"
        )));
    }
    let n = field.n_time();
    let cut1 = (n as f64 * a) as usize;
    let cut2 = (n as f64 * (a + b)) as usize;

    let take = |lo: usize, hi: usize, tag: &str| -> Result<SpatioTemporalField> {
        if lo >= hi {
            return Err(CoreError::TooShort {
                n_time: hi - lo.min(hi),
                required: 1,
            });
        }
        let mut values = Matrix::zeros(hi - lo, field.n_cells());
        for (dst, t) in (lo..hi).enumerate() {
            values.row_mut(dst).copy_from_slice(field.values.row(t));
        }
        SpatioTemporalField::new(
            format!("{}.{tag}", field.name),
            values,
            field.grid_dims,
            field.mask.clone(),
            field.dt,
        )
    };
    Ok((
        take(0, cut1, "train")?,
        take(cut1, cut2, "val")?,
        take(cut2, n, "test")?,
    ))
}

// ---------------------------------------------------------------------------
// Sensors and lag windows.

/// Draw `n` distinct sensor locations uniformly from the valid cells.
pub fn sample_sensors(field: &SpatioTemporalField, n: usize, seed: u64) -> Result<Vec<usize>> {
    let valid = field.valid_indices();
    if n == 0 {
        return Err(CoreError::InvalidConfig("need at least one sensor".into()));
    }
    if n > valid.len() {
        return Err(CoreError::SensorOverflow {
            requested: n,
            available: valid.len(),
        });
    }
    let mut rng = Pcg32::new(seed);
    let picks = rng.sample_indices(valid.len(), n);
    Ok(picks.into_iter().map(|i| valid[i]).collect())
}

/// Supervised pairs: a lag window of sensor readings and the full-state
/// snapshot it should reconstruct (or forecast, for `target_offset > 0`).
#[derive(Debug, Clone)]
pub struct LaggedDataset<T: Real> {
    /// Each `[k_lag x n_sensors]`.
    pub inputs: Vec<Matrix<T>>,
    /// Each `[1 x n_cells]`.
    pub targets: Vec<Matrix<T>>,
    pub k_lag: usize,
    /// 0 reconstructs the window's final step, `d` forecasts `d` steps on.
    pub target_offset: usize,
    pub sensors: Vec<usize>,
    pub mask: Vec<bool>,
    pub grid_dims: (usize, usize),
}

impl<T: Real> LaggedDataset<T> {
    pub fn new(
        field: &SpatioTemporalField,
        sensors: &[usize],
        k_lag: usize,
        target_offset: usize,
    ) -> Result<Self> {
        if k_lag == 0 {
            return Err(CoreError::InvalidConfig("k_lag must be >= 1".into()));
        }
        if sensors.is_empty() {
            return Err(CoreError::InvalidConfig("need at least one sensor".into()));
        }
        for (i, &s) in sensors.iter().enumerate() {
            if s >= field.n_cells() {
                return Err(CoreError::InvalidConfig(format!(
                    "sensor index {s} out of range for {} cells",
                    field.n_cells()
                )));
            }
            if !field.mask[s] {
                return Err(CoreError::InvalidConfig(format!(
                    "sensor index {s} sits on a masked cell"
                )));
            }
            if sensors[..i].contains(&s) {
                return Err(CoreError::InvalidConfig(format!(
                    "duplicate sensor index {s}"
                )));
            }
        }
        let required = k_lag + target_offset;
        let n_time = field.n_time();
        if n_time < required {
            return Err(CoreError::TooShort { n_time, required });
        }
        let n_samples = n_time - k_lag - target_offset + 1;

        let mut inputs = Vec::with_capacity(n_samples);
        let mut targets = Vec::with_capacity(n_samples);
        for s in 0..n_samples {
            let window = Matrix::from_fn(k_lag, sensors.len(), |r, c| {
                T::from_f64(field.values[(s + r, sensors[c])] as f64)
            });
            let trow = s + k_lag - 1 + target_offset;
            let target = Matrix::from_fn(1, field.n_cells(), |_, c| {
                T::from_f64(field.values[(trow, c)] as f64)
            });
            inputs.push(window);
            targets.push(target);
        }
        Ok(LaggedDataset {
            inputs,
            targets,
            k_lag,
            target_offset,
            sensors: sensors.to_vec(),
            mask: field.mask.clone(),
            grid_dims: field.grid_dims,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }
}

// ---------------------------------------------------------------------------
// Synthetic generators.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticSpec {
    /// Superposed traveling plane waves, periodic in time.
    TravelingWaves {
        grid_dims: (usize, usize),
        n_time: usize,
        dt: f64,
        /// 1..=5 waves.
        n_waves: usize,
        /// Number of steps after which the field repeats exactly.
        period_steps: usize,
    },
    /// Smooth spatial modes driven by a skew-symmetric (energy-preserving)
    /// linear latent system, integrated exactly via the matrix exponential.
    LinearModes {
        grid_dims: (usize, usize),
        n_time: usize,
        dt: f64,
        /// Number of oscillator pairs; latent dimension is `2 * n_modes`.
        n_modes: usize,
    },
    /// Average of the two generators above plus i.i.d. Gaussian noise.
    NoisyMix {
        grid_dims: (usize, usize),
        n_time: usize,
        dt: f64,
        n_waves: usize,
        n_modes: usize,
        period_steps: usize,
        noise_sigma: f64,
    },
}

pub const MAX_WAVES: usize = 5;

fn validate_grid(grid_dims: (usize, usize), n_time: usize, dt: f64) -> Result<()> {
    if grid_dims.0 == 0 || grid_dims.1 == 0 {
        return Err(CoreError::InvalidConfig("grid dims must be >= 1".into()));
    }
    if n_time == 0 {
        return Err(CoreError::InvalidConfig("n_time must be >= 1".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(CoreError::InvalidConfig(format!(
            "dt must be positive and finite, got {dt}"
        )));
    }
    Ok(())
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SpatioTemporalField> {
    match *spec {
        SyntheticSpec::TravelingWaves {
            grid_dims,
            n_time,
            dt,
            n_waves,
            period_steps,
        } => traveling_waves(grid_dims, n_time, dt, n_waves, period_steps, seed),
        SyntheticSpec::LinearModes {
            grid_dims,
            n_time,
            dt,
            n_modes,
        } => linear_modes(grid_dims, n_time, dt, n_modes, seed),
        SyntheticSpec::NoisyMix {
            grid_dims,
            n_time,
            dt,
            n_waves,
            n_modes,
            period_steps,
            noise_sigma,
        } => {
            let waves = traveling_waves(grid_dims, n_time, dt, n_waves, period_steps, seed)?;
            let modes = linear_modes(grid_dims, n_time, dt, n_modes, seed.wrapping_add(1))?;
            if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
                return Err(CoreError::InvalidConfig(format!(
                    "noise_sigma must be non-negative, got {noise_sigma}"
                )));
            }
            let mut rng = Pcg32::with_stream(seed, 0x006d_6978);
            let values = Matrix::from_fn(n_time, waves.n_cells(), |t, c| {
                let mix = 0.5 * (waves.values[(t, c)] as f64 + modes.values[(t, c)] as f64);
                let noise = if noise_sigma > 0.0 {
                    noise_sigma * rng.normal_f64()
                } else {
                    0.0
                };
                (mix + noise) as f32
            });
            SpatioTemporalField::dense("mix", values, grid_dims, dt)
        }
    }
}

fn traveling_waves(
    grid_dims: (usize, usize),
    n_time: usize,
    dt: f64,
    n_waves: usize,
    period_steps: usize,
    seed: u64,
) -> Result<SpatioTemporalField> {
    validate_grid(grid_dims, n_time, dt)?;
    if n_waves == 0 || n_waves > MAX_WAVES {
        return Err(CoreError::InvalidConfig(format!(
            "n_waves must be in 1..={MAX_WAVES}, got {n_waves}"
        )));
    }
    if period_steps == 0 {
        return Err(CoreError::InvalidConfig("period_steps must be >= 1".into()));
    }
    let tau = 2.0 * core::f64::consts::PI;
    let mut rng = Pcg32::new(seed);
    struct Wave {
        amp: f64,
        q1: f64,
        q2: f64,
        m: f64,
        phase: f64,
    }
    let waves: Vec<Wave> = (0..n_waves)
        .map(|_| Wave {
            amp: rng.uniform(0.4, 1.0),
            q1: rng.below(3) as f64 + 1.0,
            q2: rng.below(3) as f64 + 1.0,
            // Integer temporal harmonics keep the field `period_steps`-periodic.
            m: rng.below(3) as f64 + 1.0,
            phase: rng.uniform(0.0, tau),
        })
        .collect();

    let (g1, g2) = grid_dims;
    let values = Matrix::from_fn(n_time, g1 * g2, |t, c| {
        let x = (c / g2) as f64 / g1 as f64;
        let y = (c % g2) as f64 / g2 as f64;
        let mut u = 0.0;
        for w in &waves {
            let phase =
                tau * (w.q1 * x + w.q2 * y) - tau * w.m * t as f64 / period_steps as f64 + w.phase;
            u += w.amp * Real::sin(phase);
        }
        u as f32
    });
    SpatioTemporalField::dense("waves", values, grid_dims, dt)
}

/// Random skew-symmetric block-diagonal system `z' = A z` (pure rotations,
/// energy preserved) and a unit-norm initial state.
pub fn linear_latent_system(n_modes: usize, seed: u64) -> Result<(Matrix<f64>, Vec<f64>)> {
    if n_modes == 0 {
        return Err(CoreError::InvalidConfig("n_modes must be >= 1".into()));
    }
    let d = 2 * n_modes;
    let mut rng = Pcg32::new(seed);
    let mut a = Matrix::<f64>::zeros(d, d);
    for j in 0..n_modes {
        let omega = rng.uniform(0.5, 2.5);
        a[(2 * j, 2 * j + 1)] = -omega;
        a[(2 * j + 1, 2 * j)] = omega;
    }
    let mut z0: Vec<f64> = (0..d).map(|_| rng.normal_f64()).collect();
    let norm = Real::sqrt(z0.iter().map(|v| v * v).sum::<f64>());
    for v in &mut z0 {
        *v /= norm;
    }
    Ok((a, z0))
}

/// Integrate `z' = A z` exactly: one propagator `expm(A dt)` applied per
/// step. Returns the trajectory `[n_time x d]` starting at `z0`.
pub fn linear_latent_trajectory(
    a: &Matrix<f64>,
    z0: &[f64],
    n_time: usize,
    dt: f64,
) -> Result<Matrix<f64>> {
    let d = z0.len();
    if a.shape() != (d, d) {
        return Err(CoreError::ShapeMismatch {
            op: "latent system",
            left: a.shape(),
            right: (d, d),
        });
    }
    let mut scaled = a.clone();
    scaled.scale_assign(dt);
    let prop = expm(&scaled)?;
    let mut traj = Matrix::zeros(n_time, d);
    let mut z = z0.to_vec();
    for t in 0..n_time {
        traj.row_mut(t).copy_from_slice(&z);
        let mut next = vec![0.0f64; d];
        for (i, nv) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..d {
                acc += prop[(i, j)] * z[j];
            }
            *nv = acc;
        }
        z = next;
    }
    Ok(traj)
}

/// Smooth low-frequency spatial patterns, one column per latent dimension.
pub fn smooth_modes(grid_dims: (usize, usize), d: usize, seed: u64) -> Matrix<f64> {
    let tau = 2.0 * core::f64::consts::PI;
    let (g1, g2) = grid_dims;
    let mut rng = Pcg32::with_stream(seed, 0x6d6f_6465);
    let mut params = Vec::with_capacity(d);
    for _ in 0..d {
        params.push((
            rng.uniform(0.5, 2.0),
            rng.uniform(0.5, 2.0),
            rng.uniform(0.0, tau),
            rng.uniform(0.0, tau),
        ));
    }
    Matrix::from_fn(g1 * g2, d, |c, j| {
        let (a1, a2, p1, p2) = params[j];
        let x = ((c / g2) as f64 + 0.5) / g1 as f64;
        let y = ((c % g2) as f64 + 0.5) / g2 as f64;
        Real::sin(tau * a1 * x + p1) * Real::sin(tau * a2 * y + p2)
    })
}

fn linear_modes(
    grid_dims: (usize, usize),
    n_time: usize,
    dt: f64,
    n_modes: usize,
    seed: u64,
) -> Result<SpatioTemporalField> {
    validate_grid(grid_dims, n_time, dt)?;
    let (a, z0) = linear_latent_system(n_modes, seed)?;
    let traj = linear_latent_trajectory(&a, &z0, n_time, dt)?;
    let modes = smooth_modes(grid_dims, 2 * n_modes, seed);
    let field = traj.matmul_nt(&modes); // [T x d] * [cells x d]^T
    debug_assert_eq!(field.shape(), (n_time, grid_dims.0 * grid_dims.1));
    let values = Matrix::from_fn(n_time, field.cols(), |t, c| field[(t, c)] as f32);
    SpatioTemporalField::dense("modes", values, grid_dims, dt)
}

/// Horizontally concatenate aligned fields into one wide field on a
/// `(1, total_cells)` grid — e.g. stacking per-field ROM coefficients.
pub fn concat_fields(fields: &[SpatioTemporalField]) -> Result<SpatioTemporalField> {
    let first = fields
        .first()
        .ok_or_else(|| CoreError::InvalidConfig("concat needs at least one field".into()))?;
    let n_time = first.n_time();
    let mut total = 0usize;
    for f in fields {
        if f.n_time() != n_time {
            return Err(CoreError::ShapeMismatch {
                op: "concat fields",
                left: (f.n_time(), f.n_cells()),
                right: (n_time, f.n_cells()),
            });
        }
        if (f.dt - first.dt).abs() > 1e-12 {
            return Err(CoreError::InvalidConfig(
                "concatenated fields must share dt".into(),
            ));
        }
        total += f.n_cells();
    }
    let mut values = Matrix::zeros(n_time, total);
    let mut mask = Vec::with_capacity(total);
    for f in fields {
        mask.extend_from_slice(&f.mask);
    }
    for t in 0..n_time {
        let row = values.row_mut(t);
        let mut off = 0;
        for f in fields {
            row[off..off + f.n_cells()].copy_from_slice(f.values.row(t));
            off += f.n_cells();
        }
    }
    let mut name = String::new();
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            name.push('+');
        }
        name.push_str(&f.name);
    }
    SpatioTemporalField::new(name, values, (1, total), mask, first.dt)
}

// ---------------------------------------------------------------------------
// Reduced-order model.

/// Truncated POD basis from a randomized SVD of the snapshot matrix.
#[derive(Debug, Clone)]
pub struct RomBasis {
    /// `[n_cells x rank]`, orthonormal columns.
    pub modes: Matrix<f64>,
    pub singular_values: Vec<f64>,
    pub grid_dims: (usize, usize),
    pub mask: Vec<bool>,
    pub source_name: String,
    pub dt: f64,
}

/// Project a field onto its leading `rank` right singular vectors. Returns
/// the coefficient time series (a dense field on a `(1, rank)` grid) and
/// the basis needed to reconstruct full snapshots.
pub fn rom_project(
    field: &SpatioTemporalField,
    rank: usize,
    seed: u64,
) -> Result<(SpatioTemporalField, RomBasis)> {
    let x = field.to_f64();
    let svd = rsvd(&x, rank, DEFAULT_OVERSAMPLE, DEFAULT_POWER_ITERS, seed)?;
    // Coefficients a_t = x_t V; V spans the dominant spatial subspace.
    let coeffs = x.matmul(&svd.v);
    let values = Matrix::from_fn(coeffs.rows(), rank, |t, j| coeffs[(t, j)] as f32);
    let coeff_field = SpatioTemporalField::dense(
        format!("{}.rom{rank}", field.name),
        values,
        (1, rank),
        field.dt,
    )?;
    Ok((
        coeff_field,
        RomBasis {
            modes: svd.v,
            singular_values: svd.s,
            grid_dims: field.grid_dims,
            mask: field.mask.clone(),
            source_name: field.name.clone(),
            dt: field.dt,
        },
    ))
}

/// Expand ROM coefficients back to full snapshots: `x_t = a_t V^T`.
pub fn rom_reconstruct(
    coeffs: &SpatioTemporalField,
    basis: &RomBasis,
) -> Result<SpatioTemporalField> {
    let rank = basis.modes.cols();
    if coeffs.n_cells() != rank {
        return Err(CoreError::ShapeMismatch {
            op: "rom reconstruct",
            left: (coeffs.n_time(), coeffs.n_cells()),
            right: (coeffs.n_time(), rank),
        });
    }
    let a = coeffs.to_f64();
    let x = a.matmul_nt(&basis.modes);
    let values = Matrix::from_fn(x.rows(), x.cols(), |t, c| x[(t, c)] as f32);
    SpatioTemporalField::new(
        basis.source_name.clone(),
        values,
        basis.grid_dims,
        basis.mask.clone(),
        basis.dt,
    )
}
