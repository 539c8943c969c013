//! Training harness: loss composition, the mini-batch loop with pruning and
//! best-checkpoint selection, evaluation, and the hyperparameter-sweep
//! bookkeeping (cell enumeration and order-independent aggregation).
//!
//! One run is fully deterministic given its seeds: parameter init is
//! name-keyed off the init seed, batch order comes from a per-epoch stream
//! of the shuffle seed, and nothing reads a clock. Wall time is measured by
//! the caller (this crate has no time source) and recorded next to the run.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use crate::decoder::DecoderConfig;
use crate::error::{CoreError, Result};
use crate::field::LaggedDataset;
use crate::mat::Matrix;
use crate::model::{BoundModel, ForwardOut, ShredModel, SystemLabel};
use crate::optim::{Optimizer, OptimizerKind};
use crate::real::Real;
use crate::rng::{derive_seed, Pcg32};
use crate::sindy::{sindy_loss_graph, SymbolicSystem};
use crate::tape::{Tape, Var};

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_LAMBDA_SINDY: f64 = 0.1;
pub const DEFAULT_LAMBDA_REG: f64 = 1e-3;
pub const DEFAULT_PRUNE_EVERY: usize = 10;
pub const DEFAULT_PRUNE_TAU: f64 = 0.05;
pub const DEFAULT_MIN_CHECKPOINT_EPOCH: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub n_epochs: usize,
    pub batch_size: usize,
    /// Weight of the SINDy consistency loss relative to reconstruction.
    pub lambda_sindy: f64,
    /// L2 surrogate weight on active coefficients.
    pub lambda_reg: f64,
    /// Prune every this many epochs; 0 disables pruning.
    pub prune_every: usize,
    pub prune_tau: f64,
    /// 1-based epoch from which checkpoints are eligible (clamped to
    /// `n_epochs`).
    pub min_checkpoint_epoch: usize,
    pub optimizer: OptimizerKind,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn new(lr: f64, n_epochs: usize, shuffle_seed: u64) -> Self {
        TrainConfig {
            lr,
            n_epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            lambda_sindy: DEFAULT_LAMBDA_SINDY,
            lambda_reg: DEFAULT_LAMBDA_REG,
            prune_every: DEFAULT_PRUNE_EVERY,
            prune_tau: DEFAULT_PRUNE_TAU,
            min_checkpoint_epoch: DEFAULT_MIN_CHECKPOINT_EPOCH,
            optimizer: OptimizerKind::Adam,
            shuffle_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.n_epochs == 0 {
            return Err(CoreError::InvalidConfig("n_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::InvalidConfig("batch_size must be >= 1".into()));
        }
        for (name, v) in [
            ("lambda_sindy", self.lambda_sindy),
            ("lambda_reg", self.lambda_reg),
            ("prune_tau", self.prune_tau),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.min_checkpoint_epoch == 0 {
            return Err(CoreError::InvalidConfig(
                "min_checkpoint_epoch is 1-based and must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Master-seed fan-out: independent streams for data, init, and shuffling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedBundle {
    pub data_seed: u64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

pub fn seed_bundle(master: u64) -> SeedBundle {
    SeedBundle {
        data_seed: derive_seed(master, 0),
        init_seed: derive_seed(master, 1),
        shuffle_seed: derive_seed(master, 2),
    }
}

/// Outcome of one training run. The model passed to [`train`] is left
/// restored to the best checkpoint.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// 1-based epoch of the restored checkpoint.
    pub best_epoch: usize,
    pub best_val: f64,
    pub test_mse: f64,
    pub param_count: usize,
    /// Extracted head ODEs for SINDy-attention encoders.
    pub symbolic: Option<SymbolicSystem>,
    /// Filled in by the caller; this crate has no clock.
    pub wall_s: f64,
}

/// Reconstruction loss masked to valid cells: `sum((pred - target)^2
/// over valid) / n_valid`.
pub fn masked_mse_graph<T: Real>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Matrix<T>,
    mask_row: &Rc<Matrix<T>>,
    n_valid: usize,
) -> Result<Var> {
    if n_valid == 0 {
        return Err(CoreError::InvalidConfig("mask has no valid cells".into()));
    }
    let t = tape.leaf(target.clone());
    let diff = tape.sub(pred, t)?;
    let masked = tape.mul_const(diff, Rc::clone(mask_row))?;
    let sq = tape.mul(masked, masked)?;
    let total = tape.sum_all(sq);
    Ok(tape.scale(total, T::ONE / T::from_f64(n_valid as f64)))
}

/// Composed per-sample loss: masked reconstruction MSE plus
/// `lambda_sindy * sum(sindy_loss)` over every latent system when the
/// encoder enables the SINDy loss; plain MSE otherwise.
#[allow(clippy::too_many_arguments)]
pub fn compose_loss<T: Real>(
    tape: &mut Tape<T>,
    model: &ShredModel<T>,
    bm: &BoundModel,
    fwd: &ForwardOut,
    target: &Matrix<T>,
    mask_row: &Rc<Matrix<T>>,
    n_valid: usize,
    lambda_sindy: f64,
    lambda_reg: f64,
) -> Result<Var> {
    let mse = masked_mse_graph(tape, fwd.pred, target, mask_row, n_valid)?;
    if !model.cfg.encoder.use_sindy_loss || lambda_sindy == 0.0 {
        return Ok(mse);
    }
    let mut total = mse;
    for (i, sys) in model.systems.iter().enumerate() {
        let loss = sindy_loss_graph(
            tape,
            fwd.sys_trajs[i],
            bm.masked_xi[i],
            &sys.spec,
            model.sindy_h_step(),
            model.cfg.sindy_k_steps,
            lambda_reg,
        )?;
        let weighted = tape.scale(loss, T::from_f64(lambda_sindy));
        total = tape.add(total, weighted)?;
    }
    Ok(total)
}

/// Mean masked reconstruction MSE over a dataset (no gradients).
pub fn evaluate<T: Real>(model: &ShredModel<T>, data: &LaggedDataset<T>) -> Result<f64> {
    if data.n_samples() == 0 {
        return Err(CoreError::TooShort {
            n_time: 0,
            required: 1,
        });
    }
    let n_valid = data.mask.iter().filter(|&&m| m).count();
    if n_valid == 0 {
        return Err(CoreError::InvalidConfig("mask has no valid cells".into()));
    }
    let mut total = 0.0f64;
    for (window, target) in data.inputs.iter().zip(&data.targets) {
        let pred = model.predict(window)?;
        let mut sse = 0.0f64;
        for ((p, t), &keep) in pred.data().iter().zip(target.data()).zip(&data.mask) {
            if keep {
                let d = p.to_f64() - t.to_f64();
                sse += d * d;
            }
        }
        total += sse / n_valid as f64;
    }
    Ok(total / data.n_samples() as f64)
}

/// Lowest validation loss at or after the (1-based, clamped) minimum
/// checkpoint epoch; earlier epochs are warm-up and ignored. Returns the
/// 1-based epoch and its loss.
pub fn select_best_epoch(val_losses: &[f64], min_checkpoint_epoch: usize) -> (usize, f64) {
    debug_assert!(!val_losses.is_empty());
    let start = min_checkpoint_epoch.max(1).min(val_losses.len());
    let mut best_epoch = start;
    let mut best = val_losses[start - 1];
    for (i, &v) in val_losses.iter().enumerate().skip(start - 1) {
        if v < best {
            best = v;
            best_epoch = i + 1;
        }
    }
    (best_epoch, best)
}

fn mask_row_matrix<T: Real>(mask: &[bool]) -> Matrix<T> {
    Matrix::from_fn(1, mask.len(), |_, c| if mask[c] { T::ONE } else { T::ZERO })
}

/// Parameter values and prune masks captured at the best epoch so far.
struct BestCheckpoint<T: Real> {
    epoch: usize,
    val: f64,
    params: Vec<(String, Matrix<T>)>,
    masks: Vec<Vec<bool>>,
}

/// Mini-batch training with pruning and best-checkpoint restoration.
pub fn train<T: Real>(
    model: &mut ShredModel<T>,
    train_data: &LaggedDataset<T>,
    val_data: &LaggedDataset<T>,
    test_data: &LaggedDataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    if train_data.n_samples() == 0 {
        return Err(CoreError::TooShort {
            n_time: 0,
            required: 1,
        });
    }
    if model.cfg.encoder.use_sindy_loss && model.cfg.k_lag < 2 {
        return Err(CoreError::InvalidConfig(
            "the SINDy loss needs k_lag >= 2 (a trajectory to roll out)".into(),
        ));
    }
    let n_valid = train_data.mask.iter().filter(|&&m| m).count();
    let mask_row: Rc<Matrix<T>> = Rc::new(mask_row_matrix(&train_data.mask));

    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, &model.params);
    let min_epoch = cfg.min_checkpoint_epoch.min(cfg.n_epochs).max(1);

    let mut train_losses = Vec::with_capacity(cfg.n_epochs);
    let mut val_losses = Vec::with_capacity(cfg.n_epochs);
    let mut best: Option<BestCheckpoint<T>> = None;

    let n = train_data.n_samples();
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.n_epochs {
        let mut rng = Pcg32::with_stream(cfg.shuffle_seed, epoch as u64);
        rng.shuffle(&mut indices);

        let mut epoch_loss = 0.0f64;
        for (batch_idx, batch) in indices.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bm = model.bind(&mut tape)?;

            let mut sample_losses = Vec::with_capacity(batch.len());
            for &s in batch {
                let w = tape.leaf(train_data.inputs[s].clone());
                let fwd = model.forward(&mut tape, &bm, w)?;
                let loss = compose_loss(
                    &mut tape,
                    model,
                    &bm,
                    &fwd,
                    &train_data.targets[s],
                    &mask_row,
                    n_valid,
                    cfg.lambda_sindy,
                    cfg.lambda_reg,
                )?;
                sample_losses.push(loss);
            }
            let mut batch_loss = if sample_losses.len() == 1 {
                sample_losses[0]
            } else {
                let sum = tape.concat_cols(&sample_losses)?;
                let total = tape.sum_all(sum);
                tape.scale(total, T::ONE / T::from_f64(sample_losses.len() as f64))
            };

            // Plain L2 on active head coefficients when the SINDy loss is
            // off: the pruning schedule still needs a shrinkage force.
            if !model.cfg.encoder.use_sindy_loss && cfg.lambda_reg > 0.0 {
                for (i, sys) in model.systems.iter().enumerate() {
                    if matches!(sys.label, SystemLabel::Head { .. }) {
                        let xi = bm.masked_xi[i];
                        let sq = tape.mul(xi, xi)?;
                        let l2 = tape.sum_all(sq);
                        let weighted = tape.scale(l2, T::from_f64(cfg.lambda_reg));
                        batch_loss = tape.add(batch_loss, weighted)?;
                    }
                }
            }

            let loss_value = tape.value(batch_loss)[(0, 0)].to_f64();
            if !loss_value.is_finite() {
                return Err(CoreError::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss_value * batch.len() as f64;

            tape.backward(batch_loss)?;
            model.params.zero_grad();
            model.params.accumulate_grads(&tape, &bm.bound);
            drop(tape);
            opt.step(&mut model.params);
        }
        train_losses.push(epoch_loss / n as f64);

        if cfg.prune_every > 0 && epoch % cfg.prune_every == 0 {
            model.prune(cfg.prune_tau);
            for sys in &model.systems {
                opt.zero_moments(sys.xi, &sys.mask);
            }
        }

        let val = evaluate(model, val_data)?;
        if !val.is_finite() {
            return Err(CoreError::NonFinite(format!(
                "validation loss at epoch {epoch}"
            )));
        }
        val_losses.push(val);

        if epoch >= min_epoch {
            let is_better = best.as_ref().map(|b| val < b.val).unwrap_or(true);
            if is_better {
                best = Some(BestCheckpoint {
                    epoch,
                    val,
                    params: model.params.snapshot(),
                    masks: model.systems.iter().map(|s| s.mask.clone()).collect(),
                });
            }
        }
    }

    let best = best.expect("min_epoch is clamped to n_epochs, so at least one epoch is eligible");
    model.params.restore(&best.params)?;
    model.restore_masks(&best.masks)?;

    let test_mse = evaluate(model, test_data)?;
    Ok(TrainRun {
        train_losses,
        val_losses,
        best_epoch: best.epoch,
        best_val: best.val,
        test_mse,
        param_count: model.param_count(),
        symbolic: model.extract().ok(),
        wall_s: 0.0,
    })
}

// ---------------------------------------------------------------------------
// Sweep bookkeeping.

/// The eight encoder rows of the experiment-1 grid: each base encoder with
/// and without the SINDy latent loss (`sl-` prefix), plus the
/// SINDy-attention transformers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderLabel {
    Lstm,
    SlLstm,
    Gru,
    SlGru,
    T,
    SlT,
    SaT,
    SaslT,
}

impl EncoderLabel {
    pub const ALL: [EncoderLabel; 8] = [
        EncoderLabel::Lstm,
        EncoderLabel::SlLstm,
        EncoderLabel::Gru,
        EncoderLabel::SlGru,
        EncoderLabel::T,
        EncoderLabel::SlT,
        EncoderLabel::SaT,
        EncoderLabel::SaslT,
    ];

    pub fn token(&self) -> &'static str {
        match self {
            EncoderLabel::Lstm => "lstm",
            EncoderLabel::SlLstm => "sl-lstm",
            EncoderLabel::Gru => "gru",
            EncoderLabel::SlGru => "sl-gru",
            EncoderLabel::T => "t",
            EncoderLabel::SlT => "sl-t",
            EncoderLabel::SaT => "sa-t",
            EncoderLabel::SaslT => "sasl-t",
        }
    }

    pub fn from_token(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.token() == s)
            .ok_or_else(|| CoreError::Parse(format!("unknown encoder label '{s}'")))
    }

    pub fn variant(&self) -> crate::encoder::EncoderVariant {
        use crate::encoder::EncoderVariant::*;
        match self {
            EncoderLabel::Lstm | EncoderLabel::SlLstm => Lstm,
            EncoderLabel::Gru | EncoderLabel::SlGru => Gru,
            EncoderLabel::T | EncoderLabel::SlT => TransformerVanilla,
            EncoderLabel::SaT | EncoderLabel::SaslT => TransformerSindy,
        }
    }

    pub fn use_sindy_loss(&self) -> bool {
        matches!(
            self,
            EncoderLabel::SlLstm | EncoderLabel::SlGru | EncoderLabel::SlT | EncoderLabel::SaslT
        )
    }

    /// Transformer-family labels (the T-SHRED rows of the results table).
    pub fn is_transformer_family(&self) -> bool {
        matches!(
            self,
            EncoderLabel::T | EncoderLabel::SlT | EncoderLabel::SaT | EncoderLabel::SaslT
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecoderFamily {
    Mlp,
    Cnn,
}

impl DecoderFamily {
    pub const ALL: [DecoderFamily; 2] = [DecoderFamily::Mlp, DecoderFamily::Cnn];

    pub fn token(&self) -> &'static str {
        match self {
            DecoderFamily::Mlp => "mlp",
            DecoderFamily::Cnn => "cnn",
        }
    }

    pub fn from_token(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.token() == s)
            .ok_or_else(|| CoreError::Parse(format!("unknown decoder '{s}'")))
    }

    pub fn matches(&self, cfg: &DecoderConfig) -> bool {
        matches!(
            (self, cfg),
            (DecoderFamily::Mlp, DecoderConfig::Mlp { .. })
                | (DecoderFamily::Cnn, DecoderConfig::Cnn { .. })
        )
    }
}

/// One grid cell; a concrete run needs a cell plus a seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub encoder: EncoderLabel,
    pub decoder: DecoderFamily,
    pub n_layers: usize,
    pub lr: f64,
}

pub const EXPERIMENT1_LAYER_COUNTS: [usize; 4] = [1, 2, 3, 4];
pub const EXPERIMENT1_LRS: [f64; 2] = [1e-2, 1e-3];

/// The full experiment-1 grid: 8 encoders x 2 decoders x 4 layer counts x
/// 2 learning rates = 128 cells, in a fixed deterministic order.
pub fn experiment1_cells() -> Vec<SweepCell> {
    let mut cells = Vec::with_capacity(128);
    for encoder in EncoderLabel::ALL {
        for decoder in DecoderFamily::ALL {
            for n_layers in EXPERIMENT1_LAYER_COUNTS {
                for lr in EXPERIMENT1_LRS {
                    cells.push(SweepCell {
                        encoder,
                        decoder,
                        n_layers,
                        lr,
                    });
                }
            }
        }
    }
    cells
}

/// One finished (or failed) run within a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub cell: SweepCell,
    pub seed: u64,
    pub best_val: f64,
    pub test_mse: f64,
    pub params: usize,
    pub checkpoint_bytes: u64,
    pub wall_s: f64,
    /// Set when the run failed; the metrics above are then meaningless.
    pub error: Option<String>,
}

/// Mean/std of test MSE per cell over its successful seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub cell: SweepCell,
    pub n_runs: usize,
    pub n_failed: usize,
    pub mean_test_mse: f64,
    pub std_test_mse: f64,
    pub mean_best_val: f64,
    pub params: usize,
    pub checkpoint_bytes: u64,
}

/// Group records by cell and sort ascending by mean test MSE. Failed runs
/// are counted but excluded from the statistics; record order does not
/// matter. Cells with no successful run sort last.
pub fn aggregate(records: &[SweepRecord]) -> Vec<AggregateRow> {
    let mut cells: Vec<SweepCell> = Vec::new();
    for r in records {
        if !cells.contains(&r.cell) {
            cells.push(r.cell);
        }
    }
    let mut rows: Vec<AggregateRow> = cells
        .into_iter()
        .map(|cell| {
            let ok: Vec<&SweepRecord> = records
                .iter()
                .filter(|r| r.cell == cell && r.error.is_none())
                .collect();
            let n_failed = records
                .iter()
                .filter(|r| r.cell == cell && r.error.is_some())
                .count();
            let n = ok.len();
            let mean = |f: &dyn Fn(&SweepRecord) -> f64| -> f64 {
                if n == 0 {
                    f64::INFINITY
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / n as f64
                }
            };
            let mean_test = mean(&|r| r.test_mse);
            let std_test = if n > 1 {
                let var = ok
                    .iter()
                    .map(|r| {
                        let d = r.test_mse - mean_test;
                        d * d
                    })
                    .sum::<f64>()
                    / (n - 1) as f64;
                Real::sqrt(var)
            } else {
                0.0
            };
            AggregateRow {
                cell,
                n_runs: n,
                n_failed,
                mean_test_mse: mean_test,
                std_test_mse: std_test,
                mean_best_val: mean(&|r| r.best_val),
                params: ok.first().map(|r| r.params).unwrap_or(0),
                checkpoint_bytes: ok.first().map(|r| r.checkpoint_bytes).unwrap_or(0),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.mean_test_mse
            .partial_cmp(&b.mean_test_mse)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| a.cell.encoder.token().cmp(b.cell.encoder.token()))
            .then_with(|| a.cell.decoder.token().cmp(b.cell.decoder.token()))
            .then_with(|| a.cell.n_layers.cmp(&b.cell.n_layers))
            .then_with(|| {
                a.cell
                    .lr
                    .partial_cmp(&b.cell.lr)
                    .unwrap_or(core::cmp::Ordering::Equal)
            })
    });
    rows
}

/// Best `n` transformer-family rows of an already-aggregated table.
pub fn top_transformer_rows(rows: &[AggregateRow], n: usize) -> Vec<AggregateRow> {
    rows.iter()
        .filter(|r| r.cell.encoder.is_transformer_family())
        .take(n)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::field::{generate, sample_sensors, SyntheticSpec};
    use crate::model::ModelConfig;

    fn tiny_dataset(seed: u64) -> (LaggedDataset<f64>, LaggedDataset<f64>, LaggedDataset<f64>) {
        let spec = SyntheticSpec::LinearModes {
            grid_dims: (4, 4),
            n_time: 60,
            dt: 0.2,
            n_modes: 2,
        };
        let field = generate(&spec, seed).unwrap();
        let (train_f, val_f, test_f) =
            crate::field::chronological_split(&field, (0.7, 0.15, 0.15)).unwrap();
        let sensors = sample_sensors(&field, 3, seed).unwrap();
        (
            LaggedDataset::new(&train_f, &sensors, 4, 0).unwrap(),
            LaggedDataset::new(&val_f, &sensors, 4, 0).unwrap(),
            LaggedDataset::new(&test_f, &sensors, 4, 0).unwrap(),
        )
    }

    fn tiny_model(use_sindy_loss: bool, seed: u64) -> ShredModel<f64> {
        let mut enc = EncoderConfig::gru(1, 8);
        enc.use_sindy_loss = use_sindy_loss;
        let cfg = ModelConfig::new(enc, DecoderConfig::mlp(2, 12), 3, (4, 4), 4);
        ShredModel::new(cfg, seed).unwrap()
    }

    #[test]
    fn select_best_ignores_warmup_epochs() {
        // Global minimum at epoch 2 must be ignored with min epoch 10.
        let losses = [5.0, 0.1, 4.0, 3.9, 3.8, 3.7, 3.6, 3.5, 3.4, 3.0, 2.9, 3.1];
        assert_eq!(select_best_epoch(&losses, 10), (11, 2.9));
        // Clamped: min epoch beyond the run picks from the last epoch only.
        assert_eq!(select_best_epoch(&losses[..5], 10), (5, 3.8));
        // min epoch 1 sees everything.
        assert_eq!(select_best_epoch(&losses, 1), (2, 0.1));
    }

    #[test]
    fn training_descends_and_restores_best_checkpoint() {
        let (train_d, val_d, test_d) = tiny_dataset(77);
        let mut model = tiny_model(false, 78);
        let mut cfg = TrainConfig::new(5e-3, 12, 79);
        cfg.batch_size = 16;
        cfg.min_checkpoint_epoch = 3;
        let run = train(&mut model, &train_d, &val_d, &test_d, &cfg).unwrap();

        assert_eq!(run.train_losses.len(), 12);
        assert_eq!(run.val_losses.len(), 12);
        assert!(run.best_epoch >= 3);
        let (want_epoch, want_val) = select_best_epoch(&run.val_losses, 3);
        assert_eq!(run.best_epoch, want_epoch);
        assert_eq!(run.best_val, want_val);
        assert!(
            run.train_losses[11] < run.train_losses[0],
            "loss should decrease: {:?}",
            run.train_losses
        );
        // The model is restored: evaluating val data reproduces best_val.
        let val_now = evaluate(&model, &val_d).unwrap();
        assert!((val_now - run.best_val).abs() < 1e-12);
        assert!(run.symbolic.is_none());
        assert!(run.test_mse.is_finite());
    }

    #[test]
    fn training_is_deterministic_given_seeds() {
        let (train_d, val_d, test_d) = tiny_dataset(101);
        let mut cfg = TrainConfig::new(5e-3, 4, 102);
        cfg.batch_size = 16;
        cfg.min_checkpoint_epoch = 1;
        let mut m1 = tiny_model(false, 103);
        let mut m2 = tiny_model(false, 103);
        let r1 = train(&mut m1, &train_d, &val_d, &test_d, &cfg).unwrap();
        let r2 = train(&mut m2, &train_d, &val_d, &test_d, &cfg).unwrap();
        assert_eq!(r1.train_losses, r2.train_losses);
        assert_eq!(r1.val_losses, r2.val_losses);
        assert_eq!(r1.test_mse, r2.test_mse);
    }

    #[test]
    fn lambda_sindy_zero_is_plain_mse() {
        let (train_d, _, _) = tiny_dataset(55);
        let model = tiny_model(true, 56);
        let mask_row = Rc::new(mask_row_matrix::<f64>(&train_d.mask));
        let n_valid = train_d.mask.iter().filter(|&&m| m).count();

        let mut tape = Tape::new();
        let bm = model.bind(&mut tape).unwrap();
        let w = tape.leaf(train_d.inputs[0].clone());
        let fwd = model.forward(&mut tape, &bm, w).unwrap();
        let composed = compose_loss(
            &mut tape,
            &model,
            &bm,
            &fwd,
            &train_d.targets[0],
            &mask_row,
            n_valid,
            0.0,
            DEFAULT_LAMBDA_REG,
        )
        .unwrap();
        let plain =
            masked_mse_graph(&mut tape, fwd.pred, &train_d.targets[0], &mask_row, n_valid).unwrap();
        assert_eq!(
            tape.value(composed)[(0, 0)],
            tape.value(plain)[(0, 0)],
            "lambda_sindy = 0 must collapse to plain MSE"
        );

        // And with a nonzero weight the composed loss strictly exceeds MSE.
        let with = compose_loss(
            &mut tape,
            &model,
            &bm,
            &fwd,
            &train_d.targets[0],
            &mask_row,
            n_valid,
            1.0,
            DEFAULT_LAMBDA_REG,
        )
        .unwrap();
        assert!(tape.value(with)[(0, 0)] > tape.value(plain)[(0, 0)]);
    }

    #[test]
    fn absurd_learning_rate_reports_divergence_location() {
        let (train_d, val_d, test_d) = tiny_dataset(91);
        let mut model = tiny_model(false, 92);
        let mut cfg = TrainConfig::new(1e15, 6, 93);
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.batch_size = 8;
        match train(&mut model, &train_d, &val_d, &test_d, &cfg) {
            Err(CoreError::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn experiment1_grid_is_exactly_128_cells() {
        let cells = experiment1_cells();
        assert_eq!(cells.len(), 128);
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                assert_ne!(a, b, "duplicate cell");
            }
        }
        let sa_mlp = cells
            .iter()
            .filter(|c| c.encoder == EncoderLabel::SaT && c.decoder == DecoderFamily::Mlp)
            .count();
        assert_eq!(sa_mlp, 8); // 4 layer counts x 2 lrs
    }

    #[test]
    fn aggregation_is_order_independent_and_sorted() {
        let cell_a = SweepCell {
            encoder: EncoderLabel::Gru,
            decoder: DecoderFamily::Mlp,
            n_layers: 1,
            lr: 1e-3,
        };
        let cell_b = SweepCell {
            encoder: EncoderLabel::SaT,
            decoder: DecoderFamily::Cnn,
            n_layers: 2,
            lr: 1e-2,
        };
        let rec = |cell, seed, test_mse, error: Option<&str>| SweepRecord {
            cell,
            seed,
            best_val: test_mse,
            test_mse,
            params: 10,
            checkpoint_bytes: 100,
            wall_s: 1.0,
            error: error.map(|e| e.into()),
        };
        let mut records = alloc::vec![
            rec(cell_a, 0, 4.0, None),
            rec(cell_a, 1, 6.0, None),
            rec(cell_b, 0, 1.0, None),
            rec(cell_b, 1, 3.0, None),
            rec(cell_b, 2, 0.0, Some("boom")),
        ];
        let rows = aggregate(&records);
        records.reverse();
        assert_eq!(aggregate(&records), rows, "order independence");

        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].cell, cell_b, "sorted ascending by mean");
        assert_eq!(rows[0].mean_test_mse, 2.0);
        assert_eq!(rows[0].n_runs, 2);
        assert_eq!(rows[0].n_failed, 1);
        assert_eq!(rows[1].mean_test_mse, 5.0);
        // Sample std over {4, 6} = sqrt(2).
        assert!((rows[1].std_test_mse - Real::sqrt(2.0)).abs() < 1e-12);

        let top = top_transformer_rows(&rows, 12);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].cell, cell_b);
    }

    #[test]
    fn seed_bundle_streams_are_distinct() {
        let b = seed_bundle(42);
        assert_ne!(b.data_seed, b.init_seed);
        assert_ne!(b.init_seed, b.shuffle_seed);
        assert_ne!(b.data_seed, b.shuffle_seed);
        assert_eq!(seed_bundle(42), b);
    }
}
