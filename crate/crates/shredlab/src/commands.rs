//! Implementations behind the CLI subcommands: dataset generation, single
//! training runs, parallel sweeps, checkpoint evaluation, and symbolic ODE
//! extraction. Each returns a [`LabError`](crate::LabError) whose exit code
//! follows the contract: 2 for usage/config problems, 3 for numerical
//! failures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use shred_core::field::{
    chronological_split, generate, sample_sensors, LaggedDataset, Scaler, SpatioTemporalField,
};
use shred_core::model::ShredModel;
use shred_core::train::{
    aggregate, evaluate, seed_bundle, top_transformer_rows, train, AggregateRow, SweepRecord,
    TrainRun,
};

use crate::checkpoint::{encode_checkpoint, load_any, AnyModel, PipelineInfo};
use crate::config::{
    read_json_config, DatasetSource, GenerateSpec, NormalizeMode, SweepJob, TrainJob,
};
use crate::manifest::{
    unix_now, write_manifest, write_metrics, write_odes, BuildInfo, Metrics, RunManifest,
};
use crate::{sha256_hex, stf, LabError, Precision, Result, Scalar};

// ---------------------------------------------------------------------------
// Dataset preparation shared by train/sweep.

/// A dataset after normalization and splitting, ready for windowing.
pub struct PreparedField {
    pub name: String,
    pub checksum: String,
    pub scaler: Scaler,
    pub normalize: NormalizeMode,
    pub fractions: [f64; 3],
    pub full: SpatioTemporalField,
    pub train: SpatioTemporalField,
    pub val: SpatioTemporalField,
    pub test: SpatioTemporalField,
}

/// Load or generate the raw field; the checksum is over STF1 bytes either
/// way, so generated and loaded datasets are identified the same way.
fn resolve_field(src: &DatasetSource) -> Result<(SpatioTemporalField, String)> {
    src.validate()?;
    if let Some(path) = &src.path {
        let bytes = std::fs::read(path).map_err(LabError::io(format!("dataset {path}")))?;
        let field = stf::decode_field(&bytes)?;
        Ok((field, sha256_hex(&bytes)))
    } else {
        let spec = src.generate.as_ref().expect("validated above");
        let field = generate(&spec.to_core(), spec.seed())?;
        let checksum = sha256_hex(&stf::encode_field(&field));
        Ok((field, checksum))
    }
}

pub fn prepare_field(
    src: &DatasetSource,
    normalize: NormalizeMode,
    fractions: [f64; 3],
) -> Result<PreparedField> {
    let (field, checksum) = resolve_field(src)?;
    let scaler = match normalize {
        NormalizeMode::Full => Scaler::fit(&field, None)?,
        NormalizeMode::Train => {
            let train_len = (field.n_time() as f64 * fractions[0]).floor() as usize;
            Scaler::fit(&field, Some((0, train_len)))?
        }
    };
    let full = scaler.normalize(&field)?;
    let (train, val, test) =
        chronological_split(&full, (fractions[0], fractions[1], fractions[2]))?;
    Ok(PreparedField {
        name: field.name.clone(),
        checksum,
        scaler,
        normalize,
        fractions,
        full,
        train,
        val,
        test,
    })
}

/// One full training run at a concrete float width.
fn run_one<T: Scalar>(
    prep: &PreparedField,
    job: &TrainJob,
) -> Result<(TrainRun, Vec<u8>, PipelineInfo)> {
    let seeds = seed_bundle(job.seed);
    let sensors = sample_sensors(&prep.full, job.n_sensors, seeds.data_seed)?;
    let train_d = LaggedDataset::<T>::new(&prep.train, &sensors, job.k_lag, job.target_offset)?;
    let val_d = LaggedDataset::<T>::new(&prep.val, &sensors, job.k_lag, job.target_offset)?;
    let test_d = LaggedDataset::<T>::new(&prep.test, &sensors, job.k_lag, job.target_offset)?;

    let model_cfg = job.model_config(prep.full.grid_dims)?;
    let mut model = ShredModel::<T>::new(model_cfg, seeds.init_seed)?;
    let train_cfg = job.train_config(seeds.shuffle_seed)?;

    let t0 = Instant::now();
    let mut run = train(&mut model, &train_d, &val_d, &test_d, &train_cfg)?;
    run.wall_s = t0.elapsed().as_secs_f64();

    let pipeline = PipelineInfo {
        dataset_name: prep.name.clone(),
        dataset_checksum: prep.checksum.clone(),
        normalize: prep.normalize,
        fractions: prep.fractions,
        scaler_min: prep.scaler.min,
        scaler_max: prep.scaler.max,
        sensors,
        target_offset: job.target_offset,
    };
    let ckpt = encode_checkpoint(&model, &pipeline);
    Ok((run, ckpt, pipeline))
}

fn dispatch_run(
    precision: Precision,
    prep: &PreparedField,
    job: &TrainJob,
) -> Result<(TrainRun, Vec<u8>, PipelineInfo)> {
    match precision {
        Precision::F32 => run_one::<f32>(prep, job),
        Precision::F64 => run_one::<f64>(prep, job),
    }
}

// ---------------------------------------------------------------------------
// generate

pub fn cmd_generate(spec_path: &Path, out_path: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: GenerateSpec = read_json_config(spec_path)?;
    if let Some(s) = seed {
        spec = spec.with_seed(s);
    }
    let field = generate(&spec.to_core(), spec.seed())?;
    stf::save_field(&field, out_path)?;

    let valid = field.valid_indices();
    let (mut lo, mut hi, mut sum) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
    for t in 0..field.n_time() {
        for &c in &valid {
            let v = field.values[(t, c)];
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v as f64;
        }
    }
    let mean = sum / (field.n_time() * valid.len().max(1)) as f64;
    println!(
        "wrote {} — field \"{}\", grid {}x{}, {} steps, {}/{} valid cells",
        out_path.display(),
        field.name,
        field.grid_dims.0,
        field.grid_dims.1,
        field.n_time(),
        field.n_valid(),
        field.n_cells(),
    );
    println!("values: min {lo:.6}, max {hi:.6}, mean {mean:.6}");
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Default, Clone)]
pub struct TrainOverrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub n_epochs: Option<usize>,
    pub precision: Option<String>,
    pub dataset: Option<PathBuf>,
}

pub fn cmd_train(config_path: &Path, overrides: &TrainOverrides) -> Result<PathBuf> {
    let mut job: TrainJob = read_json_config(config_path)?;
    if let Some(seed) = overrides.seed {
        job.seed = seed;
    }
    if let Some(lr) = overrides.lr {
        job.lr = lr;
    }
    if let Some(n) = overrides.n_epochs {
        job.n_epochs = n;
    }
    if let Some(path) = &overrides.dataset {
        job.dataset = DatasetSource {
            path: Some(path.display().to_string()),
            generate: None,
        };
    }
    let precision = Precision::resolve(overrides.precision.as_deref(), job.precision.as_deref())?;
    job.precision = Some(precision.token().to_string());

    let out_dir = overrides
        .out_dir
        .clone()
        .or_else(|| job.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| {
            LabError::Usage(
                "no output directory: set \"out_dir\" in the config or pass --out-dir".into(),
            )
        })?;
    job.out_dir = Some(out_dir.display().to_string());
    std::fs::create_dir_all(&out_dir)
        .map_err(LabError::io(format!("creating {}", out_dir.display())))?;

    let started_unix = unix_now();
    let prep = prepare_field(&job.dataset, job.normalize, job.fractions)?;
    let (run, ckpt_bytes, _pipeline) = dispatch_run(precision, &prep, &job)?;

    std::fs::write(out_dir.join("checkpoint.ckpt"), &ckpt_bytes)
        .map_err(LabError::io("writing checkpoint.ckpt"))?;
    write_losses_csv(&run, &out_dir.join("losses.csv"))?;
    write_metrics(
        &Metrics {
            best_val: run.best_val,
            test_mse: run.test_mse,
            best_epoch: run.best_epoch,
            param_count: run.param_count,
            wall_s: run.wall_s,
        },
        &out_dir.join("metrics.json"),
    )?;
    let mut outputs = BTreeMap::from([
        ("checkpoint".to_string(), "checkpoint.ckpt".to_string()),
        ("losses".to_string(), "losses.csv".to_string()),
        ("metrics".to_string(), "metrics.json".to_string()),
    ]);
    if let Some(symbolic) = &run.symbolic {
        write_odes(symbolic, &out_dir)?;
        outputs.insert("odes_text".to_string(), "odes.txt".to_string());
        outputs.insert("odes_json".to_string(), "odes.json".to_string());
    }

    let manifest = RunManifest {
        command: "train".into(),
        config: serde_json::to_value(&job).map_err(LabError::json("config snapshot"))?,
        build: BuildInfo::current(),
        dataset_checksum: prep.checksum.clone(),
        seeds: vec![job.seed],
        precision: precision.token().into(),
        started_unix,
        finished_unix: unix_now(),
        outputs,
    };
    write_manifest(&manifest, &out_dir)?;

    println!(
        "trained {}+{} on \"{}\": best_val {:.6e} (epoch {}), test_mse {:.6e}, {} params, {:.1}s",
        job.encoder,
        match job.decoder {
            crate::config::DecoderJson::Mlp { .. } => "mlp",
            crate::config::DecoderJson::Cnn { .. } => "cnn",
        },
        prep.name,
        run.best_val,
        run.best_epoch,
        run.test_mse,
        run.param_count,
        run.wall_s,
    );
    println!("artifacts in {}", out_dir.display());
    Ok(out_dir)
}

fn write_losses_csv(run: &TrainRun, path: &Path) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for (i, (tr, va)) in run.train_losses.iter().zip(&run.val_losses).enumerate() {
        text.push_str(&format!("{},{},{}\n", i + 1, tr, va));
    }
    std::fs::write(path, text).map_err(LabError::io(format!("writing {}", path.display())))
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Default, Clone)]
pub struct SweepOverrides {
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub precision: Option<String>,
}

pub fn cmd_sweep(config_path: &Path, overrides: &SweepOverrides) -> Result<PathBuf> {
    let mut sweep: SweepJob = read_json_config(config_path)?;
    let precision = Precision::resolve(overrides.precision.as_deref(), sweep.precision.as_deref())?;
    sweep.precision = Some(precision.token().to_string());
    let n_workers = overrides.jobs.or(sweep.jobs).unwrap_or(1).max(1);

    let out_dir = overrides
        .out_dir
        .clone()
        .or_else(|| sweep.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| {
            LabError::Usage(
                "no output directory: set \"out_dir\" in the config or pass --out-dir".into(),
            )
        })?;
    sweep.out_dir = Some(out_dir.display().to_string());
    std::fs::create_dir_all(&out_dir)
        .map_err(LabError::io(format!("creating {}", out_dir.display())))?;

    let started_unix = unix_now();
    let cells = sweep.cells()?;
    let prep = prepare_field(&sweep.dataset, sweep.normalize, sweep.fractions)?;

    // The flat run list; results are reassembled by index so output files
    // are identical no matter how the thread pool schedules the work.
    let runs: Vec<(usize, shred_core::train::SweepCell, u64)> = cells
        .iter()
        .flat_map(|cell| sweep.seeds.iter().map(|&s| (*cell, s)))
        .enumerate()
        .map(|(i, (c, s))| (i, c, s))
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, SweepRecord)>> = Mutex::new(Vec::with_capacity(runs.len()));
    std::thread::scope(|scope| {
        for _ in 0..n_workers.min(runs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= runs.len() {
                    break;
                }
                let (idx, cell, seed) = runs[i];
                let job = sweep.cell_job(&cell, seed);
                let record = match dispatch_run(precision, &prep, &job) {
                    Ok((run, ckpt, _)) => SweepRecord {
                        cell,
                        seed,
                        best_val: run.best_val,
                        test_mse: run.test_mse,
                        params: run.param_count,
                        checkpoint_bytes: ckpt.len() as u64,
                        wall_s: run.wall_s,
                        error: None,
                    },
                    Err(e) => SweepRecord {
                        cell,
                        seed,
                        best_val: f64::NAN,
                        test_mse: f64::NAN,
                        params: 0,
                        checkpoint_bytes: 0,
                        wall_s: 0.0,
                        error: Some(e.to_string()),
                    },
                };
                results
                    .lock()
                    .expect("no poisoned runs")
                    .push((idx, record));
            });
        }
    });

    let mut records: Vec<(usize, SweepRecord)> = results.into_inner().expect("threads joined");
    records.sort_by_key(|(i, _)| *i);
    let records: Vec<SweepRecord> = records.into_iter().map(|(_, r)| r).collect();

    let n_failed = records.iter().filter(|r| r.error.is_some()).count();
    write_runs_csv(&records, &out_dir.join("runs.csv"))?;
    if n_failed > 0 {
        write_failures_log(&records, &out_dir.join("failures.log"))?;
    }
    let agg = aggregate(&records);
    write_aggregate_csv(&agg, &out_dir.join("aggregate.csv"))?;
    write_aggregate_csv(&top_transformer_rows(&agg, 12), &out_dir.join("top12.csv"))?;

    let mut outputs = BTreeMap::from([
        ("runs".to_string(), "runs.csv".to_string()),
        ("aggregate".to_string(), "aggregate.csv".to_string()),
        ("top12".to_string(), "top12.csv".to_string()),
    ]);
    if n_failed > 0 {
        outputs.insert("failures".to_string(), "failures.log".to_string());
    }
    let manifest = RunManifest {
        command: "sweep".into(),
        config: serde_json::to_value(&sweep).map_err(LabError::json("config snapshot"))?,
        build: BuildInfo::current(),
        dataset_checksum: prep.checksum.clone(),
        seeds: sweep.seeds.clone(),
        precision: precision.token().into(),
        started_unix,
        finished_unix: unix_now(),
        outputs,
    };
    write_manifest(&manifest, &out_dir)?;

    let n_ok = records.len() - n_failed;
    if n_ok == 0 {
        return Err(LabError::Numerical(format!(
            "all {} sweep runs failed; see {}",
            records.len(),
            out_dir.join("failures.log").display()
        )));
    }
    println!(
        "sweep finished: {n_ok}/{} runs ok across {} cells; results in {}",
        records.len(),
        cells.len(),
        out_dir.display()
    );
    if let Some(best) = agg.iter().find(|r| r.n_runs > 0) {
        println!(
            "best cell: {}+{} layers={} lr={} — mean test_mse {:.6e} (n={})",
            best.cell.encoder.token(),
            best.cell.decoder.token(),
            best.cell.n_layers,
            best.cell.lr,
            best.mean_test_mse,
            best.n_runs
        );
    }
    Ok(out_dir)
}

fn write_runs_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let mut text = String::from(
        "encoder,decoder,n_layers,lr,seed,best_val,test_mse,params,checkpoint_bytes,wall_s\n",
    );
    for r in records.iter().filter(|r| r.error.is_none()) {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.cell.encoder.token(),
            r.cell.decoder.token(),
            r.cell.n_layers,
            r.cell.lr,
            r.seed,
            r.best_val,
            r.test_mse,
            r.params,
            r.checkpoint_bytes,
            r.wall_s
        ));
    }
    std::fs::write(path, text).map_err(LabError::io(format!("writing {}", path.display())))
}

fn write_failures_log(records: &[SweepRecord], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in records {
        if let Some(err) = &r.error {
            text.push_str(&format!(
                "{},{},{},{},seed={}: {}\n",
                r.cell.encoder.token(),
                r.cell.decoder.token(),
                r.cell.n_layers,
                r.cell.lr,
                r.seed,
                err
            ));
        }
    }
    std::fs::write(path, text).map_err(LabError::io(format!("writing {}", path.display())))
}

fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut text = String::from(
        "encoder,decoder,n_layers,lr,n_runs,n_failed,mean_test_mse,std_test_mse,mean_best_val,params,checkpoint_bytes\n",
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.cell.encoder.token(),
            r.cell.decoder.token(),
            r.cell.n_layers,
            r.cell.lr,
            r.n_runs,
            r.n_failed,
            r.mean_test_mse,
            r.std_test_mse,
            r.mean_best_val,
            r.params,
            r.checkpoint_bytes
        ));
    }
    std::fs::write(path, text).map_err(LabError::io(format!("writing {}", path.display())))
}

// ---------------------------------------------------------------------------
// eval

pub fn cmd_eval(ckpt_path: &Path, dataset_path: &Path, split: &str) -> Result<f64> {
    let (any, manifest) = load_any(ckpt_path)?;
    let bytes = std::fs::read(dataset_path)
        .map_err(LabError::io(format!("dataset {}", dataset_path.display())))?;
    let checksum = sha256_hex(&bytes);
    let field = stf::decode_field(&bytes)?;

    let p = &manifest.pipeline;
    let scaler = Scaler {
        min: p.scaler_min,
        max: p.scaler_max,
    };
    let normalized = scaler.normalize(&field)?;
    let (train_f, val_f, test_f) = chronological_split(
        &normalized,
        (p.fractions[0], p.fractions[1], p.fractions[2]),
    )?;
    let field = match split {
        "train" => train_f,
        "val" => val_f,
        "test" => test_f,
        other => {
            return Err(LabError::Usage(format!(
                "--split must be train, val, or test, got {other:?}"
            )))
        }
    };

    let k_lag = manifest.model.k_lag;
    let mse = match &any {
        AnyModel::F32(model) => {
            let data = LaggedDataset::<f32>::new(&field, &p.sensors, k_lag, p.target_offset)?;
            evaluate(model, &data)?
        }
        AnyModel::F64(model) => {
            let data = LaggedDataset::<f64>::new(&field, &p.sensors, k_lag, p.target_offset)?;
            evaluate(model, &data)?
        }
    };
    println!(
        "{}",
        serde_json::json!({
            "split": split,
            "mse": mse,
            "dataset_checksum": checksum,
            "matches_training_data": checksum == p.dataset_checksum,
        })
    );
    Ok(mse)
}

// ---------------------------------------------------------------------------
// extract

pub fn cmd_extract(ckpt_path: &Path, out_dir: Option<&Path>) -> Result<()> {
    let (any, _manifest) = load_any(ckpt_path)?;
    let symbolic = match &any {
        AnyModel::F32(model) => model.extract()?,
        AnyModel::F64(model) => model.extract()?,
    };
    let dir = out_dir
        .map(PathBuf::from)
        .or_else(|| ckpt_path.parent().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(LabError::io(format!("creating {}", dir.display())))?;
    write_odes(&symbolic, &dir)?;
    print!("{}", symbolic.render_text());
    println!(
        "wrote {} and {}",
        dir.join("odes.txt").display(),
        dir.join("odes.json").display()
    );
    Ok(())
}
