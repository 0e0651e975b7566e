//! Command implementations behind the CLI. Every command takes a
//! [`RunConfig`] and writes its artifacts under `out_dir`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{stored_scalar_bytes, Checkpoint};
use crate::config::{Precision, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, predict_all};
use crate::metrics::MetricsReport;
use crate::model::{AblationFlags, Model};
use crate::scalar::Scalar;
use crate::scene::{generate_scene, read_dataset, write_dataset, SceneSample};
use crate::train::{StepRecord, Trainer};
use crate::viz::{render_overlay, save_overlay};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

/// `(alpha, beta)` pairs explored by the loss-weight sweep.
pub const LOSS_GRID: [(f64, f64); 6] = [(0.1, 1.0), (0.5, 1.0), (1.0, 1.0), (0.1, 0.5), (0.5, 0.1), (1.0, 0.1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Scenes of one split, generated in memory.
pub fn generate_split(cfg: &RunConfig, split: Split) -> Result<Vec<SceneSample>> {
    let (base, n) = match split {
        Split::Train => (cfg.seed, cfg.data.train_samples),
        Split::Eval => (cfg.seed.wrapping_add(cfg.data.eval_seed_offset), cfg.data.eval_samples),
    };
    (0..n as u64)
        .map(|i| generate_scene(base.wrapping_add(i), &cfg.scene))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenSummary {
    pub train_dir: PathBuf,
    pub eval_dir: PathBuf,
    pub train_samples: usize,
    pub eval_samples: usize,
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<GenSummary> {
    cfg.validate()?;
    let train = generate_split(cfg, Split::Train)?;
    let eval = generate_split(cfg, Split::Eval)?;
    let (td, ed) = (cfg.data.train_dir(), cfg.data.eval_dir());
    write_dataset(&train, &cfg.scene.vocab, &td)?;
    write_dataset(&eval, &cfg.scene.vocab, &ed)?;
    Ok(GenSummary {
        train_dir: td,
        eval_dir: ed,
        train_samples: train.len(),
        eval_samples: eval.len(),
    })
}

pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<SceneSample>> {
    let dir = match split {
        Split::Train => cfg.data.train_dir(),
        Split::Eval => cfg.data.eval_dir(),
    };
    if !dir.join("manifest.json").exists() {
        return Err(Error::Validation(format!(
            "no dataset at {}; run `gen` first",
            dir.display()
        )));
    }
    let (manifest, samples) = read_dataset(&dir)?;
    if manifest.vocab != cfg.scene.vocab {
        return Err(Error::Config(format!(
            "dataset at {} was generated with a different vocabulary",
            dir.display()
        )));
    }
    Ok(samples)
}

/// Fresh model and trainer for `cfg`, fitted on `data`.
pub fn train_model<T: Scalar>(
    cfg: &RunConfig,
    data: &[SceneSample],
    log: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<Trainer<T>> {
    cfg.validate()?;
    let model = Model::<T>::new(&cfg.model, &cfg.scene.vocab, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.loss, cfg.seed)?;
    trainer.fit(data, log)?;
    Ok(trainer)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

fn cmd_train_as<T: Scalar>(cfg: &RunConfig, data: &[SceneSample]) -> Result<TrainSummary> {
    create_dir(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join(TRAIN_LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut w = BufWriter::new(file);
    let (mut first, mut last) = (None, None);
    let trainer = train_model::<T>(cfg, data, |rec| {
        first.get_or_insert(rec.loss.total);
        last = Some(rec.loss.total);
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(&log_path, e))
    })?;
    let ck_path = cfg.out_dir.join(CHECKPOINT_FILE);
    Checkpoint::from_trainer(&trainer, cfg).save(&ck_path)?;
    Ok(TrainSummary {
        checkpoint: ck_path,
        log: log_path,
        steps: trainer.step,
        initial_loss: first,
        final_loss: last,
    })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = load_split(cfg, Split::Train)?;
    match cfg.precision {
        Precision::F32 => cmd_train_as::<f32>(cfg, &data),
        Precision::F64 => cmd_train_as::<f64>(cfg, &data),
    }
}

fn with_checkpoint<R>(
    path: &Path,
    f32_fn: impl FnOnce(Checkpoint<f32>) -> Result<R>,
    f64_fn: impl FnOnce(Checkpoint<f64>) -> Result<R>,
) -> Result<R> {
    match stored_scalar_bytes(path)? {
        4 => f32_fn(Checkpoint::load(path)?),
        8 => f64_fn(Checkpoint::load(path)?),
        n => Err(Error::Checkpoint(format!("unsupported scalar width {n}"))),
    }
}

/// Metrics of the checkpoint on the held-out split. Written to
/// `out_dir/metrics.json`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let data = load_split(cfg, Split::Eval)?;
    let report = with_checkpoint(
        checkpoint,
        |c| evaluate(&c.model, &data),
        |c| evaluate(&c.model, &data),
    )?;
    create_dir(&cfg.out_dir)?;
    write_json(&report, &cfg.out_dir.join(METRICS_FILE))?;
    Ok(report)
}

/// The four cumulative module settings, in table order.
pub fn ablation_settings() -> [(&'static str, AblationFlags); 4] {
    let base = AblationFlags::baseline();
    let cpam = AblationFlags {
        cpam_enabled: true,
        ..base
    };
    let ho = AblationFlags {
        ho_enhancer_enabled: true,
        ..cpam
    };
    let mg = AblationFlags {
        mask_guided_enabled: true,
        ..ho
    };
    [("baseline", base), ("+CPAM", cpam), ("+H-O", ho), ("+M-G", mg)]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub flags: AblationFlags,
    pub final_loss: Option<f64>,
    pub train: MetricsReport,
    pub eval: Option<MetricsReport>,
}

/// Train and score one configuration per entry of `settings`, each from the
/// same seed and data order.
pub fn run_ablation<T: Scalar>(
    cfg: &RunConfig,
    train: &[SceneSample],
    eval: Option<&[SceneSample]>,
    settings: &[(&str, AblationFlags)],
) -> Result<Vec<AblationRow>> {
    settings
        .iter()
        .map(|(label, flags)| {
            let mut c = cfg.clone();
            c.model.ablation = *flags;
            let mut last = None;
            let t = train_model::<T>(&c, train, |r| {
                last = Some(r.loss.total);
                Ok(())
            })?;
            Ok(AblationRow {
                label: label.to_string(),
                flags: *flags,
                final_loss: last,
                train: evaluate(&t.model, train)?,
                eval: eval.map(|e| evaluate(&t.model, e)).transpose()?,
            })
        })
        .collect()
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn report_cells(r: &MetricsReport) -> String {
    format!(
        "{} | {} | {} | {} | {}",
        pct(r.map),
        r.sc_acc.map_or("-".into(), pct),
        pct(r.c_acc),
        pct(r.miou),
        pct(r.wiou)
    )
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "| setting | CPAM | H-O | M-G | split | mAP | SC-Acc | C-Acc | mIoU | wIoU |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    let mark = |b: bool| if b { "x" } else { " " };
    for r in rows {
        let f = r.flags;
        let head = format!(
            "| {} | {} | {} | {} |",
            r.label,
            mark(f.cpam_enabled),
            mark(f.ho_enhancer_enabled),
            mark(f.mask_guided_enabled)
        );
        s += &format!("{head} train | {} |\n", report_cells(&r.train));
        if let Some(e) = &r.eval {
            s += &format!("{head} eval | {} |\n", report_cells(e));
        }
    }
    s
}

fn on_splits<R>(
    cfg: &RunConfig,
    f32_fn: impl FnOnce(&[SceneSample], &[SceneSample]) -> Result<R>,
    f64_fn: impl FnOnce(&[SceneSample], &[SceneSample]) -> Result<R>,
) -> Result<R> {
    cfg.validate()?;
    let train = load_split(cfg, Split::Train)?;
    let eval = load_split(cfg, Split::Eval)?;
    match cfg.precision {
        Precision::F32 => f32_fn(&train, &eval),
        Precision::F64 => f64_fn(&train, &eval),
    }
}

/// Four trainings with cumulative module flags. Writes `ablation.json` and
/// `ablation.md`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let settings = ablation_settings();
    let rows = on_splits(
        cfg,
        |t, e| run_ablation::<f32>(cfg, t, Some(e), &settings),
        |t, e| run_ablation::<f64>(cfg, t, Some(e), &settings),
    )?;
    create_dir(&cfg.out_dir)?;
    write_json(&rows, &cfg.out_dir.join("ablation.json"))?;
    let md = ablation_table(&rows);
    fs::write(cfg.out_dir.join("ablation.md"), &md).map_err(|e| Error::io(cfg.out_dir.join("ablation.md"), e))?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub final_loss: Option<f64>,
    pub train: MetricsReport,
    pub eval: MetricsReport,
}

fn run_sweep<T: Scalar>(cfg: &RunConfig, train: &[SceneSample], eval: &[SceneSample]) -> Result<Vec<SweepRow>> {
    LOSS_GRID
        .iter()
        .map(|&(alpha, beta)| {
            let mut c = cfg.clone();
            c.loss.alpha = alpha;
            c.loss.beta = beta;
            let mut last = None;
            let t = train_model::<T>(&c, train, |r| {
                last = Some(r.loss.total);
                Ok(())
            })?;
            Ok(SweepRow {
                alpha,
                beta,
                final_loss: last,
                train: evaluate(&t.model, train)?,
                eval: evaluate(&t.model, eval)?,
            })
        })
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "| alpha | beta | split | mAP | SC-Acc | C-Acc | mIoU | wIoU |\n|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        for (split, m) in [("train", &r.train), ("eval", &r.eval)] {
            s += &format!("| {} | {} | {split} | {} |\n", r.alpha, r.beta, report_cells(m));
        }
    }
    s
}

/// One training per `(alpha, beta)` in [`LOSS_GRID`]. Writes `sweep.json`
/// and `sweep.md`.
pub fn cmd_sweep_loss(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let rows = on_splits(cfg, |t, e| run_sweep::<f32>(cfg, t, e), |t, e| run_sweep::<f64>(cfg, t, e))?;
    create_dir(&cfg.out_dir)?;
    write_json(&rows, &cfg.out_dir.join("sweep.json"))?;
    let path = cfg.out_dir.join("sweep.md");
    fs::write(&path, sweep_table(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Predicted pairs scoring at least this are drawn.
pub const VIZ_MIN_SCORE: f64 = 0.3;

fn viz_as<T: Scalar>(
    ck: Checkpoint<T>,
    samples: &[SceneSample],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let results = predict_all(&ck.model, samples)?;
    let mut paths = Vec::new();
    for (s, r) in samples.iter().zip(&results) {
        let img = render_overlay(s, r, &ck.model.vocab, VIZ_MIN_SCORE);
        let p = out_dir.join(format!("{}.png", s.id));
        save_overlay(&img, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Overlays for the named samples of the eval split (or its first four when
/// `ids` is empty), written to `out_dir/viz/`.
pub fn cmd_viz(cfg: &RunConfig, checkpoint: &Path, ids: &[String]) -> Result<Vec<PathBuf>> {
    let mut pool = load_split(cfg, Split::Eval)?;
    let chosen: Vec<SceneSample> = if ids.is_empty() {
        pool.truncate(4);
        pool
    } else {
        if let Ok(train) = load_split(cfg, Split::Train) {
            pool.extend(train);
        }
        ids.iter()
            .map(|id| {
                pool.iter()
                    .find(|s| &s.id == id)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("no sample with id `{id}`")))
            })
            .collect::<Result<_>>()?
    };
    let dir = cfg.out_dir.join("viz");
    create_dir(&dir)?;
    with_checkpoint(
        checkpoint,
        |c| viz_as(c, &chosen, &dir),
        |c| viz_as(c, &chosen, &dir),
    )
}
