use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use ascl_core::adversary::{accuracy, attack_dataset, pgd_attack, AttackConfig, AttackKind};
use ascl_core::data::{shuffled_batches, Dataset};
use ascl_core::divergence::divergence_report;
use ascl_core::loss::{total_loss, LossTerms, SelectionCounts};
use ascl_core::model::{save_checkpoint, Model};
use ascl_core::tensor::Tensor;

use crate::config::RunConfig;
use crate::error::{Result, TrainError};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::optim::Optimizer;

/// SplitMix64 finalizer over `(seed, tag, a, b)`.
pub fn derive_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut z = seed;
    for v in [tag, a, b] {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(v.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_TRAIN_ATTACK: u64 = 3;
const TAG_EVAL_ATTACK: u64 = 4;
const TAG_FINAL_ATTACK: u64 = 5;

/// Attack seed of the final evaluation in a run with `seed`.
pub fn final_eval_seed(seed: u64) -> u64 {
    derive_seed(seed, TAG_FINAL_ATTACK, 0, 0)
}

/// Attack seed of step `batch` in `epoch`.
pub fn train_attack_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    derive_seed(seed, TAG_TRAIN_ATTACK, epoch as u64, batch as u64)
}

/// What one optimization step saw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub terms: LossTerms,
    pub counts: SelectionCounts,
    pub nat_correct: usize,
    pub adv_correct: usize,
    pub size: usize,
    /// False when the loss was not finite and the weights were left alone.
    pub applied: bool,
}

/// Attack, joint forward, objective, backward, update.
pub fn train_step(
    model: &mut Model,
    opt: &mut Optimizer,
    x: &Tensor,
    y: &[usize],
    cfg: &RunConfig,
    lr: f64,
    attack_seed: u64,
) -> Result<StepStats> {
    let x_adv = pgd_attack(model, x, y, &cfg.train_attack, attack_seed)?;
    let obj = total_loss(model, x, y, &x_adv, cfg.strategy, &cfg.weights, cfg.flags)?;
    let hits = |p: &[usize]| p.iter().zip(y).filter(|(a, b)| a == b).count();
    let mut stats = StepStats {
        terms: obj.terms,
        counts: obj.counts,
        nat_correct: hits(&obj.snapshot.preds_nat),
        adv_correct: hits(&obj.snapshot.preds_adv),
        size: y.len(),
        applied: false,
    };
    let t = obj.terms;
    if ![t.total, t.at, t.scl, t.vat].iter().all(|v| v.is_finite()) {
        return Ok(stats);
    }
    let grads = obj.gradients()?;
    if grads.iter().any(|g| !g.all_finite()) {
        return Ok(stats);
    }
    opt.step(model.params_mut(), &grads, lr);
    stats.applied = true;
    Ok(stats)
}

#[derive(Default)]
struct Accum {
    n: f64,
    nat: f64,
    adv: f64,
    at: f64,
    scl: f64,
    vat: f64,
    total: f64,
    pos: f64,
    neg: f64,
}

impl Accum {
    fn add(&mut self, terms: LossTerms, counts: SelectionCounts, size: usize) {
        let w = size as f64;
        self.n += w;
        self.at += w * terms.at;
        self.scl += w * terms.scl;
        self.vat += w * terms.vat;
        self.total += w * terms.total;
        self.pos += w * counts.positives;
        self.neg += w * counts.negatives;
    }

    fn fill(&self, row: &mut MetricsRow) {
        let m = |v: f64| Some(v / self.n);
        row.loss_at = m(self.at);
        row.loss_scl = m(self.scl);
        row.loss_vat = m(self.vat);
        row.loss_total = m(self.total);
        row.mean_pos = m(self.pos);
        row.mean_neg = m(self.neg);
    }
}

/// Evenly spaced subset of at most `n` samples (all when `n == 0`).
pub fn eval_subset(data: &Dataset, n: usize) -> Result<Dataset> {
    if n == 0 || n >= data.len() {
        return Ok(data.clone());
    }
    let idx: Vec<usize> = (0..n).map(|k| k * data.len() / n).collect();
    Ok(data.subset(&idx)?)
}

/// Test-side row: accuracies, objective terms and divergences under `attack`.
/// Objective terms use interleaved batches so each one mixes the classes.
pub fn test_row(
    model: &Model,
    data: &Dataset,
    cfg: &RunConfig,
    attack: &AttackConfig,
    seed: u64,
    epoch: usize,
) -> Result<MetricsRow> {
    let x_adv = attack_dataset(model, data, AttackKind::Pgd, attack, seed)?;
    let mut row = MetricsRow {
        epoch,
        split: "test".into(),
        nat_acc: Some(accuracy(model, data.features(), data.labels())?),
        rob_acc: Some(accuracy(model, &x_adv, data.labels())?),
        ..Default::default()
    };
    let mut acc = Accum::default();
    let n_batches = data.len().div_ceil(cfg.batch_size);
    for b in 0..n_batches {
        let chunk: Vec<usize> = (b..data.len()).step_by(n_batches).collect();
        if chunk.len() < 2 {
            continue;
        }
        let (x, y) = data.batch(&chunk)?;
        let xa = x_adv.select_rows(&chunk)?;
        let obj = total_loss(model, &x, &y, &xa, cfg.strategy, &cfg.weights, cfg.flags)?;
        acc.add(obj.terms, obj.counts, chunk.len());
    }
    if acc.n > 0.0 {
        acc.fill(&mut row);
    }
    if let Ok(rep) = divergence_report(model, data, Some(&x_adv)) {
        row.d_a_plus = Some(rep.d_a_plus);
        row.d_a_minus = Some(rep.d_a_minus);
        row.r_div = rep.r_div;
    }
    Ok(row)
}

/// One row per attack: natural and robust accuracy plus the divergences of
/// the benign + attacked pool (benign-only for `none` or `ε = 0`).
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    attack: &AttackConfig,
    kinds: &[AttackKind],
    seed: u64,
    epoch: usize,
) -> Result<Vec<MetricsRow>> {
    let nat = accuracy(model, data.features(), data.labels())?;
    kinds
        .iter()
        .map(|&kind| {
            let benign_only = kind == AttackKind::None || attack.epsilon == 0.0;
            let x_adv = if benign_only {
                data.features().clone()
            } else {
                attack_dataset(model, data, kind, attack, seed)?
            };
            let rep = divergence_report(model, data, (!benign_only).then_some(&x_adv)).ok();
            let eps = if kind == AttackKind::None { 0.0 } else { attack.epsilon };
            Ok(MetricsRow {
                epoch,
                split: format!("test:{kind}:eps={eps}"),
                nat_acc: Some(nat),
                rob_acc: Some(if benign_only { nat } else { accuracy(model, &x_adv, data.labels())? }),
                d_a_plus: rep.as_ref().map(|r| r.d_a_plus),
                d_a_minus: rep.as_ref().map(|r| r.d_a_minus),
                r_div: rep.and_then(|r| r.r_div),
                ..Default::default()
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: std::collections::BTreeMap<String, String>,
    pub final_test: Option<SummaryMetrics>,
    pub evaluation: Vec<SummaryMetrics>,
    pub checkpoint: Option<String>,
    pub build_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub split: String,
    pub nat_acc: Option<f64>,
    pub rob_acc: Option<f64>,
    pub loss_total: Option<f64>,
    pub d_a_plus: Option<f64>,
    pub d_a_minus: Option<f64>,
    pub r_div: Option<f64>,
    pub mean_pos: Option<f64>,
    pub mean_neg: Option<f64>,
}

impl From<&MetricsRow> for SummaryMetrics {
    fn from(r: &MetricsRow) -> Self {
        Self {
            split: r.split.clone(),
            nat_acc: r.nat_acc,
            rob_acc: r.rob_acc,
            loss_total: r.loss_total,
            d_a_plus: r.d_a_plus,
            d_a_minus: r.d_a_minus,
            r_div: r.r_div,
            mean_pos: r.mean_pos,
            mean_neg: r.mean_neg,
        }
    }
}

pub fn build_id() -> String {
    format!("ascl-trainer-{}", env!("CARGO_PKG_VERSION"))
}

pub struct RunOutput {
    pub model: Model,
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn last_test(&self) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.split == "test")
    }

    pub fn last_train(&self) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.split == "train")
    }

    /// Final evaluation row for `kind`.
    pub fn evaluation(&self, kind: AttackKind) -> Option<&MetricsRow> {
        let prefix = format!("test:{kind}:");
        self.rows.iter().find(|r| r.split.starts_with(&prefix))
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";

/// Builds the data from `cfg` and trains.
pub fn train(cfg: &RunConfig) -> Result<RunOutput> {
    let (train_set, test_set) = cfg.datasets()?;
    train_on(cfg, &train_set, &test_set)
}

/// Trains on `train_set`, evaluating on `test_set` after every epoch and at
/// the end. With zero epochs only the initial model and the metrics header
/// are written.
pub fn train_on(cfg: &RunConfig, train_set: &Dataset, test_set: &Dataset) -> Result<RunOutput> {
    cfg.validate()?;
    if train_set.dim() != test_set.dim() || train_set.num_classes() != test_set.num_classes() {
        return Err(TrainError::Config("train and test sets differ in shape".into()));
    }
    let spec = cfg.model_spec(train_set.dim(), train_set.num_classes());
    let mut model = Model::new(spec, derive_seed(cfg.seed, TAG_INIT, 0, 0))?;
    let mut opt = Optimizer::new(cfg.optimizer, model.params());
    let eval_set = eval_subset(test_set, cfg.eval_samples)?;
    let cheap = cfg.eval_attack.with_steps(cfg.epoch_eval_steps);

    let mut sink = match &cfg.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(MetricsWriter::new(BufWriter::new(File::create(dir.join(METRICS_FILE))?))?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut emit = |row: MetricsRow, rows: &mut Vec<MetricsRow>| -> Result<()> {
        if let Some(s) = sink.as_mut() {
            s.write(&row)?;
        }
        rows.push(row);
        Ok(())
    };

    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let batches = shuffled_batches(
            train_set.len(),
            cfg.batch_size,
            2,
            derive_seed(cfg.seed, TAG_SHUFFLE, epoch as u64, 0),
        );
        let mut acc = Accum::default();
        for (b, idx) in batches.iter().enumerate() {
            let (x, y) = train_set.batch(idx)?;
            let attack_seed = train_attack_seed(cfg.seed, epoch, b);
            let s = train_step(&mut model, &mut opt, &x, &y, cfg, lr, attack_seed)?;
            if !s.applied {
                let t = s.terms;
                let row = MetricsRow {
                    epoch: epoch + 1,
                    split: "abort".into(),
                    loss_at: Some(t.at),
                    loss_scl: Some(t.scl),
                    loss_vat: Some(t.vat),
                    loss_total: Some(t.total),
                    wall_time_s: start.elapsed().as_secs_f64(),
                    ..Default::default()
                };
                emit(row, &mut rows)?;
                return Err(TrainError::NonFinite { epoch: epoch + 1, batch: b });
            }
            acc.add(s.terms, s.counts, s.size);
            acc.nat += s.nat_correct as f64;
            acc.adv += s.adv_correct as f64;
        }
        let mut train_row = MetricsRow {
            epoch: epoch + 1,
            split: "train".into(),
            ..Default::default()
        };
        if acc.n > 0.0 {
            acc.fill(&mut train_row);
            train_row.nat_acc = Some(acc.nat / acc.n);
            train_row.rob_acc = Some(acc.adv / acc.n);
        }
        train_row.wall_time_s = start.elapsed().as_secs_f64();
        emit(train_row, &mut rows)?;

        let seed = derive_seed(cfg.seed, TAG_EVAL_ATTACK, epoch as u64, 0);
        let mut row = test_row(&model, &eval_set, cfg, &cheap, seed, epoch + 1)?;
        row.wall_time_s = start.elapsed().as_secs_f64();
        emit(row, &mut rows)?;
    }

    if cfg.epochs > 0 {
        let seed = final_eval_seed(cfg.seed);
        for mut row in evaluate(&model, test_set, &cfg.eval_attack, &cfg.eval_attacks, seed, cfg.epochs)? {
            row.wall_time_s = start.elapsed().as_secs_f64();
            emit(row, &mut rows)?;
        }
    }
    drop(emit);

    let mut checkpoint = None;
    if let Some(dir) = &cfg.output_dir {
        let path: PathBuf = dir.join(CHECKPOINT_FILE);
        save_checkpoint(&model, &path)?;
        checkpoint = Some(path.display().to_string());
    }
    let summary = RunSummary {
        config: cfg.pairs().clone(),
        final_test: rows.iter().rev().find(|r| r.split == "test").map(SummaryMetrics::from),
        evaluation: rows
            .iter()
            .filter(|r| r.split.starts_with("test:"))
            .map(SummaryMetrics::from)
            .collect(),
        checkpoint,
        build_id: build_id(),
    };
    if let Some(dir) = &cfg.output_dir {
        let mut f = BufWriter::new(File::create(dir.join(SUMMARY_FILE))?);
        serde_json::to_writer_pretty(&mut f, &summary)?;
        writeln!(f)?;
        f.flush()?;
    }
    Ok(RunOutput { model, rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_component() {
        let a = derive_seed(1, 2, 3, 4);
        assert_eq!(a, derive_seed(1, 2, 3, 4));
        assert_ne!(a, derive_seed(1, 2, 4, 3));
        assert_ne!(a, derive_seed(2, 2, 3, 4));
    }
}
