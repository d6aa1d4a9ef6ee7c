//! L∞ attacks: PGD with random start, multi-targeted PGD, and robust accuracy.
//!
//! One PGD step is `x ← Proj_{B_ε(x₀) ∩ [lo, hi]}(x + η · sign(∇ₓ ℓ))`, with
//! the sign flipped for targeted losses (descent toward the target class).
//! Random starts draw one uniform value per coordinate from a stream keyed by
//! `(seed, sample index)`, so evaluating a dataset in chunks, serially or in
//! parallel, yields the same adversarial examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{contract_err, dim_err, Error, Result};
use crate::model::Model;
use crate::tensor::{sign, Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttackLoss {
    /// Ascend the cross-entropy of the true label.
    #[default]
    CrossEntropy,
    /// Descend the cross-entropy of a target label.
    TargetedCrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub eta: f64,
    pub steps: usize,
    pub random_init: bool,
    pub loss: AttackLoss,
    pub clip: (f64, f64),
}

impl Default for AttackConfig {
    /// Training-time attack for 8-bit image data: k=10, ε=8/255, η=2/255.
    fn default() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            eta: 2.0 / 255.0,
            steps: 10,
            random_init: true,
            loss: AttackLoss::CrossEntropy,
            clip: (0.0, 1.0),
        }
    }
}

impl AttackConfig {
    /// Evaluation attack for 8-bit image data: k=250, ε=8/255, η=2/255.
    pub fn image_eval() -> Self {
        Self {
            steps: 250,
            ..Self::default()
        }
    }

    /// Desk-scale default for synthetic data: ε=0.05, η=ε/4, k=10.
    pub fn synthetic() -> Self {
        Self {
            epsilon: 0.05,
            eta: 0.0125,
            ..Self::default()
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(contract_err!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if self.steps > 0 && !(self.eta > 0.0) {
            return Err(contract_err!("eta must be > 0 when steps > 0, got {}", self.eta));
        }
        if !(self.clip.0 < self.clip.1) {
            return Err(contract_err!("clip range {:?} is empty", self.clip));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackKind {
    None,
    Pgd,
    Mpgd,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::None => "none",
            AttackKind::Pgd => "pgd",
            AttackKind::Mpgd => "mpgd",
        })
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(AttackKind::None),
            "pgd" => Ok(AttackKind::Pgd),
            "mpgd" => Ok(AttackKind::Mpgd),
            other => Err(Error::Config(format!("unknown attack `{other}`"))),
        }
    }
}

/// Clamps `x_adv` into `[x - ε, x + ε] ∩ clip` componentwise.
pub fn project_linf(x_adv: &Tensor, x_orig: &Tensor, epsilon: f64, clip: (f64, f64)) -> Result<Tensor> {
    if !(epsilon >= 0.0) {
        return Err(contract_err!("epsilon must be >= 0, got {epsilon}"));
    }
    if x_adv.shape() != x_orig.shape() {
        return Err(dim_err!(
            "adversarial {:?} and original {:?} shapes differ",
            x_adv.shape(),
            x_orig.shape()
        ));
    }
    let data = x_adv
        .data()
        .iter()
        .zip(x_orig.data())
        .map(|(&a, &o)| {
            let lo = (o - epsilon).max(clip.0);
            let hi = (o + epsilon).min(clip.1);
            a.max(lo).min(hi)
        })
        .collect();
    Tensor::new(x_adv.shape().to_vec(), data)
}

fn check_labels(x: &Tensor, labels: &[usize], classes: usize) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(contract_err!("{} inputs but {} labels", x.rows(), labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(contract_err!("label {l} outside [0, {classes})"));
    }
    Ok(())
}

/// Gradient of the summed cross-entropy `Σᵢ -log softmax(h(xᵢ))[labelᵢ]`
/// with respect to the input batch. Weights are treated as constants.
pub fn input_gradient(model: &Model, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
    check_labels(x, labels, model.spec().num_classes)?;
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let xv = g.param(x.clone());
    let z = model.encoder_forward(&mut g, &p, xv)?;
    let logits = model.classifier_forward(&mut g, &p, z)?;
    let logp = g.log_softmax(logits, 1)?;
    let c = model.spec().num_classes;
    let mut pick = Tensor::zeros(&[labels.len(), c]);
    for (i, &l) in labels.iter().enumerate() {
        pick.data_mut()[i * c + l] = -1.0;
    }
    let pick = g.constant(pick);
    let nll = g.mul(logp, pick)?;
    let loss = g.sum(nll);
    let mut grads = g.backward(loss)?;
    Ok(grads.take(xv).expect("input requires grad"))
}

/// One signed-gradient step from `x_cur` followed by projection around `x_orig`.
pub fn pgd_step(
    model: &Model,
    x_cur: &Tensor,
    x_orig: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    let grad = input_gradient(model, x_cur, labels)?;
    let dir = match cfg.loss {
        AttackLoss::CrossEntropy => 1.0,
        AttackLoss::TargetedCrossEntropy => -1.0,
    };
    let stepped = x_cur
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| x + dir * cfg.eta * sign(g))
        .collect();
    let stepped = Tensor::new(x_cur.shape().to_vec(), stepped)?;
    project_linf(&stepped, x_orig, cfg.epsilon, cfg.clip)
}

/// Uniform start in the ε-ball, projected; row `r` uses stream `first_index + r`.
pub fn random_start(x: &Tensor, cfg: &AttackConfig, seed: u64, first_index: u64) -> Result<Tensor> {
    let d = x.cols();
    let mut data = Vec::with_capacity(x.numel());
    for (r, row) in x.row_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(first_index + r as u64);
        data.extend(row.iter().map(|&v| {
            let u: f64 = rng.random();
            v + cfg.epsilon * (2.0 * u - 1.0)
        }));
    }
    debug_assert_eq!(data.len(), x.rows() * d);
    let noisy = Tensor::new(x.shape().to_vec(), data)?;
    project_linf(&noisy, x, cfg.epsilon, cfg.clip)
}

/// PGD on `x` with rows numbered from zero.
pub fn pgd_attack(model: &Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig, seed: u64) -> Result<Tensor> {
    pgd_attack_at(model, x, labels, cfg, seed, 0)
}

/// PGD on `x` whose first row is sample `first_index` of a larger set.
///
/// With `cfg.loss` targeted, `labels` are the target classes.
pub fn pgd_attack_at(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    seed: u64,
    first_index: u64,
) -> Result<Tensor> {
    cfg.validate()?;
    check_labels(x, labels, model.spec().num_classes)?;
    if let Some(bad) = x.data().iter().find(|v| !(cfg.clip.0..=cfg.clip.1).contains(*v)) {
        return Err(contract_err!("input value {bad} outside clip range {:?}", cfg.clip));
    }
    if cfg.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let mut cur = if cfg.random_init {
        random_start(x, cfg, seed, first_index)?
    } else {
        x.clone()
    };
    for _ in 0..cfg.steps {
        cur = pgd_step(model, &cur, x, labels, cfg)?;
    }
    Ok(cur)
}

/// Per-row cross-entropy of `labels` under the model.
pub fn per_sample_cross_entropy(model: &Model, x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let logits = model.logits(x)?;
    Ok(logits
        .row_iter()
        .zip(labels)
        .map(|(row, &l)| {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            lse - row[l]
        })
        .collect())
}

/// Multi-targeted PGD.
///
/// Runs a targeted attack toward every wrong class `(y + r) mod C`,
/// `r = 1..C`, all from the same random start as [`pgd_attack_at`]. Per
/// sample it returns the first candidate (in `r` order) that changes the
/// prediction away from `y`, otherwise the candidate with the largest
/// untargeted cross-entropy.
pub fn multi_targeted_pgd(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    seed: u64,
    first_index: u64,
) -> Result<Tensor> {
    let c = model.spec().num_classes;
    if c < 2 {
        return Err(contract_err!("multi-targeted PGD needs at least 2 classes"));
    }
    check_labels(x, labels, c)?;
    let targeted = AttackConfig {
        loss: AttackLoss::TargetedCrossEntropy,
        ..*cfg
    };
    let n = x.rows();
    let mut chosen: Vec<Option<usize>> = vec![None; n];
    let mut best_loss = vec![f64::NEG_INFINITY; n];
    let mut fallback = vec![0usize; n];
    let mut candidates = Vec::with_capacity(c - 1);
    for r in 1..c {
        let targets: Vec<usize> = labels.iter().map(|&y| (y + r) % c).collect();
        let cand = pgd_attack_at(model, x, &targets, &targeted, seed, first_index)?;
        let preds = model.predict(&cand)?;
        let losses = per_sample_cross_entropy(model, &cand, labels)?;
        for i in 0..n {
            if chosen[i].is_none() && preds[i] != labels[i] {
                chosen[i] = Some(r - 1);
            }
            if losses[i] > best_loss[i] {
                best_loss[i] = losses[i];
                fallback[i] = r - 1;
            }
        }
        candidates.push(cand);
    }
    let mut data = Vec::with_capacity(x.numel());
    for i in 0..n {
        let k = chosen[i].unwrap_or(fallback[i]);
        data.extend_from_slice(candidates[k].row(i));
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Rows per chunk when attacking a whole dataset.
pub const EVAL_CHUNK: usize = 256;

/// Adversarial versions of every sample of `data` (inputs unchanged for `None`).
pub fn attack_dataset(
    model: &Model,
    data: &Dataset,
    attack: AttackKind,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Tensor> {
    if data.is_empty() {
        return Err(contract_err!("cannot attack an empty dataset"));
    }
    cfg.validate()?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let parts = idx
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let (x, y) = data.batch(chunk)?;
            let first = chunk[0] as u64;
            match attack {
                AttackKind::None => Ok(x),
                AttackKind::Pgd => pgd_attack_at(model, &x, &y, cfg, seed, first),
                AttackKind::Mpgd => multi_targeted_pgd(model, &x, &y, cfg, seed, first),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::vstack(&refs)
}

/// Fraction of samples whose attacked prediction equals the label.
pub fn robust_accuracy(
    model: &Model,
    data: &Dataset,
    attack: AttackKind,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<f64> {
    let x_adv = attack_dataset(model, data, attack, cfg, seed)?;
    accuracy(model, &x_adv, data.labels())
}

pub fn accuracy(model: &Model, x: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(contract_err!("accuracy of an empty set"));
    }
    let preds = model.predict(x)?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}
