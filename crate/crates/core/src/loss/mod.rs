//! Training objective: adversarial cross-entropy, a supervised contrastive
//! term over benign and adversarial latents, and a KL smoothness term.
//!
//! The contrastive pool for a batch of `N` samples has `2N` slots: natural
//! latents in `0..N`, adversarial latents in `N..2N`. Each anchor `i`
//! contributes two rows, one per view. For the natural view the reference
//! set is `P = positives ∪ {i+N}` and the denominator set
//! `D = positives ∪ negatives ∪ {i+N}`; the adversarial view swaps in slot
//! `i`. A row's loss is `LSE_{k∈D}(s_k/τ) - mean_{j∈P}(s_j/τ)` and the batch
//! loss sums all `2N` rows and divides by `N`.

mod selection;
mod similarity;

pub use selection::{
    counts_of, select, select_all, select_all_with, select_with, selection_stats, selection_stats_with,
    SelectionCounts, SelectionResult, SelectionStrategy,
};
pub use similarity::{similarity, similarity_matrix, similarity_matrix_value, Similarity, NORM_FLOOR};

use crate::error::{contract_err, dim_err, Error, Result};
use crate::model::{BoundParams, Model, PredictionSnapshot};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_scl: f64,
    pub lambda_vat: f64,
    pub tau: f64,
    pub similarity: Similarity,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_scl: 1.0,
            lambda_vat: 2.0,
            tau: 0.07,
            similarity: Similarity::Cosine,
        }
    }
}

impl LossWeights {
    /// Plain adversarial training: both extra terms switched off.
    pub fn adversarial_only() -> Self {
        Self {
            lambda_scl: 0.0,
            lambda_vat: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        for (name, v) in [("lambda_scl", self.lambda_scl), ("lambda_vat", self.lambda_vat)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let Similarity::NegLp(p) = self.similarity {
            if !(p >= 1.0) || !p.is_finite() {
                return Err(Error::Config(format!("lp similarity needs finite p >= 1, got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossFlags {
    /// Keep the natural-input cross-entropy in the AT term.
    pub nat_ce: bool,
    pub use_vat: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self {
            nat_ce: true,
            use_vat: true,
        }
    }
}

fn row_loss(sims: impl Fn(usize) -> Result<f64>, reference: &[usize], denominator: &[usize], tau: f64) -> Result<f64> {
    let d: Vec<f64> = denominator.iter().map(|&k| Ok(sims(k)? / tau)).collect::<Result<_>>()?;
    let mx = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + d.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    let mut mean = 0.0;
    for &j in reference {
        mean += sims(j)? / tau;
    }
    mean /= reference.len() as f64;
    Ok(lse - mean)
}

fn anchor_sets(sel: &SelectionResult, special: usize) -> (Vec<usize>, Vec<usize>) {
    let mut reference = sel.positives.clone();
    reference.push(special);
    let mut denominator = reference.clone();
    denominator.extend_from_slice(&sel.negatives);
    (reference, denominator)
}

fn check_pool(pool: &Tensor, sel: &SelectionResult) -> Result<usize> {
    if pool.rank() != 2 || pool.rows() % 2 != 0 {
        return Err(dim_err!("pool must have 2N rows, got {:?}", pool.shape()));
    }
    let n = pool.rows() / 2;
    if sel.anchor >= n || sel.anchor_adv_slot != sel.anchor + n {
        return Err(contract_err!("selection for anchor {} does not fit a pool of {n} pairs", sel.anchor));
    }
    Ok(n)
}

/// Contrastive loss of anchor `z_i` (pool row `i`).
pub fn scl_anchor_nat(pool: &Tensor, sel: &SelectionResult, weights: &LossWeights) -> Result<f64> {
    check_pool(pool, sel)?;
    let (p, d) = anchor_sets(sel, sel.anchor_adv_slot);
    let z = pool.row(sel.anchor);
    row_loss(|k| similarity(weights.similarity, pool.row(k), z), &p, &d, weights.tau)
}

/// Contrastive loss of anchor `z_i^a` (pool row `i + N`), with `z_i` as the paired slot.
pub fn scl_anchor_adv(pool: &Tensor, sel: &SelectionResult, weights: &LossWeights) -> Result<f64> {
    check_pool(pool, sel)?;
    let (p, d) = anchor_sets(sel, sel.anchor);
    let z = pool.row(sel.anchor_adv_slot);
    row_loss(|k| similarity(weights.similarity, pool.row(k), z), &p, &d, weights.tau)
}

/// Batch contrastive loss evaluated anchor by anchor.
pub fn scl_batch_value(pool: &Tensor, selections: &[SelectionResult], weights: &LossWeights) -> Result<f64> {
    if pool.rows() != 2 * selections.len() {
        return Err(dim_err!("pool has {} rows for {} anchors", pool.rows(), selections.len()));
    }
    let mut total = 0.0;
    for sel in selections {
        total += scl_anchor_nat(pool, sel, weights)? + scl_anchor_adv(pool, sel, weights)?;
    }
    Ok(total / selections.len() as f64)
}

/// Reference-set weights and denominator mask, both `2N x 2N`.
fn scl_masks(selections: &[SelectionResult]) -> (Tensor, Tensor) {
    let n = selections.len();
    let w = 2 * n;
    let mut weight = Tensor::zeros(&[w, w]);
    let mut mask = Tensor::zeros(&[w, w]);
    for sel in selections {
        for (row, special) in [(sel.anchor, sel.anchor_adv_slot), (sel.anchor_adv_slot, sel.anchor)] {
            let (p, d) = anchor_sets(sel, special);
            let share = 1.0 / p.len() as f64;
            for j in p {
                weight.data_mut()[row * w + j] = share;
            }
            for k in d {
                mask.data_mut()[row * w + k] = 1.0;
            }
        }
    }
    (weight, mask)
}

/// Batch contrastive loss on a `2N x D` pool inside a graph.
pub fn scl_batch(
    g: &mut Graph,
    pool: Var,
    selections: &[SelectionResult],
    weights: &LossWeights,
) -> Result<Var> {
    let n = selections.len();
    if n == 0 {
        return Err(contract_err!("contrastive loss needs N >= 1"));
    }
    if g.shape(pool).first() != Some(&(2 * n)) {
        return Err(dim_err!("pool {:?} does not hold 2N = {} rows", g.shape(pool), 2 * n));
    }
    let (weight, mask) = scl_masks(selections);
    let sims = similarity_matrix(g, weights.similarity, pool)?;
    let logits = g.scale(sims, 1.0 / weights.tau);
    let lse = g.log_sum_exp_masked(logits, 1, &mask)?;
    let weight = g.constant(weight);
    let picked = g.mul(logits, weight)?;
    let reference = g.sum_axis(picked, 1)?;
    let rows = g.sub(lse, reference)?;
    let total = g.sum(rows);
    Ok(g.scale(total, 1.0 / n as f64))
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(contract_err!("{} labels for {rows} rows", labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(contract_err!("label {l} outside [0, {classes})"));
    }
    Ok(())
}

fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let c = logits.cols().max(1);
    for row in out.data_mut().chunks_mut(c) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// `(1/N) Σ [CE(nat) + CE(adv)]`, the natural term dropped when `nat_ce` is false.
pub fn at_loss(g: &mut Graph, logits_nat: Var, logits_adv: Var, labels: &[usize], nat_ce: bool) -> Result<Var> {
    let shape = g.shape(logits_adv).to_vec();
    if g.shape(logits_nat) != shape.as_slice() || shape.len() != 2 {
        return Err(dim_err!("logit shapes {:?} and {shape:?} do not pair up", g.shape(logits_nat)));
    }
    check_labels(labels, shape[0], shape[1])?;
    let (n, c) = (shape[0], shape[1]);
    let mut pick = Tensor::zeros(&[n, c]);
    for (i, &l) in labels.iter().enumerate() {
        pick.data_mut()[i * c + l] = -1.0 / n as f64;
    }
    let pick = g.constant(pick);
    let lp_adv = g.log_softmax(logits_adv, 1)?;
    let adv = g.mul(lp_adv, pick)?;
    let adv = g.sum(adv);
    if !nat_ce {
        return Ok(adv);
    }
    let lp_nat = g.log_softmax(logits_nat, 1)?;
    let nat = g.mul(lp_nat, pick)?;
    let nat = g.sum(nat);
    g.add(nat, adv)
}

/// `(1/N) Σ KL(h(x) ‖ h(x^a))`; gradients flow through both distributions.
pub fn vat_loss(g: &mut Graph, logits_nat: Var, logits_adv: Var) -> Result<Var> {
    let shape = g.shape(logits_nat).to_vec();
    if g.shape(logits_adv) != shape.as_slice() || shape.len() != 2 {
        return Err(dim_err!("logit shapes {shape:?} and {:?} do not pair up", g.shape(logits_adv)));
    }
    let lp = g.log_softmax(logits_nat, 1)?;
    let lq = g.log_softmax(logits_adv, 1)?;
    let p = g.exp(lp);
    let diff = g.sub(lp, lq)?;
    let terms = g.mul(p, diff)?;
    let total = g.sum(terms);
    Ok(g.scale(total, 1.0 / shape[0] as f64))
}

/// Value of [`at_loss`] from a snapshot.
pub fn at_loss_value(snapshot: &PredictionSnapshot, labels: &[usize], nat_ce: bool) -> Result<f64> {
    let n = snapshot.len();
    check_labels(labels, n, snapshot.num_classes())?;
    let lp_nat = log_softmax_rows(&snapshot.logits_nat);
    let lp_adv = log_softmax_rows(&snapshot.logits_adv);
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if nat_ce {
            total -= lp_nat.row(i)[l];
        }
        total -= lp_adv.row(i)[l];
    }
    Ok(total / n as f64)
}

/// Value of [`vat_loss`] from a snapshot.
pub fn vat_loss_value(snapshot: &PredictionSnapshot) -> Result<f64> {
    if snapshot.is_empty() {
        return Err(contract_err!("KL term of an empty batch"));
    }
    let lp = log_softmax_rows(&snapshot.logits_nat);
    let lq = log_softmax_rows(&snapshot.logits_adv);
    let total: f64 = lp
        .data()
        .iter()
        .zip(lq.data())
        .map(|(&a, &b)| a.exp() * (a - b))
        .sum();
    Ok(total / snapshot.len() as f64)
}

/// Term values of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub at: f64,
    pub scl: f64,
    pub vat: f64,
}

/// The combined objective on one batch, ready for a backward pass.
pub struct Objective {
    pub graph: Graph,
    pub params: BoundParams,
    pub total: Var,
    pub terms: LossTerms,
    pub counts: SelectionCounts,
    pub snapshot: PredictionSnapshot,
}

impl Objective {
    /// Gradients for every model parameter, in parameter order.
    pub fn gradients(mut self) -> Result<Vec<Tensor>> {
        let mut grads = self.graph.backward(self.total)?;
        self.params
            .vars()
            .iter()
            .map(|&v| grads.take(v).ok_or_else(|| Error::State("parameter without gradient".into())))
            .collect()
    }
}

/// `L = L_AT + λ_scl L_SCL + λ_vat L_VAT` on `(x, y, x_adv)`.
///
/// A single forward pass over `[x; x_adv]` feeds every term and the
/// prediction snapshot that drives sample selection. Terms with a zero
/// weight are still evaluated and reported but stay off the gradient path.
pub fn total_loss(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    x_adv: &Tensor,
    strategy: SelectionStrategy,
    weights: &LossWeights,
    flags: LossFlags,
) -> Result<Objective> {
    weights.validate()?;
    if x.shape() != x_adv.shape() {
        return Err(dim_err!("benign {:?} and adversarial {:?} batches differ", x.shape(), x_adv.shape()));
    }
    let n = x.rows();
    if n == 0 {
        return Err(contract_err!("empty batch"));
    }
    check_labels(labels, n, model.spec().num_classes)?;

    let mut g = Graph::new();
    let params = model.bind(&mut g, true);
    let input = g.constant(Tensor::vstack(&[x, x_adv])?);
    let z = model.encoder_forward(&mut g, &params, input)?;
    let logits = model.classifier_forward(&mut g, &params, z)?;
    let logits_nat = g.slice_rows(logits, 0, n)?;
    let logits_adv = g.slice_rows(logits, n, 2 * n)?;
    let snapshot = PredictionSnapshot::from_logits(g.value(logits_nat).clone(), g.value(logits_adv).clone())?;

    let selections = select_all(strategy, labels, &snapshot)?;
    let counts = counts_of(&selections);

    let at = at_loss(&mut g, logits_nat, logits_adv, labels, flags.nat_ce)?;
    let pool = model.project(&mut g, &params, z)?;
    let scl = scl_batch(&mut g, pool, &selections, weights)?;
    let vat = flags.use_vat.then(|| vat_loss(&mut g, logits_nat, logits_adv)).transpose()?;

    let mut total = at;
    if weights.lambda_scl > 0.0 {
        let t = g.scale(scl, weights.lambda_scl);
        total = g.add(total, t)?;
    }
    if let Some(vat) = vat.filter(|_| weights.lambda_vat > 0.0) {
        let t = g.scale(vat, weights.lambda_vat);
        total = g.add(total, t)?;
    }
    let terms = LossTerms {
        total: g.value(total).item()?,
        at: g.value(at).item()?,
        scl: g.value(scl).item()?,
        vat: vat.map_or(Ok(0.0), |v| g.value(v).item())?,
    };
    Ok(Objective {
        graph: g,
        params,
        total,
        terms,
        counts,
        snapshot,
    })
}
