//! Latent-space divergence diagnostics.
//!
//! For a pool of latents (benign and, optionally, adversarial), every slot
//! serves as an anchor. Its positives are the other-sample slots with the
//! same true label, its negatives the slots with a different label; the slot
//! holding the other view of the same sample belongs to neither. With
//! cosine distance `d = 1 - cos`:
//!
//! * `d_a⁺` is the mean over anchors of the mean distance to positives,
//! * `d_a⁻` is the same over negatives,
//! * `R-DIV = d_a⁺ / d_a⁻`.
//!
//! Anchors with an empty set are left out of that side's outer mean.

use std::io::Write;

use crate::adversary::{accuracy, attack_dataset, AttackConfig, AttackKind};
use crate::data::Dataset;
use crate::error::{contract_err, dim_err, Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Below this `d_a⁻` the ratio is reported as undefined.
pub const RDIV_TOLERANCE: f64 = 1e-12;

/// Samples per mini-batch when a dataset is summarized.
pub const DIVERGENCE_BATCH: usize = 128;

pub const LAYER_NAME: &str = "penultimate";

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn pairwise_cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err!("vectors of width {} and {}", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine distance of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

/// Latents with a class label and a source-sample id per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPool {
    latents: Tensor,
    labels: Vec<usize>,
    sources: Vec<usize>,
}

impl LatentPool {
    pub fn new(latents: Tensor, labels: Vec<usize>, sources: Vec<usize>) -> Result<Self> {
        if latents.rank() != 2 {
            return Err(dim_err!("latents must be a matrix, got {:?}", latents.shape()));
        }
        if labels.len() != latents.rows() || sources.len() != latents.rows() {
            return Err(contract_err!(
                "{} latents, {} labels, {} source ids",
                latents.rows(),
                labels.len(),
                sources.len()
            ));
        }
        Ok(Self {
            latents,
            labels,
            sources,
        })
    }

    /// Benign latents of `N` samples, optionally followed by their adversarial
    /// latents; slot `j` and `j + N` share source `j`.
    pub fn paired(natural: &Tensor, adversarial: Option<&Tensor>, labels: &[usize]) -> Result<Self> {
        let n = natural.rows();
        if labels.len() != n {
            return Err(contract_err!("{n} latents but {} labels", labels.len()));
        }
        let Some(adv) = adversarial else {
            return Self::new(natural.clone(), labels.to_vec(), (0..n).collect());
        };
        if adv.shape() != natural.shape() {
            return Err(dim_err!("benign {:?} and adversarial {:?} latents differ", natural.shape(), adv.shape()));
        }
        let latents = Tensor::vstack(&[natural, adv])?;
        let labels = labels.iter().chain(labels).copied().collect();
        let sources = (0..n).chain(0..n).collect();
        Self::new(latents, labels, sources)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn latents(&self) -> &Tensor {
        &self.latents
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    /// Drops zero-norm latents, which have no direction. Returns the number removed.
    pub fn drop_zero_latents(&mut self) -> Result<usize> {
        let keep: Vec<usize> = (0..self.len()).filter(|&r| norm(self.latents.row(r)) > 0.0).collect();
        let removed = self.len() - keep.len();
        if removed > 0 {
            self.latents = if keep.is_empty() {
                Tensor::zeros(&[0, self.latents.cols()])
            } else {
                self.latents.select_rows(&keep)?
            };
            self.labels = keep.iter().map(|&r| self.labels[r]).collect();
            self.sources = keep.iter().map(|&r| self.sources[r]).collect();
        }
        Ok(removed)
    }
}

/// `(d_a⁺, d_a⁻)` of a pool.
pub fn absolute_divergences(pool: &LatentPool) -> Result<(f64, f64)> {
    let m = pool.len();
    let unit: Vec<Vec<f64>> = (0..m)
        .map(|r| {
            let row = pool.latents.row(r);
            let n = norm(row);
            if n == 0.0 {
                Err(Error::Domain(format!("latent {r} has zero norm")))
            } else {
                Ok(row.iter().map(|v| v / n).collect())
            }
        })
        .collect::<Result<_>>()?;
    let (mut plus, mut n_plus, mut minus, mut n_minus) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..m {
        let (mut sp, mut cp, mut sn, mut cn) = (0.0, 0usize, 0.0, 0usize);
        for b in 0..m {
            if pool.sources[b] == pool.sources[a] {
                continue;
            }
            let dot: f64 = unit[a].iter().zip(&unit[b]).map(|(x, y)| x * y).sum();
            let d = (1.0 - dot).clamp(0.0, 2.0);
            if pool.labels[b] == pool.labels[a] {
                sp += d;
                cp += 1;
            } else {
                sn += d;
                cn += 1;
            }
        }
        if cp > 0 {
            plus += sp / cp as f64;
            n_plus += 1;
        }
        if cn > 0 {
            minus += sn / cn as f64;
            n_minus += 1;
        }
    }
    if n_plus == 0 || n_minus == 0 {
        return Err(Error::Degenerate(format!(
            "no anchor has a {} set",
            if n_plus == 0 { "positive" } else { "negative" }
        )));
    }
    Ok((plus / n_plus as f64, minus / n_minus as f64))
}

/// `d_a⁺ / d_a⁻`, or `None` when `d_a⁻` is within tolerance of zero.
pub fn relative_divergence(d_a_plus: f64, d_a_minus: f64) -> Option<f64> {
    (d_a_minus > RDIV_TOLERANCE).then(|| d_a_plus / d_a_minus)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceReport {
    pub d_a_plus: f64,
    pub d_a_minus: f64,
    pub r_div: Option<f64>,
    pub layer_name: String,
    /// Source samples that contributed.
    pub n_samples: usize,
    /// Zero-norm latents left out of the pools.
    pub dropped_latents: usize,
}

impl DivergenceReport {
    pub fn from_pool(pool: &LatentPool) -> Result<Self> {
        let (p, m) = absolute_divergences(pool)?;
        let mut sources = pool.sources.clone();
        sources.sort_unstable();
        sources.dedup();
        Ok(Self {
            d_a_plus: p,
            d_a_minus: m,
            r_div: relative_divergence(p, m),
            layer_name: LAYER_NAME.into(),
            n_samples: sources.len(),
            dropped_latents: 0,
        })
    }
}

/// Divergences of the model's latents on `data` (and `x_adv`, when given),
/// averaged over interleaved mini-batches of at most [`DIVERGENCE_BATCH`]
/// samples (sample `i` goes to batch `i mod n_batches`).
/// Batches without a positive or negative pair are skipped.
pub fn divergence_report(model: &Model, data: &Dataset, x_adv: Option<&Tensor>) -> Result<DivergenceReport> {
    if let Some(adv) = x_adv {
        if adv.shape() != data.features().shape() {
            return Err(dim_err!(
                "adversarial inputs {:?} do not match the dataset {:?}",
                adv.shape(),
                data.features().shape()
            ));
        }
    }
    let n_batches = data.len().div_ceil(DIVERGENCE_BATCH);
    let (mut plus, mut minus, mut batches, mut samples, mut dropped) = (0.0, 0.0, 0usize, 0usize, 0usize);
    for b in 0..n_batches {
        let chunk: Vec<usize> = (b..data.len()).step_by(n_batches).collect();
        let chunk = chunk.as_slice();
        let (x, y) = data.batch(chunk)?;
        let z_nat = model.latent(&x)?;
        let z_adv = x_adv.map(|a| a.select_rows(chunk).and_then(|xa| model.latent(&xa))).transpose()?;
        let mut pool = LatentPool::paired(&z_nat, z_adv.as_ref(), &y)?;
        dropped += pool.drop_zero_latents()?;
        match absolute_divergences(&pool) {
            Ok((p, m)) => {
                plus += p;
                minus += m;
                batches += 1;
                samples += chunk.len();
            }
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if batches == 0 {
        return Err(Error::Degenerate("no mini-batch has both positive and negative pairs".into()));
    }
    let (p, m) = (plus / batches as f64, minus / batches as f64);
    Ok(DivergenceReport {
        d_a_plus: p,
        d_a_minus: m,
        r_div: relative_divergence(p, m),
        layer_name: LAYER_NAME.into(),
        n_samples: samples,
        dropped_latents: dropped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub report: DivergenceReport,
    pub robust_acc: f64,
}

/// Divergence and robust accuracy at each radius in `epsilons`, ascending.
/// At `ε = 0` the pool is benign-only and accuracy is natural accuracy.
pub fn divergence_sweep(
    model: &Model,
    data: &Dataset,
    attack: AttackKind,
    base: &AttackConfig,
    epsilons: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut eps = epsilons.to_vec();
    if eps.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
        return Err(contract_err!("epsilons must be finite and >= 0"));
    }
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    eps.into_iter()
        .map(|e| {
            if e == 0.0 || attack == AttackKind::None {
                let report = divergence_report(model, data, None)?;
                let acc = accuracy(model, data.features(), data.labels())?;
                return Ok(SweepRow {
                    epsilon: e,
                    report,
                    robust_acc: acc,
                });
            }
            let cfg = base.with_epsilon(e);
            let x_adv = attack_dataset(model, data, attack, &cfg, seed)?;
            let report = divergence_report(model, data, Some(&x_adv))?;
            let acc = accuracy(model, &x_adv, data.labels())?;
            Ok(SweepRow {
                epsilon: e,
                report,
                robust_acc: acc,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: [&str; 7] = [
    "epsilon",
    "d_a_plus",
    "d_a_minus",
    "r_div",
    "robust_acc",
    "n_samples",
    "layer_name",
];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(SWEEP_CSV_HEADER).map_err(to_io)?;
    for r in rows {
        out.write_record([
            r.epsilon.to_string(),
            r.report.d_a_plus.to_string(),
            r.report.d_a_minus.to_string(),
            r.report.r_div.map(|v| v.to_string()).unwrap_or_default(),
            r.robust_acc.to_string(),
            r.report.n_samples.to_string(),
            r.report.layer_name.clone(),
        ])
        .map_err(to_io)?;
    }
    out.flush()?;
    Ok(())
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant or the
/// inputs have fewer than two points.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}
