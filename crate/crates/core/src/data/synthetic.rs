use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gaussian blobs around well-separated unit-norm centers.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobsConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dims: usize,
    /// Standard deviation of each coordinate around its class center.
    pub spread: f64,
    pub seed: u64,
}

/// Minimum pairwise distance requested between blob centers.
const CENTER_SEPARATION: f64 = 1.0;

fn random_centers(classes: usize, dims: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-9 {
                return v.into_iter().map(|a| a / n).collect();
            }
        }
    };
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        // Rejection keeps centers apart; give up after a bounded number of draws
        // when the dimension is too small to fit them all.
        let mut best = draw(rng);
        let mut best_gap = min_gap(&best, &centers);
        for _ in 0..200 {
            if best_gap >= CENTER_SEPARATION {
                break;
            }
            let c = draw(rng);
            let gap = min_gap(&c, &centers);
            if gap > best_gap {
                best = c;
                best_gap = gap;
            }
        }
        centers.push(best);
    }
    centers
}

fn min_gap(c: &[f64], others: &[Vec<f64>]) -> f64 {
    others
        .iter()
        .map(|o| o.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

/// Per-feature min-max rescaling into `[0, 1]`; constant features map to 0.5.
fn squash_columns(rows: &mut [Vec<f64>]) {
    let Some(d) = rows.first().map(Vec::len) else { return };
    for j in 0..d {
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
        for r in rows.iter_mut() {
            r[j] = if hi > lo {
                ((r[j] - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.5
            };
        }
    }
}

pub fn make_blobs(cfg: &BlobsConfig) -> Result<Dataset> {
    if cfg.classes == 0 || cfg.per_class == 0 || cfg.dims == 0 {
        return Err(Error::Config("blobs need positive classes, per_class and dims".into()));
    }
    if !(cfg.spread >= 0.0) || !cfg.spread.is_finite() {
        return Err(Error::Config(format!("invalid spread {}", cfg.spread)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = random_centers(cfg.classes, cfg.dims, &mut rng);
    let mut rows = Vec::with_capacity(cfg.classes * cfg.per_class);
    let mut labels = Vec::with_capacity(rows.capacity());
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..cfg.per_class {
            let row = center
                .iter()
                .map(|&m| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    m + cfg.spread * e
                })
                .collect();
            rows.push(row);
            labels.push(c);
        }
    }
    squash_columns(&mut rows);
    let x = Tensor::from_rows(&rows)?;
    Dataset::new(
        format!("blobs-c{}-d{}", cfg.classes, cfg.dims),
        Split::Train,
        x,
        labels,
        cfg.classes,
    )
}

/// Affine map from raw moon coordinates to the unit square:
/// `u = (x + OFFSET[0]) * SCALE[0]`, `v = (y + OFFSET[1]) * SCALE[1]`.
pub const MOONS_OFFSET: [f64; 2] = [1.5, 1.0];
pub const MOONS_SCALE: [f64; 2] = [0.25, 0.4];

fn linspace(n: usize, hi: f64) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if n > 1 { hi * i as f64 / (n - 1) as f64 } else { 0.0 })
}

/// Two interleaved half circles; `ceil(m/2)` samples in class 0 (upper arc),
/// `floor(m/2)` in class 1.
pub fn make_two_moons(m: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::Config("two moons need at least 2 samples".into()));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::Config(format!("invalid noise {noise}")));
    }
    let n_outer = m.div_ceil(2);
    let n_inner = m / 2;
    let pi = std::f64::consts::PI;
    let mut raw: Vec<([f64; 2], usize)> = Vec::with_capacity(m);
    raw.extend(linspace(n_outer, pi).map(|t| ([t.cos(), t.sin()], 0)));
    raw.extend(linspace(n_inner, pi).map(|t| ([1.0 - t.cos(), 0.5 - t.sin()], 1)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for (p, label) in raw {
        let mut r = [0.0; 2];
        for k in 0..2 {
            let e: f64 = if noise > 0.0 {
                rng.sample::<f64, _>(StandardNormal) * noise
            } else {
                0.0
            };
            r[k] = ((p[k] + e + MOONS_OFFSET[k]) * MOONS_SCALE[k]).clamp(0.0, 1.0);
        }
        rows.push(r);
        labels.push(label);
    }
    Dataset::new("two-moons", Split::Train, Tensor::from_rows(&rows)?, labels, 2)
}
