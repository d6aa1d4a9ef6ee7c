//! Independent reference implementations used by the test suites.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, Radix, RoundingMode};

use ascl_core::loss::{SelectionResult, Similarity};
use ascl_core::tensor::Tensor;

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

pub struct Big {
    cc: Consts,
}

impl Default for Big {
    fn default() -> Self {
        Self {
            cc: Consts::new().expect("constants cache"),
        }
    }
}

impl Big {
    fn f(&self, v: f64) -> BigFloat {
        BigFloat::from_f64(v, PREC)
    }

    fn to_f64(&mut self, v: &BigFloat) -> f64 {
        v.format(Radix::Dec, RM, &mut self.cc)
            .expect("format")
            .parse()
            .expect("decimal")
    }

    fn norm_p(&mut self, v: &[BigFloat], p: f64) -> BigFloat {
        let mut acc = BigFloat::from_f64(0.0, PREC);
        if p == 2.0 {
            for x in v {
                acc = acc.add(&x.mul(x, PREC, RM), PREC, RM);
            }
            return acc.sqrt(PREC, RM);
        }
        let pi = p as usize;
        assert_eq!(pi as f64, p, "oracle supports integer p only");
        for x in v {
            acc = acc.add(&x.abs().powi(pi, PREC, RM), PREC, RM);
        }
        if pi == 1 {
            return acc;
        }
        if acc.is_zero() {
            return acc;
        }
        let inv = self.f(1.0).div(&self.f(p), PREC, RM);
        acc.pow(&inv, PREC, RM, &mut self.cc)
    }

    fn sim(&mut self, kind: Similarity, a: &[f64], b: &[f64]) -> BigFloat {
        let a: Vec<BigFloat> = a.iter().map(|&v| self.f(v)).collect();
        let b: Vec<BigFloat> = b.iter().map(|&v| self.f(v)).collect();
        match kind {
            Similarity::Cosine => {
                let mut dot = self.f(0.0);
                for (x, y) in a.iter().zip(&b) {
                    dot = dot.add(&x.mul(y, PREC, RM), PREC, RM);
                }
                let na = self.norm_p(&a, 2.0);
                let nb = self.norm_p(&b, 2.0);
                dot.div(&na.mul(&nb, PREC, RM), PREC, RM)
            }
            Similarity::NegLp(p) => {
                let d: Vec<BigFloat> = a.iter().zip(&b).map(|(x, y)| x.sub(y, PREC, RM)).collect();
                self.norm_p(&d, p).neg()
            }
        }
    }

    /// `-(1/|P|) Σ_{j∈P} ln( e^{s_j/τ} / Σ_{k∈D} e^{s_k/τ} )` with `s` measured against `anchor`.
    fn anchor_loss(
        &mut self,
        kind: Similarity,
        tau: f64,
        pool: &Tensor,
        anchor: usize,
        reference: &[usize],
        denominator: &[usize],
    ) -> BigFloat {
        let tau = self.f(tau);
        let e = |k: usize, me: &mut Self| {
            let s = me.sim(kind, pool.row(k), pool.row(anchor));
            s.div(&tau, PREC, RM).exp(PREC, RM, &mut me.cc)
        };
        let mut denom = self.f(0.0);
        for &k in denominator {
            denom = denom.add(&e(k, self), PREC, RM);
        }
        let mut total = self.f(0.0);
        for &j in reference {
            let ratio = e(j, self).div(&denom, PREC, RM);
            total = total.add(&ratio.ln(PREC, RM, &mut self.cc), PREC, RM);
        }
        total.div(&self.f(reference.len() as f64), PREC, RM).neg()
    }

    fn sets(sel: &SelectionResult, special: usize) -> (Vec<usize>, Vec<usize>) {
        let mut p = sel.positives.clone();
        p.push(special);
        let mut d = p.clone();
        d.extend_from_slice(&sel.negatives);
        (p, d)
    }

    pub fn scl_nat(&mut self, kind: Similarity, tau: f64, pool: &Tensor, sel: &SelectionResult) -> f64 {
        let (p, d) = Self::sets(sel, sel.anchor_adv_slot);
        let v = self.anchor_loss(kind, tau, pool, sel.anchor, &p, &d);
        self.to_f64(&v)
    }

    pub fn scl_adv(&mut self, kind: Similarity, tau: f64, pool: &Tensor, sel: &SelectionResult) -> f64 {
        let (p, d) = Self::sets(sel, sel.anchor);
        let v = self.anchor_loss(kind, tau, pool, sel.anchor_adv_slot, &p, &d);
        self.to_f64(&v)
    }

    pub fn scl_batch(&mut self, kind: Similarity, tau: f64, pool: &Tensor, sels: &[SelectionResult]) -> f64 {
        let mut total = self.f(0.0);
        for sel in sels {
            let (p, d) = Self::sets(sel, sel.anchor_adv_slot);
            total = total.add(&self.anchor_loss(kind, tau, pool, sel.anchor, &p, &d), PREC, RM);
            let (p, d) = Self::sets(sel, sel.anchor);
            total = total.add(&self.anchor_loss(kind, tau, pool, sel.anchor_adv_slot, &p, &d), PREC, RM);
        }
        let v = total.div(&self.f(sels.len() as f64), PREC, RM);
        self.to_f64(&v)
    }
}

/// `|a - b| <= tol * max(|b|, 1)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Plain double loop over a pool: `(d_a⁺, d_a⁻)`; `None` when a side has no anchors.
pub fn brute_divergences(z: &Tensor, labels: &[usize], sources: &[usize]) -> Option<(f64, f64)> {
    let dist = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    };
    let m = labels.len();
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for i in 0..m {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for j in 0..m {
            if sources[j] == sources[i] {
                continue;
            }
            let d = dist(z.row(i), z.row(j));
            if labels[j] == labels[i] {
                pos.push(d);
            } else {
                neg.push(d);
            }
        }
        if !pos.is_empty() {
            plus.push(pos.iter().sum::<f64>() / pos.len() as f64);
        }
        if !neg.is_empty() {
            minus.push(neg.iter().sum::<f64>() / neg.len() as f64);
        }
    }
    if plus.is_empty() || minus.is_empty() {
        return None;
    }
    Some((
        plus.iter().sum::<f64>() / plus.len() as f64,
        minus.iter().sum::<f64>() / minus.len() as f64,
    ))
}

/// Central finite differences of `f` around `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + h;
            let up = f(&probe);
            probe[k] = orig - h;
            let down = f(&probe);
            probe[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_k |a_k - b_k| / max(max_k |b_k|, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let scale = numeric.iter().fold(floor, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// `ln Σ exp(v)` by direct summation in extended precision.
pub fn lse_oracle(big: &mut Big, v: &[f64]) -> f64 {
    let mut acc = BigFloat::from_f64(0.0, PREC);
    for &x in v {
        acc = acc.add(&BigFloat::from_f64(x, PREC).exp(PREC, RM, &mut big.cc), PREC, RM);
    }
    let r = acc.ln(PREC, RM, &mut big.cc);
    big.to_f64(&r)
}
