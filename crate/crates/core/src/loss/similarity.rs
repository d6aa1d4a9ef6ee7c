use crate::error::{dim_err, Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Norm floor used when normalizing rows inside the batched loss.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Similarity {
    #[default]
    Cosine,
    /// `-‖a - b‖_p`.
    NegLp(f64),
}

impl std::fmt::Display for Similarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Similarity::Cosine => f.write_str("cosine"),
            Similarity::NegLp(p) => write!(f, "lp:{p}"),
        }
    }
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "cosine" {
            return Ok(Similarity::Cosine);
        }
        let p = s
            .strip_prefix("lp:")
            .and_then(|p| p.parse::<f64>().ok())
            .ok_or_else(|| Error::Config(format!("unknown similarity `{s}`")))?;
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::Config(format!("lp similarity needs finite p >= 1, got {p}")));
        }
        Ok(Similarity::NegLp(p))
    }
}

fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Similarity of two vectors.
pub fn similarity(kind: Similarity, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err!("vectors of width {} and {}", a.len(), b.len()));
    }
    match kind {
        Similarity::Cosine => {
            let (na, nb) = (norm2(a), norm2(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Domain("cosine similarity of a zero vector".into()));
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            Ok((dot / (na * nb)).clamp(-1.0, 1.0))
        }
        Similarity::NegLp(p) => {
            if !(p >= 1.0) || !p.is_finite() {
                return Err(Error::Domain(format!("lp similarity needs finite p >= 1, got {p}")));
            }
            let d = if p == 2.0 {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            } else {
                a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>().powf(1.0 / p)
            };
            Ok(-d)
        }
    }
}

/// All pairwise similarities of the rows of `pool` (`R x D` → `R x R`).
///
/// Cosine rows are normalized by `max(‖z‖, NORM_FLOOR)`.
pub fn similarity_matrix(g: &mut Graph, kind: Similarity, pool: Var) -> Result<Var> {
    let shape = g.shape(pool).to_vec();
    if shape.len() != 2 {
        return Err(dim_err!("pool must be a matrix, got {shape:?}"));
    }
    let (r, d) = (shape[0], shape[1]);
    match kind {
        Similarity::Cosine => {
            let norms = g.pnorm(pool, 1, 2.0)?;
            let norms = g.clamp(norms, NORM_FLOOR, f64::INFINITY)?;
            let unit = g.div(pool, norms)?;
            let unit_t = g.transpose(unit)?;
            g.matmul(unit, unit_t)
        }
        Similarity::NegLp(p) => {
            let a = g.reshape(pool, &[r, 1, d])?;
            let b = g.reshape(pool, &[1, r, d])?;
            let diff = g.sub(a, b)?;
            let dist = g.pnorm(diff, 2, p)?;
            let dist = g.reshape(dist, &[r, r])?;
            Ok(g.neg(dist))
        }
    }
}

/// Value-only counterpart of [`similarity_matrix`].
pub fn similarity_matrix_value(kind: Similarity, pool: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.constant(pool.clone());
    let s = similarity_matrix(&mut g, kind, v)?;
    Ok(g.value(s).clone())
}
