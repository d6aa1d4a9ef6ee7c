//! MLP classifiers `h(x) = g(f(x))` with an exposed penultimate latent.
//!
//! The encoder `f` is a stack of affine + ReLU layers; its last activation is
//! the latent `z` on which the contrastive loss and the divergence metrics are
//! computed. The classifier `g` is a single affine map to logits. An optional
//! bias-free projection head maps `z` to the space used by the contrastive loss.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Contrastive projection head applied to the latent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Projection {
    #[default]
    Identity,
    /// `W¹ z`, no bias.
    Linear { out: usize },
    /// `W² relu(W¹ z)`, no biases.
    TwoLayer { mid: usize, out: usize },
}

impl Projection {
    pub const DEFAULT_OUT: usize = 128;
    pub const DEFAULT_MID: usize = 200;

    pub fn linear() -> Self {
        Self::Linear {
            out: Self::DEFAULT_OUT,
        }
    }

    pub fn two_layer() -> Self {
        Self::TwoLayer {
            mid: Self::DEFAULT_MID,
            out: Self::DEFAULT_OUT,
        }
    }
}

impl std::fmt::Display for Projection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Projection::Identity => write!(f, "identity"),
            Projection::Linear { out } => write!(f, "linear:{out}"),
            Projection::TwoLayer { mid, out } => write!(f, "two_layer:{mid}:{out}"),
        }
    }
}

impl std::str::FromStr for Projection {
    type Err = Error;

    /// Accepts `identity`, `linear[:out]` and `two_layer[:mid:out]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad projection width `{p}`")))
        };
        match parts.as_slice() {
            ["identity"] => Ok(Projection::Identity),
            ["linear"] => Ok(Projection::linear()),
            ["linear", out] => Ok(Projection::Linear { out: num(out)? }),
            ["two_layer"] => Ok(Projection::two_layer()),
            ["two_layer", mid, out] => Ok(Projection::TwoLayer {
                mid: num(mid)?,
                out: num(out)?,
            }),
            _ => Err(Error::Config(format!("unknown projection `{s}`"))),
        }
    }
}

/// Architecture of an MLP classifier. All hidden layers use ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub projection: Projection,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            num_classes,
            projection: Projection::Identity,
        }
    }

    pub fn with_projection(mut self, projection: Projection) -> Self {
        self.projection = projection;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("input_dim and num_classes must be positive".into()));
        }
        if self.hidden.is_empty() {
            // Without a hidden layer there is no nonlinear latent to regularize.
            return Err(Error::Config(
                "a model needs at least one hidden ReLU layer".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        match self.projection {
            Projection::Linear { out: 0 } | Projection::TwoLayer { out: 0, .. } => {
                Err(Error::Config("projection width must be positive".into()))
            }
            Projection::TwoLayer { mid: 0, .. } => {
                Err(Error::Config("projection width must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Width `h` of the penultimate layer.
    pub fn latent_dim(&self) -> usize {
        *self.hidden.last().expect("validated spec has a hidden layer")
    }

    /// Width of the representation the contrastive loss sees.
    pub fn contrastive_dim(&self) -> usize {
        match self.projection {
            Projection::Identity => self.latent_dim(),
            Projection::Linear { out } | Projection::TwoLayer { out, .. } => out,
        }
    }

    /// Parameter shapes in declaration order: `(W, b)` per hidden layer, the
    /// classifier `(W, b)`, then projection weights.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut fan_in = self.input_dim;
        for &w in &self.hidden {
            shapes.push(vec![fan_in, w]);
            shapes.push(vec![1, w]);
            fan_in = w;
        }
        shapes.push(vec![fan_in, self.num_classes]);
        shapes.push(vec![1, self.num_classes]);
        match self.projection {
            Projection::Identity => {}
            Projection::Linear { out } => shapes.push(vec![fan_in, out]),
            Projection::TwoLayer { mid, out } => {
                shapes.push(vec![fan_in, mid]);
                shapes.push(vec![mid, out]);
            }
        }
        shapes
    }
}

/// Model parameters bound into a [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
    n_hidden: usize,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Tensor>,
}

impl Model {
    /// Glorot-uniform weights (`±sqrt(6 / (fan_in + fan_out))`), zero biases.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|shape| {
                if shape[0] == 1 {
                    return Tensor::zeros(&shape);
                }
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let n = shape[0] * shape[1];
                let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                Tensor::new(shape, data).expect("shape from spec")
            })
            .collect();
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(dim_err!(
                "spec declares {} parameter arrays, got {}",
                shapes.len(),
                params.len()
            ));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(dim_err!("parameter {i}: expected {s:?}, got {:?}", p.shape()));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Records the parameters as leaves of `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.clone(), trainable))
            .collect();
        BoundParams {
            vars,
            n_hidden: self.spec.hidden.len(),
        }
    }

    fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }

    /// `z = f(x)`: the last hidden activation.
    pub fn encoder_forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let width = g.shape(x).get(1).copied();
        if g.shape(x).len() != 2 || width != Some(self.spec.input_dim) {
            return Err(dim_err!(
                "input of shape {:?} does not match input_dim {}",
                g.shape(x),
                self.spec.input_dim
            ));
        }
        let mut h = x;
        for l in 0..p.n_hidden {
            let a = Self::affine(g, h, p.vars[2 * l], p.vars[2 * l + 1])?;
            h = g.relu(a);
        }
        Ok(h)
    }

    /// Logits `g(z)`.
    pub fn classifier_forward(&self, g: &mut Graph, p: &BoundParams, z: Var) -> Result<Var> {
        if g.shape(z).get(1).copied() != Some(self.spec.latent_dim()) {
            return Err(dim_err!(
                "latent of shape {:?} does not match latent_dim {}",
                g.shape(z),
                self.spec.latent_dim()
            ));
        }
        let base = 2 * p.n_hidden;
        Self::affine(g, z, p.vars[base], p.vars[base + 1])
    }

    /// Representation fed to the contrastive loss.
    pub fn project(&self, g: &mut Graph, p: &BoundParams, z: Var) -> Result<Var> {
        let base = 2 * p.n_hidden + 2;
        match self.spec.projection {
            Projection::Identity => Ok(z),
            Projection::Linear { .. } => g.matmul(z, p.vars[base]),
            Projection::TwoLayer { .. } => {
                let a = g.matmul(z, p.vars[base])?;
                let r = g.relu(a);
                g.matmul(r, p.vars[base + 1])
            }
        }
    }

    /// Latent and logits for a batch, without gradients.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let z = self.encoder_forward(&mut g, &p, xv)?;
        let logits = self.classifier_forward(&mut g, &p, z)?;
        Ok((g.value(z).clone(), g.value(logits).clone()))
    }

    pub fn latent(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.1)
    }

    /// Predicted class per row.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.logits(x)?.argmax(Some(1))
    }

    /// Predictions on a benign batch and its adversarial counterpart.
    pub fn snapshot(&self, x_nat: &Tensor, x_adv: &Tensor) -> Result<PredictionSnapshot> {
        if x_nat.rows() != x_adv.rows() {
            return Err(Error::Contract(format!(
                "benign batch has {} rows, adversarial batch {}",
                x_nat.rows(),
                x_adv.rows()
            )));
        }
        PredictionSnapshot::from_logits(self.logits(x_nat)?, self.logits(x_adv)?)
    }
}

/// Row-wise softmax with a max shift.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let c = logits.cols();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Logits, probabilities and argmax predictions on paired benign/adversarial batches.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSnapshot {
    pub logits_nat: Tensor,
    pub logits_adv: Tensor,
    pub probs_nat: Tensor,
    pub probs_adv: Tensor,
    pub preds_nat: Vec<usize>,
    pub preds_adv: Vec<usize>,
}

impl PredictionSnapshot {
    pub fn from_logits(logits_nat: Tensor, logits_adv: Tensor) -> Result<Self> {
        if logits_nat.shape() != logits_adv.shape() || logits_nat.rank() != 2 {
            return Err(dim_err!(
                "logit shapes {:?} and {:?} do not pair up",
                logits_nat.shape(),
                logits_adv.shape()
            ));
        }
        Ok(Self {
            probs_nat: softmax_rows(&logits_nat),
            probs_adv: softmax_rows(&logits_adv),
            preds_nat: logits_nat.argmax(Some(1))?,
            preds_adv: logits_adv.argmax(Some(1))?,
            logits_nat,
            logits_adv,
        })
    }

    pub fn len(&self) -> usize {
        self.preds_nat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds_nat.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.logits_nat.cols()
    }
}
