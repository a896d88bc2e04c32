//! Classifier core: linear and one-hidden-layer models over sparse inputs,
//! binary cross-entropy and focal losses, AdamW training and finite
//! difference gradient checks.

mod gradcheck;
mod io;
mod loss;
mod optim;
mod train;

pub use gradcheck::{finite_diff_check, finite_diff_check_with, random_check, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
pub use io::{ModelFile, MODEL_FILE_VERSION};
pub use loss::{binary_ce_loss, focal_loss, LossKind, LossSpec, PROB_EPS};
pub use optim::AdamW;
pub use train::{gradient, train, Example, Target, TrainConfig, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN_DIM: usize = 64;

/// Sparse input vector with strictly increasing indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(dim: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Shape {
                expected: indices.len(),
                got: values.len(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sparse indices must be strictly increasing".into()));
        }
        if let Some(&last) = indices.last() {
            if last as usize >= dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: last as usize + 1,
                });
            }
        }
        Ok(SparseVector { dim, indices, values })
    }

    /// Keeps the non-zero entries of a dense slice.
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, &v)| (i as u32, v))
            .unzip();
        SparseVector {
            dim: dense.len(),
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp1,
}

/// Parameters live in one flat vector so the optimizer and gradient checks
/// can treat every model kind alike.
///
/// Layout, row-major:
/// - linear: `W[out][in]`, `b[out]`
/// - mlp1: `W1[hidden][in]`, `b1[hidden]`, `W2[out][hidden]`, `b2[out]`
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    kind: ModelKind,
    input_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
    params: Vec<f64>,
}

/// Forward-pass intermediates needed for backpropagation.
pub(crate) struct Activations {
    pub pre_hidden: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Model {
    pub fn param_count(kind: ModelKind, input_dim: usize, hidden_dim: usize, out_dim: usize) -> usize {
        match kind {
            ModelKind::Linear => out_dim * input_dim + out_dim,
            ModelKind::Mlp1 => hidden_dim * input_dim + hidden_dim + out_dim * hidden_dim + out_dim,
        }
    }

    fn check_dims(kind: ModelKind, input_dim: usize, hidden_dim: usize, out_dim: usize) -> Result<()> {
        if input_dim == 0 || out_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if kind == ModelKind::Mlp1 && hidden_dim == 0 {
            return Err(Error::Config("mlp1 needs a positive hidden_dim".into()));
        }
        if kind == ModelKind::Linear && hidden_dim != 0 {
            return Err(Error::Config("linear models have no hidden layer".into()));
        }
        Ok(())
    }

    /// All-zero parameters.
    pub fn zeros(kind: ModelKind, input_dim: usize, hidden_dim: usize, out_dim: usize) -> Result<Self> {
        Self::check_dims(kind, input_dim, hidden_dim, out_dim)?;
        Ok(Model {
            kind,
            input_dim,
            hidden_dim,
            out_dim,
            params: vec![0.0; Self::param_count(kind, input_dim, hidden_dim, out_dim)],
        })
    }

    /// Starting point for training. Linear models start at zero; mlp1 draws
    /// uniform weights (first layer scale independent of `input_dim`, since
    /// inputs are unit-norm), zero biases. Values are f32-representable.
    pub fn init(kind: ModelKind, input_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(kind, input_dim, hidden_dim, out_dim)?;
        if kind == ModelKind::Mlp1 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w1 = hidden_dim * input_dim;
            let w2 = w1 + hidden_dim;
            let a2 = (6.0 / hidden_dim as f64).sqrt();
            for p in &mut m.params[..w1] {
                *p = rng.gen_range(-1.0f32..1.0) as f64;
            }
            for p in &mut m.params[w2..w2 + out_dim * hidden_dim] {
                *p = (rng.gen_range(-a2..a2) as f32) as f64;
            }
        }
        Ok(m)
    }

    pub fn from_params(
        kind: ModelKind,
        input_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        Self::check_dims(kind, input_dim, hidden_dim, out_dim)?;
        let expected = Self::param_count(kind, input_dim, hidden_dim, out_dim);
        if params.len() != expected {
            return Err(Error::Shape {
                expected,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("model parameters must be finite".into()));
        }
        Ok(Model {
            kind,
            input_dim,
            hidden_dim,
            out_dim,
            params,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flat indices of bias parameters.
    pub fn bias_indices(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::Linear => {
                let w = self.out_dim * self.input_dim;
                (w..w + self.out_dim).collect()
            }
            ModelKind::Mlp1 => {
                let b1 = self.hidden_dim * self.input_dim;
                let b2 = b1 + self.hidden_dim + self.out_dim * self.hidden_dim;
                (b1..b1 + self.hidden_dim).chain(b2..b2 + self.out_dim).collect()
            }
        }
    }

    /// Rounds every parameter to the nearest f32 so that the in-memory
    /// model equals its serialized form.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = (*p as f32) as f64;
        }
    }

    fn check_input(&self, x: &SparseVector) -> Result<()> {
        if x.dim() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                got: x.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn activations(&self, x: &SparseVector) -> Activations {
        let (ind, outd, hd) = (self.input_dim, self.out_dim, self.hidden_dim);
        match self.kind {
            ModelKind::Linear => {
                let (w, b) = self.params.split_at(outd * ind);
                let logits = (0..outd)
                    .map(|o| {
                        let row = &w[o * ind..(o + 1) * ind];
                        b[o] + x.iter().map(|(i, v)| row[i] * v).sum::<f64>()
                    })
                    .collect();
                Activations {
                    pre_hidden: Vec::new(),
                    hidden: Vec::new(),
                    logits,
                }
            }
            ModelKind::Mlp1 => {
                let (w1, rest) = self.params.split_at(hd * ind);
                let (b1, rest) = rest.split_at(hd);
                let (w2, b2) = rest.split_at(outd * hd);
                let pre_hidden: Vec<f64> = (0..hd)
                    .map(|j| {
                        let row = &w1[j * ind..(j + 1) * ind];
                        b1[j] + x.iter().map(|(i, v)| row[i] * v).sum::<f64>()
                    })
                    .collect();
                let hidden: Vec<f64> = pre_hidden.iter().map(|&a| a.max(0.0)).collect();
                let logits = (0..outd)
                    .map(|o| {
                        let row = &w2[o * hd..(o + 1) * hd];
                        b2[o] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
                    })
                    .collect();
                Activations {
                    pre_hidden,
                    hidden,
                    logits,
                }
            }
        }
    }

    pub fn logits(&self, x: &SparseVector) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).logits)
    }

    /// Output probabilities: `[p]` through the logistic link for a binary
    /// model, a softmax distribution otherwise.
    pub fn forward(&self, x: &SparseVector) -> Result<Vec<f64>> {
        let z = self.logits(x)?;
        Ok(if self.out_dim == 1 {
            vec![sigmoid(z[0])]
        } else {
            softmax(&z)
        })
    }

    /// Positive-class probability of a binary model.
    pub fn predict_proba(&self, x: &SparseVector) -> Result<f64> {
        if self.out_dim != 1 {
            return Err(Error::Shape {
                expected: 1,
                got: self.out_dim,
            });
        }
        Ok(sigmoid(self.logits(x)?[0]))
    }
}
