use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{binary_ce_loss, focal_logit_grad, focal_loss, LossKind, LossSpec};
use super::optim::AdamW;
use super::{sigmoid, softmax, Model, ModelKind, SparseVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    /// 0.0 or 1.0
    Binary(f64),
    Class(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub x: &'a SparseVector,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 10,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            seed: 0,
            loss: LossSpec::binary_ce(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

fn check_target(model: &Model, spec: &LossSpec, target: Target) -> Result<()> {
    match (spec.kind, target) {
        (LossKind::BinaryCe, Target::Binary(y)) if y == 0.0 || y == 1.0 => Ok(()),
        (LossKind::Focal, Target::Class(c)) if c < model.out_dim() => Ok(()),
        (kind, t) => Err(Error::Config(format!("target {t:?} is invalid for {kind:?} loss"))),
    }
}

/// Adds the gradient of the summed (not averaged) batch loss into `grads`
/// and returns the summed loss.
fn accumulate(model: &Model, batch: &[Example], spec: &LossSpec, grads: &mut [f64]) -> Result<f64> {
    let (ind, hd, outd) = (model.input_dim(), model.hidden_dim(), model.out_dim());
    let params = model.params();
    let mut total = 0.0;
    let mut dz = vec![0.0; outd];
    for (n, ex) in batch.iter().enumerate() {
        if ex.x.dim() != ind {
            return Err(Error::Shape {
                expected: ind,
                got: ex.x.dim(),
            });
        }
        let act = model.activations(ex.x);
        let loss = match ex.target {
            Target::Binary(y) => {
                let p = sigmoid(act.logits[0]);
                dz[0] = p - y;
                binary_ce_loss(p, y)
            }
            Target::Class(t) => {
                let probs = softmax(&act.logits);
                let alpha = spec.alpha[t];
                focal_logit_grad(&probs, t, spec.gamma, alpha, &mut dz);
                focal_loss(&probs, t, spec.gamma, alpha)
            }
        };
        if !loss.is_finite() || dz.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite loss at example {n} of a batch of {}: target {:?}, logits {:?}",
                batch.len(),
                ex.target,
                act.logits
            )));
        }
        total += loss;

        match model.kind() {
            ModelKind::Linear => {
                let w_len = outd * ind;
                for (o, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut grads[o * ind..(o + 1) * ind];
                    for (i, v) in ex.x.iter() {
                        row[i] += d * v;
                    }
                    grads[w_len + o] += d;
                }
            }
            ModelKind::Mlp1 => {
                let b1 = hd * ind;
                let w2 = b1 + hd;
                let b2 = w2 + outd * hd;
                let mut dh = vec![0.0; hd];
                for (o, &d) in dz.iter().enumerate() {
                    for j in 0..hd {
                        grads[w2 + o * hd + j] += d * act.hidden[j];
                        dh[j] += d * params[w2 + o * hd + j];
                    }
                    grads[b2 + o] += d;
                }
                for j in 0..hd {
                    if act.pre_hidden[j] <= 0.0 {
                        continue;
                    }
                    let da = dh[j];
                    let row = &mut grads[j * ind..(j + 1) * ind];
                    for (i, v) in ex.x.iter() {
                        row[i] += da * v;
                    }
                    grads[b1 + j] += da;
                }
            }
        }
    }
    Ok(total)
}

/// Mean batch loss and its exact gradient, laid out like the model's
/// parameters.
pub fn gradient(model: &Model, batch: &[Example], spec: &LossSpec) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("gradient of an empty batch".into()));
    }
    spec.validate(model.out_dim())?;
    for ex in batch {
        check_target(model, spec, ex.target)?;
    }
    let mut grads = vec![0.0; model.params().len()];
    let total = accumulate(model, batch, spec, &mut grads)?;
    let scale = 1.0 / batch.len() as f64;
    grads.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grads))
}

/// Mean batch loss without gradients.
pub(crate) fn batch_loss(model: &Model, batch: &[Example], spec: &LossSpec) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|ex| {
            let z = model.activations(ex.x).logits;
            match ex.target {
                Target::Binary(y) => binary_ce_loss(sigmoid(z[0]), y),
                Target::Class(t) => focal_loss(&softmax(&z), t, spec.gamma, spec.alpha[t]),
            }
        })
        .sum();
    total / batch.len() as f64
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch AdamW. Examples are reshuffled each epoch from a generator
/// seeded with `config.seed`; the result is bitwise reproducible. Final
/// parameters are rounded to f32.
pub fn train(mut model: Model, data: &[Example], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    config.loss.validate(model.out_dim())?;
    if data.is_empty() {
        return Err(Error::TrainingData("no training examples".into()));
    }
    for ex in data {
        check_target(&model, &config.loss, ex.target)?;
        if ex.x.dim() != model.input_dim() {
            return Err(Error::Shape {
                expected: model.input_dim(),
                got: ex.x.dim(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = vec![0.0; model.params().len()];
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i]));
            grads.iter_mut().for_each(|g| *g = 0.0);
            let total = accumulate(&model, &batch, &config.loss, &mut grads).map_err(|e| match e {
                Error::Numerical(message) => Error::Diverged { epoch, message },
                other => other,
            })?;
            epoch_loss += total;
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.update(model.params_mut(), &grads);
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                message: format!("mean loss {mean}"),
            });
        }
        trace.push(mean);
    }
    model.round_to_f32();
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(dim: usize, dense: &[f64]) -> SparseVector {
        let mut d = dense.to_vec();
        d.resize(dim, 0.0);
        SparseVector::from_dense(&d)
    }

    #[test]
    fn logistic_closed_form_gradient() {
        let m = Model::from_params(ModelKind::Linear, 3, 0, 1, vec![0.3, -0.2, 0.1, 0.05]).unwrap();
        let x = sv(3, &[0.6, 0.0, 0.8]);
        let (_, g) = gradient(&m, &[Example { x: &x, target: Target::Binary(1.0) }], &LossSpec::binary_ce()).unwrap();
        let p = sigmoid(0.3 * 0.6 + 0.1 * 0.8 + 0.05);
        let expect = [(p - 1.0) * 0.6, 0.0, (p - 1.0) * 0.8, p - 1.0];
        for (a, b) in g.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn focal_gamma_zero_matches_cross_entropy_gradient() {
        let mut m = Model::init(ModelKind::Mlp1, 5, 4, 3, 11).unwrap();
        m.params_mut().iter_mut().enumerate().for_each(|(i, p)| *p += 0.01 * i as f64);
        let x = sv(5, &[0.5, 0.5, 0.0, 0.5, 0.5]);
        let batch = [Example { x: &x, target: Target::Class(2) }];
        let (l, g) = gradient(&m, &batch, &LossSpec::focal(0.0, vec![1.0; 3])).unwrap();
        // Cross-entropy gradient on logits is (p - onehot), backpropagated by hand.
        let act = m.activations(&x);
        let probs = softmax(&act.logits);
        assert!((l + probs[2].ln()).abs() < 1e-12);
        let ce_dz: Vec<f64> = probs.iter().enumerate().map(|(j, p)| p - if j == 2 { 1.0 } else { 0.0 }).collect();
        let b2 = m.params().len() - 3;
        for o in 0..3 {
            assert!((g[b2 + o] - ce_dz[o]).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_batch_and_bad_targets_rejected() {
        let m = Model::zeros(ModelKind::Linear, 2, 0, 1).unwrap();
        assert!(gradient(&m, &[], &LossSpec::binary_ce()).is_err());
        let x = sv(2, &[1.0]);
        let bad = [Example { x: &x, target: Target::Binary(0.5) }];
        assert!(gradient(&m, &bad, &LossSpec::binary_ce()).is_err());
        let bad = [Example { x: &x, target: Target::Class(0) }];
        assert!(gradient(&m, &bad, &LossSpec::binary_ce()).is_err());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        // Hidden activation overflows to +inf and meets a zero output weight.
        let m = Model::from_params(ModelKind::Mlp1, 2, 1, 1, vec![f64::MAX, f64::MAX, 0.0, 0.0, 0.0]).unwrap();
        let x = sv(2, &[0.8, 0.6]);
        let err = gradient(&m, &[Example { x: &x, target: Target::Binary(0.0) }], &LossSpec::binary_ce()).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref msg) if msg.contains("example 0")), "{err}");
    }

    fn separable() -> Vec<SparseVector> {
        // Eight unit vectors in 4 dims: first coordinate decides the class.
        let raw = [
            [1.0, 0.2, 0.0, 0.1],
            [0.9, 0.0, 0.3, 0.0],
            [0.8, 0.1, 0.1, 0.2],
            [1.0, 0.0, 0.0, 0.5],
            [0.0, 1.0, 0.2, 0.1],
            [0.1, 0.0, 1.0, 0.3],
            [0.0, 0.3, 0.2, 1.0],
            [0.2, 0.9, 0.9, 0.0],
        ];
        raw.iter()
            .map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                SparseVector::from_dense(&r.map(|v| v / n))
            })
            .collect()
    }

    fn separable_examples(xs: &[SparseVector]) -> Vec<Example<'_>> {
        xs.iter()
            .enumerate()
            .map(|(i, x)| Example { x, target: Target::Binary(if i < 4 { 1.0 } else { 0.0 }) })
            .collect()
    }

    #[test]
    fn separable_toy_set_trains_to_perfect_accuracy() {
        let xs = separable();
        let data = separable_examples(&xs);
        let cfg = TrainConfig { batch_size: 4, epochs: 60, learning_rate: 0.05, ..Default::default() };
        let out = train(Model::zeros(ModelKind::Linear, 4, 0, 1).unwrap(), &data, &cfg).unwrap();
        assert!(out.loss_trace.windows(2).all(|w| w[1] < w[0]), "{:?}", out.loss_trace);
        for ex in &data {
            let p = out.model.predict_proba(ex.x).unwrap();
            assert_eq!(p >= 0.5, ex.target == Target::Binary(1.0));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let xs = separable();
        let data = separable_examples(&xs);
        let cfg = TrainConfig { batch_size: 3, epochs: 5, seed: 9, ..Default::default() };
        let m0 = Model::init(ModelKind::Mlp1, 4, 6, 1, 3).unwrap();
        let a = train(m0.clone(), &data, &cfg).unwrap();
        let b = train(m0, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn zero_epochs_is_config_error() {
        let xs = separable();
        let data = separable_examples(&xs);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(matches!(
            train(Model::zeros(ModelKind::Linear, 4, 0, 1).unwrap(), &data, &cfg),
            Err(Error::Config(_))
        ));
        let cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(train(Model::zeros(ModelKind::Linear, 4, 0, 1).unwrap(), &data, &cfg).is_err());
        assert!(train(Model::zeros(ModelKind::Linear, 4, 0, 1).unwrap(), &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn batch_loss_matches_gradient_loss() {
        let xs = separable();
        let data = separable_examples(&xs);
        let m = Model::init(ModelKind::Mlp1, 4, 3, 1, 5).unwrap();
        let (l, _) = gradient(&m, &data, &LossSpec::binary_ce()).unwrap();
        assert!((l - batch_loss(&m, &data, &LossSpec::binary_ce())).abs() < 1e-12);
    }
}
