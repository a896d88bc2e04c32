use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{LossKind, LossSpec};
use super::train::{batch_loss, gradient, Example, Target};
use super::{Model, ModelKind, SparseVector};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Smallest denominator used for relative errors, so that coordinates with
/// (near-)zero gradient are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;
const MIN_SAMPLED_WEIGHTS: usize = 16;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Flat parameter index with the largest relative error.
    pub worst_coordinate: usize,
    pub checked: Vec<usize>,
    pub tolerance: f64,
    pub step: f64,
}

/// Compares the analytic gradient with central differences on every bias
/// and a seeded 1% sample of the remaining parameters (at least 16).
pub fn finite_diff_check(
    model: &Model,
    batch: &[Example],
    spec: &LossSpec,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = gradient(model, batch, spec)?;
    finite_diff_check_with(model, batch, spec, h, tol, seed, &analytic)
}

/// As [`finite_diff_check`], against a caller-supplied gradient.
pub fn finite_diff_check_with(
    model: &Model,
    batch: &[Example],
    spec: &LossSpec,
    h: f64,
    tol: f64,
    seed: u64,
    analytic: &[f64],
) -> Result<GradCheckReport> {
    let coords = coordinates(model, seed);
    let mut probe = model.clone();
    let mut worst = (0.0f64, coords[0]);
    for &c in &coords {
        let orig = probe.params()[c];
        probe.params_mut()[c] = orig + h;
        let plus = batch_loss(&probe, batch, spec);
        probe.params_mut()[c] = orig - h;
        let minus = batch_loss(&probe, batch, spec);
        probe.params_mut()[c] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[c];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, c);
        }
    }
    Ok(GradCheckReport {
        passed: worst.0 < tol,
        max_rel_error: worst.0,
        worst_coordinate: worst.1,
        checked: coords,
        tolerance: tol,
        step: h,
    })
}

/// Runs [`finite_diff_check`] on a random problem derived from `seed`:
/// 40 inputs, 8 hidden units for mlp1, a batch of 8, random parameters, and
/// three classes with random α for focal loss.
pub fn random_check(kind: ModelKind, loss: LossKind, seed: u64) -> Result<GradCheckReport> {
    const DIM: usize = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, spec) = match loss {
        LossKind::BinaryCe => (1, LossSpec::binary_ce()),
        LossKind::Focal => {
            let alpha = (0..3).map(|_| rng.gen_range(0.25..4.0)).collect();
            (3, LossSpec::focal(rng.gen_range(0.0..3.0), alpha))
        }
    };
    let hidden = match kind {
        ModelKind::Linear => 0,
        ModelKind::Mlp1 => 8,
    };
    let mut model = Model::zeros(kind, DIM, hidden, out)?;
    model.params_mut().iter_mut().for_each(|p| *p = rng.gen_range(-0.5..0.5));
    let xs: Vec<SparseVector> = (0..8)
        .map(|_| {
            let dense: Vec<f64> = (0..DIM)
                .map(|_| if rng.gen_bool(0.3) { rng.gen_range(-1.0..1.0) } else { 0.0 })
                .collect();
            SparseVector::from_dense(&dense)
        })
        .collect();
    let batch: Vec<Example> = xs
        .iter()
        .map(|x| Example {
            x,
            target: match loss {
                LossKind::BinaryCe => Target::Binary(rng.gen_range(0..2) as f64),
                LossKind::Focal => Target::Class(rng.gen_range(0..out)),
            },
        })
        .collect();
    finite_diff_check(&model, &batch, &spec, DEFAULT_STEP, DEFAULT_TOLERANCE, seed)
}

fn coordinates(model: &Model, seed: u64) -> Vec<usize> {
    let biases = model.bias_indices();
    let weights: Vec<usize> = (0..model.params().len())
        .filter(|i| biases.binary_search(i).is_err())
        .collect();
    let n = (weights.len() / 100).max(MIN_SAMPLED_WEIGHTS).min(weights.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, weights.len(), n)
        .into_iter()
        .map(|i| weights[i])
        .collect();
    picked.extend(biases);
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(dim: usize, n: usize, seed: u64, target: impl Fn(usize) -> Target) -> (Vec<SparseVector>, Vec<Target>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n)
            .map(|_| {
                let dense: Vec<f64> = (0..dim).map(|_| if rng.gen_bool(0.5) { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
                SparseVector::from_dense(&dense)
            })
            .collect();
        (xs, (0..n).map(target).collect())
    }

    fn examples<'a>(xs: &'a [SparseVector], ts: &[Target]) -> Vec<Example<'a>> {
        xs.iter().zip(ts).map(|(x, &target)| Example { x, target }).collect()
    }

    fn randomize(model: &mut Model, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.params_mut().iter_mut().for_each(|p| *p = rng.gen_range(-0.5..0.5));
    }

    #[test]
    fn random_checks_pass() {
        for kind in [ModelKind::Linear, ModelKind::Mlp1] {
            for loss in [LossKind::BinaryCe, LossKind::Focal] {
                let r = random_check(kind, loss, 5).unwrap();
                assert!(r.passed, "{kind:?} {loss:?}: {r:?}");
            }
        }
    }

    #[test]
    fn binary_linear_passes() {
        let (xs, ts) = random_batch(40, 8, 1, |i| Target::Binary((i % 2) as f64));
        let mut m = Model::zeros(ModelKind::Linear, 40, 0, 1).unwrap();
        randomize(&mut m, 2);
        let r = finite_diff_check(&m, &examples(&xs, &ts), &LossSpec::binary_ce(), 1e-5, 1e-4, 0).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.checked.contains(&40));
    }

    #[test]
    fn focal_mlp1_passes() {
        let (xs, ts) = random_batch(30, 6, 3, |i| Target::Class(i % 3));
        let mut m = Model::zeros(ModelKind::Mlp1, 30, 5, 3).unwrap();
        randomize(&mut m, 4);
        let spec = LossSpec::focal(1.0, vec![0.5, 2.0, 1.5]);
        let r = finite_diff_check(&m, &examples(&xs, &ts), &spec, 1e-5, 1e-4, 1).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (xs, ts) = random_batch(40, 8, 5, |i| Target::Binary((i % 2) as f64));
        let mut m = Model::zeros(ModelKind::Linear, 40, 0, 1).unwrap();
        randomize(&mut m, 6);
        let batch = examples(&xs, &ts);
        let spec = LossSpec::binary_ce();
        let clean = finite_diff_check(&m, &batch, &spec, 1e-5, 1e-4, 0).unwrap();
        let (_, mut g) = gradient(&m, &batch, &spec).unwrap();
        let target = *clean
            .checked
            .iter()
            .find(|&&c| c < 40 && g[c].abs() > 1e-3)
            .expect("a sampled weight with non-trivial gradient");
        g[target] *= 2.0;
        let r = finite_diff_check_with(&m, &batch, &spec, 1e-5, 1e-4, 0, &g).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_coordinate, target);
    }
}
