//! Comparison variants: random expert selection, a stacking ensemble over
//! expert outputs, a single one-for-all classifier, and experts trained
//! with non-vulnerable negatives only.
//!
//! Every variant reuses the MoE's encoder and classifier core so that only
//! routing or combination changes.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::corpus::{Label, NegativeMode, Partition, SplitCorpus};
use crate::error::{Error, Result};
use crate::eval::{decisions, map_samples, metrics_where, routing_report, true_categories, TestSet, VariantRow};
use crate::features::Encoder;
use crate::learn::{train, Example, LossSpec, Model, ModelKind, SparseVector, Target, TrainConfig};
use crate::moe::{train_all_cached, FeatureCache, MoeModel, MoeTrainConfig, RoutedPrediction, Selection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    RandomRouter,
    StackEnsemble,
    OneForAll,
    ExpertsNonvulnNegatives,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::RandomRouter,
        VariantKind::StackEnsemble,
        VariantKind::OneForAll,
        VariantKind::ExpertsNonvulnNegatives,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::RandomRouter => "random_router",
            VariantKind::StackEnsemble => "stack_ensemble",
            VariantKind::OneForAll => "one_for_all",
            VariantKind::ExpertsNonvulnNegatives => "experts_nonvuln_negatives",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    /// Accepts `snake_case` or `kebab-case` names.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let names: Vec<&str> = VariantKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub seed: u64,
    /// Meta-classifier settings, stack ensemble only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_config: Option<TrainConfig>,
}

impl VariantSpec {
    pub fn new(kind: VariantKind, seed: u64) -> Self {
        VariantSpec {
            kind,
            seed,
            meta_config: (kind == VariantKind::StackEnsemble).then(default_meta_config),
        }
    }
}

pub fn default_meta_config() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        learning_rate: 0.05,
        weight_decay: 0.0,
        ..TrainConfig::default()
    }
}

/// Random expert selection for one input: `moe.k` distinct categories drawn
/// uniformly from a generator keyed by `key`, combined with uniform weights.
pub fn random_router_predict_features(moe: &MoeModel, x: &SparseVector, key: u64) -> Result<RoutedPrediction> {
    let n = moe.roster().len();
    let k = moe.k;
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let picked = sample(&mut rng, n, k);
    let weight = 1.0 / k as f64;
    let selected = picked
        .iter()
        .map(|i| {
            Ok(Selection {
                category: moe.roster()[i].clone(),
                router_prob: 1.0 / n as f64,
                weight,
                expert_prob: moe.expert_prob(i, x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p_vul = selected.iter().map(|s| s.weight * s.expert_prob).sum::<f64>();
    Ok(RoutedPrediction {
        p_vul,
        decision: if p_vul >= moe.threshold {
            Label::Vulnerable
        } else {
            Label::NonVulnerable
        },
        selected,
    })
}

/// The draw is keyed by the code text and `seed`, so it is reproducible per
/// input and varies across inputs.
pub fn random_router_predict(moe: &MoeModel, code: &str, seed: u64) -> RoutedPrediction {
    random_router_predict_features(moe, &moe.featurize(code), xxh64(code.as_bytes(), seed))
        .expect("encoder output matches model input")
}

/// Logistic meta-classifier over the experts' positive-class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct StackModel {
    pub model: Model,
    pub threshold: f64,
}

/// Expert probabilities in roster order, as a dense input vector.
pub fn stack_features(moe: &MoeModel, x: &SparseVector) -> Result<SparseVector> {
    let probs = (0..moe.roster().len())
        .map(|i| moe.expert_prob(i, x))
        .collect::<Result<Vec<f64>>>()?;
    Ok(SparseVector::from_dense(&probs))
}

impl StackModel {
    pub fn predict_proba(&self, meta: &SparseVector) -> Result<f64> {
        self.model.predict_proba(meta)
    }
}

/// Fits the stacker on the training partition.
pub fn train_stack_ensemble(
    moe: &MoeModel,
    split: &SplitCorpus,
    features: &FeatureCache,
    meta_config: &TrainConfig,
    workers: usize,
) -> Result<StackModel> {
    let idx = split.indices(Partition::Train);
    let meta = map_samples(idx.len(), workers, |j| stack_features(moe, features.get(idx[j])))?;
    let examples: Vec<Example> = idx
        .iter()
        .zip(&meta)
        .map(|(&i, x)| Example {
            x,
            target: Target::Binary(if split.sample(i).is_vulnerable() { 1.0 } else { 0.0 }),
        })
        .collect();
    let cfg = TrainConfig {
        loss: LossSpec::binary_ce(),
        ..meta_config.clone()
    };
    let init = Model::zeros(ModelKind::Linear, moe.roster().len(), 0, 1)?;
    let out = train(init, &examples, &cfg).map_err(|e| e.in_component("stack ensemble"))?;
    Ok(StackModel {
        model: out.model,
        threshold: moe.threshold,
    })
}

/// One binary classifier over all training code, vulnerable = 1 regardless
/// of CWE.
pub fn train_one_for_all(
    split: &SplitCorpus,
    features: &FeatureCache,
    encoder: &dyn Encoder,
    kind: ModelKind,
    hidden_dim: usize,
    config: &TrainConfig,
) -> Result<Model> {
    let idx = split.indices(Partition::Train);
    if idx.is_empty() {
        return Err(Error::TrainingData("empty training partition".into()));
    }
    let examples: Vec<Example> = idx
        .iter()
        .map(|&i| Example {
            x: features.get(i).as_sparse(),
            target: Target::Binary(if split.sample(i).is_vulnerable() { 1.0 } else { 0.0 }),
        })
        .collect();
    let cfg = TrainConfig {
        loss: LossSpec::binary_ce(),
        ..config.clone()
    };
    let hidden = if kind == ModelKind::Mlp1 { hidden_dim } else { 0 };
    let init = Model::init(kind, encoder.dim(), hidden, 1, cfg.seed)?;
    let out = train(init, &examples, &cfg).map_err(|e| e.in_component("one-for-all"))?;
    Ok(out.model)
}

/// Everything a variant needs from the main run.
pub struct VariantContext<'a> {
    pub moe: &'a MoeModel,
    pub split: &'a SplitCorpus,
    /// Features of the training partition.
    pub train_features: &'a FeatureCache,
    pub test: &'a TestSet<'a>,
    pub train_config: &'a MoeTrainConfig,
    pub workers: usize,
}

pub const STACK_NOTE: &str = "logistic stacker; supports directional comparison only";

/// Evaluates one variant on the test set.
pub fn run_variant(ctx: &VariantContext, spec: &VariantSpec) -> Result<VariantRow> {
    let test = ctx.test;
    let moe = ctx.moe;
    let row = |predicted: Vec<bool>, routing: Option<f64>, note: Option<&str>| VariantRow {
        variant: spec.kind.name().into(),
        metrics: metrics_where(&test.samples, &predicted, |_| true),
        routing_correct_fraction: routing,
        note: note.map(str::to_string),
    };
    match spec.kind {
        VariantKind::RandomRouter => {
            let preds = map_samples(test.len(), ctx.workers, |i| {
                let key = xxh64(test.samples[i].code.as_bytes(), spec.seed);
                random_router_predict_features(moe, &test.features[i], key)
            })?;
            let truth = true_categories(moe, &test.samples);
            let routing = routing_report(moe.k, moe.roster(), &test.samples, &truth, &preds);
            Ok(row(decisions(&preds), Some(routing.correct_fraction), None))
        }
        VariantKind::StackEnsemble => {
            let cfg = spec.meta_config.clone().unwrap_or_else(default_meta_config);
            let stack = train_stack_ensemble(moe, ctx.split, ctx.train_features, &cfg, ctx.workers)?;
            let predicted = map_samples(test.len(), ctx.workers, |i| {
                Ok(stack.predict_proba(&stack_features(moe, &test.features[i])?)? >= stack.threshold)
            })?;
            Ok(row(predicted, None, Some(STACK_NOTE)))
        }
        VariantKind::OneForAll => {
            let tc = TrainConfig {
                seed: spec.seed,
                ..ctx.train_config.expert.clone()
            };
            let model = train_one_for_all(
                ctx.split,
                ctx.train_features,
                moe.encoder(),
                ctx.train_config.expert_kind,
                ctx.train_config.hidden_dim,
                &tc,
            )?;
            let predicted = map_samples(test.len(), ctx.workers, |i| {
                Ok(model.predict_proba(&test.features[i])? >= moe.threshold)
            })?;
            Ok(row(predicted, None, None))
        }
        VariantKind::ExpertsNonvulnNegatives => {
            let cfg = MoeTrainConfig {
                mode: NegativeMode::NonvulnOnlyNegatives,
                inference: crate::moe::InferenceSettings {
                    k: moe.k,
                    threshold: moe.threshold,
                    combine: moe.combine,
                    unknown_policy: moe.unknown_policy,
                },
                ..ctx.train_config.clone()
            };
            let retrained = train_all_cached(ctx.split, &moe.category_map, moe.encoder(), ctx.train_features, &cfg)?.model;
            let preds = map_samples(test.len(), ctx.workers, |i| retrained.predict_features(&test.features[i]))?;
            let truth = true_categories(&retrained, &test.samples);
            let routing = routing_report(retrained.k, retrained.roster(), &test.samples, &truth, &preds);
            Ok(row(decisions(&preds), Some(routing.correct_fraction), None))
        }
    }
}
