//! Mixture of experts: one binary expert per CWE category, a router over
//! categories, and a top-K combiner.
//!
//! Experts and the router are trained independently. At inference the
//! router ranks the full roster, only the top-K experts run, and their
//! outputs are mixed with weights `softmax(router probabilities)` taken over
//! the selected K.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::corpus::{expert_view, router_view, Label, NegativeMode, Partition, SplitCorpus};
use crate::error::{Error, Result};
use crate::features::{Encoder, EncoderConfig, FeatureVector, HashedNgramEncoder};
use crate::learn::{
    train, Example, LossKind, LossSpec, Model, ModelFile, ModelKind, SparseVector, Target, TrainConfig,
    DEFAULT_HIDDEN_DIM,
};
use crate::taxonomy::{CategoryId, CategoryMap, UnknownPolicy};

pub const BUNDLE_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 2;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_FOCAL_GAMMA: f64 = 1.0;

/// How router probabilities of the selected experts become weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// `softmax` applied to the probabilities themselves:
    /// (0.45, 0.15) -> (0.57, 0.43).
    #[default]
    SoftmaxProbabilities,
    /// `softmax` over router logits restricted to the selection, which
    /// equals `p_i / sum(p_selected)`.
    SoftmaxLogits,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertModel {
    pub category: CategoryId,
    pub model: Model,
    pub training_mode: NegativeMode,
    pub train_config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouterModel {
    pub model: Model,
    /// Output coordinate `i` scores `roster[i]`.
    pub roster: Vec<CategoryId>,
    pub train_config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub category: CategoryId,
    pub router_prob: f64,
    pub weight: f64,
    pub expert_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoutedPrediction {
    pub p_vul: f64,
    pub selected: Vec<Selection>,
    pub decision: Label,
}

impl RoutedPrediction {
    pub fn is_vulnerable(&self) -> bool {
        self.decision.is_vulnerable()
    }
}

/// Weights for the selected router probabilities.
pub fn combiner_weights(router_probs: &[f64], mode: CombineMode) -> Vec<f64> {
    match mode {
        CombineMode::SoftmaxProbabilities => crate::learn::softmax(router_probs),
        CombineMode::SoftmaxLogits => {
            let sum: f64 = router_probs.iter().sum();
            if sum > 0.0 {
                router_probs.iter().map(|p| p / sum).collect()
            } else {
                vec![1.0 / router_probs.len() as f64; router_probs.len()]
            }
        }
    }
}

/// Mixes the first `k` entries of `ranked` with their expert probabilities.
pub fn combine(
    ranked: &[(CategoryId, f64)],
    expert_probs: &[f64],
    k: usize,
    threshold: f64,
    mode: CombineMode,
) -> Result<RoutedPrediction> {
    if k == 0 || k > ranked.len() {
        return Err(Error::Config(format!("k = {k} outside 1..={}", ranked.len())));
    }
    if expert_probs.len() < k {
        return Err(Error::Shape {
            expected: k,
            got: expert_probs.len(),
        });
    }
    let router: Vec<f64> = ranked[..k].iter().map(|r| r.1).collect();
    let weights = combiner_weights(&router, mode);
    Ok(mix(
        ranked[..k]
            .iter()
            .zip(&weights)
            .zip(expert_probs)
            .map(|(((category, router_prob), &weight), &expert_prob)| Selection {
                category: category.clone(),
                router_prob: *router_prob,
                weight,
                expert_prob,
            })
            .collect(),
        threshold,
    ))
}

fn mix(selected: Vec<Selection>, threshold: f64) -> RoutedPrediction {
    let p_vul = selected.iter().map(|s| s.weight * s.expert_prob).sum::<f64>();
    RoutedPrediction {
        p_vul,
        decision: if p_vul >= threshold {
            Label::Vulnerable
        } else {
            Label::NonVulnerable
        },
        selected,
    }
}

/// The deployable mixture: router, one expert per roster category, and
/// inference settings. Immutable once built.
#[derive(Clone, Debug)]
pub struct MoeModel {
    pub router: RouterModel,
    /// In roster order.
    pub experts: Vec<ExpertModel>,
    pub k: usize,
    pub threshold: f64,
    pub combine: CombineMode,
    pub category_map: CategoryMap,
    pub unknown_policy: UnknownPolicy,
    encoder: HashedNgramEncoder,
}

impl MoeModel {
    pub fn new(
        router: RouterModel,
        experts: Vec<ExpertModel>,
        category_map: CategoryMap,
        encoder: EncoderConfig,
        settings: InferenceSettings,
    ) -> Result<Self> {
        let encoder = encoder.build()?;
        let roster = category_map.roster();
        if router.roster != roster {
            return Err(Error::Config("router roster differs from the category map".into()));
        }
        if router.model.out_dim() != roster.len() {
            return Err(Error::Shape {
                expected: roster.len(),
                got: router.model.out_dim(),
            });
        }
        if experts.len() != roster.len() || experts.iter().zip(roster).any(|(e, c)| &e.category != c) {
            return Err(Error::Config("experts must cover the roster in order".into()));
        }
        for m in experts.iter().map(|e| &e.model).chain([&router.model]) {
            if m.input_dim() != encoder.dim() {
                return Err(Error::Shape {
                    expected: encoder.dim(),
                    got: m.input_dim(),
                });
            }
        }
        if let Some(e) = experts.iter().find(|e| e.model.out_dim() != 1) {
            return Err(Error::Config(format!("expert {} is not binary", e.category)));
        }
        let mut moe = MoeModel {
            router,
            experts,
            k: 1,
            threshold: settings.threshold,
            combine: settings.combine,
            category_map,
            unknown_policy: settings.unknown_policy,
            encoder,
        };
        moe.set_k(settings.k)?;
        Ok(moe)
    }

    pub fn roster(&self) -> &[CategoryId] {
        &self.router.roster
    }

    pub fn encoder(&self) -> &HashedNgramEncoder {
        &self.encoder
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        self.encoder.config()
    }

    pub fn set_k(&mut self, k: usize) -> Result<()> {
        if k == 0 || k > self.roster().len() {
            return Err(Error::Config(format!(
                "k = {k} outside 1..={}",
                self.roster().len()
            )));
        }
        self.k = k;
        Ok(())
    }

    pub fn featurize(&self, code: &str) -> FeatureVector {
        self.encoder.encode(code)
    }

    /// Roster indices with router probabilities, descending; ties keep
    /// roster order.
    pub fn rank(&self, x: &SparseVector) -> Result<Vec<(usize, f64)>> {
        let probs = self.router.model.forward(x)?;
        let mut ranked: Vec<(usize, f64)> = probs.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(ranked)
    }

    /// The full roster ranked by router probability.
    pub fn route(&self, code: &str) -> Vec<(CategoryId, f64)> {
        let x = self.featurize(code);
        self.rank(&x)
            .expect("encoder output matches router input")
            .into_iter()
            .map(|(i, p)| (self.roster()[i].clone(), p))
            .collect()
    }

    pub fn expert_prob(&self, index: usize, x: &SparseVector) -> Result<f64> {
        self.experts[index].model.predict_proba(x)
    }

    /// Routes, runs exactly `k` experts and combines.
    pub fn predict_features_k(&self, x: &SparseVector, k: usize) -> Result<RoutedPrediction> {
        if k == 0 || k > self.roster().len() {
            return Err(Error::Config(format!("k = {k} outside 1..={}", self.roster().len())));
        }
        let ranked = self.rank(x)?;
        let top = &ranked[..k];
        let expert_probs = top
            .iter()
            .map(|&(i, _)| self.expert_prob(i, x))
            .collect::<Result<Vec<_>>>()?;
        let named: Vec<(CategoryId, f64)> = top.iter().map(|&(i, p)| (self.roster()[i].clone(), p)).collect();
        combine(&named, &expert_probs, k, self.threshold, self.combine)
    }

    pub fn predict_features(&self, x: &SparseVector) -> Result<RoutedPrediction> {
        self.predict_features_k(x, self.k)
    }

    pub fn predict(&self, code: &str) -> RoutedPrediction {
        self.predict_features(&self.featurize(code))
            .expect("encoder output matches model input")
    }

    /// Prediction from a fixed expert with weight 1, bypassing the router.
    pub fn predict_with_expert(&self, x: &SparseVector, index: usize) -> Result<RoutedPrediction> {
        let router_prob = self.router.model.forward(x)?[index];
        let expert_prob = self.expert_prob(index, x)?;
        Ok(mix(
            vec![Selection {
                category: self.roster()[index].clone(),
                router_prob,
                weight: 1.0,
                expert_prob,
            }],
            self.threshold,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSettings {
    pub k: usize,
    pub threshold: f64,
    pub combine: CombineMode,
    pub unknown_policy: UnknownPolicy,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        InferenceSettings {
            k: DEFAULT_K,
            threshold: DEFAULT_THRESHOLD,
            combine: CombineMode::default(),
            unknown_policy: UnknownPolicy::default(),
        }
    }
}

/// Settings for [`train_all`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoeTrainConfig {
    pub expert: TrainConfig,
    /// `loss.alpha` is ignored; the router's balancing factors are the
    /// inverse class fractions of its training view.
    pub router: TrainConfig,
    pub expert_kind: ModelKind,
    pub router_kind: ModelKind,
    pub hidden_dim: usize,
    pub mode: NegativeMode,
    pub workers: usize,
    pub inference: InferenceSettings,
}

impl Default for MoeTrainConfig {
    fn default() -> Self {
        MoeTrainConfig {
            expert: TrainConfig::default(),
            router: TrainConfig {
                loss: LossSpec::focal(DEFAULT_FOCAL_GAMMA, Vec::new()),
                ..TrainConfig::default()
            },
            expert_kind: ModelKind::Linear,
            router_kind: ModelKind::Linear,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            mode: NegativeMode::AllNegatives,
            workers: 1,
            inference: InferenceSettings::default(),
        }
    }
}

impl MoeTrainConfig {
    fn hidden_for(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Linear => 0,
            ModelKind::Mlp1 => self.hidden_dim,
        }
    }
}

/// Per-category seed, independent of roster position.
pub fn component_seed(base: u64, component: &str) -> u64 {
    xxh64(component.as_bytes(), base)
}

/// Featurizes samples on up to `workers` threads; output order matches
/// input order.
pub fn featurize_all(encoder: &dyn Encoder, codes: &[&str], workers: usize) -> Vec<FeatureVector> {
    let workers = workers.max(1).min(codes.len().max(1));
    let chunk = codes.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = codes
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|c| encoder.encode(c)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("featurization worker panicked"))
            .collect()
    })
}

/// Runs `jobs` on up to `workers` threads and returns results in job order.
pub(crate) fn run_parallel<T: Send>(
    n_jobs: usize,
    workers: usize,
    job: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n_jobs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(n_jobs.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_jobs {
                    break;
                }
                let out = job(i);
                slots.lock().expect("result slots")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|s| s.expect("every job ran"))
        .collect()
}

/// Training-set features, indexed like the corpus sample store.
pub struct FeatureCache {
    features: Vec<Option<FeatureVector>>,
}

impl FeatureCache {
    pub fn build(split: &SplitCorpus, parts: &[Partition], encoder: &dyn Encoder, workers: usize) -> Self {
        let idx: Vec<usize> = parts.iter().flat_map(|&p| split.indices(p).iter().copied()).collect();
        let codes: Vec<&str> = idx.iter().map(|&i| split.sample(i).code.as_str()).collect();
        let feats = featurize_all(encoder, &codes, workers);
        let mut features = vec![None; split.samples().len()];
        for (i, f) in idx.into_iter().zip(feats) {
            features[i] = Some(f);
        }
        FeatureCache { features }
    }

    pub fn get(&self, index: usize) -> &FeatureVector {
        self.features[index]
            .as_ref()
            .expect("sample was featurized")
    }
}

#[derive(Clone, Debug)]
pub struct ComponentReport {
    pub component: String,
    pub loss_trace: Vec<f64>,
    pub examples: usize,
    pub elapsed: Duration,
}

pub struct TrainedMoe {
    pub model: MoeModel,
    pub reports: Vec<ComponentReport>,
}

enum Job<'a> {
    Expert(usize, &'a CategoryId),
    Router,
}

enum Trained {
    Expert(ExpertModel, ComponentReport),
    Router(RouterModel, ComponentReport),
}

/// Trains every expert and the router. Jobs are independent and may run on
/// `config.workers` threads; results are assembled in roster order, so the
/// output does not depend on the worker count.
pub fn train_all(
    split: &SplitCorpus,
    map: &CategoryMap,
    encoder: &EncoderConfig,
    config: &MoeTrainConfig,
) -> Result<TrainedMoe> {
    let enc = encoder.build()?;
    let cache = FeatureCache::build(split, &[Partition::Train], &enc, config.workers);
    train_all_cached(split, map, &enc, &cache, config)
}

pub fn train_all_cached(
    split: &SplitCorpus,
    map: &CategoryMap,
    encoder: &HashedNgramEncoder,
    cache: &FeatureCache,
    config: &MoeTrainConfig,
) -> Result<TrainedMoe> {
    config.expert.validate()?;
    config.router.validate()?;
    let roster = map.roster();
    let policy = config.inference.unknown_policy;
    let dim = encoder.dim();

    // Build views up front so data errors surface before any training.
    let expert_views = roster
        .iter()
        .map(|c| {
            expert_view(split, map, c, config.mode, policy, component_seed(config.expert.seed, c.as_str()))
                .map_err(|e| e.in_component(&format!("expert {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rview = router_view(split, map, policy).map_err(|e| e.in_component("router"))?;

    let mut jobs: Vec<Job> = roster.iter().enumerate().map(|(i, c)| Job::Expert(i, c)).collect();
    jobs.push(Job::Router);

    let results = run_parallel(jobs.len(), config.workers, |j| -> Result<Trained> {
        let start = Instant::now();
        match jobs[j] {
            Job::Expert(i, category) => {
                let view = &expert_views[i];
                let examples: Vec<Example> = view
                    .entries
                    .iter()
                    .map(|&(s, y)| Example {
                        x: cache.get(s).as_sparse(),
                        target: Target::Binary(y),
                    })
                    .collect();
                let seed = component_seed(config.expert.seed, category.as_str());
                let tc = TrainConfig {
                    seed,
                    loss: LossSpec::binary_ce(),
                    ..config.expert.clone()
                };
                let name = format!("expert {category}");
                let init = Model::init(config.expert_kind, dim, config.hidden_for(config.expert_kind), 1, seed)?;
                let out = train(init, &examples, &tc).map_err(|e| e.in_component(&name))?;
                Ok(Trained::Expert(
                    ExpertModel {
                        category: category.clone(),
                        model: out.model,
                        training_mode: config.mode,
                        train_config: tc,
                    },
                    ComponentReport {
                        component: name,
                        loss_trace: out.loss_trace,
                        examples: examples.len(),
                        elapsed: start.elapsed(),
                    },
                ))
            }
            Job::Router => {
                let examples: Vec<Example> = rview
                    .entries
                    .iter()
                    .map(|&(s, c)| Example {
                        x: cache.get(s).as_sparse(),
                        target: Target::Class(c),
                    })
                    .collect();
                let gamma = match config.router.loss.kind {
                    LossKind::Focal => config.router.loss.gamma,
                    LossKind::BinaryCe => DEFAULT_FOCAL_GAMMA,
                };
                let tc = TrainConfig {
                    loss: LossSpec::focal(gamma, rview.class_weights.clone()),
                    ..config.router.clone()
                };
                let init = Model::init(
                    config.router_kind,
                    dim,
                    config.hidden_for(config.router_kind),
                    roster.len(),
                    tc.seed,
                )?;
                let out = train(init, &examples, &tc).map_err(|e| e.in_component("router"))?;
                Ok(Trained::Router(
                    RouterModel {
                        model: out.model,
                        roster: roster.to_vec(),
                        train_config: tc,
                    },
                    ComponentReport {
                        component: "router".into(),
                        loss_trace: out.loss_trace,
                        examples: examples.len(),
                        elapsed: start.elapsed(),
                    },
                ))
            }
        }
    });

    let mut experts = Vec::with_capacity(roster.len());
    let mut router = None;
    let mut reports = Vec::with_capacity(jobs.len());
    for r in results {
        match r? {
            Trained::Expert(e, rep) => {
                experts.push(e);
                reports.push(rep);
            }
            Trained::Router(m, rep) => {
                router = Some(m);
                reports.push(rep);
            }
        }
    }
    let model = MoeModel::new(
        router.expect("router job present"),
        experts,
        map.clone(),
        encoder.config(),
        config.inference,
    )?;
    Ok(TrainedMoe { model, reports })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertEntry {
    pub category: CategoryId,
    pub file: String,
    pub training_mode: NegativeMode,
}

/// `manifest.json` of a saved bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub version: u32,
    pub roster: Vec<CategoryId>,
    pub k: usize,
    pub threshold: f64,
    pub combine: CombineMode,
    pub unknown_policy: UnknownPolicy,
    pub encoder: EncoderConfig,
    pub category_map: String,
    pub router: String,
    pub experts: Vec<ExpertEntry>,
}

impl BundleManifest {
    pub fn from_json(source: &str) -> Result<Self> {
        let m: BundleManifest = serde_json::from_str(source)?;
        if m.version != BUNDLE_VERSION {
            return Err(Error::Format(format!("unsupported bundle version {}", m.version)));
        }
        for f in m.experts.iter().map(|e| &e.file).chain([&m.router, &m.category_map]) {
            if f.is_empty() || f.contains(['/', '\\']) || f.starts_with('.') {
                return Err(Error::Format(format!("bundle file name {f:?} must be a plain file name")));
            }
        }
        Ok(m)
    }
}

fn file_safe(category: &CategoryId) -> String {
    category
        .as_str()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl MoeModel {
    pub fn manifest(&self) -> BundleManifest {
        BundleManifest {
            version: BUNDLE_VERSION,
            roster: self.roster().to_vec(),
            k: self.k,
            threshold: self.threshold,
            combine: self.combine,
            unknown_policy: self.unknown_policy,
            encoder: self.encoder_config(),
            category_map: "category_map.json".into(),
            router: "router.json".into(),
            experts: self
                .experts
                .iter()
                .enumerate()
                .map(|(i, e)| ExpertEntry {
                    category: e.category.clone(),
                    file: format!("expert-{i:02}-{}.json", file_safe(&e.category)),
                    training_mode: e.training_mode,
                })
                .collect(),
        }
    }

    /// Writes the bundle directory. Contents depend only on the model, so
    /// identical models give byte-identical bundles.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        let enc = Some(self.encoder_config());
        write(&dir.join(&manifest.category_map), &self.category_map.to_json())?;
        let rf = ModelFile::new(
            &self.router.model,
            self.router.train_config.loss.clone(),
            enc.clone(),
            Some(self.router.train_config.clone()),
            self.router.train_config.seed,
        );
        write(&dir.join(&manifest.router), &rf.to_json())?;
        for (e, entry) in self.experts.iter().zip(&manifest.experts) {
            let f = ModelFile::new(
                &e.model,
                e.train_config.loss.clone(),
                enc.clone(),
                Some(e.train_config.clone()),
                e.train_config.seed,
            );
            write(&dir.join(&entry.file), &f.to_json())?;
        }
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write(&dir.join("manifest.json"), &text)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = BundleManifest::from_json(&read(&dir.join("manifest.json"))?)?;
        let map = CategoryMap::from_json(&read(&dir.join(&manifest.category_map))?)?;
        let load_model = |file: &str| -> Result<(Model, TrainConfig)> {
            let mf = ModelFile::from_json(&read(&dir.join(file))?)?;
            if mf.encoder.as_ref() != Some(&manifest.encoder) {
                return Err(Error::Format(format!("{file}: encoder differs from manifest")));
            }
            let tc = mf.train_config.clone().unwrap_or_default();
            Ok((mf.to_model()?, tc))
        };
        let (router_model, router_tc) = load_model(&manifest.router)?;
        let router = RouterModel {
            model: router_model,
            roster: manifest.roster.clone(),
            train_config: router_tc,
        };
        let experts = manifest
            .experts
            .iter()
            .map(|e| {
                let (model, tc) = load_model(&e.file)?;
                Ok(ExpertModel {
                    category: e.category.clone(),
                    model,
                    training_mode: e.training_mode,
                    train_config: tc,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MoeModel::new(
            router,
            experts,
            map,
            manifest.encoder,
            InferenceSettings {
                k: manifest.k,
                threshold: manifest.threshold,
                combine: manifest.combine,
                unknown_policy: manifest.unknown_policy,
            },
        )
    }
}
