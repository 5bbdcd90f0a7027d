//! Hashed n-gram logistic regression trained on generated risk labels, and
//! the multi-seed experiment protocol around it.
//!
//! Features are token n-grams hashed with 64-bit FNV-1a (n-gram tokens joined
//! by a single space) and reduced modulo the hash dimension. The model scores
//! the count vector scaled to unit L2 norm.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledDataset;
use crate::error::{Error, Result};
use crate::evaluation::{self, AggregateStats, MetricPair};
use crate::text::{sigmoid, tokenize};

pub const DEFAULT_HASH_DIMENSION: usize = 1 << 18;
pub const MIN_HASH_DIMENSION: usize = 1 << 10;
pub const MODEL_FORMAT_VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub ngram_orders: Vec<usize>,
    pub hash_dimension: usize,
    pub lowercase: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            ngram_orders: vec![1, 2],
            hash_dimension: DEFAULT_HASH_DIMENSION,
            lowercase: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_orders.is_empty() || self.ngram_orders.iter().any(|n| !(1..=2).contains(n)) {
            return Err(Error::InvalidInput(format!(
                "ngram orders must be a non-empty subset of {{1, 2}}, got {:?}",
                self.ngram_orders
            )));
        }
        if !self.hash_dimension.is_power_of_two() || self.hash_dimension < MIN_HASH_DIMENSION {
            return Err(Error::InvalidInput(format!(
                "hash dimension must be a power of two >= {MIN_HASH_DIMENSION}, got {}",
                self.hash_dimension
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Keep the feature weights at their initial value and train only the bias.
    pub frozen_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 70,
            l2: 1e-4,
            seed: 0,
            frozen_features: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "l2 must be >= 0, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

/// Sparse vector as `(slot, value)` pairs sorted by slot.
pub type SparseVector = Vec<(u32, f64)>;

/// Hashed n-gram counts of `text`.
pub fn featurize(text: &str, config: &FeatureConfig) -> SparseVector {
    let tokens = tokenize(text, config.lowercase);
    let mask = (config.hash_dimension - 1) as u64;
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for &n in &config.ngram_orders {
        for gram in tokens.windows(n) {
            let slot = (fnv1a64(&gram.join(" ")) & mask) as u32;
            *counts.entry(slot).or_insert(0.0) += 1.0;
        }
    }
    counts.into_iter().collect()
}

fn unit_norm(mut v: SparseVector) -> SparseVector {
    let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|(_, x)| *x /= norm);
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTextModel {
    pub feature_config: FeatureConfig,
    pub train_config: TrainConfig,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearTextModel {
    /// All-zero weights and bias: the data-independent initialization.
    pub fn zeroed(feature_config: FeatureConfig, train_config: TrainConfig) -> Self {
        let weights = vec![0.0; feature_config.hash_dimension];
        LinearTextModel {
            feature_config,
            train_config,
            weights,
            bias: 0.0,
        }
    }

    fn margin(&self, x: &SparseVector) -> f64 {
        self.bias
            + x.iter()
                .map(|&(j, v)| self.weights[j as usize] * v)
                .sum::<f64>()
    }

    fn features(&self, text: &str) -> SparseVector {
        unit_norm(featurize(text, &self.feature_config))
    }

    /// `(label, probability)` with `label = probability >= 0.5`.
    pub fn predict(&self, text: &str) -> (bool, f64) {
        let p = sigmoid(self.margin(&self.features(text)));
        (p >= 0.5, p)
    }

    /// Mean log loss over `(features, label)` pairs plus `l2 / 2 * |w|^2`.
    fn objective(&self, data: &[(SparseVector, bool)]) -> f64 {
        let log_loss: f64 = data
            .iter()
            .map(|(x, y)| {
                let z = self.margin(x);
                // log(1 + e^z) - y*z, computed stably.
                let softplus = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                softplus - if *y { z } else { 0.0 }
            })
            .sum::<f64>()
            / data.len() as f64;
        let penalty = 0.5 * self.train_config.l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        log_loss + penalty
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// A trained model with its objective before training and after each epoch.
#[derive(Debug, Clone)]
pub struct Training {
    pub model: LinearTextModel,
    pub losses: Vec<f64>,
}

impl Training {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one epoch")
    }
}

/// Stochastic gradient descent on L2-penalized logistic loss. The seed fixes
/// the per-epoch example order.
pub fn train(train_set: &LabeledDataset, fc: &FeatureConfig, tc: &TrainConfig) -> Result<Training> {
    fc.validate()?;
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::DegenerateTrainingSet("no training records".into()));
    }
    let positives = train_set.positives();
    if positives == 0 || positives == train_set.len() {
        return Err(Error::DegenerateTrainingSet(format!(
            "all {} records carry label {}",
            train_set.len(),
            u8::from(positives > 0)
        )));
    }

    let mut model = LinearTextModel::zeroed(fc.clone(), tc.clone());
    let data: Vec<(SparseVector, bool)> = train_set
        .records
        .iter()
        .map(|r| (model.features(&r.text), r.label))
        .collect();

    let mut losses = Vec::with_capacity(tc.epochs + 1);
    losses.push(model.objective(&data));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let lr = tc.learning_rate;
    for _ in 0..tc.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &data[i];
            let g = sigmoid(model.margin(x)) - if *y { 1.0 } else { 0.0 };
            model.bias -= lr * g;
            if !tc.frozen_features {
                for &(j, v) in x {
                    let w = &mut model.weights[j as usize];
                    *w -= lr * (g * v + tc.l2 * *w);
                }
            }
        }
        losses.push(model.objective(&data));
    }
    if !model.is_finite() {
        return Err(Error::Internal(
            "training diverged to non-finite weights".into(),
        ));
    }
    Ok(Training { model, losses })
}

pub fn predict(model: &LinearTextModel, text: &str) -> (bool, f64) {
    model.predict(text)
}

/// Validation outcome of one seeded training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub validation_accuracy: f64,
    pub validation_f1: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub model: LinearTextModel,
}

impl RunResult {
    pub fn metrics(&self) -> MetricPair {
        MetricPair {
            accuracy: self.validation_accuracy,
            f1: self.validation_f1,
        }
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            seed: self.seed,
            validation_accuracy: self.validation_accuracy,
            validation_f1: self.validation_f1,
            initial_loss: self.initial_loss,
            final_loss: self.final_loss,
        }
    }
}

/// Trains one model per seed (in parallel) and scores each on the
/// validation split. Results come back in seed-list order.
pub fn run_experiment(
    train_set: &LabeledDataset,
    validation: &LabeledDataset,
    fc: &FeatureConfig,
    template: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    if seeds.is_empty() {
        return Err(Error::Empty("experiment needs at least one seed"));
    }
    if validation.is_empty() {
        return Err(Error::Empty("validation split is empty"));
    }
    let golds: Vec<bool> = validation.records.iter().map(|r| r.label).collect();
    seeds
        .par_iter()
        .map(|&seed| {
            let tc = TrainConfig {
                seed,
                ..template.clone()
            };
            let training = train(train_set, fc, &tc)?;
            let preds: Vec<bool> = validation
                .records
                .iter()
                .map(|r| training.model.predict(&r.text).0)
                .collect();
            Ok(RunResult {
                seed,
                validation_accuracy: evaluation::accuracy(&preds, &golds)?,
                validation_f1: evaluation::f1(&preds, &golds)?,
                initial_loss: training.initial_loss(),
                final_loss: training.final_loss(),
                model: training.model,
            })
        })
        .collect()
}

/// Accuracies are compared as percentages rounded to this many decimals.
pub const MODE_DECIMALS: i32 = 2;

fn accuracy_key(accuracy: f64) -> i64 {
    (accuracy * 100.0 * 10f64.powi(MODE_DECIMALS)).round() as i64
}

/// Index of the run chosen for out-of-distribution evaluation.
///
/// Runs whose (rounded) validation accuracy occurs at least twice form the
/// candidate set; when no accuracy repeats every run is a candidate. The
/// candidate with the highest F1 wins, ties going to the lowest seed and then
/// the earliest position.
pub fn select_run(runs: &[RunResult]) -> Result<usize> {
    let metrics: Vec<(u64, f64, f64)> = runs
        .iter()
        .map(|r| (r.seed, r.validation_accuracy, r.validation_f1))
        .collect();
    select_by_metrics(&metrics)
}

/// [`select_run`] over bare `(seed, accuracy, f1)` triples.
pub fn select_by_metrics(runs: &[(u64, f64, f64)]) -> Result<usize> {
    if runs.is_empty() {
        return Err(Error::Empty("no runs to select from"));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &(_, acc, _) in runs {
        *counts.entry(accuracy_key(acc)).or_default() += 1;
    }
    let modal = |acc: f64| counts[&accuracy_key(acc)] >= 2;
    let any_modal = runs.iter().any(|&(_, acc, _)| modal(acc));
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, &(_, acc, _))| !any_modal || modal(acc))
        .min_by(|(ia, a), (ib, b)| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .expect("non-empty candidate set");
    Ok(best)
}

/// Per-run metrics recorded in an experiment manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub validation_accuracy: f64,
    pub validation_f1: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// JSON record of a multi-seed experiment. Only `metadata` may differ
/// between two runs on identical inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub seeds: Vec<u64>,
    pub feature_config: FeatureConfig,
    pub train_config: TrainConfig,
    pub train_records: usize,
    pub validation_records: usize,
    pub runs: Vec<RunSummary>,
    pub aggregate: AggregateStats,
    pub selected_run: usize,
    pub selected_seed: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ExperimentManifest {
    pub fn new(
        runs: &[RunResult],
        fc: &FeatureConfig,
        template: &TrainConfig,
        train_records: usize,
        validation_records: usize,
    ) -> Result<Self> {
        let selected_run = select_run(runs)?;
        Ok(ExperimentManifest {
            seeds: runs.iter().map(|r| r.seed).collect(),
            feature_config: fc.clone(),
            train_config: template.clone(),
            train_records,
            validation_records,
            runs: runs.iter().map(RunResult::summary).collect(),
            aggregate: evaluation::aggregate_runs(runs)?,
            selected_run,
            selected_seed: runs[selected_run].seed,
            metadata: BTreeMap::new(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    feature_config: FeatureConfig,
    train_config: TrainConfig,
    bias: f64,
    /// Nonzero weights as `[slot, value]`.
    weights: Vec<(u32, f64)>,
}

impl LinearTextModel {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            feature_config: self.feature_config.clone(),
            train_config: self.train_config.clone(),
            bias: self.bias,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(j, w)| (j as u32, *w))
                .collect(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn from_json(source: &str) -> Result<Self> {
        let parse = |message: String| Error::Parse {
            context: "model file".into(),
            line: 1,
            message,
        };
        let file: ModelFile = serde_json::from_str(source).map_err(|e| parse(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(parse(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        file.feature_config.validate()?;
        let mut model = LinearTextModel::zeroed(file.feature_config, file.train_config);
        model.bias = file.bias;
        for (j, w) in file.weights {
            let slot = model
                .weights
                .get_mut(j as usize)
                .ok_or_else(|| parse(format!("weight slot {j} outside hash dimension")))?;
            *slot = w;
        }
        if !model.is_finite() {
            return Err(parse("non-finite weights".into()));
        }
        Ok(model)
    }
}

pub fn save_model(model: &LinearTextModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()? + "\n").map_err(|e| Error::write(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinearTextModel> {
    let path = path.as_ref();
    let source = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    LinearTextModel::from_json(&source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DatasetRecord, Split};
    use crate::lexicon::AttributeVector;
    use proptest::prelude::*;

    fn small_fc() -> FeatureConfig {
        FeatureConfig {
            ngram_orders: vec![1],
            hash_dimension: 1 << 10,
            lowercase: true,
        }
    }

    fn dataset(items: &[(&str, bool)]) -> LabeledDataset {
        let records = items
            .iter()
            .enumerate()
            .map(|(i, (text, label))| DatasetRecord {
                id: format!("r{i}"),
                document_id: "d".into(),
                index: i,
                text: text.to_string(),
                attributes: AttributeVector::default(),
                label: *label,
                probability: None,
                climate_related: true,
            })
            .collect();
        LabeledDataset::new(Split::Train, records)
    }

    fn toy() -> LabeledDataset {
        dataset(&[
            ("alpha", true),
            ("beta", false),
            ("gamma", true),
            ("delta", false),
        ])
    }

    #[test]
    fn fnv_test_vectors() {
        assert_eq!(fnv1a64(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64("foobar"), 0x85944171f73967e8);
        assert_eq!(fnv1a64("a b"), 0xe63f991904833892);
    }

    #[test]
    fn featurize_examples() {
        let fc = small_fc();
        assert!(featurize("", &fc).is_empty());
        // "a" -> slot 140, "b" -> slot 421 at dimension 1024.
        assert_eq!(featurize("a b a", &fc), [(140, 2.0), (421, 1.0)]);
        assert_eq!(featurize("A b", &fc), featurize("a B", &fc));
        let bigrams = FeatureConfig {
            ngram_orders: vec![2],
            ..fc.clone()
        };
        assert_eq!(featurize("a b", &bigrams), [(146, 1.0)]);
        let cased = FeatureConfig {
            lowercase: false,
            ..fc
        };
        assert_ne!(featurize("A", &cased), featurize("a", &cased));
    }

    #[test]
    fn feature_config_validation() {
        assert!(FeatureConfig::default().validate().is_ok());
        assert!(FeatureConfig {
            hash_dimension: 512,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FeatureConfig {
            hash_dimension: 3000,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FeatureConfig {
            ngram_orders: vec![3],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FeatureConfig {
            ngram_orders: vec![],
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let tc = TrainConfig {
            epochs: 200,
            ..Default::default()
        };
        let t = train(&toy(), &small_fc(), &tc).unwrap();
        for r in &toy().records {
            assert_eq!(t.model.predict(&r.text).0, r.label, "{}", r.text);
        }
        assert!(t.final_loss() <= t.initial_loss());
        assert!((t.initial_loss() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let tc = TrainConfig {
            seed: 5,
            ..Default::default()
        };
        let a = train(&toy(), &small_fc(), &tc).unwrap().model;
        let b = train(&toy(), &small_fc(), &tc).unwrap().model;
        assert_eq!(a.bias.to_bits(), b.bias.to_bits());
        assert!(a
            .weights
            .iter()
            .zip(&b.weights)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn single_class_is_rejected() {
        let d = dataset(&[("a", true), ("b", true)]);
        let err = train(&d, &small_fc(), &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().starts_with("degenerate training set"));
        assert!(train(&dataset(&[]), &small_fc(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn frozen_training_only_moves_bias() {
        let d = dataset(&[("alpha", true), ("beta", false), ("gamma", true)]);
        let tc = TrainConfig {
            frozen_features: true,
            ..Default::default()
        };
        let t = train(&d, &small_fc(), &tc).unwrap();
        let init = LinearTextModel::zeroed(small_fc(), tc);
        assert!(t
            .model
            .weights
            .iter()
            .zip(&init.weights)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        // Bias converges toward logit(2/3).
        assert!(t.model.bias > 0.0);
        assert!(t.final_loss() <= t.initial_loss());
    }

    #[test]
    fn predict_conventions() {
        let m = LinearTextModel::zeroed(small_fc(), TrainConfig::default());
        assert_eq!(predict(&m, "anything at all"), (true, 0.5));
        let m = LinearTextModel { bias: -1.0, ..m };
        let (label, p) = predict(&m, "");
        assert!(!label);
        assert!((p - sigmoid(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn experiment_protocol() {
        let train_set = toy();
        let val = dataset(&[("alpha", true), ("beta", false)]);
        let tc = TrainConfig {
            epochs: 50,
            ..Default::default()
        };
        let runs = run_experiment(&train_set, &val, &small_fc(), &tc, &[3, 1, 3]).unwrap();
        assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), [3, 1, 3]);
        assert_eq!(runs[0].validation_accuracy, runs[2].validation_accuracy);
        assert_eq!(runs[0].model, runs[2].model);
        assert!(run_experiment(&train_set, &val, &small_fc(), &tc, &[]).is_err());
    }

    #[test]
    fn select_run_examples() {
        let pick = |runs: &[(u64, f64, f64)]| select_by_metrics(runs).unwrap();
        assert_eq!(
            pick(&[(0, 0.70, 0.60), (1, 0.70, 0.70), (2, 0.72, 0.65)]),
            1
        );
        assert_eq!(pick(&[(0, 0.60, 0.1), (1, 0.70, 0.9), (2, 0.80, 0.5)]), 1);
        assert_eq!(pick(&[(9, 0.5, 0.5)]), 0);
        // Equal F1 inside the modal class goes to the lowest seed.
        assert_eq!(pick(&[(7, 0.7, 0.6), (4, 0.7, 0.6), (1, 0.9, 0.99)]), 1);
        assert!(select_by_metrics(&[]).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let t = train(&toy(), &small_fc(), &TrainConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_model(&t.model, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), t.model);
        fs::write(
            &p,
            t.model
                .to_json()
                .unwrap()
                .replace("\"format_version\":1", "\"format_version\":9"),
        )
        .unwrap();
        assert!(load_model(&p).is_err());
    }

    proptest! {
        #[test]
        fn select_run_permutation_invariant(
            accs in proptest::collection::vec(0usize..4, 1..8),
            f1s in proptest::collection::vec(0usize..100, 8),
            rot in 0usize..8,
        ) {
            // Distinct seeds and F1 values so that no tie-break is involved.
            let mut f1s = f1s;
            f1s.sort_unstable();
            f1s.dedup();
            prop_assume!(f1s.len() >= accs.len());
            let runs: Vec<(u64, f64, f64)> = accs
                .iter()
                .enumerate()
                .map(|(i, &a)| (i as u64, 0.6 + a as f64 * 0.05, f1s[i] as f64 / 100.0))
                .collect();
            let chosen = runs[select_by_metrics(&runs).unwrap()];
            let mut rotated = runs.clone();
            rotated.rotate_left(rot % runs.len());
            prop_assert_eq!(rotated[select_by_metrics(&rotated).unwrap()], chosen);
        }
    }
}
