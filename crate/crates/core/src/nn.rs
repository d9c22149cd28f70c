//! Single-hidden-layer feedforward network mapping the RSS vector heard from
//! the surveyed RSUs to the vehicle's position along the road.
//!
//! Inputs and the output are min-max normalized to `[−1, 1]` using the
//! training split only. The hidden layer is `tanh`, the output linear.
//! Training is full-batch gradient descent on the mean squared error in
//! normalized output units, with early stopping on the validation split.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{RssSample, SurveyDataset};
use crate::metrics::{regression_metrics, MetricsError, MetricsReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("need at least {need} samples, got {have}")]
    TooFewSamples { need: usize, have: usize },
    #[error("expected {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
    #[error("degenerate normalization range for {0}")]
    DegenerateRange(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("survey cannot be arranged as a network dataset: {0}")]
    BadSurvey(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Affine map of `[min, max]` onto `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
}

impl Normalizer {
    pub const UNIT: Normalizer = Normalizer { min: -1.0, max: 1.0 };

    pub fn from_values(values: impl IntoIterator<Item = f64>, what: &str) -> Result<Self, NnError> {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(NnError::DegenerateRange(what.to_string()));
        }
        Ok(Self { min, max })
    }

    pub fn scale(&self, v: f64) -> f64 {
        2.0 * (v - self.min) / (self.max - self.min) - 1.0
    }

    pub fn unscale(&self, u: f64) -> f64 {
        self.min + (u + 1.0) * 0.5 * (self.max - self.min)
    }

    /// Meters per normalized unit.
    pub fn half_range(&self) -> f64 {
        0.5 * (self.max - self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_inputs: usize,
    pub n_hidden: usize,
    /// Row-major `n_hidden × n_inputs`.
    pub hidden_weights: Vec<f64>,
    pub hidden_biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
    pub input_norm: Vec<Normalizer>,
    pub output_norm: Normalizer,
}

/// Same layout as the trainable parameters of [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden_weights: Vec<f64>,
    pub hidden_biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            hidden_weights: vec![0.0; model.hidden_weights.len()],
            hidden_biases: vec![0.0; model.n_hidden],
            output_weights: vec![0.0; model.n_hidden],
            output_bias: 0.0,
        }
    }

    /// All components in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.hidden_weights.len() + 2 * self.hidden_biases.len() + 1);
        v.extend_from_slice(&self.hidden_weights);
        v.extend_from_slice(&self.hidden_biases);
        v.extend_from_slice(&self.output_weights);
        v.push(self.output_bias);
        v
    }
}

/// One training example in raw units (dBm in, meters out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub inputs: Vec<f64>,
    pub target: f64,
}

impl MlpModel {
    pub fn parameter_count(&self) -> usize {
        self.hidden_weights.len() + 2 * self.n_hidden + 1
    }

    /// Trainable parameters in the same order as [`Gradients::flatten`].
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        v.extend_from_slice(&self.hidden_weights);
        v.extend_from_slice(&self.hidden_biases);
        v.extend_from_slice(&self.output_weights);
        v.push(self.output_bias);
        v
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.parameter_count(), "parameter vector length");
        let (hw, rest) = params.split_at(self.hidden_weights.len());
        let (hb, rest) = rest.split_at(self.n_hidden);
        let (ow, rest) = rest.split_at(self.n_hidden);
        self.hidden_weights.copy_from_slice(hw);
        self.hidden_biases.copy_from_slice(hb);
        self.output_weights.copy_from_slice(ow);
        self.output_bias = rest[0];
    }

    fn check_inputs(&self, inputs: &[f64]) -> Result<(), NnError> {
        if inputs.len() != self.n_inputs {
            return Err(NnError::DimensionMismatch { expected: self.n_inputs, got: inputs.len() });
        }
        Ok(())
    }

    fn normalized_inputs(&self, inputs: &[f64]) -> Vec<f64> {
        inputs.iter().zip(&self.input_norm).map(|(x, n)| n.scale(*x)).collect()
    }

    /// Hidden-layer activations for raw inputs.
    pub fn hidden_activations(&self, inputs: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_inputs(inputs)?;
        let u = self.normalized_inputs(inputs);
        Ok(self.activations(&u))
    }

    fn activations(&self, u: &[f64]) -> Vec<f64> {
        (0..self.n_hidden)
            .map(|j| {
                let row = &self.hidden_weights[j * self.n_inputs..(j + 1) * self.n_inputs];
                let pre: f64 = row.iter().zip(u).map(|(w, x)| w * x).sum::<f64>() + self.hidden_biases[j];
                pre.tanh()
            })
            .collect()
    }

    fn normalized_output(&self, hidden: &[f64]) -> f64 {
        hidden.iter().zip(&self.output_weights).map(|(h, v)| h * v).sum::<f64>() + self.output_bias
    }
}

/// Uniform weights in `±1/√fan_in`, zero biases, unit normalization.
pub fn init_mlp(n_inputs: usize, n_hidden: usize, seed: u64) -> Result<MlpModel, NnError> {
    if n_inputs == 0 || n_hidden == 0 {
        return Err(NnError::InvalidShape(format!("{n_inputs} inputs, {n_hidden} hidden")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden_bound = 1.0 / (n_inputs as f64).sqrt();
    let output_bound = 1.0 / (n_hidden as f64).sqrt();
    let hidden_weights = (0..n_hidden * n_inputs).map(|_| rng.random_range(-hidden_bound..=hidden_bound)).collect();
    let output_weights = (0..n_hidden).map(|_| rng.random_range(-output_bound..=output_bound)).collect();
    Ok(MlpModel {
        n_inputs,
        n_hidden,
        hidden_weights,
        hidden_biases: vec![0.0; n_hidden],
        output_weights,
        output_bias: 0.0,
        input_norm: vec![Normalizer::UNIT; n_inputs],
        output_norm: Normalizer::UNIT,
    })
}

/// Position estimate (meters) for one raw RSS vector (dBm).
pub fn forward(model: &MlpModel, inputs: &[f64]) -> Result<f64, NnError> {
    let h = model.hidden_activations(inputs)?;
    Ok(model.output_norm.unscale(model.normalized_output(&h)))
}

/// Mean squared error over the batch, in normalized output units. This is
/// the objective [`gradients`] differentiates.
pub fn batch_loss(model: &MlpModel, batch: &[Example]) -> Result<f64, NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut total = 0.0;
    for ex in batch {
        model.check_inputs(&ex.inputs)?;
        let h = model.activations(&model.normalized_inputs(&ex.inputs));
        let err = model.normalized_output(&h) - model.output_norm.scale(ex.target);
        total += err * err;
    }
    Ok(total / batch.len() as f64)
}

/// Backpropagated gradient of [`batch_loss`] with respect to every weight
/// and bias.
pub fn gradients(model: &MlpModel, batch: &[Example]) -> Result<Gradients, NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut g = Gradients::zeros_like(model);
    let scale = 2.0 / batch.len() as f64;
    for ex in batch {
        model.check_inputs(&ex.inputs)?;
        let u = model.normalized_inputs(&ex.inputs);
        let h = model.activations(&u);
        let d_out = scale * (model.normalized_output(&h) - model.output_norm.scale(ex.target));
        g.output_bias += d_out;
        for j in 0..model.n_hidden {
            g.output_weights[j] += d_out * h[j];
            let d_pre = d_out * model.output_weights[j] * (1.0 - h[j] * h[j]);
            g.hidden_biases[j] += d_pre;
            let row = &mut g.hidden_weights[j * model.n_inputs..(j + 1) * model.n_inputs];
            for (gw, x) in row.iter_mut().zip(&u) {
                *gw += d_pre * x;
            }
        }
    }
    Ok(g)
}

/// Train / validation / test partition of example indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle into 70/15/15: validation and test get `⌊0.15·n⌋` each,
/// training the rest. Each list is returned in ascending order.
pub fn split_dataset(n: usize, seed: u64) -> Result<SplitIndices, NnError> {
    if n < 7 {
        return Err(NnError::TooFewSamples { need: 7, have: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let held_out = n * 15 / 100;
    let mut validation = idx[..held_out].to_vec();
    let mut test = idx[held_out..2 * held_out].to_vec();
    let mut train = idx[2 * held_out..].to_vec();
    validation.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, validation, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Consecutive epochs without a new validation minimum before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    /// Weight-initialization seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { max_epochs: 1000, patience: 6, learning_rate: 0.01, seed: 1 }
    }
}

impl TrainConfig {
    /// Plain gradient descent at 0.01 is still far from converged after 1000
    /// epochs on 41-sample surveys; this step size and budget reach the
    /// validation minimum.
    pub fn converging() -> Self {
        Self { max_epochs: 5000, patience: 20, learning_rate: 0.3, seed: 1 }
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.max_epochs == 0 || self.patience == 0 || !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Training MSE after this epoch's update, m².
    pub train_mse: f64,
    /// Validation MSE after this epoch's update, m².
    pub validation_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Index into `epochs` of the returned snapshot.
    pub best: usize,
}

impl TrainHistory {
    pub fn best_validation_mse(&self) -> f64 {
        self.epochs[self.best].validation_mse
    }
}

fn pick(examples: &[Example], idx: &[usize]) -> Result<Vec<Example>, NnError> {
    idx.iter()
        .map(|&i| examples.get(i).cloned().ok_or_else(|| NnError::InvalidSplit(format!("index {i} out of range"))))
        .collect()
}

fn validate_split(n: usize, splits: &SplitIndices) -> Result<(), NnError> {
    let mut seen = vec![false; n];
    for &i in splits.train.iter().chain(&splits.validation).chain(&splits.test) {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(NnError::InvalidSplit(format!("index {i} out of range or repeated")));
        }
    }
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(NnError::InvalidSplit("training and validation sets must be nonempty".into()));
    }
    Ok(())
}

/// Full-batch gradient descent with early stopping; returns the snapshot
/// with the lowest validation MSE.
pub fn train(
    model: &MlpModel,
    examples: &[Example],
    splits: &SplitIndices,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainHistory), NnError> {
    config.validate()?;
    validate_split(examples.len(), splits)?;
    let train_set = pick(examples, &splits.train)?;
    let validation_set = pick(examples, &splits.validation)?;

    let mut model = model.clone();
    model.input_norm = (0..model.n_inputs)
        .map(|i| {
            let column = train_set.iter().map(|e| e.inputs.get(i).copied().unwrap_or(f64::NAN));
            Normalizer::from_values(column, &format!("input {i}"))
        })
        .collect::<Result<_, _>>()?;
    model.output_norm = Normalizer::from_values(train_set.iter().map(|e| e.target), "target")?;
    let meters2 = model.output_norm.half_range().powi(2);

    let mut params = model.parameters();
    let mut best = (f64::INFINITY, model.clone());
    let mut history = TrainHistory::default();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let g = gradients(&model, &train_set)?.flatten();
        for (p, gi) in params.iter_mut().zip(&g) {
            *p -= config.learning_rate * gi;
        }
        model.set_parameters(&params);
        let validation_mse = batch_loss(&model, &validation_set)? * meters2;
        let train_mse = batch_loss(&model, &train_set)? * meters2;
        history.epochs.push(EpochStats { epoch, train_mse, validation_mse });
        if validation_mse < best.0 {
            best = (validation_mse, model.clone());
            history.best = history.epochs.len() - 1;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((best.1, history))
}

/// Network training data: one example per survey position, inputs ordered
/// by `feature_names`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnDataset {
    pub feature_names: Vec<String>,
    pub examples: Vec<Example>,
}

impl NnDataset {
    /// Pivots a survey into one example per position: RSS of each RSU (in id
    /// order) as inputs, longitudinal position as target.
    pub fn from_survey(survey: &SurveyDataset) -> Result<Self, NnError> {
        Self::from_samples(&survey.samples)
    }

    pub fn from_samples(samples: &[RssSample]) -> Result<Self, NnError> {
        let mut names: Vec<String> = samples.iter().map(|s| s.rsu_id.clone()).collect();
        names.sort();
        names.dedup();
        let positions = {
            let mut xs: Vec<f64> = samples.iter().map(|s| s.x_m).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            xs
        };
        let mut examples = Vec::with_capacity(positions.len());
        for x in positions {
            let mut inputs = vec![f64::NAN; names.len()];
            for s in samples.iter().filter(|s| s.x_m == x) {
                let col = names.binary_search(&s.rsu_id).expect("name collected above");
                if !inputs[col].is_nan() {
                    return Err(NnError::BadSurvey(format!("duplicate sample for {} at x = {x}", s.rsu_id)));
                }
                inputs[col] = s.rss_dbm;
            }
            if inputs.iter().any(|v| v.is_nan()) {
                return Err(NnError::BadSurvey(format!("missing RSU reading at x = {x}")));
            }
            examples.push(Example { inputs, target: x });
        }
        Ok(Self { feature_names: names, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub hidden_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Seed of the single train/validation/test partition shared by every row.
    pub split_seed: u64,
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { hidden_sizes: (2..=10).collect(), seeds: (1..=20).collect(), split_seed: 0, train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rank: usize,
    pub hidden: usize,
    pub seed: u64,
    pub test: MetricsReport,
    pub all: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Ranked by (MSE on all items, max abs error on all items).
    pub rows: Vec<SweepRow>,
    pub splits: SplitIndices,
}

impl SweepTable {
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.first()
    }
}

fn evaluate(model: &MlpModel, examples: &[Example], idx: &[usize]) -> Result<MetricsReport, NnError> {
    let mut actual = Vec::with_capacity(idx.len());
    let mut predicted = Vec::with_capacity(idx.len());
    for &i in idx {
        actual.push(examples[i].target);
        predicted.push(forward(model, &examples[i].inputs)?);
    }
    Ok(regression_metrics(&actual, &predicted)?)
}

/// Trains one network per (hidden size, seed) and ranks them.
///
/// Jobs run in parallel; the table depends only on the inputs.
pub fn sweep(dataset: &NnDataset, config: &SweepConfig) -> Result<SweepTable, NnError> {
    if config.hidden_sizes.is_empty() || config.seeds.is_empty() {
        return Err(NnError::InvalidConfig("empty hidden-size or seed list".into()));
    }
    let n_inputs = dataset.feature_names.len();
    let splits = split_dataset(dataset.len(), config.split_seed)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let jobs: Vec<(usize, u64)> =
        config.hidden_sizes.iter().flat_map(|&h| config.seeds.iter().map(move |&s| (h, s))).collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(hidden, seed)| {
            let train_config = TrainConfig { seed, ..config.train };
            let init = init_mlp(n_inputs, hidden, seed)?;
            let (model, _) = train(&init, &dataset.examples, &splits, &train_config)?;
            Ok(SweepRow {
                rank: 0,
                hidden,
                seed,
                test: evaluate(&model, &dataset.examples, &splits.test)?,
                all: evaluate(&model, &dataset.examples, &all)?,
            })
        })
        .collect::<Result<Vec<_>, NnError>>()?;
    rows.sort_by(|a, b| {
        a.all
            .mse
            .total_cmp(&b.all.mse)
            .then(a.all.max_abs_error.total_cmp(&b.all.max_abs_error))
            .then(a.hidden.cmp(&b.hidden))
            .then(a.seed.cmp(&b.seed))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(SweepTable { rows, splits })
}
