//! Adaptive boosting over recurrent weak learners and the weighted
//! combiner used at inference.
//!
//! Each round resamples the training set with the current sampling
//! weights, trains a learner on the resample, scores every original sample
//! by its max-normalized absolute residual, derives the learner's voting
//! weight from the summed errors, and shifts sampling mass toward the
//! samples the learner got wrong.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSpec, NormalizationStats, Window, WindowSample};
use crate::learner::{train_learner, Forecaster, LearnerConfig, WeakLearner};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;
const ENSEMBLE_KIND: &str = "boosted_lstm_ensemble";

/// Lower clamp on a round's summed error.
pub const ERROR_SUM_FLOOR: f64 = 1e-10;
/// Upper clamp on a round's summed error; keeps learner weights positive.
pub const ERROR_SUM_CEIL: f64 = 0.5 - 1e-10;

pub const DEFAULT_ROUNDS: usize = 10;

fn sum_tolerance<T: Scalar>(n: usize) -> f64 {
    (16.0 * n as f64 * T::epsilon().as_f64()).max(1e-9)
}

/// Resampling distribution over the N training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingWeights<T>(Vec<T>);

impl<T: Scalar> SamplingWeights<T> {
    /// Checks non-negativity and unit sum.
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("sampling weights are empty"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= T::zero())) {
            return Err(Error::invalid(format!("sampling weight {w} is negative or non-finite")));
        }
        let sum: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if (sum - 1.0).abs() > sum_tolerance::<T>(weights.len()) {
            return Err(Error::invalid(format!("sampling weights sum to {sum}, not 1")));
        }
        Ok(SamplingWeights(weights))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> T {
        self.0.iter().copied().sum()
    }
}

/// Uniform weights `1/N`.
pub fn init_weights<T: Scalar>(n: usize) -> Result<SamplingWeights<T>> {
    if n == 0 {
        return Err(Error::invalid("cannot initialize sampling weights for zero samples"));
    }
    let w = T::one() / T::of(n as f64);
    Ok(SamplingWeights(vec![w; n]))
}

/// Draws `N` items with replacement, item `i` with probability `s_i`.
pub fn resample<S: Clone, T: Scalar, R: Rng>(
    dataset: &[S],
    s: &SamplingWeights<T>,
    rng: &mut R,
) -> Result<Vec<S>> {
    if dataset.len() != s.len() {
        return Err(Error::Shape {
            expected: format!("{} sampling weights", dataset.len()),
            got: format!("{}", s.len()),
        });
    }
    SamplingWeights::new(s.0.clone())?;
    let dist = WeightedIndex::new(s.0.iter().map(|w| w.as_f64()))
        .map_err(|e| Error::invalid(format!("sampling weights: {e}")))?;
    Ok((0..dataset.len()).map(|_| dataset[dist.sample(rng)].clone()).collect())
}

/// Per-sample errors `e_i = s_i · |r_i| / max_u |r_u|` of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundErrors<T>(Vec<T>);

impl<T: Scalar> RoundErrors<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn total(&self) -> T {
        self.0.iter().copied().sum()
    }
}

/// Round errors from raw residuals `ŷ_i − y_i`. A perfect fit gives all
/// zeros.
pub fn errors_from_residuals<T: Scalar>(residuals: &[T], s: &SamplingWeights<T>) -> Result<RoundErrors<T>> {
    if residuals.is_empty() {
        return Err(Error::invalid("cannot compute round errors of an empty dataset"));
    }
    if residuals.len() != s.len() {
        return Err(Error::Shape {
            expected: format!("{} residuals", s.len()),
            got: format!("{}", residuals.len()),
        });
    }
    let max = residuals.iter().fold(T::zero(), |m, r| m.max(r.abs()));
    if max == T::zero() {
        return Ok(RoundErrors(vec![T::zero(); residuals.len()]));
    }
    Ok(RoundErrors(
        residuals.iter().zip(&s.0).map(|(r, &si)| si * (r.abs() / max)).collect(),
    ))
}

/// Scores `learner` on every sample of `dataset` (normalized space).
pub fn compute_errors<T: Scalar, F: Forecaster<T>>(
    learner: &F,
    dataset: &[WindowSample<T>],
    s: &SamplingWeights<T>,
) -> Result<RoundErrors<T>> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot compute round errors of an empty dataset"));
    }
    let residuals = dataset
        .par_iter()
        .map(|d| learner.predict(&d.x).map(|p| p - d.y))
        .collect::<Result<Vec<T>>>()?;
    errors_from_residuals(&residuals, s)
}

/// Summed error clamped into `[ERROR_SUM_FLOOR, ERROR_SUM_CEIL]`.
pub fn clamp_error_sum<T: Scalar>(error_sum: T) -> T {
    error_sum.max(T::of(ERROR_SUM_FLOOR)).min(T::of(ERROR_SUM_CEIL))
}

/// Voting weight `½ ln((1 − Σe) / Σe)` after clamping `Σe`; always > 0.
pub fn learner_weight<T: Scalar>(error_sum: T) -> T {
    let e = clamp_error_sum(error_sum);
    T::of(0.5) * ((T::one() - e) / e).ln()
}

/// `s*_i = s_i·exp(e_i) / Σ_u s_u·exp(e_u)`.
pub fn update_weights<T: Scalar>(s: &SamplingWeights<T>, e: &RoundErrors<T>) -> Result<SamplingWeights<T>> {
    if s.len() != e.0.len() {
        return Err(Error::Shape {
            expected: format!("{} round errors", s.len()),
            got: format!("{}", e.0.len()),
        });
    }
    let scaled: Vec<T> = s.0.iter().zip(&e.0).map(|(&si, &ei)| si * ei.exp()).collect();
    let z: T = scaled.iter().copied().sum();
    SamplingWeights::new(scaled.into_iter().map(|v| v / z).collect())
}

/// How stored learner weights enter the combiner `Σ w_j ŷ_j / J`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerMode {
    /// Weights rescaled so `Σ w_j = J`; the combiner is a weighted mean.
    #[default]
    Rescaled,
    /// Raw boosting weights, divided by `J` as written.
    Literal,
}

impl std::str::FromStr for CombinerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rescaled" => Ok(CombinerMode::Rescaled),
            "literal" => Ok(CombinerMode::Literal),
            other => Err(Error::invalid(format!("unknown combiner mode `{other}`"))),
        }
    }
}

/// Scales `raw` so the weights sum to their count.
pub fn rescale_weights<T: Scalar>(raw: &[T]) -> Vec<T> {
    let j = T::of(raw.len() as f64);
    let total: T = raw.iter().copied().sum();
    raw.iter().map(|&w| w * j / total).collect()
}

/// `Σ_j w_j ŷ_j / J`.
pub fn combine_predictions<T: Scalar>(outputs: &[T], weights: &[T]) -> Result<T> {
    if outputs.is_empty() || outputs.len() != weights.len() {
        return Err(Error::Shape {
            expected: format!("{} learner outputs (nonzero)", weights.len()),
            got: format!("{}", outputs.len()),
        });
    }
    let num: T = outputs.iter().zip(weights).map(|(&y, &w)| y * w).sum();
    Ok(num / T::of(outputs.len() as f64))
}

/// Produces the weak learner of one boosting round.
pub trait WeakTrainer<T: Scalar> {
    type Model: Forecaster<T>;

    fn train(&self, round: usize, samples: &[WindowSample<T>], val: &[WindowSample<T>]) -> Result<Self::Model>;
}

/// Trains fresh LSTM learners, each round with its own derived seed.
#[derive(Debug, Clone)]
pub struct LstmTrainer {
    pub config: LearnerConfig,
}

impl<T: Scalar> WeakTrainer<T> for LstmTrainer {
    type Model = WeakLearner<T>;

    fn train(&self, round: usize, samples: &[WindowSample<T>], val: &[WindowSample<T>]) -> Result<WeakLearner<T>> {
        let config = LearnerConfig {
            seed: derive_seed(self.config.seed, "learner", round as u64),
            ..self.config.clone()
        };
        train_learner(samples, val, &config)
    }
}

/// Bookkeeping of one boosting round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    /// `Σ e_i` before clamping.
    pub error_sum: f64,
    pub raw_weight: f64,
    /// Sampling weights after this round's update.
    pub sampling_weights: Vec<f64>,
}

/// Output of the boosting loop before it is packaged as a model.
#[derive(Debug, Clone)]
pub struct Boosted<M> {
    pub learners: Vec<M>,
    pub raw_weights: Vec<f64>,
    pub trace: Vec<RoundTrace>,
}

/// Runs `rounds` boosting rounds. Rounds are sequential; `seed` drives the
/// resampling of every round through derived sub-seeds.
pub fn boost<T: Scalar, Tr: WeakTrainer<T>>(
    dataset: &[WindowSample<T>],
    val: &[WindowSample<T>],
    rounds: usize,
    trainer: &Tr,
    seed: u64,
) -> Result<Boosted<Tr::Model>> {
    if rounds == 0 {
        return Err(Error::invalid("ensemble needs at least one round"));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut s = init_weights::<T>(dataset.len())?;
    let mut out = Boosted {
        learners: Vec::with_capacity(rounds),
        raw_weights: Vec::with_capacity(rounds),
        trace: Vec::with_capacity(rounds),
    };
    for round in 0..rounds {
        let wrap = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "resample", round as u64));
        let sampled = resample(dataset, &s, &mut rng).map_err(wrap)?;
        let model = trainer.train(round, &sampled, val).map_err(wrap)?;
        let e = compute_errors(&model, dataset, &s).map_err(wrap)?;
        let error_sum = e.total();
        let w = learner_weight(error_sum);
        s = update_weights(&s, &e).map_err(wrap)?;
        debug_assert!((s.sum().as_f64() - 1.0).abs() <= sum_tolerance::<T>(s.len()));
        out.learners.push(model);
        out.raw_weights.push(w.as_f64());
        out.trace.push(RoundTrace {
            round,
            error_sum: error_sum.as_f64(),
            raw_weight: w.as_f64(),
            sampling_weights: s.as_slice().iter().map(|v| v.as_f64()).collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub rounds: usize,
    pub combiner: CombinerMode,
    pub learner: LearnerConfig,
    pub seed: u64,
}

impl EnsembleConfig {
    pub fn new(learner: LearnerConfig, seed: u64) -> Self {
        EnsembleConfig {
            rounds: DEFAULT_ROUNDS,
            combiner: CombinerMode::Rescaled,
            learner,
            seed,
        }
    }
}

/// Weighted ensemble of `J` forecasters plus the data transforms needed to
/// turn its output into USD.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel<T, M = WeakLearner<T>> {
    learners: Vec<M>,
    raw_weights: Vec<T>,
    weights: Vec<T>,
    mode: CombinerMode,
    spec: FeatureSpec,
    stats: NormalizationStats,
    trace: Vec<RoundTrace>,
}

impl<T: Scalar, M: Forecaster<T>> EnsembleModel<T, M> {
    pub fn from_boosted(
        boosted: Boosted<M>,
        mode: CombinerMode,
        spec: FeatureSpec,
        stats: NormalizationStats,
    ) -> Result<Self> {
        let raw: Vec<T> = boosted.raw_weights.iter().map(|&w| T::of(w)).collect();
        Self::from_parts(boosted.learners, raw, mode, spec, stats, boosted.trace)
    }

    pub fn from_parts(
        learners: Vec<M>,
        raw_weights: Vec<T>,
        mode: CombinerMode,
        spec: FeatureSpec,
        stats: NormalizationStats,
        trace: Vec<RoundTrace>,
    ) -> Result<Self> {
        if learners.is_empty() || learners.len() != raw_weights.len() {
            return Err(Error::invalid(format!(
                "ensemble needs J >= 1 learners with one weight each ({} learners, {} weights)",
                learners.len(),
                raw_weights.len()
            )));
        }
        if raw_weights.iter().any(|w| !(w.is_finite() && *w > T::zero())) {
            return Err(Error::invalid("ensemble weights must be finite and > 0"));
        }
        for l in &learners {
            let (_, dim) = l.input_shape();
            if dim != spec.dim() {
                return Err(Error::Shape {
                    expected: format!("learners over {} channels", spec.dim()),
                    got: format!("learner over {dim} channels"),
                });
            }
        }
        let weights = match mode {
            CombinerMode::Rescaled => rescale_weights(&raw_weights),
            CombinerMode::Literal => raw_weights.clone(),
        };
        Ok(EnsembleModel {
            learners,
            raw_weights,
            weights,
            mode,
            spec,
            stats,
            trace,
        })
    }

    pub fn learners(&self) -> &[M] {
        &self.learners
    }

    pub fn num_learners(&self) -> usize {
        self.learners.len()
    }

    /// Weights used by the combiner (rescaled in [`CombinerMode::Rescaled`]).
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn raw_weights(&self) -> &[T] {
        &self.raw_weights
    }

    pub fn mode(&self) -> CombinerMode {
        self.mode
    }

    pub fn feature_spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn trace(&self) -> &[RoundTrace] {
        &self.trace
    }

    /// Each learner's normalized output for `window`.
    pub fn learner_outputs(&self, window: &Window<T>) -> Result<Vec<T>> {
        self.learners.iter().map(|l| l.predict(window)).collect()
    }

    /// Combined forecast denormalized to USD.
    pub fn predict_usd(&self, window: &Window<T>) -> Result<f64> {
        Ok(self.stats.denormalize_target(self.predict(window)?.as_f64()))
    }
}

impl<T: Scalar, M: Forecaster<T>> Forecaster<T> for EnsembleModel<T, M> {
    fn input_shape(&self) -> (usize, usize) {
        self.learners[0].input_shape()
    }

    fn predict(&self, window: &Window<T>) -> Result<T> {
        self.check_window(window)?;
        combine_predictions(&self.learner_outputs(window)?, &self.weights)
    }
}

/// Boosts `J = config.rounds` LSTM learners on `train` and packages them.
pub fn train_ensemble<T: Scalar>(
    train: &[WindowSample<T>],
    val: &[WindowSample<T>],
    config: &EnsembleConfig,
    spec: FeatureSpec,
    stats: NormalizationStats,
) -> Result<EnsembleModel<T>> {
    config.learner.validate()?;
    if config.learner.input_dim != spec.dim() {
        return Err(Error::invalid(format!(
            "learner input_dim {} does not match feature spec `{}` (D = {})",
            config.learner.input_dim,
            spec.name,
            spec.dim()
        )));
    }
    let trainer = LstmTrainer {
        config: config.learner.clone(),
    };
    let boosted = boost(train, val, config.rounds, &trainer, config.seed)?;
    EnsembleModel::from_boosted(boosted, config.combiner, spec, stats)
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    format_version: u32,
    kind: String,
    rounds: usize,
    combiner_mode: CombinerMode,
    weights: Vec<f64>,
    raw_weights: Vec<f64>,
    feature_spec: FeatureSpec,
    normalization_stats: NormalizationStats,
    learners: Vec<String>,
    trace: Vec<RoundTrace>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn learner_stem(i: usize) -> String {
    format!("learner_{i:02}")
}

impl<T: Scalar> EnsembleModel<T> {
    /// Writes `manifest.json` and one parameter file pair per learner.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stems: Vec<String> = (0..self.learners.len()).map(learner_stem).collect();
        for (l, stem) in self.learners.iter().zip(&stems) {
            l.save(dir, stem)?;
        }
        let manifest = EnsembleManifest {
            format_version: ENSEMBLE_FORMAT_VERSION,
            kind: ENSEMBLE_KIND.to_string(),
            rounds: self.learners.len(),
            combiner_mode: self.mode,
            weights: self.weights.iter().map(|w| w.as_f64()).collect(),
            raw_weights: self.raw_weights.iter().map(|w| w.as_f64()).collect(),
            feature_spec: self.spec.clone(),
            normalization_stats: self.stats.clone(),
            learners: stems,
            trace: self.trace.clone(),
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: EnsembleManifest = serde_json::from_str(&text)?;
        if m.format_version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported ensemble format version {} (expected {ENSEMBLE_FORMAT_VERSION})",
                path.display(),
                m.format_version
            )));
        }
        if m.kind != ENSEMBLE_KIND || m.rounds != m.learners.len() || m.rounds != m.raw_weights.len() {
            return Err(Error::Format(format!("{}: inconsistent manifest", path.display())));
        }
        let learners = m
            .learners
            .iter()
            .map(|stem| WeakLearner::load(dir, stem))
            .collect::<Result<Vec<_>>>()?;
        let raw = m.raw_weights.iter().map(|&w| T::of(w)).collect();
        let model = Self::from_parts(
            learners,
            raw,
            m.combiner_mode,
            m.feature_spec,
            m.normalization_stats,
            m.trace,
        )?;
        let stored: Vec<f64> = model.weights.iter().map(|w| w.as_f64()).collect();
        if stored != m.weights {
            return Err(Error::Format(format!(
                "{}: stored weights disagree with the raw weights",
                path.display()
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MinMax;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    #[test]
    fn uniform_init() {
        assert_eq!(init_weights::<f64>(4).unwrap().as_slice(), &[0.25; 4]);
        assert_eq!(init_weights::<f64>(1).unwrap().as_slice(), &[1.0]);
        assert!(init_weights::<f64>(0).is_err());
    }

    #[test]
    fn resample_degenerate_and_deterministic() {
        let data = vec!['a', 'b', 'c'];
        let s = SamplingWeights::new(vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(resample(&data, &s, &mut rng).unwrap(), vec!['a'; 3]);

        let u = init_weights::<f64>(3).unwrap();
        let a = resample(&data, &u, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = resample(&data, &u, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);

        let bad = SamplingWeights(vec![0.7, 0.7, -0.4]);
        assert!(resample(&data, &bad, &mut rng).is_err());
    }

    #[test]
    fn resample_frequencies() {
        let data: Vec<usize> = vec![0, 1];
        let s = SamplingWeights::new(vec![0.8, 0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut zeros = 0usize;
        let draws = 100_000;
        for _ in 0..draws / 2 {
            zeros += resample(&data, &s, &mut rng).unwrap().iter().filter(|&&i| i == 0).count();
        }
        let freq = zeros as f64 / draws as f64;
        assert!((freq - 0.8).abs() < 0.01, "{freq}");
    }

    #[test]
    fn round_error_examples() {
        let s = SamplingWeights::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(errors_from_residuals(&[0.0, 0.0], &s).unwrap().total(), 0.0);
        let e = errors_from_residuals(&[1.0, -2.0], &s).unwrap();
        assert_eq!(e.as_slice(), &[0.25, 0.5]);
        assert_eq!(e.total(), 0.75);
        let one = SamplingWeights::new(vec![1.0]).unwrap();
        assert_eq!(errors_from_residuals(&[3.0], &one).unwrap().total(), 1.0);
        assert!(errors_from_residuals::<f64>(&[], &one).is_err());
    }

    #[test]
    fn learner_weight_examples() {
        assert!((learner_weight(0.5f64) - 2e-10).abs() < 1e-15);
        assert!((learner_weight(0.2f64) - 0.5 * 4f64.ln()).abs() < 1e-15);
        let w0 = learner_weight(0.0f64);
        assert!((w0 - 0.5 * ((1.0 - 1e-10) / 1e-10f64).ln()).abs() < 1e-12);
        assert!((w0 - 11.5129).abs() < 1e-4);
        assert!(learner_weight(1.0f64) > 0.0);
    }

    #[test]
    fn update_examples() {
        let s = SamplingWeights::new(vec![0.5, 0.5]).unwrap();
        let e = RoundErrors(vec![0.0, 3f64.ln()]);
        let u = update_weights(&s, &e).unwrap();
        assert!((u.as_slice()[0] - 0.25).abs() < 1e-15);
        assert!((u.as_slice()[1] - 0.75).abs() < 1e-15);

        let s = SamplingWeights::new(vec![0.1f64, 0.2, 0.7]).unwrap();
        let same = update_weights(&s, &RoundErrors(vec![0.3; 3])).unwrap();
        for (a, b) in same.as_slice().iter().zip(s.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(update_weights(&s, &RoundErrors(vec![0.0; 3])).unwrap(), s);
    }

    #[test]
    fn combiner_examples() {
        assert_eq!(combine_predictions(&[100.0, 200.0], &[1.0, 1.0]).unwrap(), 150.0);
        assert_eq!(combine_predictions(&[100.0, 200.0], &[0.5, 1.5]).unwrap(), 175.0);
        assert_eq!(rescale_weights(&[1.0, 3.0]), vec![0.5, 1.5]);
        assert!(combine_predictions::<f64>(&[], &[]).is_err());
    }

    /// Predicts a fixed value regardless of input.
    struct Constant(f64);

    impl Forecaster<f64> for Constant {
        fn input_shape(&self) -> (usize, usize) {
            (1, 1)
        }
        fn predict(&self, _: &Window<f64>) -> Result<f64> {
            Ok(self.0)
        }
    }

    fn stats() -> NormalizationStats {
        NormalizationStats {
            channels: vec!["close".into()],
            ranges: vec![MinMax { min: 0.0, max: 100.0 }],
            target: MinMax { min: 0.0, max: 100.0 },
        }
    }

    #[test]
    fn identical_learners_collapse() {
        let spec = FeatureSpec::new("price", &["close"]);
        let m = EnsembleModel::<f64, _>::from_parts(
            vec![Constant(0.3), Constant(0.3), Constant(0.3)],
            vec![0.2, 1.7, 0.4],
            CombinerMode::Rescaled,
            spec,
            stats(),
            vec![],
        )
        .unwrap();
        let w = Window::new(1, 1, vec![0.0]).unwrap();
        assert!((m.predict(&w).unwrap() - 0.3).abs() < 1e-15);
        assert!((m.predict_usd(&w).unwrap() - 30.0).abs() < 1e-12);
        assert!((m.weights().iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    struct ConstantTrainer;

    impl WeakTrainer<f64> for ConstantTrainer {
        type Model = Constant;
        fn train(&self, round: usize, _: &[WindowSample<f64>], _: &[WindowSample<f64>]) -> Result<Constant> {
            if round == 2 {
                return Err(Error::EmptyTrainingSet);
            }
            Ok(Constant(0.5))
        }
    }

    #[test]
    fn round_failures_carry_round_index() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let data: Vec<_> = (0..4)
            .map(|i| WindowSample { x: Window::new(1, 1, vec![0.0]).unwrap(), y: i as f64 / 4.0, date: d })
            .collect();
        match boost(&data, &[], 3, &ConstantTrainer, 1) {
            Err(Error::Round { round: 2, .. }) => {}
            other => panic!("unexpected {:?}", other.map(|b| b.raw_weights)),
        }
        let ok = boost(&data, &[], 2, &ConstantTrainer, 1).unwrap();
        for t in &ok.trace {
            assert!((t.sampling_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn harder_samples_gain_relative_weight(
            raw in prop::collection::vec(0.01f64..1.0, 2..12),
            res in prop::collection::vec(-1.0f64..1.0, 12),
        ) {
            let total: f64 = raw.iter().sum();
            let s = SamplingWeights::new(raw.iter().map(|w| w / total).collect()).unwrap();
            let e = errors_from_residuals(&res[..raw.len()], &s).unwrap();
            let u = update_weights(&s, &e).unwrap();
            prop_assert!((u.sum() - 1.0).abs() < 1e-12);
            for a in 0..raw.len() {
                for b in 0..raw.len() {
                    let (ea, eb) = (e.as_slice()[a], e.as_slice()[b]);
                    if ea > eb + 1e-12 {
                        prop_assert!(u.as_slice()[a] / s.as_slice()[a] > u.as_slice()[b] / s.as_slice()[b]);
                    }
                }
            }
        }

        #[test]
        fn learner_weight_decreases(a in 1e-9f64..0.5, b in 1e-9f64..0.5) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(learner_weight(lo) > learner_weight(hi));
        }

        #[test]
        fn rescaled_combiner_ignores_weight_scale(
            outs in prop::collection::vec(-5.0f64..5.0, 1..8),
            ws in prop::collection::vec(0.01f64..5.0, 8),
            k in 0.1f64..10.0,
        ) {
            let raw = &ws[..outs.len()];
            let scaled: Vec<f64> = raw.iter().map(|w| w * k).collect();
            let a = combine_predictions(&outs, &rescale_weights(raw)).unwrap();
            let b = combine_predictions(&outs, &rescale_weights(&scaled)).unwrap();
            let mean = outs.iter().zip(raw).map(|(o, w)| o * w).sum::<f64>() / raw.iter().sum::<f64>();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((a - mean).abs() < 1e-12);
        }
    }
}
