//! Forecast uncertainty from ten model varieties: four input-modality
//! variants and six dropout variants of the all-modality model, summarized
//! by a maximum-likelihood Gaussian.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{train_ensemble, EnsembleConfig, EnsembleModel};
use crate::error::{Error, Result};
use crate::features::{prepare, select_modalities, window_at, FeatureSpec, SplitRatios};
use crate::learner::{DropoutSite, Forecaster, LearnerConfig};
use crate::market_data::DailySeries;
use crate::scalar::Scalar;
use crate::seed::derive_seed;

pub const NUM_VARIETIES: usize = 10;
pub const INPUT_VARIETIES: [&str; 4] = ["trading", "sentiment", "trading+blockchain", "trading+search"];
pub const DROPOUT_RATES: [f64; 3] = [0.1, 0.2, 0.35];
/// Modality combination the dropout variants and the point forecast use.
pub const FULL_COMBINATION: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarietyKind {
    InputVariety { combination: String },
    DropoutVariant { site: DropoutSite, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarietySpec {
    /// 1-based identifier.
    pub id: usize,
    #[serde(flatten)]
    pub kind: VarietyKind,
}

impl VarietySpec {
    pub fn name(&self) -> String {
        match &self.kind {
            VarietyKind::InputVariety { combination } => format!("v{:02}_{}", self.id, combination.replace('+', "_")),
            VarietyKind::DropoutVariant { site, rate } => {
                let site = match site {
                    DropoutSite::RecurrentLastHidden => "last_hidden",
                    DropoutSite::Fc1Output => "fc1",
                    DropoutSite::None => "none",
                };
                format!("v{:02}_dropout_{site}_{rate}", self.id)
            }
        }
    }

    pub fn feature_spec(&self) -> Result<FeatureSpec> {
        match &self.kind {
            VarietyKind::InputVariety { combination } => select_modalities(combination),
            VarietyKind::DropoutVariant { .. } => select_modalities(FULL_COMBINATION),
        }
    }

    /// `base` with the input width and dropout of this variety. Input
    /// varieties differ from `base` only in the width of the input layer.
    pub fn learner_config(&self, base: &LearnerConfig) -> Result<LearnerConfig> {
        let spec = self.feature_spec()?;
        let mut cfg = LearnerConfig {
            input_dim: spec.dim(),
            ..base.clone()
        };
        if let VarietyKind::DropoutVariant { site, rate } = self.kind {
            cfg.dropout_site = site;
            cfg.dropout_rate = rate;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The ten varieties: ids 1–4 are input varieties, ids 5–10 the dropout
/// variants (last hidden state, then fc1 output, each at 0.1/0.2/0.35).
pub fn build_varieties() -> Vec<VarietySpec> {
    let inputs = INPUT_VARIETIES.iter().map(|c| VarietyKind::InputVariety {
        combination: c.to_string(),
    });
    let dropouts = [DropoutSite::RecurrentLastHidden, DropoutSite::Fc1Output]
        .into_iter()
        .flat_map(|site| DROPOUT_RATES.iter().map(move |&rate| VarietyKind::DropoutVariant { site, rate }));
    inputs
        .chain(dropouts)
        .enumerate()
        .map(|(i, kind)| VarietySpec { id: i + 1, kind })
        .collect()
}

/// Gaussian summary of the variety forecasts, in USD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceDistribution<T> {
    pub mu: T,
    pub sigma2: T,
    pub outputs: Vec<T>,
}

impl<T: Scalar> PriceDistribution<T> {
    pub fn sigma(&self) -> T {
        self.sigma2.sqrt()
    }
}

/// Maximum-likelihood normal fit: sample mean and the `1/n` variance.
pub fn estimate_distribution<T: Scalar>(outputs: &[T]) -> Result<PriceDistribution<T>> {
    if outputs.is_empty() {
        return Err(Error::invalid("cannot fit a distribution to zero forecasts"));
    }
    if outputs.iter().any(|o| !o.is_finite()) {
        return Err(Error::invalid("forecasts must be finite"));
    }
    let n = T::of(outputs.len() as f64);
    let mu = outputs.iter().copied().sum::<T>() / n;
    let sigma2 = outputs.iter().map(|&o| (o - mu) * (o - mu)).sum::<T>() / n;
    // Rounding can push the mean a hair outside the sample range.
    let lo = outputs.iter().copied().fold(T::infinity(), T::min);
    let hi = outputs.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(PriceDistribution {
        mu: mu.max(lo).min(hi),
        sigma2,
        outputs: outputs.to_vec(),
    })
}

/// Normal density at `x`.
pub fn normal_density(x: f64, mu: f64, sigma2: f64) -> f64 {
    let z = x - mu;
    (-z * z / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI * sigma2).sqrt()
}

/// Trains every variety as a boosted ensemble on its own modality set.
/// Varieties are independent and train concurrently; each draws its seeds
/// from `("variety", id)`.
pub fn train_varieties<T: Scalar>(
    series: &DailySeries,
    ratios: SplitRatios,
    base: &EnsembleConfig,
    varieties: &[VarietySpec],
) -> Result<Vec<EnsembleModel<T>>> {
    varieties
        .par_iter()
        .map(|v| {
            let wrap = |e: Error| Error::Variety {
                variety: v.name(),
                source: Box::new(e),
            };
            let spec = v.feature_spec().map_err(wrap)?;
            let data = prepare::<T>(series, &spec, ratios, base.learner.window).map_err(wrap)?;
            let cfg = EnsembleConfig {
                learner: v.learner_config(&base.learner).map_err(wrap)?,
                seed: derive_seed(base.seed, "variety", v.id as u64),
                ..base.clone()
            };
            train_ensemble(&data.train, &data.val, &cfg, spec, data.stats).map_err(wrap)
        })
        .collect()
}

/// Point forecast of `point_model` and the distribution of the variety
/// forecasts for `date`, each from the window of the seven days before it.
///
/// `varieties` pairs each spec with its trained model; a missing model is
/// an error naming the variety.
pub fn forecast_with_distribution<T: Scalar, M: Forecaster<T>>(
    point_model: &EnsembleModel<T, M>,
    varieties: &[(VarietySpec, Option<&EnsembleModel<T, M>>)],
    series: &DailySeries,
    date: NaiveDate,
) -> Result<(f64, PriceDistribution<f64>)> {
    let predict = |model: &EnsembleModel<T, M>| -> Result<f64> {
        let window = model.input_shape().0;
        let last_row = date
            .pred_opt()
            .and_then(|d| series.index_of(d))
            .filter(|&i| i + 1 >= window)
            .ok_or_else(|| Error::MissingData {
                what: format!("forecast date {date}"),
                message: format!(
                    "need {window} days of features before it; data covers {}..{}",
                    series.start(),
                    series.end()
                ),
            })?;
        let w = window_at::<T>(series, last_row, model.feature_spec(), model.stats(), window)?;
        model.predict_usd(&w)
    };

    let point = predict(point_model)?;
    let mut outputs = Vec::with_capacity(varieties.len());
    for (spec, model) in varieties {
        let wrap = |e: Error| Error::Variety {
            variety: spec.name(),
            source: Box::new(e),
        };
        let model = model.ok_or_else(|| {
            wrap(Error::MissingData {
                what: "trained model".into(),
                message: "variety has not been trained".into(),
            })
        })?;
        outputs.push(predict(model).map_err(wrap)?);
    }
    Ok((point, estimate_distribution(&outputs)?))
}
