//! Error metrics, error distributions, roll-forward long-term forecasts and
//! model-comparison tables.

use std::fmt::{self, Write as _};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{train_ensemble, EnsembleConfig};
use crate::error::{Error, Result};
use crate::features::{prepare, select_modalities, NormalizationStats, PreparedData, SplitRatios, Window, WindowSample, TARGET_CHANNEL};
use crate::learner::{train_learner, Forecaster, LearnerConfig};
use crate::market_data::DailySeries;
use crate::scalar::Scalar;
use crate::seed::derive_seed;

pub const DEFAULT_LONG_HORIZON: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Error metrics of one split, in USD (MSE in USD²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub split: Split,
    pub n: usize,
    pub rmse: T,
    pub mse: T,
    pub mae: T,
}

pub fn compute_metrics<T: Scalar>(predictions: &[T], actuals: &[T], split: Split) -> Result<MetricsReport<T>> {
    if predictions.is_empty() || predictions.len() != actuals.len() {
        return Err(Error::Shape {
            expected: format!("{} predictions (nonzero)", actuals.len()),
            got: format!("{}", predictions.len()),
        });
    }
    let n = T::of(predictions.len() as f64);
    let (abs, sq) = predictions
        .iter()
        .zip(actuals)
        .fold((T::zero(), T::zero()), |(a, s), (&p, &y)| {
            let d = p - y;
            (a + d.abs(), s + d * d)
        });
    let mse = sq / n;
    Ok(MetricsReport {
        split,
        n: predictions.len(),
        rmse: mse.sqrt(),
        mse,
        mae: abs / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Signed errors (prediction − actual) and their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub errors: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
    /// `(band, share of |error| ≤ band)` for each requested band.
    pub shares: Vec<(f64, f64)>,
}

impl ErrorDistribution {
    /// Fraction of forecasts within `±band` USD of the actual price.
    pub fn share_within(&self, band: f64) -> f64 {
        let hits = self.errors.iter().filter(|e| e.abs() <= band).count();
        hits as f64 / self.errors.len() as f64
    }
}

pub fn error_distribution(predictions: &[f64], actuals: &[f64], bands: &[f64], bins: usize) -> Result<ErrorDistribution> {
    if predictions.is_empty() || predictions.len() != actuals.len() {
        return Err(Error::Shape {
            expected: format!("{} predictions (nonzero)", actuals.len()),
            got: format!("{}", predictions.len()),
        });
    }
    let errors: Vec<f64> = predictions.iter().zip(actuals).map(|(p, a)| p - a).collect();
    let lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for e in &errors {
        let i = (((e - lo) / width).floor() as usize).min(bins - 1);
        histogram[i].count += 1;
    }
    let mut dist = ErrorDistribution {
        errors,
        histogram,
        shares: Vec::new(),
    };
    dist.shares = bands.iter().map(|&b| (b, dist.share_within(b))).collect();
    Ok(dist)
}

/// USD predictions and actuals of `model` over `samples`.
pub fn predict_samples<T: Scalar, F: Forecaster<T>>(
    model: &F,
    samples: &[WindowSample<T>],
    stats: &NormalizationStats,
) -> Result<(Vec<f64>, Vec<f64>)> {
    samples
        .par_iter()
        .map(|s| {
            let p = model.predict(&s.x)?.as_f64();
            Ok((stats.denormalize_target(p), stats.denormalize_target(s.y.as_f64())))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

/// Train/val/test metrics of `model` on prepared data.
pub fn evaluate_splits<T: Scalar, F: Forecaster<T>>(model: &F, data: &PreparedData<T>) -> Result<Vec<MetricsReport<f64>>> {
    [(Split::Train, &data.train), (Split::Val, &data.val), (Split::Test, &data.test)]
        .into_iter()
        .map(|(split, samples)| {
            let (p, a) = predict_samples(model, samples, &data.stats)?;
            compute_metrics(&p, &a, split)
        })
        .collect()
}

/// Previous day's close for each target date.
pub fn persistence_forecast(series: &DailySeries, dates: &[NaiveDate]) -> Result<Vec<f64>> {
    let close = series.column(TARGET_CHANNEL)?;
    dates
        .iter()
        .map(|&d| {
            d.pred_opt()
                .and_then(|p| series.index_of(p))
                .map(|i| close[i])
                .ok_or_else(|| Error::MissingData {
                    what: format!("close before {d}"),
                    message: "date outside the series".into(),
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonError {
    pub horizon: usize,
    pub mean_abs_err: f64,
    pub min_abs_err: f64,
    pub max_abs_err: f64,
}

/// Absolute-error summary per horizon across evaluation windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingForecast {
    pub windows: usize,
    pub rows: Vec<HorizonError>,
}

/// Iterated forecasts for rows `start..start + horizon` of `closes` (USD)
/// from a price-only model: each prediction is appended to the input window
/// before the next step.
pub fn roll_forward<T: Scalar, F: Forecaster<T>>(
    model: &F,
    stats: &NormalizationStats,
    closes: &[f64],
    start: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    let (steps, dim) = model.input_shape();
    if dim != 1 {
        return Err(Error::invalid(format!(
            "roll-forward needs a price-only model (1 channel), got {dim} channels"
        )));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    if start < steps || start + horizon > closes.len() {
        return Err(Error::MissingData {
            what: format!("roll-forward from row {start} over {horizon} days"),
            message: format!("needs rows {}..{}, history has {}", start.saturating_sub(steps), start + horizon, closes.len()),
        });
    }
    let input = stats.range(TARGET_CHANNEL).ok_or_else(|| Error::MissingData {
        what: "close normalization".into(),
        message: format!("model stats cover [{}]", stats.channels.join(", ")),
    })?;
    let mut window = Window::new(
        steps,
        1,
        closes[start - steps..start].iter().map(|&c| T::of(input.normalize(c))).collect(),
    )?;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let usd = stats.denormalize_target(model.predict(&window)?.as_f64());
        out.push(usd);
        window.roll(&[T::of(input.normalize(usd))])?;
    }
    Ok(out)
}

/// Roll-forward errors per horizon, aggregated over the windows starting at
/// each row of `starts`.
pub fn rolling_forecast<T: Scalar, F: Forecaster<T>>(
    model: &F,
    stats: &NormalizationStats,
    closes: &[f64],
    horizon: usize,
    starts: &[usize],
) -> Result<RollingForecast> {
    if starts.is_empty() {
        return Err(Error::invalid("rolling forecast needs at least one window"));
    }
    let runs = starts
        .par_iter()
        .map(|&s| {
            let preds = roll_forward(model, stats, closes, s, horizon)?;
            Ok(preds
                .iter()
                .zip(&closes[s..s + horizon])
                .map(|(p, a)| (p - a).abs())
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = (0..horizon)
        .map(|h| {
            let errs = runs.iter().map(|r| r[h]);
            let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for e in errs {
                lo = lo.min(e);
                hi = hi.max(e);
                sum += e;
            }
            let mean = (sum / runs.len() as f64).clamp(lo, hi);
            HorizonError {
                horizon: h + 1,
                mean_abs_err: mean,
                min_abs_err: lo,
                max_abs_err: hi,
            }
        })
        .collect();
    Ok(RollingForecast {
        windows: starts.len(),
        rows,
    })
}

/// `count` window start rows spread evenly over `rows`, each leaving room
/// for `horizon` forecast days.
pub fn evenly_spaced_starts(rows: std::ops::Range<usize>, window: usize, horizon: usize, count: usize) -> Result<Vec<usize>> {
    let first = rows.start.max(window);
    if count == 0 || rows.end < first + horizon {
        return Err(Error::MissingData {
            what: format!("{count} roll-forward windows of {horizon} days"),
            message: format!("rows {rows:?} are too short"),
        });
    }
    let last = rows.end - horizon;
    let available = last - first + 1;
    if available < count {
        return Err(Error::MissingData {
            what: format!("{count} roll-forward windows of {horizon} days"),
            message: format!("only {available} start positions in rows {rows:?}"),
        });
    }
    if count == 1 {
        return Ok(vec![first]);
    }
    Ok((0..count)
        .map(|i| first + i * (last - first) / (count - 1))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One learner trained on the full training split.
    SingleLearner,
    /// Boosted ensemble.
    Ensemble,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::SingleLearner => "single_learner",
            ModelKind::Ensemble => "ensemble",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_learner" | "single" => Ok(ModelKind::SingleLearner),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => Err(Error::invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Trains the single-learner baseline with the ensemble's first-round seed.
pub fn train_single<T: Scalar>(data: &PreparedData<T>, learner: &LearnerConfig, seed: u64) -> Result<crate::learner::WeakLearner<T>> {
    let cfg = LearnerConfig {
        input_dim: data.spec.dim(),
        seed: derive_seed(seed, "learner", 0),
        ..learner.clone()
    };
    train_learner(&data.train, &data.val, &cfg)
}

#[derive(Debug, Clone)]
pub struct ComparisonCell {
    pub combination: String,
    pub kind: ModelKind,
    /// Train/val/test metrics, or the failure message of this cell.
    pub result: std::result::Result<Vec<MetricsReport<f64>>, String>,
}

#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub cells: Vec<ComparisonCell>,
}

pub const METRICS_HEADER: &str = "combination,kind,split,n,rmse,mse,mae";

/// Row labels of the formatted table, in order.
pub const TABLE_ROWS: [&str; 7] = [
    "Training RMSE",
    "Training MAE",
    "Validation RMSE",
    "Validation MAE",
    "Testing RMSE",
    "Testing MSE",
    "Testing MAE",
];

/// Appends `metrics.csv` rows for one model.
pub fn metrics_csv_rows(out: &mut String, combination: &str, kind: &str, reports: &[MetricsReport<f64>]) {
    for r in reports {
        let _ = writeln!(out, "{combination},{kind},{},{},{},{},{}", r.split, r.n, r.rmse, r.mse, r.mae);
    }
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for c in &self.cells {
            if let Ok(reports) = &c.result {
                metrics_csv_rows(&mut out, &c.combination, &c.kind.to_string(), reports);
            }
        }
        out
    }

    pub fn format_table(&self) -> String {
        let headers: Vec<String> = self.cells.iter().map(|c| format!("{} / {}", c.combination, c.kind)).collect();
        let label_w = TABLE_ROWS.iter().map(|s| s.len()).max().unwrap_or(0);
        let col_w = headers.iter().map(String::len).max().unwrap_or(0).max(14);
        let mut out = format!("{:label_w$}", "");
        for h in &headers {
            let _ = write!(out, "  {h:>col_w$}");
        }
        out.push('\n');
        for (row, label) in TABLE_ROWS.iter().enumerate() {
            let _ = write!(out, "{label:label_w$}");
            for c in &self.cells {
                let cell = match &c.result {
                    Ok(r) => {
                        let get = |s: Split| r.iter().find(|m| m.split == s);
                        let v = match row {
                            0 => get(Split::Train).map(|m| m.rmse),
                            1 => get(Split::Train).map(|m| m.mae),
                            2 => get(Split::Val).map(|m| m.rmse),
                            3 => get(Split::Val).map(|m| m.mae),
                            4 => get(Split::Test).map(|m| m.rmse),
                            5 => get(Split::Test).map(|m| m.mse),
                            _ => get(Split::Test).map(|m| m.mae),
                        };
                        v.map_or("-".to_string(), |v| format!("{v:.3}"))
                    }
                    Err(_) => "failed".to_string(),
                };
                let _ = write!(out, "  {cell:>col_w$}");
            }
            out.push('\n');
        }
        for c in &self.cells {
            if let Err(e) = &c.result {
                let _ = writeln!(out, "{} / {}: {e}", c.combination, c.kind);
            }
        }
        out
    }
}

/// Trains and evaluates every (combination, kind) cell on the same series,
/// split and seeds. A failing cell is recorded without stopping the others.
pub fn compare_models<T: Scalar>(
    series: &DailySeries,
    combinations: &[String],
    kinds: &[ModelKind],
    ratios: SplitRatios,
    ensemble: &EnsembleConfig,
) -> ComparisonTable {
    let grid: Vec<(String, ModelKind)> = combinations
        .iter()
        .flat_map(|c| kinds.iter().map(move |k| (c.clone(), *k)))
        .collect();
    let cells = grid
        .into_par_iter()
        .map(|(combination, kind)| {
            let result = run_cell::<T>(series, &combination, kind, ratios, ensemble).map_err(|e| e.to_string());
            ComparisonCell {
                combination,
                kind,
                result,
            }
        })
        .collect();
    ComparisonTable { cells }
}

fn run_cell<T: Scalar>(
    series: &DailySeries,
    combination: &str,
    kind: ModelKind,
    ratios: SplitRatios,
    ensemble: &EnsembleConfig,
) -> Result<Vec<MetricsReport<f64>>> {
    let spec = select_modalities(combination)?;
    let data = prepare::<T>(series, &spec, ratios, ensemble.learner.window)?;
    match kind {
        ModelKind::SingleLearner => {
            let model = train_single(&data, &ensemble.learner, ensemble.seed)?;
            evaluate_splits(&model, &data)
        }
        ModelKind::Ensemble => {
            let cfg = EnsembleConfig {
                learner: LearnerConfig {
                    input_dim: spec.dim(),
                    ..ensemble.learner.clone()
                },
                ..ensemble.clone()
            };
            let model = train_ensemble(&data.train, &data.val, &cfg, spec, data.stats.clone())?;
            evaluate_splits(&model, &data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MinMax;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&[1.0, 2.0], &[1.0, 2.0], Split::Test).unwrap();
        assert_eq!((m.mae, m.mse, m.rmse), (0.0, 0.0, 0.0));
        let m = compute_metrics(&[3.0, -4.0], &[0.0, 0.0], Split::Test).unwrap();
        assert_eq!((m.mae, m.mse), (3.5, 12.5));
        assert!((m.rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(compute_metrics(&[1.0], &[1.0, 2.0], Split::Val).is_err());
        assert!(compute_metrics::<f64>(&[], &[], Split::Val).is_err());
    }

    #[test]
    fn error_distribution_examples() {
        let d = error_distribution(&[5.0, 6.0], &[5.0, 6.0], &[500.0, 0.0], 10).unwrap();
        assert_eq!(d.shares, vec![(500.0, 1.0), (0.0, 1.0)]);
        let d = error_distribution(&[100.0, 600.0], &[0.0, 0.0], &[500.0], 4).unwrap();
        assert_eq!(d.share_within(500.0), 0.5);
        assert_eq!(d.share_within(0.0), 0.0);
        assert_eq!(d.histogram.iter().map(|b| b.count).sum::<usize>(), 2);
        assert!(error_distribution(&[], &[], &[1.0], 3).is_err());
    }

    /// Predicts the newest input value.
    struct Echo;

    impl Forecaster<f64> for Echo {
        fn input_shape(&self) -> (usize, usize) {
            (7, 1)
        }
        fn predict(&self, w: &Window<f64>) -> Result<f64> {
            Ok(w.row(6)[0])
        }
    }

    fn price_stats() -> NormalizationStats {
        NormalizationStats {
            channels: vec!["close".into()],
            ranges: vec![MinMax { min: 0.0, max: 100.0 }],
            target: MinMax { min: 0.0, max: 100.0 },
        }
    }

    #[test]
    fn rolling_forecast_shape() {
        let closes: Vec<f64> = (0..80).map(|i| 50.0 + i as f64).collect();
        let r = rolling_forecast(&Echo, &price_stats(), &closes, 30, &[10, 20, 40]).unwrap();
        assert_eq!(r.rows.iter().map(|h| h.horizon).collect::<Vec<_>>(), (1..=30).collect::<Vec<_>>());
        // Echo freezes the last known close, so the error grows by one per day.
        for h in &r.rows {
            assert!((h.mean_abs_err - h.horizon as f64).abs() < 1e-9);
            assert!(h.min_abs_err <= h.mean_abs_err && h.mean_abs_err <= h.max_abs_err);
        }
        let single = rolling_forecast(&Echo, &price_stats(), &closes, 30, &[10]).unwrap();
        for h in &single.rows {
            assert_eq!(h.min_abs_err, h.mean_abs_err);
            assert_eq!(h.max_abs_err, h.mean_abs_err);
        }
        assert!(rolling_forecast(&Echo, &price_stats(), &closes, 30, &[60]).is_err());
        assert!(rolling_forecast(&Echo, &price_stats(), &closes, 30, &[3]).is_err());
    }

    #[test]
    fn starts_are_spread() {
        assert_eq!(evenly_spaced_starts(100..150, 7, 30, 3).unwrap(), vec![100, 110, 120]);
        assert_eq!(evenly_spaced_starts(0..40, 7, 30, 1).unwrap(), vec![7]);
        assert!(evenly_spaced_starts(0..20, 7, 30, 1).is_err());
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(res in prop::collection::vec(-1e3f64..1e3, 1..50)) {
            let zeros = vec![0.0; res.len()];
            let m = compute_metrics(&res, &zeros, Split::Test).unwrap();
            prop_assert!(m.rmse + 1e-9 >= m.mae);
            prop_assert!((m.rmse - m.mse.sqrt()).abs() <= 1e-9 * (1.0 + m.rmse));
        }

        #[test]
        fn shares_grow_with_band(errs in prop::collection::vec(-1e3f64..1e3, 1..40), a in 0.0f64..500.0, b in 0.0f64..500.0) {
            let zeros = vec![0.0; errs.len()];
            let d = error_distribution(&errs, &zeros, &[], 5).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(d.share_within(lo) <= d.share_within(hi));
        }
    }
}
