//! Modality selection, min-max normalization, 7-day windows and
//! chronological splits.

use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::DailySeries;
use crate::scalar::Scalar;

/// Channel order of the merged feature store.
pub const CANONICAL_CHANNELS: [&str; 18] = [
    "open",
    "high",
    "low",
    "close",
    "volume_coin",
    "volume_usd",
    "weighted_price",
    "avg_fees",
    "transactions",
    "weighted_sentiment",
    "tweet_volume",
    "hash_rate",
    "block_size",
    "block_time",
    "network_difficulty",
    "active_addresses",
    "mining_profitability",
    "search_volume",
];

pub const TRADING_CHANNELS: &[&str] = &[
    "open",
    "high",
    "low",
    "close",
    "volume_coin",
    "volume_usd",
    "weighted_price",
    "avg_fees",
    "transactions",
];
pub const SENTIMENT_CHANNELS: &[&str] = &["weighted_sentiment", "tweet_volume"];
pub const BLOCKCHAIN_CHANNELS: &[&str] = &[
    "hash_rate",
    "block_size",
    "block_time",
    "network_difficulty",
    "active_addresses",
    "mining_profitability",
];
pub const SEARCH_CHANNELS: &[&str] = &["search_volume"];

/// Forecast target; always denormalized with its own statistics.
pub const TARGET_CHANNEL: &str = "close";

pub const DEFAULT_WINDOW: usize = 7;
pub const DEFAULT_HORIZON: usize = 1;

/// Known modality combinations. `price` (close only) feeds the roll-forward
/// long-term model.
pub const COMBINATIONS: &[&str] = &[
    "trading",
    "sentiment",
    "trading+hash",
    "trading+search",
    "trading+blockchain",
    "trading+sentiment",
    "all",
    "price",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub channels: Vec<String>,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, channels: &[&str]) -> Self {
        FeatureSpec {
            name: name.into(),
            channels: channels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }
}

pub fn select_modalities(id: &str) -> Result<FeatureSpec> {
    let mut chans: Vec<&str> = Vec::new();
    match id {
        "trading" => chans.extend(TRADING_CHANNELS),
        "sentiment" => chans.extend(SENTIMENT_CHANNELS),
        "trading+hash" => {
            chans.extend(TRADING_CHANNELS);
            chans.push("hash_rate");
        }
        "trading+search" => {
            chans.extend(TRADING_CHANNELS);
            chans.extend(SEARCH_CHANNELS);
        }
        "trading+blockchain" => {
            chans.extend(TRADING_CHANNELS);
            chans.extend(BLOCKCHAIN_CHANNELS);
        }
        "trading+sentiment" => {
            chans.extend(TRADING_CHANNELS);
            chans.extend(SENTIMENT_CHANNELS);
        }
        "all" => chans.extend(CANONICAL_CHANNELS),
        "price" => chans.push(TARGET_CHANNEL),
        other => {
            return Err(Error::invalid(format!(
                "unknown modality combination `{other}` (expected one of {})",
                COMBINATIONS.join(", ")
            )))
        }
    }
    Ok(FeatureSpec::new(id, &chans))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("split ratios must be positive: {r:?}")));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Contiguous row ranges of the three chronological splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpans {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpans {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Sizes are floor(N·train), floor(N·val) and the remainder.
pub fn chronological_split(n: usize, ratios: SplitRatios) -> Result<SplitSpans> {
    ratios.validate()?;
    if n < 3 {
        return Err(Error::invalid(format!("series of {n} days is too short to split")));
    }
    let n_train = (n as f64 * ratios.train).floor() as usize;
    let n_val = (n as f64 * ratios.val).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::invalid(format!(
            "series of {n} days leaves an empty split under {ratios:?}"
        )));
    }
    Ok(SplitSpans {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..n,
    })
}

/// Closed interval used for min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<MinMax> {
        values.into_iter().fold(None, |acc, v| match acc {
            None => Some(MinMax { min: v, max: v }),
            Some(m) => Some(MinMax {
                min: m.min.min(v),
                max: m.max.max(v),
            }),
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    /// Not clipped: values outside the fitted range leave [0, 1].
    pub fn normalize(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            z * (self.max - self.min) + self.min
        }
    }
}

/// Per-channel ranges fitted on the training rows, plus the target range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub channels: Vec<String>,
    pub ranges: Vec<MinMax>,
    pub target: MinMax,
}

impl NormalizationStats {
    pub fn range(&self, channel: &str) -> Option<MinMax> {
        self.channels
            .iter()
            .position(|c| c == channel)
            .map(|i| self.ranges[i])
    }

    pub fn degenerate_channels(&self) -> Vec<&str> {
        self.channels
            .iter()
            .zip(&self.ranges)
            .filter(|(_, r)| r.is_degenerate())
            .map(|(c, _)| c.as_str())
            .collect()
    }

    pub fn normalize_target(&self, usd: f64) -> f64 {
        self.target.normalize(usd)
    }

    pub fn denormalize_target(&self, z: f64) -> f64 {
        self.target.denormalize(z)
    }
}

fn channel_indices(series: &DailySeries, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|c| {
            series.channel_index(c).ok_or_else(|| Error::MissingData {
                what: format!("channel `{c}`"),
                message: format!("available: [{}]", series.channels().join(", ")),
            })
        })
        .collect()
}

/// Fits per-channel ranges of `spec` and of the close target over
/// `train_rows` only.
pub fn fit_normalization(
    series: &DailySeries,
    train_rows: Range<usize>,
    spec: &FeatureSpec,
) -> Result<NormalizationStats> {
    if train_rows.is_empty() || train_rows.end > series.len() {
        return Err(Error::invalid(format!(
            "training rows {train_rows:?} are empty or exceed the series ({} rows)",
            series.len()
        )));
    }
    let idx = channel_indices(series, &spec.channels)?;
    let target_idx = channel_indices(series, &[TARGET_CHANNEL.to_string()])?[0];
    let rows = &series.rows()[train_rows];
    let ranges = idx
        .iter()
        .map(|&j| MinMax::fit(rows.iter().map(|r| r[j])).expect("nonempty"))
        .collect();
    let target = MinMax::fit(rows.iter().map(|r| r[target_idx])).expect("nonempty");
    Ok(NormalizationStats {
        channels: spec.channels.clone(),
        ranges,
        target,
    })
}

/// Row-major `steps × dim` matrix of normalized features.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    steps: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Window<T> {
    pub fn new(steps: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != steps * dim {
            return Err(Error::Shape {
                expected: format!("{steps}x{dim} = {} values", steps * dim),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Window { steps, dim, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let data: Vec<T> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), dim, data)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Shifts the window one step forward, appending `next` as the newest row.
    pub fn roll(&mut self, next: &[T]) -> Result<()> {
        if next.len() != self.dim {
            return Err(Error::Shape {
                expected: format!("{} values", self.dim),
                got: format!("{} values", next.len()),
            });
        }
        self.data.drain(..self.dim);
        self.data.extend_from_slice(next);
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFiniteInput {
                row: i / self.dim.max(1),
                col: i % self.dim.max(1),
            }),
            None => Ok(()),
        }
    }
}

/// Input window for days `t-6..=t` and the normalized close of `date`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample<T> {
    pub x: Window<T>,
    pub y: T,
    pub date: NaiveDate,
}

/// Normalized window whose newest row is `last_row`.
pub fn window_at<T: Scalar>(
    series: &DailySeries,
    last_row: usize,
    spec: &FeatureSpec,
    stats: &NormalizationStats,
    window: usize,
) -> Result<Window<T>> {
    if window == 0 || last_row + 1 < window || last_row >= series.len() {
        return Err(Error::MissingData {
            what: format!("{window}-day window ending {}", series.date(last_row.min(series.len() - 1))),
            message: format!("series has {} rows", series.len()),
        });
    }
    if stats.channels != spec.channels {
        return Err(Error::Shape {
            expected: format!("stats for [{}]", spec.channels.join(",")),
            got: format!("stats for [{}]", stats.channels.join(",")),
        });
    }
    let idx = channel_indices(series, &spec.channels)?;
    let rows = series.rows();
    let mut data = Vec::with_capacity(window * idx.len());
    for r in &rows[last_row + 1 - window..=last_row] {
        for (k, &j) in idx.iter().enumerate() {
            data.push(T::of(stats.ranges[k].normalize(r[j])));
        }
    }
    Window::new(window, idx.len(), data)
}

/// One sample per position inside `rows`: `L − window − horizon + 1`
/// samples for `L` rows. Inputs and targets never leave `rows`.
pub fn build_windows<T: Scalar>(
    series: &DailySeries,
    rows: Range<usize>,
    spec: &FeatureSpec,
    stats: &NormalizationStats,
    window: usize,
    horizon: usize,
) -> Result<Vec<WindowSample<T>>> {
    if window == 0 || horizon == 0 {
        return Err(Error::invalid("window and horizon must be >= 1"));
    }
    if rows.end > series.len() {
        return Err(Error::invalid(format!(
            "rows {rows:?} exceed series length {}",
            series.len()
        )));
    }
    let len = rows.len();
    if len < window + horizon {
        return Err(Error::MissingData {
            what: format!("windows over rows {rows:?}"),
            message: format!("{len} days < window {window} + horizon {horizon}"),
        });
    }
    let target_idx = channel_indices(series, &[TARGET_CHANNEL.to_string()])?[0];
    (0..=len - window - horizon)
        .map(|p| {
            let last = rows.start + p + window - 1;
            let target_row = last + horizon;
            Ok(WindowSample {
                x: window_at(series, last, spec, stats, window)?,
                y: T::of(stats.normalize_target(series.rows()[target_row][target_idx])),
                date: series.date(target_row),
            })
        })
        .collect()
}

/// Normalized samples for each chronological split.
#[derive(Debug, Clone)]
pub struct PreparedData<T> {
    pub spec: FeatureSpec,
    pub stats: NormalizationStats,
    pub spans: SplitSpans,
    pub train: Vec<WindowSample<T>>,
    pub val: Vec<WindowSample<T>>,
    pub test: Vec<WindowSample<T>>,
}

/// Splits `series`, fits normalization on the training split and builds
/// next-day windows inside each split.
pub fn prepare<T: Scalar>(
    series: &DailySeries,
    spec: &FeatureSpec,
    ratios: SplitRatios,
    window: usize,
) -> Result<PreparedData<T>> {
    let spans = chronological_split(series.len(), ratios)?;
    let stats = fit_normalization(series, spans.train.clone(), spec)?;
    let build = |r: &Range<usize>| build_windows(series, r.clone(), spec, &stats, window, DEFAULT_HORIZON);
    Ok(PreparedData {
        train: build(&spans.train)?,
        val: build(&spans.val)?,
        test: build(&spans.test)?,
        spec: spec.clone(),
        stats,
        spans,
    })
}
