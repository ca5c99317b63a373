//! Run configuration, read from one TOML file.
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Deserializer};

use coinboost::ensemble::{CombinerMode, EnsembleConfig, DEFAULT_ROUNDS};
use coinboost::evaluation::ModelKind;
use coinboost::features::{select_modalities, SplitRatios, DEFAULT_WINDOW};
use coinboost::learner::{DropoutSite, LearnerConfig};
use coinboost::market_data::{parse_date, DateSpan};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; required here or via `--seed`.
    pub seed: Option<u64>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub fluctuation: FluctuationSection,
    #[serde(default)]
    pub longterm: LongtermSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Input files. Per-modality lists are in precedence order: the first file
/// is the primary source, later files fill its gaps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub trading: Vec<PathBuf>,
    #[serde(default)]
    pub blockchain: Vec<PathBuf>,
    #[serde(default)]
    pub search: Vec<PathBuf>,
    /// Per-tweet scores, aggregated during `prepare`.
    pub tweets: Option<PathBuf>,
    /// Already aggregated daily sentiment; alternative to `tweets`.
    pub sentiment_daily: Option<PathBuf>,
    #[serde(default, deserialize_with = "opt_date")]
    pub start: Option<NaiveDate>,
    #[serde(default, deserialize_with = "opt_date")]
    pub end: Option<NaiveDate>,
    /// Feature store; defaults to `<out>/features.csv`.
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub combination: String,
    pub window: usize,
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        let r = SplitRatios::default();
        FeaturesConfig {
            combination: "all".into(),
            window: DEFAULT_WINDOW,
            train: r.train,
            val: r.val,
            test: r.test,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSection {
    pub hidden: usize,
    pub fc1: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_site: DropoutSite,
    pub dropout_rate: f64,
}

impl Default for LearnerSection {
    fn default() -> Self {
        let d = LearnerConfig::new(1);
        LearnerSection {
            hidden: d.hidden,
            fc1: d.fc1,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            dropout_site: d.dropout_site,
            dropout_rate: d.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub rounds: usize,
    pub combiner: CombinerMode,
    /// Also train the single-learner baseline during `train`.
    pub baseline: bool,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            rounds: DEFAULT_ROUNDS,
            combiner: CombinerMode::Rescaled,
            baseline: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluctuationSection {
    /// Train the ten varieties during `train`.
    pub enabled: bool,
    #[serde(deserialize_with = "dates")]
    pub dates: Vec<NaiveDate>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LongtermSection {
    /// Train the price-only model during `train`.
    pub enabled: bool,
    pub horizon: usize,
    pub windows: usize,
}

impl Default for LongtermSection {
    fn default() -> Self {
        LongtermSection {
            enabled: true,
            horizon: 30,
            windows: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub combinations: Vec<String>,
    pub kinds: Vec<String>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            combinations: vec!["trading".into(), "all".into()],
            kinds: vec!["single_learner".into(), "ensemble".into()],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Days shown in the forecast-vs-actual plot.
    pub plot_window_days: usize,
    /// USD bands for the error-share summary.
    pub error_bands: Vec<f64>,
    pub histogram_bins: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            plot_window_days: 100,
            error_bands: vec![100.0, 250.0, 500.0, 1000.0],
            histogram_bins: 30,
        }
    }
}

fn date_from_value(v: toml::Value) -> std::result::Result<NaiveDate, String> {
    let s = match v {
        toml::Value::String(s) => s,
        toml::Value::Datetime(d) => d.to_string(),
        other => return Err(format!("expected a date, found {}", other.type_str())),
    };
    parse_date(&s)
}

fn opt_date<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<NaiveDate>, D::Error> {
    Option::<toml::Value>::deserialize(d)?
        .map(date_from_value)
        .transpose()
        .map_err(serde::de::Error::custom)
}

fn dates<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<NaiveDate>, D::Error> {
    Vec::<toml::Value>::deserialize(d)?
        .into_iter()
        .map(date_from_value)
        .collect::<std::result::Result<_, _>>()
        .map_err(serde::de::Error::custom)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        d.trading.iter_mut().chain(&mut d.blockchain).chain(&mut d.search).for_each(fix);
        d.tweets.iter_mut().chain(&mut d.sentiment_daily).chain(&mut d.features).for_each(fix);
        fix(&mut self.output.dir);
    }

    /// Applies command-line overrides and checks every section.
    pub fn finish(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(out) = out {
            self.output.dir = out;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            bail!("seed is required (set `seed` in the config or pass --seed)");
        }
        if let (Some(s), Some(e)) = (self.data.start, self.data.end) {
            DateSpan::new(s, e).context("data.start/data.end")?;
        }
        if self.data.tweets.is_some() && self.data.sentiment_daily.is_some() {
            bail!("data: set only one of `tweets` and `sentiment_daily`");
        }
        select_modalities(&self.features.combination).context("features.combination")?;
        self.ratios().validate().context("features split")?;
        if self.ensemble.rounds == 0 {
            bail!("ensemble.rounds must be >= 1");
        }
        self.learner_config(1).validate().context("learner")?;
        if self.longterm.horizon == 0 || self.longterm.windows == 0 {
            bail!("longterm.horizon and longterm.windows must be >= 1");
        }
        for c in &self.compare.combinations {
            select_modalities(c).with_context(|| format!("compare.combinations entry `{c}`"))?;
        }
        self.model_kinds()?;
        if self.output.plot_window_days == 0 || self.output.histogram_bins == 0 {
            bail!("output.plot_window_days and output.histogram_bins must be >= 1");
        }
        if self.output.error_bands.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            bail!("output.error_bands must be finite and >= 0");
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.features.train,
            val: self.features.val,
            test: self.features.test,
        }
    }

    pub fn learner_config(&self, input_dim: usize) -> LearnerConfig {
        let l = &self.learner;
        LearnerConfig {
            input_dim,
            window: self.features.window,
            hidden: l.hidden,
            fc1: l.fc1,
            dropout_site: l.dropout_site,
            dropout_rate: l.dropout_rate,
            epochs: l.epochs,
            learning_rate: l.learning_rate,
            batch_size: l.batch_size,
            seed: self.seed.unwrap_or(0),
        }
    }

    pub fn ensemble_config(&self, input_dim: usize) -> EnsembleConfig {
        EnsembleConfig {
            rounds: self.ensemble.rounds,
            combiner: self.ensemble.combiner,
            learner: self.learner_config(input_dim),
            seed: self.seed(),
        }
    }

    pub fn model_kinds(&self) -> Result<Vec<ModelKind>> {
        self.compare
            .kinds
            .iter()
            .map(|k| k.parse().with_context(|| format!("compare.kinds entry `{k}`")))
            .collect()
    }

    pub fn out_dir(&self) -> &Path {
        &self.output.dir
    }

    pub fn features_path(&self) -> PathBuf {
        self.data
            .features
            .clone()
            .unwrap_or_else(|| self.output.dir.join("features.csv"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.resolve_paths(Path::new("/base"));
        Ok(cfg)
    }

    #[test]
    fn defaults_follow_the_learner_defaults() {
        let cfg = parse("seed = 3").unwrap().finish(None, None).unwrap();
        assert_eq!(cfg.ensemble.rounds, 10);
        assert_eq!(cfg.learner.learning_rate, 3e-4);
        assert_eq!(cfg.learner.epochs, 200);
        assert_eq!(cfg.features.window, 7);
        assert_eq!(cfg.features.combination, "all");
        assert_eq!(cfg.output.dir, PathBuf::from("/base/out"));
        assert_eq!(cfg.features_path(), PathBuf::from("/base/out/features.csv"));
    }

    #[test]
    fn seed_is_mandatory_and_overridable() {
        assert!(parse("").unwrap().finish(None, None).is_err());
        let cfg = parse("seed = 1").unwrap().finish(Some(9), Some("o".into())).unwrap();
        assert_eq!((cfg.seed(), cfg.out_dir()), (9, Path::new("o")));
    }

    #[test]
    fn sections_parse_and_paths_resolve() {
        let cfg = parse(
            r#"
            seed = 5
            [data]
            trading = ["a.csv", "/abs/b.csv"]
            tweets = "t.csv"
            start = 2020-01-01
            end = "2020-03-01"
            [ensemble]
            rounds = 2
            combiner = "literal"
            [learner]
            dropout_site = "fc1_output"
            dropout_rate = 0.2
            [fluctuation]
            dates = ["2020-02-01", 2020-02-02]
            "#,
        )
        .unwrap()
        .finish(None, None)
        .unwrap();
        assert_eq!(cfg.data.trading, vec![PathBuf::from("/base/a.csv"), PathBuf::from("/abs/b.csv")]);
        assert_eq!(cfg.data.start, NaiveDate::from_ymd_opt(2020, 1, 1));
        assert_eq!(cfg.fluctuation.dates.len(), 2);
        assert_eq!(cfg.ensemble.combiner, CombinerMode::Literal);
        assert_eq!(cfg.learner_config(4).dropout_site, DropoutSite::Fc1Output);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        for bad in [
            "seed = 1\n[ensemble]\nrounds = 0",
            "seed = 1\n[features]\ncombination = \"nope\"",
            "seed = 1\n[features]\ntrain = 0.5",
            "seed = 1\n[learner]\nepochs = 0",
            "seed = 1\n[compare]\nkinds = [\"forest\"]",
            "seed = 1\n[data]\nstart = \"2020-02-01\"\nend = \"2020-01-01\"",
        ] {
            assert!(parse(bad).unwrap().finish(None, None).is_err(), "{bad}");
        }
        assert!(parse("seed = 1\n[ensemble]\nround = 3").is_err());
    }
}
