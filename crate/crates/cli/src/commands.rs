use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use log::{info, warn};

use coinboost::ensemble::MANIFEST_FILE;
use coinboost::evaluation::{
    compare_models, error_distribution, evaluate_splits, evenly_spaced_starts, metrics_csv_rows, predict_samples,
    rolling_forecast, train_single, ModelKind, RollingForecast, METRICS_HEADER,
};
use coinboost::features::{chronological_split, prepare, select_modalities, FeatureSpec, PreparedData, TARGET_CHANNEL};
use coinboost::fluctuation::{
    build_varieties, forecast_with_distribution, normal_density, train_varieties, PriceDistribution, VarietySpec,
};
use coinboost::learner::{Forecaster, WeakLearner};
use coinboost::market_data::{load_csv, merge_records, BlockchainRecord, DailyRecord, DailySeries, DateSpan, SearchRecord, TradingRecord};
use coinboost::seed::derive_seed;
use coinboost::sentiment::{aggregate_span, load_daily, load_tweets, to_series, write_daily};
use coinboost::{EnsembleModelF64, Error, WeakLearnerF64};

use crate::config::RunConfig;
use crate::plot::{Band, Bar, Figure, Line, Marker, BLUE, GREEN, GREY, ORANGE, RED};

pub const MODEL_DIR: &str = "model";
pub const BASELINE_DIR: &str = "baseline";
pub const BASELINE_STEM: &str = "learner";
pub const PRICE_MODEL_DIR: &str = "price_model";
pub const VARIETIES_DIR: &str = "varieties";
pub const VAL_PREDICTIONS: &str = "val_predictions.csv";
pub const DISTRIBUTION_HEADER: &str = "date,point_forecast_usd,mu_usd,sigma2_usd2";
/// Points of the bell-curve grid, spanning μ ± 8σ.
pub const DENSITY_POINTS: usize = 801;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn load_series(cfg: &RunConfig) -> Result<DailySeries> {
    let path = cfg.features_path();
    DailySeries::read_csv(&path).with_context(|| format!("feature store {} (run `prepare` first)", path.display()))
}

// ---------------------------------------------------------------- prepare

fn merge_modality<R: DailyRecord>(name: &str, files: &[PathBuf], span: Option<DateSpan>) -> Result<Vec<R>> {
    if files.is_empty() {
        return Err(Error::MissingData {
            what: format!("{name} data"),
            message: format!("no files configured under data.{name}"),
        }
        .into());
    }
    let sources = files
        .iter()
        .map(|p| load_csv::<R>(p).with_context(|| format!("{name} data")))
        .collect::<Result<Vec<_>>>()?;
    let fillers: Vec<&[R]> = sources[1..].iter().map(Vec::as_slice).collect();
    merge_records(&sources[0], &fillers, span).with_context(|| format!("merging {name} data"))
}

fn sentiment_series(cfg: &RunConfig, span: DateSpan, out: &Path) -> Result<DailySeries> {
    if let Some(path) = &cfg.data.tweets {
        let tweets = load_tweets(path).context("sentiment data")?;
        let days = aggregate_span(&tweets, span)?;
        write_daily(out.join("sentiment_daily.csv"), &days)?;
        return Ok(to_series(&days)?);
    }
    if let Some(path) = &cfg.data.sentiment_daily {
        let days = load_daily(path).context("sentiment data")?;
        let series = to_series(&days).context("sentiment data")?;
        return series.slice(span).context("sentiment data");
    }
    Err(Error::MissingData {
        what: "sentiment data".into(),
        message: "set data.tweets or data.sentiment_daily".into(),
    }
    .into())
}

fn series_of<R: DailyRecord>(records: &[R]) -> Result<DailySeries> {
    Ok(DailySeries::from_records(records)?)
}

/// Merges every modality over one span and writes `features.csv`.
pub fn prepare_cmd(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let requested = match (cfg.data.start, cfg.data.end) {
        (Some(s), Some(e)) => Some(DateSpan::new(s, e)?),
        _ => None,
    };
    let trading: Vec<TradingRecord> = merge_modality("trading", &cfg.data.trading, requested)?;
    let first = trading.first().expect("merge returns a non-empty span").date;
    let last = trading.last().expect("merge returns a non-empty span").date;
    let span = DateSpan::new(cfg.data.start.unwrap_or(first), cfg.data.end.unwrap_or(last))?;
    let trading = series_of(&trading)?.slice(span)?;
    let blockchain = series_of(&merge_modality::<BlockchainRecord>("blockchain", &cfg.data.blockchain, Some(span))?)?;
    let search = series_of(&merge_modality::<SearchRecord>("search", &cfg.data.search, Some(span))?)?;
    let sentiment = sentiment_series(cfg, span, out)?;
    let features = DailySeries::hstack(&[&trading, &sentiment, &blockchain, &search])?;

    let path = cfg.features_path();
    features.write_csv(&path)?;
    println!("features: {} days, {}..{} -> {}", features.len(), span.start, span.end, path.display());
    for ch in features.channels() {
        let col = features.column(ch)?;
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("  {ch:<22} min {lo:>16.4}  max {hi:>16.4}");
    }
    Ok(path)
}

// ---------------------------------------------------------------- train

fn trace_rows(out: &mut String, name: &str, model: &EnsembleModelF64) {
    for t in model.trace() {
        let _ = writeln!(out, "{name},{},{},{}", t.round, t.error_sum, t.raw_weight);
    }
}

fn loss_rows(out: &mut String, name: &str, learner: usize, l: &WeakLearnerF64) {
    for (epoch, loss) in l.training_log().train_loss.iter().enumerate() {
        let _ = writeln!(out, "{name},{learner},{},{loss}", epoch + 1);
    }
}

fn val_predictions_csv<F: Forecaster<f64>>(model: &F, data: &PreparedData<f64>) -> Result<String> {
    let (pred, _) = predict_samples(model, &data.val, &data.stats)?;
    let mut s = String::from("date,prediction_usd\n");
    for (sample, p) in data.val.iter().zip(pred) {
        let _ = writeln!(s, "{},{p}", sample.date);
    }
    Ok(s)
}

fn prepared(cfg: &RunConfig, series: &DailySeries, spec: &FeatureSpec) -> Result<PreparedData<f64>> {
    prepare::<f64>(series, spec, cfg.ratios(), cfg.features.window)
        .with_context(|| format!("preparing `{}` windows", spec.name))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    let series = load_series(cfg)?;
    let seed = cfg.seed();
    let spec = select_modalities(&cfg.features.combination)?;
    let data = prepared(cfg, &series, &spec)?;
    let ens_cfg = cfg.ensemble_config(spec.dim());
    let mut trace = String::from("model,round,error_sum,raw_weight\n");
    let mut losses = String::from("model,learner,epoch,loss\n");

    info!("training `{}` ensemble: J = {}, D = {}", spec.name, ens_cfg.rounds, spec.dim());
    let model = coinboost::ensemble::train_ensemble(&data.train, &data.val, &ens_cfg, spec.clone(), data.stats.clone())?;
    let dir = out.join(MODEL_DIR);
    model.save(&dir)?;
    write(&dir.join(VAL_PREDICTIONS), val_predictions_csv(&model, &data)?)?;
    trace_rows(&mut trace, MODEL_DIR, &model);
    for (j, l) in model.learners().iter().enumerate() {
        loss_rows(&mut losses, MODEL_DIR, j, l);
    }
    println!("ensemble: {} learners, weights {:?} -> {}", model.num_learners(), model.weights(), dir.display());

    if cfg.ensemble.baseline {
        info!("training single-learner baseline");
        let single = train_single(&data, &ens_cfg.learner, seed)?;
        let dir = out.join(BASELINE_DIR);
        single.save(&dir, BASELINE_STEM)?;
        loss_rows(&mut losses, BASELINE_DIR, 0, &single);
        println!("baseline: single learner -> {}", dir.display());
    }

    if cfg.longterm.enabled {
        info!("training price-only ensemble");
        let price = select_modalities("price")?;
        let pdata = prepared(cfg, &series, &price)?;
        let pcfg = coinboost::ensemble::EnsembleConfig {
            seed: derive_seed(seed, "price", 0),
            ..cfg.ensemble_config(price.dim())
        };
        let pmodel = coinboost::ensemble::train_ensemble(&pdata.train, &pdata.val, &pcfg, price, pdata.stats.clone())?;
        let dir = out.join(PRICE_MODEL_DIR);
        pmodel.save(&dir)?;
        trace_rows(&mut trace, PRICE_MODEL_DIR, &pmodel);
        println!("price-only model -> {}", dir.display());
    }

    if cfg.fluctuation.enabled {
        let varieties = build_varieties();
        info!("training {} varieties", varieties.len());
        let models = train_varieties::<f64>(&series, cfg.ratios(), &ens_cfg, &varieties)?;
        for (v, m) in varieties.iter().zip(&models) {
            let name = format!("{VARIETIES_DIR}/{}", v.name());
            m.save(out.join(&name))?;
            trace_rows(&mut trace, &name, m);
        }
        println!("varieties: {} models -> {}", models.len(), out.join(VARIETIES_DIR).display());
    }

    write(&out.join("training_trace.csv"), trace)?;
    write(&out.join("training_loss.csv"), losses)?;
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn load_bundle(dir: &Path, what: &str) -> Result<EnsembleModelF64> {
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(Error::MissingData {
            what: format!("{what} bundle {}", dir.display()),
            message: "not found; run `train` first".into(),
        }
        .into());
    }
    EnsembleModelF64::load(dir).with_context(|| format!("loading {what} bundle"))
}

/// Prepares the bundle's feature spec and checks the bundle was trained on
/// this feature store.
fn bundle_data(cfg: &RunConfig, series: &DailySeries, model: &EnsembleModelF64) -> Result<PreparedData<f64>> {
    let data = prepare::<f64>(series, model.feature_spec(), cfg.ratios(), model.input_shape().0)?;
    if data.stats != *model.stats() {
        return Err(Error::Shape {
            expected: "normalization statistics of the bundle".into(),
            got: "different statistics from the current feature store and split".into(),
        })
        .context("bundle does not match the feature store");
    }
    Ok(data)
}

fn check_val_predictions(dir: &Path, model: &EnsembleModelF64, data: &PreparedData<f64>) -> Result<()> {
    let path = dir.join(VAL_PREDICTIONS);
    let Ok(saved) = fs::read_to_string(&path) else {
        return Ok(());
    };
    if saved != val_predictions_csv(model, data)? {
        return Err(Error::Format(format!(
            "{} is not reproduced by the loaded bundle",
            path.display()
        ))
        .into());
    }
    Ok(())
}

fn date_ticks(dates: &[NaiveDate], count: usize) -> Vec<(f64, String)> {
    if dates.is_empty() {
        return Vec::new();
    }
    let step = (dates.len() / count.max(1)).max(1);
    (0..dates.len())
        .step_by(step)
        .map(|i| (i as f64, dates[i].format("%m-%d").to_string()))
        .collect()
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    let series = load_series(cfg)?;
    let dir = out.join(MODEL_DIR);
    let model = load_bundle(&dir, "ensemble")?;
    let data = bundle_data(cfg, &series, &model)?;
    check_val_predictions(&dir, &model, &data)?;
    let combination = model.feature_spec().name.clone();

    let mut csv = format!("{METRICS_HEADER}\n");
    let reports = evaluate_splits(&model, &data)?;
    metrics_csv_rows(&mut csv, &combination, &ModelKind::Ensemble.to_string(), &reports);
    let (pred, actual) = predict_samples(&model, &data.test, &data.stats)?;

    let baseline_path = out.join(BASELINE_DIR);
    let baseline = if baseline_path.join(format!("{BASELINE_STEM}.json")).exists() {
        let single = WeakLearner::<f64>::load(&baseline_path, BASELINE_STEM).context("loading baseline")?;
        let r = evaluate_splits(&single, &data)?;
        metrics_csv_rows(&mut csv, &combination, &ModelKind::SingleLearner.to_string(), &r);
        Some(predict_samples(&single, &data.test, &data.stats)?.0)
    } else {
        None
    };
    write(&out.join("metrics.csv"), &csv)?;
    for r in &reports {
        println!("{:>5}: n {:>5}  RMSE {:>12.3}  MSE {:>16.3}  MAE {:>12.3}", r.split.to_string(), r.n, r.rmse, r.mse, r.mae);
    }

    let mut days = cfg.output.plot_window_days;
    if days > pred.len() {
        warn!("plot window of {days} days exceeds the {}-day test split; clipping", pred.len());
        days = pred.len();
    }
    let from = pred.len() - days;
    let dates: Vec<NaiveDate> = data.test[from..].iter().map(|s| s.date).collect();
    let line = |label: &str, color, ys: &[f64]| Line {
        label: label.into(),
        color,
        points: ys[from..].iter().enumerate().map(|(i, &y)| (i as f64, y)).collect(),
    };
    let mut lines = vec![line("actual", BLUE, &actual), line("ensemble", ORANGE, &pred)];
    if let Some(b) = &baseline {
        lines.push(line("single learner", GREEN, b));
    }
    Figure {
        title: format!("{combination}: forecast vs actual, last {days} test days"),
        x_label: format!("date ({}..{})", dates[0], dates[dates.len() - 1]),
        y_label: "close (USD)".into(),
        lines,
        x_ticks: Some(date_ticks(&dates, 8)),
        ..Figure::default()
    }
    .save(&out.join("forecast"))?;

    let dist = error_distribution(&pred, &actual, &cfg.output.error_bands, cfg.output.histogram_bins)?;
    let mut shares = String::from("band_usd,share\n");
    for (band, share) in &dist.shares {
        let _ = writeln!(shares, "{band},{share}");
        println!("share of test forecasts within +/-{band} USD: {:.1}%", 100.0 * share);
    }
    write(&out.join("error_shares.csv"), shares)?;
    Figure {
        title: format!("{combination}: test error distribution"),
        x_label: "prediction - actual (USD)".into(),
        y_label: "days".into(),
        bars: dist
            .histogram
            .iter()
            .map(|b| Bar {
                x0: b.lo,
                x1: b.hi,
                height: b.count as f64,
            })
            .collect(),
        ..Figure::default()
    }
    .save(&out.join("mae_histogram"))?;
    println!("metrics -> {}", out.join("metrics.csv").display());
    Ok(())
}

// ---------------------------------------------------------------- fluctuation

/// `(x, density)` pairs over μ ± 8σ; empty when σ² = 0.
pub fn density_grid(mu: f64, sigma2: f64, points: usize) -> Vec<(f64, f64)> {
    if !(sigma2 > 0.0) || points < 2 {
        return Vec::new();
    }
    let sigma = sigma2.sqrt();
    let (lo, hi) = (mu - 8.0 * sigma, mu + 8.0 * sigma);
    (0..points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            (x, normal_density(x, mu, sigma2))
        })
        .collect()
}

fn distribution_figure(date: NaiveDate, point: f64, d: &PriceDistribution<f64>) -> Figure {
    let sigma = d.sigma();
    let mut markers = vec![Marker {
        x: d.mu,
        label: format!("mu {:.2}", d.mu),
        color: RED,
    }];
    if sigma > 0.0 {
        markers.push(Marker {
            x: d.mu + sigma,
            label: format!("sigma {sigma:.2}"),
            color: GREY,
        });
        markers.push(Marker {
            x: d.mu - sigma,
            label: String::new(),
            color: GREY,
        });
    }
    markers.push(Marker {
        x: point,
        label: String::new(),
        color: GREEN,
    });
    let grid = density_grid(d.mu, d.sigma2, DENSITY_POINTS);
    Figure {
        title: format!("{date}: forecast distribution (mu {:.2}, sigma {sigma:.2})", d.mu),
        x_label: "close (USD)".into(),
        y_label: "density".into(),
        lines: vec![Line {
            label: "normal fit".into(),
            color: BLUE,
            points: grid,
        }],
        markers,
        y_from_zero: true,
        ..Figure::default()
    }
}

pub fn fluctuation_cmd(cfg: &RunConfig, dates: &[NaiveDate]) -> Result<()> {
    let out = cfg.out_dir();
    let dates = if dates.is_empty() { &cfg.fluctuation.dates[..] } else { dates };
    if dates.is_empty() {
        return Err(Error::invalid("no forecast dates: pass --date or set fluctuation.dates").into());
    }
    let series = load_series(cfg)?;
    let point = load_bundle(&out.join(MODEL_DIR), "ensemble")?;
    let specs = build_varieties();
    let loaded: Vec<(VarietySpec, Option<EnsembleModelF64>)> = specs
        .into_iter()
        .map(|v| {
            let dir = out.join(VARIETIES_DIR).join(v.name());
            let m = if dir.join(MANIFEST_FILE).exists() {
                Some(EnsembleModelF64::load(&dir).with_context(|| format!("loading variety {}", v.name()))?)
            } else {
                None
            };
            Ok((v, m))
        })
        .collect::<Result<_>>()?;
    let varieties: Vec<(VarietySpec, Option<&EnsembleModelF64>)> =
        loaded.iter().map(|(v, m)| (v.clone(), m.as_ref())).collect();

    let mut csv = String::from(DISTRIBUTION_HEADER);
    for i in 1..=varieties.len() {
        let _ = write!(csv, ",o_{i}");
    }
    csv.push('\n');
    for &date in dates {
        let (p, d) = forecast_with_distribution(&point, &varieties, &series, date)?;
        let _ = write!(csv, "{date},{p},{},{}", d.mu, d.sigma2);
        for o in &d.outputs {
            let _ = write!(csv, ",{o}");
        }
        csv.push('\n');
        println!("{date}: point {p:.2}  mu {:.2}  sigma {:.2}", d.mu, d.sigma());
        distribution_figure(date, p, &d).save(&out.join(format!("fluctuation_{date}")))?;
    }
    write(&out.join("distribution.csv"), csv)?;
    Ok(())
}

// ---------------------------------------------------------------- longterm

pub fn rolling_csv(r: &RollingForecast) -> String {
    let mut s = String::from("horizon,mean_abs_err,min_abs_err,max_abs_err\n");
    for row in &r.rows {
        let _ = writeln!(s, "{},{},{},{}", row.horizon, row.mean_abs_err, row.min_abs_err, row.max_abs_err);
    }
    s
}

pub fn longterm_cmd(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    let series = load_series(cfg)?;
    let model = load_bundle(&out.join(PRICE_MODEL_DIR), "price-only")?;
    bundle_data(cfg, &series, &model)?;
    let closes = series.column(TARGET_CHANNEL)?;
    let spans = chronological_split(series.len(), cfg.ratios())?;
    let horizon = cfg.longterm.horizon;
    let starts = evenly_spaced_starts(spans.test.clone(), model.input_shape().0, horizon, cfg.longterm.windows)
        .context("long-term evaluation windows in the test split")?;
    let roll = rolling_forecast(&model, model.stats(), &closes, horizon, &starts)?;
    write(&out.join("rolling.csv"), rolling_csv(&roll))?;

    let h: Vec<f64> = roll.rows.iter().map(|r| r.horizon as f64).collect();
    Figure {
        title: format!("roll-forward absolute error over {} windows", roll.windows),
        x_label: "days ahead".into(),
        y_label: "absolute error (USD)".into(),
        lines: vec![Line {
            label: "mean".into(),
            color: BLUE,
            points: roll.rows.iter().map(|r| (r.horizon as f64, r.mean_abs_err)).collect(),
        }],
        bands: vec![Band {
            label: "min-max".into(),
            color: BLUE,
            x: h,
            lower: roll.rows.iter().map(|r| r.min_abs_err).collect(),
            upper: roll.rows.iter().map(|r| r.max_abs_err).collect(),
        }],
        y_from_zero: true,
        ..Figure::default()
    }
    .save(&out.join("longterm"))?;
    let first = roll.rows[0];
    let last = roll.rows[roll.rows.len() - 1];
    println!(
        "{} windows: mean abs error day 1 {:.2}, day {} {:.2} -> {}",
        roll.windows,
        first.mean_abs_err,
        last.horizon,
        last.mean_abs_err,
        out.join("rolling.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------- compare

/// Returns the number of failed cells.
pub fn compare_cmd(cfg: &RunConfig) -> Result<usize> {
    let out = cfg.out_dir().join("compare");
    let series = load_series(cfg)?;
    let kinds = cfg.model_kinds()?;
    let table = compare_models::<f64>(
        &series,
        &cfg.compare.combinations,
        &kinds,
        cfg.ratios(),
        &cfg.ensemble_config(1),
    );
    write(&out.join("metrics.csv"), table.to_csv())?;
    let text = table.format_table();
    write(&out.join("table.txt"), &text)?;
    print!("{text}");
    let failed = table.cells.iter().filter(|c| c.result.is_err()).count();
    if failed > 0 {
        warn!("{failed} comparison cell(s) failed");
    }
    Ok(failed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_grid_integrates_to_one() {
        for (mu, s2) in [(100.0, 4.0), (9500.0, 250_000.0), (0.5, 1e-6)] {
            let g = density_grid(mu, s2, DENSITY_POINTS);
            let area: f64 = g.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
            assert!((area - 1.0).abs() < 1e-6, "area {area}");
        }
        assert!(density_grid(1.0, 0.0, DENSITY_POINTS).is_empty());
    }

    #[test]
    fn consensus_plot_has_no_curve() {
        let d = PriceDistribution {
            mu: 10.0,
            sigma2: 0.0,
            outputs: vec![10.0; 10],
        };
        let f = distribution_figure(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 10.0, &d);
        assert!(f.lines[0].points.is_empty());
        assert_eq!(f.markers[0].x, 10.0);
    }
}
