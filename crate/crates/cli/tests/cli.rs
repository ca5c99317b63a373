use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Duration, NaiveDate};

const DAYS: usize = 300;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 1, 1).unwrap()
}

fn day(i: usize) -> NaiveDate {
    start() + Duration::days(i as i64)
}

/// Writes a deterministic fixture of all four modalities. The primary
/// trading file misses days 40..45, which the second trading file covers.
fn write_fixture(dir: &Path) {
    let mut primary = String::from(
        "date,open,high,low,close,volume_coin,volume_usd,weighted_price,avg_fees,transactions\n",
    );
    let mut filler = primary.clone();
    let mut chain = String::from(
        "date,hash_rate,block_size,block_time,network_difficulty,active_addresses,mining_profitability\n",
    );
    let mut search = String::from("date,search_volume\n");
    let mut tweets = String::from("timestamp,score_a,score_b,likes,comments,retweets,quotes\n");
    for i in 0..DAYS {
        let t = i as f64;
        let close = 9000.0 + 3.0 * t + 400.0 * (t / 9.0).sin();
        let open = close - 20.0 * (t / 5.0).cos();
        let (high, low) = (open.max(close) + 35.0, open.min(close) - 35.0);
        let row = format!(
            "{},{open},{high},{low},{close},{},{},{},{},{}\n",
            day(i),
            1000.0 + 50.0 * (t / 7.0).sin(),
            9e6 + 1e5 * t,
            (open + close) / 2.0,
            1.5 + 0.1 * (t / 3.0).sin(),
            250_000 + 100 * i
        );
        if !(40..45).contains(&i) {
            primary.push_str(&row);
        }
        if i >= 30 && i < 60 {
            filler.push_str(&row);
        }
        let _ = writeln!(
            chain,
            "{},{},{},{},{},{},{}",
            day(i),
            1e8 + 1e5 * t,
            1.1 + 0.01 * (t / 4.0).sin(),
            9.5 + (t / 6.0).cos(),
            1.5e13 + 1e10 * t,
            700_000 + 13 * i,
            0.2 + 0.01 * (t / 8.0).cos()
        );
        let _ = writeln!(search, "{},{}", day(i), 40.0 + 10.0 * (t / 11.0).sin());
        for k in 0..3 {
            let s = (0.3 * (t / 10.0 + k as f64)).sin();
            let _ = writeln!(
                tweets,
                "{} {:02}:00:00,{s},{},{},{},{},{}",
                day(i),
                6 * k + 1,
                -0.5 * s,
                k + 1,
                k,
                2 * k + 1,
                1
            );
        }
    }
    fs::write(dir.join("trading_a.csv"), primary).unwrap();
    fs::write(dir.join("trading_b.csv"), filler).unwrap();
    fs::write(dir.join("blockchain.csv"), chain).unwrap();
    fs::write(dir.join("search.csv"), search).unwrap();
    fs::write(dir.join("tweets.csv"), tweets).unwrap();
}

fn config(extra: &str) -> String {
    format!(
        r#"
seed = 17

[data]
trading = ["trading_a.csv", "trading_b.csv"]
blockchain = ["blockchain.csv"]
search = ["search.csv"]
tweets = "tweets.csv"

[learner]
hidden = 4
fc1 = 3
epochs = 2
batch_size = 16
learning_rate = 0.003

[ensemble]
rounds = 2

[compare]
combinations = ["trading", "all"]
{extra}
"#
    )
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(extra: &str) -> Fixture {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        write_fixture(&root);
        fs::write(root.join("run.toml"), config(extra)).unwrap();
        Fixture { _tmp: tmp, root }
    }

    fn run(&self, args: &[&str], out: &str) -> Output {
        let out = self.root.join(out);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_coinboost"));
        cmd.args(&args[..1])
            .arg("--config")
            .arg(self.root.join("run.toml"))
            .arg("--out")
            .arg(&out)
            .args(&args[1..])
            .env("RUST_LOG", "warn");
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str], out: &str) -> Output {
        let o = self.run(args, out);
        assert!(
            o.status.success(),
            "{args:?} failed: {}\n{}",
            String::from_utf8_lossy(&o.stderr),
            String::from_utf8_lossy(&o.stdout)
        );
        o
    }

    fn edit(&self, from: &str, to: &str) {
        let text = self.read("run.toml");
        assert!(text.contains(from));
        fs::write(self.root.join("run.toml"), text.replace(from, to)).unwrap();
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.root.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn prepare_writes_canonical_features_deterministically() {
    let f = Fixture::new("");
    f.ok(&["prepare"], "out");
    let a = f.read("out/features.csv");
    let header: Vec<&str> = a.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 19);
    assert_eq!(header[0], "date");
    assert_eq!(&header[1..], &coinboost::features::CANONICAL_CHANNELS[..]);
    assert_eq!(a.lines().count(), DAYS + 1);
    assert!(f.root.join("out/sentiment_daily.csv").exists());
    f.ok(&["prepare"], "out");
    assert_eq!(a, f.read("out/features.csv"));
}

#[test]
fn missing_blockchain_file_is_a_data_error() {
    let f = Fixture::new("");
    fs::remove_file(f.root.join("blockchain.csv")).unwrap();
    let o = f.run(&["prepare"], "out");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("blockchain"), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_with_one() {
    let f = Fixture::new("");
    f.edit("rounds = 2", "rounds = 0");
    let o = f.run(&["train"], "out");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("rounds"));

    f.edit("seed = 17", "");
    assert_eq!(f.run(&["prepare"], "out").status.code(), Some(1));
}

#[test]
fn train_without_features_is_a_data_error() {
    let f = Fixture::new("");
    assert_eq!(f.run(&["train"], "out").status.code(), Some(2));
}

#[test]
fn full_pipeline() {
    let f = Fixture::new("[fluctuation]\nenabled = true\n");
    f.ok(&["prepare"], "out");
    f.ok(&["train"], "out");
    for file in ["manifest.json", "learner_00.json", "learner_00.bin", "learner_01.json", "learner_01.bin"] {
        assert!(f.root.join("out/model").join(file).exists(), "{file}");
    }
    assert!(!f.root.join("out/model/learner_02.json").exists());
    assert!(f.root.join("out/baseline/learner.bin").exists());
    assert!(f.root.join("out/price_model/manifest.json").exists());
    assert_eq!(fs::read_dir(f.root.join("out/varieties")).unwrap().count(), 10);
    let trace = f.read("out/training_trace.csv");
    assert!(trace.starts_with("model,round,error_sum,raw_weight\n"));
    assert_eq!(trace.lines().filter(|l| l.starts_with("model,")).count(), 1 + 2);

    // Evaluate: 100-day plot window exceeds the test split and is clipped.
    let o = f.ok(&["evaluate"], "out");
    assert!(stderr(&o).contains("clipping"), "{}", stderr(&o));
    let metrics = f.read("out/metrics.csv");
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows[0], "combination,kind,split,n,rmse,mse,mae");
    assert_eq!(rows.len(), 7);
    assert!(rows[1].starts_with("all,ensemble,train,"));
    assert!(rows[4].starts_with("all,single_learner,train,"));
    for row in &rows[1..] {
        let v: Vec<f64> = row.split(',').skip(4).map(|x| x.parse().unwrap()).collect();
        assert!(v[0] >= v[2], "RMSE < MAE in {row}");
    }
    let svg = f.read("out/forecast.svg");
    assert_eq!(svg.matches("stroke-width=\"2\"").count(), 3);
    for file in ["forecast.png", "mae_histogram.svg", "mae_histogram.png", "error_shares.csv"] {
        assert!(f.root.join("out").join(file).exists(), "{file}");
    }

    // Fluctuation for a date inside the data.
    let date = day(DAYS - 10).to_string();
    f.ok(&["fluctuation", "--date", &date], "out");
    let dist = f.read("out/distribution.csv");
    let lines: Vec<&str> = dist.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 14);
    assert!(lines[0].ends_with(",o_9,o_10"));
    let rec: Vec<f64> = lines[1].split(',').skip(1).map(|x| x.parse().unwrap()).collect();
    let outs = &rec[3..];
    let mu = outs.iter().sum::<f64>() / 10.0;
    assert!((rec[1] - mu).abs() <= 1e-9 * mu.abs());
    assert!(rec[2] >= 0.0);
    assert!(f.root.join(format!("out/fluctuation_{date}.svg")).exists());
    assert!(f.root.join(format!("out/fluctuation_{date}.png")).exists());

    let o = f.run(&["fluctuation", "--date", "2018-06-01"], "out");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    // Long-term: horizons 1..30, mean inside the band.
    f.ok(&["longterm"], "out");
    let rolling = f.read("out/rolling.csv");
    let rows: Vec<Vec<f64>> = rolling
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 30);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 1) as f64);
        assert!(r[2] <= r[1] && r[1] <= r[3], "{r:?}");
    }
    assert!(f.root.join("out/longterm.png").exists());

    // Compare: 2 combinations x 2 kinds x 3 splits.
    let o = f.ok(&["compare"], "out");
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("Testing MSE"));
    assert_eq!(f.read("out/compare/metrics.csv").lines().count(), 1 + 12);
}

#[test]
fn identical_runs_give_identical_outputs() {
    let f = Fixture::new("[longterm]\nenabled = false\n");
    f.edit("rounds = 2", "rounds = 2\nbaseline = false");
    for out in ["a", "b"] {
        f.ok(&["prepare"], out);
        f.ok(&["train"], out);
        f.ok(&["evaluate"], out);
    }
    for file in [
        "features.csv",
        "model/manifest.json",
        "model/learner_00.bin",
        "model/learner_01.bin",
        "model/val_predictions.csv",
        "metrics.csv",
        "training_loss.csv",
    ] {
        assert_eq!(
            fs::read(f.root.join("a").join(file)).unwrap(),
            fs::read(f.root.join("b").join(file)).unwrap(),
            "{file}"
        );
    }
    // A different seed gives a different model.
    f.ok(&["prepare"], "c");
    f.ok(&["train", "--seed", "18"], "c");
    assert_ne!(
        fs::read(f.root.join("a/model/learner_00.bin")).unwrap(),
        fs::read(f.root.join("c/model/learner_00.bin")).unwrap()
    );
}

#[test]
fn missing_varieties_are_named() {
    let f = Fixture::new("[longterm]\nenabled = false\n");
    f.ok(&["prepare"], "out");
    f.ok(&["train"], "out");
    let o = f.run(&["fluctuation", "--date", &day(DAYS - 5).to_string()], "out");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("v01_trading"), "{}", stderr(&o));
    let o = f.run(&["longterm"], "out");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("price-only"), "{}", stderr(&o));
}

#[test]
fn changed_feature_store_is_detected() {
    let f = Fixture::new("[longterm]\nenabled = false\n");
    f.ok(&["prepare"], "out");
    f.ok(&["train"], "out");
    let path = f.root.join("out/features.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // Raise one training-split close far above the rest.
    let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
    cells[4] = "99999".into();
    cells[2] = "100000".into();
    lines[3] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = f.run(&["evaluate"], "out");
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));
}
