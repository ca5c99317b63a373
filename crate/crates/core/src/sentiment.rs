//! Engagement-weighted daily sentiment from per-tweet scores.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};

use crate::error::{Error, Result};
use crate::market_data::{parse_date, DailySeries, DateSpan, DATE_FORMAT};

pub const TWEETS_HEADER: &[&str] = &[
    "timestamp", "score_a", "score_b", "likes", "comments", "retweets", "quotes",
];
pub const DAILY_HEADER: &[&str] = &["date", "weighted_sentiment", "tweet_volume"];

/// Number of ordinal sentiment classes, from extremely negative (0) to
/// extremely positive (8).
pub const NUM_CLASSES: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct Tweet {
    pub timestamp: DateTime<Utc>,
    pub score_a: f64,
    pub score_b: Option<f64>,
    pub likes: u64,
    pub comments: u64,
    pub retweets: u64,
    pub quotes: u64,
}

impl Tweet {
    pub fn day(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }

    pub fn combined_score(&self) -> Result<f64> {
        combine_scores(self.score_a, self.score_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailySentiment {
    pub date: NaiveDate,
    pub weighted_sentiment: f64,
    pub tweet_volume: u64,
}

fn check_score(s: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!("sentiment score {s} outside [-1, 1]")));
    }
    Ok(s)
}

/// Mean of the two scorers' outputs, or `score_a` alone when the second
/// scorer produced nothing.
pub fn combine_scores(score_a: f64, score_b: Option<f64>) -> Result<f64> {
    let a = check_score(score_a)?;
    match score_b {
        Some(b) => Ok((a + check_score(b)?) / 2.0),
        None => Ok(a),
    }
}

/// Maps a score to one of nine equal-width bins over [-1, 1].
pub fn classify_sentiment(score: f64) -> Result<usize> {
    let s = check_score(score)?;
    let width = 2.0 / NUM_CLASSES as f64;
    let bin = ((s + 1.0) / width).floor() as usize;
    Ok(bin.min(NUM_CLASSES - 1))
}

/// Harmonic mean of the four engagement counts; zero if any count is zero.
pub fn engagement_weight(likes: u64, comments: u64, retweets: u64, quotes: u64) -> f64 {
    let counts = [likes, comments, retweets, quotes];
    if counts.contains(&0) {
        return 0.0;
    }
    let inv: f64 = counts.iter().map(|&c| 1.0 / c as f64).sum();
    counts.len() as f64 / inv
}

/// Aggregates one day's tweets. Weights are min-max scaled within the day;
/// when they carry no information (all zero, or all equal) the plain mean
/// of scores is used. A day without tweets is neutral.
pub fn daily_aggregate(date: NaiveDate, tweets: &[Tweet]) -> Result<DailySentiment> {
    if tweets.is_empty() {
        return Ok(DailySentiment {
            date,
            weighted_sentiment: 0.0,
            tweet_volume: 0,
        });
    }
    let mut scores = Vec::with_capacity(tweets.len());
    let mut raw = Vec::with_capacity(tweets.len());
    for t in tweets {
        if t.day() != date {
            return Err(Error::invalid(format!(
                "tweet at {} does not belong to {date}",
                t.timestamp
            )));
        }
        scores.push(t.combined_score()?);
        raw.push(engagement_weight(t.likes, t.comments, t.retweets, t.quotes));
    }

    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let (num, den) = if range > 0.0 {
        raw.iter().zip(&scores).fold((0.0, 0.0), |(n, d), (&w, &s)| {
            let nw = (w - lo) / range;
            (n + nw * s, d + nw)
        })
    } else {
        (0.0, 0.0)
    };
    let weighted = if den > 0.0 {
        num / den
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };

    Ok(DailySentiment {
        date,
        weighted_sentiment: weighted.clamp(-1.0, 1.0),
        tweet_volume: tweets.len() as u64,
    })
}

/// Aggregates every day of `span`; days without tweets are neutral and
/// tweets outside the span are ignored.
pub fn aggregate_span(tweets: &[Tweet], span: DateSpan) -> Result<Vec<DailySentiment>> {
    let mut by_day: BTreeMap<NaiveDate, Vec<Tweet>> = BTreeMap::new();
    for t in tweets {
        if span.contains(t.day()) {
            by_day.entry(t.day()).or_default().push(t.clone());
        }
    }
    span.days()
        .map(|day| daily_aggregate(day, by_day.get(&day).map_or(&[][..], Vec::as_slice)))
        .collect()
}

pub fn to_series(days: &[DailySentiment]) -> Result<DailySeries> {
    let first = days
        .first()
        .ok_or_else(|| Error::invalid("no daily sentiment rows"))?;
    for pair in days.windows(2) {
        if (pair[1].date - pair[0].date).num_days() != 1 {
            return Err(Error::Gaps {
                days: vec![pair[0].date.succ_opt().expect("date in range")],
            });
        }
    }
    DailySeries::new(
        first.date,
        DAILY_HEADER[1..].iter().map(|s| s.to_string()).collect(),
        days.iter()
            .map(|d| vec![d.weighted_sentiment, d.tweet_volume as f64])
            .collect(),
    )
}

fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .map(|n| n.and_utc())
        .map_err(|_| format!("unparseable timestamp `{s}`"))
}

fn parse_field<T: std::str::FromStr>(name: &str, s: &str) -> std::result::Result<T, String> {
    s.trim()
        .parse()
        .map_err(|_| format!("unparseable value `{s}` in column `{name}`"))
}

pub fn load_tweets(path: impl AsRef<Path>) -> Result<Vec<Tweet>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut rows = reader.records();
    let header = rows.next().transpose()?.unwrap_or_default();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != TWEETS_HEADER {
        return Err(Error::Header {
            path: path.to_path_buf(),
            expected: TWEETS_HEADER.join(","),
            found: found.join(","),
        });
    }
    let mut out = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let row_err = |message: String| Error::Row {
            path: path.to_path_buf(),
            line,
            message,
        };
        if row.len() != TWEETS_HEADER.len() {
            return Err(row_err(format!(
                "expected {} fields, found {}",
                TWEETS_HEADER.len(),
                row.len()
            )));
        }
        let score_b = match row[2].trim() {
            "" => None,
            s => Some(parse_field::<f64>("score_b", s).map_err(row_err)?),
        };
        let tweet = Tweet {
            timestamp: parse_timestamp(&row[0]).map_err(row_err)?,
            score_a: parse_field("score_a", &row[1]).map_err(row_err)?,
            score_b,
            likes: parse_field("likes", &row[3]).map_err(row_err)?,
            comments: parse_field("comments", &row[4]).map_err(row_err)?,
            retweets: parse_field("retweets", &row[5]).map_err(row_err)?,
            quotes: parse_field("quotes", &row[6]).map_err(row_err)?,
        };
        tweet
            .combined_score()
            .map_err(|e| row_err(e.to_string()))?;
        out.push(tweet);
    }
    out.sort_by_key(|t| t.timestamp);
    Ok(out)
}

pub fn write_daily(path: impl AsRef<Path>, days: &[DailySentiment]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(DAILY_HEADER)?;
        for d in days {
            w.write_record([
                d.date.format(DATE_FORMAT).to_string(),
                d.weighted_sentiment.to_string(),
                d.tweet_volume.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_daily(path: impl AsRef<Path>) -> Result<Vec<DailySentiment>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut rows = reader.records();
    let header = rows.next().transpose()?.unwrap_or_default();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != DAILY_HEADER {
        return Err(Error::Header {
            path: path.to_path_buf(),
            expected: DAILY_HEADER.join(","),
            found: found.join(","),
        });
    }
    let mut out = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let row_err = |message: String| Error::Row {
            path: path.to_path_buf(),
            line,
            message,
        };
        let date = parse_date(&row[0]).map_err(row_err)?;
        let weighted_sentiment: f64 = parse_field("weighted_sentiment", &row[1]).map_err(row_err)?;
        check_score(weighted_sentiment).map_err(|e| row_err(e.to_string()))?;
        out.push(DailySentiment {
            date,
            weighted_sentiment,
            tweet_volume: parse_field("tweet_volume", &row[2]).map_err(row_err)?,
        });
    }
    out.sort_by_key(|d| d.date);
    if let Some(pair) = out.windows(2).find(|p| p[0].date == p[1].date) {
        return Err(Error::DuplicateDate {
            path: path.to_path_buf(),
            line: 0,
            date: pair[1].date,
        });
    }
    Ok(out)
}
