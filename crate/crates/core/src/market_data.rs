//! Daily trading, blockchain and search-volume records: CSV ingestion,
//! multi-source gap filling, and an offline cache for source clients.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT)
        .map_err(|e| format!("unparseable date `{s}`: {e}"))
}

fn parse_f64(name: &str, s: &str) -> std::result::Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("unparseable number `{s}` in column `{name}`")),
    }
}

fn parse_count(name: &str, s: &str) -> std::result::Result<u64, String> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| format!("unparseable count `{s}` in column `{name}`"))
}

fn non_negative(fields: &[(&str, f64)]) -> std::result::Result<(), String> {
    for (name, v) in fields {
        if *v < 0.0 {
            return Err(format!("{name} must be >= 0, got {v}"));
        }
    }
    Ok(())
}

/// A record keyed by calendar day with a fixed CSV schema.
///
/// `HEADER` starts with `date`; the remaining names are the record's
/// channels, in the order returned by [`DailyRecord::channel_values`].
pub trait DailyRecord: Sized + Clone {
    const KIND: &'static str;
    const HEADER: &'static [&'static str];

    fn date(&self) -> NaiveDate;

    /// Builds a record from the non-date fields of one CSV row.
    fn from_fields(date: NaiveDate, fields: &[&str]) -> std::result::Result<Self, String>;

    fn to_fields(&self) -> Vec<String>;

    fn validate(&self) -> std::result::Result<(), String>;

    fn channel_values(&self) -> Vec<f64>;

    fn channels() -> &'static [&'static str] {
        &Self::HEADER[1..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradingRecord {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume_coin: f64,
    pub volume_usd: f64,
    /// Carried as reported by the source; not derived from other fields.
    pub weighted_price: f64,
    pub avg_fees: f64,
    pub transactions: u64,
}

impl DailyRecord for TradingRecord {
    const KIND: &'static str = "trading";
    const HEADER: &'static [&'static str] = &[
        "date",
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

    fn date(&self) -> NaiveDate {
        self.date
    }

    fn from_fields(date: NaiveDate, f: &[&str]) -> std::result::Result<Self, String> {
        let h = Self::HEADER;
        Ok(TradingRecord {
            date,
            open: parse_f64(h[1], f[0])?,
            high: parse_f64(h[2], f[1])?,
            low: parse_f64(h[3], f[2])?,
            close: parse_f64(h[4], f[3])?,
            volume_coin: parse_f64(h[5], f[4])?,
            volume_usd: parse_f64(h[6], f[5])?,
            weighted_price: parse_f64(h[7], f[6])?,
            avg_fees: parse_f64(h[8], f[7])?,
            transactions: parse_count(h[9], f[8])?,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.open.to_string(),
            self.high.to_string(),
            self.low.to_string(),
            self.close.to_string(),
            self.volume_coin.to_string(),
            self.volume_usd.to_string(),
            self.weighted_price.to_string(),
            self.avg_fees.to_string(),
            self.transactions.to_string(),
        ]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        non_negative(&[
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
            ("volume_coin", self.volume_coin),
            ("volume_usd", self.volume_usd),
            ("weighted_price", self.weighted_price),
            ("avg_fees", self.avg_fees),
        ])?;
        if self.high < self.low {
            return Err(format!("high ({}) < low ({})", self.high, self.low));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!(
                "high ({}) < max(open, close) ({})",
                self.high,
                self.open.max(self.close)
            ));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!(
                "low ({}) > min(open, close) ({})",
                self.low,
                self.open.min(self.close)
            ));
        }
        Ok(())
    }

    fn channel_values(&self) -> Vec<f64> {
        vec![
            self.open,
            self.high,
            self.low,
            self.close,
            self.volume_coin,
            self.volume_usd,
            self.weighted_price,
            self.avg_fees,
            self.transactions as f64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockchainRecord {
    pub date: NaiveDate,
    pub hash_rate: f64,
    pub block_size: f64,
    pub block_time: f64,
    pub network_difficulty: f64,
    pub active_addresses: u64,
    pub mining_profitability: f64,
}

impl DailyRecord for BlockchainRecord {
    const KIND: &'static str = "blockchain";
    const HEADER: &'static [&'static str] = &[
        "date",
        "hash_rate",
        "block_size",
        "block_time",
        "network_difficulty",
        "active_addresses",
        "mining_profitability",
    ];

    fn date(&self) -> NaiveDate {
        self.date
    }

    fn from_fields(date: NaiveDate, f: &[&str]) -> std::result::Result<Self, String> {
        let h = Self::HEADER;
        Ok(BlockchainRecord {
            date,
            hash_rate: parse_f64(h[1], f[0])?,
            block_size: parse_f64(h[2], f[1])?,
            block_time: parse_f64(h[3], f[2])?,
            network_difficulty: parse_f64(h[4], f[3])?,
            active_addresses: parse_count(h[5], f[4])?,
            mining_profitability: parse_f64(h[6], f[5])?,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.hash_rate.to_string(),
            self.block_size.to_string(),
            self.block_time.to_string(),
            self.network_difficulty.to_string(),
            self.active_addresses.to_string(),
            self.mining_profitability.to_string(),
        ]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        non_negative(&[
            ("hash_rate", self.hash_rate),
            ("block_size", self.block_size),
            ("block_time", self.block_time),
            ("network_difficulty", self.network_difficulty),
            ("mining_profitability", self.mining_profitability),
        ])
    }

    fn channel_values(&self) -> Vec<f64> {
        vec![
            self.hash_rate,
            self.block_size,
            self.block_time,
            self.network_difficulty,
            self.active_addresses as f64,
            self.mining_profitability,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRecord {
    pub date: NaiveDate,
    pub search_volume: f64,
}

impl DailyRecord for SearchRecord {
    const KIND: &'static str = "search";
    const HEADER: &'static [&'static str] = &["date", "search_volume"];

    fn date(&self) -> NaiveDate {
        self.date
    }

    fn from_fields(date: NaiveDate, f: &[&str]) -> std::result::Result<Self, String> {
        Ok(SearchRecord {
            date,
            search_volume: parse_f64(Self::HEADER[1], f[0])?,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![self.search_volume.to_string()]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        non_negative(&[("search_volume", self.search_volume)])
    }

    fn channel_values(&self) -> Vec<f64> {
        vec![self.search_volume]
    }
}

/// Reads records of kind `R` from a CSV file whose header must match
/// `R::HEADER` exactly. Records come back sorted by date.
pub fn load_csv<R: DailyRecord>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path)
}

/// Like [`load_csv`] over any reader; `label` is used in error messages.
pub fn read_csv<R: DailyRecord, S: Read>(source: S, label: impl AsRef<Path>) -> Result<Vec<R>> {
    let label = label.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut rows = reader.records();

    let header = match rows.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Header {
                path: label.to_path_buf(),
                expected: R::HEADER.join(","),
                found: String::new(),
            })
        }
    };
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != R::HEADER {
        return Err(Error::Header {
            path: label.to_path_buf(),
            expected: R::HEADER.join(","),
            found: found.join(","),
        });
    }

    let mut keyed: Vec<(R, u64)> = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let row_err = |message: String| Error::Row {
            path: label.to_path_buf(),
            line,
            message,
        };
        if row.len() != R::HEADER.len() {
            return Err(row_err(format!(
                "expected {} fields, found {}",
                R::HEADER.len(),
                row.len()
            )));
        }
        let date = parse_date(&row[0]).map_err(row_err)?;
        let fields: Vec<&str> = row.iter().skip(1).collect();
        let rec = R::from_fields(date, &fields).map_err(row_err)?;
        rec.validate().map_err(row_err)?;
        keyed.push((rec, line));
    }

    keyed.sort_by_key(|(r, line)| (r.date(), *line));
    for pair in keyed.windows(2) {
        if pair[0].0.date() == pair[1].0.date() {
            return Err(Error::DuplicateDate {
                path: label.to_path_buf(),
                line: pair[1].1,
                date: pair[1].0.date(),
            });
        }
    }
    Ok(keyed.into_iter().map(|(r, _)| r).collect())
}

pub fn write_csv<R: DailyRecord>(path: impl AsRef<Path>, records: &[R]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_records<R: DailyRecord, W: Write>(sink: W, records: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(R::HEADER)?;
    for r in records {
        let mut row = vec![r.date().format(DATE_FORMAT).to_string()];
        row.extend(r.to_fields());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateSpan {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateSpan {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::invalid(format!(
                "empty date span: start {start} is after end {end}"
            )));
        }
        Ok(DateSpan { start, end })
    }

    pub fn num_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let start = self.start;
        (0..self.num_days() as u64).map(move |i| start + Days::new(i))
    }
}

/// Gap-fills `primary` from `fillers`, in the given precedence order, over
/// `span` (or the union of all sources' dates when `span` is `None`).
///
/// Days that no source covers are reported together in [`Error::Gaps`].
pub fn merge_records<R: DailyRecord>(
    primary: &[R],
    fillers: &[&[R]],
    span: Option<DateSpan>,
) -> Result<Vec<R>> {
    let mut by_day: BTreeMap<NaiveDate, &R> = BTreeMap::new();
    for source in std::iter::once(primary).chain(fillers.iter().copied()) {
        for rec in source {
            by_day.entry(rec.date()).or_insert(rec);
        }
    }
    let span = match span {
        Some(s) => s,
        None => {
            let (first, last) = match (by_day.keys().next(), by_day.keys().next_back()) {
                (Some(a), Some(b)) => (*a, *b),
                _ => {
                    return Err(Error::invalid(format!(
                        "merge of {} sources: all sources are empty",
                        R::KIND
                    )))
                }
            };
            DateSpan::new(first, last)?
        }
    };

    let mut out = Vec::with_capacity(span.num_days());
    let mut gaps = Vec::new();
    for day in span.days() {
        match by_day.get(&day) {
            Some(r) => out.push((*r).clone()),
            None => gaps.push(day),
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Gaps { days: gaps });
    }
    Ok(out)
}

/// [`merge_records`] followed by conversion to a [`DailySeries`].
pub fn merge_sources<R: DailyRecord>(
    primary: &[R],
    fillers: &[&[R]],
    span: Option<DateSpan>,
) -> Result<DailySeries> {
    DailySeries::from_records(&merge_records(primary, fillers, span)?)
}

/// Gap-free table of daily channel values starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    start: NaiveDate,
    channels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl DailySeries {
    pub fn new(start: NaiveDate, channels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("daily series needs at least one row"));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != channels.len()) {
            return Err(Error::Shape {
                expected: format!("{} values per row", channels.len()),
                got: format!("{} values in row {i}", r.len()),
            });
        }
        for (i, r) in rows.iter().enumerate() {
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput { row: i, col: j });
            }
        }
        Ok(DailySeries {
            start,
            channels,
            rows,
        })
    }

    /// Requires the records to be sorted with strictly consecutive dates.
    pub fn from_records<R: DailyRecord>(records: &[R]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::invalid("daily series needs at least one record"))?;
        for pair in records.windows(2) {
            if (pair[1].date() - pair[0].date()).num_days() != 1 {
                return Err(Error::Gaps {
                    days: vec![pair[0].date() + Days::new(1)],
                });
            }
        }
        Self::new(
            first.date(),
            R::channels().iter().map(|s| s.to_string()).collect(),
            records.iter().map(|r| r.channel_values()).collect(),
        )
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.date(self.len() - 1)
    }

    pub fn span(&self) -> DateSpan {
        DateSpan {
            start: self.start,
            end: self.end(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn date(&self, index: usize) -> NaiveDate {
        self.start + Days::new(index as u64)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        if date < self.start {
            return None;
        }
        let i = (date - self.start).num_days() as usize;
        (i < self.len()).then_some(i)
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.channel_index(name).ok_or_else(|| Error::MissingData {
            what: format!("channel `{name}`"),
            message: format!("series has channels [{}]", self.channels.join(", ")),
        })?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Restricts the series to `span`, which must lie inside it.
    pub fn slice(&self, span: DateSpan) -> Result<DailySeries> {
        let (a, b) = match (self.index_of(span.start), self.index_of(span.end)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::MissingData {
                    what: format!("span {}..{}", span.start, span.end),
                    message: format!("series covers {}..{}", self.start, self.end()),
                })
            }
        };
        Ok(DailySeries {
            start: span.start,
            channels: self.channels.clone(),
            rows: self.rows[a..=b].to_vec(),
        })
    }

    /// Column-wise concatenation of series covering the same days.
    pub fn hstack(parts: &[&DailySeries]) -> Result<DailySeries> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("hstack of zero series"))?;
        let mut channels = Vec::new();
        let mut rows = vec![Vec::new(); first.len()];
        for p in parts {
            if p.start != first.start || p.len() != first.len() {
                return Err(Error::Shape {
                    expected: format!("span {}..{}", first.start, first.end()),
                    got: format!("span {}..{}", p.start, p.end()),
                });
            }
            channels.extend(p.channels.iter().cloned());
            for (dst, src) in rows.iter_mut().zip(&p.rows) {
                dst.extend_from_slice(src);
            }
        }
        DailySeries::new(first.start, channels, rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec!["date".to_string()];
            header.extend(self.channels.iter().cloned());
            w.write_record(&header)?;
            for (i, r) in self.rows.iter().enumerate() {
                let mut row = vec![self.date(i).format(DATE_FORMAT).to_string()];
                row.extend(r.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Reads a `date,<channels...>` table with strictly consecutive dates.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<DailySeries> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::Row {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("{other:?}"),
                },
            })?;
        let mut records = reader.records();
        let header = match records.next() {
            Some(h) => h?,
            None => {
                return Err(Error::Header {
                    path: path.to_path_buf(),
                    expected: "date,...".into(),
                    found: String::new(),
                })
            }
        };
        if header.get(0).map(str::trim) != Some("date") || header.len() < 2 {
            return Err(Error::Header {
                path: path.to_path_buf(),
                expected: "date,<channels>".into(),
                found: header.iter().collect::<Vec<_>>().join(","),
            });
        }
        let channels: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();

        let mut start = None;
        let mut rows = Vec::new();
        for rec in records {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let row_err = |message: String| Error::Row {
                path: path.to_path_buf(),
                line,
                message,
            };
            if rec.len() != channels.len() + 1 {
                return Err(row_err(format!(
                    "expected {} fields, found {}",
                    channels.len() + 1,
                    rec.len()
                )));
            }
            let date = parse_date(&rec[0]).map_err(row_err)?;
            let first = *start.get_or_insert(date);
            if (date - first).num_days() != rows.len() as i64 {
                return Err(row_err(format!(
                    "date {date} breaks the consecutive-day sequence starting {first}"
                )));
            }
            let values = channels
                .iter()
                .zip(rec.iter().skip(1))
                .map(|(name, s)| parse_f64(name, s))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(row_err)?;
            rows.push(values);
        }
        let start = start.ok_or_else(|| Error::Row {
            path: path.to_path_buf(),
            line: 1,
            message: "no data rows".into(),
        })?;
        DailySeries::new(start, channels, rows)
    }
}

/// Remote data source that returns records of one schema for a date range.
pub trait SourceClient {
    type Record: DailyRecord;

    fn name(&self) -> &str;

    fn get_range(
        &self,
        start: NaiveDate,
        end: NaiveDate,
    ) -> std::result::Result<Vec<Self::Record>, String>;
}

/// Path of the cache file for `client` over `start..=end`.
pub fn cache_path<C: SourceClient>(client: &C, start: NaiveDate, end: NaiveDate, cache_dir: &Path) -> PathBuf {
    cache_dir.join(format!(
        "{}_{}_{}_{}.csv",
        client.name(),
        C::Record::KIND,
        start.format(DATE_FORMAT),
        end.format(DATE_FORMAT)
    ))
}

/// Fetches `start..=end` from `client` into a CSV cache file, reusing an
/// existing cache file for the same source and span without calling the
/// client. The client must return exactly one record per day.
///
/// Writers of the same cache path must be serialized by the caller.
pub fn fetch_cached<C: SourceClient>(
    client: &C,
    start: NaiveDate,
    end: NaiveDate,
    cache_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let span = DateSpan::new(start, end)?;
    let cache_dir = cache_dir.as_ref();
    let path = cache_path(client, start, end, cache_dir);
    if path.is_file() {
        return Ok(path);
    }

    let mut records = client.get_range(start, end).map_err(|message| Error::Source {
        source_name: client.name().to_string(),
        message,
    })?;
    records.sort_by_key(|r| r.date());
    records.dedup_by_key(|r| r.date());
    records.retain(|r| span.contains(r.date()));
    if records.len() != span.num_days() {
        return Err(Error::PartialSpan {
            source_name: client.name().to_string(),
            expected: span.num_days(),
            got: records.len(),
        });
    }
    for r in &records {
        r.validate().map_err(|message| Error::Source {
            source_name: client.name().to_string(),
            message: format!("{}: {message}", r.date()),
        })?;
    }

    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let tmp = path.with_extension("csv.partial");
    write_csv(&tmp, &records)?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, day).unwrap()
    }

    fn search(day: u32, v: f64) -> SearchRecord {
        SearchRecord {
            date: d(day),
            search_volume: v,
        }
    }

    const TRADING: &str = "date,open,high,low,close,volume_coin,volume_usd,weighted_price,avg_fees,transactions\n";

    #[test]
    fn loads_trading_rows_in_date_order() {
        let csv = format!(
            "{TRADING}2020-01-03,3,4,2,3.5,10,35,3.4,0.1,7\n\
             2020-01-01,1,2,0.5,1.5,10,15,1.4,0.1,5\n\
             2020-01-02,1.5,3,1,2.5,10,25,2.4,0.1,6\n"
        );
        let recs: Vec<TradingRecord> = read_csv(csv.as_bytes(), "t.csv").unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs.iter().map(|r| r.date).collect::<Vec<_>>(), vec![d(1), d(2), d(3)]);
        assert_eq!(recs[0].transactions, 5);
    }

    #[test]
    fn rejects_high_below_low() {
        let csv = format!("{TRADING}2020-01-01,1,0.5,2,1,10,15,1.4,0.1,5\n");
        let err = read_csv::<TradingRecord, _>(csv.as_bytes(), "t.csv").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("high (0.5) < low (2)"), "{msg}");
        assert!(msg.contains(":2:"), "line number missing: {msg}");
    }

    #[test]
    fn rejects_duplicate_dates() {
        let csv = format!(
            "{TRADING}2020-01-01,1,2,0.5,1.5,10,15,1.4,0.1,5\n\
             2020-01-01,1,2,0.5,1.5,10,15,1.4,0.1,5\n"
        );
        let err = read_csv::<TradingRecord, _>(csv.as_bytes(), "t.csv").unwrap_err();
        assert!(matches!(err, Error::DuplicateDate { line: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_bad_numbers_and_headers() {
        let csv = format!("{TRADING}2020-01-01,1,2,0.5,abc,10,15,1.4,0.1,5\n");
        let err = read_csv::<TradingRecord, _>(csv.as_bytes(), "t.csv").unwrap_err();
        assert!(err.to_string().contains("unparseable number `abc`"), "{err}");

        let err = read_csv::<SearchRecord, _>("date,volume\n".as_bytes(), "s.csv").unwrap_err();
        assert!(matches!(err, Error::Header { .. }));

        let err = read_csv::<SearchRecord, _>("date,search_volume\n2020-01-01,NaN\n".as_bytes(), "s.csv")
            .unwrap_err();
        assert!(matches!(err, Error::Row { line: 2, .. }));
    }

    #[test]
    fn merge_fills_from_filler() {
        let primary = vec![search(1, 10.0), search(3, 30.0)];
        let filler = vec![search(1, 11.0), search(2, 21.0), search(3, 31.0)];
        let merged = merge_records(&primary, &[&filler], None).unwrap();
        let vals: Vec<f64> = merged.iter().map(|r| r.search_volume).collect();
        assert_eq!(vals, vec![10.0, 21.0, 30.0]);
    }

    #[test]
    fn merge_identity_when_primary_complete() {
        let primary: Vec<_> = (1..=5).map(|i| search(i, i as f64)).collect();
        let filler: Vec<_> = (1..=5).map(|i| search(i, -1.0)).collect();
        assert_eq!(merge_records(&primary, &[&filler], None).unwrap(), primary);
    }

    #[test]
    fn merge_reports_gaps() {
        let primary: Vec<_> = [1, 2, 3, 4, 6, 7].iter().map(|&i| search(i, 1.0)).collect();
        let span = DateSpan::new(d(1), d(7)).unwrap();
        match merge_records(&primary, &[], Some(span)).unwrap_err() {
            Error::Gaps { days } => assert_eq!(days, vec![d(5)]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn merged_series_is_consecutive() {
        let primary = vec![search(2, 1.0), search(5, 1.0)];
        let filler: Vec<_> = (1..=6).map(|i| search(i, 2.0)).collect();
        let s = merge_sources(&primary, &[&filler], None).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.start(), d(1));
        assert_eq!(s.column("search_volume").unwrap(), vec![2.0, 1.0, 2.0, 2.0, 1.0, 2.0]);
    }

    struct StubClient {
        calls: Cell<usize>,
        skip: usize,
    }

    impl SourceClient for StubClient {
        type Record = SearchRecord;
        fn name(&self) -> &str {
            "stub"
        }
        fn get_range(&self, start: NaiveDate, end: NaiveDate) -> std::result::Result<Vec<SearchRecord>, String> {
            self.calls.set(self.calls.get() + 1);
            let span = DateSpan::new(start, end).map_err(|e| e.to_string())?;
            Ok(span
                .days()
                .skip(self.skip)
                .map(|date| SearchRecord { date, search_volume: 1.0 })
                .collect())
        }
    }

    #[test]
    fn fetch_cached_reuses_cache() {
        let dir = tempfile::tempdir().unwrap();
        let client = StubClient { calls: Cell::new(0), skip: 0 };
        let p = fetch_cached(&client, d(1), d(7), dir.path()).unwrap();
        assert_eq!(load_csv::<SearchRecord>(&p).unwrap().len(), 7);
        assert_eq!(client.calls.get(), 1);
        let p2 = fetch_cached(&client, d(1), d(7), dir.path()).unwrap();
        assert_eq!(p, p2);
        assert_eq!(client.calls.get(), 1);
    }

    #[test]
    fn fetch_cached_rejects_partial_and_empty_spans() {
        let dir = tempfile::tempdir().unwrap();
        let client = StubClient { calls: Cell::new(0), skip: 2 };
        let err = fetch_cached(&client, d(1), d(7), dir.path()).unwrap_err();
        assert!(matches!(err, Error::PartialSpan { expected: 7, got: 5, .. }));
        let err = fetch_cached(&client, d(7), d(1), dir.path()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
