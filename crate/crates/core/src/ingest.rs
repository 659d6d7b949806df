//! GEFCom2014-style CSV ingestion, alignment and chronological splitting.
//!
//! Weather files carry `ZONEID,TIMESTAMP` followed by twelve ECMWF variable
//! columns (`VAR78` ... `VAR228`); power files carry `ZONEID,TIMESTAMP,POWER`.
//! Timestamps are hourly, written either as `YYYYMMDD HH:MM` or ISO-8601.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::matrix::Matrix;

/// The twelve meteorological variables of the GEFCom2014 solar track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variable {
    /// Total column liquid water.
    Tclw,
    /// Total column ice water.
    Tciw,
    /// Surface pressure.
    Sp,
    /// Relative humidity at 1000 mbar.
    R,
    /// Total cloud cover.
    Tcc,
    /// 10-metre U wind.
    U10,
    /// 10-metre V wind.
    V10,
    /// 2-metre temperature.
    T2m,
    /// Surface solar radiation down (accumulated).
    Ssrd,
    /// Surface thermal radiation down (accumulated).
    Strd,
    /// Top net solar radiation (accumulated).
    Tsr,
    /// Total precipitation (accumulated).
    Tp,
}

impl Variable {
    pub const ALL: [Variable; 12] = [
        Variable::Tclw,
        Variable::Tciw,
        Variable::Sp,
        Variable::R,
        Variable::Tcc,
        Variable::U10,
        Variable::V10,
        Variable::T2m,
        Variable::Ssrd,
        Variable::Strd,
        Variable::Tsr,
        Variable::Tp,
    ];

    /// Fields that ECMWF forecasts accumulate from the start of each run.
    pub const ACCUMULATED: [Variable; 4] =
        [Variable::Ssrd, Variable::Strd, Variable::Tsr, Variable::Tp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Variable::Tclw => "TCLW",
            Variable::Tciw => "TCIW",
            Variable::Sp => "SP",
            Variable::R => "R",
            Variable::Tcc => "TCC",
            Variable::U10 => "U10",
            Variable::V10 => "V10",
            Variable::T2m => "T2M",
            Variable::Ssrd => "SSRD",
            Variable::Strd => "STRD",
            Variable::Tsr => "TSR",
            Variable::Tp => "TP",
        }
    }

    /// ECMWF parameter code used as the column header in GEFCom files.
    pub fn default_column(self) -> &'static str {
        match self {
            Variable::Tclw => "VAR78",
            Variable::Tciw => "VAR79",
            Variable::Sp => "VAR134",
            Variable::R => "VAR157",
            Variable::Tcc => "VAR164",
            Variable::U10 => "VAR165",
            Variable::V10 => "VAR166",
            Variable::T2m => "VAR167",
            Variable::Ssrd => "VAR169",
            Variable::Strd => "VAR175",
            Variable::Tsr => "VAR178",
            Variable::Tp => "VAR228",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variable::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variable `{s}`"))
    }
}

/// Variable to CSV column header mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap(BTreeMap<Variable, String>);

impl Default for ColumnMap {
    fn default() -> Self {
        Self(
            Variable::ALL
                .into_iter()
                .map(|v| (v, v.default_column().to_string()))
                .collect(),
        )
    }
}

impl ColumnMap {
    pub fn column(&self, v: Variable) -> &str {
        self.0.get(&v).map_or(v.default_column(), String::as_str)
    }

    pub fn set(&mut self, v: Variable, column: impl Into<String>) {
        self.0.insert(v, column.into());
    }

    pub fn entries(&self) -> impl Iterator<Item = (Variable, &str)> + '_ {
        Variable::ALL.into_iter().map(move |v| (v, self.column(v)))
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("gap in hourly series: {before} is followed by {after}")]
    GapInSeries {
        before: NaiveDateTime,
        after: NaiveDateTime,
    },
    #[error("zone {0} not present in file")]
    UnknownZone(u32),
    #[error("power {value} at line {line} outside [0, 1]")]
    OutOfRangePower { line: u64, value: f64 },
    #[error("weather and power series share no timestamps")]
    EmptyIntersection,
    #[error("cannot align: {0}")]
    Misaligned(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("dataset does not cover {0}")]
    RangeNotCovered(String),
}

/// One hourly row of the twelve meteorological variables.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRecord {
    pub zone_id: u32,
    pub timestamp: NaiveDateTime,
    pub values: [f64; 12],
}

impl WeatherRecord {
    pub fn get(&self, v: Variable) -> f64 {
        self.values[v.index()]
    }
}

/// One hourly capacity-normalised power observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerRecord {
    pub zone_id: u32,
    pub timestamp: NaiveDateTime,
    pub power: f64,
}

/// Parses `YYYYMMDD HH:MM`, `YYYY-MM-DDTHH:MM` or `YYYY-MM-DD HH:MM[:SS]`.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 6] = [
        "%Y%m%d %H:%M",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y%m%d %H:%M:%S",
    ];
    let s = s.trim();
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M").to_string()
}

fn open(path: &Path) -> Result<std::fs::File, IngestError> {
    std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    IngestError::MalformedRow {
        line,
        reason: e.to_string(),
    }
}

fn field(rec: &csv::StringRecord, idx: usize) -> Result<&str, IngestError> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| IngestError::MalformedRow {
            line: line_of(rec),
            reason: format!("missing field {idx}"),
        })
}

fn parse_f64(rec: &csv::StringRecord, idx: usize, what: &str) -> Result<f64, IngestError> {
    let raw = field(rec, idx)?;
    let v: f64 = raw.parse().map_err(|_| IngestError::MalformedRow {
        line: line_of(rec),
        reason: format!("{what}: `{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(IngestError::MalformedRow {
            line: line_of(rec),
            reason: format!("{what}: non-finite value"),
        });
    }
    Ok(v)
}

fn parse_zone(rec: &csv::StringRecord, idx: usize) -> Result<u32, IngestError> {
    let raw = field(rec, idx)?;
    raw.parse().map_err(|_| IngestError::MalformedRow {
        line: line_of(rec),
        reason: format!("zone `{raw}` is not an integer"),
    })
}

fn parse_hourly(rec: &csv::StringRecord, idx: usize) -> Result<NaiveDateTime, IngestError> {
    let raw = field(rec, idx)?;
    let t = parse_timestamp(raw).ok_or_else(|| IngestError::MalformedRow {
        line: line_of(rec),
        reason: format!("unparseable timestamp `{raw}`"),
    })?;
    if t.minute() != 0 || t.second() != 0 || t.nanosecond() != 0 {
        return Err(IngestError::MalformedRow {
            line: line_of(rec),
            reason: format!("timestamp `{raw}` is not on an hour boundary"),
        });
    }
    Ok(t)
}

/// Sorts `(timestamp, line, item)` rows, rejecting duplicates and hourly gaps.
fn sort_and_check<T>(mut rows: Vec<(NaiveDateTime, u64, T)>) -> Result<Vec<T>, IngestError> {
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        let (a, b) = (w[0].0, w[1].0);
        if a == b {
            return Err(IngestError::MalformedRow {
                line: w[0].1.max(w[1].1),
                reason: format!("duplicate timestamp {}", format_timestamp(&a)),
            });
        }
        if b - a != Duration::hours(1) {
            return Err(IngestError::GapInSeries {
                before: a,
                after: b,
            });
        }
    }
    Ok(rows.into_iter().map(|r| r.2).collect())
}

/// Reads weather rows for one zone, sorted by timestamp.
pub fn read_weather<R: Read>(
    reader: R,
    zone: u32,
    columns: &ColumnMap,
) -> Result<Vec<WeatherRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let zone_col = column_index(&headers, "ZONEID")?;
    let ts_col = column_index(&headers, "TIMESTAMP")?;
    let mut var_cols = [0usize; 12];
    for (v, name) in columns.entries() {
        var_cols[v.index()] = column_index(&headers, name)?;
    }

    let mut rows = Vec::new();
    let mut any_rows = false;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        any_rows = true;
        if parse_zone(&rec, zone_col)? != zone {
            continue;
        }
        let timestamp = parse_hourly(&rec, ts_col)?;
        let mut values = [0.0; 12];
        for v in Variable::ALL {
            values[v.index()] = parse_f64(&rec, var_cols[v.index()], v.name())?;
        }
        rows.push((
            timestamp,
            line_of(&rec),
            WeatherRecord {
                zone_id: zone,
                timestamp,
                values,
            },
        ));
    }
    if any_rows && rows.is_empty() {
        return Err(IngestError::UnknownZone(zone));
    }
    sort_and_check(rows)
}

pub fn load_weather(
    path: impl AsRef<Path>,
    zone: u32,
    columns: &ColumnMap,
) -> Result<Vec<WeatherRecord>, IngestError> {
    read_weather(open(path.as_ref())?, zone, columns)
}

/// Reads power rows for one zone. Values outside `[0, 1]` are rejected, not clamped.
pub fn read_power<R: Read>(reader: R, zone: u32) -> Result<Vec<PowerRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let zone_col = column_index(&headers, "ZONEID")?;
    let ts_col = column_index(&headers, "TIMESTAMP")?;
    let power_col = column_index(&headers, "POWER")?;

    let mut rows = Vec::new();
    let mut any_rows = false;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        any_rows = true;
        if parse_zone(&rec, zone_col)? != zone {
            continue;
        }
        let timestamp = parse_hourly(&rec, ts_col)?;
        let power = parse_f64(&rec, power_col, "POWER")?;
        if !(0.0..=1.0).contains(&power) {
            return Err(IngestError::OutOfRangePower {
                line: line_of(&rec),
                value: power,
            });
        }
        rows.push((
            timestamp,
            line_of(&rec),
            PowerRecord {
                zone_id: zone,
                timestamp,
                power,
            },
        ));
    }
    if any_rows && rows.is_empty() {
        return Err(IngestError::UnknownZone(zone));
    }
    sort_and_check(rows)
}

pub fn load_power(path: impl AsRef<Path>, zone: u32) -> Result<Vec<PowerRecord>, IngestError> {
    read_power(open(path.as_ref())?, zone)
}

/// Writes weather records in the GEFCom column layout, full float precision.
pub fn write_weather<W: Write>(
    writer: W,
    records: &[WeatherRecord],
    columns: &ColumnMap,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["ZONEID".to_string(), "TIMESTAMP".to_string()];
    header.extend(columns.entries().map(|(_, c)| c.to_string()));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.zone_id.to_string(),
            r.timestamp.format("%Y%m%d %H:%M").to_string(),
        ];
        row.extend(r.values.iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_power<W: Write>(writer: W, records: &[PowerRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ZONEID", "TIMESTAMP", "POWER"])?;
    for r in records {
        w.write_record([
            r.zone_id.to_string(),
            r.timestamp.format("%Y%m%d %H:%M").to_string(),
            format!("{:?}", r.power),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Converts run-accumulated fields to hourly increments.
///
/// Rows whose hour equals `run_start_hour` open a new forecast run and keep
/// their value; every other row becomes the difference from the previous
/// hour's cumulative value. Input must be sorted and gap-free.
pub fn deaccumulate(records: &[WeatherRecord], run_start_hour: u32) -> Vec<WeatherRecord> {
    let mut out = records.to_vec();
    for i in 1..records.len() {
        if records[i].timestamp.hour() == run_start_hour {
            continue;
        }
        for v in Variable::ACCUMULATED {
            let k = v.index();
            out[i].values[k] = records[i].values[k] - records[i - 1].values[k];
        }
    }
    out
}

/// Inner join of weather and power on timestamp, in chronological order.
///
/// The result carries all twelve variables as feature columns.
pub fn align(weather: &[WeatherRecord], power: &[PowerRecord]) -> Result<Dataset, IngestError> {
    if weather.is_empty() || power.is_empty() {
        return Err(IngestError::EmptyIntersection);
    }
    let zones: BTreeSet<u32> = weather
        .iter()
        .map(|w| w.zone_id)
        .chain(power.iter().map(|p| p.zone_id))
        .collect();
    if zones.len() > 1 {
        return Err(IngestError::Misaligned(format!(
            "records span several zones: {zones:?}"
        )));
    }
    let power_by_time: BTreeMap<NaiveDateTime, f64> =
        power.iter().map(|p| (p.timestamp, p.power)).collect();
    let mut joined: Vec<&WeatherRecord> = weather
        .iter()
        .filter(|w| power_by_time.contains_key(&w.timestamp))
        .collect();
    if joined.is_empty() {
        return Err(IngestError::EmptyIntersection);
    }
    joined.sort_by_key(|w| w.timestamp);
    joined.dedup_by_key(|w| w.timestamp);

    let mut data = Vec::with_capacity(joined.len() * 12);
    let mut target = Vec::with_capacity(joined.len());
    let mut timestamps = Vec::with_capacity(joined.len());
    for w in joined {
        data.extend_from_slice(&w.values);
        target.push(power_by_time[&w.timestamp]);
        timestamps.push(w.timestamp);
    }
    let names = Variable::ALL.iter().map(|v| v.name().to_string()).collect();
    let n = target.len();
    Dataset::new(Matrix::from_vec(n, 12, data), target, timestamps, names)
        .map_err(|e| IngestError::Misaligned(e.to_string()))
}

/// Half-open `[start, end)` time range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl TimeRange {
    pub fn new(start: NaiveDateTime, end: NaiveDateTime) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: &NaiveDateTime) -> bool {
        self.start <= *t && *t < self.end
    }

    pub fn hours(&self) -> i64 {
        (self.end - self.start).num_hours()
    }
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {})",
            format_timestamp(&self.start),
            format_timestamp(&self.end)
        )
    }
}

/// Chronological train / validation / test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    train: TimeRange,
    validation: TimeRange,
    test_days: Vec<NaiveDate>,
}

fn midnight(d: NaiveDate) -> NaiveDateTime {
    d.and_hms_opt(0, 0, 0).expect("midnight exists")
}

impl SplitSpec {
    pub fn new(
        train: TimeRange,
        validation: TimeRange,
        mut test_days: Vec<NaiveDate>,
    ) -> Result<Self, IngestError> {
        if train.start >= train.end {
            return Err(IngestError::InvalidSplit(format!(
                "empty train range {train}"
            )));
        }
        if validation.start >= validation.end {
            return Err(IngestError::InvalidSplit(format!(
                "empty validation range {validation}"
            )));
        }
        if train.end > validation.start {
            return Err(IngestError::InvalidSplit(format!(
                "train {train} overlaps or follows validation {validation}"
            )));
        }
        test_days.sort();
        let before = test_days.len();
        test_days.dedup();
        if test_days.len() != before {
            return Err(IngestError::InvalidSplit("duplicate test day".into()));
        }
        if let Some(first) = test_days.first() {
            if midnight(*first) < validation.end {
                return Err(IngestError::InvalidSplit(format!(
                    "test day {first} is not after validation {validation}"
                )));
            }
        }
        Ok(Self {
            train,
            validation,
            test_days,
        })
    }

    /// Train on the first 80 % of 2013 (hours), validate on the rest, test Feb 20-26 2014.
    pub fn default_protocol() -> Self {
        let year_start = midnight(NaiveDate::from_ymd_opt(2013, 1, 1).unwrap());
        let year_end = midnight(NaiveDate::from_ymd_opt(2014, 1, 1).unwrap());
        let cut = year_start + Duration::hours(8760 * 4 / 5);
        let test_days = (20..=26)
            .map(|d| NaiveDate::from_ymd_opt(2014, 2, d).unwrap())
            .collect();
        Self::new(
            TimeRange::new(year_start, cut),
            TimeRange::new(cut, year_end),
            test_days,
        )
        .expect("default split is valid")
    }

    pub fn train(&self) -> TimeRange {
        self.train
    }

    pub fn validation(&self) -> TimeRange {
        self.validation
    }

    pub fn test_days(&self) -> &[NaiveDate] {
        &self.test_days
    }
}

/// The three partitions produced by [`split`].
#[derive(Debug, Clone)]
pub struct Partitions {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

fn count_in(ts: &[NaiveDateTime], range: &TimeRange) -> usize {
    ts.iter().filter(|t| range.contains(t)).count()
}

/// Partitions `dataset` by `spec`; each range must be fully covered hour by hour.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Partitions, IngestError> {
    let ts = dataset.timestamps();
    for (label, range) in [("train", spec.train), ("validation", spec.validation)] {
        let have = count_in(ts, &range);
        if have as i64 != range.hours() {
            return Err(IngestError::RangeNotCovered(format!(
                "{label} range {range}: {have} of {} hours present",
                range.hours()
            )));
        }
    }
    let mut test_idx = Vec::new();
    for day in &spec.test_days {
        let range = TimeRange::new(midnight(*day), midnight(*day) + Duration::days(1));
        let idx: Vec<usize> = (0..ts.len()).filter(|&i| range.contains(&ts[i])).collect();
        if idx.len() != 24 {
            return Err(IngestError::RangeNotCovered(format!(
                "test day {day}: {} of 24 hours present",
                idx.len()
            )));
        }
        test_idx.extend(idx);
    }
    let train_idx: Vec<usize> = (0..ts.len())
        .filter(|&i| spec.train.contains(&ts[i]))
        .collect();
    let val_idx: Vec<usize> = (0..ts.len())
        .filter(|&i| spec.validation.contains(&ts[i]))
        .collect();
    Ok(Partitions {
        train: dataset.subset(&train_idx),
        validation: dataset.subset(&val_idx),
        test: dataset.subset(&test_idx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn weather_csv(zones: &[u32], hours: usize) -> String {
        let mut s = String::from(
            "ZONEID,TIMESTAMP,VAR78,VAR79,VAR134,VAR157,VAR164,VAR165,VAR166,VAR167,VAR169,VAR175,VAR178,VAR228\n",
        );
        let start = ts("20130101 00:00");
        // Write hours in reverse to check sorting.
        for h in (0..hours).rev() {
            for &z in zones {
                let t = start + Duration::hours(h as i64);
                s.push_str(&format!("{z},{}", t.format("%Y%m%d %H:%M")));
                for k in 0..12 {
                    s.push_str(&format!(",{}", (h * 100 + k) as f64 + z as f64 / 10.0));
                }
                s.push('\n');
            }
        }
        s
    }

    fn power_csv(zone: u32, start_hour: i64, hours: i64) -> String {
        let start = ts("20130101 00:00");
        let mut s = String::from("ZONEID,TIMESTAMP,POWER\n");
        for h in start_hour..start_hour + hours {
            let t = start + Duration::hours(h);
            s.push_str(&format!(
                "{zone},{},{}\n",
                t.format("%Y%m%d %H:%M"),
                (h % 10) as f64 / 10.0
            ));
        }
        s
    }

    #[test]
    fn timestamp_formats() {
        let a = ts("20130220 13:00");
        assert_eq!(ts("2013-02-20T13:00"), a);
        assert_eq!(ts("2013-02-20 13:00:00"), a);
        assert!(parse_timestamp("Feb 20").is_none());
    }

    #[test]
    fn filters_zone_and_sorts() {
        let csv = weather_csv(&[1, 2, 3], 24);
        let recs = read_weather(csv.as_bytes(), 1, &ColumnMap::default()).unwrap();
        assert_eq!(recs.len(), 24);
        assert!(recs.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert!(recs.iter().all(|r| r.zone_id == 1));
        assert_eq!(recs[5].get(Variable::Tcc), 504.1);
    }

    #[test]
    fn duplicate_timestamp_is_malformed() {
        let mut csv = weather_csv(&[1], 3);
        let dup = csv.lines().nth(1).unwrap().to_string();
        csv.push_str(&dup);
        csv.push('\n');
        let err = read_weather(csv.as_bytes(), 1, &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRow { .. }), "{err}");
    }

    #[test]
    fn non_numeric_field_is_malformed() {
        let csv = weather_csv(&[1], 2).replacen("100.1", "abc", 1);
        let err = read_weather(csv.as_bytes(), 1, &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRow { .. }), "{err}");
    }

    #[test]
    fn gap_detected() {
        let csv = weather_csv(&[1], 5);
        let kept: Vec<&str> = csv
            .lines()
            .filter(|l| !l.contains("20130101 02:00"))
            .collect();
        let err = read_weather(kept.join("\n").as_bytes(), 1, &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, IngestError::GapInSeries { .. }), "{err}");
    }

    #[test]
    fn unknown_zone() {
        let csv = weather_csv(&[1, 2], 3);
        let err = read_weather(csv.as_bytes(), 9, &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, IngestError::UnknownZone(9)));
    }

    #[test]
    fn off_hour_timestamp_rejected() {
        let csv = "ZONEID,TIMESTAMP,POWER\n1,20130101 00:30,0.5\n";
        assert!(matches!(
            read_power(csv.as_bytes(), 1),
            Err(IngestError::MalformedRow { .. })
        ));
    }

    #[test]
    fn power_out_of_range_rejected() {
        let csv = "ZONEID,TIMESTAMP,POWER\n1,20130101 00:00,0.5\n1,20130101 01:00,1.2\n";
        assert!(matches!(
            read_power(csv.as_bytes(), 1),
            Err(IngestError::OutOfRangePower { value, .. }) if value == 1.2
        ));
    }

    #[test]
    fn empty_power_file() {
        assert!(read_power("".as_bytes(), 1).unwrap().is_empty());
        assert!(read_power("ZONEID,TIMESTAMP,POWER\n".as_bytes(), 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn column_override() {
        let csv = weather_csv(&[1], 2).replace("VAR164", "CLOUD");
        let mut map = ColumnMap::default();
        assert!(matches!(
            read_weather(csv.as_bytes(), 1, &map),
            Err(IngestError::MissingColumn(c)) if c == "VAR164"
        ));
        map.set(Variable::Tcc, "CLOUD");
        assert_eq!(read_weather(csv.as_bytes(), 1, &map).unwrap().len(), 2);
    }

    #[test]
    fn align_intersection() {
        let w = read_weather(weather_csv(&[1], 24).as_bytes(), 1, &ColumnMap::default()).unwrap();
        let p = read_power(power_csv(1, 12, 24).as_bytes(), 1).unwrap();
        let d = align(&w, &p).unwrap();
        assert_eq!(d.len(), 12);
        assert_eq!(d.timestamps()[0], ts("20130101 12:00"));
        assert_eq!(d.timestamps()[11], ts("20130101 23:00"));
        assert_eq!(d.target()[0], 0.2);

        let p_same = read_power(power_csv(1, 0, 24).as_bytes(), 1).unwrap();
        assert_eq!(align(&w, &p_same).unwrap().len(), 24);

        let p_far = read_power(power_csv(1, 100, 5).as_bytes(), 1).unwrap();
        assert!(matches!(
            align(&w, &p_far),
            Err(IngestError::EmptyIntersection)
        ));
    }

    #[test]
    fn align_ignores_input_order() {
        let w = read_weather(weather_csv(&[1], 24).as_bytes(), 1, &ColumnMap::default()).unwrap();
        let p = read_power(power_csv(1, 3, 10).as_bytes(), 1).unwrap();
        let mut w_rev = w.clone();
        w_rev.reverse();
        let mut p_rev = p.clone();
        p_rev.reverse();
        assert_eq!(align(&w, &p).unwrap(), align(&w_rev, &p_rev).unwrap());
    }

    #[test]
    fn weather_round_trip_is_exact() {
        let mut recs =
            read_weather(weather_csv(&[1], 4).as_bytes(), 1, &ColumnMap::default()).unwrap();
        recs[1].values[3] = 0.1 + 0.2;
        recs[2].values[8] = 1.0 / 3.0;
        let mut buf = Vec::new();
        write_weather(&mut buf, &recs, &ColumnMap::default()).unwrap();
        let back = read_weather(buf.as_slice(), 1, &ColumnMap::default()).unwrap();
        assert_eq!(back, recs);

        let p = read_power(power_csv(1, 0, 5).as_bytes(), 1).unwrap();
        let mut buf = Vec::new();
        write_power(&mut buf, &p).unwrap();
        assert_eq!(read_power(buf.as_slice(), 1).unwrap(), p);
    }

    #[test]
    fn deaccumulation_resets_at_run_start() {
        let start = ts("20130101 00:00");
        let recs: Vec<WeatherRecord> = (0..5)
            .map(|h| {
                let mut values = [0.0; 12];
                // cumulative within run: 10, 30, 60 ... reset at 02:00
                values[Variable::Ssrd.index()] = [5.0, 10.0, 7.0, 20.0, 40.0][h];
                values[Variable::Tcc.index()] = 0.5;
                WeatherRecord {
                    zone_id: 1,
                    timestamp: start + Duration::hours(h as i64),
                    values,
                }
            })
            .collect();
        let out = deaccumulate(&recs, 2);
        let ssrd: Vec<f64> = out.iter().map(|r| r.get(Variable::Ssrd)).collect();
        assert_eq!(ssrd, vec![5.0, 5.0, 7.0, 13.0, 20.0]);
        assert!(out.iter().all(|r| r.get(Variable::Tcc) == 0.5));
    }

    fn hourly_dataset(start: &str, hours: i64) -> Dataset {
        let t0 = ts(start);
        let timestamps: Vec<NaiveDateTime> = (0..hours).map(|h| t0 + Duration::hours(h)).collect();
        let x = Matrix::from_vec(hours as usize, 1, (0..hours).map(|h| h as f64).collect());
        Dataset::new(
            x,
            vec![0.5; hours as usize],
            timestamps,
            vec!["SSRD".into()],
        )
        .unwrap()
    }

    #[test]
    fn default_protocol_split() {
        let d = hourly_dataset("2013-01-01T00:00", 24 * 425);
        let spec = SplitSpec::default_protocol();
        let parts = split(&d, &spec).unwrap();
        assert_eq!(parts.test.len(), 168);
        assert_eq!(parts.train.len(), 7008);
        assert_eq!(parts.validation.len(), 8760 - 7008);
        assert!(parts.train.timestamps().last() < parts.validation.timestamps().first());
        assert_eq!(parts.test.timestamps()[0], ts("2014-02-20T00:00"),);
        assert!(parts.train.len() + parts.validation.len() + parts.test.len() <= d.len());
    }

    #[test]
    fn empty_test_days() {
        let d = hourly_dataset("2013-01-01T00:00", 72);
        let spec = SplitSpec::new(
            TimeRange::new(ts("2013-01-01T00:00"), ts("2013-01-02T00:00")),
            TimeRange::new(ts("2013-01-02T00:00"), ts("2013-01-03T00:00")),
            vec![],
        )
        .unwrap();
        let parts = split(&d, &spec).unwrap();
        assert!(parts.test.is_empty());
        assert_eq!(parts.train.len() + parts.validation.len(), 48);
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let err = SplitSpec::new(
            TimeRange::new(ts("2013-01-01T00:00"), ts("2013-01-03T00:00")),
            TimeRange::new(ts("2013-01-02T00:00"), ts("2013-01-04T00:00")),
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::InvalidSplit(_)));
    }

    #[test]
    fn uncovered_range() {
        let d = hourly_dataset("2013-01-01T00:00", 30);
        let spec = SplitSpec::new(
            TimeRange::new(ts("2013-01-01T00:00"), ts("2013-01-02T00:00")),
            TimeRange::new(ts("2013-01-02T00:00"), ts("2013-01-03T00:00")),
            vec![],
        )
        .unwrap();
        assert!(matches!(
            split(&d, &spec),
            Err(IngestError::RangeNotCovered(_))
        ));
    }
}
