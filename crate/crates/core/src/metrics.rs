//! Capacity-normalised mean absolute error, per day and per week.

use std::fmt::Write as _;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {pred} predictions vs {actual} actuals")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("capacity must be positive and finite, got {0}")]
    ZeroCapacity(f64),
    #[error("no values to score")]
    Empty,
    #[error("day {day} has {rows} rows, expected {HOURS_PER_DAY}")]
    IncompleteDay { day: NaiveDate, rows: usize },
    #[error("timestamp {0} falls outside the evaluation days")]
    OutsideDays(NaiveDateTime),
    #[error("no evaluation days given")]
    NoDays,
    #[error("model {0} appears more than once")]
    DuplicateModel(String),
}

/// `100 * mean(|pred - actual|) / capacity`, in percent.
pub fn nmae(pred: &[f64], actual: &[f64], capacity: f64) -> Result<f64, MetricsError> {
    if pred.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !(capacity.is_finite() && capacity > 0.0) {
        return Err(MetricsError::ZeroCapacity(capacity));
    }
    let total: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(100.0 * total / pred.len() as f64 / capacity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    days: Vec<NaiveDate>,
    models: Vec<String>,
    /// `daily[m][d]` for model `m` on day `d`.
    daily: Vec<Vec<f64>>,
    weekly: Vec<f64>,
}

impl ErrorReport {
    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn daily(&self, model: &str) -> Option<&[f64]> {
        let i = self.models.iter().position(|m| m == model)?;
        Some(&self.daily[i])
    }

    pub fn weekly(&self, model: &str) -> Option<f64> {
        let i = self.models.iter().position(|m| m == model)?;
        Some(self.weekly[i])
    }

    /// Rows are days then `weekly`; columns are models.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["day".to_string()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (d, day) in self.days.iter().enumerate() {
            let mut row = vec![day.format("%Y-%m-%d").to_string()];
            row.extend(self.daily.iter().map(|m| format!("{:.6}", m[d])));
            w.write_record(&row).expect("in-memory write");
        }
        let mut row = vec!["weekly".to_string()];
        row.extend(self.weekly.iter().map(|v| format!("{v:.6}")));
        w.write_record(&row).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Aligned table with one row per model, daily columns, then weekly.
    pub fn to_text(&self) -> String {
        let name_width = self
            .models
            .iter()
            .map(|m| m.len())
            .max()
            .unwrap_or(0)
            .max("Method".len());
        let mut out = String::new();
        let _ = write!(out, "{:<name_width$}", "Method");
        for day in &self.days {
            let _ = write!(out, "  {:>10}", day.format("%Y-%m-%d"));
        }
        let _ = writeln!(out, "  {:>10}", "Weekly");
        for (i, m) in self.models.iter().enumerate() {
            let _ = write!(out, "{:<name_width$}", m.to_uppercase());
            for v in &self.daily[i] {
                let _ = write!(out, "  {v:>10.2}");
            }
            let _ = writeln!(out, "  {:>10.2}", self.weekly[i]);
        }
        out
    }
}

/// Scores every model per calendar day and averages the daily values.
///
/// `timestamps` must cover each of `days` with exactly 24 rows and nothing
/// else.
pub fn daily_weekly_report(
    timestamps: &[NaiveDateTime],
    actual: &[f64],
    preds: &[(String, Vec<f64>)],
    days: &[NaiveDate],
    capacity: f64,
) -> Result<ErrorReport, MetricsError> {
    if days.is_empty() {
        return Err(MetricsError::NoDays);
    }
    if timestamps.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            pred: timestamps.len(),
            actual: actual.len(),
        });
    }
    let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); days.len()];
    for (i, t) in timestamps.iter().enumerate() {
        let d = days
            .iter()
            .position(|d| *d == t.date())
            .ok_or(MetricsError::OutsideDays(*t))?;
        rows_of[d].push(i);
    }
    for (day, rows) in days.iter().zip(&rows_of) {
        if rows.len() != HOURS_PER_DAY {
            return Err(MetricsError::IncompleteDay {
                day: *day,
                rows: rows.len(),
            });
        }
    }

    let mut models = Vec::with_capacity(preds.len());
    let mut daily = Vec::with_capacity(preds.len());
    let mut weekly = Vec::with_capacity(preds.len());
    for (name, p) in preds {
        if models.contains(name) {
            return Err(MetricsError::DuplicateModel(name.clone()));
        }
        if p.len() != actual.len() {
            return Err(MetricsError::LengthMismatch {
                pred: p.len(),
                actual: actual.len(),
            });
        }
        let per_day = rows_of
            .iter()
            .map(|rows| {
                let pp: Vec<f64> = rows.iter().map(|&i| p[i]).collect();
                let aa: Vec<f64> = rows.iter().map(|&i| actual[i]).collect();
                nmae(&pp, &aa, capacity)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        weekly.push(per_day.iter().sum::<f64>() / per_day.len() as f64);
        daily.push(per_day);
        models.push(name.clone());
    }
    Ok(ErrorReport {
        days: days.to_vec(),
        models,
        daily,
        weekly,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;
    use proptest::prelude::*;

    fn hours(days: &[NaiveDate]) -> Vec<NaiveDateTime> {
        days.iter()
            .flat_map(|d| {
                let start = d.and_hms_opt(0, 0, 0).unwrap();
                (0..24).map(move |h| start + Duration::hours(h))
            })
            .collect()
    }

    fn week() -> Vec<NaiveDate> {
        (20..=26)
            .map(|d| NaiveDate::from_ymd_opt(2014, 2, d).unwrap())
            .collect()
    }

    #[test]
    fn nmae_examples() {
        assert_eq!(nmae(&[0.3, 0.4], &[0.3, 0.4], 1.0).unwrap(), 0.0);
        let a: Vec<f64> = (0..37).map(|i| i as f64 / 40.0).collect();
        let p: Vec<f64> = a.iter().map(|v| v + 0.05).collect();
        assert!((nmae(&p, &a, 1.0).unwrap() - 5.0).abs() < 1e-12);
        assert!((nmae(&[0.2, 0.4], &[0.1, 0.7], 1.0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn nmae_errors() {
        assert_eq!(
            nmae(&[0.1], &[0.1, 0.2], 1.0).unwrap_err(),
            MetricsError::LengthMismatch { pred: 1, actual: 2 }
        );
        assert_eq!(
            nmae(&[0.1], &[0.1], 0.0).unwrap_err(),
            MetricsError::ZeroCapacity(0.0)
        );
        assert_eq!(nmae(&[], &[], 1.0).unwrap_err(), MetricsError::Empty);
    }

    #[test]
    fn zero_error_report() {
        let days = week();
        let ts = hours(&days);
        let a: Vec<f64> = (0..ts.len()).map(|i| (i % 24) as f64 / 24.0).collect();
        let r = daily_weekly_report(&ts, &a, &[("qrf".into(), a.clone())], &days, 1.0).unwrap();
        assert!(r.daily("qrf").unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(r.weekly("qrf"), Some(0.0));
    }

    #[test]
    fn incomplete_day() {
        let days = week();
        let mut ts = hours(&days);
        ts.remove(30);
        let a = vec![0.0; ts.len()];
        let err =
            daily_weekly_report(&ts, &a, &[("knn".into(), a.clone())], &days, 1.0).unwrap_err();
        assert_eq!(
            err,
            MetricsError::IncompleteDay {
                day: days[1],
                rows: 23
            }
        );
    }

    #[test]
    fn outside_days() {
        let days = week();
        let ts = hours(&days[..2]);
        let a = vec![0.0; ts.len()];
        let err = daily_weekly_report(&ts, &a, &[("knn".into(), a.clone())], &days[..1], 1.0)
            .unwrap_err();
        assert!(matches!(err, MetricsError::OutsideDays(_)));
    }

    #[test]
    fn csv_and_text_layout() {
        let days = week();
        let ts = hours(&days);
        let a = vec![0.0; ts.len()];
        let p = vec![0.05; ts.len()];
        let r = daily_weekly_report(
            &ts,
            &a,
            &[("qrf".into(), p.clone()), ("knn".into(), a.clone())],
            &days,
            1.0,
        )
        .unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], "day,qrf,knn");
        assert_eq!(lines[1], "2014-02-20,5.000000,0.000000");
        assert_eq!(lines[8], "weekly,5.000000,0.000000");
        let text = r.to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("QRF"));
        assert!(text.lines().nth(1).unwrap().ends_with("5.00"));
    }

    proptest! {
        #[test]
        fn symmetric_and_scale_free(
            pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..50),
            lambda in 0.01f64..100.0,
            cap in 0.1f64..10.0,
        ) {
            let p: Vec<f64> = pairs.iter().map(|v| v.0).collect();
            let a: Vec<f64> = pairs.iter().map(|v| v.1).collect();
            let base = nmae(&p, &a, cap).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!((base - nmae(&a, &p, cap).unwrap()).abs() <= 1e-12 * base.max(1.0));
            let ps: Vec<f64> = p.iter().map(|v| v * lambda).collect();
            let as_: Vec<f64> = a.iter().map(|v| v * lambda).collect();
            let scaled = nmae(&ps, &as_, cap * lambda).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn weekly_is_mean_of_daily(values in prop::collection::vec(0.0f64..0.5, 168)) {
            let days = week();
            let ts = hours(&days);
            let a = vec![0.0; 168];
            let r = daily_weekly_report(&ts, &a, &[("svr".into(), values)], &days, 1.0).unwrap();
            let d = r.daily("svr").unwrap();
            let mean = d.iter().sum::<f64>() / 7.0;
            prop_assert!((r.weekly("svr").unwrap() - mean).abs() < 5e-3);
            prop_assert!(d.iter().all(|v| *v >= 0.0));
        }
    }
}
