//! Per-round metrics and their CSV form.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{HarnessError, Result};

pub const METRICS_HEADER: [&str; 9] = [
    "round",
    "alpha",
    "train_risk",
    "test_accuracy",
    "feature_fraction",
    "wall_time_s",
    "jensen_gap_uniform",
    "variance_pstar",
    "variance_uniform",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub alpha: f64,
    pub train_risk: f64,
    pub test_accuracy: f64,
    /// Pixels or vocabulary the round's learner saw, relative to the full input.
    pub feature_fraction: f64,
    /// Cumulative training time up to and including this round.
    pub wall_time_s: Option<f64>,
    pub jensen_gap_uniform: Option<f64>,
    pub variance_pstar: Option<f64>,
    pub variance_uniform: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a header and one row per round. Floats use the shortest text that
/// parses back to the same value; missing values are empty cells.
pub fn write_metrics_csv(series: &[RoundMetrics], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in series {
        w.write_record([
            r.round.to_string(),
            r.alpha.to_string(),
            r.train_risk.to_string(),
            r.test_accuracy.to_string(),
            r.feature_fraction.to_string(),
            cell(r.wall_time_s),
            cell(r.jensen_gap_uniform),
            cell(r.variance_pstar),
            cell(r.variance_uniform),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_metrics_csv(series: &[RoundMetrics], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics_csv(series, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<RoundMetrics>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(METRICS_HEADER) {
        return Err(HarnessError::Invalid { path: path.to_path_buf(), reason: "unexpected metrics header".into() });
    }
    let bad = |line: usize, what: &str| HarnessError::Record { path: path.to_path_buf(), line, reason: format!("bad {what}") };
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(line, METRICS_HEADER[i]));
        let opt = |i: usize| if rec[i].is_empty() { Ok(None) } else { num(i).map(Some) };
        out.push(RoundMetrics {
            round: rec[0].parse().map_err(|_| bad(line, "round"))?,
            alpha: num(1)?,
            train_risk: num(2)?,
            test_accuracy: num(3)?,
            feature_fraction: num(4)?,
            wall_time_s: opt(5)?,
            jensen_gap_uniform: opt(6)?,
            variance_pstar: opt(7)?,
            variance_uniform: opt(8)?,
        });
    }
    Ok(out)
}
