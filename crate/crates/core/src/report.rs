//! Estimates files and comparison reports.
//!
//! Estimates file, version 1:
//!
//! ```text
//! # dualsniff-estimates v1 scheme=tdoa metric=position snr_db=20 seed=7
//! index,frame,subframe,status,x_m,y_m,error_m,detail
//! 0,0,0,ok,10.031,114.190,0.078,
//! 1,0,1,error,,,,no admissible root
//! ```
//!
//! `error_m` is empty when the run had no ground truth. `detail` never
//! contains commas.

use crate::config::{ErrorMetric, Scheme};
use crate::experiment::{score, SampleEstimate};
use crate::geometry::Position;
use crate::stats::{cdf_quantile, one_sigma_filter, summarize, ErrorStats, StatsError};
use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use thiserror::Error;

pub const ESTIMATES_MAGIC: &str = "# dualsniff-estimates v1";
pub const ESTIMATES_HEADER: &str = "index,frame,subframe,status,x_m,y_m,error_m,detail";
pub const SUMMARY_HEADER: &str =
    "label,scheme,metric,filter,count,removed,mean_m,rmse_m,std_m,p50_m,p80_m";

/// Probabilities at which the merged CDF table is sampled.
pub fn cdf_grid() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{source_name}:{line}: {message}")]
    Schema {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("inputs disagree: {0}")]
    Mismatch(String),
    #[error("{label}: {source}")]
    Stats { label: String, source: StatsError },
}

impl ReportError {
    pub fn is_empty_input(&self) -> bool {
        matches!(
            self,
            ReportError::Stats {
                source: StatsError::EmptyInput,
                ..
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatesMeta {
    pub scheme: Scheme,
    pub metric: ErrorMetric,
    /// Free-form `key=value` pairs after scheme and metric, in file order.
    pub extra: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub index: usize,
    pub frame: u64,
    pub subframe: u8,
    pub position: Option<Position>,
    pub error_m: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatesFile {
    pub meta: EstimatesMeta,
    pub rows: Vec<EstimateRow>,
}

impl EstimatesFile {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.error_m).collect()
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.position.is_none()).count()
    }
}

/// Rows for `estimates`, scored against `truth` when it is known.
pub fn rows_from(
    estimates: &[SampleEstimate],
    metric: ErrorMetric,
    truth: Option<Position>,
    enb: Position,
) -> Vec<EstimateRow> {
    estimates
        .iter()
        .map(|e| {
            let (position, detail) = match &e.outcome {
                Ok(p) => (Some(*p), String::new()),
                Err(msg) => (None, msg.replace([',', '\n', '\r'], ";")),
            };
            EstimateRow {
                index: e.index,
                frame: e.frame,
                subframe: e.subframe,
                position,
                error_m: position.zip(truth).map(|(p, t)| score(metric, p, t, enb)),
                detail,
            }
        })
        .collect()
}

pub fn write_estimates<W: Write>(mut out: W, file: &EstimatesFile) -> io::Result<()> {
    write!(
        out,
        "{ESTIMATES_MAGIC} scheme={} metric={}",
        file.meta.scheme, file.meta.metric
    )?;
    for (k, v) in &file.meta.extra {
        write!(out, " {k}={v}")?;
    }
    writeln!(out)?;
    writeln!(out, "{ESTIMATES_HEADER}")?;
    for r in &file.rows {
        let (x, y) = match r.position {
            Some(p) => (p.x.to_string(), p.y.to_string()),
            None => (String::new(), String::new()),
        };
        let status = if r.position.is_some() { "ok" } else { "error" };
        let err = r.error_m.map(|e| e.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{status},{x},{y},{err},{}",
            r.index, r.frame, r.subframe, r.detail
        )?;
    }
    Ok(())
}

fn parse_meta(line: &str) -> Result<EstimatesMeta, String> {
    let rest = line
        .strip_prefix(ESTIMATES_MAGIC)
        .ok_or_else(|| format!("expected '{ESTIMATES_MAGIC}' header, found '{line}'"))?;
    let mut scheme = None;
    let mut metric = None;
    let mut extra = Vec::new();
    for token in rest.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| format!("metadata token '{token}' is not key=value"))?;
        match k {
            "scheme" => scheme = Some(v.parse::<Scheme>()?),
            "metric" => metric = Some(v.parse::<ErrorMetric>()?),
            _ => extra.push((k.to_string(), v.to_string())),
        }
    }
    Ok(EstimatesMeta {
        scheme: scheme.ok_or("metadata lacks scheme=")?,
        metric: metric.ok_or("metadata lacks metric=")?,
        extra,
    })
}

fn parse_row(line: &str) -> Result<EstimateRow, String> {
    let fields: Vec<&str> = line.splitn(8, ',').collect();
    if fields.len() != 8 {
        return Err(format!("expected 8 fields, found {}", fields.len()));
    }
    fn num<T: std::str::FromStr>(name: &str, s: &str) -> Result<T, String> {
        s.parse().map_err(|_| format!("bad {name} '{s}'"))
    }
    fn opt_f64(name: &str, s: &str) -> Result<Option<f64>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            num::<f64>(name, s).map(Some)
        }
    }
    let x = opt_f64("x_m", fields[4])?;
    let y = opt_f64("y_m", fields[5])?;
    let position = match (fields[3], x, y) {
        ("ok", Some(x), Some(y)) => Some(Position::new(x, y)),
        ("error", None, None) => None,
        (status, ..) => return Err(format!("status '{status}' does not fit the coordinates")),
    };
    let error_m = opt_f64("error_m", fields[6])?;
    if position.is_none() && error_m.is_some() {
        return Err("failed row carries an error value".into());
    }
    Ok(EstimateRow {
        index: num("index", fields[0])?,
        frame: num("frame", fields[1])?,
        subframe: num("subframe", fields[2])?,
        position,
        error_m,
        detail: fields[7].to_string(),
    })
}

pub fn read_estimates<R: BufRead>(
    reader: R,
    source_name: &str,
) -> Result<EstimatesFile, ReportError> {
    let schema = |line: usize, message: String| ReportError::Schema {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut lines = reader.lines();
    let meta = match lines.next() {
        Some(l) => parse_meta(l?.trim_end()).map_err(|m| schema(1, m))?,
        None => return Err(schema(1, "empty file, expected estimates header".into())),
    };
    match lines.next() {
        Some(l)
            if l.as_ref()
                .map(|s| s.trim_end() == ESTIMATES_HEADER)
                .unwrap_or(false) => {}
        Some(l) => {
            let l = l?;
            return Err(schema(
                2,
                format!("expected column header '{ESTIMATES_HEADER}', found '{l}'"),
            ));
        }
        None => return Err(schema(2, "missing column header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        rows.push(parse_row(line).map_err(|m| schema(i + 3, m))?);
    }
    Ok(EstimatesFile { meta, rows })
}

/// Statistics of one error set, before or after the 1-sigma filter.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub stats: ErrorStats,
    pub removed: usize,
    pub p50: f64,
    pub p80: f64,
}

impl SummaryRow {
    fn new(stats: ErrorStats, removed: usize) -> Self {
        // quantiles cannot fail on a non-empty summary with p in (0, 1]
        let p50 = cdf_quantile(&stats, 0.5).unwrap_or(f64::NAN);
        let p80 = cdf_quantile(&stats, 0.8).unwrap_or(f64::NAN);
        Self {
            stats,
            removed,
            p50,
            p80,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSummary {
    pub label: String,
    pub meta: EstimatesMeta,
    pub raw: SummaryRow,
    pub filtered: SummaryRow,
    pub failures: usize,
}

/// Summarizes one error set. A single sample cannot be filtered and is
/// reported unchanged on the filtered row.
pub fn summarize_input(label: &str, file: &EstimatesFile) -> Result<InputSummary, ReportError> {
    let wrap = |source| ReportError::Stats {
        label: label.to_string(),
        source,
    };
    let errors = file.errors();
    let raw = summarize(&errors).map_err(wrap)?;
    let filtered = if errors.len() >= 2 {
        let f = one_sigma_filter(&errors).map_err(wrap)?;
        SummaryRow::new(summarize(&f.kept).map_err(wrap)?, f.removed.len())
    } else {
        SummaryRow::new(raw.clone(), 0)
    };
    Ok(InputSummary {
        label: label.to_string(),
        meta: file.meta.clone(),
        raw: SummaryRow::new(raw, 0),
        filtered,
        failures: file.failures(),
    })
}

/// Labels from file stems, made unique by suffixing the input position.
pub fn unique_labels(names: &[String]) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for n in names {
        *counts.entry(n).or_default() += 1;
    }
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if counts[n.as_str()] > 1 {
                format!("{n}#{}", i + 1)
            } else {
                n.clone()
            }
        })
        .collect()
}

/// Summarizes every input; all inputs must share one error metric.
pub fn compare(inputs: &[(String, EstimatesFile)]) -> Result<Vec<InputSummary>, ReportError> {
    if let Some((first_label, first)) = inputs.first() {
        for (label, f) in &inputs[1..] {
            if f.meta.metric != first.meta.metric {
                return Err(ReportError::Mismatch(format!(
                    "{first_label} uses metric {} but {label} uses {}",
                    first.meta.metric, f.meta.metric
                )));
            }
        }
    }
    inputs
        .iter()
        .map(|(label, f)| summarize_input(label, f))
        .collect()
}

pub fn write_summary<W: Write>(mut out: W, summaries: &[InputSummary]) -> io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for s in summaries {
        for (filter, row) in [("none", &s.raw), ("1-sigma", &s.filtered)] {
            writeln!(
                out,
                "{},{},{},{filter},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
                s.label,
                s.meta.scheme,
                s.meta.metric,
                row.stats.count,
                row.removed,
                row.stats.mean,
                row.stats.rmse,
                row.stats.std,
                row.p50,
                row.p80
            )?;
        }
    }
    Ok(())
}

/// Error quantile of each input (unfiltered) at each grid probability.
pub fn write_merged_cdf<W: Write>(mut out: W, summaries: &[InputSummary]) -> io::Result<()> {
    write!(out, "probability")?;
    for s in summaries {
        write!(out, ",{}", s.label)?;
    }
    writeln!(out)?;
    for p in cdf_grid() {
        write!(out, "{p:.2}")?;
        for s in summaries {
            let q = cdf_quantile(&s.raw.stats, p).unwrap_or(f64::NAN);
            write!(out, ",{q:.4}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Plot-ready empirical CDF: one `error_m,probability` pair per sample.
pub fn write_cdf_points<W: Write>(mut out: W, stats: &ErrorStats) -> io::Result<()> {
    writeln!(out, "error_m,probability")?;
    for (e, p) in &stats.cdf {
        writeln!(out, "{e},{p}")?;
    }
    Ok(())
}
