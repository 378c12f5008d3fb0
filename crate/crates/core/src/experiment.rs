//! End-to-end runs: simulate captures, read them back, estimate per matched
//! subframe and score against ground truth.

use crate::config::{ErrorMetric, ExperimentConfig, Scheme};
use crate::geometry::{distance, Position};
use crate::snifflog::{
    filter_rnti, match_records, parse_log, write_log, MatchDiagnostic, TimingRecord,
};
use crate::tdoa::{estimate_tdoa, MeasurementSet, TdoaError};
use crate::timing::{simulate_capture, Configuration, SubframeSchedule, TimingError};
use crate::toa::{compose_range_sum, solve_toa, ToaError};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Logs keyed by (configuration index, sniffer index).
pub type LogSet = BTreeMap<(usize, usize), Vec<TimingRecord>>;

pub fn log_file_name(configuration: usize, sniffer: usize) -> String {
    format!("sn{}_cfg{}.log", sniffer + 1, configuration + 1)
}

/// Simulates every sniffer over every configuration of the experiment.
pub fn simulate(cfg: &ExperimentConfig) -> Result<LogSet, TimingError> {
    let schedule = SubframeSchedule {
        count: cfg.subframes,
        rnti: cfg.rnti,
        snr_db: cfg.snr_db,
    };
    let records = simulate_capture(&cfg.scenario, &cfg.clock(), &schedule, &cfg.relocations)?;
    let mut logs = LogSet::new();
    for r in records {
        logs.entry((r.configuration, r.sniffer))
            .or_default()
            .push(r.record);
    }
    Ok(logs)
}

/// Writes one canonical log per (configuration, sniffer); returns the paths
/// in write order.
pub fn write_logs(logs: &LogSet, dir: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(logs.len());
    for (&(conf, sniffer), records) in logs {
        let path = dir.join(log_file_name(conf, sniffer));
        let mut out = BufWriter::new(File::create(&path)?);
        write_log(&mut out, records)?;
        out.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// A skipped log line, with the file it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FileDiagnostic {
    pub file: String,
    pub message: String,
}

/// Reads the logs the experiment's configurations call for from `dir`.
pub fn read_logs(cfg: &ExperimentConfig, dir: &Path) -> io::Result<(LogSet, Vec<FileDiagnostic>)> {
    let mut logs = LogSet::new();
    let mut diags = Vec::new();
    for conf in cfg.configurations() {
        for sniffer in 0..conf.positions.len() {
            let name = log_file_name(conf.index, sniffer);
            let path = dir.join(&name);
            let file = File::open(&path)
                .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
            let parsed = parse_log(BufReader::new(file), &format!("sn{}", sniffer + 1))?;
            diags.extend(parsed.diagnostics.iter().map(|d| FileDiagnostic {
                file: name.clone(),
                message: d.to_string(),
            }));
            logs.insert((conf.index, sniffer), parsed.records);
        }
    }
    Ok((logs, diags))
}

/// One estimate per matched subframe.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEstimate {
    pub index: usize,
    pub frame: u64,
    pub subframe: u8,
    pub outcome: Result<Position, String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocateOutput {
    pub estimates: Vec<SampleEstimate>,
    pub match_diagnostics: Vec<String>,
}

fn matched(
    logs: &LogSet,
    conf: usize,
    a: usize,
    b: usize,
    rnti: u16,
) -> (Vec<crate::snifflog::MatchedSample>, Vec<MatchDiagnostic>) {
    let get = |k| filter_rnti(logs.get(&(conf, k)).cloned().unwrap_or_default(), rnti);
    let out = match_records(&get(a), &get(b));
    (out.samples, out.diagnostics)
}

fn describe(conf: usize, a: usize, b: usize, d: &MatchDiagnostic) -> String {
    format!("cfg{} sn{}/sn{}: {d}", conf + 1, a + 1, b + 1)
}

/// ToA estimates from the first configuration's sniffers 0 and 1.
pub fn locate_toa(cfg: &ExperimentConfig, logs: &LogSet) -> LocateOutput {
    let conf = &cfg.configurations()[0];
    let (samples, diags) = matched(logs, 0, 0, 1, cfg.rnti);
    let scenario = &cfg.scenario;
    let (s1, s2) = (conf.positions[0], conf.positions[1]);
    let estimates = samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let outcome = compose_range_sum(s.delta_a_us * 1e-6, s1, scenario)
                .and_then(|o1| Ok((o1, compose_range_sum(s.delta_b_us * 1e-6, s2, scenario)?)))
                .and_then(|(o1, o2)| solve_toa(&o1, &o2, scenario.enb(), scenario.band()))
                .map(|e| e.position)
                .map_err(|e: ToaError| e.to_string());
            SampleEstimate {
                index,
                frame: s.frame,
                subframe: s.subframe,
                outcome,
            }
        })
        .collect();
    LocateOutput {
        estimates,
        match_diagnostics: diags.iter().map(|d| describe(0, 0, 1, d)).collect(),
    }
}

/// Reference-sniffer measurement sets: one per (configuration, other sniffer).
pub fn measurement_sets(
    configurations: &[Configuration],
    logs: &LogSet,
    rnti: u16,
) -> (Vec<MeasurementSet>, Vec<String>) {
    let mut sets = Vec::new();
    let mut diags = Vec::new();
    for conf in configurations {
        for k in 1..conf.positions.len() {
            // a sniffer that did not move adds no new row
            if sets.iter().any(|s: &MeasurementSet| {
                s.other == conf.positions[k] && s.reference == conf.positions[0]
            }) {
                continue;
            }
            let (samples, d) = matched(logs, conf.index, 0, k, rnti);
            diags.extend(d.iter().map(|d| describe(conf.index, 0, k, d)));
            sets.push(MeasurementSet {
                reference: conf.positions[0],
                other: conf.positions[k],
                samples,
            });
        }
    }
    (sets, diags)
}

pub fn locate_tdoa(cfg: &ExperimentConfig, logs: &LogSet) -> Result<LocateOutput, TdoaError> {
    let (sets, match_diagnostics) = measurement_sets(&cfg.configurations(), logs, cfg.rnti);
    let estimates = estimate_tdoa(&sets, &cfg.scenario)?
        .into_iter()
        .map(|o| SampleEstimate {
            index: o.index,
            frame: o.frame,
            subframe: o.subframe,
            outcome: o.result.map(|e| e.position).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(LocateOutput {
        estimates,
        match_diagnostics,
    })
}

pub fn locate(cfg: &ExperimentConfig, logs: &LogSet) -> Result<LocateOutput, TdoaError> {
    match cfg.scheme {
        Scheme::Toa => Ok(locate_toa(cfg, logs)),
        Scheme::Tdoa => locate_tdoa(cfg, logs),
    }
}

pub fn score(metric: ErrorMetric, estimate: Position, truth: Position, enb: Position) -> f64 {
    match metric {
        ErrorMetric::Position => distance(estimate, truth),
        ErrorMetric::Range => (distance(estimate, enb) - distance(truth, enb)).abs(),
    }
}

/// Errors of the successful estimates, in sample order.
pub fn errors(cfg: &ExperimentConfig, estimates: &[SampleEstimate]) -> Option<Vec<f64>> {
    let truth = cfg.scenario.ue_truth()?;
    Some(
        estimates
            .iter()
            .filter_map(|e| e.outcome.as_ref().ok())
            .map(|&p| score(cfg.metric, p, truth, cfg.scenario.enb()))
            .collect(),
    )
}
