#![allow(dead_code)]

use dualsniff::geometry::{distance, ta_band, Position, TaBand, TA_BAND_STEP_M};
use dualsniff::snifflog::{match_records, parse_log, write_matched_table};
use rand::Rng;
use std::fmt::Write as _;
use std::path::PathBuf;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn data_file(name: &str) -> String {
    std::fs::read_to_string(data_dir().join(name)).unwrap()
}

/// Parses and matches the golden pair; returns (diagnostics, matched table).
pub fn golden_run() -> (String, String) {
    let mut diags = String::new();
    let mut parsed = Vec::new();
    for (name, id) in [("golden_sn1.log", "sn1"), ("golden_sn2.log", "sn2")] {
        let text = data_file(name);
        let log = parse_log(text.as_bytes(), id).unwrap();
        for d in &log.diagnostics {
            writeln!(diags, "{name}: {d}").unwrap();
        }
        parsed.push(log.records);
    }
    let out = match_records(&parsed[0], &parsed[1]);
    for d in &out.diagnostics {
        writeln!(diags, "match: {d}").unwrap();
    }
    let mut table = Vec::new();
    write_matched_table(&mut table, &out.samples).unwrap();
    (diags, String::from_utf8(table).unwrap())
}

/// eNb at the origin, three sniffers and a UE uniform in a 500 m box.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub sniffers: [Position; 3],
    pub ue: Position,
    pub ta_index: u32,
}

impl Layout {
    pub fn band(&self) -> TaBand {
        ta_band(self.ta_index)
    }
}

fn unit(v: Position) -> Position {
    v * (1.0 / v.norm())
}

fn sin_between(a: Position, b: Position) -> f64 {
    (a.cross(b) / (a.norm() * b.norm())).abs()
}

/// Minimum separation, triangle area, crossing angle and curve gradient that
/// count as a well-posed layout. A small gradient means the UE sits on a
/// focal segment or baseline extension, where the curve degenerates to a
/// line and nearby second roots appear.
const MIN_SEPARATION_M: f64 = 10.0;
const MIN_AREA_M2: f64 = 100.0;
const MIN_CROSSING_SIN: f64 = 0.05;
const MIN_GRADIENT: f64 = 0.1;

/// Draws layouts until one is well-posed for both the ToA pair (sniffers 0
/// and 1) and the TDoA pairs (reference 0 against 1 and 2).
pub fn random_layout<R: Rng>(rng: &mut R) -> Layout {
    loop {
        let mut p = || Position::new(rng.gen_range(-250.0..250.0), rng.gen_range(-250.0..250.0));
        let sniffers = [p(), p(), p()];
        let ue = p();
        let enb = Position::ORIGIN;
        let mut points = vec![enb, ue];
        points.extend(sniffers);
        let spread = points.iter().enumerate().all(|(i, a)| {
            points[i + 1..]
                .iter()
                .all(|b| distance(*a, *b) >= MIN_SEPARATION_M)
        });
        if !spread {
            continue;
        }
        if (sniffers[0].cross(sniffers[1]) * 0.5).abs() < MIN_AREA_M2 {
            continue;
        }
        let toa_grad = |s: Position| unit(ue - enb) + unit(ue - s);
        let (t0, t1) = (toa_grad(sniffers[0]), toa_grad(sniffers[1]));
        if t0.norm().min(t1.norm()) < MIN_GRADIENT || sin_between(t0, t1) < MIN_CROSSING_SIN {
            continue;
        }
        let tdoa_grad = |s: Position| unit(ue - s) - unit(ue - sniffers[0]);
        let (h1, h2) = (tdoa_grad(sniffers[1]), tdoa_grad(sniffers[2]));
        if h1.norm().min(h2.norm()) < MIN_GRADIENT || sin_between(h1, h2) < MIN_CROSSING_SIN {
            continue;
        }
        let ta_index = (ue.norm() / TA_BAND_STEP_M).floor() as u32;
        return Layout {
            sniffers,
            ue,
            ta_index,
        };
    }
}
