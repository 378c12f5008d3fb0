//! Range-difference (TDoA) localization.
//!
//! Differencing the DL-UL deltas of two sniffers observed in the same
//! subframe removes the UE-eNb distance, the timing advance and the UE
//! hardware error. Each pair gives `d_UE,k - d_UE,1 = Δd_1k`; squaring turns
//! it into a row of the linear system `G θ = h` with `θ = [x_u, y_u, d_UE,1]`.
//!
//! Two pairs (the relocated two-sniffer setup) leave `G` with 2 rows and 3
//! unknowns, so `GᵀG` is singular. [`solve_constrained`] closes the system
//! with `d_UE,1 = |u - s_1|`, which yields a quadratic in `d_UE,1`. Three or
//! more pairs go through the normal equations in [`solve_normal_equations`].

use crate::geometry::{distance, Position, Scenario, TaBand, SPEED_OF_LIGHT};
use crate::snifflog::MatchedSample;
use nalgebra::{Matrix3, Vector3};
use std::fmt;
use thiserror::Error;

/// Pairs whose range difference exceeds this multiple of the sniffer
/// baseline are rejected outright.
pub const BASELINE_REJECT_FACTOR: f64 = 3.0;
pub const CONDITION_LIMIT: f64 = 1e12;
const DISCRIMINANT_TOLERANCE: f64 = 1e-9;
const ROOT_SLACK_M: f64 = 1e-9;
const POLISH_ITERATIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TdoaError {
    #[error("pair {pair_id}: |range difference| {range_diff:.3} m exceeds {BASELINE_REJECT_FACTOR}x the {baseline:.3} m baseline")]
    BaselineViolation {
        pair_id: String,
        range_diff: f64,
        baseline: f64,
    },
    #[error("need at least {needed} TDoA pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("pairs use different reference sniffers ({first} and {other})")]
    MixedReference { first: Position, other: Position },
    #[error("constrained solver takes exactly 2 rows, got {0}")]
    WrongRowCount(usize),
    #[error("hyperbolae do not intersect (discriminant {discriminant:.3e})")]
    NoRealRoot { discriminant: f64 },
    #[error("no root gives non-negative sniffer ranges")]
    NoAdmissibleRoot,
    #[error("sniffer geometry is degenerate (condition number {condition:.3e})")]
    DegenerateGeometry { condition: f64 },
    #[error("{} admissible candidates are {separation:.3} m apart", candidates.len())]
    AmbiguousSolution {
        candidates: Vec<Position>,
        separation: f64,
    },
    #[error("GᵀG is rank deficient for a {rows}-row system (condition number {condition:.3e}); use solve_constrained for the two-pair case")]
    RankDeficient { rows: usize, condition: f64 },
    #[error("least-squares reference range is negative ({0:.3} m)")]
    NegativeReferenceRange(f64),
}

/// Range difference between a sniffer and the reference sniffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaPair {
    pub ref_sniffer: Position,
    pub other_sniffer: Position,
    /// `Δd_1k = d_UE,k - d_UE,1` (m).
    pub range_diff: f64,
    pub pair_id: String,
}

impl TdoaPair {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.pair_id = id.into();
        self
    }

    pub fn baseline(&self) -> f64 {
        distance(self.ref_sniffer, self.other_sniffer)
    }
}

/// Forms `Δd_1k` from the DL-UL deltas (s) of the reference sniffer and
/// sniffer `k`, recorded in the same subframe.
pub fn form_tdoa(
    delta_ref: f64,
    delta_k: f64,
    ref_sniffer: Position,
    other_sniffer: Position,
    enb: Position,
) -> Result<TdoaPair, TdoaError> {
    let d_enb_1 = distance(enb, ref_sniffer);
    let d_enb_k = distance(enb, other_sniffer);
    let range_diff = (d_enb_k - d_enb_1) - SPEED_OF_LIGHT * (delta_k - delta_ref);
    let pair = TdoaPair {
        ref_sniffer,
        other_sniffer,
        range_diff,
        pair_id: String::new(),
    };
    let baseline = pair.baseline();
    if !range_diff.is_finite() || range_diff.abs() > BASELINE_REJECT_FACTOR * baseline {
        return Err(TdoaError::BaselineViolation {
            pair_id: pair.pair_id,
            range_diff,
            baseline,
        });
    }
    Ok(pair)
}

/// `G θ = h` with rows `[x_k - x_1, y_k - y_1, Δd_1k]` and
/// `h_k = ((x_k² + y_k²) - (x_1² + y_1²) - Δd_1k²) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub g: Vec<[f64; 3]>,
    pub h: Vec<f64>,
    pub ref_sniffer: Position,
}

impl LinearSystem {
    pub fn rows(&self) -> usize {
        self.g.len()
    }

    /// `|G θ - h|` for `θ = [x, y, d]`.
    pub fn residual_norm(&self, position: Position, d_ue1: f64) -> f64 {
        self.g
            .iter()
            .zip(&self.h)
            .map(|(row, h)| {
                (row[0] * position.x + row[1] * position.y + row[2] * d_ue1 - h).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

pub fn build_system(pairs: &[TdoaPair]) -> Result<LinearSystem, TdoaError> {
    if pairs.len() < 2 {
        return Err(TdoaError::TooFewPairs {
            needed: 2,
            got: pairs.len(),
        });
    }
    let s1 = pairs[0].ref_sniffer;
    if let Some(p) = pairs.iter().find(|p| p.ref_sniffer != s1) {
        return Err(TdoaError::MixedReference {
            first: s1,
            other: p.ref_sniffer,
        });
    }
    let (g, h) = pairs
        .iter()
        .map(|p| {
            let sk = p.other_sniffer;
            let dd = p.range_diff;
            (
                [sk.x - s1.x, sk.y - s1.y, dd],
                0.5 * (sk.norm_squared() - s1.norm_squared() - dd * dd),
            )
        })
        .unzip();
    Ok(LinearSystem {
        g,
        h,
        ref_sniffer: s1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    ConstrainedElimination,
    NormalEquations,
}

impl fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ConstrainedElimination => "constrained-elimination",
            Self::NormalEquations => "normal-equations",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdoaEstimate {
    pub position: Position,
    /// Estimated UE to reference-sniffer range (m).
    pub d_ue1: f64,
    /// `|G θ - h|` at the estimate (m²).
    pub residual_norm: f64,
    pub method: SolveMethod,
    /// `|d_ue1 - |position - s_1||`; zero up to rounding for the
    /// constrained solver.
    pub reference_gap: f64,
    /// Admissible roots, preferred first (constrained solver only).
    pub candidates: Vec<Position>,
}

fn condition_2x2(a: [[f64; 2]; 2]) -> f64 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det == 0.0 {
        return f64::INFINITY;
    }
    // singular values of A from the eigenvalues of AᵀA
    let frob2 = a.iter().flatten().map(|v| v * v).sum::<f64>();
    let disc = (frob2 * frob2 - 4.0 * det * det).max(0.0).sqrt();
    let big = 0.5 * (frob2 + disc);
    let small = det * det / big;
    (big / small).sqrt()
}

/// Range-difference residuals `|u - s_k| - |u - s_1| - Δd_1k` of a system.
fn hyperbola_residuals(system: &LinearSystem, ref_sniffer: Position, u: Position) -> Vec<f64> {
    let d1 = distance(u, ref_sniffer);
    system
        .g
        .iter()
        .map(|row| distance(u, ref_sniffer + Position::new(row[0], row[1])) - d1 - row[2])
        .collect()
}

/// Newton steps on the two range-difference equations. The elimination
/// loses accuracy when `|w|` is close to 1; this restores it. A step that
/// does not lower the residual ends the polish.
fn polish(system: &LinearSystem, ref_sniffer: Position, mut u: Position) -> Position {
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut r = hyperbola_residuals(system, ref_sniffer, u);
    for _ in 0..POLISH_ITERATIONS {
        let unit = |v: Position| v * (1.0 / v.norm());
        let e1 = unit(u - ref_sniffer);
        let j: Vec<Position> = system
            .g
            .iter()
            .map(|row| unit(u - (ref_sniffer + Position::new(row[0], row[1]))) - e1)
            .collect();
        let det = j[0].cross(j[1]);
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let step = Position::new(
            (r[0] * j[1].y - r[1] * j[0].y) / det,
            (j[0].x * r[1] - j[1].x * r[0]) / det,
        );
        let next = u - step;
        let rn = hyperbola_residuals(system, ref_sniffer, next);
        if norm(&rn) >= norm(&r) || rn.iter().any(|x| x.is_nan()) {
            break;
        }
        u = next;
        r = rn;
        if step.norm() <= 1e-15 * (1.0 + u.norm()) {
            break;
        }
    }
    u
}

/// Solves the two-pair system exactly under `d_UE,1 = |u - s_1|`.
///
/// `(x_u, y_u)` is affine in `d_UE,1` through the 2x2 position block of `G`;
/// substituting into the range constraint leaves a quadratic. Roots with a
/// negative reference range, or placing the UE on the wrong hyperbola branch
/// (`Δd_1k + d_UE,1 < 0`), are discarded. Among the rest, candidates inside the
/// TA band are preferred, then the smaller range-difference residual.
pub fn solve_constrained(
    system: &LinearSystem,
    ref_sniffer: Position,
    band: TaBand,
    enb: Position,
) -> Result<TdoaEstimate, TdoaError> {
    solve_constrained_with(system, ref_sniffer, band, enb, 1.0)
}

pub fn solve_constrained_with(
    system: &LinearSystem,
    ref_sniffer: Position,
    band: TaBand,
    enb: Position,
    ambiguity_separation: f64,
) -> Result<TdoaEstimate, TdoaError> {
    if system.rows() != 2 {
        return Err(TdoaError::WrongRowCount(system.rows()));
    }
    let (r0, r1) = (system.g[0], system.g[1]);
    let a = [[r0[0], r0[1]], [r1[0], r1[1]]];
    let condition = condition_2x2(a);
    if !(condition <= CONDITION_LIMIT) {
        return Err(TdoaError::DegenerateGeometry { condition });
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = |b0: f64, b1: f64| {
        Position::new(
            (a[1][1] * b0 - a[0][1] * b1) / det,
            (a[0][0] * b1 - a[1][0] * b0) / det,
        )
    };
    // u(d) = u0 - w d
    let u0 = inv(system.h[0], system.h[1]);
    let w = inv(r0[2], r1[2]);
    let v = u0 - ref_sniffer;

    // |v - w d|² = d²
    let qa = w.norm_squared() - 1.0;
    let qb = -2.0 * v.dot(w);
    let qc = v.norm_squared();
    let scale = qb * qb + (4.0 * qa * qc).abs();

    let roots: Vec<f64> = if qa.abs() <= 1e-12 * (1.0 + w.norm_squared()) {
        if qb == 0.0 {
            return Err(TdoaError::NoRealRoot { discriminant: 0.0 });
        }
        vec![-qc / qb]
    } else {
        let mut disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            if disc < -DISCRIMINANT_TOLERANCE * scale {
                return Err(TdoaError::NoRealRoot { discriminant: disc });
            }
            disc = 0.0;
        }
        let sq = disc.sqrt();
        // stable pair of roots
        let q = -0.5 * (qb + qb.signum() * sq);
        let mut rs = Vec::with_capacity(2);
        if q != 0.0 {
            rs.push(qc / q);
        }
        rs.push(q / qa);
        if q == 0.0 {
            rs.push(0.0);
        }
        rs
    };

    let fit = |u: Position| {
        hyperbola_residuals(system, ref_sniffer, u)
            .iter()
            .map(|r| r * r)
            .sum::<f64>()
    };
    let mut cands: Vec<(Position, f64, f64)> = Vec::new();
    for d in roots {
        if !d.is_finite() || d < -ROOT_SLACK_M {
            continue;
        }
        let d = d.max(0.0);
        if system
            .g
            .iter()
            .any(|row| row[2] + d < -ROOT_SLACK_M * (1.0 + d))
        {
            continue;
        }
        let u = polish(system, ref_sniffer, u0 - w * d);
        let d = distance(u, ref_sniffer);
        if cands.iter().any(|c| distance(c.0, u) < 1e-9) {
            continue;
        }
        cands.push((u, d, fit(u)));
    }
    if cands.is_empty() {
        return Err(TdoaError::NoAdmissibleRoot);
    }

    let in_band = |u: Position| band.contains(distance(u, enb));
    cands.sort_by(|x, y| in_band(y.0).cmp(&in_band(x.0)).then(x.2.total_cmp(&y.2)));
    let positions: Vec<Position> = cands.iter().map(|c| c.0).collect();
    let admissible: Vec<Position> = positions.iter().copied().filter(|u| in_band(*u)).collect();
    if admissible.len() >= 2 {
        let separation = distance(admissible[0], admissible[1]);
        if separation > ambiguity_separation {
            return Err(TdoaError::AmbiguousSolution {
                candidates: positions,
                separation,
            });
        }
    }

    let (position, d_ue1, _) = cands[0];
    Ok(TdoaEstimate {
        position,
        d_ue1,
        residual_norm: system.residual_norm(position, d_ue1),
        method: SolveMethod::ConstrainedElimination,
        reference_gap: (d_ue1 - distance(position, ref_sniffer)).abs(),
        candidates: positions,
    })
}

/// Unconstrained least squares `θ = (GᵀG)⁻¹ Gᵀ h` for three or more pairs.
pub fn solve_normal_equations(system: &LinearSystem) -> Result<TdoaEstimate, TdoaError> {
    let rows = system.rows();
    if rows < 3 {
        return Err(TdoaError::RankDeficient {
            rows,
            condition: f64::INFINITY,
        });
    }
    let mut gtg = Matrix3::<f64>::zeros();
    let mut gth = Vector3::<f64>::zeros();
    for (row, &h) in system.g.iter().zip(&system.h) {
        let r = Vector3::new(row[0], row[1], row[2]);
        gtg += r * r.transpose();
        gth += r * h;
    }
    let sv = gtg.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(condition < CONDITION_LIMIT) {
        return Err(TdoaError::RankDeficient { rows, condition });
    }
    let theta = gtg
        .lu()
        .solve(&gth)
        .ok_or(TdoaError::RankDeficient { rows, condition })?;
    let position = Position::new(theta[0], theta[1]);
    let d_ue1 = theta[2];
    if d_ue1 < 0.0 {
        return Err(TdoaError::NegativeReferenceRange(d_ue1));
    }
    Ok(TdoaEstimate {
        position,
        d_ue1,
        residual_norm: system.residual_norm(position, d_ue1),
        method: SolveMethod::NormalEquations,
        reference_gap: (d_ue1 - distance(position, system.ref_sniffer)).abs(),
        candidates: vec![position],
    })
}

/// Matched samples of the reference sniffer (`delta_a`) and one other
/// sniffer (`delta_b`) captured while the other sniffer sat at `other`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub reference: Position,
    pub other: Position,
    pub samples: Vec<MatchedSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdoaOutcome {
    pub index: usize,
    /// Frame and subframe of the first set's sample.
    pub frame: u64,
    pub subframe: u8,
    pub result: Result<TdoaEstimate, TdoaError>,
}

/// Estimates one UE position per sample index, zipping the `i`-th matched
/// sample of every measurement set. Two sets use the constrained solver,
/// three or more the normal equations. Per-sample failures are reported in
/// place and do not stop the batch.
pub fn estimate_tdoa(
    sets: &[MeasurementSet],
    scenario: &Scenario,
) -> Result<Vec<TdoaOutcome>, TdoaError> {
    if sets.len() < 2 {
        return Err(TdoaError::TooFewPairs {
            needed: 2,
            got: sets.len(),
        });
    }
    let reference = sets[0].reference;
    if let Some(s) = sets.iter().find(|s| s.reference != reference) {
        return Err(TdoaError::MixedReference {
            first: reference,
            other: s.reference,
        });
    }
    let count = sets.iter().map(|s| s.samples.len()).min().unwrap_or(0);
    let enb = scenario.enb();
    let band = scenario.band();

    let outcomes = (0..count)
        .map(|i| {
            let result = sets
                .iter()
                .enumerate()
                .map(|(k, set)| {
                    let s = &set.samples[i];
                    form_tdoa(
                        s.delta_a_us * 1e-6,
                        s.delta_b_us * 1e-6,
                        reference,
                        set.other,
                        enb,
                    )
                    .map(|p| p.with_id(format!("1{}", k + 2)))
                    .map_err(|e| match e {
                        TdoaError::BaselineViolation {
                            range_diff,
                            baseline,
                            ..
                        } => TdoaError::BaselineViolation {
                            pair_id: format!("1{}", k + 2),
                            range_diff,
                            baseline,
                        },
                        other => other,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .and_then(|pairs| build_system(&pairs))
                .and_then(|system| {
                    if system.rows() == 2 {
                        solve_constrained(&system, reference, band, enb)
                    } else {
                        solve_normal_equations(&system)
                    }
                });
            let first = &sets[0].samples[i];
            TdoaOutcome {
                index: i,
                frame: first.frame,
                subframe: first.subframe,
                result,
            }
        })
        .collect();
    Ok(outcomes)
}
