//! Range-sum (ToA) localization from two sniffers.
//!
//! Each sniffer's DL-UL delta gives the range sum `|u - p| + |u - s_k| = D_k`,
//! an ellipse with foci at the eNb `p` and the sniffer `s_k`. The UE estimate
//! is an intersection of the two ellipses. Intersections are located by
//! scanning ellipse 1 by its eccentric angle for sign changes of ellipse 2's
//! residual, bracketing each root and polishing with Newton on the 2D system.

use crate::geometry::{distance, Position, Scenario, TaBand, SPEED_OF_LIGHT};
use std::f64::consts::TAU;
use thiserror::Error;

/// Range sums this far below the focal distance are treated as rounding.
const FEASIBILITY_SLACK_M: f64 = 1e-9;
const COLLINEAR_AREA_M2: f64 = 1e-6;
const DEDUP_DISTANCE_M: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToaError {
    #[error("range sum {range_sum:.6} m is shorter than the eNb-sniffer distance {focal:.6} m")]
    InfeasibleObservation { range_sum: f64, focal: f64 },
    #[error("ellipses do not intersect (smallest joint residual {min_residual:.3} m)")]
    NoIntersection { min_residual: f64 },
    #[error("{} candidates inside the TA band are {separation:.3} m apart", candidates.len())]
    AmbiguousSolution {
        candidates: Vec<Position>,
        separation: f64,
    },
}

/// One sniffer's range-sum constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToAObservation {
    pub sniffer: Position,
    /// `D_k`, the sum of UE-eNb and UE-sniffer distances (m).
    pub range_sum: f64,
}

impl ToAObservation {
    /// Builds `D = d_eNb,k - c * delta + c * ta`, rejecting range sums that
    /// no point in the plane can satisfy.
    pub fn from_delta(
        delta: f64,
        sniffer: Position,
        enb: Position,
        ta_seconds: f64,
    ) -> Result<Self, ToaError> {
        let focal = distance(enb, sniffer);
        let range_sum = focal - SPEED_OF_LIGHT * delta + SPEED_OF_LIGHT * ta_seconds;
        Self::checked(sniffer, range_sum, enb)
    }

    pub fn checked(sniffer: Position, range_sum: f64, enb: Position) -> Result<Self, ToaError> {
        let focal = distance(enb, sniffer);
        if !(range_sum >= focal - FEASIBILITY_SLACK_M) {
            return Err(ToaError::InfeasibleObservation { range_sum, focal });
        }
        Ok(Self {
            sniffer,
            range_sum: range_sum.max(focal),
        })
    }
}

/// Range-sum observation for a sniffer of `scenario`, using the timing
/// advance of the scenario's TA index.
pub fn compose_range_sum(
    delta: f64,
    sniffer: Position,
    scenario: &Scenario,
) -> Result<ToAObservation, ToaError> {
    ToAObservation::from_delta(delta, sniffer, scenario.enb(), scenario.ta_seconds())
}

/// `|u - p| + |u - s_k| - D_k`.
pub fn ellipse_residual(candidate: Position, obs: &ToAObservation, enb: Position) -> f64 {
    distance(candidate, enb) + distance(candidate, obs.sniffer) - obs.range_sum
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToAEstimate {
    pub position: Position,
    /// Largest absolute ellipse residual at `position` (m).
    pub residual: f64,
    /// Every intersection found, preferred first.
    pub candidates: Vec<Position>,
    /// eNb and both sniffers are (nearly) on one line; the two
    /// intersections mirror each other across it.
    pub collinear: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaOptions {
    /// Largest joint residual accepted when the ellipses only nearly touch (m).
    pub intersection_tolerance: f64,
    /// In-band candidates further apart than this are reported as ambiguous (m).
    pub ambiguity_separation: f64,
    pub scan_samples: usize,
    pub newton_tolerance: f64,
    pub max_newton_iterations: usize,
}

impl Default for ToaOptions {
    fn default() -> Self {
        Self {
            intersection_tolerance: 1.0,
            ambiguity_separation: 1.0,
            scan_samples: 720,
            newton_tolerance: 1e-9,
            max_newton_iterations: 50,
        }
    }
}

/// Ellipse with foci `p` and `s`, parametrized by eccentric angle.
struct Ellipse {
    center: Position,
    major_dir: Position,
    minor_dir: Position,
    a: f64,
    b: f64,
}

impl Ellipse {
    fn new(p: Position, s: Position, range_sum: f64) -> Self {
        let focal = distance(p, s);
        let major_dir = if focal > 0.0 {
            (s - p) * (1.0 / focal)
        } else {
            Position::new(1.0, 0.0)
        };
        let a = range_sum / 2.0;
        let half = focal / 2.0;
        Self {
            center: (p + s) * 0.5,
            major_dir,
            minor_dir: Position::new(-major_dir.y, major_dir.x),
            a,
            b: (a * a - half * half).max(0.0).sqrt(),
        }
    }

    fn point(&self, theta: f64) -> Position {
        self.center
            + self.major_dir * (self.a * theta.cos())
            + self.minor_dir * (self.b * theta.sin())
    }
}

fn joint_residual(u: Position, enb: Position, obs: [&ToAObservation; 2]) -> f64 {
    obs.iter()
        .map(|o| ellipse_residual(u, o, enb).abs())
        .fold(0.0, f64::max)
}

fn unit(v: Position) -> Option<Position> {
    let n = v.norm();
    (n > 0.0).then(|| v * (1.0 / n))
}

/// Newton on `F(u) = [res_1(u), res_2(u)]`. Returns the best iterate seen.
fn newton_polish(
    start: Position,
    enb: Position,
    obs: [&ToAObservation; 2],
    opts: &ToaOptions,
) -> Position {
    let mut u = start;
    let mut best = (joint_residual(u, enb, obs), u);
    for _ in 0..opts.max_newton_iterations {
        if best.0 <= opts.newton_tolerance * 1e-3 {
            break;
        }
        let (Some(gp), Some(g1), Some(g2)) = (
            unit(u - enb),
            unit(u - obs[0].sniffer),
            unit(u - obs[1].sniffer),
        ) else {
            break;
        };
        let (r1, r2) = (gp + g1, gp + g2);
        let det = r1.cross(r2);
        if det.abs() < 1e-12 {
            break;
        }
        let f1 = ellipse_residual(u, obs[0], enb);
        let f2 = ellipse_residual(u, obs[1], enb);
        // solve [r1; r2] * step = -[f1; f2]
        let step = Position::new(
            -(f1 * r2.y - f2 * r1.y) / det,
            -(r1.x * f2 - r2.x * f1) / det,
        );
        u = u + step;
        let res = joint_residual(u, enb, obs);
        if res < best.0 {
            best = (res, u);
        }
        if step.norm() < 1e-13 * (1.0 + u.norm()) {
            break;
        }
    }
    best.1
}

/// Root of `g` on `[lo, hi]` with `g(lo)`, `g(hi)` of opposite sign
/// (Illinois regula falsi, bisection-safe).
fn bracket_root(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let (mut glo, mut ghi) = (g(lo), g(hi));
    let mut side = 0i8;
    for _ in 0..200 {
        if (hi - lo).abs() < 1e-15 {
            break;
        }
        let mut x = (lo * ghi - hi * glo) / (ghi - glo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if (gx < 0.0) == (glo < 0.0) {
            lo = x;
            glo = gx;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            ghi = gx;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    if glo.abs() < ghi.abs() {
        lo
    } else {
        hi
    }
}

/// Minimizes `|g|` on `[lo, hi]` by golden-section search.
fn golden_min(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (g(x1).abs(), g(x2).abs());
    for _ in 0..200 {
        if (hi - lo).abs() < 1e-14 {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = g(x1).abs();
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = g(x2).abs();
        }
    }
    0.5 * (lo + hi)
}

fn push_unique(cands: &mut Vec<(Position, f64)>, u: Position, res: f64) {
    if let Some(existing) = cands
        .iter_mut()
        .find(|(c, _)| distance(*c, u) < DEDUP_DISTANCE_M)
    {
        if res < existing.1 {
            *existing = (u, res);
        }
    } else {
        cands.push((u, res));
    }
}

/// All intersections of the two ellipses with their joint residuals.
/// Falls back to the closest approach when no sign change is found.
fn intersections(
    obs1: &ToAObservation,
    obs2: &ToAObservation,
    enb: Position,
    opts: &ToaOptions,
) -> (Vec<(Position, f64)>, f64) {
    let e1 = Ellipse::new(enb, obs1.sniffer, obs1.range_sum);
    let obs = [obs1, obs2];
    let g = |theta: f64| ellipse_residual(e1.point(theta), obs2, enb);
    let n = opts.scan_samples.max(8);
    let thetas: Vec<f64> = (0..=n).map(|i| TAU * i as f64 / n as f64).collect();
    let values: Vec<f64> = thetas.iter().map(|&t| g(t)).collect();

    let mut cands = Vec::new();
    for i in 0..n {
        let (g0, g1) = (values[i], values[i + 1]);
        let theta = if g0 == 0.0 {
            thetas[i]
        } else if g0 * g1 < 0.0 {
            bracket_root(g, thetas[i], thetas[i + 1])
        } else {
            continue;
        };
        let u = newton_polish(e1.point(theta), enb, obs, opts);
        push_unique(&mut cands, u, joint_residual(u, enb, obs));
    }

    if cands.is_empty() {
        let i = (0..n)
            .min_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()))
            .unwrap_or(0);
        let lo = thetas[i] - TAU / n as f64;
        let hi = thetas[i] + TAU / n as f64;
        let theta = golden_min(g, lo, hi);
        let mut u = e1.point(theta);
        let mut res = joint_residual(u, enb, obs);
        if res <= opts.intersection_tolerance {
            let polished = newton_polish(u, enb, obs, opts);
            let pres = joint_residual(polished, enb, obs);
            if pres < res {
                u = polished;
                res = pres;
            }
            cands.push((u, res));
        }
        return (cands, res);
    }
    let min_res = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    (cands, min_res)
}

/// Intersects the two range-sum ellipses and picks the UE candidate:
/// candidates inside the TA band are preferred, then the smallest residual.
pub fn solve_toa(
    obs1: &ToAObservation,
    obs2: &ToAObservation,
    enb: Position,
    band: TaBand,
) -> Result<ToAEstimate, ToaError> {
    solve_toa_with(obs1, obs2, enb, band, &ToaOptions::default())
}

pub fn solve_toa_with(
    obs1: &ToAObservation,
    obs2: &ToAObservation,
    enb: Position,
    band: TaBand,
    opts: &ToaOptions,
) -> Result<ToAEstimate, ToaError> {
    for o in [obs1, obs2] {
        ToAObservation::checked(o.sniffer, o.range_sum, enb)?;
    }
    let collinear = 0.5 * (obs1.sniffer - enb).cross(obs2.sniffer - enb).abs() < COLLINEAR_AREA_M2;

    let (mut cands, min_res) = intersections(obs1, obs2, enb, opts);
    if cands.is_empty() || min_res > opts.intersection_tolerance {
        return Err(ToaError::NoIntersection {
            min_residual: min_res,
        });
    }

    let in_band = |u: &Position| band.contains(distance(*u, enb));
    cands.sort_by(|a, b| in_band(&b.0).cmp(&in_band(&a.0)).then(a.1.total_cmp(&b.1)));
    let positions: Vec<Position> = cands.iter().map(|c| c.0).collect();

    let admissible: Vec<Position> = positions.iter().copied().filter(in_band).collect();
    let separation = max_separation(&admissible);
    if admissible.len() >= 2 && separation > opts.ambiguity_separation {
        return Err(ToaError::AmbiguousSolution {
            candidates: positions,
            separation,
        });
    }

    let (position, residual) = cands[0];
    Ok(ToAEstimate {
        position,
        residual,
        candidates: positions,
        collinear,
    })
}

fn max_separation(points: &[Position]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(distance(*a, *b));
        }
    }
    best
}
