//! Planar positions, distances, timing-advance bands and the scenario
//! shared by the simulator and both estimators.
//!
//! All distances are meters and all times are seconds.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Mul, Sub};
use thiserror::Error;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Width of one timing-advance distance band (m).
pub const TA_BAND_STEP_M: f64 = 78.12;

/// LTE basic time unit Ts = 1 / 30.72 MHz (s).
pub const LTE_TS: f64 = 1.0 / 30_720_000.0;

/// Timing-advance granularity, 16 Ts (s).
pub const TA_STEP_S: f64 = 16.0 * LTE_TS;

/// A point in the local 2D plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dot(&self, other: Position) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(&self, other: Position) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn distance_to(&self, other: Position) -> f64 {
        distance(*self, other)
    }
}

impl From<[f64; 2]> for Position {
    fn from(v: [f64; 2]) -> Self {
        Position::new(v[0], v[1])
    }
}

impl From<Position> for [f64; 2] {
    fn from(p: Position) -> Self {
        [p.x, p.y]
    }
}

impl Add for Position {
    type Output = Position;
    fn add(self, rhs: Position) -> Position {
        Position::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Position {
    type Output = Position;
    fn sub(self, rhs: Position) -> Position {
        Position::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Position {
    type Output = Position;
    fn mul(self, rhs: f64) -> Position {
        Position::new(self.x * rhs, self.y * rhs)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Euclidean distance between two points.
pub fn distance(a: Position, b: Position) -> f64 {
    (a - b).norm()
}

/// Half-open distance interval `[lo, hi)` covered by a timing-advance index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaBand {
    pub lo: f64,
    pub hi: f64,
}

impl TaBand {
    pub fn contains(&self, range: f64) -> bool {
        range >= self.lo && range < self.hi
    }

    /// Like [`TaBand::contains`] but widened by `slack` meters on both edges.
    pub fn contains_with_slack(&self, range: f64, slack: f64) -> bool {
        range >= self.lo - slack && range < self.hi + slack
    }
}

impl From<TaBand> for (f64, f64) {
    fn from(b: TaBand) -> Self {
        (b.lo, b.hi)
    }
}

pub fn ta_band(ta_index: u32) -> TaBand {
    TaBand {
        lo: f64::from(ta_index) * TA_BAND_STEP_M,
        hi: f64::from(ta_index + 1) * TA_BAND_STEP_M,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario needs at least two sniffers, got {0}")]
    TooFewSniffers(usize),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("sniffer {index} coincides with the eNb position {position}")]
    SnifferAtEnb { index: usize, position: Position },
    #[error("UE at {range:.3} m from the eNb lies outside TA band {ta_index} [{lo:.2}, {hi:.2})")]
    UeOutsideBand {
        range: f64,
        ta_index: u32,
        lo: f64,
        hi: f64,
    },
}

/// Fixed deployment: eNb, sniffers and (for simulation) the true UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioSpec", into = "ScenarioSpec")]
pub struct Scenario {
    enb: Position,
    sniffers: Vec<Position>,
    ue_truth: Option<Position>,
    ta_index: u32,
}

/// Unvalidated on-disk form of [`Scenario`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub enb: Position,
    pub sniffers: Vec<Position>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ue_truth: Option<Position>,
    pub ta_index: u32,
}

impl TryFrom<ScenarioSpec> for Scenario {
    type Error = ScenarioError;
    fn try_from(s: ScenarioSpec) -> Result<Self, Self::Error> {
        Scenario::new(s.enb, s.sniffers, s.ue_truth, s.ta_index)
    }
}

impl From<Scenario> for ScenarioSpec {
    fn from(s: Scenario) -> Self {
        ScenarioSpec {
            enb: s.enb,
            sniffers: s.sniffers,
            ue_truth: s.ue_truth,
            ta_index: s.ta_index,
        }
    }
}

impl Scenario {
    pub fn new(
        enb: Position,
        sniffers: Vec<Position>,
        ue_truth: Option<Position>,
        ta_index: u32,
    ) -> Result<Self, ScenarioError> {
        if sniffers.len() < 2 {
            return Err(ScenarioError::TooFewSniffers(sniffers.len()));
        }
        if !enb.is_finite() {
            return Err(ScenarioError::NonFinite("enb"));
        }
        for (index, s) in sniffers.iter().enumerate() {
            if !s.is_finite() {
                return Err(ScenarioError::NonFinite("sniffers"));
            }
            if *s == enb {
                return Err(ScenarioError::SnifferAtEnb {
                    index,
                    position: *s,
                });
            }
        }
        if let Some(ue) = ue_truth {
            if !ue.is_finite() {
                return Err(ScenarioError::NonFinite("ue_truth"));
            }
            let range = distance(ue, enb);
            let band = ta_band(ta_index);
            if !band.contains(range) {
                return Err(ScenarioError::UeOutsideBand {
                    range,
                    ta_index,
                    lo: band.lo,
                    hi: band.hi,
                });
            }
        }
        Ok(Self {
            enb,
            sniffers,
            ue_truth,
            ta_index,
        })
    }

    pub fn enb(&self) -> Position {
        self.enb
    }

    pub fn sniffers(&self) -> &[Position] {
        &self.sniffers
    }

    pub fn ue_truth(&self) -> Option<Position> {
        self.ue_truth
    }

    pub fn ta_index(&self) -> u32 {
        self.ta_index
    }

    pub fn band(&self) -> TaBand {
        ta_band(self.ta_index)
    }

    /// Timing advance implied by the scenario's TA index (s).
    pub fn ta_seconds(&self) -> f64 {
        f64::from(self.ta_index) * TA_STEP_S
    }

    pub fn speed_of_light(&self) -> f64 {
        SPEED_OF_LIGHT
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        assert_eq!(
            distance(Position::new(0.0, 0.0), Position::new(3.0, 4.0)),
            5.0
        );
        assert_eq!(
            distance(Position::new(7.0, -2.0), Position::new(7.0, -2.0)),
            0.0
        );
        // sqrt(1600 + 900)
        assert_eq!(distance(Position::ORIGIN, Position::new(40.0, 30.0)), 50.0);
    }

    #[test]
    fn ta_band_examples() {
        let b1 = ta_band(1);
        assert!((b1.lo - 78.12).abs() < 1e-12 && (b1.hi - 156.24).abs() < 1e-12);
        assert_eq!(ta_band(0), TaBand { lo: 0.0, hi: 78.12 });
        let b2 = ta_band(2);
        assert!((b2.lo - 156.24).abs() < 1e-12 && (b2.hi - 234.36).abs() < 1e-12);
        assert!(b1.contains(114.70));
        assert!(!b1.contains(b1.hi));
    }

    #[test]
    fn scenario_validation() {
        let enb = Position::ORIGIN;
        let s = vec![Position::new(100.0, 0.0), Position::new(0.0, 100.0)];
        assert!(Scenario::new(enb, s.clone(), Some(Position::new(40.0, 30.0)), 0).is_ok());
        assert_eq!(
            Scenario::new(enb, vec![s[0]], None, 0),
            Err(ScenarioError::TooFewSniffers(1))
        );
        assert!(matches!(
            Scenario::new(enb, vec![s[0], enb], None, 0),
            Err(ScenarioError::SnifferAtEnb { index: 1, .. })
        ));
        assert!(matches!(
            Scenario::new(enb, s, Some(Position::new(40.0, 30.0)), 1),
            Err(ScenarioError::UeOutsideBand { .. })
        ));
    }

    #[test]
    fn scenario_from_toml() {
        let text = r#"
            enb = [0.0, 0.0]
            sniffers = [[100.0, 0.0], [0.0, 100.0]]
            ue_truth = [40.0, 30.0]
            ta_index = 0
        "#;
        let s: Scenario = toml::from_str(text).unwrap();
        assert_eq!(s.sniffers()[1], Position::new(0.0, 100.0));
        assert_eq!(s.ue_truth(), Some(Position::new(40.0, 30.0)));

        let bad = text.replace("ta_index = 0", "ta_index = 3");
        assert!(toml::from_str::<Scenario>(&bad).is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1.0e4..1.0e4
    }

    proptest! {
        #[test]
        fn triangle_inequality(ax in finite(), ay in finite(), bx in finite(), by in finite(), cx in finite(), cy in finite()) {
            let (a, b, c) = (Position::new(ax, ay), Position::new(bx, by), Position::new(cx, cy));
            prop_assert!(distance(a, c) <= distance(a, b) + distance(b, c) + 1e-9);
            prop_assert_eq!(distance(a, b), distance(b, a));
            prop_assert!(distance(a, b) >= 0.0);
        }

        #[test]
        fn bands_tile(k in 0u32..10_000) {
            prop_assert_eq!(ta_band(k).hi, ta_band(k + 1).lo);
            prop_assert!(ta_band(k).lo < ta_band(k).hi);
        }
    }
}
