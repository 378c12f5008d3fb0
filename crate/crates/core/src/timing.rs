//! Forward model of the eNb, UE and sniffer clocks.
//!
//! The eNb is the reference clock. Each sniffer sees the downlink subframe
//! after `d_eNb,k / c` plus its own constant offset, and the UE's uplink
//! after the UE transmit time plus `d_UE,k / c` plus the same offset. The
//! per-sniffer DL-UL difference is what the sniffer logs report.

use crate::geometry::{distance, Position, Scenario, SPEED_OF_LIGHT, TA_BAND_STEP_M, TA_STEP_S};
use crate::snifflog::TimingRecord;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Subframe period (s).
pub const SUBFRAME_PERIOD_S: f64 = 1.0e-3;

/// System frame numbers wrap at this value.
pub const SFN_MODULUS: u64 = 1024;

/// Noise power written into simulated records (dBm).
pub const SIMULATED_NOISE_DBM: f64 = -95.0;

#[derive(Debug, Error, PartialEq)]
pub enum TimingError {
    #[error("scenario has no ue_truth; simulation needs the true UE position")]
    MissingGroundTruth,
    #[error("sniffer index {index} out of range ({count} sniffers)")]
    UnknownSniffer { index: usize, count: usize },
    #[error("relocation at subframe {at} is outside the capture (1..{count})")]
    RelocationOutOfRange { at: u64, count: u64 },
    #[error("{expected} sniffer offsets required, got {got}")]
    OffsetCount { expected: usize, got: usize },
    #[error("invalid clock configuration: {0}")]
    InvalidClock(String),
    #[error("subframe schedule needs at least one subframe")]
    EmptySchedule,
}

/// Clock and noise parameters of one capture run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockConfig {
    /// Constant offset of each sniffer clock w.r.t. the eNb (s).
    pub sniffer_offsets: Vec<f64>,
    /// UE hardware timing error (s).
    #[serde(default)]
    pub ue_hw_error: f64,
    /// Standard deviation of the per-record sniffer measurement error (s).
    #[serde(default)]
    pub sniffer_noise_sigma: f64,
    /// Timing advance applied by the UE (s).
    #[serde(default)]
    pub ta_value: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl ClockConfig {
    /// Noise-free clocks with the timing advance implied by the scenario.
    pub fn ideal(scenario: &Scenario) -> Self {
        Self {
            sniffer_offsets: vec![0.0; scenario.sniffers().len()],
            ue_hw_error: 0.0,
            sniffer_noise_sigma: 0.0,
            ta_value: scenario.ta_seconds(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self, sniffer_count: usize) -> Result<(), TimingError> {
        if self.sniffer_offsets.len() != sniffer_count {
            return Err(TimingError::OffsetCount {
                expected: sniffer_count,
                got: self.sniffer_offsets.len(),
            });
        }
        if !(self.sniffer_noise_sigma >= 0.0 && self.sniffer_noise_sigma.is_finite()) {
            return Err(TimingError::InvalidClock(format!(
                "sniffer_noise_sigma must be finite and >= 0, got {}",
                self.sniffer_noise_sigma
            )));
        }
        if !self.ue_hw_error.is_finite() || !self.ta_value.is_finite() {
            return Err(TimingError::InvalidClock(
                "non-finite ue_hw_error or ta_value".into(),
            ));
        }
        if self.sniffer_offsets.iter().any(|o| !o.is_finite()) {
            return Err(TimingError::InvalidClock(
                "non-finite sniffer offset".into(),
            ));
        }
        Ok(())
    }
}

/// Maps an SNR in dB to a sniffer timing-noise standard deviation:
/// `sigma0 * 10^(-snr/20)`.
pub fn sigma_for_snr(sigma0: f64, snr_db: f64) -> f64 {
    sigma0 * 10f64.powf(-snr_db / 20.0)
}

/// The eNb subframe grid `t_n = n * 1 ms` for `n < count`, plus the
/// per-record labels written into simulated logs.
#[derive(Debug, Clone, PartialEq)]
pub struct SubframeSchedule {
    pub count: u64,
    pub rnti: u16,
    pub snr_db: f64,
}

impl SubframeSchedule {
    pub fn new(count: u64, rnti: u16) -> Self {
        Self {
            count,
            rnti,
            snr_db: 20.0,
        }
    }

    pub fn period(&self) -> f64 {
        SUBFRAME_PERIOD_S
    }

    pub fn time_of(&self, n: u64) -> f64 {
        n as f64 * SUBFRAME_PERIOD_S
    }
}

/// UE uplink transmit time for the downlink subframe sent at `t_n`.
pub fn ue_tx_time(t_n: f64, d_ub: f64, cfg: &ClockConfig) -> f64 {
    t_n + d_ub / SPEED_OF_LIGHT - cfg.ta_value + cfg.ue_hw_error
}

/// Downlink arrival at a sniffer, on the sniffer's clock.
pub fn dl_arrival(t_n: f64, d_enb_k: f64, offset_k: f64) -> f64 {
    t_n + d_enb_k / SPEED_OF_LIGHT + offset_k
}

/// Uplink arrival at a sniffer, on the sniffer's clock.
pub fn ul_arrival(t_n: f64, d_ub: f64, d_ue_k: f64, offset_k: f64, cfg: &ClockConfig) -> f64 {
    t_n + d_ub / SPEED_OF_LIGHT - cfg.ta_value
        + cfg.ue_hw_error
        + d_ue_k / SPEED_OF_LIGHT
        + offset_k
}

/// DL-UL subframe timing difference seen by a sniffer at `sniffer`.
///
/// The subframe time and the sniffer clock offset cancel, so neither is an
/// input.
pub fn delta_for_geometry(
    enb: Position,
    ue: Position,
    sniffer: Position,
    cfg: &ClockConfig,
    noise_sample: f64,
) -> f64 {
    let d_enb_k = distance(enb, sniffer);
    let d_ub = distance(ue, enb);
    let d_ue_k = distance(ue, sniffer);
    (d_enb_k - d_ub - d_ue_k) / SPEED_OF_LIGHT + cfg.ta_value - cfg.ue_hw_error + noise_sample
}

/// [`delta_for_geometry`] for sniffer `k` of the scenario.
pub fn subframe_delta(
    scenario: &Scenario,
    k: usize,
    cfg: &ClockConfig,
    noise_sample: f64,
) -> Result<f64, TimingError> {
    let ue = scenario.ue_truth().ok_or(TimingError::MissingGroundTruth)?;
    let sniffer = *scenario
        .sniffers()
        .get(k)
        .ok_or(TimingError::UnknownSniffer {
            index: k,
            count: scenario.sniffers().len(),
        })?;
    Ok(delta_for_geometry(
        scenario.enb(),
        ue,
        sniffer,
        cfg,
        noise_sample,
    ))
}

/// Timing-advance index and the corresponding advance (s) for a UE at
/// `d_ub` meters from the eNb.
pub fn quantize_ta(d_ub: f64) -> (u32, f64) {
    let index = (d_ub / TA_BAND_STEP_M).floor().max(0.0) as u32;
    (index, f64::from(index) * TA_STEP_S)
}

/// Moves sniffer `sniffer` to `position` starting at subframe `at_subframe`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relocation {
    pub sniffer: usize,
    pub at_subframe: u64,
    pub position: Position,
}

/// A span of subframes during which every sniffer stays put.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub index: usize,
    pub start: u64,
    pub end: u64,
    pub positions: Vec<Position>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelocationPlan {
    pub moves: Vec<Relocation>,
}

impl RelocationPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(moves: Vec<Relocation>) -> Self {
        Self { moves }
    }

    pub fn validate(&self, sniffer_count: usize, subframes: u64) -> Result<(), TimingError> {
        for m in &self.moves {
            if m.sniffer >= sniffer_count {
                return Err(TimingError::UnknownSniffer {
                    index: m.sniffer,
                    count: sniffer_count,
                });
            }
            if m.at_subframe == 0 || m.at_subframe >= subframes {
                return Err(TimingError::RelocationOutOfRange {
                    at: m.at_subframe,
                    count: subframes,
                });
            }
            if !m.position.is_finite() {
                return Err(TimingError::InvalidClock(
                    "non-finite relocation position".into(),
                ));
            }
        }
        Ok(())
    }

    /// Splits `[0, subframes)` at every relocation boundary.
    pub fn configurations(&self, initial: &[Position], subframes: u64) -> Vec<Configuration> {
        let mut moves = self.moves.clone();
        moves.sort_by_key(|m| m.at_subframe);
        let mut positions = initial.to_vec();
        let mut out = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < moves.len() {
            let at = moves[i].at_subframe;
            if at > start {
                out.push(Configuration {
                    index: out.len(),
                    start,
                    end: at,
                    positions: positions.clone(),
                });
                start = at;
            }
            while i < moves.len() && moves[i].at_subframe == at {
                positions[moves[i].sniffer] = moves[i].position;
                i += 1;
            }
        }
        out.push(Configuration {
            index: out.len(),
            start,
            end: subframes,
            positions,
        });
        out
    }
}

/// One simulated log entry together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRecord {
    pub subframe_index: u64,
    pub sniffer: usize,
    pub configuration: usize,
    pub record: TimingRecord,
}

/// Rough SNR to CQI mapping used only to fill the CQI column of simulated logs.
pub fn nominal_cqi(snr_db: f64) -> u8 {
    ((snr_db + 6.0) / 2.0).round().clamp(0.0, 15.0) as u8
}

fn record_rng(seed: u64, subframe: u64, sniffer: usize) -> ChaCha8Rng {
    // splitmix64 over the triple keeps each draw independent of batch order
    let mut z = seed
        .wrapping_add(subframe.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((sniffer as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Per-record sniffer measurement error for `(seed, subframe, sniffer)`.
pub fn noise_sample(cfg: &ClockConfig, subframe: u64, sniffer: usize) -> f64 {
    if cfg.sniffer_noise_sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, cfg.sniffer_noise_sigma).expect("sigma validated");
    normal.sample(&mut record_rng(cfg.rng_seed, subframe, sniffer))
}

/// Simulates every sniffer's log over the schedule, moving sniffers per the
/// relocation plan. Records are ordered by subframe, then sniffer.
pub fn simulate_capture(
    scenario: &Scenario,
    cfg: &ClockConfig,
    schedule: &SubframeSchedule,
    plan: &RelocationPlan,
) -> Result<Vec<SimulatedRecord>, TimingError> {
    let ue = scenario.ue_truth().ok_or(TimingError::MissingGroundTruth)?;
    let count = scenario.sniffers().len();
    if schedule.count == 0 {
        return Err(TimingError::EmptySchedule);
    }
    cfg.validate(count)?;
    plan.validate(count, schedule.count)?;

    let cqi = nominal_cqi(schedule.snr_db);
    let mut out = Vec::with_capacity(schedule.count as usize * count);
    for conf in plan.configurations(scenario.sniffers(), schedule.count) {
        for n in conf.start..conf.end {
            let frame = (n / 10) % SFN_MODULUS;
            let subframe = (n % 10) as u8;
            for (k, &pos) in conf.positions.iter().enumerate() {
                let eps = noise_sample(cfg, n, k);
                let delta = delta_for_geometry(scenario.enb(), ue, pos, cfg, eps);
                out.push(SimulatedRecord {
                    subframe_index: n,
                    sniffer: k,
                    configuration: conf.index,
                    record: TimingRecord {
                        frame,
                        subframe,
                        rnti: schedule.rnti,
                        dl_ul_delta_us: delta * 1e6,
                        snr_db: schedule.snr_db,
                        cqi,
                        noise_power_dbm: SIMULATED_NOISE_DBM,
                        sniffer_id: format!("sn{}", k + 1),
                    },
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ta_band;
    use proptest::prelude::*;

    const C: f64 = SPEED_OF_LIGHT;

    fn zero_cfg(n: usize) -> ClockConfig {
        ClockConfig {
            sniffer_offsets: vec![0.0; n],
            ue_hw_error: 0.0,
            sniffer_noise_sigma: 0.0,
            ta_value: 0.0,
            rng_seed: 1,
        }
    }

    fn scenario(ue: Position, sniffers: Vec<Position>) -> Scenario {
        let (idx, _) = quantize_ta(ue.norm());
        Scenario::new(Position::ORIGIN, sniffers, Some(ue), idx).unwrap()
    }

    #[test]
    fn ue_tx_time_examples() {
        let cfg = zero_cfg(2);
        assert_eq!(ue_tx_time(0.0, 0.0, &cfg), 0.0);
        let t = ue_tx_time(0.001, C * 1e-6, &cfg);
        assert!((t - (0.001 + 1e-6)).abs() < 1e-18);

        let (_, ta) = quantize_ta(114.70);
        let cfg = ClockConfig {
            ta_value: ta,
            ..zero_cfg(2)
        };
        assert_eq!(ue_tx_time(0.0, 114.70, &cfg), 114.70 / C - ta);
    }

    #[test]
    fn dl_arrival_examples() {
        assert_eq!(dl_arrival(0.0, 0.0, 0.0), 0.0);
        assert!((dl_arrival(0.0, 299.792458, 0.0) - 1.0e-6).abs() < 1e-20);
        assert_eq!(dl_arrival(0.0, 109.70, 5e-6), 109.70 / C + 5e-6);
    }

    #[test]
    fn ul_arrival_composes() {
        let cfg = ClockConfig {
            ue_hw_error: 3e-8,
            ta_value: TA_STEP_S,
            ..zero_cfg(2)
        };
        assert_eq!(ul_arrival(0.0, 0.0, 0.0, 0.0, &zero_cfg(1)), 0.0);
        for &(t, dub, duk, off) in &[(0.0, 114.7, 30.0, 2e-6), (0.5, 10.0, 250.0, -4e-6)] {
            let composed = ue_tx_time(t, dub, &cfg) + duk / C + off;
            assert!((ul_arrival(t, dub, duk, off, &cfg) - composed).abs() < 1e-15);
        }
    }

    #[test]
    fn subframe_delta_examples() {
        let cfg = zero_cfg(1 + 1);
        let collinear = scenario(
            Position::new(50.0, 0.0),
            vec![Position::new(100.0, 0.0), Position::new(0.0, 100.0)],
        );
        assert_eq!(subframe_delta(&collinear, 0, &cfg, 0.0).unwrap(), 0.0);

        let s = scenario(
            Position::new(40.0, 30.0),
            vec![Position::new(100.0, 0.0), Position::new(0.0, 100.0)],
        );
        let d = subframe_delta(&s, 0, &cfg, 0.0).unwrap();
        let expected = (100.0 - 50.0 - 4500f64.sqrt()) / C;
        assert!((d - expected).abs() < 1e-20);

        let no_truth = Scenario::new(Position::ORIGIN, s.sniffers().to_vec(), None, 0).unwrap();
        assert_eq!(
            subframe_delta(&no_truth, 0, &cfg, 0.0),
            Err(TimingError::MissingGroundTruth)
        );
        assert!(matches!(
            subframe_delta(&s, 5, &cfg, 0.0),
            Err(TimingError::UnknownSniffer { index: 5, .. })
        ));
    }

    #[test]
    fn quantize_ta_examples() {
        assert_eq!(quantize_ta(114.70).0, 1);
        assert_eq!(quantize_ta(0.0), (0, 0.0));
        assert_eq!(quantize_ta(156.24).0, 2);
        assert!(ta_band(quantize_ta(114.70).0).contains(114.70));
    }

    #[test]
    fn sigma_mapping_is_monotone() {
        let s15 = sigma_for_snr(1e-7, 15.0);
        let s20 = sigma_for_snr(1e-7, 20.0);
        assert!(s20 < s15);
        assert!((s20 - 1e-8).abs() < 1e-22);
    }

    fn two_sniffer() -> Scenario {
        scenario(
            Position::new(40.0, 30.0),
            vec![Position::new(100.0, 0.0), Position::new(0.0, 100.0)],
        )
    }

    #[test]
    fn noiseless_capture_is_constant_per_sniffer() {
        let s = two_sniffer();
        let cfg = ClockConfig::ideal(&s);
        let recs = simulate_capture(
            &s,
            &cfg,
            &SubframeSchedule::new(10, 7),
            &RelocationPlan::none(),
        )
        .unwrap();
        assert_eq!(recs.len(), 20);
        for k in 0..2 {
            let first = recs
                .iter()
                .find(|r| r.sniffer == k)
                .unwrap()
                .record
                .dl_ul_delta_us;
            assert!(recs
                .iter()
                .filter(|r| r.sniffer == k)
                .all(|r| r.record.dl_ul_delta_us == first));
        }
    }

    #[test]
    fn seeded_capture_is_reproducible() {
        let s = two_sniffer();
        let cfg = ClockConfig {
            sniffer_noise_sigma: 2e-8,
            rng_seed: 99,
            ..ClockConfig::ideal(&s)
        };
        let sched = SubframeSchedule::new(50, 7);
        let a = simulate_capture(&s, &cfg, &sched, &RelocationPlan::none()).unwrap();
        let b = simulate_capture(&s, &cfg, &sched, &RelocationPlan::none()).unwrap();
        assert_eq!(a, b);
        let other = ClockConfig {
            rng_seed: 100,
            ..cfg
        };
        let c = simulate_capture(&s, &other, &sched, &RelocationPlan::none()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn relocation_switches_geometry() {
        let s = two_sniffer();
        let cfg = ClockConfig::ideal(&s);
        let s3 = Position::new(100.0, 100.0);
        let plan = RelocationPlan::new(vec![Relocation {
            sniffer: 1,
            at_subframe: 5,
            position: s3,
        }]);
        let recs = simulate_capture(&s, &cfg, &SubframeSchedule::new(10, 7), &plan).unwrap();
        let ue = s.ue_truth().unwrap();
        let before = delta_for_geometry(s.enb(), ue, s.sniffers()[1], &cfg, 0.0) * 1e6;
        let after = delta_for_geometry(s.enb(), ue, s3, &cfg, 0.0) * 1e6;
        for r in recs.iter().filter(|r| r.sniffer == 1) {
            let expected = if r.subframe_index < 5 { before } else { after };
            assert_eq!(r.record.dl_ul_delta_us, expected);
            assert_eq!(r.configuration, usize::from(r.subframe_index >= 5));
        }
    }

    #[test]
    fn relocation_plan_rejects_bad_moves() {
        let s = two_sniffer();
        let cfg = ClockConfig::ideal(&s);
        let sched = SubframeSchedule::new(10, 7);
        let unknown = RelocationPlan::new(vec![Relocation {
            sniffer: 2,
            at_subframe: 5,
            position: Position::ORIGIN,
        }]);
        assert!(matches!(
            simulate_capture(&s, &cfg, &sched, &unknown),
            Err(TimingError::UnknownSniffer { index: 2, .. })
        ));
        let late = RelocationPlan::new(vec![Relocation {
            sniffer: 1,
            at_subframe: 10,
            position: Position::ORIGIN,
        }]);
        assert!(matches!(
            simulate_capture(&s, &cfg, &sched, &late),
            Err(TimingError::RelocationOutOfRange { at: 10, .. })
        ));
    }

    #[test]
    fn configurations_split_at_boundaries() {
        let init = [Position::new(1.0, 0.0), Position::new(2.0, 0.0)];
        let plan = RelocationPlan::new(vec![
            Relocation {
                sniffer: 1,
                at_subframe: 8,
                position: Position::new(4.0, 0.0),
            },
            Relocation {
                sniffer: 1,
                at_subframe: 4,
                position: Position::new(3.0, 0.0),
            },
        ]);
        let confs = plan.configurations(&init, 12);
        assert_eq!(confs.len(), 3);
        assert_eq!((confs[1].start, confs[1].end), (4, 8));
        assert_eq!(confs[2].positions[1], Position::new(4.0, 0.0));
    }

    fn pos() -> impl Strategy<Value = Position> {
        (-500.0..500.0f64, -500.0..500.0f64).prop_map(|(x, y)| Position::new(x, y))
    }

    proptest! {
        #[test]
        fn delta_decomposes_and_ignores_offsets(
            ue in pos(), sn in pos(), t_n in 0.0..30.0f64,
            off in -1e-5..1e-5f64, eue in -1e-6..1e-6f64, ta in 0.0..5e-6f64, eps in -1e-7..1e-7f64,
        ) {
            let enb = Position::ORIGIN;
            let cfg = ClockConfig { sniffer_offsets: vec![off], ue_hw_error: eue, sniffer_noise_sigma: 0.0, ta_value: ta, rng_seed: 0 };
            let d_enb = distance(enb, sn);
            let d_ub = distance(ue, enb);
            let d_ue = distance(ue, sn);
            let delta = delta_for_geometry(enb, ue, sn, &cfg, eps);
            // Arrival times carry t_n, so compare at the precision t_n allows.
            let via_arrivals = dl_arrival(t_n, d_enb, off) - ul_arrival(t_n, d_ub, d_ue, off, &cfg) + eps;
            let tol = 4.0 * f64::EPSILON * (t_n + 1e-5);
            prop_assert!((delta - via_arrivals).abs() <= tol, "{} vs {}", delta, via_arrivals);
            let at_zero = dl_arrival(0.0, d_enb, 0.0) - ul_arrival(0.0, d_ub, d_ue, 0.0, &cfg) + eps;
            prop_assert!((delta - at_zero).abs() <= 1e-20);
        }

        #[test]
        fn range_sum_identity_holds_without_noise(ue in pos(), sn in pos(), ta in 0.0..5e-6f64) {
            let enb = Position::ORIGIN;
            let cfg = ClockConfig { sniffer_offsets: vec![0.0], ue_hw_error: 0.0, sniffer_noise_sigma: 0.0, ta_value: ta, rng_seed: 0 };
            let delta = delta_for_geometry(enb, ue, sn, &cfg, 0.0);
            let lhs = distance(ue, enb) + distance(ue, sn);
            let rhs = distance(enb, sn) - C * delta + C * ta;
            prop_assert!((lhs - rhs).abs() < 1e-8);
        }
    }
}
