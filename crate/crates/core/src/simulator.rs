//! Synthetic board telemetry under constant-rate gamma irradiation.
//!
//! A run has three phases, all sampled at 1 Hz:
//!
//! 1. normal operation: every rail sits at its nominal voltage plus Gaussian
//!    noise, temperatures at their baselines plus noise;
//! 2. degradation: once the accumulated dose reaches `failure_dose -
//!    window_dose`, voltage means drift, noise inflates and temperatures ramp,
//!    all in proportion to `(dose - onset) / window_dose`;
//! 3. death: at `failure_dose` the rails collapse to 0 V and the monitor keeps
//!    logging for `shutdown_gap_s` seconds before the series ends.
//!
//! The failure dose is drawn once per run from a normal distribution, which
//! reproduces the inverse relation between dose rate and time-to-failure.
//!
//! Randomness comes from a ChaCha8 stream seeded with the scenario seed
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`). Draw order is fixed: the failure
//! dose first, then for every sample the dropout uniform followed by seven
//! standard normals in channel order. Optional per-board level offsets come
//! from stream 1 of the same seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{BoardRun, ChannelId, Origin, TelemetryRecord, TelemetrySeries, NUM_CHANNELS};

/// Mean and sample standard deviation of rate x time-to-failure over the six
/// measured boards (Gy).
pub const DEFAULT_FAILURE_DOSE_MEAN: f64 = 1912.96;
pub const DEFAULT_FAILURE_DOSE_SIGMA: f64 = 269.23;
/// Mean rate x out-of-bounds window over the five high-rate boards (Gy).
pub const DEFAULT_WINDOW_DOSE: f64 = 728.79;
/// Rate x 74 min for the low-rate board, whose window was far longer.
pub const LOW_RATE_WINDOW_DOSE: f64 = 1491.1;
/// Mean gap between DUT death and the monitor reading zero (s).
pub const DEFAULT_SHUTDOWN_GAP_S: f64 = 159.0;
/// Dose rates of the six reference experiments (Gy/h).
pub const REFERENCE_RATES: [f64; 6] = [1209.0, 2469.0, 5137.0, 5871.0, 7707.0, 16966.0];

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("board dies at {death_s:.1} s, beyond the {horizon_s} s horizon")]
    HorizonTooShort { death_s: f64, horizon_s: f64 },
}

/// Parameters for one simulated irradiation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiationScenario {
    /// Dose rate in Gy/h.
    pub rate: f64,
    pub seed: u64,
    /// Longest run the simulator will produce, in seconds.
    pub horizon: f64,
    /// Per-channel noise standard deviation (degC or V), in channel order.
    pub noise_sigma: [f64; NUM_CHANNELS],
    pub failure_dose_mean: f64,
    pub failure_dose_sigma: f64,
    pub window_dose: f64,
    /// Noise multiplier growth: sigma scales by `1 + drift_gain * progress`.
    pub drift_gain: f64,
    /// Mean shift reached at death, in units of each channel's noise sigma.
    pub drift_sigmas: [f64; NUM_CHANNELS],
    /// Normal-phase temperatures (t_pmic, t_fpga) in degC.
    pub temperature_baseline: [f64; 2],
    pub shutdown_gap_s: f64,
    /// Probability that a sample's temperature reads as undefined.
    pub dropout_prob: f64,
    /// Spread of a per-board level offset, in units of each channel's noise
    /// sigma. Zero keeps every board at nominal.
    pub board_offset_sigmas: [f64; NUM_CHANNELS],
}

impl Default for RadiationScenario {
    fn default() -> Self {
        Self {
            rate: REFERENCE_RATES[0],
            seed: 0,
            horizon: 6.0 * 3600.0,
            // Not measured; eyeballed from typical rail ripple and
            // thermocouple jitter.
            noise_sigma: [0.25, 0.25, 0.004, 0.006, 0.005, 0.003, 0.010],
            failure_dose_mean: DEFAULT_FAILURE_DOSE_MEAN,
            failure_dose_sigma: DEFAULT_FAILURE_DOSE_SIGMA,
            window_dose: DEFAULT_WINDOW_DOSE,
            drift_gain: 2.0,
            // v_aux and v_ddr3 carry the drift, temperatures ramp up and the
            // remaining rails only get noisier.
            drift_sigmas: [4.0, 4.0, 0.0, 10.0, -8.0, 0.0, 0.0],
            temperature_baseline: [38.0, 45.0],
            shutdown_gap_s: DEFAULT_SHUTDOWN_GAP_S,
            dropout_prob: 0.002,
            board_offset_sigmas: [0.0; NUM_CHANNELS],
        }
    }
}

impl RadiationScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return bad(format!("rate must be positive, got {}", self.rate));
        }
        if !(self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.window_dose > 0.0 && self.failure_dose_mean > self.window_dose) {
            return bad(format!(
                "need failure_dose_mean ({}) > window_dose ({}) > 0",
                self.failure_dose_mean, self.window_dose
            ));
        }
        if !(self.failure_dose_sigma >= 0.0) {
            return bad("failure_dose_sigma must be non-negative".into());
        }
        if self.noise_sigma.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise_sigma entries must be non-negative".into());
        }
        if !(self.drift_gain >= 0.0) || !(self.shutdown_gap_s >= 0.0) {
            return bad("drift_gain and shutdown_gap_s must be non-negative".into());
        }
        if self.board_offset_sigmas.iter().any(|s| !(*s >= 0.0)) {
            return bad("board_offset_sigmas entries must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout_prob must be in [0, 1), got {}", self.dropout_prob));
        }
        Ok(())
    }

    /// Accumulated dose (Gy) after `t` seconds at the constant rate.
    pub fn dose_at(&self, t: f64) -> f64 {
        dose_at(self.rate, t)
    }

    /// Seconds needed to accumulate `dose` Gy.
    pub fn time_for_dose(&self, dose: f64) -> f64 {
        dose / self.rate * 3600.0
    }

    /// The failure dose this scenario's seed produces.
    pub fn failure_dose(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.draw_failure_dose(&mut rng)
    }

    /// Per-channel level offsets of this board. Drawn from stream 1 of the
    /// seed so the main sample stream is the same with or without them.
    pub fn board_offsets(&self) -> [f64; NUM_CHANNELS] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let mut out = [0.0; NUM_CHANNELS];
        for (i, o) in out.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *o = self.board_offset_sigmas[i] * self.noise_sigma[i] * z;
        }
        out
    }

    fn draw_failure_dose(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let dose = self.failure_dose_mean + self.failure_dose_sigma * z;
        dose.max(1e-3 * self.failure_dose_mean)
    }
}

/// Dose in Gy after `t` seconds at `rate` Gy/h.
pub fn dose_at(rate: f64, t: f64) -> f64 {
    rate * t / 3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSuite {
    pub scenarios: Vec<RadiationScenario>,
}

impl ScenarioSuite {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.scenarios.is_empty() {
            return Err(SimError::InvalidScenario("suite is empty".into()));
        }
        self.scenarios.iter().try_for_each(RadiationScenario::validate)
    }
}

/// The six reference rates with per-board seeds derived from `seed`. The
/// lowest-rate board keeps its much longer out-of-bounds window.
pub fn default_suite(seed: u64) -> ScenarioSuite {
    let scenarios = REFERENCE_RATES
        .iter()
        .enumerate()
        .map(|(i, &rate)| RadiationScenario {
            rate,
            seed: derive_seed(seed, i as u64),
            window_dose: if i == 0 {
                LOW_RATE_WINDOW_DOSE
            } else {
                DEFAULT_WINDOW_DOSE
            },
            ..RadiationScenario::default()
        })
        .collect();
    ScenarioSuite { scenarios }
}

/// SplitMix64 finalizer over `seed + index * golden`.
fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Produces one run. Deterministic in the scenario (seed included).
pub fn simulate_run(scenario: &RadiationScenario) -> Result<BoardRun, SimError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let failure_dose = scenario.draw_failure_dose(&mut rng);
    let death_s = scenario.time_for_dose(failure_dose);
    if death_s > scenario.horizon {
        return Err(SimError::HorizonTooShort {
            death_s,
            horizon_s: scenario.horizon,
        });
    }
    let offsets = scenario.board_offsets();
    let onset_dose = (failure_dose - scenario.window_dose).max(0.0);
    let end_s = death_s + scenario.shutdown_gap_s;

    let mut records = Vec::with_capacity(end_s as usize + 1);
    let mut t = 0.0;
    let mut k = 0u64;
    while t <= end_s {
        let dropout = rng.random::<f64>() < scenario.dropout_prob;
        let mut z = [0.0f64; NUM_CHANNELS];
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let dose = scenario.dose_at(t);
        let progress = ((dose - onset_dose) / scenario.window_dose).clamp(0.0, 1.0);
        let alive = t < death_s;

        let mut values = [0.0; NUM_CHANNELS];
        for ch in ChannelId::ALL {
            let i = ch.index();
            let sigma = scenario.noise_sigma[i];
            let base = match ch.nominal() {
                Some(v) => v,
                None => scenario.temperature_baseline[i],
            };
            let shift = scenario.drift_sigmas[i] * sigma * progress + offsets[i];
            values[i] = if ch.is_temperature() {
                base + shift + sigma * z[i]
            } else if alive {
                let spread = sigma * (1.0 + scenario.drift_gain * progress);
                base + shift + spread * z[i]
            } else {
                0.0
            };
        }
        if dropout {
            values[ChannelId::TFpga.index()] = f64::NAN;
        }
        records.push(TelemetryRecord::new(t, values));
        k += 1;
        t = k as f64;
    }

    let series = TelemetrySeries::from_sorted(records, 1.0);
    Ok(BoardRun {
        series,
        radiation_rate: scenario.rate,
        dut_stop_time: Some(death_s),
        monitor_stop_time: Some(end_s),
        origin: Origin::Simulated,
    })
}

/// Simulates every scenario of the suite in order.
pub fn simulate_suite(suite: &ScenarioSuite) -> Result<Vec<BoardRun>, SimError> {
    suite.validate()?;
    use rayon::prelude::*;
    suite.scenarios.par_iter().map(simulate_run).collect()
}

/// Time from degradation onset to death for a scenario and its drawn
/// failure dose.
pub fn degradation_window_s(scenario: &RadiationScenario) -> f64 {
    let failure = scenario.failure_dose();
    let onset = (failure - scenario.window_dose).max(0.0);
    scenario.time_for_dose(failure) - scenario.time_for_dose(onset)
}
