//! Weak-coherent-pulse QSDC link model.
//!
//! Poisson sources and a threshold detector: a gate clicks when either a
//! photon survives fiber loss and is detected, or the detector dark-counts.
//! Dark clicks carry a random bit, photon clicks err at the misalignment
//! rate. The information rate divides the signal click rate by the spreading
//! ratio and the FEC overhead, then by a single calibrated duty factor that
//! absorbs decoy slots, sifting and framing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// QBER measured at the 50 km operating point.
pub const TARGET_QBER: f64 = 0.0331;
/// Long-run information rate measured at the 50 km operating point.
pub const TARGET_RATE_BPS: f64 = 37_360.0;

/// Published reference lines at 50 km, bits per second.
pub const REFERENCE_SHANNON_BPS: f64 = 1_496_530.0;
pub const REFERENCE_SECRECY_BPS: f64 = 560_200.0;

// Calibrated against TARGET_QBER and TARGET_RATE_BPS with the other defaults
// fixed; see `calibrate`.
const DEFAULT_MISALIGNMENT: f64 = 0.033053029299721;
const DEFAULT_DUTY: f64 = 0.521121435259736;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("invalid channel parameter {field}: {reason}")]
    Param { field: &'static str, reason: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("channel never clicks (no dark counts and no detectable photons)")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub distance_km: f64,
    pub loss_db_per_km: f64,
    pub rep_rate_hz: f64,
    pub pulse_width_s: f64,
    pub mu_signal: f64,
    pub mu_decoy1: f64,
    pub mu_decoy2: f64,
    pub det_efficiency: f64,
    pub dark_count_per_gate: f64,
    /// Chips per information bit.
    pub spread_ratio: u32,
    /// Data bits per parity bit.
    pub fec_ratio: u32,
    pub misalignment_error: f64,
    pub duty_factor: f64,
}

impl Default for ChannelParams {
    /// The 50 km field configuration with calibrated misalignment and duty.
    fn default() -> Self {
        Self {
            misalignment_error: DEFAULT_MISALIGNMENT,
            duty_factor: DEFAULT_DUTY,
            ..Self::uncalibrated()
        }
    }
}

impl ChannelParams {
    /// Field configuration with an ideal interferometer and no protocol
    /// overhead (`misalignment_error = 0`, `duty_factor = 1`).
    pub fn uncalibrated() -> Self {
        Self {
            distance_km: 50.0,
            loss_db_per_km: 0.2,
            rep_rate_hz: 1.25e9,
            pulse_width_s: 50e-12,
            mu_signal: 0.6,
            mu_decoy1: 0.2,
            mu_decoy2: 0.0,
            det_efficiency: 0.20,
            dark_count_per_gate: 1.2e-6,
            spread_ratio: 192,
            fec_ratio: 12,
            misalignment_error: 0.0,
            duty_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> Result<(), LinkError> {
            Err(LinkError::Param {
                field,
                reason: reason.into(),
            })
        }
        let probs = [
            ("det_efficiency", self.det_efficiency),
            ("dark_count_per_gate", self.dark_count_per_gate),
            ("misalignment_error", self.misalignment_error),
        ];
        for (field, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(field, format!("{p} is not a probability"));
            }
        }
        let nonneg = [
            ("distance_km", self.distance_km),
            ("loss_db_per_km", self.loss_db_per_km),
            ("mu_signal", self.mu_signal),
            ("mu_decoy1", self.mu_decoy1),
            ("mu_decoy2", self.mu_decoy2),
            ("pulse_width_s", self.pulse_width_s),
        ];
        for (field, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, format!("{v} must be finite and >= 0"));
            }
        }
        if !(self.rep_rate_hz.is_finite() && self.rep_rate_hz > 0.0) {
            return bad("rep_rate_hz", "must be positive");
        }
        if self.spread_ratio < 1 {
            return bad("spread_ratio", "must be >= 1");
        }
        if self.fec_ratio < 1 {
            return bad("fec_ratio", "must be >= 1");
        }
        if !(self.duty_factor > 0.0 && self.duty_factor <= 1.0) {
            return bad(
                "duty_factor",
                format!("{} is outside (0, 1]", self.duty_factor),
            );
        }
        Ok(())
    }

    /// Code rate of the FEC layer, `fec / (fec + 1)`.
    pub fn fec_code_rate(&self) -> f64 {
        let f = self.fec_ratio as f64;
        f / (f + 1.0)
    }
}

pub fn transmittance(params: &ChannelParams) -> Result<f64, LinkError> {
    if params.distance_km < 0.0 {
        return Err(LinkError::Argument(format!(
            "distance {} km is negative",
            params.distance_km
        )));
    }
    Ok(10f64.powf(-params.distance_km * params.loss_db_per_km / 10.0))
}

fn detected_mean(mu: f64, params: &ChannelParams) -> f64 {
    mu * transmittance(params).unwrap_or(0.0) * params.det_efficiency
}

/// Probability that at least one photon of a pulse with mean `mu` is detected.
pub fn photon_click_probability(mu: f64, params: &ChannelParams) -> f64 {
    -(-detected_mean(mu, params)).exp_m1()
}

/// Per-gate click probability including dark counts.
pub fn click_probability(mu: f64, params: &ChannelParams) -> f64 {
    1.0 - (1.0 - params.dark_count_per_gate) * (-detected_mean(mu, params)).exp()
}

/// QBER of signal pulses.
pub fn qber_model(params: &ChannelParams) -> Result<f64, LinkError> {
    qber_at(params.mu_signal, params)
}

/// QBER of pulses with mean photon number `mu`.
pub fn qber_at(mu: f64, params: &ChannelParams) -> Result<f64, LinkError> {
    let p_dark = params.dark_count_per_gate;
    let p_photon = photon_click_probability(mu, params);
    let total = p_dark + p_photon;
    if total <= 0.0 {
        return Err(LinkError::Degenerate);
    }
    Ok((0.5 * p_dark + params.misalignment_error * p_photon) / total)
}

/// Detected signal gates per second after the duty factor.
pub fn detection_rate(params: &ChannelParams) -> f64 {
    params.rep_rate_hz * click_probability(params.mu_signal, params) * params.duty_factor
}

/// Delivered information rate in bits per second.
pub fn info_rate(params: &ChannelParams) -> f64 {
    detection_rate(params) / params.spread_ratio as f64 * params.fec_code_rate()
}

/// Solves for `misalignment_error` and `duty_factor` so that the model hits
/// `target_qber` and `target_rate_bps`. Everything else is kept.
pub fn calibrate(
    params: &ChannelParams,
    target_qber: f64,
    target_rate_bps: f64,
) -> Result<ChannelParams, LinkError> {
    let p_dark = params.dark_count_per_gate;
    let p_photon = photon_click_probability(params.mu_signal, params);
    if p_photon <= 0.0 {
        return Err(LinkError::Degenerate);
    }
    let misalignment = (target_qber * (p_dark + p_photon) - 0.5 * p_dark) / p_photon;
    if !(0.0..=0.5).contains(&misalignment) {
        return Err(LinkError::Argument(format!(
            "QBER {target_qber} is unreachable: needs misalignment {misalignment}"
        )));
    }
    let open = ChannelParams {
        duty_factor: 1.0,
        ..params.clone()
    };
    let duty = target_rate_bps / info_rate(&open);
    if !(duty > 0.0 && duty <= 1.0) {
        return Err(LinkError::Argument(format!(
            "rate {target_rate_bps} bps is unreachable: needs duty factor {duty}"
        )));
    }
    Ok(ChannelParams {
        misalignment_error: misalignment,
        duty_factor: duty,
        ..params.clone()
    })
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> Result<f64, LinkError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(LinkError::Argument(format!("{p} is not a probability")));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapacityMode {
    /// Return the published 50 km reference lines.
    Reference,
    /// Evaluate the entropy model on the current parameters.
    Model,
}

impl std::str::FromStr for CapacityMode {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" => Ok(Self::Reference),
            "model" => Ok(Self::Model),
            other => Err(LinkError::Argument(format!(
                "unknown capacity mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityConfig {
    pub mode: CapacityMode,
    /// Eavesdropper bit error rate used by the model's secrecy line.
    pub eve_error: f64,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            mode: CapacityMode::Reference,
            eve_error: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityLines {
    pub shannon_bps: f64,
    pub secrecy_bps: f64,
}

/// Shannon and wiretap-secrecy reference lines.
///
/// The model mode uses `R_det * (1 - h(qber))` and
/// `R_det * max(0, 1 - h(qber) - h(eve_error))` where `R_det` is
/// [`detection_rate`].
pub fn capacity_lines(
    params: &ChannelParams,
    config: &CapacityConfig,
) -> Result<CapacityLines, LinkError> {
    match config.mode {
        CapacityMode::Reference => Ok(CapacityLines {
            shannon_bps: REFERENCE_SHANNON_BPS,
            secrecy_bps: REFERENCE_SECRECY_BPS,
        }),
        CapacityMode::Model => {
            let r_det = detection_rate(params);
            let hq = binary_entropy(qber_model(params)?)?;
            let he = binary_entropy(config.eve_error)?;
            Ok(CapacityLines {
                shannon_bps: r_det * (1.0 - hq),
                secrecy_bps: r_det * (1.0 - hq - he).max(0.0),
            })
        }
    }
}

/// Pulse intensity class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Signal,
    Decoy,
    Vacuum,
}

impl Intensity {
    pub fn mu(self, params: &ChannelParams) -> f64 {
        match self {
            Self::Signal => params.mu_signal,
            Self::Decoy => params.mu_decoy1,
            Self::Vacuum => params.mu_decoy2,
        }
    }
}

/// Outcome of a gate-level Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    pub seed: u64,
    pub gates: u64,
    pub clicks: u64,
    pub errors: u64,
    pub qber_hat: f64,
    pub rate_hat: f64,
}

impl GateStats {
    pub const CSV_HEADER: &'static str = "seed,gates,clicks,errors,qber_hat,rate_hat";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.seed, self.gates, self.clicks, self.errors, self.qber_hat, self.rate_hat
        )
    }

    pub fn click_fraction(&self) -> f64 {
        self.clicks as f64 / self.gates as f64
    }
}

const GATE_CHUNK: u64 = 1 << 16;

/// Simulates `gates` pulses of the given intensity gate by gate.
///
/// Each chunk of gates draws from its own ChaCha stream keyed by
/// `(seed, chunk)`, so the counts do not depend on the thread pool.
pub fn monte_carlo_gates(
    params: &ChannelParams,
    intensity: Intensity,
    gates: u64,
    seed: u64,
) -> GateStats {
    let p_photon = photon_click_probability(intensity.mu(params), params);
    let p_dark = params.dark_count_per_gate;
    let e_mis = params.misalignment_error;
    let chunks = gates.div_ceil(GATE_CHUNK);
    let (clicks, errors) = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let len = GATE_CHUNK.min(gates - chunk * GATE_CHUNK);
            let mut clicks = 0u64;
            let mut errors = 0u64;
            for _ in 0..len {
                let photon = rng.random_bool(p_photon);
                let dark = rng.random_bool(p_dark);
                if photon {
                    clicks += 1;
                    errors += rng.random_bool(e_mis) as u64;
                } else if dark {
                    clicks += 1;
                    errors += rng.random_bool(0.5) as u64;
                }
            }
            (clicks, errors)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let qber_hat = if clicks == 0 {
        0.0
    } else {
        errors as f64 / clicks as f64
    };
    let rate_hat = if gates == 0 {
        0.0
    } else {
        params.rep_rate_hz * (clicks as f64 / gates as f64) * params.duty_factor
            / params.spread_ratio as f64
            * params.fec_code_rate()
    };
    GateStats {
        seed,
        gates,
        clicks,
        errors,
        qber_hat,
        rate_hat,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transmittance_examples() {
        let mut p = ChannelParams::default();
        assert!((transmittance(&p).unwrap() - 0.1).abs() < 1e-15);
        p.distance_km = 0.0;
        assert_eq!(transmittance(&p).unwrap(), 1.0);
        p.distance_km = 100.0;
        assert!((transmittance(&p).unwrap() - 0.01).abs() < 1e-16);
        p.distance_km = -1.0;
        assert!(transmittance(&p).is_err());
    }

    #[test]
    fn click_probability_examples() {
        let p = ChannelParams::default();
        assert!((click_probability(0.0, &p) - p.dark_count_per_gate).abs() < 1e-15);
        let expect = 1.0 - (1.0 - 1.2e-6) * (-0.012f64).exp();
        assert!((click_probability(0.6, &p) - expect).abs() < 1e-15);
        assert!((click_probability(0.6, &p) - 0.011_929_47).abs() < 1e-8);
        let mut last = 0.0;
        for mu in [1.0, 10.0, 100.0, 1e3, 1e4] {
            let c = click_probability(mu, &p);
            assert!(c > last && c <= 1.0);
            last = c;
        }
        assert!(last > 0.999_999);
    }

    #[test]
    fn qber_limits() {
        let mut p = ChannelParams::uncalibrated();
        p.dark_count_per_gate = 0.0;
        assert_eq!(qber_model(&p).unwrap(), 0.0);
        let p = ChannelParams::default();
        assert_eq!(qber_at(0.0, &p).unwrap(), 0.5);
        let mut p = ChannelParams::uncalibrated();
        p.dark_count_per_gate = 0.0;
        p.mu_signal = 0.0;
        assert_eq!(qber_model(&p), Err(LinkError::Degenerate));
    }

    #[test]
    fn default_is_calibrated() {
        let p = ChannelParams::default();
        assert!((qber_model(&p).unwrap() - TARGET_QBER).abs() < 1e-4);
        assert!((info_rate(&p) / TARGET_RATE_BPS - 1.0).abs() < 5e-3);
        let c = calibrate(&ChannelParams::uncalibrated(), TARGET_QBER, TARGET_RATE_BPS).unwrap();
        assert!((c.misalignment_error - DEFAULT_MISALIGNMENT).abs() < 1e-12);
        assert!((c.duty_factor - DEFAULT_DUTY).abs() < 1e-12);
        assert!((c.misalignment_error - 0.03305).abs() < 1e-5);
    }

    #[test]
    fn rate_upper_bound() {
        let p = ChannelParams::uncalibrated();
        let r = info_rate(&p);
        assert!((r - 71_691.5).abs() < 1.0, "{r}");
        let far = ChannelParams {
            distance_km: 100.0,
            ..ChannelParams::default()
        };
        assert!(info_rate(&far) < info_rate(&ChannelParams::default()));
    }

    #[test]
    fn calibrate_rejects_unreachable_targets() {
        let p = ChannelParams::uncalibrated();
        assert!(calibrate(&p, 0.9, TARGET_RATE_BPS).is_err());
        assert!(calibrate(&p, TARGET_QBER, 1e9).is_err());
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.0331).unwrap() - 0.20966).abs() < 5e-5);
        assert!(binary_entropy(1.5).is_err());
        assert!(binary_entropy(-0.1).is_err());
    }

    #[test]
    fn capacity_reference_and_model() {
        let p = ChannelParams::default();
        let reference = capacity_lines(&p, &CapacityConfig::default()).unwrap();
        assert_eq!(reference.shannon_bps, 1_496_530.0);
        assert_eq!(reference.secrecy_bps, 560_200.0);

        let noiseless = ChannelParams {
            dark_count_per_gate: 0.0,
            misalignment_error: 0.0,
            ..ChannelParams::default()
        };
        let cfg = CapacityConfig {
            mode: CapacityMode::Model,
            eve_error: 0.5,
        };
        let lines = capacity_lines(&noiseless, &cfg).unwrap();
        assert!((lines.shannon_bps - detection_rate(&noiseless)).abs() < 1e-6);
        assert_eq!(lines.secrecy_bps, 0.0);
        assert!("bogus".parse::<CapacityMode>().is_err());
    }

    #[test]
    fn capacity_model_matches_reference_ratio() {
        // choose e_eve so the secrecy/shannon ratio equals the reference ratio
        let p = ChannelParams::default();
        let hq = binary_entropy(qber_model(&p).unwrap()).unwrap();
        let ratio = REFERENCE_SECRECY_BPS / REFERENCE_SHANNON_BPS;
        let target_he = (1.0 - hq) * (1.0 - ratio);
        let (mut lo, mut hi) = (0.0, 0.5);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if binary_entropy(mid).unwrap() < target_he {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let cfg = CapacityConfig {
            mode: CapacityMode::Model,
            eve_error: 0.5 * (lo + hi),
        };
        let lines = capacity_lines(&p, &cfg).unwrap();
        assert!((lines.secrecy_bps / lines.shannon_bps - ratio).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_is_seed_reproducible() {
        let p = ChannelParams::default();
        let a = monte_carlo_gates(&p, Intensity::Signal, 200_000, 7);
        let b = monte_carlo_gates(&p, Intensity::Signal, 200_000, 7);
        let c = monte_carlo_gates(&p, Intensity::Signal, 200_000, 8);
        assert_eq!(a, b);
        assert_ne!(a.clicks, c.clicks);
        assert_eq!(a.csv_row().split(',').count(), 6);
    }

    #[test]
    fn monte_carlo_vacuum_is_dark_only() {
        let p = ChannelParams::default();
        let s = monte_carlo_gates(&p, Intensity::Vacuum, 2_000_000, 3);
        let mean = p.dark_count_per_gate * 2e6;
        assert!((s.clicks as f64 - mean).abs() < 4.0 * mean.sqrt());
    }

    #[test]
    fn validation_catches_bad_fields() {
        let p = ChannelParams {
            det_efficiency: 1.5,
            ..ChannelParams::default()
        };
        assert!(matches!(
            p.validate(),
            Err(LinkError::Param {
                field: "det_efficiency",
                ..
            })
        ));
        let p = ChannelParams {
            duty_factor: 0.0,
            ..ChannelParams::default()
        };
        assert!(p.validate().is_err());
        let p = ChannelParams {
            spread_ratio: 0,
            ..ChannelParams::default()
        };
        assert!(p.validate().is_err());
        assert!(ChannelParams::default().validate().is_ok());
    }
}
