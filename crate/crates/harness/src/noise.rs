//! Transducer noise: multiplicative Gaussian error whose standard deviation
//! is the accuracy class divided by `class_sigmas`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::NoiseConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_v: f64,
    pub sigma_power: f64,
    pub enabled: bool,
}

impl NoiseModel {
    pub fn from_config(c: &NoiseConfig) -> Self {
        Self {
            sigma_v: c.voltage_class / 100.0 / c.class_sigmas,
            sigma_power: c.power_class / 100.0 / c.class_sigmas,
            enabled: c.enabled,
        }
    }

    pub fn disabled() -> Self {
        Self { sigma_v: 0.0, sigma_power: 0.0, enabled: false }
    }
}

/// True and measured quantities of one second.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSample {
    pub t: u64,
    /// Non-slack voltage magnitudes, pu.
    pub v: Vec<f64>,
    /// Injections at the measured buses, pu.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

fn perturb<R: Rng>(x: f64, sigma: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    x * (1.0 + sigma * z)
}

/// Draws one measurement per channel: voltages first, then p, then q. The
/// draw order is fixed so that runs with equal seeds see equal noise, and
/// draws happen even when noise is disabled so enabling it does not shift
/// any other random stream.
pub fn apply_noise<R: Rng>(truth: &MeasurementSample, model: &NoiseModel, rng: &mut R) -> MeasurementSample {
    let (sv, sp) = if model.enabled { (model.sigma_v, model.sigma_power) } else { (0.0, 0.0) };
    let v = truth.v.iter().map(|&x| perturb(x, sv, rng)).collect();
    let p = truth.p.iter().map(|&x| perturb(x, sp, rng)).collect();
    let q = truth.q.iter().map(|&x| perturb(x, sp, rng)).collect();
    MeasurementSample { t: truth.t, v, p, q }
}
