//! Double-well latent dynamics with a piecewise (even inside `|z| <= d`)
//! emission map.
//!
//! ```text
//! z_1     ~ N(mu0, sigma0^2)
//! z_t     ~ N(mu(z_{t-1}), sigma_z^2),  mu(z) = z - dt * V0 * z * (z^2 - a^2)
//! x_t     ~ N(h(z_t), sigma_x^2),       h(z) = z^2 if |z| <= d else z
//! ```
//!
//! Only the Markov case is implemented; transitions depending on the whole
//! latent history or emissions depending on past observations are out of
//! scope.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::exact_filter::DdBin;
use crate::math::normal_logpdf;
use crate::rng;
use crate::{Error, Result};

/// Constants of the double-well system. Serialized with the symbol names
/// used in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldModelParams {
    /// Well position (`+-a` are the stable equilibria).
    pub a: f64,
    /// Potential scale.
    #[serde(rename = "v0")]
    pub v0: f64,
    pub dt: f64,
    pub sigma_z: f64,
    /// Emission boundary; `h` is even on `|z| <= d`.
    pub d: f64,
    pub sigma_x: f64,
    pub mu0: f64,
    pub sigma0: f64,
    /// Trajectory length.
    #[serde(rename = "T")]
    pub length: usize,
}

impl Default for WorldModelParams {
    fn default() -> Self {
        Self {
            a: 3.0,
            v0: 0.06,
            dt: 1.0,
            sigma_z: 0.05,
            d: 2.0,
            sigma_x: 0.12,
            mu0: 0.0,
            sigma0: 1.0,
            length: 200,
        }
    }
}

impl WorldModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.a,
            self.v0,
            self.dt,
            self.sigma_z,
            self.d,
            self.sigma_x,
            self.mu0,
            self.sigma0,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("all parameters must be finite".into()));
        }
        for (name, v) in [
            ("sigma_z", self.sigma_z),
            ("sigma_x", self.sigma_x),
            ("sigma0", self.sigma0),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.length < 2 {
            return Err(Error::InvalidParams(format!("T must be >= 2, got {}", self.length)));
        }
        // d = 0 is admitted: it is the linear special case used by the
        // Kalman oracle.
        if !(self.a > self.d && self.d >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "need a > d >= 0 for delayed disambiguation, got a={} d={}",
                self.a, self.d
            )));
        }
        if !self.is_locally_stable() {
            log::warn!(
                "wells at +-{} are not linearly stable: |mu'(a)| = {:.3} >= 1",
                self.a,
                self.well_slope().abs()
            );
        }
        Ok(())
    }

    /// Slope of the drift at the well minima, `mu'(+-a) = 1 - dt*V0*2a^2`.
    pub fn well_slope(&self) -> f64 {
        1.0 - self.dt * self.v0 * 2.0 * self.a * self.a
    }

    pub fn is_locally_stable(&self) -> bool {
        self.well_slope().abs() < 1.0
    }
}

/// `mu(z) = z - dt * V0 * z * (z^2 - a^2)`.
#[inline]
pub fn drift_mean(z: f64, p: &WorldModelParams) -> f64 {
    z - p.dt * p.v0 * z * (z * z - p.a * p.a)
}

/// `h(z) = z^2` for `|z| <= d`, `z` otherwise.
#[inline]
pub fn emission_mean(z: f64, p: &WorldModelParams) -> f64 {
    if z.abs() <= p.d {
        z * z
    } else {
        z
    }
}

#[inline]
pub fn transition_logpdf(z_next: f64, z_prev: f64, p: &WorldModelParams) -> f64 {
    normal_logpdf(z_next, drift_mean(z_prev, p), p.sigma_z)
}

#[inline]
pub fn emission_logpdf(x: f64, z: f64, p: &WorldModelParams) -> f64 {
    normal_logpdf(x, emission_mean(z, p), p.sigma_x)
}

#[inline]
pub fn initial_logpdf(z: f64, p: &WorldModelParams) -> f64 {
    normal_logpdf(z, p.mu0, p.sigma0)
}

#[inline]
pub fn transition_sample<R: Rng + ?Sized>(z_prev: f64, p: &WorldModelParams, rng: &mut R) -> f64 {
    let eps: f64 = rng.sample(StandardNormal);
    drift_mean(z_prev, p) + p.sigma_z * eps
}

#[inline]
pub fn initial_sample<R: Rng + ?Sized>(p: &WorldModelParams, rng: &mut R) -> f64 {
    let eps: f64 = rng.sample(StandardNormal);
    p.mu0 + p.sigma0 * eps
}

/// `x = h(z) + sigma_x * eps`.
#[inline]
pub fn emission_sample<R: Rng + ?Sized>(z: f64, p: &WorldModelParams, rng: &mut R) -> f64 {
    let eps: f64 = rng.sample(StandardNormal);
    emission_mean(z, p) + p.sigma_x * eps
}

/// A ground-truth latent path and its observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub latent: Vec<f64>,
    pub obs: Vec<f64>,
    /// 1-based disambiguation time.
    pub dd_time: Option<usize>,
    pub dd_bin: Option<DdBin>,
    /// Basin used for DD labelling (terminal sign of the latent path).
    pub true_basin: i8,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }
}

/// Simulate one trajectory. The latent path is drawn first from its own
/// stream and the emission noise from a second one, so the path does not
/// depend on how many emission draws are made.
pub fn simulate(p: &WorldModelParams, seed: u64) -> Trajectory {
    let mut zr = rng::stream(seed, "latent", 0);
    let mut xr = rng::stream(seed, "emission", 0);
    let mut latent = Vec::with_capacity(p.length);
    let mut z = initial_sample(p, &mut zr);
    latent.push(z);
    for _ in 1..p.length {
        z = transition_sample(z, p, &mut zr);
        latent.push(z);
    }
    let obs = latent.iter().map(|&z| emission_sample(z, p, &mut xr)).collect();
    let true_basin = crate::math::basin(*latent.last().expect("T >= 2"));
    Trajectory {
        latent,
        obs,
        dd_time: None,
        dd_bin: None,
        true_basin,
        seed,
    }
}
