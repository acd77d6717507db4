//! Forecasting and filtering metrics of a weighted hypothesis set.
//!
//! Forecasts use `M` rollouts per hypothesis from the transition prior. The
//! rollouts for a given `(t, H)` come from one stream derived from the run
//! seed, so PLL, MSE and BA at the same `(t, H)` share them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::inference::{HypothesisSet, MixtureWeights, StepObserver};
use crate::math::{basin, guard_log, log_sum_exp};
use crate::rng;
use crate::world_model::{emission_logpdf, emission_mean, transition_sample, Trajectory, WorldModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Pll,
    Mse,
    Ba,
    LatentMse,
    LatentBias,
    LatentVar,
    BaFilt,
    Ess,
    Entropy,
    EntropyNorm,
}

impl MetricName {
    pub const FORECAST: [MetricName; 3] = [MetricName::Pll, MetricName::Mse, MetricName::Ba];
    pub const FILTERING: [MetricName; 7] = [
        MetricName::LatentMse,
        MetricName::LatentBias,
        MetricName::LatentVar,
        MetricName::BaFilt,
        MetricName::Ess,
        MetricName::Entropy,
        MetricName::EntropyNorm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Pll => "pll",
            MetricName::Mse => "mse",
            MetricName::Ba => "ba",
            MetricName::LatentMse => "latent_mse",
            MetricName::LatentBias => "latent_bias",
            MetricName::LatentVar => "latent_var",
            MetricName::BaFilt => "ba_filt",
            MetricName::Ess => "ess",
            MetricName::Entropy => "entropy",
            MetricName::EntropyNorm => "entropy_norm",
        }
    }

    pub fn is_forecast(self) -> bool {
        Self::FORECAST.contains(&self)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::FORECAST
            .into_iter()
            .chain(Self::FILTERING)
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// One metric value. Filtering metrics use `horizon = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub trajectory: usize,
    pub method: String,
    pub t: usize,
    pub horizon: usize,
    pub name: MetricName,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub horizons: Vec<usize>,
    #[serde(rename = "M")]
    pub m: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons: vec![1, 5, 10],
            m: 20,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config("need M >= 1 and horizons >= 1".into()));
        }
        Ok(())
    }
}

/// `M` latent rollouts of length `H` from each hypothesis endpoint; only the
/// final states `z_{t+H}` are kept, hypothesis-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBundle {
    pub horizon: usize,
    pub m: usize,
    pub finals: Vec<f64>,
}

impl RolloutBundle {
    pub fn draw<R: Rng + ?Sized>(
        endpoints: impl IntoIterator<Item = f64>,
        horizon: usize,
        m: usize,
        params: &WorldModelParams,
        rng: &mut R,
    ) -> Self {
        assert!(horizon >= 1 && m >= 1);
        let mut finals = Vec::new();
        for z0 in endpoints {
            for _ in 0..m {
                let mut z = z0;
                for _ in 0..horizon {
                    z = transition_sample(z, params, rng);
                }
                finals.push(z);
            }
        }
        Self { horizon, m, finals }
    }

    pub fn per_hypothesis(&self) -> impl Iterator<Item = &[f64]> {
        self.finals.chunks_exact(self.m)
    }
}

/// PLL value plus the number of per-hypothesis terms clamped to the log
/// floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PllEstimate {
    pub value: f64,
    pub clamped: usize,
}

pub fn pll_from_rollouts(
    bundle: &RolloutBundle,
    weights: &MixtureWeights,
    x_future: f64,
    params: &WorldModelParams,
) -> PllEstimate {
    let log_m = (bundle.m as f64).ln();
    let mut clamped = 0;
    let mut terms = Vec::with_capacity(weights.len());
    let mut logs = Vec::with_capacity(bundle.m);
    for (finals, &log_w) in bundle.per_hypothesis().zip(&weights.log_weights) {
        logs.clear();
        logs.extend(finals.iter().map(|&z| emission_logpdf(x_future, z, params)));
        let (ell, hit) = guard_log(log_sum_exp(&logs) - log_m);
        clamped += usize::from(hit);
        terms.push(log_w + ell);
    }
    PllEstimate {
        value: log_sum_exp(&terms),
        clamped,
    }
}

pub fn mse_from_rollouts(bundle: &RolloutBundle, weights: &MixtureWeights, x_future: f64, params: &WorldModelParams) -> f64 {
    let x_hat: f64 = bundle
        .per_hypothesis()
        .zip(&weights.weights)
        .map(|(finals, &w)| w * finals.iter().map(|&z| emission_mean(z, params)).sum::<f64>() / bundle.m as f64)
        .sum();
    (x_hat - x_future).powi(2)
}

pub fn ba_from_rollouts(bundle: &RolloutBundle, weights: &MixtureWeights, z_true_future: f64) -> f64 {
    let target = basin(z_true_future);
    bundle
        .per_hypothesis()
        .zip(&weights.weights)
        .map(|(finals, &w)| w * finals.iter().filter(|&&z| basin(z) == target).count() as f64 / bundle.m as f64)
        .sum()
}

pub fn forecast_pll<R: Rng + ?Sized>(
    set: &HypothesisSet,
    weights: &MixtureWeights,
    x_future: f64,
    horizon: usize,
    m: usize,
    params: &WorldModelParams,
    rng: &mut R,
) -> PllEstimate {
    let bundle = RolloutBundle::draw(set.endpoints(), horizon, m, params, rng);
    pll_from_rollouts(&bundle, weights, x_future, params)
}

pub fn forecast_mse<R: Rng + ?Sized>(
    set: &HypothesisSet,
    weights: &MixtureWeights,
    x_future: f64,
    horizon: usize,
    m: usize,
    params: &WorldModelParams,
    rng: &mut R,
) -> f64 {
    let bundle = RolloutBundle::draw(set.endpoints(), horizon, m, params, rng);
    mse_from_rollouts(&bundle, weights, x_future, params)
}

pub fn forecast_ba<R: Rng + ?Sized>(
    set: &HypothesisSet,
    weights: &MixtureWeights,
    z_true_future: f64,
    horizon: usize,
    m: usize,
    params: &WorldModelParams,
    rng: &mut R,
) -> f64 {
    let bundle = RolloutBundle::draw(set.endpoints(), horizon, m, params, rng);
    ba_from_rollouts(&bundle, weights, z_true_future)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteringStats {
    pub z_hat: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub ba_filt: f64,
}

pub fn filtering_stats(endpoints: &[f64], weights: &[f64], z_true: f64) -> FilteringStats {
    let z_hat: f64 = endpoints.iter().zip(weights).map(|(z, w)| w * z).sum();
    let variance = endpoints.iter().zip(weights).map(|(z, w)| w * (z - z_hat).powi(2)).sum();
    let mse = endpoints.iter().zip(weights).map(|(z, w)| w * (z - z_true).powi(2)).sum();
    let target = basin(z_true);
    let ba_filt = endpoints
        .iter()
        .zip(weights)
        .filter(|(&z, _)| basin(z) == target)
        .map(|(_, w)| w)
        .sum();
    FilteringStats {
        z_hat,
        bias: z_hat - z_true,
        variance,
        mse,
        ba_filt,
    }
}

pub fn ess(weights: &[f64]) -> f64 {
    crate::inference::effective_sample_size(weights)
}

/// Shannon entropy with `0 log 0 = 0`; divided by `log K` when `normalized`.
pub fn weight_entropy(weights: &[f64], normalized: bool) -> f64 {
    let h: f64 = -weights.iter().filter(|&&w| w > 0.0).map(|w| w * w.ln()).sum::<f64>();
    let h = h.max(0.0);
    if !normalized {
        h
    } else if weights.len() > 1 {
        h / (weights.len() as f64).ln()
    } else {
        0.0
    }
}

/// Rollout stream for `(t, H)` under a run seed.
pub fn rollout_rng(seed: u64, t: usize, horizon: usize) -> rng::StreamRng {
    rng::stream(seed, "rollout", ((t as u64) << 16) | horizon as u64)
}

/// Computes every metric after each inference step and collects the records.
pub struct MetricEvaluator<'a> {
    params: &'a WorldModelParams,
    eval: &'a EvalConfig,
    seed: u64,
    trajectory_id: usize,
    method: String,
    /// Inclusive range of times to evaluate; everything when `None`.
    times: Option<(usize, usize)>,
    pub records: Vec<MetricRecord>,
    pub pll_clamps: usize,
}

impl<'a> MetricEvaluator<'a> {
    pub fn new(params: &'a WorldModelParams, eval: &'a EvalConfig, seed: u64, trajectory_id: usize, method: String) -> Self {
        Self {
            params,
            eval,
            seed,
            trajectory_id,
            method,
            times: None,
            records: Vec::new(),
            pll_clamps: 0,
        }
    }

    /// Only evaluate `lo..=hi`. Values at a given `t` do not depend on which
    /// other times are evaluated.
    pub fn restrict_times(mut self, lo: usize, hi: usize) -> Self {
        self.times = Some((lo, hi));
        self
    }

    fn push(&mut self, t: usize, horizon: usize, name: MetricName, value: f64) {
        self.records.push(MetricRecord {
            trajectory: self.trajectory_id,
            method: self.method.clone(),
            t,
            horizon,
            name,
            value,
        });
    }

    pub fn evaluate(&mut self, set: &HypothesisSet, weights: &MixtureWeights, trajectory: &Trajectory, t: usize) {
        if let Some((lo, hi)) = self.times {
            if t < lo || t > hi {
                return;
            }
        }
        let endpoints: Vec<f64> = set.endpoints().collect();
        let stats = filtering_stats(&endpoints, &weights.weights, trajectory.latent[t - 1]);
        self.push(t, 0, MetricName::LatentMse, stats.mse);
        self.push(t, 0, MetricName::LatentBias, stats.bias);
        self.push(t, 0, MetricName::LatentVar, stats.variance);
        self.push(t, 0, MetricName::BaFilt, stats.ba_filt);
        self.push(t, 0, MetricName::Ess, ess(&weights.weights));
        self.push(t, 0, MetricName::Entropy, weight_entropy(&weights.weights, false));
        self.push(t, 0, MetricName::EntropyNorm, weight_entropy(&weights.weights, true));

        let len = trajectory.len();
        for &h in &self.eval.horizons {
            if t + h > len {
                continue;
            }
            let mut rng = rollout_rng(self.seed, t, h);
            let bundle = RolloutBundle::draw(endpoints.iter().copied(), h, self.eval.m, self.params, &mut rng);
            let x_future = trajectory.obs[t + h - 1];
            let pll = pll_from_rollouts(&bundle, weights, x_future, self.params);
            self.pll_clamps += pll.clamped;
            self.push(t, h, MetricName::Pll, pll.value);
            self.push(t, h, MetricName::Mse, mse_from_rollouts(&bundle, weights, x_future, self.params));
            self.push(t, h, MetricName::Ba, ba_from_rollouts(&bundle, weights, trajectory.latent[t + h - 1]));
        }
    }
}

impl StepObserver for MetricEvaluator<'_> {
    fn observe(&mut self, set: &HypothesisSet, weights: &MixtureWeights, trajectory: &Trajectory, t: usize) -> Result<()> {
        self.evaluate(set, weights, trajectory, t);
        Ok(())
    }
}
