//! Built-in oracle suite.
//!
//! Each family returns one [`CheckResult`] per case. [`run_checks`] runs the
//! selected families and [`report_table`] renders the pass/fail table.

use std::fmt;
use std::str::FromStr;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::exact_filter::{filter_posterior, GridSpec, QuadratureGrid, TransitionKernel};
use crate::inference::order_stats::{reference_density, select_child, ReferenceDensity, SelectionCase};
use crate::inference::{run_inference, GlobalInterval, HypothesisSet, InferenceConfig, MixtureWeights};
use crate::metrics::{filtering_stats, EvalConfig, MetricEvaluator, MetricName};
use crate::rng;
use crate::scoring::{prefix_score, ScoreKind};
use crate::world_model::{drift_mean, emission_mean, simulate, Trajectory, WorldModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckFamily {
    Kalman,
    OrderStats,
    Additivity,
    MetricIdentity,
    SisEquivalence,
}

impl CheckFamily {
    pub const ALL: [CheckFamily; 5] = [
        CheckFamily::Kalman,
        CheckFamily::OrderStats,
        CheckFamily::Additivity,
        CheckFamily::MetricIdentity,
        CheckFamily::SisEquivalence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckFamily::Kalman => "kalman",
            CheckFamily::OrderStats => "order-stats",
            CheckFamily::Additivity => "additivity",
            CheckFamily::MetricIdentity => "metric-identity",
            CheckFamily::SisEquivalence => "sis-equivalence",
        }
    }
}

impl fmt::Display for CheckFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown check {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub family: CheckFamily,
    pub case: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(family: CheckFamily, case: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            family,
            case: case.into(),
            passed,
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------- Kalman

/// Linear special case of `p`: no drift, identity emission.
pub fn linear_params(p: &WorldModelParams) -> WorldModelParams {
    WorldModelParams { v0: 0.0, d: 0.0, ..*p }
}

/// Closed-form filtering means and variances of the linear-Gaussian model
/// `z_t = z_{t-1} + N(0, sigma_z^2)`, `x_t = z_t + N(0, sigma_x^2)`.
pub fn kalman_filter(obs: &[f64], p: &WorldModelParams) -> Vec<(f64, f64)> {
    let (q, r) = (p.sigma_z * p.sigma_z, p.sigma_x * p.sigma_x);
    let (mut m, mut v) = (p.mu0, p.sigma0 * p.sigma0);
    let mut out = Vec::with_capacity(obs.len());
    for (t, &x) in obs.iter().enumerate() {
        if t > 0 {
            v += q;
        }
        let gain = v / (v + r);
        m += gain * (x - m);
        v *= 1.0 - gain;
        out.push((m, v));
    }
    out
}

/// Largest absolute error in posterior mean and variance over all times.
pub fn kalman_discrepancy(tr: &Trajectory, p: &WorldModelParams, grid: &QuadratureGrid, kernel: &TransitionKernel) -> Result<(f64, f64)> {
    let post = filter_posterior(&tr.obs, p, grid, kernel)?;
    let exact = kalman_filter(&tr.obs, p);
    let mut worst = (0.0f64, 0.0f64);
    for (t, &(m, v)) in exact.iter().enumerate() {
        worst.0 = worst.0.max((post.mean(t + 1, grid) - m).abs());
        worst.1 = worst.1.max((post.variance(t + 1, grid) - v).abs());
    }
    Ok(worst)
}

pub fn check_kalman(p: &WorldModelParams, grid: &GridSpec, seeds: u64, tol: f64) -> Vec<CheckResult> {
    let lp = linear_params(p);
    let family = CheckFamily::Kalman;
    let grid = match QuadratureGrid::from_spec(grid) {
        Ok(g) => g,
        Err(e) => return vec![CheckResult::new(family, "grid", false, e.to_string())],
    };
    let kernel = TransitionKernel::build(&lp, &grid);
    let mut worst = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for seed in 0..seeds {
        let tr = simulate(&lp, rng::stream_seed(0, "kalman", seed));
        match kalman_discrepancy(&tr, &lp, &grid, &kernel) {
            Ok((dm, dv)) => {
                worst = (worst.0.max(dm), worst.1.max(dv));
                if dm > tol || dv > tol {
                    failures.push(seed);
                }
            }
            Err(e) => return vec![CheckResult::new(family, format!("seed {seed}"), false, e.to_string())],
        }
    }
    vec![CheckResult::new(
        family,
        format!("{seeds} seeds, T={}", lp.length),
        failures.is_empty(),
        format!(
            "max |mean err| {:.2e}, max |var err| {:.2e} (tol {tol:.0e}){}",
            worst.0,
            worst.1,
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing seeds {failures:?}")
            }
        ),
    )]
}

// ---------------------------------------------------------- order stats

/// Chi-square goodness of fit of `samples` against `reference` on
/// `n_bins` bins of equal reference mass, pooling bins whose expected count
/// is below 5.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub p_value: f64,
}

pub fn chi_square_test(samples: &[f64], reference: &ReferenceDensity, n_bins: usize, alpha: f64) -> ChiSquareTest {
    let n = samples.len() as f64;
    let masses: Vec<f64> = reference.density.iter().map(|d| d * reference.spacing).collect();
    let total: f64 = masses.iter().sum();
    // Interior edges at equal-mass quantiles, placed between nodes.
    let mut edges = Vec::with_capacity(n_bins - 1);
    let mut acc = 0.0;
    let mut next = 1;
    for (i, &m) in masses.iter().enumerate() {
        acc += m / total;
        while next < n_bins && acc >= next as f64 / n_bins as f64 {
            let z = reference.nodes[i] + 0.5 * reference.spacing;
            if edges.last() != Some(&z) {
                edges.push(z);
            }
            next += 1;
        }
    }
    let bin_of = |z: f64| edges.partition_point(|&e| e <= z);
    let mut expected = vec![0.0; edges.len() + 1];
    for (&z, &m) in reference.nodes.iter().zip(&masses) {
        expected[bin_of(z)] += m / total * n;
    }
    let mut observed = vec![0.0; edges.len() + 1];
    for &z in samples {
        observed[bin_of(z)] += 1.0;
    }

    // Pool small bins into their neighbour.
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pending = (0.0, 0.0);
    for (o, e) in observed.into_iter().zip(expected) {
        pending = (pending.0 + o, pending.1 + e);
        if pending.1 >= 5.0 {
            cells.push(pending);
            pending = (0.0, 0.0);
        }
    }
    if pending.1 > 0.0 || pending.0 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += pending.0;
                last.1 += pending.1;
            }
            None => cells.push(pending),
        }
    }
    let statistic = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = cells.len().saturating_sub(1).max(1);
    let dist = ChiSquared::new(dof as f64).expect("dof >= 1");
    ChiSquareTest {
        statistic,
        dof,
        critical: dist.inverse_cdf(1.0 - alpha),
        p_value: 1.0 - dist.cdf(statistic),
    }
}

/// The cases of the suite: `C` in {2, 8, 64} at parents 0, a/2 and a, with
/// `x_new = h(mu(z_parent) + sigma_z)` and joint scoring.
pub fn order_stats_cases(p: &WorldModelParams) -> Vec<SelectionCase> {
    let mut cases = Vec::new();
    for c in [2, 8, 64] {
        for z_parent in [0.0, 0.5 * p.a, p.a] {
            cases.push(SelectionCase {
                z_parent,
                x_new: emission_mean(drift_mean(z_parent, p) + p.sigma_z, p),
                kind: ScoreKind::Joint,
                c,
            });
        }
    }
    cases
}

pub fn check_order_stats(p: &WorldModelParams, n_samples: usize, alpha: f64) -> Vec<CheckResult> {
    order_stats_cases(p)
        .into_iter()
        .enumerate()
        .map(|(i, case)| {
            let mut r = rng::stream(0, "order-stats", i as u64);
            let samples: Vec<f64> = (0..n_samples).map(|_| select_child(&case, p, &mut r)).collect();
            let reference = reference_density(&case, p, 40_001);
            let test = chi_square_test(&samples, &reference, 64, alpha);
            CheckResult::new(
                CheckFamily::OrderStats,
                format!("C={} z_parent={}", case.c, case.z_parent),
                test.statistic <= test.critical,
                format!(
                    "chi2 {:.1} on {} dof, critical {:.1}, p = {:.3}",
                    test.statistic, test.dof, test.critical, test.p_value
                ),
            )
        })
        .collect()
}

// ------------------------------------------------------------ additivity

/// Largest `|accumulated - from scratch|` over the final hypotheses of an
/// EviTrack run.
pub fn additivity_discrepancy(set: &HypothesisSet, kind: ScoreKind, tr: &Trajectory, p: &WorldModelParams) -> f64 {
    set.prefixes
        .iter()
        .zip(&set.scores)
        .map(|(prefix, &s)| (s - prefix_score(kind, prefix, &tr.obs, p)).abs())
        .fold(0.0, f64::max)
}

pub fn check_additivity(p: &WorldModelParams, sigma_bg: f64, runs: u64, tol: f64) -> Vec<CheckResult> {
    let kinds = [ScoreKind::Joint, ScoreKind::Evidence, ScoreKind::Tbd { sigma_bg }];
    kinds
        .into_iter()
        .map(|kind| {
            let cfg = InferenceConfig::evitrack(kind, 8, 2, GlobalInterval::Every(5));
            let mut worst = 0.0f64;
            for i in 0..runs {
                let tr = simulate(p, rng::stream_seed(0, "additivity", i));
                let seed = rng::stream_seed(1, "additivity", i);
                match run_inference(&tr, &cfg, p, seed, &mut |_: &HypothesisSet, _: &MixtureWeights, _: &Trajectory, _| Ok(())) {
                    Ok(out) => worst = worst.max(additivity_discrepancy(&out.final_set, kind, &tr, p)),
                    Err(e) => return CheckResult::new(CheckFamily::Additivity, kind.tag(), false, e.to_string()),
                }
            }
            CheckResult::new(
                CheckFamily::Additivity,
                format!("{} x {runs} runs", kind.tag()),
                worst <= tol,
                format!("max |accumulated - direct| {worst:.2e} (tol {tol:.0e})"),
            )
        })
        .collect()
}

// -------------------------------------------------------- metric identity

pub fn check_metric_identity(p: &WorldModelParams, trajectories: u64, tol: f64) -> Vec<CheckResult> {
    let p = WorldModelParams { length: 60, ..*p };
    let eval = EvalConfig::default();
    let configs = [
        InferenceConfig::evitrack(ScoreKind::Joint, 32, 2, GlobalInterval::Never),
        InferenceConfig::sis(64),
        InferenceConfig::bpf(64, 0.5),
    ];
    let mut worst = 0.0f64;
    let mut n_records = 0usize;
    for i in 0..trajectories {
        let tr = simulate(&p, rng::stream_seed(0, "identity", i));
        for cfg in &configs {
            let seed = rng::stream_seed(2, "identity", i);
            let mut ev = MetricEvaluator::new(&p, &eval, seed, i as usize, cfg.descriptor());
            let mut direct = 0.0f64;
            let mut check = |set: &HypothesisSet, w: &MixtureWeights, tr: &Trajectory, t: usize| {
                ev.evaluate(set, w, tr, t);
                let endpoints: Vec<f64> = set.endpoints().collect();
                let s = filtering_stats(&endpoints, &w.weights, tr.latent[t - 1]);
                direct = direct.max((s.mse - (s.bias * s.bias + s.variance)).abs());
                Ok(())
            };
            if let Err(e) = run_inference(&tr, cfg, &p, seed, &mut check) {
                return vec![CheckResult::new(CheckFamily::MetricIdentity, "smoke", false, e.to_string())];
            }
            worst = worst.max(direct);
            // Same identity on the emitted records.
            let get = |name: MetricName, t: usize| {
                ev.records
                    .iter()
                    .find(|r| r.name == name && r.t == t)
                    .map(|r| r.value)
                    .expect("filtering record present")
            };
            for r in ev.records.iter().filter(|r| r.name == MetricName::LatentMse) {
                let bias = get(MetricName::LatentBias, r.t);
                let var = get(MetricName::LatentVar, r.t);
                worst = worst.max((r.value - (bias * bias + var)).abs());
                n_records += 1;
            }
        }
    }
    vec![CheckResult::new(
        CheckFamily::MetricIdentity,
        format!("{n_records} filtering records"),
        worst <= tol,
        format!("max |mse - bias^2 - var| {worst:.2e} (tol {tol:.0e})"),
    )]
}

// -------------------------------------------------------- SIS equivalence

pub fn check_sis_equivalence(p: &WorldModelParams, trajectories: u64) -> Vec<CheckResult> {
    let sis = InferenceConfig::sis(64);
    let evi = InferenceConfig::evitrack(ScoreKind::Evidence, 64, 1, GlobalInterval::Never);
    let mut mismatches = Vec::new();
    for i in 0..trajectories {
        let tr = simulate(p, rng::stream_seed(0, "sis-equivalence", i));
        let seed = rng::stream_seed(3, "sis-equivalence", i);
        let mut noop = |_: &HypothesisSet, _: &MixtureWeights, _: &Trajectory, _| Ok(());
        let a = run_inference(&tr, &sis, p, seed, &mut noop);
        let b = run_inference(&tr, &evi, p, seed, &mut noop);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let same = a.final_set.prefixes == b.final_set.prefixes
                    && a.final_set.scores.iter().map(|s| s.to_bits()).eq(b.final_set.scores.iter().map(|s| s.to_bits()));
                if !same {
                    mismatches.push(i);
                }
            }
            (Err(e), _) | (_, Err(e)) => {
                return vec![CheckResult::new(CheckFamily::SisEquivalence, "run", false, e.to_string())]
            }
        }
    }
    vec![CheckResult::new(
        CheckFamily::SisEquivalence,
        format!("{trajectories} trajectories"),
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "prefixes and scores bit-identical".to_string()
        } else {
            format!("differ on trajectories {mismatches:?}")
        },
    )]
}

// ----------------------------------------------------------------- suite

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSettings {
    pub params: WorldModelParams,
    pub grid: GridSpec,
    pub sigma_bg: f64,
    pub kalman_seeds: u64,
    pub kalman_tol: f64,
    pub order_stats_samples: usize,
    pub alpha: f64,
    pub additivity_runs: u64,
    pub additivity_tol: f64,
    pub identity_trajectories: u64,
    pub identity_tol: f64,
    pub sis_trajectories: u64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            params: WorldModelParams::default(),
            grid: GridSpec::default(),
            sigma_bg: crate::scoring::DEFAULT_SIGMA_BG,
            kalman_seeds: 20,
            kalman_tol: 1e-3,
            order_stats_samples: 100_000,
            alpha: 0.01,
            additivity_runs: 50,
            additivity_tol: 1e-9,
            identity_trajectories: 5,
            identity_tol: 1e-9,
            sis_trajectories: 10,
        }
    }
}

pub fn run_family(family: CheckFamily, s: &SuiteSettings) -> Vec<CheckResult> {
    match family {
        CheckFamily::Kalman => check_kalman(&s.params, &s.grid, s.kalman_seeds, s.kalman_tol),
        CheckFamily::OrderStats => check_order_stats(&s.params, s.order_stats_samples, s.alpha),
        CheckFamily::Additivity => check_additivity(&s.params, s.sigma_bg, s.additivity_runs, s.additivity_tol),
        CheckFamily::MetricIdentity => check_metric_identity(&s.params, s.identity_trajectories, s.identity_tol),
        CheckFamily::SisEquivalence => check_sis_equivalence(&s.params, s.sis_trajectories),
    }
}

pub fn run_checks(families: &[CheckFamily], settings: &SuiteSettings) -> Vec<CheckResult> {
    families.iter().flat_map(|&f| run_family(f, settings)).collect()
}

pub fn report_table(results: &[CheckResult]) -> String {
    let w_family = results.iter().map(|r| r.family.as_str().len()).max().unwrap_or(6).max(6);
    let w_case = results.iter().map(|r| r.case.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<w_family$}  {:<w_case$}  {:<6}  detail\n", "check", "case", "result");
    for r in results {
        out += &format!(
            "{:<w_family$}  {:<w_case$}  {:<6}  {}\n",
            r.family.as_str(),
            r.case,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn kalman_matches_hand_computation() {
        let p = WorldModelParams {
            mu0: 0.0,
            sigma0: 1.0,
            sigma_x: 1.0,
            sigma_z: 1.0,
            ..linear_params(&WorldModelParams::default())
        };
        let out = kalman_filter(&[2.0, 0.0], &p);
        assert_abs_diff_eq!(out[0].0, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[0].1, 0.5, epsilon = 1e-15);
        // Predicted variance 1.5, gain 0.6.
        assert_abs_diff_eq!(out[1].0, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1].1, 0.6, epsilon = 1e-15);
    }

    #[test]
    fn chi_square_accepts_reference_draws() {
        // Draws from the C = 1 reference are plain transition samples.
        let p = WorldModelParams::default();
        let case = SelectionCase {
            z_parent: 1.0,
            x_new: 1.0,
            kind: ScoreKind::Joint,
            c: 1,
        };
        let mut r = rng::seeded(5);
        let samples: Vec<f64> = (0..20_000).map(|_| select_child(&case, &p, &mut r)).collect();
        let test = chi_square_test(&samples, &reference_density(&case, &p, 20_001), 32, 0.01);
        assert!(test.statistic < test.critical, "{test:?}");
        assert_eq!(test.dof, 31);
    }

    #[test]
    fn chi_square_rejects_a_shifted_sample() {
        let p = WorldModelParams::default();
        let case = SelectionCase {
            z_parent: 1.0,
            x_new: 1.0,
            kind: ScoreKind::Joint,
            c: 1,
        };
        let mut r = rng::seeded(6);
        let samples: Vec<f64> = (0..20_000)
            .map(|_| select_child(&case, &p, &mut r) + 0.1 * p.sigma_z)
            .collect();
        let test = chi_square_test(&samples, &reference_density(&case, &p, 20_001), 32, 0.01);
        assert!(test.statistic > test.critical);
    }

    #[test]
    fn families_parse() {
        for f in CheckFamily::ALL {
            assert_eq!(f.as_str().parse::<CheckFamily>().unwrap(), f);
        }
        assert!("nope".parse::<CheckFamily>().is_err());
    }
}
