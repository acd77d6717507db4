//! Hypothesis-set inference: EviTrack, SIS and the bootstrap particle filter.
//!
//! All three methods share [`HypothesisSet`]: `K` latent trajectory prefixes
//! with accumulated log scores. One step of each method:
//!
//! - **EviTrack**: every parent samples `C` children from the transition
//!   prior, each child is scored as `S_parent + increment`, and the
//!   highest-scoring child is kept (local selection). Every `G` steps the
//!   selection is global instead: the whole pool of `K * C` children is ranked
//!   and the top `K` are kept.
//! - **SIS**: one transition sample per particle, score += emission
//!   log-likelihood.
//! - **BPF**: SIS followed by systematic resampling whenever
//!   `ESS < threshold * N`; scores are reset to zero after resampling.
//!
//! Ties are broken towards the lowest index everywhere.

pub mod order_stats;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{guard_log, log_sum_exp};
use crate::rng;
use crate::scoring::{initial_score, score_increment, ScoreKind};
use crate::world_model::{initial_sample, transition_sample, Trajectory, WorldModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(rename = "evitrack")]
    EviTrack,
    Sis,
    Bpf,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::EviTrack => "evitrack",
            Method::Sis => "sis",
            Method::Bpf => "bpf",
        })
    }
}

/// Global pruning interval `G`: prune every `G` steps, or never.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlobalInterval {
    Every(usize),
    Never,
}

impl GlobalInterval {
    /// Whether the step that produces time `t` is a global step.
    pub fn fires_at(self, t: usize) -> bool {
        match self {
            GlobalInterval::Every(g) => t.is_multiple_of(g),
            GlobalInterval::Never => false,
        }
    }
}

impl fmt::Display for GlobalInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GlobalInterval::Every(g) => write!(f, "{g}"),
            GlobalInterval::Never => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for GlobalInterval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("inf") {
            return Ok(GlobalInterval::Never);
        }
        match s.parse::<usize>() {
            Ok(g) if g >= 1 => Ok(GlobalInterval::Every(g)),
            _ => Err(Error::Config(format!("G must be a positive integer or \"inf\", got {s:?}"))),
        }
    }
}

impl Serialize for GlobalInterval {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GlobalInterval::Every(g) => s.serialize_u64(*g as u64),
            GlobalInterval::Never => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for GlobalInterval {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("G must be >= 1")),
            Raw::Int(g) => Ok(GlobalInterval::Every(g as usize)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// What global pruning ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalPool {
    /// All `K * C` children compete; local selection is skipped on global
    /// steps.
    #[default]
    Candidates,
    /// Local selection first, then the `K` survivors are re-ranked (a no-op
    /// on membership).
    Survivors,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub method: Method,
    pub kind: ScoreKind,
    /// Hypothesis count (particle count `N` for SIS/BPF).
    pub k: usize,
    /// Branching factor; 1 for SIS/BPF.
    pub c: usize,
    pub g: GlobalInterval,
    pub global_pool: GlobalPool,
    /// BPF resamples when `ESS < ess_threshold_fraction * N`.
    pub ess_threshold_fraction: f64,
}

impl InferenceConfig {
    pub fn evitrack(kind: ScoreKind, k: usize, c: usize, g: GlobalInterval) -> Self {
        Self {
            method: Method::EviTrack,
            kind,
            k,
            c,
            g,
            global_pool: GlobalPool::default(),
            ess_threshold_fraction: 0.5,
        }
    }

    pub fn sis(n: usize) -> Self {
        Self {
            method: Method::Sis,
            kind: ScoreKind::Evidence,
            k: n,
            c: 1,
            g: GlobalInterval::Never,
            global_pool: GlobalPool::default(),
            ess_threshold_fraction: 0.5,
        }
    }

    pub fn bpf(n: usize, ess_threshold_fraction: f64) -> Self {
        Self {
            method: Method::Bpf,
            ess_threshold_fraction,
            ..Self::sis(n)
        }
    }

    pub fn budget(&self) -> usize {
        self.k * self.c
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if self.k == 0 || self.c == 0 {
            return Err(Error::Config(format!("K and C must be >= 1, got K={} C={}", self.k, self.c)));
        }
        match self.method {
            Method::EviTrack => Ok(()),
            Method::Sis | Method::Bpf => {
                if self.c != 1 {
                    return Err(Error::Config(format!("{} requires C = 1", self.method)));
                }
                if self.kind != ScoreKind::Evidence {
                    return Err(Error::Config(format!("{} weights by evidence only", self.method)));
                }
                if !(self.ess_threshold_fraction > 0.0 && self.ess_threshold_fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "ess_threshold_fraction must lie in (0, 1], got {}",
                        self.ess_threshold_fraction
                    )));
                }
                Ok(())
            }
        }
    }

    /// Stable, file-name-safe descriptor, e.g. `evitrack-J/K32/C2/Ginf` or
    /// `bpf/N64`.
    pub fn descriptor(&self) -> String {
        match self.method {
            Method::EviTrack => {
                let pool = match self.global_pool {
                    GlobalPool::Candidates => "",
                    GlobalPool::Survivors => "/survivors",
                };
                format!("evitrack-{}/K{}/C{}/G{}{pool}", self.kind.tag(), self.k, self.c, self.g)
            }
            Method::Sis => format!("sis/N{}", self.k),
            Method::Bpf => format!("bpf/N{}", self.k),
        }
    }
}

/// Retained latent trajectory prefixes with their accumulated scores.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    pub prefixes: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    /// Current (1-based) time; every prefix has this length.
    pub t: usize,
    /// `lineage[s][i]`: slot at time `s + 1` that slot `i` at time `s + 2`
    /// descends from.
    pub lineage: Vec<Vec<usize>>,
    /// Number of log values clamped to the `-1e9` floor.
    pub clamp_count: u64,
    pub resample_count: u64,
}

impl HypothesisSet {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Current endpoint `z_t` of every prefix.
    pub fn endpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.prefixes.iter().map(|p| *p.last().expect("prefixes are non-empty"))
    }

    fn guarded(&mut self, score: f64) -> f64 {
        let (v, clamped) = guard_log(score);
        self.clamp_count += u64::from(clamped);
        v
    }
}

/// Normalised mixture weights `pi_i = exp(S_i - LSE(S))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl MixtureWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn mixture_weights(scores: &[f64]) -> MixtureWeights {
    let lse = log_sum_exp(scores);
    let log_weights: Vec<f64> = scores.iter().map(|s| s - lse).collect();
    let weights = log_weights.iter().map(|l| l.exp()).collect();
    MixtureWeights { weights, log_weights }
}

pub fn init_hypotheses<R: Rng + ?Sized>(
    config: &InferenceConfig,
    params: &WorldModelParams,
    x1: f64,
    rng: &mut R,
) -> HypothesisSet {
    let mut set = HypothesisSet {
        prefixes: Vec::with_capacity(config.k),
        scores: Vec::with_capacity(config.k),
        t: 1,
        lineage: Vec::new(),
        clamp_count: 0,
        resample_count: 0,
    };
    for _ in 0..config.k {
        let z1 = initial_sample(params, rng);
        let s = initial_score(config.kind, z1, x1, params);
        let s = set.guarded(s);
        set.prefixes.push(vec![z1]);
        set.scores.push(s);
    }
    set
}

/// Index of the best child, lowest index on ties.
pub(crate) fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = j;
        }
    }
    best
}

/// Keep the `keep` highest-scoring hypotheses, ordered by descending score
/// and then by index.
pub fn global_prune(set: &HypothesisSet, keep: usize) -> HypothesisSet {
    assert!(keep <= set.len(), "cannot keep {keep} of {}", set.len());
    let order = top_k_order(&set.scores, keep);
    let mut out = set.clone();
    out.prefixes = order.iter().map(|&i| set.prefixes[i].clone()).collect();
    out.scores = order.iter().map(|&i| set.scores[i]).collect();
    if let Some(last) = set.lineage.last() {
        *out.lineage.last_mut().unwrap() = order.iter().map(|&i| last[i]).collect();
    }
    out
}

fn top_k_order(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order
}

pub fn evitrack_step<R: Rng + ?Sized>(
    set: &HypothesisSet,
    x_new: f64,
    config: &InferenceConfig,
    params: &WorldModelParams,
    rng: &mut R,
) -> HypothesisSet {
    let (k, c) = (set.len(), config.c);
    let t_next = set.t + 1;
    let global = config.g.fires_at(t_next);

    let mut out = HypothesisSet {
        prefixes: Vec::with_capacity(k),
        scores: Vec::with_capacity(k),
        t: t_next,
        lineage: set.lineage.clone(),
        clamp_count: set.clamp_count,
        resample_count: set.resample_count,
    };

    let mut children = Vec::with_capacity(k * c);
    let mut child_scores = Vec::with_capacity(k * c);
    for (prefix, &parent_score) in set.prefixes.iter().zip(&set.scores) {
        let z_parent = *prefix.last().expect("prefixes are non-empty");
        for _ in 0..c {
            let z = transition_sample(z_parent, params, rng);
            let s = parent_score + score_increment(config.kind, z_parent, z, x_new, params);
            children.push(z);
            child_scores.push(out.guarded(s));
        }
    }

    // Pool index p = parent * C + child.
    let chosen: Vec<usize> = if global && config.global_pool == GlobalPool::Candidates {
        top_k_order(&child_scores, k)
    } else {
        (0..k)
            .map(|i| i * c + argmax_first(&child_scores[i * c..(i + 1) * c]))
            .collect()
    };

    let mut parents = Vec::with_capacity(k);
    for p in chosen {
        let parent = p / c;
        let mut prefix = Vec::with_capacity(t_next);
        prefix.extend_from_slice(&set.prefixes[parent]);
        prefix.push(children[p]);
        out.prefixes.push(prefix);
        out.scores.push(child_scores[p]);
        parents.push(parent);
    }
    out.lineage.push(parents);

    if global && config.global_pool == GlobalPool::Survivors {
        out = global_prune(&out, k);
    }
    out
}

/// Propagate every particle once from the transition prior and add its
/// emission log-likelihood.
pub fn sis_step<R: Rng + ?Sized>(set: &HypothesisSet, x_new: f64, params: &WorldModelParams, rng: &mut R) -> HypothesisSet {
    let mut out = set.clone();
    out.t += 1;
    for i in 0..out.len() {
        let z_parent = *out.prefixes[i].last().expect("prefixes are non-empty");
        let z = transition_sample(z_parent, params, rng);
        let s = out.scores[i] + score_increment(ScoreKind::Evidence, z_parent, z, x_new, params);
        out.scores[i] = out.guarded(s);
        out.prefixes[i].push(z);
    }
    out.lineage.push((0..out.len()).collect());
    out
}

/// Systematic resampling: one uniform offset, `n` evenly spaced positions.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let u0: f64 = rng.random::<f64>();
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..n {
        let pos = (u0 + k as f64) / n as f64;
        while pos >= cumulative && i + 1 < weights.len() {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

pub fn bpf_step<R: Rng + ?Sized>(
    set: &HypothesisSet,
    x_new: f64,
    ess_threshold_fraction: f64,
    params: &WorldModelParams,
    rng: &mut R,
) -> HypothesisSet {
    let mut out = sis_step(set, x_new, params, rng);
    let n = out.len();
    let w = mixture_weights(&out.scores);
    if effective_sample_size(&w.weights) < ess_threshold_fraction * n as f64 {
        let idx = systematic_resample(&w.weights, n, rng);
        out.prefixes = idx.iter().map(|&i| out.prefixes[i].clone()).collect();
        out.scores = vec![0.0; n];
        *out.lineage.last_mut().unwrap() = idx;
        out.resample_count += 1;
    }
    out
}

/// One step of the configured method.
pub fn step<R: Rng + ?Sized>(
    set: &HypothesisSet,
    x_new: f64,
    config: &InferenceConfig,
    params: &WorldModelParams,
    rng: &mut R,
) -> HypothesisSet {
    match config.method {
        Method::EviTrack => evitrack_step(set, x_new, config, params, rng),
        Method::Sis => sis_step(set, x_new, params, rng),
        Method::Bpf => bpf_step(set, x_new, config.ess_threshold_fraction, params, rng),
    }
}

/// Receives the hypothesis set after every inference step.
pub trait StepObserver {
    fn observe(
        &mut self,
        set: &HypothesisSet,
        weights: &MixtureWeights,
        trajectory: &Trajectory,
        t: usize,
    ) -> Result<()>;
}

impl<F> StepObserver for F
where
    F: FnMut(&HypothesisSet, &MixtureWeights, &Trajectory, usize) -> Result<()>,
{
    fn observe(&mut self, set: &HypothesisSet, weights: &MixtureWeights, trajectory: &Trajectory, t: usize) -> Result<()> {
        self(set, weights, trajectory, t)
    }
}

/// Per-step record of one inference run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub method: String,
    pub ess: f64,
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub steps: Vec<StepRecord>,
    pub final_set: HypothesisSet,
}

/// Inference RNG of a run; the metrics derive their rollout streams from the
/// same `seed` under other tags.
pub fn inference_rng(seed: u64) -> rng::StreamRng {
    rng::stream(seed, "inference", 0)
}

/// Rolling inference over one trajectory: initialise on `x_1`, then for
/// `t = 1..T-1` step on `x_{t+1}` and hand the new set to `observer`.
pub fn run_inference<O: StepObserver + ?Sized>(
    trajectory: &Trajectory,
    config: &InferenceConfig,
    params: &WorldModelParams,
    seed: u64,
    observer: &mut O,
) -> Result<RunOutput> {
    config.validate()?;
    let mut rng = inference_rng(seed);
    let descriptor = config.descriptor();
    let mut set = init_hypotheses(config, params, trajectory.obs[0], &mut rng);
    let mut steps = Vec::with_capacity(trajectory.obs.len().saturating_sub(1));
    for &x in &trajectory.obs[1..] {
        let resamples = set.resample_count;
        set = step(&set, x, config, params, &mut rng);
        let weights = mixture_weights(&set.scores);
        observer.observe(&set, &weights, trajectory, set.t)?;
        steps.push(StepRecord {
            t: set.t,
            method: descriptor.clone(),
            ess: effective_sample_size(&weights.weights),
            resampled: set.resample_count > resamples,
        });
    }
    Ok(RunOutput { steps, final_set: set })
}
