//! Distribution of the locally selected child.
//!
//! Keeping the best of `C` transition samples turns the transition density
//! `p(z)` into `C * p(z) * F(S(z))^(C-1)`, where `F` is the CDF of the child
//! score `S` under the transition. [`selected_child_density_check`] draws
//! selection outcomes through the same code path as [`super::evitrack_step`]
//! and evaluates that reference density by quadrature so the two can be
//! compared statistically.

use rand::Rng;

use super::argmax_first;
use crate::math::normal_logpdf;
use crate::scoring::{score_increment, ScoreKind};
use crate::world_model::{drift_mean, transition_sample, WorldModelParams};

/// One local-selection problem: a parent endpoint, the next observation and
/// the selection rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionCase {
    pub z_parent: f64,
    pub x_new: f64,
    pub kind: ScoreKind,
    pub c: usize,
}

/// Reference density of the selected child on a fine uniform grid.
#[derive(Debug, Clone)]
pub struct ReferenceDensity {
    pub nodes: Vec<f64>,
    pub density: Vec<f64>,
    pub spacing: f64,
    /// Child score `S(z)` at each node.
    pub scores: Vec<f64>,
}

impl ReferenceDensity {
    /// Probability of `[lo, hi)` by midpoint quadrature on the fine grid.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.density)
            .filter(|(&z, _)| z >= lo && z < hi)
            .map(|(_, &d)| d * self.spacing)
            .sum()
    }

    /// Nodes where the child score is maximal (within `1e-12`).
    pub fn score_maximizers(&self) -> Vec<f64> {
        let best = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.nodes
            .iter()
            .zip(&self.scores)
            .filter(|(_, &s)| s >= best - 1e-12)
            .map(|(&z, _)| z)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct OrderStatsCheck {
    pub samples: Vec<f64>,
    pub reference: ReferenceDensity,
}

/// Best of `case.c` transition samples, as chosen by local selection.
pub fn select_child<R: Rng + ?Sized>(case: &SelectionCase, params: &WorldModelParams, rng: &mut R) -> f64 {
    let mut children = Vec::with_capacity(case.c);
    let mut scores = Vec::with_capacity(case.c);
    for _ in 0..case.c {
        let z = transition_sample(case.z_parent, params, rng);
        scores.push(score_increment(case.kind, case.z_parent, z, case.x_new, params));
        children.push(z);
    }
    children[argmax_first(&scores)]
}

/// Quadrature evaluation of `C p(z) F(S(z))^(C-1)` over `mu +- 8 sigma_z`.
pub fn reference_density(case: &SelectionCase, params: &WorldModelParams, n_nodes: usize) -> ReferenceDensity {
    let mean = drift_mean(case.z_parent, params);
    let half = 8.0 * params.sigma_z;
    let spacing = 2.0 * half / (n_nodes - 1) as f64;
    let nodes: Vec<f64> = (0..n_nodes).map(|i| mean - half + i as f64 * spacing).collect();
    let prior: Vec<f64> = nodes
        .iter()
        .map(|&z| normal_logpdf(z, mean, params.sigma_z).exp())
        .collect();
    let scores: Vec<f64> = nodes
        .iter()
        .map(|&z| score_increment(case.kind, case.z_parent, z, case.x_new, params))
        .collect();

    // F(S(z_j)) = P(S <= S(z_j)): cumulative prior mass in score order.
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let total: f64 = prior.iter().sum::<f64>() * spacing;
    let mut cdf = vec![0.0; n_nodes];
    let mut acc = 0.0;
    let mut k = 0;
    while k < n_nodes {
        // Equal scores share one CDF value, taken at the midpoint of their
        // combined mass.
        let mut end = k;
        let mut group = 0.0;
        while end < n_nodes && scores[order[end]] == scores[order[k]] {
            group += prior[order[end]] * spacing / total;
            end += 1;
        }
        for &j in &order[k..end] {
            cdf[j] = (acc + 0.5 * group).min(1.0);
        }
        acc += group;
        k = end;
    }

    let c = case.c as i32;
    let density = prior
        .iter()
        .zip(&cdf)
        .map(|(&p, &f)| c as f64 * p / total * f.powi(c - 1))
        .collect();
    ReferenceDensity {
        nodes,
        density,
        spacing,
        scores,
    }
}

pub fn selected_child_density_check<R: Rng + ?Sized>(
    params: &WorldModelParams,
    case: &SelectionCase,
    n_samples: usize,
    rng: &mut R,
) -> OrderStatsCheck {
    let samples = (0..n_samples).map(|_| select_child(case, params, rng)).collect();
    OrderStatsCheck {
        samples,
        reference: reference_density(case, params, 40_001),
    }
}
