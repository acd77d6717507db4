//! Ground-truth filtering by grid quadrature.
//!
//! The filtering posterior `p(z_t | x_{1:t})` is represented as probability
//! mass per node of a uniform grid. The transition kernel is built once as a
//! dense `n x n` matrix, each row normalised in log space; applying it skips
//! source nodes with zero mass and the exact-zero tails of each row, which
//! leaves every computed value unchanged.

pub mod dataset;

use serde::{Deserialize, Serialize};

use crate::math::{basin, log_sum_exp, normal_logpdf};
use crate::world_model::{drift_mean, emission_logpdf, WorldModelParams};
use crate::{Error, Result};

pub use dataset::{generate_dataset, Dataset, DatasetSpec, ManifestEntry, RejectionStats};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub n_points: usize,
    pub nodes: Vec<f64>,
    pub cell_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub n_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            z_min: -6.0,
            z_max: 6.0,
            n_points: 1201,
        }
    }
}

impl QuadratureGrid {
    pub fn new(z_min: f64, z_max: f64, n_points: usize) -> Result<Self> {
        if !(z_min.is_finite() && z_max.is_finite() && z_min < z_max) {
            return Err(Error::InvalidParams(format!("bad grid bounds [{z_min}, {z_max}]")));
        }
        if n_points < 3 {
            return Err(Error::InvalidParams(format!("grid needs >= 3 points, got {n_points}")));
        }
        let cell_width = (z_max - z_min) / (n_points - 1) as f64;
        let nodes = (0..n_points).map(|i| z_min + i as f64 * cell_width).collect();
        Ok(Self {
            z_min,
            z_max,
            n_points,
            nodes,
            cell_width,
        })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Self::new(spec.z_min, spec.z_max, spec.n_points)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            z_min: self.z_min,
            z_max: self.z_max,
            n_points: self.n_points,
        }
    }

    /// Require the grid to cover five prior standard deviations around `mu0`
    /// and five transition standard deviations beyond each well.
    pub fn check_coverage(&self, p: &WorldModelParams) -> Result<()> {
        let need_min = (p.mu0 - 5.0 * p.sigma0).min(-p.a - 5.0 * p.sigma_z);
        let need_max = (p.mu0 + 5.0 * p.sigma0).max(p.a + 5.0 * p.sigma_z);
        if self.z_min < need_min && self.z_max > need_max {
            Ok(())
        } else {
            Err(Error::GridTooNarrow {
                z_min: self.z_min,
                z_max: self.z_max,
                need_min,
                need_max,
            })
        }
    }
}

/// Discretised transition kernel, `weights[i * n + j] = P(z_j | z_i)`.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    n: usize,
    weights: Vec<f64>,
    /// Half-open range of nonzero entries in each row.
    support: Vec<(usize, usize)>,
}

impl TransitionKernel {
    pub fn build(p: &WorldModelParams, grid: &QuadratureGrid) -> Self {
        let n = grid.n_points;
        let mut weights = vec![0.0; n * n];
        let mut support = Vec::with_capacity(n);
        let mut logrow = vec![0.0; n];
        for (i, &zi) in grid.nodes.iter().enumerate() {
            let mean = drift_mean(zi, p);
            for (l, &zj) in logrow.iter_mut().zip(&grid.nodes) {
                *l = normal_logpdf(zj, mean, p.sigma_z);
            }
            let lse = log_sum_exp(&logrow);
            let row = &mut weights[i * n..(i + 1) * n];
            for (w, &l) in row.iter_mut().zip(&logrow) {
                *w = (l - lse).exp();
            }
            let lo = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let hi = row.iter().rposition(|&w| w > 0.0).map_or(lo, |j| j + 1);
            support.push((lo, hi));
        }
        Self { n, weights, support }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    /// `out_j = sum_i mass_i * K_ij`.
    pub fn propagate(&self, mass: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let (lo, hi) = self.support[i];
            let row = &self.weights[i * self.n + lo..i * self.n + hi];
            for (o, &k) in out[lo..hi].iter_mut().zip(row) {
                *o += m * k;
            }
        }
    }
}

/// Filtering posterior, one normalised row of node masses per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    pub n_points: usize,
    rows: Vec<f64>,
}

impl PosteriorGrid {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_points = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_points), "ragged posterior rows");
        Self {
            n_points,
            rows: rows.into_iter().flatten().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len().checked_div(self.n_points).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row for time `t` (1-based).
    pub fn row(&self, t: usize) -> &[f64] {
        assert!(t >= 1, "time is 1-based");
        &self.rows[(t - 1) * self.n_points..t * self.n_points]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.n_points.max(1))
    }

    pub fn mean(&self, t: usize, grid: &QuadratureGrid) -> f64 {
        self.row(t).iter().zip(&grid.nodes).map(|(m, z)| m * z).sum()
    }

    pub fn variance(&self, t: usize, grid: &QuadratureGrid) -> f64 {
        let mean = self.mean(t, grid);
        self.row(t)
            .iter()
            .zip(&grid.nodes)
            .map(|(m, z)| m * (z - mean) * (z - mean))
            .sum()
    }
}

/// Forward recursion state of the quadrature filter.
pub struct QuadratureFilter<'a> {
    params: &'a WorldModelParams,
    grid: &'a QuadratureGrid,
    kernel: &'a TransitionKernel,
    mass: Vec<f64>,
    scratch: Vec<f64>,
    t: usize,
}

impl<'a> QuadratureFilter<'a> {
    pub fn new(params: &'a WorldModelParams, grid: &'a QuadratureGrid, kernel: &'a TransitionKernel) -> Self {
        Self {
            params,
            grid,
            kernel,
            mass: vec![0.0; grid.n_points],
            scratch: vec![0.0; grid.n_points],
            t: 0,
        }
    }

    /// Time of the current row (0 before the first observation).
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn current(&self) -> &[f64] {
        &self.mass
    }

    /// Condition on the next observation and return the new row.
    pub fn update(&mut self, x: f64) -> Result<&[f64]> {
        let p = self.params;
        if self.t == 0 {
            for (s, &z) in self.scratch.iter_mut().zip(&self.grid.nodes) {
                *s = normal_logpdf(z, p.mu0, p.sigma0) + emission_logpdf(x, z, p);
            }
        } else {
            self.kernel.propagate(&self.mass, &mut self.scratch);
            for (s, &z) in self.scratch.iter_mut().zip(&self.grid.nodes) {
                *s = s.ln() + emission_logpdf(x, z, p);
            }
        }
        self.t += 1;
        let max = self.scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::AllMassLost { t: self.t });
        }
        let mut total = 0.0;
        for (m, &s) in self.mass.iter_mut().zip(&self.scratch) {
            *m = (s - max).exp();
            total += *m;
        }
        for m in &mut self.mass {
            *m /= total;
        }
        Ok(&self.mass)
    }
}

pub fn filter_posterior(
    obs: &[f64],
    params: &WorldModelParams,
    grid: &QuadratureGrid,
    kernel: &TransitionKernel,
) -> Result<PosteriorGrid> {
    let mut filter = QuadratureFilter::new(params, grid, kernel);
    let mut rows = Vec::with_capacity(obs.len() * grid.n_points);
    for &x in obs {
        rows.extend_from_slice(filter.update(x)?);
    }
    Ok(PosteriorGrid {
        n_points: grid.n_points,
        rows,
    })
}

/// Posterior mass on nodes whose sign matches `sign`. A node at exactly zero
/// contributes half its mass to each basin.
pub fn basin_mass(row: &[f64], sign: i8, grid: &QuadratureGrid) -> f64 {
    row.iter()
        .zip(&grid.nodes)
        .map(|(&m, &z)| {
            if z == 0.0 {
                0.5 * m
            } else if basin(z) == sign {
                m
            } else {
                0.0
            }
        })
        .sum()
}

/// First 1-based time whose basin mass for `true_basin` exceeds `tau`.
pub fn detect_dd(posterior: &PosteriorGrid, true_basin: i8, tau: f64, grid: &QuadratureGrid) -> Option<usize> {
    posterior
        .rows()
        .position(|row| basin_mass(row, true_basin, grid) > tau)
        .map(|i| i + 1)
}

/// Streaming disambiguation detection that stops at the first crossing, or
/// after `max_t` steps without one.
pub fn detect_dd_streaming(
    obs: &[f64],
    true_basin: i8,
    tau: f64,
    max_t: usize,
    params: &WorldModelParams,
    grid: &QuadratureGrid,
    kernel: &TransitionKernel,
) -> Result<Option<usize>> {
    let mut filter = QuadratureFilter::new(params, grid, kernel);
    for &x in obs.iter().take(max_t) {
        let row = filter.update(x)?;
        if basin_mass(row, true_basin, grid) > tau {
            return Ok(Some(filter.time()));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DdBin {
    Early,
    Mid,
    Late,
}

impl DdBin {
    pub const ALL: [DdBin; 3] = [DdBin::Early, DdBin::Mid, DdBin::Late];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            DdBin::Early => "early",
            DdBin::Mid => "mid",
            DdBin::Late => "late",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.label().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for DdBin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Disambiguation-time bins given by four edges `[e0, e1, e2, e3]`:
/// Early `[e0, e1)`, Mid `[e1, e2)`, Late `[e2, e3]`. Times below `e0` or
/// above `e3` are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DdBins {
    pub edges: [usize; 4],
}

impl Default for DdBins {
    fn default() -> Self {
        Self {
            edges: [30, 80, 140, 170],
        }
    }
}

impl DdBins {
    pub fn validate(&self) -> Result<()> {
        let e = self.edges;
        if e[0] >= 1 && e[0] < e[1] && e[1] < e[2] && e[2] <= e[3] {
            Ok(())
        } else {
            Err(Error::Config(format!("DD bin edges must be increasing and >= 1, got {e:?}")))
        }
    }

    pub fn reject_below(&self) -> usize {
        self.edges[0]
    }

    pub fn reject_above(&self) -> usize {
        self.edges[3]
    }

    pub fn classify(&self, t_dd: usize) -> Option<DdBin> {
        let [e0, e1, e2, e3] = self.edges;
        match t_dd {
            t if t < e0 => None,
            t if t < e1 => Some(DdBin::Early),
            t if t < e2 => Some(DdBin::Mid),
            t if t <= e3 => Some(DdBin::Late),
            _ => None,
        }
    }
}
