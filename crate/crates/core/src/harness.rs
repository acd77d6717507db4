//! Experiment orchestration: methods x seeds x trajectories, alignment of
//! metric curves on `t_DD`, and aggregation per DD bin and across seeds.
//!
//! Work items run in parallel; records come back in work-item order and
//! every reduction walks them in that order, so outputs do not depend on the
//! thread count.
//!
//! Output files of one experiment directory:
//!
//! ```text
//! aligned_<metric>.csv        filtering metrics
//! aligned_<metric>_H<h>.csv   forecast metrics
//!     method, bin, offset, mean, std, n, n_traj
//! summary.csv                 method, bin, metric, horizon, pre_mean, pre_std,
//!                             post_mean, post_std, n
//! records.csv                 method, seed, trajectory, bin, t_dd, t, horizon,
//!                             metric, value
//! manifest.json               resolved config, seeds, methods, diagnostics
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::exact_filter::{Dataset, DdBin};
use crate::inference::{run_inference, GlobalInterval, InferenceConfig, Method};
use crate::metrics::{EvalConfig, MetricEvaluator, MetricName};
use crate::rng;
use crate::world_model::{Trajectory, WorldModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Main,
    Scoring,
    GSweep,
    CSweep,
    KSweep,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Main,
        Experiment::Scoring,
        Experiment::GSweep,
        Experiment::CSweep,
        Experiment::KSweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Main => "main",
            Experiment::Scoring => "scoring",
            Experiment::GSweep => "g-sweep",
            Experiment::CSweep => "c-sweep",
            Experiment::KSweep => "k-sweep",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

/// The inference configurations an experiment runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub experiment: Experiment,
    pub configs: Vec<InferenceConfig>,
}

impl SweepSpec {
    pub fn from_config(experiment: Experiment, cfg: &RunConfig) -> Result<Self> {
        let inf = &cfg.inference;
        let sw = &cfg.sweeps;
        let evitrack = |kind, k, c, g| {
            let mut ic = InferenceConfig::evitrack(kind, k, c, g);
            ic.global_pool = inf.global_pool;
            ic
        };
        let sweep_kind = cfg.score_kind(&sw.kind)?;
        let configs = match experiment {
            Experiment::Main => {
                let m = &cfg.main;
                vec![
                    evitrack(cfg.score_kind(&m.kind)?, m.k, m.c, m.g),
                    InferenceConfig::sis(m.baseline_n),
                    InferenceConfig::bpf(m.baseline_n, inf.ess_threshold_fraction),
                ]
            }
            Experiment::Scoring => sw
                .kinds
                .iter()
                .map(|k| Ok(evitrack(cfg.score_kind(k)?, sw.k, sw.c, GlobalInterval::Never)))
                .collect::<Result<_>>()?,
            Experiment::GSweep => sw
                .g_values
                .iter()
                .map(|&g| evitrack(sweep_kind, sw.k, sw.c, g))
                .collect(),
            Experiment::CSweep => sw
                .c_values
                .iter()
                .map(|&c| evitrack(sweep_kind, sw.budget / c, c, GlobalInterval::Every(1)))
                .collect(),
            Experiment::KSweep => sw
                .k_values
                .iter()
                .flat_map(|&k| {
                    let n = k * sw.c;
                    [
                        evitrack(sweep_kind, k, sw.c, GlobalInterval::Never),
                        InferenceConfig::sis(n),
                        InferenceConfig::bpf(n, inf.ess_threshold_fraction),
                    ]
                })
                .collect(),
        };
        let spec = Self { experiment, configs };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::Config(format!("{}: no configurations", self.experiment)));
        }
        for c in &self.configs {
            c.validate()?;
        }
        let descriptors: Vec<String> = self.configs.iter().map(|c| c.descriptor()).collect();
        for (i, d) in descriptors.iter().enumerate() {
            if descriptors[..i].contains(d) {
                return Err(Error::Config(format!("{}: duplicate configuration {d}", self.experiment)));
            }
        }
        let evitrack = || self.configs.iter().filter(|c| c.method == Method::EviTrack);
        match self.experiment {
            Experiment::CSweep => {
                let budget = self.configs[0].budget();
                if evitrack().any(|c| c.budget() != budget || c.g != GlobalInterval::Every(1)) {
                    return Err(Error::Config("c-sweep needs a fixed K*C budget and G = 1".into()));
                }
            }
            Experiment::KSweep => {
                for c in evitrack() {
                    if c.g != GlobalInterval::Never {
                        return Err(Error::Config("k-sweep needs G = inf".into()));
                    }
                    for m in [Method::Sis, Method::Bpf] {
                        if !self.configs.iter().any(|b| b.method == m && b.k == c.budget()) {
                            return Err(Error::Config(format!("k-sweep: no {m} baseline at N = {}", c.budget())));
                        }
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn descriptors(&self) -> Vec<String> {
        self.configs.iter().map(|c| c.descriptor()).collect()
    }
}

/// Seed of the inference run for `(seed, trajectory)`. Independent of the
/// method, so all methods see common random numbers.
pub fn run_seed(root_seed: u64, seed: u64, trajectory: usize) -> u64 {
    rng::stream_seed(rng::stream_seed(root_seed, "seed", seed), "run", trajectory as u64)
}

/// One metric value of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    /// Index into the experiment's method list.
    pub method: usize,
    pub seed: u64,
    pub trajectory: usize,
    pub bin: DdBin,
    pub t_dd: usize,
    pub t: usize,
    pub horizon: usize,
    pub metric: MetricName,
    pub value: f64,
}

impl Record {
    pub fn offset(&self) -> i64 {
        self.t as i64 - self.t_dd as i64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Scores clamped to the log floor during inference.
    pub score_clamps: u64,
    /// Per-hypothesis PLL terms clamped to the log floor.
    pub pll_clamps: u64,
    pub resamples: u64,
    /// `(horizon, count)`: (trajectory, offset) pairs inside the window that
    /// fall outside `[2, T - H]`, summed over methods and seeds.
    pub truncated: Vec<(usize, u64)>,
}

struct RunResult {
    records: Vec<Record>,
    score_clamps: u64,
    pll_clamps: u64,
    resamples: u64,
}

/// Run one method on one trajectory, evaluating metrics inside the window
/// around `t_DD`.
#[allow(clippy::too_many_arguments)]
fn run_one(
    tr: &Trajectory,
    id: usize,
    method: usize,
    config: &InferenceConfig,
    params: &WorldModelParams,
    eval: &EvalConfig,
    root_seed: u64,
    seed: u64,
    window: usize,
) -> Result<RunResult> {
    let (t_dd, bin) = match (tr.dd_time, tr.dd_bin) {
        (Some(t), Some(b)) => (t, b),
        _ => return Err(Error::InvalidParams(format!("trajectory {id} has no DD label"))),
    };
    let rs = run_seed(root_seed, seed, id);
    let mut ev = MetricEvaluator::new(params, eval, rs, id, String::new())
        .restrict_times(t_dd.saturating_sub(window), t_dd + window);
    let out = run_inference(tr, config, params, rs, &mut ev)?;
    let records = ev
        .records
        .iter()
        .map(|r| Record {
            method,
            seed,
            trajectory: id,
            bin,
            t_dd,
            t: r.t,
            horizon: r.horizon,
            metric: r.name,
            value: r.value,
        })
        .collect();
    Ok(RunResult {
        records,
        score_clamps: out.final_set.clamp_count,
        pll_clamps: ev.pll_clamps as u64,
        resamples: out.final_set.resample_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSeries {
    pub metric: MetricName,
    /// 0 for filtering metrics.
    pub horizon: usize,
    pub method: String,
    /// `early`, `mid`, `late` or `all`.
    pub bin: String,
    pub offsets: Vec<i64>,
    /// Across-seed mean of the per-seed trajectory means.
    pub mean: Vec<f64>,
    /// Across-seed sample standard deviation (0 with one seed).
    pub std: Vec<f64>,
    /// Seeds contributing at each offset.
    pub n_seeds: Vec<usize>,
    /// Trajectory values contributing at each offset, summed over seeds.
    pub n_traj: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrePostSummary {
    pub metric: MetricName,
    pub horizon: usize,
    pub method: String,
    pub bin: String,
    pub pre_mean: f64,
    pub pre_std: f64,
    pub post_mean: f64,
    pub post_std: f64,
    pub n_seeds: usize,
}

pub const ALL_BINS: &str = "all";

fn bin_groups(bin: DdBin) -> [&'static str; 2] {
    [bin.label(), ALL_BINS]
}

fn group_order(g: &str) -> usize {
    DdBin::parse(g).map_or(3, |b| b.index())
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

type SeriesKey = (usize, MetricName, usize, usize);
type SeedCells = BTreeMap<u64, BTreeMap<i64, (f64, usize)>>;

/// Per `(method, metric, horizon, group)`: per seed, per offset `(sum, count)`.
struct Accumulator {
    cells: BTreeMap<SeriesKey, SeedCells>,
    groups: Vec<String>,
}

impl Accumulator {
    fn new(records: &[Record], window: usize) -> Self {
        let groups: Vec<String> = DdBin::ALL
            .iter()
            .map(|b| b.label().to_string())
            .chain([ALL_BINS.to_string()])
            .collect();
        let mut cells: BTreeMap<SeriesKey, SeedCells> = BTreeMap::new();
        let w = window as i64;
        for r in records {
            let off = r.offset();
            if off < -w || off > w {
                continue;
            }
            for g in bin_groups(r.bin) {
                let key = (r.method, r.metric, r.horizon, group_order(g));
                let cell = cells
                    .entry(key)
                    .or_default()
                    .entry(r.seed)
                    .or_default()
                    .entry(off)
                    .or_insert((0.0, 0));
                cell.0 += r.value;
                cell.1 += 1;
            }
        }
        Self { cells, groups }
    }
}

/// Align records on `t_DD` and average per bin (and pooled), then across
/// seeds. Offsets without data are left out of a series.
pub fn align_and_average(records: &[Record], methods: &[String], window: usize) -> Result<Vec<AlignedSeries>> {
    let acc = Accumulator::new(records, window);
    let mut out = Vec::new();
    for (&(method, metric, horizon, group), per_seed) in &acc.cells {
        let mut by_offset: BTreeMap<i64, (Vec<f64>, usize)> = BTreeMap::new();
        for per_offset in per_seed.values() {
            for (&off, &(sum, count)) in per_offset {
                let e = by_offset.entry(off).or_default();
                e.0.push(sum / count as f64);
                e.1 += count;
            }
        }
        let mut s = AlignedSeries {
            metric,
            horizon,
            method: methods[method].clone(),
            bin: acc.groups[group].clone(),
            offsets: Vec::new(),
            mean: Vec::new(),
            std: Vec::new(),
            n_seeds: Vec::new(),
            n_traj: Vec::new(),
        };
        for (off, (means, n_traj)) in by_offset {
            let (m, sd) = mean_std(&means);
            s.offsets.push(off);
            s.mean.push(m);
            s.std.push(sd);
            s.n_seeds.push(means.len());
            s.n_traj.push(n_traj);
        }
        out.push(s);
    }
    // Every bin present in the records must produce a series for every
    // method and metric key seen.
    let keys: std::collections::BTreeSet<_> = acc.cells.keys().map(|&(m, n, h, _)| (m, n, h)).collect();
    let bins_present: std::collections::BTreeSet<usize> = records.iter().map(|r| r.bin.index()).collect();
    for (m, name, h) in keys {
        for &b in &bins_present {
            if !acc.cells.contains_key(&(m, name, h, b)) {
                return Err(Error::EmptyBin {
                    bin: acc.groups[b].clone(),
                    metric: name.to_string(),
                    method: methods[m].clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Pre window = offsets `[-w, -1]`, post = `[0, w]`, both averaged per seed
/// before taking mean and sample std across seeds.
pub fn pre_post_summary(records: &[Record], methods: &[String], window: usize) -> Vec<PrePostSummary> {
    let acc = Accumulator::new(records, window);
    let mut out = Vec::new();
    for (&(method, metric, horizon, group), per_seed) in &acc.cells {
        let mut pre = Vec::new();
        let mut post = Vec::new();
        for per_offset in per_seed.values() {
            let side = |pred: fn(i64) -> bool| {
                let vals: Vec<f64> = per_offset
                    .iter()
                    .filter(|(&o, _)| pred(o))
                    .map(|(_, &(s, c))| s / c as f64)
                    .collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            pre.extend(side(|o| o < 0));
            post.extend(side(|o| o >= 0));
        }
        let (pre_mean, pre_std) = mean_std(&pre);
        let (post_mean, post_std) = mean_std(&post);
        out.push(PrePostSummary {
            metric,
            horizon,
            method: methods[method].clone(),
            bin: acc.groups[group].clone(),
            pre_mean,
            pre_std,
            post_mean,
            post_std,
            n_seeds: per_seed.len(),
        });
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub window: usize,
    pub records: Vec<Record>,
    pub aligned: Vec<AlignedSeries>,
    pub summaries: Vec<PrePostSummary>,
    pub diagnostics: Diagnostics,
}

impl ExperimentResult {
    pub fn summary(&self, method: &str, bin: &str, metric: MetricName, horizon: usize) -> Option<&PrePostSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.bin == bin && s.metric == metric && s.horizon == horizon)
    }

    /// Rebuild aligned series and summaries from records alone.
    pub fn from_records(
        experiment: Experiment,
        methods: Vec<String>,
        seeds: Vec<u64>,
        window: usize,
        records: Vec<Record>,
        diagnostics: Diagnostics,
    ) -> Result<Self> {
        let aligned = align_and_average(&records, &methods, window)?;
        let summaries = pre_post_summary(&records, &methods, window);
        Ok(Self {
            experiment,
            methods,
            seeds,
            window,
            records,
            aligned,
            summaries,
            diagnostics,
        })
    }
}

/// Run every configuration of `spec` on every trajectory for every seed.
pub fn run_sweep(spec: &SweepSpec, dataset: &Dataset, cfg: &RunConfig, seeds: &[u64]) -> Result<ExperimentResult> {
    spec.validate()?;
    let params = &dataset.spec.params;
    let eval = cfg.evaluation.eval_config();
    eval.validate()?;
    let window = cfg.evaluation.window;
    let root = cfg.dataset.root_seed;
    if dataset.trajectories.is_empty() {
        return Err(Error::InvalidParams("dataset is empty".into()));
    }

    let items: Vec<(usize, u64, usize)> = (0..spec.configs.len())
        .flat_map(|m| seeds.iter().flat_map(move |&s| (0..dataset.trajectories.len()).map(move |i| (m, s, i))))
        .collect();
    log::info!(
        "{}: {} configurations x {} seeds x {} trajectories",
        spec.experiment,
        spec.configs.len(),
        seeds.len(),
        dataset.trajectories.len()
    );
    let results: Vec<RunResult> = items
        .par_iter()
        .map(|&(m, s, i)| {
            run_one(
                &dataset.trajectories[i],
                i,
                m,
                &spec.configs[m],
                params,
                &eval,
                root,
                s,
                window,
            )
        })
        .collect::<Result<_>>()?;

    let mut diagnostics = Diagnostics::default();
    let mut records = Vec::with_capacity(results.iter().map(|r| r.records.len()).sum());
    for r in results {
        diagnostics.score_clamps += r.score_clamps;
        diagnostics.pll_clamps += r.pll_clamps;
        diagnostics.resamples += r.resamples;
        records.extend(r.records);
    }
    diagnostics.truncated = truncation_counts(dataset, &eval, window, spec.configs.len() * seeds.len());
    for &(h, n) in &diagnostics.truncated {
        if n > 0 {
            log::info!("H={h}: {n} (trajectory, offset) pairs fall outside [2, T-H] and are left out");
        }
    }
    if diagnostics.score_clamps + diagnostics.pll_clamps > 0 {
        log::warn!(
            "log-floor clamps: {} scores, {} PLL terms",
            diagnostics.score_clamps,
            diagnostics.pll_clamps
        );
    }
    ExperimentResult::from_records(spec.experiment, spec.descriptors(), seeds.to_vec(), window, records, diagnostics)
}

fn truncation_counts(dataset: &Dataset, eval: &EvalConfig, window: usize, runs: usize) -> Vec<(usize, u64)> {
    let mut horizons = vec![0];
    horizons.extend(&eval.horizons);
    horizons
        .into_iter()
        .map(|h| {
            let missing: u64 = dataset
                .trajectories
                .iter()
                .filter_map(|tr| tr.dd_time.map(|t| (t, tr.len())))
                .map(|(t_dd, len)| {
                    (-(window as i64)..=window as i64)
                        .filter(|&o| {
                            let t = t_dd as i64 + o;
                            t < 2 || t + h as i64 > len as i64
                        })
                        .count() as u64
                })
                .sum();
            (h, missing * runs as u64)
        })
        .collect()
}

pub fn run_experiment(experiment: Experiment, dataset: &Dataset, cfg: &RunConfig) -> Result<ExperimentResult> {
    let spec = SweepSpec::from_config(experiment, cfg)?;
    run_sweep(&spec, dataset, cfg, &cfg.evaluation.seeds)
}

pub fn run_main_experiment(dataset: &Dataset, cfg: &RunConfig) -> Result<ExperimentResult> {
    run_experiment(Experiment::Main, dataset, cfg)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: Experiment,
    pub version: String,
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub window: usize,
    pub dataset_dir: String,
    pub n_trajectories: usize,
    pub diagnostics: Diagnostics,
    pub config: RunConfig,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

fn aligned_file_name(metric: MetricName, horizon: usize) -> String {
    if horizon == 0 {
        format!("aligned_{metric}.csv")
    } else {
        format!("aligned_{metric}_H{horizon}.csv")
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

fn write_tables(dir: &Path, result: &ExperimentResult) -> Result<()> {
    let mut files: BTreeMap<String, Vec<&AlignedSeries>> = BTreeMap::new();
    for s in &result.aligned {
        files.entry(aligned_file_name(s.metric, s.horizon)).or_default().push(s);
    }
    for (name, series) in files {
        let mut w = csv_writer(&dir.join(name))?;
        w.write_record(["method", "bin", "offset", "mean", "std", "n", "n_traj"])?;
        for s in series {
            for i in 0..s.offsets.len() {
                w.write_record([
                    s.method.clone(),
                    s.bin.clone(),
                    s.offsets[i].to_string(),
                    s.mean[i].to_string(),
                    s.std[i].to_string(),
                    s.n_seeds[i].to_string(),
                    s.n_traj[i].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
    }

    let mut w = csv_writer(&dir.join(SUMMARY_FILE))?;
    w.write_record([
        "method",
        "bin",
        "metric",
        "horizon",
        "pre_mean",
        "pre_std",
        "post_mean",
        "post_std",
        "n",
    ])?;
    for s in &result.summaries {
        w.write_record([
            s.method.clone(),
            s.bin.clone(),
            s.metric.to_string(),
            s.horizon.to_string(),
            s.pre_mean.to_string(),
            s.pre_std.to_string(),
            s.post_mean.to_string(),
            s.post_std.to_string(),
            s.n_seeds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    Ok(())
}

pub fn write_records(path: &Path, result: &ExperimentResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "seed", "trajectory", "bin", "t_dd", "t", "horizon", "metric", "value"])?;
    for r in &result.records {
        w.write_record([
            result.methods[r.method].as_str(),
            &r.seed.to_string(),
            &r.trajectory.to_string(),
            r.bin.label(),
            &r.t_dd.to_string(),
            &r.t.to_string(),
            &r.horizon.to_string(),
            r.metric.as_str(),
            &r.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct RecordRow {
    method: String,
    seed: u64,
    trajectory: usize,
    bin: String,
    t_dd: usize,
    t: usize,
    horizon: usize,
    metric: String,
    value: f64,
}

/// Read a records file. Methods are indexed in order of first appearance.
pub fn read_records(path: &Path) -> Result<(Vec<String>, Vec<Record>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut methods: Vec<String> = Vec::new();
    let mut records = Vec::new();
    for row in r.deserialize() {
        let row: RecordRow = row?;
        let method = match methods.iter().position(|m| *m == row.method) {
            Some(i) => i,
            None => {
                methods.push(row.method);
                methods.len() - 1
            }
        };
        records.push(Record {
            method,
            seed: row.seed,
            trajectory: row.trajectory,
            bin: DdBin::parse(&row.bin).ok_or_else(|| Error::Config(format!("unknown bin {:?}", row.bin)))?,
            t_dd: row.t_dd,
            t: row.t,
            horizon: row.horizon,
            metric: row.metric.parse()?,
            value: row.value,
        });
    }
    Ok((methods, records))
}

/// Write all result files into `dir`. Refuses to overwrite an existing
/// manifest unless `force` is set.
pub fn write_results(
    dir: &Path,
    result: &ExperimentResult,
    cfg: &RunConfig,
    dataset: &Dataset,
    force: bool,
) -> Result<()> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::OutputExists(dir.to_path_buf()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tables(dir, result)?;
    if cfg.output.records {
        write_records(&dir.join(RECORDS_FILE), result)?;
    }
    let manifest = RunManifest {
        experiment: result.experiment,
        version: env!("CARGO_PKG_VERSION").to_string(),
        methods: result.methods.clone(),
        seeds: result.seeds.clone(),
        window: result.window,
        dataset_dir: cfg.dataset.dir.display().to_string(),
        n_trajectories: dataset.trajectories.len(),
        diagnostics: result.diagnostics.clone(),
        config: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

/// Re-aggregate `records.csv` in `dir` and rewrite the tables.
pub fn summarize(dir: &Path) -> Result<ExperimentResult> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let (found, mut records) = read_records(&dir.join(RECORDS_FILE))?;
    // Re-index on the manifest's method order.
    let remap: Vec<usize> = found
        .iter()
        .map(|m| {
            manifest
                .methods
                .iter()
                .position(|x| x == m)
                .ok_or_else(|| Error::Config(format!("records mention unknown method {m}")))
        })
        .collect::<Result<_>>()?;
    for r in &mut records {
        r.method = remap[r.method];
    }
    let result = ExperimentResult::from_records(
        manifest.experiment,
        manifest.methods,
        manifest.seeds,
        manifest.window,
        records,
        manifest.diagnostics,
    )?;
    write_tables(dir, &result)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn rec(method: usize, seed: u64, trajectory: usize, bin: DdBin, t_dd: usize, t: usize, value: f64) -> Record {
        Record {
            method,
            seed,
            trajectory,
            bin,
            t_dd,
            t,
            horizon: 0,
            metric: MetricName::BaFilt,
            value,
        }
    }

    #[test]
    fn single_seed_has_zero_std() {
        let records: Vec<Record> = (0..5).map(|t| rec(0, 0, 0, DdBin::Early, 3, t + 1, t as f64)).collect();
        let a = align_and_average(&records, &["m".into()], 20).unwrap();
        assert!(a.iter().all(|s| s.std.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn constant_value_gives_constant_series() {
        let mut records = Vec::new();
        for seed in 0..3 {
            for tr in 0..4 {
                for t in 1..30 {
                    records.push(rec(0, seed, tr, DdBin::Mid, 10, t, 0.7));
                }
            }
        }
        let a = align_and_average(&records, &["m".into()], 20).unwrap();
        for s in &a {
            assert!(s.mean.iter().all(|&v| (v - 0.7).abs() < 1e-15));
            assert!(s.std.iter().all(|&v| v.abs() < 1e-15));
        }
        let p = pre_post_summary(&records, &["m".into()], 20);
        for s in &p {
            assert_abs_diff_eq!(s.pre_mean, s.post_mean, epsilon = 1e-15);
        }
    }

    #[test]
    fn three_seed_means_give_sample_std() {
        let records: Vec<Record> = (0..3).map(|s| rec(0, s, 0, DdBin::Late, 5, 5, (s + 1) as f64)).collect();
        let a = align_and_average(&records, &["m".into()], 20).unwrap();
        let s = a.iter().find(|s| s.bin == "late").unwrap();
        assert_eq!(s.offsets, vec![0]);
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);
        assert_eq!(s.n_seeds, vec![3]);
    }

    #[test]
    fn offset_zero_counts_as_post() {
        let records = vec![rec(0, 0, 0, DdBin::Early, 10, 9, 0.0), rec(0, 0, 0, DdBin::Early, 10, 10, 1.0)];
        let p = pre_post_summary(&records, &["m".into()], 20);
        let s = p.iter().find(|s| s.bin == "early").unwrap();
        assert_eq!((s.pre_mean, s.post_mean), (0.0, 1.0));
    }

    #[test]
    fn pooled_summary_lies_between_bins() {
        let mut records = Vec::new();
        for (i, bin) in DdBin::ALL.into_iter().enumerate() {
            for tr in 0..3 {
                for t in 1..60 {
                    let id = i * 3 + tr;
                    let value = (i as f64) + 0.1 * tr as f64 + if t >= 30 { 1.0 } else { 0.0 };
                    records.push(rec(0, 0, id, bin, 30, t, value));
                }
            }
        }
        let p = pre_post_summary(&records, &["m".into()], 20);
        let get = |b: &str| p.iter().find(|s| s.bin == b).unwrap();
        let all = get(ALL_BINS);
        let per: Vec<_> = DdBin::ALL.iter().map(|b| get(b.label())).collect();
        let lo = per.iter().map(|s| s.post_mean).fold(f64::INFINITY, f64::min);
        let hi = per.iter().map(|s| s.post_mean).fold(f64::NEG_INFINITY, f64::max);
        assert!(all.post_mean >= lo && all.post_mean <= hi);
    }

    #[test]
    fn missing_bin_is_an_error() {
        let records = vec![
            rec(0, 0, 0, DdBin::Early, 10, 10, 1.0),
            Record {
                metric: MetricName::Ess,
                ..rec(0, 0, 1, DdBin::Mid, 40, 40, 1.0)
            },
        ];
        assert!(matches!(
            align_and_average(&records, &["m".into()], 20),
            Err(Error::EmptyBin { .. })
        ));
    }

    #[test]
    fn sweep_shapes() {
        let cfg = RunConfig::default();
        let n = |e| SweepSpec::from_config(e, &cfg).unwrap().configs.len();
        assert_eq!(n(Experiment::Main), 3);
        assert_eq!(n(Experiment::Scoring), 3);
        assert_eq!(n(Experiment::GSweep), 5);
        assert_eq!(n(Experiment::CSweep), 5);
        assert_eq!(n(Experiment::KSweep), 18);
        let c = SweepSpec::from_config(Experiment::CSweep, &cfg).unwrap();
        assert!(c.configs.iter().all(|c| c.budget() == 64 && c.g == GlobalInterval::Every(1)));
        let g = SweepSpec::from_config(Experiment::GSweep, &cfg).unwrap();
        assert!(g.descriptors().last().unwrap().ends_with("Ginf"));
        assert_eq!("k-sweep".parse::<Experiment>().unwrap(), Experiment::KSweep);
    }

    #[test]
    fn k_sweep_requires_matched_baselines() {
        let mut spec = SweepSpec::from_config(Experiment::KSweep, &RunConfig::default()).unwrap();
        spec.configs.retain(|c| !(c.method == Method::Bpf && c.k == 8));
        assert!(spec.validate().is_err());
    }
}
