//! End-to-end runs on a small dataset with early DD bins ([3, 5, 7, 12]),
//! which the default world model does reach.

use std::fs;
use std::path::Path;

use evitrack_core::config::RunConfig;
use evitrack_core::exact_filter::{generate_dataset, Dataset, DdBins};
use evitrack_core::harness::{self, Experiment, ExperimentResult, ALL_BINS, SUMMARY_FILE};
use evitrack_core::metrics::MetricName;

fn small_config(seeds: Vec<u64>) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.bins = DdBins { edges: [3, 5, 7, 12] };
    cfg.dataset.per_bin = 2;
    cfg.dataset.max_attempts = 5_000;
    cfg.world.length = 80;
    cfg.evaluation.seeds = seeds;
    cfg
}

fn dataset(cfg: &RunConfig) -> Dataset {
    generate_dataset(&cfg.dataset_spec()).unwrap()
}

fn write(dir: &Path, r: &ExperimentResult, cfg: &RunConfig, ds: &Dataset) -> Vec<u8> {
    harness::write_results(dir, r, cfg, ds, true).unwrap();
    fs::read(dir.join(SUMMARY_FILE)).unwrap()
}

#[test]
fn main_experiment_outputs() {
    let cfg = small_config(vec![0, 1]);
    let ds = dataset(&cfg);
    let r = harness::run_main_experiment(&ds, &cfg).unwrap();
    assert_eq!(r.methods.len(), 3);
    let tmp = tempfile::tempdir().unwrap();
    let first = write(tmp.path(), &r, &cfg, &ds);

    for m in &r.methods {
        for bin in ["early", "mid", "late", ALL_BINS] {
            for (name, h) in [(MetricName::BaFilt, 0), (MetricName::Pll, 1), (MetricName::Mse, 10), (MetricName::Ess, 0)] {
                let s = r.summary(m, bin, name, h).unwrap_or_else(|| panic!("{m} {bin} {name} H{h}"));
                assert!(s.pre_std >= 0.0 && s.post_std >= 0.0);
                assert_eq!(s.n_seeds, 2);
            }
        }
    }
    for s in &r.aligned {
        assert_eq!(s.mean.len(), s.offsets.len());
        assert!(s.offsets.iter().all(|o| (-20..=20).contains(o)));
        assert!(s.std.iter().all(|&v| v >= 0.0));
    }
    // Early-bin trajectories have t_DD < 5, so most pre offsets are cut.
    assert!(r.diagnostics.truncated.iter().any(|&(_, n)| n > 0));
    for f in ["aligned_ba_filt.csv", "aligned_pll_H1.csv", "aligned_mse_H5.csv", "records.csv", "manifest.json"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let header = fs::read_to_string(tmp.path().join("aligned_pll_H1.csv")).unwrap();
    assert!(header.starts_with("method,bin,offset,mean,std,n,n_traj\n"));

    // Re-aggregating the records reproduces the tables.
    let again = harness::summarize(tmp.path()).unwrap();
    assert_eq!(again.summaries, r.summaries);
    assert_eq!(fs::read(tmp.path().join(SUMMARY_FILE)).unwrap(), first);

    // Second run with the same seeds is bit-identical.
    let r2 = harness::run_main_experiment(&ds, &cfg).unwrap();
    let tmp2 = tempfile::tempdir().unwrap();
    assert_eq!(write(tmp2.path(), &r2, &cfg, &ds), first);

    assert!(harness::write_results(tmp.path(), &r, &cfg, &ds, false).is_err());
}

#[test]
fn single_seed_has_zero_std_and_thread_count_does_not_matter() {
    let cfg = small_config(vec![0]);
    let ds = dataset(&cfg);
    let run_with = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| harness::run_experiment(Experiment::Scoring, &ds, &cfg).unwrap())
    };
    let a = run_with(1);
    let b = run_with(3);
    assert_eq!(a.summaries, b.summaries);
    assert_eq!(a.methods.len(), 3);
    assert!(a.summaries.iter().all(|s| s.pre_std == 0.0 || s.pre_std.is_nan()));
    assert!(a.aligned.iter().all(|s| s.std.iter().all(|&v| v == 0.0)));
}

#[test]
fn sweeps_run_every_grid_point() {
    let mut cfg = small_config(vec![0]);
    cfg.dataset.per_bin = 1;
    cfg.world.length = 40;
    cfg.evaluation.horizons = vec![1];
    let ds = dataset(&cfg);
    for (e, n) in [(Experiment::GSweep, 5), (Experiment::CSweep, 5), (Experiment::KSweep, 18)] {
        let r = harness::run_experiment(e, &ds, &cfg).unwrap();
        assert_eq!(r.methods.len(), n, "{e}");
        assert_eq!(r.summaries.iter().filter(|s| s.bin == ALL_BINS && s.metric == MetricName::BaFilt).count(), n);
    }
    let g = harness::run_experiment(Experiment::GSweep, &ds, &cfg).unwrap();
    assert!(g.methods.last().unwrap().ends_with("Ginf"));
}
