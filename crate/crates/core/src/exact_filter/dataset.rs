//! Balanced delayed-disambiguation datasets.
//!
//! Candidates are simulated from `stream(root_seed, "candidate", i)`, labelled
//! with the quadrature filter and accepted in candidate order until every bin
//! holds `per_bin` trajectories. Candidates are labelled in parallel batches
//! but consumed sequentially, so the result does not depend on the thread
//! count.
//!
//! On-disk layout:
//!
//! ```text
//! <dir>/dataset.json                 resolved DatasetSpec + rejection stats
//! <dir>/manifest.tsv                 one row per trajectory (see ManifestEntry)
//! <dir>/trajectories/traj_NNNN.csv   columns t, z_true, x
//! <dir>/trajectories/traj_NNNN.meta.json
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{detect_dd_streaming, DdBin, DdBins, GridSpec, QuadratureGrid, TransitionKernel};
use crate::rng::stream_seed;
use crate::world_model::{simulate, Trajectory, WorldModelParams};
use crate::{Error, Result};

pub const DEFAULT_MAX_ATTEMPTS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub params: WorldModelParams,
    pub grid: GridSpec,
    pub bins: DdBins,
    pub tau: f64,
    pub per_bin: usize,
    pub root_seed: u64,
    pub max_attempts: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            params: WorldModelParams::default(),
            grid: GridSpec::default(),
            bins: DdBins::default(),
            tau: 0.8,
            per_bin: 100,
            root_seed: 0,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.bins.validate()?;
        QuadratureGrid::from_spec(&self.grid)?.check_coverage(&self.params)?;
        if !(self.tau > 0.5 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0.5, 1), got {}", self.tau)));
        }
        if self.per_bin == 0 {
            return Err(Error::Config("per_bin must be >= 1".into()));
        }
        if self.bins.reject_above() > self.params.length {
            return Err(Error::Config(format!(
                "last DD bin edge {} exceeds T={}",
                self.bins.reject_above(),
                self.params.length
            )));
        }
        Ok(())
    }
}

/// Bookkeeping of the rejection sampler.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub attempts: u64,
    pub accepted: usize,
    /// Disambiguated before the first bin edge.
    pub rejected_early: u64,
    /// Disambiguated after the last edge, or never.
    pub rejected_late: u64,
    /// Landed in a bin that was already full.
    pub rejected_full: u64,
    pub max_dd_seen: Option<usize>,
    /// `dd_counts[t]` = candidates with `t_DD = t` among those labelled;
    /// index 0 counts candidates with no crossing up to the last edge.
    pub dd_counts: Vec<u64>,
}

impl RejectionStats {
    pub fn rejected_fraction(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            (self.attempts - self.accepted as u64) as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    /// Ordered Early, Mid, Late; trajectory id = position in this vector.
    pub trajectories: Vec<Trajectory>,
    /// Candidate index each trajectory was drawn from.
    pub candidates: Vec<u64>,
    pub stats: RejectionStats,
}

/// One row of `manifest.tsv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub id: usize,
    pub candidate: u64,
    pub seed: u64,
    pub t_dd: usize,
    pub bin: DdBin,
    pub true_basin: i8,
}

#[derive(Serialize, Deserialize)]
struct SidecarMeta {
    seed: u64,
    dd_time: Option<usize>,
    dd_bin: Option<DdBin>,
    true_basin: i8,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    spec: DatasetSpec,
    stats: RejectionStats,
}

#[derive(Serialize, Deserialize)]
struct Row {
    t: usize,
    z_true: f64,
    x: f64,
}

fn label_candidate(
    spec: &DatasetSpec,
    grid: &QuadratureGrid,
    kernel: &TransitionKernel,
    index: u64,
) -> Result<(Trajectory, Option<usize>)> {
    let seed = stream_seed(spec.root_seed, "candidate", index);
    let tr = simulate(&spec.params, seed);
    let dd = detect_dd_streaming(
        &tr.obs,
        tr.true_basin,
        spec.tau,
        spec.bins.reject_above(),
        &spec.params,
        grid,
        kernel,
    )?;
    Ok((tr, dd))
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let grid = QuadratureGrid::from_spec(&spec.grid)?;
    let kernel = TransitionKernel::build(&spec.params, &grid);
    let edges = spec.bins.edges;

    let mut stats = RejectionStats {
        dd_counts: vec![0; edges[3] + 1],
        ..Default::default()
    };
    let mut selected: [Vec<(u64, Trajectory)>; 3] = Default::default();
    let batch = (rayon::current_num_threads() * 32).max(64) as u64;
    let mut next = 0u64;

    'outer: while next < spec.max_attempts {
        let end = (next + batch).min(spec.max_attempts);
        let labelled: Vec<_> = (next..end)
            .into_par_iter()
            .map(|i| label_candidate(spec, &grid, &kernel, i))
            .collect::<Result<_>>()?;
        for (offset, (mut tr, dd)) in labelled.into_iter().enumerate() {
            let index = next + offset as u64;
            stats.attempts += 1;
            stats.dd_counts[dd.unwrap_or(0)] += 1;
            if let Some(t) = dd {
                stats.max_dd_seen = stats.max_dd_seen.max(Some(t));
            }
            match dd.map(|t| (t, spec.bins.classify(t))) {
                Some((t, Some(bin))) => {
                    let slot = &mut selected[bin.index()];
                    if slot.len() < spec.per_bin {
                        tr.dd_time = Some(t);
                        tr.dd_bin = Some(bin);
                        slot.push((index, tr));
                        stats.accepted += 1;
                    } else {
                        stats.rejected_full += 1;
                    }
                }
                Some((t, None)) if t < edges[0] => stats.rejected_early += 1,
                _ => stats.rejected_late += 1,
            }
            if selected.iter().all(|s| s.len() == spec.per_bin) {
                break 'outer;
            }
        }
        next = end;
    }

    if selected.iter().any(|s| s.len() < spec.per_bin) {
        log::info!(
            "dataset generation exhausted: {} attempts, t_DD histogram {:?}",
            stats.attempts,
            stats.dd_counts
        );
        return Err(Error::ExhaustedAttempts {
            attempts: stats.attempts,
            per_bin: spec.per_bin,
            filled: [selected[0].len(), selected[1].len(), selected[2].len()],
            max_dd_seen: stats.max_dd_seen,
        });
    }

    let (candidates, trajectories) = selected.into_iter().flatten().unzip();
    Ok(Dataset {
        spec: spec.clone(),
        trajectories,
        candidates,
        stats,
    })
}

fn traj_stem(id: usize) -> String {
    format!("traj_{id:04}")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.trajectories
            .iter()
            .zip(&self.candidates)
            .enumerate()
            .map(|(id, (tr, &candidate))| ManifestEntry {
                path: format!("trajectories/{}.csv", traj_stem(id)),
                id,
                candidate,
                seed: tr.seed,
                t_dd: tr.dd_time.expect("dataset trajectories are labelled"),
                bin: tr.dd_bin.expect("dataset trajectories are labelled"),
                true_basin: tr.true_basin,
            })
            .collect()
    }

    /// Write the dataset under `dir`. Refuses to touch an existing manifest
    /// unless `force` is set.
    pub fn write(&self, dir: &Path, force: bool) -> Result<()> {
        let manifest_path = dir.join("manifest.tsv");
        if manifest_path.exists() && !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
        let traj_dir = dir.join("trajectories");
        create_dir(&traj_dir)?;

        for (id, tr) in self.trajectories.iter().enumerate() {
            let stem = traj_stem(id);
            let path = traj_dir.join(format!("{stem}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            for (t, (&z, &x)) in tr.latent.iter().zip(&tr.obs).enumerate() {
                w.serialize(Row { t: t + 1, z_true: z, x })?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            let meta = SidecarMeta {
                seed: tr.seed,
                dd_time: tr.dd_time,
                dd_bin: tr.dd_bin,
                true_basin: tr.true_basin,
            };
            let meta_path = traj_dir.join(format!("{stem}.meta.json"));
            fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        }

        let file = DatasetFile {
            spec: self.spec.clone(),
            stats: self.stats.clone(),
        };
        let spec_path = dir.join("dataset.json");
        fs::write(&spec_path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&spec_path, e))?;

        let mut out = Vec::new();
        writeln!(out, "# evitrack dataset manifest").unwrap();
        writeln!(
            out,
            "# attempts={} accepted={} rejected_fraction={} rejected_early={} rejected_late={} rejected_full={}",
            self.stats.attempts,
            self.stats.accepted,
            self.stats.rejected_fraction(),
            self.stats.rejected_early,
            self.stats.rejected_late,
            self.stats.rejected_full
        )
        .unwrap();
        {
            let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(&mut out);
            for entry in self.manifest() {
                w.serialize(entry)?;
            }
            w.flush().map_err(|e| Error::io(&manifest_path, e))?;
        }
        fs::write(&manifest_path, out).map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let spec_path = dir.join("dataset.json");
        let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let DatasetFile { spec, stats } = serde_json::from_str(&text)?;

        let entries = read_manifest(&dir.join("manifest.tsv"))?;
        let mut trajectories = Vec::with_capacity(entries.len());
        let mut candidates = Vec::with_capacity(entries.len());
        for entry in entries {
            let path: PathBuf = dir.join(&entry.path);
            let mut r = csv::Reader::from_path(&path)?;
            let (mut latent, mut obs) = (Vec::new(), Vec::new());
            for row in r.deserialize::<Row>() {
                let row = row?;
                latent.push(row.z_true);
                obs.push(row.x);
            }
            if latent.len() != spec.params.length {
                return Err(Error::Config(format!(
                    "{}: expected {} rows, found {}",
                    path.display(),
                    spec.params.length,
                    latent.len()
                )));
            }
            trajectories.push(Trajectory {
                latent,
                obs,
                dd_time: Some(entry.t_dd),
                dd_bin: Some(entry.bin),
                true_basin: entry.true_basin,
                seed: entry.seed,
            });
            candidates.push(entry.candidate);
        }
        Ok(Self {
            spec,
            trajectories,
            candidates,
            stats,
        })
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let body: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<String>>>()
        .map_err(|e| Error::io(path, e))?
        .into_iter()
        .filter(|l| !l.starts_with('#'))
        .collect();
    let joined = body.join("\n");
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(joined.as_bytes());
    r.deserialize().map(|e| e.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bins shifted to where Table 1 trajectories actually disambiguate, so
    /// the sampler can be exercised quickly.
    fn quick_spec(per_bin: usize) -> DatasetSpec {
        DatasetSpec {
            bins: DdBins { edges: [3, 5, 7, 12] },
            per_bin,
            max_attempts: 5_000,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn fills_every_bin_exactly() {
        let ds = generate_dataset(&quick_spec(4)).unwrap();
        assert_eq!(ds.trajectories.len(), 12);
        for bin in DdBin::ALL {
            let n = ds.trajectories.iter().filter(|t| t.dd_bin == Some(bin)).count();
            assert_eq!(n, 4);
        }
        for tr in &ds.trajectories {
            let t = tr.dd_time.unwrap();
            assert_eq!(ds.spec.bins.classify(t), tr.dd_bin);
        }
        assert!(ds.stats.rejected_fraction() > 0.0);
        assert_eq!(ds.stats.attempts, ds.stats.dd_counts.iter().sum::<u64>());
    }

    #[test]
    fn deterministic_selection() {
        let a = generate_dataset(&quick_spec(1)).unwrap();
        let b = generate_dataset(&quick_spec(1)).unwrap();
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a, b);
    }

    #[test]
    fn exhausted_attempts_reports_fill_state() {
        let spec = DatasetSpec {
            max_attempts: 50,
            ..DatasetSpec::default()
        };
        match generate_dataset(&spec) {
            Err(Error::ExhaustedAttempts { attempts, filled, .. }) => {
                assert_eq!(attempts, 50);
                assert!(filled.iter().all(|&f| f < 100));
            }
            other => panic!("expected ExhaustedAttempts, got {other:?}"),
        }
    }

    #[test]
    fn write_read_round_trip_and_refusal() {
        let ds = generate_dataset(&quick_spec(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path(), false).unwrap();
        assert!(matches!(ds.write(dir.path(), false), Err(Error::OutputExists(_))));
        ds.write(dir.path(), true).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back, ds);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
        assert!(manifest.starts_with("# evitrack dataset manifest"));
        assert!(manifest.contains("rejected_fraction="));
    }
}
