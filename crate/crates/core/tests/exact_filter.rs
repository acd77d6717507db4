use evitrack_core::exact_filter::{detect_dd, filter_posterior, GridSpec, PosteriorGrid, QuadratureGrid, TransitionKernel};
use evitrack_core::rng;
use evitrack_core::verify::{kalman_discrepancy, linear_params};
use evitrack_core::world_model::{simulate, WorldModelParams};

fn grid(n_points: usize) -> QuadratureGrid {
    QuadratureGrid::from_spec(&GridSpec {
        n_points,
        ..GridSpec::default()
    })
    .unwrap()
}

#[test]
fn linear_case_matches_kalman() {
    let p = linear_params(&WorldModelParams::default());
    let g = grid(1201);
    let k = TransitionKernel::build(&p, &g);
    for seed in 0..20 {
        let tr = simulate(&p, rng::stream_seed(7, "kalman-it", seed));
        let (dm, dv) = kalman_discrepancy(&tr, &p, &g, &k).unwrap();
        assert!(dm < 1e-3 && dv < 1e-3, "seed {seed}: {dm} {dv}");
    }
}

struct Doubling {
    coarse: QuadratureGrid,
    fine: QuadratureGrid,
    rows: Vec<(PosteriorGrid, PosteriorGrid, i8)>,
}

fn doubled_posteriors() -> Doubling {
    let p = WorldModelParams::default();
    let (coarse, fine) = (grid(1201), grid(2401));
    let (kc, kf) = (TransitionKernel::build(&p, &coarse), TransitionKernel::build(&p, &fine));
    let rows = (0..5)
        .map(|seed| {
            let tr = simulate(&p, rng::stream_seed(0, "candidate", seed));
            (
                filter_posterior(&tr.obs, &p, &coarse, &kc).unwrap(),
                filter_posterior(&tr.obs, &p, &fine, &kf).unwrap(),
                tr.true_basin,
            )
        })
        .collect();
    Doubling { coarse, fine, rows }
}

/// Coarse node `i` coincides with fine node `2i`; mass per node scales with
/// the cell width, so `coarse[i]` is compared with `2 * fine[2i]`.
#[test]
fn rows_are_stable_under_grid_doubling() {
    let d = doubled_posteriors();
    let mut worst = 0.0f64;
    for (pc, pf, _) in &d.rows {
        for t in 1..=pc.len() {
            let (rc, rf) = (pc.row(t), pf.row(t));
            for (i, &m) in rc.iter().enumerate() {
                worst = worst.max((m - 2.0 * rf[2 * i]).abs());
            }
        }
    }
    assert!(worst < 1e-6, "max row difference {worst:.3e}");
}

#[test]
fn dd_times_are_stable_under_grid_doubling() {
    let d = doubled_posteriors();
    for (pc, pf, basin) in &d.rows {
        assert_eq!(
            detect_dd(pc, *basin, 0.8, &d.coarse),
            detect_dd(pf, *basin, 0.8, &d.fine)
        );
    }
}
