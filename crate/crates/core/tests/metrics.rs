use evitrack_core::inference::{run_inference, GlobalInterval, InferenceConfig};
use evitrack_core::metrics::{EvalConfig, MetricEvaluator, MetricName};
use evitrack_core::rng;
use evitrack_core::world_model::{simulate, WorldModelParams};
use evitrack_core::ScoreKind;

fn pll_values(m: usize) -> Vec<f64> {
    let p = WorldModelParams {
        length: 60,
        ..WorldModelParams::default()
    };
    let eval = EvalConfig { horizons: vec![1], m };
    let cfg = InferenceConfig::evitrack(ScoreKind::Joint, 32, 2, GlobalInterval::Never);
    let mut out = Vec::new();
    for i in 0..20 {
        let tr = simulate(&p, rng::stream_seed(0, "smoke", i));
        let mut ev = MetricEvaluator::new(&p, &eval, rng::stream_seed(1, "smoke", i), i as usize, cfg.descriptor());
        run_inference(&tr, &cfg, &p, rng::stream_seed(1, "smoke", i), &mut ev).unwrap();
        out.extend(ev.records.iter().filter(|r| r.name == MetricName::Pll).map(|r| r.value));
    }
    out
}

#[test]
fn pll_is_stable_when_doubling_rollouts() {
    let (a, b) = (pll_values(20), pll_values(40));
    assert_eq!(a.len(), b.len());
    let mean_change = a.iter().zip(&b).map(|(x, y)| y - x).sum::<f64>() / a.len() as f64;
    assert!(mean_change.abs() < 0.1, "mean PLL(M=40) - PLL(M=20) = {mean_change}");
}
