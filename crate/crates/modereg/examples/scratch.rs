use modereg::bandwidth::*;
use modereg::mode_seek::{EstimatorKind, GridSpec};
use modereg::simulation::*;
use modereg::ErrorModel;

fn main() {
    for seed in 0..6u64 {
        let cfg = SimConfig {
            scenario: Scenario::C1,
            n: 300,
            lambda: 1.0,
            n_replicates: 1,
            seed,
            grid: GridSpec::new(-2.0, 2.0, 0.5).unwrap(),
            start_rule: SimStartRule::TruthOffsets(vec![0.0]),
            estimators: vec![EstimatorKind::LocalConstant],
            bandwidth_mode: BandwidthMode::Simex { b_replicates: 1, h1_grid: None },
        };
        let (data, _) = generate_dataset(&cfg, 0).unwrap();
        let h2 = h2_normal_reference(data.y()).unwrap();
        let sd = {
            let m: f64 = data.w().iter().sum::<f64>() / data.n() as f64;
            (data.w().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (data.n() - 1) as f64).sqrt()
        };
        let grid = log_spaced(0.004 * sd, 2.0 * sd, 28).unwrap();
        let cv = CvConfig::new(EstimatorKind::LocalConstant, grid.clone(), seed).unwrap();
        let (h1, trace) = minimize_cv_h1(&data, &ErrorModel::no_error(), &cv, h2, None, None).unwrap();
        let idx = grid.iter().position(|&g| g == h1).unwrap();
        let scores: Vec<f64> = trace.iter().map(|c| (c.score * 1000.0).round() / 1000.0).collect();
        println!("seed {seed}: h1={h1:.4} ({:.4} sW) idx={idx}/27 scores={scores:?}", h1 / sd);
    }
}
