use nalgebra::DVector;
use ota_private_inference::config::SystemConfig;
use ota_private_inference::harness::acceptance::aggregate_moments;
use ota_private_inference::simulation::Scenario;

fn reference(z: &[DVector<f64>], cfg: &SystemConfig, with_participation: bool) -> DVector<f64> {
    let mut out = DVector::zeros(z[0].len());
    for (zk, d) in z.iter().zip(&cfg.devices) {
        let scale = if with_participation { d.weight * d.participation } else { d.weight };
        out += zk * scale;
    }
    out
}

fn max_z(mean: &[f64], se: &[f64], r: &DVector<f64>) -> f64 {
    mean.iter().zip(se).zip(r.iter()).map(|((m, s), r)| (m - r).abs() / s).fold(0.0, f64::max)
}

// With alpha_k = gamma p_k / h_k and x_k = (alpha_k / p_k) z~_k on
// participation, each device contributes p_k w_k z_k in expectation.
#[test]
fn aggregate_mean_is_participation_weighted() {
    let mut cfg = SystemConfig::paper_default(1);
    cfg.sigma_sq_m = 0.0;
    let scenario = Scenario::build(cfg).unwrap();
    let (mean, se, z) = aggregate_moments(&scenario, 20_000).unwrap();
    assert!(max_z(&mean, &se, &reference(&z, &scenario.cfg, true)) < 5.0);
    assert!(max_z(&mean, &se, &reference(&z, &scenario.cfg, false)) > 5.0);
}

#[test]
fn full_participation_is_unbiased_for_weighted_sum() {
    let mut cfg = SystemConfig::paper_default(1);
    cfg.sigma_sq_m = 0.0;
    for d in &mut cfg.devices {
        d.participation = 1.0;
    }
    let scenario = Scenario::build(cfg).unwrap();
    let (mean, se, z) = aggregate_moments(&scenario, 20_000).unwrap();
    assert!(max_z(&mean, &se, &reference(&z, &scenario.cfg, false)) < 5.0);
}
