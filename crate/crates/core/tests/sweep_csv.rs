use ota_private_inference::config::SystemConfig;
use ota_private_inference::harness::sweep::{run_sweep, sweep_csv, SweepMode, SweepSpec, SWEEP_COLUMNS};

const GOLDEN_HEADER: &str = "mode,eps_target,eps_actual,sigma_sq,mse_bound_total,mse_bound_noise,\
mse_bound_weighting,mse_bound_cross,mse_empirical,mse_stderr,p0,acc_lower_bound,acc_empirical,acc_stderr,\
trials,seed,calibrated";

fn cfg() -> SystemConfig {
    let mut cfg = SystemConfig::paper_default(1);
    cfg.classifier.num_classes = 8;
    cfg
}

fn spec(mode: SweepMode) -> SweepSpec {
    SweepSpec { eps_grid: vec![16.0, 128.0], trials_per_point: 200, targets_per_point: 8, ..SweepSpec::new(mode) }
}

#[test]
fn header_matches_golden() {
    assert_eq!(SWEEP_COLUMNS.join(","), GOLDEN_HEADER);
    let c = cfg();
    let csv = sweep_csv(&c, &run_sweep(&c, &spec(SweepMode::Uniform)).unwrap());
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), format!("# config_hash={},seed={}", c.config_hash(), c.master_seed));
    assert!(lines.next().unwrap().starts_with('#'));
    assert_eq!(lines.next().unwrap(), GOLDEN_HEADER);
    for row in lines {
        assert_eq!(row.split(',').count(), SWEEP_COLUMNS.len(), "{row}");
    }
}

#[test]
fn rows_parse_back() {
    let c = cfg();
    let rows = run_sweep(&c, &spec(SweepMode::WeightCustomized)).unwrap();
    let csv = sweep_csv(&c, &rows);
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(data.len(), rows.len());
    for (line, row) in data.iter().zip(&rows) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], "weight");
        assert_eq!(cells[1].parse::<f64>().unwrap(), row.eps_target);
        assert_eq!(cells[2].parse::<f64>().unwrap(), row.eps_actual);
        assert_eq!(cells[4].parse::<f64>().unwrap(), row.mse_bound.total);
        assert_eq!(cells[12].parse::<f64>().unwrap(), row.acc_empirical);
        assert_eq!(cells[14].parse::<usize>().unwrap(), row.trials);
        assert_eq!(cells[16], "true");
    }
}

#[test]
fn rerun_overwrites_with_identical_bytes() {
    let c = cfg();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    std::fs::write(&path, sweep_csv(&c, &run_sweep(&c, &spec(SweepMode::ClipCustomized)).unwrap())).unwrap();
    let first = std::fs::read(&path).unwrap();
    std::fs::write(&path, sweep_csv(&c, &run_sweep(&c, &spec(SweepMode::ClipCustomized)).unwrap())).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());
}

#[test]
fn calibration_failure_keeps_the_sweep_going() {
    let mut c = cfg();
    for d in &mut c.devices {
        d.noise_var = 0.0;
    }
    let rows = run_sweep(&c, &spec(SweepMode::Uniform)).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| !r.calibrated && r.failure.is_some()));
    let csv = sweep_csv(&c, &rows);
    assert!(csv.lines().last().unwrap().ends_with(",false"));
}
