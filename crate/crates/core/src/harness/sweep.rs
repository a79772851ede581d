//! Epsilon sweeps over homogeneous and customized privacy profiles.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::analysis::{accuracy_lower_bound, evaluate, scenario_mse_bound, MseBreakdown, estimate_p0};
use crate::config::{DeviceProfile, SystemConfig};
use crate::error::{Error, Result};
use crate::privacy::{calibrate_noise_scale, AccountantInput};
use crate::report::{fmt_f64, provenance_line};
use crate::server::compute_margin;
use crate::simulation::Scenario;

/// Columns of the sweep CSV, in order.
pub const SWEEP_COLUMNS: [&str; 17] = [
    "mode",
    "eps_target",
    "eps_actual",
    "sigma_sq",
    "mse_bound_total",
    "mse_bound_noise",
    "mse_bound_weighting",
    "mse_bound_cross",
    "mse_empirical",
    "mse_stderr",
    "p0",
    "acc_lower_bound",
    "acc_empirical",
    "acc_stderr",
    "trials",
    "seed",
    "calibrated",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Uniform,
    WeightCustomized,
    ClipCustomized,
}

impl SweepMode {
    pub const ALL: [SweepMode; 3] = [SweepMode::Uniform, SweepMode::WeightCustomized, SweepMode::ClipCustomized];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepMode::Uniform => "uniform",
            SweepMode::WeightCustomized => "weight",
            SweepMode::ClipCustomized => "clip",
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(SweepMode::Uniform),
            "weight" | "weight_customized" => Ok(SweepMode::WeightCustomized),
            "clip" | "clip_customized" => Ok(SweepMode::ClipCustomized),
            other => Err(Error::Parse(format!("unknown sweep mode `{other}` (expected uniform, weight or clip)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub eps_grid: Vec<f64>,
    pub mode: SweepMode,
    pub sensitive_fraction: f64,
    /// Total trials per grid point, split evenly over the targets.
    pub trials_per_point: usize,
    pub targets_per_point: usize,
    /// Scale applied to the weight or clip norm of sensitive devices.
    pub rho: f64,
}

impl SweepSpec {
    pub const DEFAULT_GRID: [f64; 8] = [8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0];

    pub fn new(mode: SweepMode) -> Self {
        Self {
            eps_grid: Self::DEFAULT_GRID.to_vec(),
            mode,
            sensitive_fraction: 0.5,
            trials_per_point: 4000,
            targets_per_point: 40,
            rho: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_grid.is_empty() {
            return Err(Error::EmptyInput("eps grid"));
        }
        if self.eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument("eps grid values must be positive and finite".into()));
        }
        if self.eps_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("eps grid must be strictly increasing".into()));
        }
        if self.trials_per_point < 100 {
            return Err(Error::InvalidArgument("trials_per_point must be at least 100".into()));
        }
        if self.targets_per_point == 0 {
            return Err(Error::InvalidArgument("targets_per_point must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sensitive_fraction) {
            return Err(Error::InvalidArgument("sensitive_fraction must lie in [0, 1]".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidArgument("rho must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Trials actually run per target; rounds up.
    pub fn trials_per_target(&self) -> usize {
        self.trials_per_point.div_ceil(self.targets_per_point)
    }
}

/// The first `round(fraction K)` devices.
pub fn sensitive_devices(num_devices: usize, fraction: f64) -> Vec<usize> {
    let n = (fraction * num_devices as f64).round() as usize;
    (0..n.min(num_devices)).collect()
}

/// Device profiles for `mode`. Every mode starts from `w_k = 1/K` and the
/// first device's clip norm; the customized modes then scale the weight
/// (renormalizing the rest so the weights still sum to one) or the clip norm
/// of the sensitive devices by `rho`.
pub fn apply_mode(devices: &[DeviceProfile], spec: &SweepSpec) -> Vec<DeviceProfile> {
    let k = devices.len();
    let clip = devices.first().map_or(0.0, |d| d.clip_norm);
    let sensitive = sensitive_devices(k, spec.sensitive_fraction);
    let n_s = sensitive.len();
    let mut out: Vec<DeviceProfile> = devices
        .iter()
        .map(|d| DeviceProfile { weight: 1.0 / k as f64, clip_norm: clip, ..d.clone() })
        .collect();
    match spec.mode {
        SweepMode::Uniform => {}
        SweepMode::WeightCustomized => {
            if n_s < k {
                let low = spec.rho / k as f64;
                let high = (1.0 - low * n_s as f64) / (k - n_s) as f64;
                for (i, d) in out.iter_mut().enumerate() {
                    d.weight = if i < n_s { low } else { high };
                }
            }
        }
        SweepMode::ClipCustomized => {
            for &i in &sensitive {
                out[i].clip_norm = clip * spec.rho;
            }
        }
    }
    out
}

/// One grid point. Numeric fields are NaN when calibration failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mode: SweepMode,
    pub eps_target: f64,
    /// Largest epsilon over the sensitive devices after calibration.
    pub eps_actual: f64,
    pub sigma_sq: f64,
    pub mse_bound: MseBreakdown,
    pub mse_empirical: f64,
    pub mse_stderr: f64,
    pub p0: f64,
    pub acc_lower_bound: f64,
    pub acc_empirical: f64,
    pub acc_stderr: f64,
    pub trials: usize,
    pub seed: u64,
    pub calibrated: bool,
    #[serde(skip)]
    pub failure: Option<String>,
}

impl SweepRow {
    fn failed(mode: SweepMode, eps_target: f64, seed: u64, reason: String) -> Self {
        let nan = f64::NAN;
        Self {
            mode,
            eps_target,
            eps_actual: nan,
            sigma_sq: nan,
            mse_bound: MseBreakdown { noise_term: nan, weighting_term: nan, cross_term: nan, total: nan },
            mse_empirical: nan,
            mse_stderr: nan,
            p0: nan,
            acc_lower_bound: nan,
            acc_empirical: nan,
            acc_stderr: nan,
            trials: 0,
            seed,
            calibrated: false,
            failure: Some(reason),
        }
    }

    fn csv_line(&self) -> String {
        let cells = [
            self.mode.to_string(),
            fmt_f64(self.eps_target),
            fmt_f64(self.eps_actual),
            fmt_f64(self.sigma_sq),
            fmt_f64(self.mse_bound.total),
            fmt_f64(self.mse_bound.noise_term),
            fmt_f64(self.mse_bound.weighting_term),
            fmt_f64(self.mse_bound.cross_term),
            fmt_f64(self.mse_empirical),
            fmt_f64(self.mse_stderr),
            fmt_f64(self.p0),
            fmt_f64(self.acc_lower_bound),
            fmt_f64(self.acc_empirical),
            fmt_f64(self.acc_stderr),
            self.trials.to_string(),
            self.seed.to_string(),
            self.calibrated.to_string(),
        ];
        cells.join(",")
    }
}

/// Runs every grid point of `spec` against `cfg`. A point whose calibration
/// fails is kept as a row with `calibrated = false`.
pub fn run_sweep(cfg: &SystemConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let base = Scenario::build(cfg.clone())?;
    let devices = apply_mode(&base.cfg.devices, spec);
    let shaped = base.with_devices(devices.clone())?;
    let margin = compute_margin(&shaped.classifier.centroids)?;
    let seed = cfg.master_seed;

    let mut calibrate_on = sensitive_devices(devices.len(), spec.sensitive_fraction);
    if calibrate_on.is_empty() {
        calibrate_on = (0..devices.len()).collect();
    }
    let input = AccountantInput::from_config(&shaped.cfg);

    // P0 only depends on the weights, not on the noise level.
    let targets = shaped.prepare_targets(spec.targets_per_point)?;
    let p0 = estimate_p0(&shaped, &targets, 1)?;

    let mut rows = Vec::with_capacity(spec.eps_grid.len());
    for &eps_target in &spec.eps_grid {
        let cal = match calibrate_noise_scale(&calibrate_on, &input, eps_target) {
            Ok(c) => c,
            Err(e) => {
                rows.push(SweepRow::failed(spec.mode, eps_target, seed, e.to_string()));
                continue;
            }
        };
        let noisy: Vec<DeviceProfile> = devices
            .iter()
            .zip(&cal.noise_vars)
            .map(|(d, &s)| DeviceProfile { noise_var: s, ..d.clone() })
            .collect();
        let scenario = shaped.with_devices(noisy)?;
        let targets = scenario.prepare_targets(spec.targets_per_point)?;
        let bounds = targets.iter().map(|t| scenario_mse_bound(&scenario, t)).collect::<Result<Vec<_>>>()?;
        let mse_bound = MseBreakdown::mean(&bounds);
        let tpt = spec.trials_per_target();
        let ev = evaluate(&scenario, &targets, tpt)?;
        let acc_bound = accuracy_lower_bound(p0, mse_bound.total, margin)?;
        rows.push(SweepRow {
            mode: spec.mode,
            eps_target,
            eps_actual: cal.eps,
            sigma_sq: cal.noise_vars.iter().copied().fold(0.0, f64::max),
            mse_bound,
            mse_empirical: ev.mse.mean,
            mse_stderr: ev.mse.std_err,
            p0,
            acc_lower_bound: acc_bound.bound,
            acc_empirical: ev.accuracy.overall.mean,
            acc_stderr: ev.accuracy.overall.std_err,
            trials: ev.mse.samples,
            seed,
            calibrated: true,
            failure: None,
        });
    }
    Ok(rows)
}

/// Sweep CSV: a provenance comment line, the header, one line per row.
pub fn sweep_csv(cfg: &SystemConfig, rows: &[SweepRow]) -> String {
    let mut out = provenance_line(&cfg.config_hash(), cfg.master_seed);
    out.push_str("# eps_actual=max_eps_over_sensitive_devices\n");
    out.push_str(&SWEEP_COLUMNS.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::paper_default(1);
        cfg.classifier.num_classes = 8;
        cfg
    }

    fn small_spec(mode: SweepMode, grid: Vec<f64>) -> SweepSpec {
        SweepSpec { eps_grid: grid, trials_per_point: 160, targets_per_point: 8, ..SweepSpec::new(mode) }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("weight".parse::<SweepMode>().unwrap(), SweepMode::WeightCustomized);
        assert_eq!("CLIP".parse::<SweepMode>().unwrap(), SweepMode::ClipCustomized);
        assert!("fancy".parse::<SweepMode>().is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = SweepSpec::new(SweepMode::Uniform);
        assert!(s.validate().is_ok());
        s.eps_grid = vec![2.0, 1.0];
        assert!(s.validate().is_err());
        s.eps_grid = vec![1.0];
        s.trials_per_point = 99;
        assert!(s.validate().is_err());
    }

    #[test]
    fn uniform_mode_is_the_baseline() {
        let cfg = SystemConfig::paper_default(1);
        let devs = apply_mode(&cfg.devices, &SweepSpec::new(SweepMode::Uniform));
        assert!(devs.iter().all(|d| d.weight == 1.0 / 12.0 && d.clip_norm == 100.0));
    }

    #[test]
    fn weight_mode_downweights_half() {
        let cfg = SystemConfig::paper_default(1);
        let devs = apply_mode(&cfg.devices, &SweepSpec::new(SweepMode::WeightCustomized));
        let low = devs.iter().filter(|d| d.weight < 1.0 / 12.0).count();
        assert_eq!(low, 6);
        let total: f64 = devs.iter().map(|d| d.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(devs.iter().all(|d| d.clip_norm == 100.0));
    }

    #[test]
    fn clip_mode_shrinks_sensitive_clip() {
        let cfg = SystemConfig::paper_default(1);
        let devs = apply_mode(&cfg.devices, &SweepSpec::new(SweepMode::ClipCustomized));
        assert_eq!(devs.iter().filter(|d| d.clip_norm == 50.0).count(), 6);
        assert!(devs.iter().all(|d| d.weight == 1.0 / 12.0));
    }

    #[test]
    fn single_point_grid_gives_one_row() {
        let cfg = small_cfg();
        let rows = run_sweep(&cfg, &small_spec(SweepMode::Uniform, vec![64.0])).unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert!(row.calibrated);
        assert!((row.eps_actual - 64.0).abs() < 1e-6 * 64.0);
        assert_eq!(row.trials, 160);
        let csv = sweep_csv(&cfg, &rows);
        let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), SWEEP_COLUMNS.len());
    }

    #[test]
    fn sweep_is_reproducible() {
        let cfg = small_cfg();
        let spec = small_spec(SweepMode::ClipCustomized, vec![32.0, 256.0]);
        let a = sweep_csv(&cfg, &run_sweep(&cfg, &spec).unwrap());
        let b = sweep_csv(&cfg, &run_sweep(&cfg, &spec).unwrap());
        assert_eq!(a, b);
    }
}
