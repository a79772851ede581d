//! Analytic MSE bound, accuracy lower bound and their Monte-Carlo
//! counterparts.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use crate::channel::{PowerAccumulator, PowerAuditRow};
use crate::config::DeviceProfile;
use crate::device::FeatureVector;
use crate::error::{Error, Result};
use crate::linalg::LinearMap;
use crate::simulation::{run_schedule, summarize, PreparedTarget, Scenario, TrialSummary};
use crate::stats::MeanEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseBreakdown {
    /// Effective channel plus perturbation noise.
    pub noise_term: f64,
    /// Per-device weighting/participation error.
    pub weighting_term: f64,
    /// Pairwise correlation term; may be negative.
    pub cross_term: f64,
    pub total: f64,
}

impl MseBreakdown {
    fn new(noise_term: f64, weighting_term: f64, cross_term: f64) -> Self {
        Self { noise_term, weighting_term, cross_term, total: noise_term + weighting_term + cross_term }
    }

    /// Term-wise average, e.g. over targets.
    pub fn mean(items: &[MseBreakdown]) -> Self {
        let n = items.len() as f64;
        let sum = |f: fn(&MseBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self::new(sum(|b| b.noise_term), sum(|b| b.weighting_term), sum(|b| b.cross_term))
    }
}

/// Inputs to the MSE bound besides the per-device noise level.
#[derive(Debug, Clone, Copy)]
pub struct MseInputs<'a> {
    pub feature_dim: usize,
    pub gamma: f64,
    pub sigma_sq_m: f64,
    pub devices: &'a [DeviceProfile],
    pub encoders: &'a [&'a LinearMap],
    pub decoder: &'a LinearMap,
    pub features: &'a [FeatureVector],
}

impl<'a> MseInputs<'a> {
    fn check(&self) -> Result<()> {
        let k = self.devices.len();
        if self.encoders.len() != k {
            return Err(Error::DimensionMismatch { context: "mse encoders", expected: k, found: self.encoders.len() });
        }
        if self.features.len() != k {
            return Err(Error::DimensionMismatch { context: "mse features", expected: k, found: self.features.len() });
        }
        Ok(())
    }
}

/// ```text
/// noise     = d ||D||_F^2 (sum_k p_k sigma_k^2 + sigma_m^2 / gamma^2)
/// weighting = sum_k (w_k^2 p_k - 2 w_k p_k + 1) ||D||_F^2 ||W_k||_F^2 ||f_k||^2
/// cross     = sum_{k<j} (p_k p_j w_k w_j - p_k w_k - p_j w_j + 1) f_k^T W_k^T D^T D W_j f_j
/// ```
/// `noise_vars[k]` overrides device `k`'s `sigma_k^2`.
pub fn mse_bound_sigma_form(inputs: &MseInputs<'_>, noise_vars: &[f64]) -> Result<MseBreakdown> {
    inputs.check()?;
    if noise_vars.len() != inputs.devices.len() {
        return Err(Error::DimensionMismatch { context: "mse noise", expected: inputs.devices.len(), found: noise_vars.len() });
    }
    let d_fro = inputs.decoder.frobenius_sq();
    let agg_noise: f64 = inputs.devices.iter().zip(noise_vars).map(|(dev, s)| dev.participation * s).sum();
    let noise_term =
        inputs.feature_dim as f64 * d_fro * (agg_noise + inputs.sigma_sq_m / (inputs.gamma * inputs.gamma));

    let mut weighting_term = 0.0;
    let mut decoded: Vec<DVector<f64>> = Vec::with_capacity(inputs.devices.len());
    for ((dev, w), f) in inputs.devices.iter().zip(inputs.encoders).zip(inputs.features) {
        let (p, wk) = (dev.participation, dev.weight);
        weighting_term += (wk * wk * p - 2.0 * wk * p + 1.0) * d_fro * w.frobenius_sq() * f.values.norm_squared();
        let z = w.apply(&f.values, "mse encode")?;
        decoded.push(inputs.decoder.apply(&z, "mse decode")?);
    }

    let mut cross_term = 0.0;
    for k in 0..decoded.len() {
        for j in (k + 1)..decoded.len() {
            let (a, b) = (&inputs.devices[k], &inputs.devices[j]);
            let coef = a.participation * b.participation * a.weight * b.weight
                - a.participation * a.weight
                - b.participation * b.weight
                + 1.0;
            cross_term += coef * decoded[k].dot(&decoded[j]);
        }
    }
    Ok(MseBreakdown::new(noise_term, weighting_term, cross_term))
}

/// Gaussian-mechanism noise level for budget `(eps, delta)` and sensitivity
/// `w C`: `sigma^2 = 2 w^2 C^2 ln(1.25 / delta) / eps^2`.
pub fn gaussian_noise_for_budget(weight: f64, clip_norm: f64, eps: f64, delta: f64) -> f64 {
    2.0 * weight * weight * clip_norm * clip_norm * (1.25 / delta).ln() / (eps * eps)
}

/// The bound parameterized by per-device `(eps_k, delta_k)` instead of noise.
pub fn mse_bound_eps_form(inputs: &MseInputs<'_>, budgets: &[(f64, f64)]) -> Result<MseBreakdown> {
    if budgets.len() != inputs.devices.len() {
        return Err(Error::DimensionMismatch { context: "mse budgets", expected: inputs.devices.len(), found: budgets.len() });
    }
    let mut noise = Vec::with_capacity(budgets.len());
    for (dev, &(eps, delta)) in inputs.devices.iter().zip(budgets) {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("device {}: epsilon must be positive", dev.index)));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("device {}: delta must lie in (0, 1)", dev.index)));
        }
        noise.push(gaussian_noise_for_budget(dev.weight, dev.clip_norm, eps, delta));
    }
    mse_bound_sigma_form(inputs, &noise)
}

/// Bound for one prepared target of a scenario, using the scenario's noise.
pub fn scenario_mse_bound(scenario: &Scenario, target: &PreparedTarget) -> Result<MseBreakdown> {
    let cfg = &scenario.cfg;
    let encoders: Vec<&LinearMap> = (0..cfg.num_devices).map(|k| &scenario.encoders.get(k).0).collect();
    let inputs = MseInputs {
        feature_dim: cfg.feature_dim,
        gamma: cfg.gamma,
        sigma_sq_m: cfg.sigma_sq_m,
        devices: &cfg.devices,
        encoders: &encoders,
        decoder: &scenario.decoder.0,
        features: &target.features,
    };
    let noise: Vec<f64> = cfg.devices.iter().map(|d| d.noise_var).collect();
    mse_bound_sigma_form(&inputs, &noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyBound {
    pub p0: f64,
    pub mse: f64,
    pub margin_delta: f64,
    pub bound: f64,
}

/// `max(0, P0 (1 - (MSE / Delta)^2))`.
pub fn accuracy_lower_bound(p0: f64, mse: f64, margin_delta: f64) -> Result<AccuracyBound> {
    if !(margin_delta > 0.0) {
        return Err(Error::InvalidArgument("margin must be positive".into()));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::InvalidArgument("P0 must lie in [0, 1]".into()));
    }
    if !(mse >= 0.0) {
        return Err(Error::InvalidArgument("MSE must be nonnegative".into()));
    }
    let ratio = mse / margin_delta;
    let bound = (p0 * (1.0 - ratio * ratio)).max(0.0);
    Ok(AccuracyBound { p0, mse, margin_delta, bound })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRate {
    pub class: usize,
    pub correct: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyEstimate {
    pub overall: MeanEstimate,
    pub per_class: Vec<ClassRate>,
}

/// Joint result of one Monte-Carlo pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub mse: MeanEstimate,
    pub accuracy: AccuracyEstimate,
    pub power: Vec<PowerAuditRow>,
}

/// Runs `trials_per_target` trials on each target and reduces them in
/// schedule order.
pub fn evaluate(scenario: &Scenario, targets: &[PreparedTarget], trials_per_target: usize) -> Result<Evaluation> {
    if targets.is_empty() || trials_per_target == 0 {
        return Err(Error::EmptyInput("evaluation needs at least one target and one trial"));
    }
    let summaries = run_schedule(scenario, targets, trials_per_target, summarize)?;
    Ok(reduce(&summaries, scenario))
}

fn reduce(summaries: &[TrialSummary], scenario: &Scenario) -> Evaluation {
    let errs: Vec<f64> = summaries.iter().map(|s| s.sq_err).collect();
    let hits: Vec<f64> = summaries.iter().map(|s| if s.correct { 1.0 } else { 0.0 }).collect();
    let mut classes: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut power = PowerAccumulator::new(scenario.cfg.num_devices);
    for s in summaries {
        let e = classes.entry(s.true_label).or_default();
        e.0 += s.correct as usize;
        e.1 += 1;
        power.record(&s.tx_energy);
    }
    Evaluation {
        mse: MeanEstimate::from_samples(&errs),
        accuracy: AccuracyEstimate {
            overall: MeanEstimate::from_samples(&hits),
            per_class: classes
                .into_iter()
                .map(|(class, (correct, trials))| ClassRate { class, correct, trials })
                .collect(),
        },
        power: power.report(&scenario.cfg.devices),
    }
}

/// `E ||f^ - f*||^2` with its standard error.
pub fn empirical_mse(scenario: &Scenario, targets: &[PreparedTarget], trials_per_target: usize) -> Result<MeanEstimate> {
    Ok(evaluate(scenario, targets, trials_per_target)?.mse)
}

pub fn empirical_accuracy(
    scenario: &Scenario,
    targets: &[PreparedTarget],
    trials_per_target: usize,
) -> Result<AccuracyEstimate> {
    Ok(evaluate(scenario, targets, trials_per_target)?.accuracy)
}

/// The scenario with privacy noise, receiver noise and sampling disabled.
pub fn noiseless(scenario: &Scenario) -> Result<Scenario> {
    let devices = scenario
        .cfg
        .devices
        .iter()
        .map(|d| DeviceProfile { participation: 1.0, noise_var: 0.0, ..d.clone() })
        .collect();
    Ok(scenario.with_devices(devices)?.with_receiver_noise(0.0))
}

/// Accuracy of the pipeline with every noise source and sampling disabled.
pub fn estimate_p0(scenario: &Scenario, targets: &[PreparedTarget], trials_per_target: usize) -> Result<f64> {
    let clean = noiseless(scenario)?;
    let targets: Vec<PreparedTarget> =
        targets.iter().map(|t| clean.prepare(t.target.clone())).collect::<Result<_>>()?;
    Ok(empirical_accuracy(&clean, &targets, trials_per_target)?.overall.mean)
}
