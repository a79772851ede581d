//! One experiment end to end, reported as JSON.

use serde::Serialize;

use crate::analysis::{accuracy_lower_bound, estimate_p0, evaluate, scenario_mse_bound, AccuracyBound, AccuracyEstimate, MseBreakdown};
use crate::channel::PowerAuditRow;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::privacy::{account, choose_t, AccountantInput, PrivacyBudget, TailCertificate};
use crate::seed::derive_trial_seed;
use crate::seed::StreamTag;
use crate::server::compute_margin;
use crate::simulation::Scenario;
use crate::stats::MeanEstimate;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleRunReport {
    pub config_hash: String,
    pub seed: u64,
    pub targets: usize,
    pub trials_per_target: usize,
    pub budget: PrivacyBudget,
    pub certificate: TailCertificate,
    pub mse_bound: MseBreakdown,
    pub mse_empirical: MeanEstimate,
    pub accuracy: AccuracyEstimate,
    pub p0: f64,
    pub accuracy_bound: AccuracyBound,
    pub power: Vec<PowerAuditRow>,
}

impl SingleRunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Spreads `trials` over one target per class (fewer if `trials` is small).
pub fn run_single(cfg: &SystemConfig, trials: usize) -> Result<SingleRunReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let scenario = Scenario::build(cfg.clone())?;
    let cfg = &scenario.cfg;
    let targets_n = scenario.classifier.num_classes().min(trials);
    let tpt = trials.div_ceil(targets_n);

    let input = AccountantInput::from_config(cfg);
    let budget = account(&input).map_err(|e| e.in_stage("privacy"))?;
    let mc_seed = derive_trial_seed(cfg.master_seed, 0, StreamTag::Concentration);
    let certificate = choose_t(&input, mc_seed).map_err(|e| e.in_stage("privacy"))?.certificate;

    let targets = scenario.prepare_targets(targets_n)?;
    let bounds = targets.iter().map(|t| scenario_mse_bound(&scenario, t)).collect::<Result<Vec<_>>>()?;
    let mse_bound = MseBreakdown::mean(&bounds);
    let ev = evaluate(&scenario, &targets, tpt).map_err(|e| e.in_stage("simulation"))?;
    let p0 = estimate_p0(&scenario, &targets, 1).map_err(|e| e.in_stage("p0"))?;
    let margin = compute_margin(&scenario.classifier.centroids)?;
    let accuracy_bound = accuracy_lower_bound(p0, mse_bound.total, margin)?;

    Ok(SingleRunReport {
        config_hash: cfg.config_hash(),
        seed: cfg.master_seed,
        targets: targets_n,
        trials_per_target: tpt,
        budget,
        certificate,
        mse_bound,
        mse_empirical: ev.mse,
        accuracy: ev.accuracy,
        p0,
        accuracy_bound,
        power: ev.power,
    })
}
