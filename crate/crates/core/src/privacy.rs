//! Per-feature privacy accounting for sampled, weighted Gaussian mechanisms
//! aggregated over the air.
//!
//! Two devices' feature sets are neighbors when one is obtained from the other
//! by removing a single device's feature vector. The server sees only the sum of
//! the participating devices' perturbed features, so a device's feature is
//! protected by (a) its own sampling probability `p_k` and (b) the aggregate
//! perturbation variance `mu = sum_i tau_i sigma_i^2` of whoever happened to
//! participate. The accountant lower-bounds `mu` by `mu_bar - t`, which holds
//! except with probability `delta'`, and charges the Gaussian mechanism with
//! sensitivity `gamma w_k C_k` against that variance:
//!
//! ```text
//! c_k     = gamma w_k C_k sqrt(2 ln(1.25 / delta))
//! eps_k   = ln(1 + p_k / (1 - delta') (exp(c_k / sqrt(mu_bar - t)) - 1))
//! delta_k = delta' + p_k delta / (1 - delta')
//! t       = (L / 2) (max_i sigma_i^2 + sqrt(max_i sigma_i^2 / 9 + 4 V / L))
//! ```
//!
//! with `L = ln(2 / delta')` and `V = sum_i p_i (1 - p_i) sigma_i^4`. When
//! `mu_bar <= t` no finite guarantee follows and the budget is reported as
//! `eps = +inf` with `valid = false`.
//!
//! Logarithms are natural throughout.

use rand::Rng;
use serde::Serialize;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::seed::{self, StreamTag};

/// Largest device count handled by exact subset enumeration.
pub const MAX_EXACT_DEVICES: usize = 20;

/// Monte-Carlo trials used when certifying `t` for large systems.
pub const CERTIFICATE_MC_TRIALS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviceMechanism {
    pub participation: f64,
    pub weight: f64,
    pub clip_norm: f64,
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccountantInput {
    pub devices: Vec<DeviceMechanism>,
    pub gamma: f64,
    pub delta: f64,
    pub delta_prime: f64,
}

impl AccountantInput {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            devices: cfg
                .devices
                .iter()
                .map(|d| DeviceMechanism {
                    participation: d.participation,
                    weight: d.weight,
                    clip_norm: d.clip_norm,
                    noise_var: d.noise_var,
                })
                .collect(),
            gamma: cfg.gamma,
            delta: cfg.delta,
            delta_prime: cfg.delta_prime,
        }
    }

    pub fn homogeneous(k: usize, mech: DeviceMechanism, gamma: f64, delta: f64, delta_prime: f64) -> Self {
        Self { devices: vec![mech; k], gamma, delta, delta_prime }
    }

    /// Copy with every `sigma_i^2` multiplied by `scale`.
    pub fn with_noise_scaled(&self, scale: f64) -> Self {
        let mut out = self.clone();
        for d in &mut out.devices {
            d.noise_var *= scale;
        }
        out
    }

    fn device(&self, k: usize) -> Result<&DeviceMechanism> {
        self.devices.get(k).ok_or(Error::IndexOutOfRange { what: "device", index: k, len: self.devices.len() })
    }
}

/// `c_k = gamma w_k C_k sqrt(2 ln(1.25 / delta))`.
pub fn sensitivity_constant(k: usize, input: &AccountantInput) -> Result<f64> {
    let d = input.device(k)?;
    Ok(input.gamma * d.weight * d.clip_norm * (2.0 * (1.25 / input.delta).ln()).sqrt())
}

/// `mu_bar = sum_i p_i sigma_i^2`.
pub fn mu_bar(input: &AccountantInput) -> f64 {
    input.devices.iter().map(|d| d.participation * d.noise_var).sum()
}

/// Constants of the concentration offset
/// `t = lead L (M + sqrt(M / max_var_divisor + variance_coeff V / L))`.
/// Only [`OffsetFormula::PRINTED`] is used for accounting; other values exist
/// so that tests can check the certificate catches a broken formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffsetFormula {
    pub lead: f64,
    pub max_var_divisor: f64,
    pub variance_coeff: f64,
}

impl OffsetFormula {
    pub const PRINTED: OffsetFormula = OffsetFormula { lead: 0.5, max_var_divisor: 9.0, variance_coeff: 4.0 };

    pub fn evaluate(&self, input: &AccountantInput) -> f64 {
        let log_term = (2.0 / input.delta_prime).ln();
        let max_var = input.devices.iter().map(|d| d.noise_var).fold(0.0, f64::max);
        let bern_var: f64 = input
            .devices
            .iter()
            .map(|d| d.participation * (1.0 - d.participation) * d.noise_var * d.noise_var)
            .sum();
        if max_var == 0.0 && bern_var == 0.0 {
            return 0.0;
        }
        let inner = max_var / self.max_var_divisor + self.variance_coeff * bern_var / log_term;
        self.lead * log_term * (max_var + inner.sqrt())
    }
}

/// Concentration offset `t` with the printed constants.
pub fn offset_t(input: &AccountantInput) -> f64 {
    OffsetFormula::PRINTED.evaluate(input)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMethod {
    Exact,
    MonteCarlo,
}

/// Checks `Pr(|mu - mu_bar| >= t) <= delta'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailCertificate {
    pub probability: f64,
    /// 95% half-width; zero for exact enumeration.
    pub half_width: f64,
    pub method: CertificateMethod,
    pub delta_prime: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffsetChoice {
    pub t: f64,
    pub certificate: TailCertificate,
}

/// Evaluates `t` and certifies its tail bound, exactly for up to
/// [`MAX_EXACT_DEVICES`] devices and by Monte-Carlo beyond.
pub fn choose_t(input: &AccountantInput, mc_seed: u64) -> Result<OffsetChoice> {
    choose_t_with(input, &OffsetFormula::PRINTED, mc_seed)
}

pub fn choose_t_with(input: &AccountantInput, formula: &OffsetFormula, mc_seed: u64) -> Result<OffsetChoice> {
    let t = formula.evaluate(input);
    let certificate = if input.devices.len() <= MAX_EXACT_DEVICES {
        let probability = concentration_exact(input, t)?;
        TailCertificate {
            probability,
            half_width: 0.0,
            method: CertificateMethod::Exact,
            delta_prime: input.delta_prime,
            holds: probability <= input.delta_prime,
        }
    } else {
        let mut rng = seed::stream(mc_seed, 0, StreamTag::Concentration);
        let est = concentration_mc(input, t, CERTIFICATE_MC_TRIALS, &mut rng)?;
        TailCertificate {
            probability: est.estimate,
            half_width: est.half_width,
            method: CertificateMethod::MonteCarlo,
            delta_prime: input.delta_prime,
            holds: est.estimate - est.half_width <= input.delta_prime,
        }
    };
    Ok(OffsetChoice { t, certificate })
}

/// Exact `Pr(|mu - mu_bar| >= t)` over all `2^K` participation patterns,
/// walked in Gray-code order so each step flips one device.
pub fn concentration_exact(input: &AccountantInput, t: f64) -> Result<f64> {
    let k = input.devices.len();
    if k > MAX_EXACT_DEVICES {
        return Err(Error::EnumerationTooLarge { devices: k, max: MAX_EXACT_DEVICES });
    }
    let mean = mu_bar(input);
    let ln_on: Vec<f64> = input.devices.iter().map(|d| d.participation.ln()).collect();
    let ln_off: Vec<f64> = input.devices.iter().map(|d| (1.0 - d.participation).ln()).collect();

    // Subset probability kept as (number of zero factors, sum of log factors).
    let mut zeros = ln_off.iter().filter(|v| v.is_infinite()).count();
    let mut log_sum: f64 = ln_off.iter().filter(|v| v.is_finite()).sum();
    let mut mu = 0.0;
    let mut on = vec![false; k];

    let mut total = NeumaierSum::default();
    let mut visit = |zeros: usize, log_sum: f64, mu: f64| {
        if zeros == 0 && (mu - mean).abs() >= t {
            total.add(log_sum.exp());
        }
    };
    visit(zeros, log_sum, mu);

    for step in 1u64..(1u64 << k) {
        let bit = step.trailing_zeros() as usize;
        let (remove, add) = if on[bit] { (ln_on[bit], ln_off[bit]) } else { (ln_off[bit], ln_on[bit]) };
        if remove.is_finite() {
            log_sum -= remove;
        } else {
            zeros -= 1;
        }
        if add.is_finite() {
            log_sum += add;
        } else {
            zeros += 1;
        }
        if on[bit] {
            mu -= input.devices[bit].noise_var;
        } else {
            mu += input.devices[bit].noise_var;
        }
        on[bit] = !on[bit];
        visit(zeros, log_sum, mu);
    }
    Ok(total.value().min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_err: f64,
    /// 95% normal-approximation half-width.
    pub half_width: f64,
    pub trials: usize,
}

/// Monte-Carlo estimate of `Pr(|mu - mu_bar| >= t)`.
pub fn concentration_mc<R: Rng + ?Sized>(
    input: &AccountantInput,
    t: f64,
    trials: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if trials < 10_000 {
        return Err(Error::InvalidArgument(format!("concentration_mc needs at least 10^4 trials, got {trials}")));
    }
    let mean = mu_bar(input);
    let mut hits = 0usize;
    for _ in 0..trials {
        let mu: f64 = input
            .devices
            .iter()
            .map(|d| if rng.random::<f64>() < d.participation { d.noise_var } else { 0.0 })
            .sum();
        if (mu - mean).abs() >= t {
            hits += 1;
        }
    }
    let estimate = hits as f64 / trials as f64;
    let std_err = (estimate * (1.0 - estimate) / trials as f64).sqrt();
    Ok(McEstimate { estimate, std_err, half_width: 1.96 * std_err, trials })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviceBudget {
    pub index: usize,
    pub c_k: f64,
    /// `+inf` when `valid` is false.
    #[serde(serialize_with = "crate::report::serialize_extended_f64")]
    pub eps: f64,
    pub delta_tilde: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyBudget {
    pub mu_bar: f64,
    pub t: f64,
    pub devices: Vec<DeviceBudget>,
}

impl PrivacyBudget {
    pub fn max_eps(&self, indices: impl IntoIterator<Item = usize>) -> f64 {
        indices.into_iter().map(|i| self.devices[i].eps).fold(0.0, f64::max)
    }

    pub fn all_valid(&self) -> bool {
        self.devices.iter().all(|d| d.valid)
    }
}

/// `ln(1 + a (e^x - 1))` with `a = p / (1 - delta')`, stable for large `x`.
pub fn amplified_epsilon(participation: f64, delta_prime: f64, exponent: f64) -> f64 {
    let a = participation / (1.0 - delta_prime);
    if a == 0.0 || exponent == 0.0 {
        return 0.0;
    }
    if exponent < 30.0 {
        (a * exponent.exp_m1()).ln_1p()
    } else {
        exponent + a.ln() + ((1.0 - a) * (-exponent).exp() / a).ln_1p()
    }
}

/// Budget of device `k` for a given offset `t`.
pub fn epsilon_for_device(k: usize, input: &AccountantInput, t: f64) -> Result<DeviceBudget> {
    let d = *input.device(k)?;
    let c_k = sensitivity_constant(k, input)?;
    let gap = mu_bar(input) - t;
    let delta_tilde = input.delta_prime + d.participation * input.delta / (1.0 - input.delta_prime);
    let usable = gap > 0.0 && input.delta_prime < 1.0;
    let eps = if !usable {
        if d.participation == 0.0 || c_k == 0.0 {
            // No mechanism output depends on this feature.
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        amplified_epsilon(d.participation, input.delta_prime, c_k / gap.sqrt())
    };
    let valid = (usable || eps == 0.0) && delta_tilde <= 1.0;
    Ok(DeviceBudget { index: k, c_k, eps, delta_tilde, valid })
}

/// Budgets for every device using the printed offset.
pub fn account(input: &AccountantInput) -> Result<PrivacyBudget> {
    let t = offset_t(input);
    let devices = (0..input.devices.len()).map(|k| epsilon_for_device(k, input, t)).collect::<Result<_>>()?;
    Ok(PrivacyBudget { mu_bar: mu_bar(input), t, devices })
}

pub fn budget_csv(input: &AccountantInput, budget: &PrivacyBudget) -> String {
    let mut out = String::from("device_index,p,w,C,sigma_sq,c_k,mu_bar,t,eps_k,delta_tilde_k,valid\n");
    for (d, b) in input.devices.iter().zip(&budget.devices) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            b.index,
            d.participation,
            d.weight,
            d.clip_norm,
            d.noise_var,
            b.c_k,
            budget.mu_bar,
            budget.t,
            b.eps,
            b.delta_tilde,
            b.valid
        ));
    }
    out
}

/// Result of scaling every device's noise variance by a common factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseCalibration {
    pub scale: f64,
    pub noise_vars: Vec<f64>,
    /// Largest epsilon among the calibrated devices.
    pub eps: f64,
}

/// Smallest common noise scale at which the worst device in `targets` meets
/// `target_eps`, by bisection on the log-scale. Epsilon is decreasing in the
/// scale wherever it is finite, so the root is unique.
pub fn calibrate_noise_scale(targets: &[usize], input: &AccountantInput, target_eps: f64) -> Result<NoiseCalibration> {
    if !(target_eps > 0.0 && target_eps.is_finite()) {
        return Err(Error::Unreachable { target: target_eps, reason: "target must be positive and finite".into() });
    }
    if targets.is_empty() {
        return Err(Error::EmptyInput("calibration needs at least one device"));
    }
    if input.devices.iter().all(|d| d.noise_var == 0.0) {
        return Err(Error::Unreachable { target: target_eps, reason: "every base noise variance is zero".into() });
    }
    let worst = |scale: f64| -> Result<f64> {
        let scaled = input.with_noise_scaled(scale);
        let t = offset_t(&scaled);
        let mut eps = 0.0f64;
        for &k in targets {
            eps = eps.max(epsilon_for_device(k, &scaled, t)?.eps);
        }
        Ok(eps)
    };

    const MAX_DOUBLINGS: usize = 400;
    let (mut lo, mut hi) = (1.0f64, 1.0f64);
    let mut found = false;
    for _ in 0..MAX_DOUBLINGS {
        if worst(hi)? <= target_eps {
            found = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !found {
        return Err(Error::Unreachable {
            target: target_eps,
            reason: "epsilon stays above the target for every noise scale".into(),
        });
    }
    if lo == hi {
        found = false;
        for _ in 0..MAX_DOUBLINGS {
            lo /= 2.0;
            if worst(lo)? > target_eps {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Unreachable {
                target: target_eps,
                reason: "epsilon stays below the target for every noise scale".into(),
            });
        }
    }

    for _ in 0..300 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let eps = worst(mid)?;
        if eps > target_eps {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi / lo - 1.0) < 1e-15 {
            break;
        }
    }
    let eps = worst(hi)?;
    Ok(NoiseCalibration {
        scale: hi,
        noise_vars: input.devices.iter().map(|d| d.noise_var * hi).collect(),
        eps,
    })
}

/// Noise variance of device `k` after uniformly rescaling all devices so that
/// device `k` meets `target_eps`.
pub fn calibrate_sigma(k: usize, input: &AccountantInput, target_eps: f64) -> Result<f64> {
    input.device(k)?;
    Ok(calibrate_noise_scale(&[k], input, target_eps)?.noise_vars[k])
}

#[derive(Debug, Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
