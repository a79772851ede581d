//! Fading multiple-access channel: participation sampling, power alignment,
//! over-the-air superposition and transmit-power auditing.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::DeviceProfile;
use crate::error::{Error, Result};
use crate::linalg::gaussian_vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingKind {
    Rician,
    Constant,
}

/// Block flat-fading amplitude model for `h_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FadingModel {
    pub kind: FadingKind,
    /// Ratio of line-of-sight to scattered power. `inf` gives a constant gain.
    pub k_factor: f64,
    /// `E[h^2]`.
    pub mean_power: f64,
    /// Gains below this are redrawn.
    pub h_floor: f64,
    pub max_redraws: u32,
}

impl Default for FadingModel {
    fn default() -> Self {
        Self { kind: FadingKind::Rician, k_factor: 3.0, mean_power: 1.0, h_floor: 1e-3, max_redraws: 64 }
    }
}

impl FadingModel {
    pub fn constant(mean_power: f64) -> Self {
        Self { kind: FadingKind::Constant, mean_power, ..Self::default() }
    }

    pub fn rician(k_factor: f64, mean_power: f64) -> Self {
        Self { kind: FadingKind::Rician, k_factor, mean_power, ..Self::default() }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            FadingKind::Constant => self.mean_power.sqrt(),
            FadingKind::Rician => {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                if self.k_factor.is_infinite() {
                    return self.mean_power.sqrt();
                }
                let los = (self.k_factor / (self.k_factor + 1.0) * self.mean_power).sqrt();
                let scatter = (self.mean_power / (2.0 * (self.k_factor + 1.0))).sqrt();
                (los + scatter * x).hypot(scatter * y)
            }
        }
    }
}

/// Fading gains and the alignment scalings chosen for them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelRealization {
    pub h: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParticipationDraw {
    pub tau: Vec<bool>,
}

impl ParticipationDraw {
    pub fn count(&self) -> usize {
        self.tau.iter().filter(|t| **t).count()
    }
}

/// One gain per device for the current block; deep fades are redrawn.
pub fn draw_channel<R: Rng + ?Sized>(model: &FadingModel, num_devices: usize, rng: &mut R) -> Result<Vec<f64>> {
    (0..num_devices)
        .map(|k| {
            for _ in 0..=model.max_redraws {
                let h = model.sample(rng);
                if h >= model.h_floor {
                    return Ok(h);
                }
            }
            Err(Error::DeepFade { device: k, attempts: model.max_redraws + 1 })
        })
        .collect()
}

/// `alpha_k = gamma p_k / h_k`, so every participating device arrives with
/// gain `gamma`. Devices with `p_k = 0` never transmit and get `alpha_k = 0`.
pub fn align(h: &[f64], profiles: &[DeviceProfile], gamma: f64) -> Result<Vec<f64>> {
    if h.len() != profiles.len() {
        return Err(Error::DimensionMismatch { context: "align", expected: profiles.len(), found: h.len() });
    }
    Ok(h.iter()
        .zip(profiles)
        .map(|(&hk, dev)| if dev.participation > 0.0 { gamma * dev.participation / hk } else { 0.0 })
        .collect())
}

pub fn sample_participation<R: Rng + ?Sized>(profiles: &[DeviceProfile], rng: &mut R) -> ParticipationDraw {
    let tau = profiles.iter().map(|dev| rng.random::<f64>() < dev.participation).collect();
    ParticipationDraw { tau }
}

/// `x_k = (alpha_k / p_k) z~_k` when the device participates, zero otherwise.
pub fn transmit_signal(z_tilde: &DVector<f64>, alpha: f64, participation: f64, tau: bool) -> DVector<f64> {
    if tau {
        z_tilde * (alpha / participation)
    } else {
        DVector::zeros(z_tilde.len())
    }
}

/// `y = sum_k h_k x_k + m` with i.i.d. `N(0, sigma_m^2)` receiver noise.
pub fn superpose<R: Rng + ?Sized>(
    signals: &[DVector<f64>],
    h: &[f64],
    sigma_sq_m: f64,
    dim: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if signals.len() != h.len() {
        return Err(Error::DimensionMismatch { context: "superpose gains", expected: signals.len(), found: h.len() });
    }
    let mut y = gaussian_vector(dim, sigma_sq_m.sqrt(), rng);
    for (x, &hk) in signals.iter().zip(h) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { context: "superpose", expected: dim, found: x.len() });
        }
        y.axpy(hk, x, 1.0);
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerAuditRow {
    pub device_index: usize,
    pub empirical_power_watts: f64,
    pub budget_watts: f64,
    pub exceeded: bool,
}

/// Running sum of `||x_k||^2` per device. Report-only: nothing is truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAccumulator {
    energy: Vec<f64>,
    trials: usize,
}

impl PowerAccumulator {
    pub fn new(num_devices: usize) -> Self {
        Self { energy: vec![0.0; num_devices], trials: 0 }
    }

    pub fn record(&mut self, energies: &[f64]) {
        for (acc, e) in self.energy.iter_mut().zip(energies) {
            *acc += e;
        }
        self.trials += 1;
    }

    pub fn report(&self, profiles: &[DeviceProfile]) -> Vec<PowerAuditRow> {
        let n = self.trials.max(1) as f64;
        self.energy
            .iter()
            .zip(profiles)
            .map(|(e, dev)| {
                let mean = e / n;
                PowerAuditRow {
                    device_index: dev.index,
                    empirical_power_watts: mean,
                    budget_watts: dev.power_watts,
                    exceeded: mean > dev.power_watts,
                }
            })
            .collect()
    }
}

/// Audits per-device transmissions; `realizations[t][k]` is device `k`'s
/// signal in trial `t`.
pub fn audit_power(realizations: &[Vec<DVector<f64>>], profiles: &[DeviceProfile]) -> Result<Vec<PowerAuditRow>> {
    if realizations.is_empty() {
        return Err(Error::EmptyInput("power audit needs at least one trial"));
    }
    let mut acc = PowerAccumulator::new(profiles.len());
    for trial in realizations {
        let energies: Vec<f64> = trial.iter().map(|x| x.norm_squared()).collect();
        acc.record(&energies);
    }
    Ok(acc.report(profiles))
}

pub fn power_audit_csv(rows: &[PowerAuditRow]) -> String {
    let mut out = String::from("device_index,empirical_power_watts,budget_watts,exceeded\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.device_index, r.empirical_power_watts, r.budget_watts, r.exceeded));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::MeanEstimate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profiles(ps: &[f64]) -> Vec<DeviceProfile> {
        ps.iter().enumerate().map(|(i, &p)| DeviceProfile::new(i, p, 1.0 / 12.0, 100.0, 0.1, 1.0)).collect()
    }

    #[test]
    fn constant_channel_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = draw_channel(&FadingModel::constant(1.0), 5, &mut rng).unwrap();
        assert_eq!(h, vec![1.0; 5]);
    }

    #[test]
    fn large_k_factor_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = draw_channel(&FadingModel::rician(1e6, 1.0), 10_000, &mut rng).unwrap();
        let est = MeanEstimate::from_samples(&h);
        let std = est.std_err * (h.len() as f64).sqrt();
        assert!(std < 0.01 * est.mean, "std {std} mean {}", est.mean);
        assert!((est.mean - 1.0).abs() < 1e-2);
    }

    #[test]
    fn infinite_k_factor_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = draw_channel(&FadingModel::rician(f64::INFINITY, 4.0), 3, &mut rng).unwrap();
        assert_eq!(h, vec![2.0; 3]);
    }

    #[test]
    fn rician_second_moment_matches_mean_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = FadingModel::rician(3.0, 1.0);
        let h = draw_channel(&model, 100_000, &mut rng).unwrap();
        let power: Vec<f64> = h.iter().map(|x| x * x).collect();
        let m = MeanEstimate::from_samples(&power).mean;
        assert!((m - 1.0).abs() < 0.02, "E[h^2] = {m}");
        assert!(h.iter().all(|&x| x >= model.h_floor));
    }

    #[test]
    fn impossible_floor_reports_device() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = FadingModel { h_floor: 1e6, max_redraws: 4, ..FadingModel::default() };
        match draw_channel(&model, 3, &mut rng) {
            Err(Error::DeepFade { device: 0, attempts: 5 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alignment_examples() {
        let a = align(&[1.0], &profiles(&[1.0]), 1.0).unwrap();
        assert_eq!(a, vec![1.0]);
        let a = align(&[0.5], &profiles(&[0.9]), 1.0).unwrap();
        assert!((a[0] - 1.8).abs() < 1e-15);
        let a = align(&[0.5], &profiles(&[0.0]), 1.0).unwrap();
        assert_eq!(a, vec![0.0]);
    }

    #[test]
    fn alignment_identity_on_heterogeneous_gains() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let devs = profiles(&[0.9; 12]);
        let h = draw_channel(&FadingModel::default(), 12, &mut rng).unwrap();
        let alpha = align(&h, &devs, 1.0).unwrap();
        for ((hk, ak), dev) in h.iter().zip(&alpha).zip(&devs) {
            let g = hk * ak / dev.participation;
            assert!((g - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn degenerate_participation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(sample_participation(&profiles(&[1.0; 8]), &mut rng).tau.iter().all(|t| *t));
        assert!(sample_participation(&profiles(&[0.0; 8]), &mut rng).tau.iter().all(|t| !*t));
    }

    #[test]
    fn participation_rate_matches_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let devs = profiles(&[0.9; 12]);
        let n = 100_000;
        let mut counts = vec![0usize; 12];
        for _ in 0..n {
            for (c, t) in counts.iter_mut().zip(sample_participation(&devs, &mut rng).tau) {
                *c += t as usize;
            }
        }
        for c in counts {
            let rate = c as f64 / n as f64;
            assert!((rate - 0.9).abs() < 0.01, "rate {rate}");
        }
    }

    #[test]
    fn transmit_examples() {
        let z = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(transmit_signal(&z, 1.8, 0.9, false), DVector::zeros(2));
        assert_eq!(transmit_signal(&z, 1.0, 1.0, true), z);
        let x = transmit_signal(&z, 1.8, 0.9, true);
        assert!((x[0] - 2.0).abs() < 1e-15 && x[1] == 0.0);
    }

    #[test]
    fn noiseless_superposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x1 = DVector::from_vec(vec![1.0, 2.0]);
        let x2 = DVector::from_vec(vec![-3.0, 0.5]);
        let y = superpose(std::slice::from_ref(&x1), &[1.0], 0.0, 2, &mut rng).unwrap();
        assert_eq!(y, x1);
        let y = superpose(&[x1.clone(), x2.clone()], &[0.5, 2.0], 0.0, 2, &mut rng).unwrap();
        assert_eq!(y, x1 * 0.5 + x2 * 2.0);
    }

    #[test]
    fn receiver_noise_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let zeros = vec![DVector::zeros(3); 2];
        let n = 100_000;
        let mut sq = vec![0.0; 3];
        for _ in 0..n {
            let y = superpose(&zeros, &[1.0, 1.0], 0.1, 3, &mut rng).unwrap();
            for (s, v) in sq.iter_mut().zip(y.iter()) {
                *s += v * v;
            }
        }
        for s in sq {
            let var = s / n as f64;
            assert!((var - 0.1).abs() < 0.005, "var {var}");
        }
    }

    #[test]
    fn superposition_is_linear_with_fixed_seed() {
        let a = vec![DVector::from_vec(vec![1.0, -2.0, 0.25]), DVector::from_vec(vec![0.5, 0.0, 3.0])];
        let b = vec![DVector::from_vec(vec![-4.0, 1.5, 2.0]), DVector::from_vec(vec![1.0, 1.0, -1.0])];
        let sum: Vec<_> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let h = [0.7, 1.3];
        let run = |s: &[DVector<f64>]| superpose(s, &h, 0.0, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!((run(&sum) - (run(&a) + run(&b))).amax() < 1e-12);
    }

    #[test]
    fn power_audit_examples() {
        let devs = profiles(&[0.9, 0.9]);
        let zero = vec![vec![DVector::zeros(2), DVector::zeros(2)]; 3];
        let rows = audit_power(&zero, &devs).unwrap();
        assert!(rows.iter().all(|r| r.empirical_power_watts == 0.0 && !r.exceeded));

        let x = DVector::from_vec(vec![1.0, 1.0]);
        let rows = audit_power(&[vec![x.clone(), DVector::zeros(2)]], &devs).unwrap();
        assert_eq!(rows[0].empirical_power_watts, 2.0);
        assert!(rows[0].exceeded);
        assert!(!rows[1].exceeded);
        assert!(audit_power(&[], &devs).is_err());
        assert!(power_audit_csv(&rows).starts_with("device_index,empirical_power_watts,budget_watts,exceeded\n0,2,1,true"));
    }
}
