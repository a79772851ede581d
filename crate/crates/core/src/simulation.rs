//! End-to-end trial simulation: devices, channel, server.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{align, draw_channel, sample_participation, superpose, transmit_signal, ChannelRealization, ParticipationDraw};
use crate::config::{validated, DeviceProfile, SystemConfig};
use crate::device::{clip, encode, extract_feature, perturb, EncodedFeature, EncoderBank, FeatureVector, TargetObject};
use crate::error::Result;
use crate::seed::{self, StreamTag};
use crate::server::{average_pool, run_server, DecoderMatrix, MarginClassifier};

/// Everything fixed for an experiment: validated config, encoders, decoder
/// and classifier. Immutable; safe to share across worker threads.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: SystemConfig,
    pub encoders: EncoderBank,
    pub decoder: DecoderMatrix,
    pub classifier: MarginClassifier,
}

impl Scenario {
    pub fn build(cfg: SystemConfig) -> Result<Self> {
        let cfg = validated(cfg)?;
        let encoders = EncoderBank::build(&cfg);
        let decoder = DecoderMatrix::build(&cfg, &encoders).map_err(|e| e.in_stage("decoder"))?;
        let mut rng = seed::stream(cfg.master_seed, 0, StreamTag::Classifier);
        let classifier =
            MarginClassifier::synthesize(&cfg.classifier, cfg.feature_dim, &mut rng).map_err(|e| e.in_stage("classifier"))?;
        Ok(Self { cfg, encoders, decoder, classifier })
    }

    /// Same encoders and classifier with different device parameters.
    pub fn with_devices(&self, devices: Vec<DeviceProfile>) -> Result<Self> {
        let mut cfg = self.cfg.clone();
        cfg.devices = devices;
        let cfg = validated(cfg)?;
        let decoder = DecoderMatrix::build(&cfg, &self.encoders)?;
        Ok(Self { cfg, encoders: self.encoders.clone(), decoder, classifier: self.classifier.clone() })
    }

    pub fn with_receiver_noise(&self, sigma_sq_m: f64) -> Self {
        let mut out = self.clone();
        out.cfg.sigma_sq_m = sigma_sq_m;
        out
    }

    /// Target `j` has class `j mod L` and its own view offsets.
    pub fn target(&self, j: u64) -> TargetObject {
        let class = (j % self.classifier.num_classes() as u64) as usize;
        let mut rng = seed::stream(self.cfg.master_seed, j, StreamTag::Target);
        let view_norm = self.cfg.classifier.view_spread * self.classifier.margin_delta;
        TargetObject::synthesize(class, &self.classifier.centroids[class], self.cfg.num_devices, view_norm, &mut rng)
    }

    /// Extracts, encodes and clips every device's feature once; only the
    /// perturbation differs between trials.
    pub fn prepare(&self, target: TargetObject) -> Result<PreparedTarget> {
        let mut features = Vec::with_capacity(self.cfg.num_devices);
        let mut encoded = Vec::with_capacity(self.cfg.num_devices);
        for dev in &self.cfg.devices {
            let f = extract_feature(&target, dev.index).map_err(|e| e.in_stage("extract"))?;
            let z = encode(&f, self.encoders.get(dev.index)).map_err(|e| e.in_stage("encode"))?;
            encoded.push(clip(&z, dev.clip_norm));
            features.push(f);
        }
        let f_star = average_pool(&features).map_err(|e| e.in_stage("average_pool"))?;
        Ok(PreparedTarget { target, features, encoded, f_star })
    }

    pub fn prepare_targets(&self, count: usize) -> Result<Vec<PreparedTarget>> {
        (0..count as u64).map(|j| self.prepare(self.target(j))).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PreparedTarget {
    pub target: TargetObject,
    pub features: Vec<FeatureVector>,
    /// Clipped `z_k` per device.
    pub encoded: Vec<EncodedFeature>,
    pub f_star: DVector<f64>,
}

/// One Monte-Carlo realization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub tau: ParticipationDraw,
    pub channel: ChannelRealization,
    pub z_hat: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub f_star: Vec<f64>,
    pub sq_err: f64,
    pub predicted_label: usize,
    pub true_label: usize,
    /// `||x_k||^2` per device.
    pub tx_energy: Vec<f64>,
}

/// Runs one block: participation, fading, alignment, perturbation,
/// superposition and server inference. All randomness comes from streams
/// keyed by `trial`.
pub fn simulate_trial(scenario: &Scenario, prepared: &PreparedTarget, trial: u64) -> Result<TrialRecord> {
    let cfg = &scenario.cfg;
    let master = cfg.master_seed;
    let tau = sample_participation(&cfg.devices, &mut seed::stream(master, trial, StreamTag::Participation));
    let h = draw_channel(&cfg.fading, cfg.num_devices, &mut seed::stream(master, trial, StreamTag::Channel))
        .map_err(|e| e.in_stage("channel"))?;
    let alpha = align(&h, &cfg.devices, cfg.gamma)?;

    let mut signals = Vec::with_capacity(cfg.num_devices);
    let mut tx_energy = Vec::with_capacity(cfg.num_devices);
    for (k, dev) in cfg.devices.iter().enumerate() {
        let mut rng = seed::stream(master, trial, StreamTag::DeviceNoise(k as u32));
        let z_tilde = perturb(&prepared.encoded[k], dev.weight, dev.noise_var, &mut rng);
        let x = transmit_signal(&z_tilde, alpha[k], dev.participation, tau.tau[k]);
        tx_energy.push(x.norm_squared());
        signals.push(x);
    }
    let mut rx_rng = seed::stream(master, trial, StreamTag::ReceiverNoise);
    let y = superpose(&signals, &h, cfg.sigma_sq_m, cfg.reduced_dim, &mut rx_rng).map_err(|e| e.in_stage("superpose"))?;
    let (f_hat, label) =
        run_server(&y, cfg.gamma, &scenario.decoder, &scenario.classifier).map_err(|e| e.in_stage("server"))?;
    let z_hat = crate::server::post_process(&y, cfg.gamma);
    let sq_err = (&f_hat - &prepared.f_star).norm_squared();

    Ok(TrialRecord {
        trial,
        tau,
        channel: ChannelRealization { h, alpha },
        z_hat: z_hat.as_slice().to_vec(),
        f_hat: f_hat.as_slice().to_vec(),
        f_star: prepared.f_star.as_slice().to_vec(),
        sq_err,
        predicted_label: label,
        true_label: prepared.target.class_label,
        tx_energy,
    })
}

/// Scalar outcome of a trial; what the estimators keep.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub sq_err: f64,
    pub correct: bool,
    pub true_label: usize,
    pub tx_energy: Vec<f64>,
}

/// Trial `i` of target `j` uses trial index `j * trials_per_target + i`, so
/// the same schedule reproduces the same noise regardless of device
/// parameters. Results come back in schedule order.
pub fn run_schedule<T, F>(
    scenario: &Scenario,
    targets: &[PreparedTarget],
    trials_per_target: usize,
    map: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(TrialRecord) -> T + Sync,
{
    let total = targets.len() * trials_per_target;
    (0..total)
        .into_par_iter()
        .map(|n| {
            let target = &targets[n / trials_per_target];
            simulate_trial(scenario, target, n as u64).map(&map)
        })
        .collect()
}

pub fn summarize(record: TrialRecord) -> TrialSummary {
    TrialSummary {
        sq_err: record.sq_err,
        correct: record.predicted_label == record.true_label,
        true_label: record.true_label,
        tx_energy: record.tx_energy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DecoderSpec, EncoderSpec};

    fn small_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::paper_default(1);
        cfg.classifier.num_classes = 8;
        cfg
    }

    #[test]
    fn trial_streams_are_reproducible() {
        let scenario = Scenario::build(small_cfg()).unwrap();
        let targets = scenario.prepare_targets(3).unwrap();
        let a = run_schedule(&scenario, &targets, 5, |r| r).unwrap();
        let b = run_schedule(&scenario, &targets, 5, |r| r).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);
    }

    #[test]
    fn recorded_error_matches_vectors() {
        let scenario = Scenario::build(small_cfg()).unwrap();
        let targets = scenario.prepare_targets(2).unwrap();
        for rec in run_schedule(&scenario, &targets, 4, |r| r).unwrap() {
            let direct: f64 = rec.f_hat.iter().zip(&rec.f_star).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!((rec.sq_err - direct).abs() <= 1e-9 * direct.max(1e-300));
            for (k, (&h, &a)) in rec.channel.h.iter().zip(&rec.channel.alpha).enumerate() {
                if rec.tau.tau[k] {
                    assert!((h * a / 0.9 - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn noiseless_shared_encoder_round_trip() {
        let mut cfg = small_cfg();
        cfg.encoder = EncoderSpec::SharedOrthonormal;
        cfg.decoder = DecoderSpec::Transpose;
        cfg.reduced_dim = 20;
        cfg.sigma_sq_m = 0.0;
        for d in &mut cfg.devices {
            d.participation = 1.0;
            d.noise_var = 0.0;
        }
        let scenario = Scenario::build(cfg).unwrap();
        // identical device features inside the encoder's row space
        let EncoderBank::Shared(w) = &scenario.encoders else { panic!() };
        let w = w.0.to_dense();
        let f = w.transpose() * DVector::from_fn(20, |i, _| (i as f64 - 7.0) * 0.3);
        let target = TargetObject {
            class_label: 0,
            canonical_feature: f.clone(),
            view_perturbations: vec![DVector::zeros(49); 12],
        };
        let prepared = scenario.prepare(target).unwrap();
        let rec = simulate_trial(&scenario, &prepared, 0).unwrap();
        let err = (DVector::from_vec(rec.f_hat) - f).norm();
        assert!(err <= 1e-9, "{err}");
    }
}
