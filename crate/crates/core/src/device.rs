//! Device side: synthetic feature extraction, linear encoding, norm clipping
//! and Gaussian perturbation, composed in that order.

use nalgebra::DVector;
use rand::Rng;

use crate::config::{DeviceProfile, EncoderSpec, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_vector, random_orthonormal_rows, LinearMap};
use crate::seed::{self, StreamTag};

/// Vectorized feature map `f_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: DVector<f64>,
}

impl FeatureVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self { values })
        } else {
            Err(Error::NonFinite("feature vector"))
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Reduced feature `z_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeature {
    pub values: DVector<f64>,
    /// Set when clipping rescaled the vector.
    pub clipped: bool,
}

/// The common object seen by every device: a class centroid plus one view
/// offset per device.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetObject {
    pub class_label: usize,
    pub canonical_feature: DVector<f64>,
    pub view_perturbations: Vec<DVector<f64>>,
}

impl TargetObject {
    /// Draws zero-sum Gaussian view offsets whose RMS norm is `view_norm`, so
    /// the average of the device features is exactly the centroid.
    pub fn synthesize<R: Rng + ?Sized>(
        class_label: usize,
        centroid: &DVector<f64>,
        num_devices: usize,
        view_norm: f64,
        rng: &mut R,
    ) -> Self {
        let d = centroid.len();
        let mut views: Vec<DVector<f64>> = (0..num_devices).map(|_| gaussian_vector(d, 1.0, rng)).collect();
        let mean = views.iter().fold(DVector::zeros(d), |acc, v| acc + v) / num_devices as f64;
        for v in &mut views {
            *v -= &mean;
        }
        let rms = (views.iter().map(|v| v.norm_squared()).sum::<f64>() / num_devices as f64).sqrt();
        if rms > 0.0 {
            let scale = view_norm / rms;
            for v in &mut views {
                *v *= scale;
            }
        }
        Self { class_label, canonical_feature: centroid.clone(), view_perturbations: views }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderMatrix(pub LinearMap);

/// Encoders for all devices. Shared encoders are stored once.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderBank {
    Shared(EncoderMatrix),
    PerDevice(Vec<EncoderMatrix>),
}

impl EncoderBank {
    /// Reproducible from `(master_seed, encoder spec)`.
    pub fn build(cfg: &SystemConfig) -> Self {
        let (r, d) = (cfg.reduced_dim, cfg.feature_dim);
        let draw = |k: u32| {
            let mut rng = seed::stream(cfg.master_seed, 0, StreamTag::Encoder(k));
            EncoderMatrix(LinearMap::Dense(random_orthonormal_rows(r, d, &mut rng)))
        };
        match cfg.encoder {
            EncoderSpec::Identity => EncoderBank::Shared(EncoderMatrix(LinearMap::Identity(d))),
            EncoderSpec::SharedOrthonormal => EncoderBank::Shared(draw(0)),
            EncoderSpec::PerDeviceOrthonormal => {
                EncoderBank::PerDevice((0..cfg.num_devices as u32).map(draw).collect())
            }
        }
    }

    pub fn get(&self, k: usize) -> &EncoderMatrix {
        match self {
            EncoderBank::Shared(w) => w,
            EncoderBank::PerDevice(ws) => &ws[k],
        }
    }
}

pub fn extract_feature(target: &TargetObject, device_index: usize) -> Result<FeatureVector> {
    let view = target.view_perturbations.get(device_index).ok_or(Error::IndexOutOfRange {
        what: "device",
        index: device_index,
        len: target.view_perturbations.len(),
    })?;
    if view.len() != target.canonical_feature.len() {
        return Err(Error::DimensionMismatch {
            context: "view perturbation",
            expected: target.canonical_feature.len(),
            found: view.len(),
        });
    }
    FeatureVector::new(&target.canonical_feature + view)
}

/// `z = W f`.
pub fn encode(f: &FeatureVector, w: &EncoderMatrix) -> Result<EncodedFeature> {
    Ok(EncodedFeature { values: w.0.apply(&f.values, "encode")?, clipped: false })
}

/// `z <- min(1, C / ||z||) z`. A zero vector is left alone; `C = 0` maps
/// everything else to zero.
pub fn clip(z: &EncodedFeature, clip_norm: f64) -> EncodedFeature {
    let norm = z.values.norm();
    if norm <= clip_norm || norm == 0.0 {
        return EncodedFeature { values: z.values.clone(), clipped: z.clipped };
    }
    let mut values = &z.values * (clip_norm / norm);
    // rounding can leave the norm a few ulps above C; shave it off so a
    // second clip is a no-op
    while values.norm() > clip_norm {
        values *= 1.0 - f64::EPSILON;
    }
    EncodedFeature { values, clipped: true }
}

/// `z~ = w z + n`, `n ~ N(0, sigma^2 I)`. The noise draw depends only on the
/// RNG state, never on `z`.
pub fn perturb<R: Rng + ?Sized>(z: &EncodedFeature, weight: f64, noise_var: f64, rng: &mut R) -> DVector<f64> {
    let noise = gaussian_vector(z.values.len(), noise_var.sqrt(), rng);
    &z.values * weight + noise
}

/// Extract, encode, clip, perturb.
pub fn run_device<R: Rng + ?Sized>(
    target: &TargetObject,
    profile: &DeviceProfile,
    w: &EncoderMatrix,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let f = extract_feature(target, profile.index).map_err(|e| e.in_stage("extract"))?;
    let z = encode(&f, w).map_err(|e| e.in_stage("encode"))?;
    let z = clip(&z, profile.clip_norm);
    Ok(perturb(&z, profile.weight, profile.noise_var, rng))
}
