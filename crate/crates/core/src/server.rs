//! Server side: post-processing, decoding, the reference average pool and
//! a nearest-centroid classifier with an exactly known margin.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::{ClassifierSpec, DecoderSpec, SystemConfig};
use crate::device::{EncoderBank, FeatureVector};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_vector, LinearMap};

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderMatrix(pub LinearMap);

impl DecoderMatrix {
    /// `D = W^T` or `D = pinv(W)`. With per-device encoders, `W` is the
    /// weight-averaged encoder `sum_k w_k W_k / sum_k w_k`.
    pub fn build(cfg: &SystemConfig, encoders: &EncoderBank) -> Result<Self> {
        match (cfg.decoder, encoders) {
            (DecoderSpec::Transpose, EncoderBank::Shared(w)) => Ok(Self(w.0.transpose())),
            (DecoderSpec::Transpose, EncoderBank::PerDevice(_)) => {
                Err(Error::InvalidArgument("transpose decoder requires a shared encoder".into()))
            }
            (DecoderSpec::Pseudoinverse, EncoderBank::Shared(w)) => Ok(Self(w.0.pseudo_inverse()?)),
            (DecoderSpec::Pseudoinverse, EncoderBank::PerDevice(ws)) => {
                let total: f64 = cfg.devices.iter().map(|d| d.weight).sum();
                let mut avg = DMatrix::zeros(cfg.reduced_dim, cfg.feature_dim);
                for (w, dev) in ws.iter().zip(&cfg.devices) {
                    let coef = if total > 0.0 { dev.weight / total } else { 1.0 / ws.len() as f64 };
                    avg += w.0.to_dense() * coef;
                }
                Ok(Self(LinearMap::Dense(avg).pseudo_inverse()?))
            }
        }
    }
}

/// Nearest-centroid classifier; `margin_delta` is half the smallest
/// pairwise centroid distance.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginClassifier {
    pub centroids: Vec<DVector<f64>>,
    pub margin_delta: f64,
}

impl MarginClassifier {
    pub fn new(centroids: Vec<DVector<f64>>) -> Result<Self> {
        let margin_delta = compute_margin(&centroids)?;
        Ok(Self { centroids, margin_delta })
    }

    /// Random unit directions rescaled so the margin equals `spec.margin_delta`.
    /// All centroids share one norm.
    pub fn synthesize<R: Rng + ?Sized>(spec: &ClassifierSpec, dim: usize, rng: &mut R) -> Result<Self> {
        let dirs: Vec<DVector<f64>> = (0..spec.num_classes)
            .map(|_| {
                let g = gaussian_vector(dim, 1.0, rng);
                let n = g.norm();
                g / n
            })
            .collect();
        let unit_margin = compute_margin(&dirs)?;
        let scale = spec.margin_delta / unit_margin;
        Self::new(dirs.into_iter().map(|c| c * scale).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids_csv(&self) -> String {
        let mut out = String::from("class,values\n");
        for (i, c) in self.centroids.iter().enumerate() {
            let vals: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{i},{}\n", vals.join(" ")));
        }
        out
    }
}

/// `z^ = y / gamma`.
pub fn post_process(y: &DVector<f64>, gamma: f64) -> DVector<f64> {
    y / gamma
}

/// `f^ = D z^`.
pub fn decode(z_hat: &DVector<f64>, d: &DecoderMatrix) -> Result<DVector<f64>> {
    d.0.apply(z_hat, "decode")
}

/// Reference pooled feature `f* = (1/K) sum_k f_k`.
pub fn average_pool(features: &[FeatureVector]) -> Result<DVector<f64>> {
    let first = features.first().ok_or(Error::EmptyInput("average_pool needs at least one feature"))?;
    let mut acc = DVector::zeros(first.len());
    for f in features {
        if f.len() != first.len() {
            return Err(Error::DimensionMismatch { context: "average_pool", expected: first.len(), found: f.len() });
        }
        acc += &f.values;
    }
    Ok(acc / features.len() as f64)
}

/// Index of the nearest centroid, lowest index on ties.
pub fn classify(f: &DVector<f64>, clf: &MarginClassifier) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, c) in clf.centroids.iter().enumerate() {
        let dist = (f - c).norm_squared();
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    best
}

/// Half the minimum pairwise distance, from the Gram matrix.
pub fn compute_margin(centroids: &[DVector<f64>]) -> Result<f64> {
    if centroids.len() < 2 {
        return Err(Error::InvalidArgument("margin needs at least two centroids".into()));
    }
    let dim = centroids[0].len();
    if let Some(bad) = centroids.iter().find(|c| c.len() != dim) {
        return Err(Error::DimensionMismatch { context: "compute_margin", expected: dim, found: bad.len() });
    }
    let stacked = DMatrix::from_columns(centroids);
    let gram = stacked.transpose() * &stacked;
    let mut min_sq = f64::INFINITY;
    for i in 0..centroids.len() {
        for j in (i + 1)..centroids.len() {
            let sq = (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0);
            min_sq = min_sq.min(sq);
        }
    }
    if min_sq == 0.0 {
        return Err(Error::InvalidArgument("duplicate centroids give a zero margin".into()));
    }
    Ok(0.5 * min_sq.sqrt())
}

/// Post-process, decode, classify.
pub fn run_server(
    y: &DVector<f64>,
    gamma: f64,
    d: &DecoderMatrix,
    clf: &MarginClassifier,
) -> Result<(DVector<f64>, usize)> {
    let z_hat = post_process(y, gamma);
    let f_hat = decode(&z_hat, d).map_err(|e| e.in_stage("decode"))?;
    let label = classify(&f_hat, clf);
    Ok((f_hat, label))
}
