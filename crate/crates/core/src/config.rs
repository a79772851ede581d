//! System and device configuration, the on-disk TOML format, and validation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::FadingModel;
use crate::error::{ConfigViolation, Error, Result};

/// Converts a power level in dBm to linear watts (30 dBm = 1 W).
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Per-device mechanism and radio parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceProfile {
    pub index: usize,
    /// Participation probability `p_k`.
    #[serde(rename = "p")]
    pub participation: f64,
    /// Importance weight `w_k`.
    #[serde(rename = "w")]
    pub weight: f64,
    /// Clipping norm bound `C_k`.
    pub clip_norm: f64,
    /// Local perturbation variance `sigma_k^2`.
    #[serde(rename = "sigma_sq")]
    pub noise_var: f64,
    /// Transmit power budget in watts.
    pub power_watts: f64,
}

impl DeviceProfile {
    pub fn new(index: usize, participation: f64, weight: f64, clip_norm: f64, noise_var: f64, power_watts: f64) -> Self {
        Self { index, participation, weight, clip_norm, noise_var, power_watts }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSpec {
    /// `W_k = I`, requires `r = d`.
    Identity,
    /// One random matrix with orthonormal rows, shared by every device.
    SharedOrthonormal,
    /// An independent orthonormal-row matrix per device.
    PerDeviceOrthonormal,
}

impl EncoderSpec {
    pub fn is_shared(self) -> bool {
        !matches!(self, EncoderSpec::PerDeviceOrthonormal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderSpec {
    /// `D = W^T`; only meaningful for shared encoders.
    Transpose,
    /// `D = pinv(W)`; for per-device encoders `W` is the weight-averaged encoder.
    Pseudoinverse,
}

/// Parameters of the synthetic nearest-centroid server model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub num_classes: usize,
    /// Target classification margin (half the minimum centroid distance).
    pub margin_delta: f64,
    /// Norm of each device's view offset, as a fraction of `margin_delta`.
    pub view_spread: f64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self { num_classes: 40, margin_delta: 4.0, view_spread: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystemConfig")]
pub struct SystemConfig {
    #[serde(rename = "k_devices")]
    pub num_devices: usize,
    #[serde(rename = "feature_dim_d")]
    pub feature_dim: usize,
    #[serde(rename = "reduced_dim_r")]
    pub reduced_dim: usize,
    pub gamma: f64,
    pub sigma_sq_m: f64,
    pub delta: f64,
    pub delta_prime: f64,
    #[serde(with = "seed_repr")]
    pub master_seed: u64,
    pub encoder: EncoderSpec,
    pub decoder: DecoderSpec,
    pub fading: FadingModel,
    pub classifier: ClassifierSpec,
    pub devices: Vec<DeviceProfile>,
}

impl SystemConfig {
    /// The experimental setup with `q x 7 x 7` feature maps: 12 devices,
    /// `p = 0.9`, `w = 1/12`, `sigma^2 = 0.1`, `C = 100`, 30 dBm, receiver noise
    /// 0.1, `delta = delta' = 1e-5`, `gamma = 1`, 40 classes.
    pub fn paper_default(channels_q: usize) -> Self {
        let k = 12;
        let dim = channels_q * 7 * 7;
        let devices = (0..k)
            .map(|i| DeviceProfile::new(i, 0.9, 1.0 / k as f64, 100.0, 0.1, dbm_to_watts(30.0)))
            .collect();
        Self {
            num_devices: k,
            feature_dim: dim,
            reduced_dim: dim,
            gamma: 1.0,
            sigma_sq_m: 0.1,
            delta: 1e-5,
            delta_prime: 1e-5,
            master_seed: 20_240_601,
            encoder: EncoderSpec::Identity,
            decoder: DecoderSpec::Transpose,
            fading: FadingModel::default(),
            classifier: ClassifierSpec::default(),
            devices,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn config_hash(&self) -> String {
        let text = self.to_toml_string().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }
}

/// Checks every invariant and reports all violations, not just the first.
pub fn validate_config(cfg: SystemConfig) -> std::result::Result<SystemConfig, Vec<ConfigViolation>> {
    let mut errs = Vec::new();
    let mut global = |ok: bool, field: &str, msg: &str| {
        if !ok {
            errs.push(ConfigViolation::global(field, msg));
        }
    };

    global(cfg.num_devices >= 1, "k_devices", "must be at least 1");
    global(
        cfg.devices.len() == cfg.num_devices,
        "devices",
        &format!("expected {} device profiles, found {}", cfg.num_devices, cfg.devices.len()),
    );
    global(cfg.feature_dim >= 1, "feature_dim_d", "must be at least 1");
    global(cfg.reduced_dim >= 1, "reduced_dim_r", "must be at least 1");
    global(cfg.reduced_dim <= cfg.feature_dim, "reduced_dim_r", "r exceeds d");
    global(cfg.gamma.is_finite() && cfg.gamma > 0.0, "gamma", "must be positive and finite");
    global(cfg.sigma_sq_m.is_finite() && cfg.sigma_sq_m >= 0.0, "sigma_sq_m", "must be nonnegative");
    global(cfg.delta > 0.0 && cfg.delta <= 1.0, "delta", "must lie in (0, 1]");
    global(cfg.delta_prime > 0.0 && cfg.delta_prime <= 1.0, "delta_prime", "must lie in (0, 1]");
    global(
        cfg.encoder != EncoderSpec::Identity || cfg.reduced_dim == cfg.feature_dim,
        "encoder",
        "identity encoder requires r = d",
    );
    global(
        cfg.decoder != DecoderSpec::Transpose || cfg.encoder.is_shared(),
        "decoder",
        "transpose decoder requires a shared encoder",
    );
    global(cfg.classifier.num_classes >= 2, "classifier.num_classes", "need at least 2 classes");
    global(
        cfg.classifier.margin_delta.is_finite() && cfg.classifier.margin_delta > 0.0,
        "classifier.margin_delta",
        "must be positive",
    );
    global(
        cfg.classifier.view_spread.is_finite() && cfg.classifier.view_spread >= 0.0,
        "classifier.view_spread",
        "must be nonnegative",
    );
    global(cfg.fading.mean_power > 0.0, "fading.mean_power", "must be positive");
    global(cfg.fading.h_floor > 0.0, "fading.h_floor", "must be positive");
    global(cfg.fading.k_factor >= 0.0, "fading.k_factor", "must be nonnegative");

    for (pos, dev) in cfg.devices.iter().enumerate() {
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                errs.push(ConfigViolation::device(pos, field, msg));
            }
        };
        check(dev.index == pos, "index", "must equal the device's position");
        check((0.0..=1.0).contains(&dev.participation), "p_k", "must lie in [0, 1]");
        check(dev.weight.is_finite() && dev.weight >= 0.0, "w_k", "must be nonnegative");
        check(dev.clip_norm.is_finite() && dev.clip_norm >= 0.0, "C_k", "must be nonnegative");
        check(dev.noise_var.is_finite() && dev.noise_var >= 0.0, "sigma_sq_k", "must be nonnegative");
        check(dev.power_watts.is_finite() && dev.power_watts >= 0.0, "P_k", "must be nonnegative");
    }

    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}

/// Like [`validate_config`] but with the crate error type.
pub fn validated(cfg: SystemConfig) -> Result<SystemConfig> {
    validate_config(cfg).map_err(Error::InvalidConfig)
}

#[derive(Deserialize)]
struct RawDevice {
    index: Option<usize>,
    p: f64,
    w: f64,
    clip_norm: f64,
    sigma_sq: f64,
    power_watts: Option<f64>,
    power_dbm: Option<f64>,
}

#[derive(Deserialize)]
struct RawSystemConfig {
    k_devices: usize,
    feature_dim_d: usize,
    reduced_dim_r: usize,
    gamma: f64,
    sigma_sq_m: f64,
    delta: f64,
    delta_prime: f64,
    #[serde(with = "seed_repr")]
    master_seed: u64,
    encoder: EncoderSpec,
    decoder: DecoderSpec,
    #[serde(default)]
    fading: FadingModel,
    #[serde(default)]
    classifier: ClassifierSpec,
    devices: Vec<RawDevice>,
}

impl TryFrom<RawSystemConfig> for SystemConfig {
    type Error = String;

    fn try_from(raw: RawSystemConfig) -> std::result::Result<Self, String> {
        let devices = raw
            .devices
            .into_iter()
            .enumerate()
            .map(|(pos, d)| {
                let power_watts = match (d.power_watts, d.power_dbm) {
                    (Some(w), None) => w,
                    (None, Some(dbm)) => dbm_to_watts(dbm),
                    (Some(_), Some(_)) => return Err(format!("device {pos}: give power_watts or power_dbm, not both")),
                    (None, None) => return Err(format!("device {pos}: missing power_watts / power_dbm")),
                };
                Ok(DeviceProfile {
                    index: d.index.unwrap_or(pos),
                    participation: d.p,
                    weight: d.w,
                    clip_norm: d.clip_norm,
                    noise_var: d.sigma_sq,
                    power_watts,
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(SystemConfig {
            num_devices: raw.k_devices,
            feature_dim: raw.feature_dim_d,
            reduced_dim: raw.reduced_dim_r,
            gamma: raw.gamma,
            sigma_sq_m: raw.sigma_sq_m,
            delta: raw.delta,
            delta_prime: raw.delta_prime,
            master_seed: raw.master_seed,
            encoder: raw.encoder,
            decoder: raw.decoder,
            fading: raw.fading,
            classifier: raw.classifier,
            devices,
        })
    }
}

/// TOML integers are signed 64-bit; seeds above `i64::MAX` go out as strings.
mod seed_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => u64::try_from(v).map_err(serde::de::Error::custom),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_default_is_valid() {
        let cfg = SystemConfig::paper_default(16);
        assert_eq!(cfg.num_devices, 12);
        assert_eq!(cfg.feature_dim, 784);
        assert!(validate_config(cfg).is_ok());
    }

    #[test]
    fn thirty_dbm_is_one_watt() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((watts_to_dbm(1.0) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn bad_probability_names_device_and_field() {
        let mut cfg = SystemConfig::paper_default(1);
        cfg.devices[3].participation = 1.3;
        let errs = validate_config(cfg).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].device, Some(3));
        assert_eq!(errs[0].field, "p_k");
    }

    #[test]
    fn r_above_d_is_rejected() {
        let mut cfg = SystemConfig::paper_default(1);
        cfg.encoder = EncoderSpec::SharedOrthonormal;
        cfg.reduced_dim = cfg.feature_dim + 1;
        let errs = validate_config(cfg).unwrap_err();
        assert!(errs.iter().any(|e| e.message == "r exceeds d"));
    }

    #[test]
    fn all_violations_are_reported() {
        let mut cfg = SystemConfig::paper_default(1);
        cfg.gamma = 0.0;
        cfg.delta = 0.0;
        cfg.devices[0].weight = -1.0;
        cfg.devices[5].clip_norm = -2.0;
        cfg.devices.pop();
        let errs = validate_config(cfg).unwrap_err();
        let fields: Vec<_> = errs.iter().map(|e| (e.device, e.field.as_str())).collect();
        assert!(fields.contains(&(None, "gamma")));
        assert!(fields.contains(&(None, "delta")));
        assert!(fields.contains(&(None, "devices")));
        assert!(fields.contains(&(Some(0), "w_k")));
        assert!(fields.contains(&(Some(5), "C_k")));
    }

    #[test]
    fn transpose_decoder_needs_shared_encoder() {
        let mut cfg = SystemConfig::paper_default(1);
        cfg.encoder = EncoderSpec::PerDeviceOrthonormal;
        let errs = validate_config(cfg).unwrap_err();
        assert!(errs.iter().any(|e| e.field == "decoder"));
    }

    #[test]
    fn parser_accepts_dbm() {
        let text = r#"
k_devices = 1
feature_dim_d = 4
reduced_dim_r = 4
gamma = 1.0
sigma_sq_m = 0.1
delta = 1e-5
delta_prime = 1e-5
master_seed = 9
encoder = "identity"
decoder = "transpose"

[[devices]]
p = 0.9
w = 1.0
clip_norm = 100.0
sigma_sq = 0.1
power_dbm = 30.0
"#;
        let cfg = SystemConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.devices[0].index, 0);
        assert!((cfg.devices[0].power_watts - 1.0).abs() < 1e-15);
        assert_eq!(cfg.classifier, ClassifierSpec::default());
        assert!(validate_config(cfg).is_ok());
    }

    #[test]
    fn parser_rejects_ambiguous_power() {
        let mut text = SystemConfig::paper_default(1).to_toml_string().unwrap();
        text = text.replacen("power_watts = 1.0", "power_watts = 1.0\npower_dbm = 30.0", 1);
        assert!(SystemConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn large_seed_round_trips() {
        let cfg = SystemConfig::paper_default(1).with_seed(u64::MAX);
        let back = SystemConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back.master_seed, u64::MAX);
    }

    proptest! {
        #[test]
        fn config_round_trips(
            seed in any::<u64>(),
            gamma in 1e-3f64..10.0,
            sigma_m in 0.0f64..5.0,
            ps in proptest::collection::vec(0.0f64..=1.0, 1..6),
            ws in proptest::collection::vec(0.0f64..2.0, 6),
            k_factor in 0.0f64..20.0,
        ) {
            let mut cfg = SystemConfig::paper_default(1).with_seed(seed);
            cfg.gamma = gamma;
            cfg.sigma_sq_m = sigma_m;
            cfg.fading.k_factor = k_factor;
            cfg.num_devices = ps.len();
            cfg.devices = ps.iter().zip(&ws).enumerate()
                .map(|(i, (&p, &w))| DeviceProfile::new(i, p, w, 100.0 * w, 0.1 + w, dbm_to_watts(20.0 + 10.0 * p)))
                .collect();
            let text = cfg.to_toml_string().unwrap();
            let back = SystemConfig::from_toml_str(&text).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
