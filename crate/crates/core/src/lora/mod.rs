//! Low-rank adapters: representation, merge/unmerge algebra, the training
//! configuration, a small reference trainer, and the on-disk container.

mod format;
mod train;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use format::{read_adapter, read_adapter_file, write_adapter, write_adapter_file, ADAPTER_MAGIC, ADAPTER_VERSION};
pub use train::{loss_and_grad, toy_lora_train, Adam, ToyTask, TrainOutcome};

/// Weight applied to the identity adapter when fusing.
pub const FACE_LORA_WEIGHT: f64 = 0.25;
/// Weight applied to the style adapter when fusing.
pub const STYLE_LORA_WEIGHT: f64 = 1.0;

/// Named base tensors of a model.
pub type WeightSet = BTreeMap<String, DMatrix<f64>>;

/// Content digest of a weight set (names, shapes and exact bit patterns).
pub fn weights_digest(weights: &WeightSet) -> String {
    let mut h = Sha256::new();
    for (name, m) in weights {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// A small frozen base model used by the desk-scale pipeline.
pub fn toy_base_model(seed: u64) -> WeightSet {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    ["unet.attn.to_k", "unet.attn.to_q"]
        .into_iter()
        .map(|name| (name.to_string(), DMatrix::from_fn(64, 64, |_, _| rng.gen_range(-0.125..0.125))))
        .collect()
}

/// Low-rank factors for one base tensor: the update is `B · A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors {
    /// r × d_in
    pub a: DMatrix<f64>,
    /// d_out × r
    pub b: DMatrix<f64>,
}

impl LoraFactors {
    pub fn product(&self) -> DMatrix<f64> {
        &self.b * &self.a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterKind {
    Face,
    Style,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMetadata {
    pub kind: AdapterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_word: Option<String>,
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub id: String,
    pub rank: usize,
    pub scale: f64,
    pub tensors: BTreeMap<String, LoraFactors>,
    pub metadata: AdapterMetadata,
}

impl LoraAdapter {
    pub fn new(id: impl Into<String>, rank: usize, scale: f64, tensors: BTreeMap<String, LoraFactors>, metadata: AdapterMetadata) -> Result<Self> {
        let a = Self { id: id.into(), rank, scale, tensors, metadata };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig(format!("adapter `{}` has rank 0", self.id)));
        }
        if !self.scale.is_finite() {
            return Err(Error::InvalidConfig(format!("adapter `{}` has a non-finite scale", self.id)));
        }
        for (name, f) in &self.tensors {
            let bad = |detail: String| Error::Incompatible { tensor: name.clone(), detail };
            if f.a.nrows() != self.rank || f.b.ncols() != self.rank {
                return Err(bad(format!("factors {}x{} and {}x{} do not have rank {}", f.b.nrows(), f.b.ncols(), f.a.nrows(), f.a.ncols(), self.rank)));
            }
            if self.rank > f.a.ncols().min(f.b.nrows()) {
                return Err(bad(format!("rank {} exceeds min({}, {})", self.rank, f.b.nrows(), f.a.ncols())));
            }
            if f.a.iter().chain(f.b.iter()).any(|v| !v.is_finite()) {
                return Err(bad("non-finite factor entry".into()));
            }
        }
        Ok(())
    }

    /// Check every adapted tensor exists in `base` with matching shape.
    pub fn check_compatible(&self, base: &WeightSet) -> Result<()> {
        for (name, f) in &self.tensors {
            let w = base.get(name).ok_or_else(|| Error::Incompatible { tensor: name.clone(), detail: "no such base tensor".into() })?;
            if (f.b.nrows(), f.a.ncols()) != w.shape() {
                return Err(Error::Incompatible {
                    tensor: name.clone(),
                    detail: format!("update is {}x{}, base is {}x{}", f.b.nrows(), f.a.ncols(), w.nrows(), w.ncols()),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionEntry {
    pub adapter_id: String,
    pub weight: f64,
}

/// Which adapters to fuse into the base, and how strongly.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FusionSpec {
    pub entries: Vec<FusionEntry>,
}

impl FusionSpec {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let s = Self { entries: entries.into_iter().map(|(adapter_id, weight)| FusionEntry { adapter_id, weight }).collect() };
        s.validate()?;
        Ok(s)
    }

    /// Identity adapter at 0.25 and style adapter at 1.0.
    pub fn face_and_style(face_id: impl Into<String>, style_id: impl Into<String>) -> Self {
        Self {
            entries: vec![
                FusionEntry { adapter_id: face_id.into(), weight: FACE_LORA_WEIGHT },
                FusionEntry { adapter_id: style_id.into(), weight: STYLE_LORA_WEIGHT },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.weight.is_finite()) {
            Some(e) => Err(Error::InvalidInput(format!("fusion weight for `{}` is not finite", e.adapter_id))),
            None => Ok(()),
        }
    }
}

/// Σ α·scale·BA per tensor, over entries with non-zero effective weight.
fn accumulated_delta(base: &WeightSet, fusion: &FusionSpec, adapters: &[&LoraAdapter]) -> Result<BTreeMap<String, DMatrix<f64>>> {
    fusion.validate()?;
    let mut resolved = Vec::with_capacity(fusion.entries.len());
    for e in &fusion.entries {
        let a = adapters
            .iter()
            .find(|a| a.id == e.adapter_id)
            .ok_or_else(|| Error::Resolution(format!("adapter `{}` not supplied", e.adapter_id)))?;
        a.validate()?;
        a.check_compatible(base)?;
        resolved.push((*a, e.weight));
    }
    let mut delta: BTreeMap<String, DMatrix<f64>> = BTreeMap::new();
    for (a, weight) in resolved {
        let k = weight * a.scale;
        if k == 0.0 {
            continue;
        }
        for (name, f) in &a.tensors {
            let d = f.product() * k;
            match delta.get_mut(name) {
                Some(acc) => *acc += d,
                None => {
                    delta.insert(name.clone(), d);
                }
            }
        }
    }
    Ok(delta)
}

/// W' = W + Σ α·scale·BA. Returns a new weight set; tensors no adapter touches
/// (or touched only at zero weight) are copied bit for bit.
pub fn merge_adapters(base: &WeightSet, fusion: &FusionSpec, adapters: &[&LoraAdapter]) -> Result<WeightSet> {
    let delta = accumulated_delta(base, fusion, adapters)?;
    Ok(base
        .iter()
        .map(|(name, w)| (name.clone(), delta.get(name).map_or_else(|| w.clone(), |d| w + d)))
        .collect())
}

/// Inverse of [`merge_adapters`] for the same fusion and adapters.
pub fn unmerge_adapters(merged: &WeightSet, fusion: &FusionSpec, adapters: &[&LoraAdapter]) -> Result<WeightSet> {
    let delta = accumulated_delta(merged, fusion, adapters)?;
    Ok(merged
        .iter()
        .map(|(name, w)| (name.clone(), delta.get(name).map_or_else(|| w.clone(), |d| w - d)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay to zero, restarted `cycles` times over the run.
    CosineWithRestarts { cycles: u32 },
}

impl LrSchedule {
    /// Multiplier on the base learning rate at `step` of `total`.
    pub fn factor(&self, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::CosineWithRestarts { cycles } => {
                if total == 0 {
                    return 1.0;
                }
                let progress = step as f64 / total as f64;
                if progress >= 1.0 {
                    return 0.0;
                }
                let phase = (cycles.max(1) as f64 * progress) % 1.0;
                0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rank: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub epochs: u32,
    /// Requests 8-bit optimizer states from a real training backend; the
    /// reference trainer always runs in full precision.
    pub use_8bit_adam: bool,
    pub steps_per_epoch: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        default_train_config()
    }
}

pub fn default_train_config() -> TrainConfig {
    TrainConfig {
        rank: 32,
        learning_rate: 1e-4,
        schedule: LrSchedule::CosineWithRestarts { cycles: 1 },
        epochs: 20,
        use_8bit_adam: true,
        steps_per_epoch: 50,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::InvalidConfig("rank, epochs and steps per epoch must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if let LrSchedule::CosineWithRestarts { cycles: 0 } = self.schedule {
            return Err(Error::InvalidConfig("cosine schedule needs at least one cycle".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs as usize * self.steps_per_epoch as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn meta() -> AdapterMetadata {
        AdapterMetadata { kind: AdapterKind::Style, trigger_word: None, created_unix: 0 }
    }

    fn adapter(id: &str, name: &str, a: DMatrix<f64>, b: DMatrix<f64>) -> LoraAdapter {
        let rank = a.nrows();
        LoraAdapter::new(id, rank, 1.0, BTreeMap::from([(name.to_string(), LoraFactors { a, b })]), meta()).unwrap()
    }

    fn base2() -> WeightSet {
        BTreeMap::from([("w".to_string(), DMatrix::identity(2, 2)), ("other".to_string(), dmatrix![0.1, 0.2; 0.3, 0.4])])
    }

    #[test]
    fn hand_multiplied_example() {
        let ad = adapter("s", "w", dmatrix![1.0, 1.0], dmatrix![2.0; 0.0]);
        let fusion = FusionSpec::new([("s".to_string(), 0.5)]).unwrap();
        let merged = merge_adapters(&base2(), &fusion, &[&ad]).unwrap();
        assert_eq!(merged["w"], dmatrix![2.0, 1.0; 0.0, 1.0]);
        assert_eq!(merged["other"], base2()["other"]);
    }

    #[test]
    fn zero_weight_is_bit_exact() {
        let ad = adapter("s", "w", dmatrix![0.3, 0.7], dmatrix![0.1; 0.9]);
        let fusion = FusionSpec::new([("s".to_string(), 0.0)]).unwrap();
        assert_eq!(merge_adapters(&base2(), &fusion, &[&ad]).unwrap(), base2());
        assert_eq!(unmerge_adapters(&base2(), &FusionSpec::default(), &[]).unwrap(), base2());
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let ad = adapter("s", "w", dmatrix![1.0, 1.0, 1.0], dmatrix![1.0; 1.0]);
        let err = merge_adapters(&base2(), &FusionSpec::new([("s".to_string(), 1.0)]).unwrap(), &[&ad]).unwrap_err();
        assert!(matches!(err, Error::Incompatible { ref tensor, .. } if tensor == "w"), "{err}");
        let missing = adapter("m", "nope", dmatrix![1.0, 1.0], dmatrix![1.0; 1.0]);
        let err = merge_adapters(&base2(), &FusionSpec::new([("m".to_string(), 1.0)]).unwrap(), &[&missing]).unwrap_err();
        assert!(matches!(err, Error::Incompatible { ref tensor, .. } if tensor == "nope"));
    }

    #[test]
    fn unknown_adapter_is_a_resolution_error() {
        let err = merge_adapters(&base2(), &FusionSpec::new([("x".to_string(), 1.0)]).unwrap(), &[]).unwrap_err();
        assert!(matches!(err, Error::Resolution(_)));
    }

    #[test]
    fn rank_is_validated() {
        let r = LoraAdapter::new(
            "r",
            3,
            1.0,
            BTreeMap::from([("w".to_string(), LoraFactors { a: DMatrix::zeros(3, 2), b: DMatrix::zeros(2, 3) })]),
            meta(),
        );
        assert!(r.is_err());
        assert!(FusionSpec::new([("a".to_string(), f64::NAN)]).is_err());
    }

    #[test]
    fn published_defaults() {
        let c = default_train_config();
        assert_eq!(c.rank, 32);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.epochs, 20);
        assert!(c.use_8bit_adam);
        assert!(matches!(c.schedule, LrSchedule::CosineWithRestarts { .. }));
        let f = FusionSpec::face_and_style("f", "s");
        assert_eq!(f.entries[0].weight, 0.25);
        assert_eq!(f.entries[1].weight, 1.0);
    }

    #[test]
    fn cosine_schedule_shape() {
        let s = LrSchedule::CosineWithRestarts { cycles: 2 };
        assert_eq!(s.factor(0, 100), 1.0);
        assert!((s.factor(25, 100) - 0.5).abs() < 1e-12);
        assert_eq!(s.factor(50, 100), 1.0);
        assert_eq!(s.factor(100, 100), 0.0);
    }

    fn arb_matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.0f64..1.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    }

    proptest! {
        #[test]
        fn merge_is_linear_in_weight(a in arb_matrix(2, 6), b in arb_matrix(6, 2), w in arb_matrix(6, 6), a1 in -2.0f64..2.0, a2 in -2.0f64..2.0) {
            let base: WeightSet = BTreeMap::from([("t".to_string(), w)]);
            let ad = adapter("x", "t", a, b);
            let both = merge_adapters(&base, &FusionSpec::new([("x".to_string(), a1 + a2)]).unwrap(), &[&ad]).unwrap();
            let step = merge_adapters(&base, &FusionSpec::new([("x".to_string(), a1)]).unwrap(), &[&ad]).unwrap();
            let step = merge_adapters(&step, &FusionSpec::new([("x".to_string(), a2)]).unwrap(), &[&ad]).unwrap();
            prop_assert!((&both["t"] - &step["t"]).amax() <= 1e-12);
        }
    }
}
