//! Identity training, fused-adapter generation and identity-preserving
//! post-processing (template selection, face fusion, similarity ranking).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use crate::applications::StyleSpec;
use crate::backends::{BackendRole, Backends, Embedding, GenerationCall};
use crate::error::{Error, Result};
use crate::face_normalization::{run_preprocess_chain, FaceRecord, PreprocessConfig, SkipRecord};
use crate::labeling::{assemble_caption, prune_identity_tags, select_trigger_word, TagSet, TriggerWord};
use crate::lora::{
    merge_adapters, toy_lora_train, weights_digest, AdapterKind, AdapterMetadata, FusionSpec, LoraAdapter, ToyTask, TrainConfig,
    WeightSet, FACE_LORA_WEIGHT, STYLE_LORA_WEIGHT,
};
use crate::picture::Picture;

/// Samples regressed on by the reference identity trainer.
const TOY_SAMPLES: usize = 16;
/// Magnitude of the identity-specific rank-1 target perturbation.
const TOY_PERTURBATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityProfile {
    pub id: String,
    pub adapter_ref: String,
    pub trigger: TriggerWord,
    pub template_face: FaceRecord,
    pub template_embedding: Embedding,
    pub face_count: usize,
}

/// A profile together with the artifacts generation needs.
#[derive(Debug, Clone)]
pub struct Identity {
    pub profile: IdentityProfile,
    pub adapter: LoraAdapter,
    pub template: Picture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingFace {
    pub source: String,
    pub record: FaceRecord,
    pub caption: String,
    pub quality: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedIdentity {
    pub identity: Identity,
    pub faces: Vec<TrainingFace>,
    /// Normalized crops, parallel to `faces`.
    pub crops: Vec<Picture>,
    pub skipped: Vec<SkipRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct IdentityTrainConfig {
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub denylist: TagSet,
}

impl Default for IdentityTrainConfig {
    fn default() -> Self {
        Self { preprocess: PreprocessConfig::default(), train: TrainConfig::default(), denylist: TagSet::default_denylist() }
    }
}

/// Index of the highest score; ties go to the lowest index.
pub fn select_template_face(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no candidate faces".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("quality scores must be finite".into()));
    }
    Ok(scores.iter().enumerate().fold(0, |best, (i, s)| if *s > scores[best] { i } else { best }))
}

/// Cosine similarity of each candidate to `template`, returned as
/// `(input index, similarity)` sorted by descending similarity. The sort is
/// stable, so ties keep input order.
pub fn rank_by_similarity(candidates: &[Embedding], template: &Embedding) -> Result<Vec<(usize, f64)>> {
    let mut scored = candidates.iter().enumerate().map(|(i, c)| Ok((i, c.dot(template)?.clamp(-1.0, 1.0)))).collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored)
}

fn resample(v: &[f64], n: usize) -> DVector<f64> {
    let out = DVector::from_fn(n, |i, _| v[i % v.len()]);
    let norm = out.norm();
    if norm > 0.0 {
        out / norm
    } else {
        out
    }
}

/// The regression task the reference trainer fits for an identity: the first
/// base tensor plus a rank-1 perturbation built from the face embeddings.
fn identity_task(base: &WeightSet, template: &Embedding, mean: &[f64], seed: u64) -> Result<ToyTask> {
    let (name, w) = base.iter().next().ok_or_else(|| Error::InvalidConfig("base model has no tensors".into()))?;
    let (d_out, d_in) = w.shape();
    let u = resample(template.as_slice(), d_out);
    let v = resample(mean, d_in);
    let target_map = w + (&u * v.transpose()) * TOY_PERTURBATION;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = DMatrix::from_fn(d_in, TOY_SAMPLES, |_, _| rng.gen_range(-1.0..1.0));
    Ok(ToyTask { tensor: name.clone(), targets: &target_map * &inputs, base: w.clone(), inputs })
}

/// Preprocess, label, train the identity adapter, and pick the template face.
pub fn train_identity(
    id: &str,
    uploads: &[Picture],
    backends: &Backends,
    base: &WeightSet,
    config: &IdentityTrainConfig,
    created_unix: u64,
) -> Result<TrainedIdentity> {
    let pre = run_preprocess_chain(uploads, backends, &config.preprocess)?;

    let mut attributes = Vec::with_capacity(pre.faces.len());
    let mut tag_sets = Vec::with_capacity(pre.faces.len());
    let mut qualities = Vec::with_capacity(pre.faces.len());
    let mut embeddings = Vec::with_capacity(pre.faces.len());
    for face in &pre.faces {
        tag_sets.push(prune_identity_tags(&backends.tagger.tags(&face.picture)?, &config.denylist));
        attributes.push(backends.attribute_predictor.predict(&face.picture)?);
        qualities.push(backends.quality_assessor.score(&face.picture, &face.head_mask)?);
        embeddings.push(backends.face_embedder.embed(&face.picture)?);
    }
    let trigger = select_trigger_word(&attributes)?;
    let chosen = select_template_face(&qualities)?;
    let template_embedding = embeddings[chosen].clone();

    let dim = template_embedding.dim();
    let mut mean = vec![0.0; dim];
    for e in &embeddings {
        for (m, v) in mean.iter_mut().zip(e.as_slice()) {
            *m += v;
        }
    }
    let mut h = Sha256::new();
    h.update(id.as_bytes());
    for f in &pre.faces {
        h.update(f.record.image_ref.as_bytes());
    }
    let seed = u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"));
    let task = identity_task(base, &template_embedding, &mean, seed)?;
    let metadata = AdapterMetadata { kind: AdapterKind::Face, trigger_word: Some(trigger.text().to_string()), created_unix };
    let outcome = toy_lora_train(&format!("face-{id}"), &task, &config.train, metadata, seed)?;
    debug!(id, initial = outcome.initial_loss(), last = outcome.final_loss(), "identity adapter trained");

    let faces: Vec<TrainingFace> = pre
        .faces
        .iter()
        .zip(&tag_sets)
        .zip(&qualities)
        .map(|((f, tags), q)| TrainingFace {
            source: uploads[f.source_index].name.clone(),
            record: f.record.clone(),
            caption: assemble_caption(trigger, tags),
            quality: *q,
        })
        .collect();
    let profile = IdentityProfile {
        id: id.to_string(),
        adapter_ref: outcome.adapter.id.clone(),
        trigger,
        template_face: pre.faces[chosen].record.clone(),
        template_embedding,
        face_count: faces.len(),
    };
    Ok(TrainedIdentity {
        identity: Identity { profile, adapter: outcome.adapter.clone(), template: pre.faces[chosen].picture.clone() },
        crops: pre.faces.iter().map(|f| f.picture.clone()).collect(),
        faces,
        skipped: pre.skipped,
        initial_loss: outcome.initial_loss(),
        final_loss: outcome.final_loss(),
    })
}

fn default_count() -> u32 {
    1
}
fn default_face_weight() -> f64 {
    FACE_LORA_WEIGHT
}
fn default_style_weight() -> f64 {
    STYLE_LORA_WEIGHT
}
fn default_size() -> u32 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub identity: String,
    pub style: String,
    #[serde(default)]
    pub prompt_extra: String,
    #[serde(default = "default_count")]
    pub count: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_face_weight")]
    pub face_weight: f64,
    #[serde(default = "default_style_weight")]
    pub style_weight: f64,
    /// Keep only the best `top_k` results; all by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default = "default_size")]
    pub width: u32,
    #[serde(default = "default_size")]
    pub height: u32,
}

impl GenerationRequest {
    pub fn new(identity: impl Into<String>, style: impl Into<String>) -> Self {
        Self {
            identity: identity.into(),
            style: style.into(),
            prompt_extra: String::new(),
            count: 1,
            seed: 0,
            face_weight: FACE_LORA_WEIGHT,
            style_weight: STYLE_LORA_WEIGHT,
            top_k: None,
            width: default_size(),
            height: default_size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.count > 64 {
            return Err(Error::InvalidInput(format!("count {} outside 1..=64", self.count)));
        }
        if !(self.face_weight.is_finite() && self.style_weight.is_finite()) {
            return Err(Error::InvalidInput("fusion weights must be finite".into()));
        }
        if self.top_k == Some(0) {
            return Err(Error::InvalidInput("top_k must be at least 1".into()));
        }
        if !(16..=2048).contains(&self.width) || !(16..=2048).contains(&self.height) {
            return Err(Error::InvalidInput(format!("size {}x{} outside 16..=2048", self.width, self.height)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub image_id: String,
    pub seed: u64,
    pub similarity: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub index: u32,
    pub seed: u64,
    pub cause: String,
}

/// Deterministic record of one generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub request: GenerationRequest,
    pub prompt: String,
    pub negative_prompt: String,
    pub face_weight: f64,
    pub style_weight: f64,
    pub weights_digest: String,
    pub backends: BTreeMap<BackendRole, String>,
    pub results: Vec<RankedResult>,
    pub failures: Vec<SampleFailure>,
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub manifest: GenerationManifest,
    /// Images in rank order, each named by its id.
    pub images: Vec<Picture>,
}

/// Trigger word, then the style's additions, then the user's extra words.
pub fn assemble_prompt(trigger: TriggerWord, style_additions: &str, extra: &str) -> String {
    [trigger.text(), style_additions.trim(), extra.trim()].into_iter().filter(|s| !s.is_empty()).collect::<Vec<_>>().join(", ")
}

/// Merged-weight digest and prompts for one identity (optionally with a style).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedModel {
    pub weights_digest: String,
    pub prompt: String,
    pub negative_prompt: String,
    pub face_weight: f64,
    pub style_weight: f64,
}

/// Merge the identity adapter (and style adapter, when given) into a private
/// copy of `base`. `base` itself is never modified.
pub fn prepare_model(
    identity: &Identity,
    style: Option<(&StyleSpec, &LoraAdapter)>,
    base: &WeightSet,
    face_weight: f64,
    style_weight: f64,
    prompt_extra: &str,
) -> Result<PreparedModel> {
    let mut entries = vec![(identity.adapter.id.clone(), face_weight)];
    let mut adapters = vec![&identity.adapter];
    if let Some((_, a)) = style {
        entries.push((a.id.clone(), style_weight));
        adapters.push(a);
    }
    let merged = merge_adapters(base, &FusionSpec::new(entries)?, &adapters)?;
    let (additions, negative) = style.map_or(("", ""), |(s, _)| (s.prompt_additions.as_str(), s.negative_prompt.as_str()));
    Ok(PreparedModel {
        weights_digest: weights_digest(&merged),
        prompt: assemble_prompt(identity.profile.trigger, additions, prompt_extra),
        negative_prompt: negative.to_string(),
        face_weight,
        style_weight,
    })
}

/// Generate `count` samples with seeds `seed..seed+count` from the fused
/// model, fuse the template face into each, and rank them by similarity to
/// the template.
pub fn generate_portraits(
    request: &GenerationRequest,
    identity: &Identity,
    style: &StyleSpec,
    style_adapter: &LoraAdapter,
    base: &WeightSet,
    backends: &Backends,
) -> Result<GenerationOutput> {
    request.validate()?;
    let model = prepare_model(identity, Some((style, style_adapter)), base, request.face_weight, request.style_weight, &request.prompt_extra)?;

    let mut samples = Vec::new();
    let mut failures = Vec::new();
    let mut last_error = None;
    for i in 0..request.count {
        let seed = request.seed.wrapping_add(i as u64);
        let call = GenerationCall {
            name: format!("sample-{i}"),
            prompt: model.prompt.clone(),
            negative_prompt: model.negative_prompt.clone(),
            seed,
            width: request.width,
            height: request.height,
            weights_digest: model.weights_digest.clone(),
            controls: None,
        };
        let produced = backends
            .text_to_image
            .generate(&call)
            .and_then(|img| backends.face_fusion.fuse(&identity.template, &img, None))
            .and_then(|img| Ok((backends.face_embedder.embed(&img)?, img)));
        match produced {
            Ok((embedding, img)) => samples.push((seed, embedding, img)),
            Err(e) => {
                warn!(sample = i, seed, cause = %e, "sample failed");
                failures.push(SampleFailure { index: i, seed, cause: e.to_string() });
                last_error = Some(e);
            }
        }
    }
    if samples.is_empty() {
        return Err(last_error.expect("count >= 1"));
    }

    let embeddings: Vec<Embedding> = samples.iter().map(|s| s.1.clone()).collect();
    let mut ranked = rank_by_similarity(&embeddings, &identity.profile.template_embedding)?;
    if let Some(k) = request.top_k {
        ranked.truncate(k);
    }
    let mut results = Vec::with_capacity(ranked.len());
    let mut images = Vec::with_capacity(ranked.len());
    for (rank, (i, similarity)) in ranked.into_iter().enumerate() {
        let (seed, _, img) = &samples[i];
        let image_id = img.content_id();
        results.push(RankedResult { image_id: image_id.clone(), seed: *seed, similarity, rank });
        images.push(Picture { name: image_id, ..img.clone() });
    }
    Ok(GenerationOutput {
        manifest: GenerationManifest {
            request: request.clone(),
            prompt: model.prompt,
            negative_prompt: model.negative_prompt,
            face_weight: request.face_weight,
            style_weight: request.style_weight,
            weights_digest: model.weights_digest,
            backends: backends.ids.clone(),
            results,
            failures,
        },
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::unit(v.to_vec()).unwrap()
    }

    #[test]
    fn template_selection() {
        assert_eq!(select_template_face(&[0.2, 0.9, 0.5]).unwrap(), 1);
        assert_eq!(select_template_face(&[0.7, 0.7]).unwrap(), 0);
        assert_eq!(select_template_face(&[0.3]).unwrap(), 0);
        assert!(select_template_face(&[]).is_err());
    }

    #[test]
    fn template_tie_break_is_lowest_index_for_every_permutation() {
        let scores = [0.1, 0.9, 0.9, 0.4];
        for perm in 0..256u32 {
            let idx: Vec<usize> = (0..4).map(|k| ((perm >> (2 * k)) & 3) as usize).collect();
            if (0..4).any(|i| !idx.contains(&i)) {
                continue;
            }
            let permuted: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let first_max = permuted.iter().position(|&s| s == 0.9).unwrap();
            assert_eq!(select_template_face(&permuted).unwrap(), first_max);
        }
    }

    #[test]
    fn ranking_examples() {
        let t = e(&[1.0, 0.0]);
        let r = rank_by_similarity(&[e(&[1.0, 0.0]), e(&[0.0, 1.0])], &t).unwrap();
        assert_eq!(r, vec![(0, 1.0), (1, 0.0)]);
        let r = rank_by_similarity(&[e(&[1.0, 1.0])], &t).unwrap();
        assert!((r[0].1 - 0.70711).abs() < 1e-5);
        assert!(rank_by_similarity(&[e(&[1.0, 0.0, 0.0])], &t).is_err());
    }

    #[test]
    fn ranking_is_stable_among_ties() {
        let t = e(&[1.0, 0.0]);
        let c = [e(&[0.0, 1.0]), e(&[1.0, 1.0]), e(&[1.0, 0.0]), e(&[1.0, 1.0])];
        let r = rank_by_similarity(&c, &t).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 1, 3, 0]);
    }

    #[test]
    fn prompt_starts_with_trigger() {
        let p = assemble_prompt(TriggerWord::MatureWoman, "oil painting", " ");
        assert_eq!(p, "a mature woman, oil painting");
    }

    #[test]
    fn request_defaults_follow_fusion_constants() {
        let r: GenerationRequest = serde_json::from_str(r#"{"identity":"a","style":"b"}"#).unwrap();
        assert_eq!((r.face_weight, r.style_weight, r.count), (0.25, 1.0, 1));
        assert!(GenerationRequest { count: 0, ..r }.validate().is_err());
    }
}
