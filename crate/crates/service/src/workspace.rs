//! Filesystem persistence. Every stored object has a JSON sidecar; writes go
//! through a temporary file and a rename so readers never see partial files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use portrait_core::applications::StyleRegistry;
use portrait_core::face_normalization::SkipRecord;
use portrait_core::generation::{Identity, IdentityProfile, TrainedIdentity, TrainingFace};
use portrait_core::lora::{read_adapter_file, write_adapter_file};
use portrait_core::picture::{decode_mask, encode_png_mask, load_mask, render_sidecars, Mask, Picture};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ServiceError, ServiceResult};
use crate::jobs::JobStore;

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> ServiceResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> ServiceResult<()> {
    let dir = path.parent().ok_or_else(|| ServiceError::Internal(format!("{} has no parent", path.display())))?;
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.{}.tmp", path.file_name().unwrap_or_default().to_string_lossy(), uuid::Uuid::new_v4().simple()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> ServiceResult<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Identity and style ids: lowercase ascii, digits, `-` and `_`, 1 to 64 chars.
pub fn validate_slug(what: &str, id: &str) -> ServiceResult<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.starts_with(|c: char| c.is_ascii_lowercase() || c.is_ascii_digit())
        && id.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(ServiceError::BadRequest(format!("{what} id `{id}` must match [a-z0-9][a-z0-9_-]{{0,63}}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetKind {
    Image,
    Mask,
    Audio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetMeta {
    pub id: String,
    pub kind: AssetKind,
    /// Name the asset was uploaded or produced under.
    pub name: String,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    pub sha256: String,
}

/// Everything persisted about a trained identity besides its adapter and template image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub profile: IdentityProfile,
    pub faces: Vec<TrainingFace>,
    pub skipped: Vec<SkipRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub job: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

const ADAPTER_FILE: &str = "adapter.ptrlora";
const RECORD_FILE: &str = "identity.json";
const TEMPLATE_NAME: &str = "template";

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

impl Workspace {
    /// Open `root`, creating the subtrees when missing.
    pub fn open(root: impl Into<PathBuf>) -> ServiceResult<Self> {
        let ws = Self { root: root.into() };
        for d in [ws.identities_dir(), ws.styles_dir(), ws.jobs_dir(), ws.assets_dir()] {
            std::fs::create_dir_all(d)?;
        }
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
    pub fn identities_dir(&self) -> PathBuf {
        self.root.join("identities")
    }
    pub fn styles_dir(&self) -> PathBuf {
        self.root.join("styles")
    }
    pub fn jobs_dir(&self) -> PathBuf {
        self.root.join("jobs")
    }
    pub fn assets_dir(&self) -> PathBuf {
        self.root.join("assets")
    }

    pub fn jobs(&self) -> JobStore {
        JobStore::new(self.jobs_dir())
    }

    pub fn styles(&self) -> ServiceResult<StyleRegistry> {
        Ok(StyleRegistry::load(&self.styles_dir())?)
    }

    // ---- assets

    fn asset_meta_path(&self, id: &str) -> PathBuf {
        self.assets_dir().join(format!("{id}.json"))
    }

    fn put_asset(&self, meta: AssetMeta, write: impl FnOnce(&Path) -> ServiceResult<()>) -> ServiceResult<AssetMeta> {
        let meta_path = self.asset_meta_path(&meta.id);
        if meta_path.is_file() {
            // content-addressed: the same bytes are already stored
            return self.asset(&meta.id);
        }
        write(&self.assets_dir())?;
        write_json(&meta_path, &meta)?;
        Ok(meta)
    }

    /// Store an image with its annotation sidecars. The id covers pixels and annotations.
    pub fn put_image(&self, picture: &Picture) -> ServiceResult<AssetMeta> {
        let png = picture.encode_png()?;
        let sidecars = render_sidecars(&picture.notes)?;
        let mut parts: Vec<&[u8]> = vec![b"image", &png];
        for (k, v) in &sidecars {
            parts.push(k.as_bytes());
            parts.push(v.as_bytes());
        }
        let sha = sha256_hex(&parts);
        let id = format!("img-{}", &sha[..20]);
        let meta = AssetMeta {
            id: id.clone(),
            kind: AssetKind::Image,
            name: picture.name.clone(),
            file: format!("{id}.png"),
            width: Some(picture.width()),
            height: Some(picture.height()),
            sha256: sha,
        };
        self.put_asset(meta, |dir| {
            write_atomic(&dir.join(format!("{id}.png")), &png)?;
            for (suffix, text) in &sidecars {
                write_atomic(&dir.join(format!("{id}{suffix}")), text.as_bytes())?;
            }
            Ok(())
        })
    }

    pub fn put_mask(&self, name: &str, mask: &Mask) -> ServiceResult<AssetMeta> {
        let png = encode_png_mask(mask)?;
        let sha = sha256_hex(&[b"mask", &png]);
        let id = format!("mask-{}", &sha[..20]);
        let meta = AssetMeta {
            id: id.clone(),
            kind: AssetKind::Mask,
            name: name.to_string(),
            file: format!("{id}.png"),
            width: Some(mask.width()),
            height: Some(mask.height()),
            sha256: sha,
        };
        self.put_asset(meta, |dir| write_atomic(&dir.join(format!("{id}.png")), &png))
    }

    pub fn put_mask_bytes(&self, name: &str, bytes: &[u8]) -> ServiceResult<AssetMeta> {
        self.put_mask(name, &decode_mask(bytes)?)
    }

    /// Store WAV bytes; they must decode as mono 16-bit PCM.
    pub fn put_audio(&self, name: &str, bytes: &[u8]) -> ServiceResult<AssetMeta> {
        portrait_core::backends::Waveform::from_wav_bytes(bytes)?;
        let sha = sha256_hex(&[b"audio", bytes]);
        let id = format!("wav-{}", &sha[..20]);
        let meta =
            AssetMeta { id: id.clone(), kind: AssetKind::Audio, name: name.to_string(), file: format!("{id}.wav"), width: None, height: None, sha256: sha };
        self.put_asset(meta, |dir| write_atomic(&dir.join(format!("{id}.wav")), bytes))
    }

    pub fn asset(&self, id: &str) -> ServiceResult<AssetMeta> {
        let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        let path = self.asset_meta_path(id);
        if !ok || !path.is_file() {
            return Err(ServiceError::NotFound(format!("unknown asset `{id}`")));
        }
        read_json(&path)
    }

    fn expect_kind(&self, id: &str, kind: AssetKind) -> ServiceResult<AssetMeta> {
        let meta = self.asset(id)?;
        if meta.kind != kind {
            return Err(ServiceError::BadRequest(format!("asset `{id}` is {:?}, expected {:?}", meta.kind, kind)));
        }
        Ok(meta)
    }

    pub fn asset_path(&self, meta: &AssetMeta) -> PathBuf {
        self.assets_dir().join(&meta.file)
    }

    pub fn load_image(&self, id: &str) -> ServiceResult<Picture> {
        let meta = self.expect_kind(id, AssetKind::Image)?;
        let mut p = Picture::load(&self.asset_path(&meta))?;
        p.name = meta.name;
        Ok(p)
    }

    pub fn load_mask(&self, id: &str) -> ServiceResult<Mask> {
        let meta = self.expect_kind(id, AssetKind::Mask)?;
        Ok(load_mask(&self.asset_path(&meta))?)
    }

    pub fn load_audio(&self, id: &str) -> ServiceResult<Vec<u8>> {
        let meta = self.expect_kind(id, AssetKind::Audio)?;
        Ok(std::fs::read(self.asset_path(&meta))?)
    }

    // ---- identities

    fn identity_dir(&self, id: &str) -> PathBuf {
        self.identities_dir().join(id)
    }

    pub fn has_identity(&self, id: &str) -> bool {
        validate_slug("identity", id).is_ok() && self.identity_dir(id).join(RECORD_FILE).is_file()
    }

    /// Persist a freshly trained identity. Fails with a conflict when the id is taken.
    pub fn save_identity(&self, trained: &TrainedIdentity, job: Option<&str>) -> ServiceResult<IdentityRecord> {
        let id = &trained.identity.profile.id;
        validate_slug("identity", id)?;
        let staging = self.identities_dir().join(format!(".{id}.{}", uuid::Uuid::new_v4().simple()));
        std::fs::create_dir_all(&staging)?;
        let record = IdentityRecord {
            profile: trained.identity.profile.clone(),
            faces: trained.faces.clone(),
            skipped: trained.skipped.clone(),
            initial_loss: trained.initial_loss,
            final_loss: trained.final_loss,
            job: job.map(str::to_string),
        };
        let staged = (|| -> ServiceResult<()> {
            write_adapter_file(&staging.join(ADAPTER_FILE), &trained.identity.adapter)?;
            Picture { name: TEMPLATE_NAME.into(), ..trained.identity.template.clone() }.save_with_sidecars(&staging)?;
            write_json(&staging.join(RECORD_FILE), &record)
        })();
        let moved = staged.and_then(|()| {
            if self.identity_dir(id).exists() {
                return Err(ServiceError::Core(portrait_core::Error::Conflict(format!("identity `{id}` already exists"))));
            }
            std::fs::rename(&staging, self.identity_dir(id)).map_err(ServiceError::from)
        });
        if moved.is_err() {
            let _ = std::fs::remove_dir_all(&staging);
        }
        moved.map(|()| record)
    }

    pub fn identity_record(&self, id: &str) -> ServiceResult<IdentityRecord> {
        if !self.has_identity(id) {
            return Err(ServiceError::NotFound(format!("unknown identity `{id}`")));
        }
        read_json(&self.identity_dir(id).join(RECORD_FILE))
    }

    pub fn load_identity(&self, id: &str) -> ServiceResult<Identity> {
        let record = self.identity_record(id)?;
        let dir = self.identity_dir(id);
        let adapter = read_adapter_file(&dir.join(ADAPTER_FILE))?;
        let template = Picture::load(&dir.join(format!("{TEMPLATE_NAME}.png")))?;
        Ok(Identity { profile: record.profile, adapter, template })
    }

    pub fn list_identities(&self) -> ServiceResult<Vec<IdentityProfile>> {
        let mut ids: Vec<String> = std::fs::read_dir(self.identities_dir())?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| self.has_identity(n))
            .collect();
        ids.sort();
        ids.iter().map(|id| self.identity_record(id).map(|r| r.profile)).collect()
    }
}

/// Group uploaded files into pictures by stem: `a.png` with `a.lm5.txt`,
/// `a.tags.txt` and so on. Files that are neither images nor known sidecars
/// are rejected.
pub fn assemble_pictures(files: Vec<(String, Vec<u8>)>) -> ServiceResult<Vec<Picture>> {
    use portrait_core::picture::SIDECAR_SUFFIXES;
    let mut images: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut sidecars: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (name, bytes) in files {
        let base = Path::new(&name).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(suffix) = SIDECAR_SUFFIXES.iter().find(|s| base.ends_with(*s) && base.len() > s.len()) {
            let stem = base[..base.len() - suffix.len()].to_string();
            let text = String::from_utf8(bytes).map_err(|_| ServiceError::BadRequest(format!("{base} is not UTF-8")))?;
            sidecars.entry(stem).or_default().insert(suffix.to_string(), text);
        } else if let Some((stem, ext)) = base.rsplit_once('.') {
            if !matches!(ext.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg") {
                return Err(ServiceError::BadRequest(format!("unsupported upload `{base}`")));
            }
            if images.insert(stem.to_string(), bytes).is_some() {
                return Err(ServiceError::BadRequest(format!("image `{stem}` uploaded twice")));
            }
        } else {
            return Err(ServiceError::BadRequest(format!("upload `{base}` has no extension")));
        }
    }
    if let Some(orphan) = sidecars.keys().find(|k| !images.contains_key(*k)) {
        return Err(ServiceError::BadRequest(format!("sidecar for `{orphan}` has no image")));
    }
    images
        .into_iter()
        .map(|(stem, bytes)| {
            let notes = sidecars.remove(&stem).unwrap_or_default();
            Picture::decode(stem.clone(), &bytes, &notes).map_err(|e| ServiceError::BadRequest(format!("{stem}: {e}")))
        })
        .collect()
}

/// Every image (with sidecars) directly inside `dir`, sorted by name.
pub fn read_picture_dir(dir: &Path) -> ServiceResult<Vec<Picture>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            if name.starts_with('.') {
                continue;
            }
            files.push((name, std::fs::read(&path)?));
        }
    }
    assemble_pictures(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use portrait_core::fixtures::{identity_uploads, Persona};

    #[test]
    fn slugs() {
        for ok in ["a", "alice", "a-1_b", "9z"] {
            assert!(validate_slug("x", ok).is_ok(), "{ok}");
        }
        for bad in ["", "-a", "A", "a/b", "..", "a b", &"x".repeat(65)] {
            assert!(validate_slug("x", bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn image_assets_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        let p = identity_uploads("a", Persona { female: true, age: 30.0 }, 1, 1).remove(0);
        let m1 = ws.put_image(&p).unwrap();
        let m2 = ws.put_image(&p).unwrap();
        assert_eq!(m1, m2);
        let back = ws.load_image(&m1.id).unwrap();
        assert_eq!(back.pixels, p.pixels);
        assert_eq!(back.notes.tags, p.notes.tags);

        let mut stripped = p.clone();
        stripped.notes = Default::default();
        assert_ne!(ws.put_image(&stripped).unwrap().id, m1.id);
        assert!(matches!(ws.load_mask(&m1.id), Err(ServiceError::BadRequest(_))));
        assert!(matches!(ws.asset("img-nope"), Err(ServiceError::NotFound(_))));
        assert!(matches!(ws.asset("../x"), Err(ServiceError::NotFound(_))));
    }

    #[test]
    fn metadata_rewrite_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        let p = identity_uploads("a", Persona { female: false, age: 30.0 }, 1, 2).remove(0);
        let meta = ws.put_image(&p).unwrap();
        let path = ws.asset_meta_path(&meta.id);
        let first = std::fs::read(&path).unwrap();
        write_json(&path, &read_json::<AssetMeta>(&path).unwrap()).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn grouping_uploads() {
        let p = identity_uploads("a", Persona { female: true, age: 30.0 }, 1, 3).remove(0);
        let mut files = vec![("a-0.png".to_string(), p.encode_png().unwrap())];
        for (suffix, text) in render_sidecars(&p.notes).unwrap() {
            files.push((format!("a-0{suffix}"), text.into_bytes()));
        }
        let pics = assemble_pictures(files.clone()).unwrap();
        assert_eq!(pics.len(), 1);
        assert_eq!(pics[0].notes, p.notes);

        files.push(("b.tags.txt".into(), b"x".to_vec()));
        assert!(assemble_pictures(files).is_err());
        assert!(assemble_pictures(vec![("notes.pdf".into(), vec![1])]).is_err());
    }
}
