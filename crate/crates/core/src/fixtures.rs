//! Deterministic synthetic corpus: annotated face photos, templates, a garment
//! mask, style descriptors and an audio clip. Used by the tests and by the
//! `fixtures` CLI command.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::applications::{StyleSource, StyleSpec};
use crate::backends::{StubTts, Tts};
use crate::error::Result;
use crate::face_normalization::{rotate_image, QuarterTurn, Rotation};
use crate::geometry::{centroid, CropRect, Point};
use crate::labeling::{default_age_bins, AttributePrediction};
use crate::landmarks::{FaceTemplate5, LandmarkSet5};
use crate::picture::{encode_png_mask, mask, FaceAnnotation, Mask, Picture};

/// Who the synthetic uploads show.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Persona {
    pub female: bool,
    pub age: f64,
}

impl Persona {
    fn attributes(&self, rng: &mut ChaCha8Rng) -> AttributePrediction {
        let g = rng.gen_range(0.8..0.95);
        let gender_probs = if self.female { [1.0 - g, g] } else { [g, 1.0 - g] };
        let bins = default_age_bins();
        let hit = bins.iter().position(|b| self.age >= b.lo && self.age < b.hi).unwrap_or(bins.len() - 1);
        let age_probs = (0..bins.len()).map(|i| if i == hit { 1.0 } else { 0.0 }).collect();
        AttributePrediction { gender_probs, age_probs, age_bins: bins }
    }
}

/// The template face under a similarity transform: scale `s`, rotation `phi`
/// (radians), landmark centroid at `center`.
pub fn placed_face(s: f64, phi: f64, center: Point) -> LandmarkSet5 {
    let t = FaceTemplate5::STANDARD.as_landmarks();
    let c = centroid(t.points());
    t.map(|p| {
        let (dx, dy) = ((p.x - c.x) * s, (p.y - c.y) * s);
        Point::new(center.x + dx * phi.cos() - dy * phi.sin(), center.y + dx * phi.sin() + dy * phi.cos())
    })
}

fn background(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    let a: [f64; 3] = [rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0)];
    let b: [f64; 3] = [rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0)];
    RgbImage::from_fn(w, h, |x, y| {
        let t = (x + y) as f64 / (w + h) as f64;
        Rgb(std::array::from_fn(|k| (a[k] * (1.0 - t) + b[k] * t) as u8))
    })
}

fn disc(img: &mut RgbImage, c: Point, r: f64, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    let (x0, x1) = ((c.x - r).floor().max(0.0) as u32, ((c.x + r).ceil() as u32).min(w.saturating_sub(1)));
    let (y0, y1) = ((c.y - r).floor().max(0.0) as u32, ((c.y + r).ceil() as u32).min(h.saturating_sub(1)));
    for y in y0..=y1 {
        for x in x0..=x1 {
            if Point::new(x as f64, y as f64).distance(&c) <= r {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Paint a face and record its landmarks.
fn draw_face(p: &mut Picture, l: LandmarkSet5, skin: Rgb<u8>) {
    let pts = l.points();
    let c = centroid(pts);
    let span = pts.iter().map(|q| q.distance(&c)).fold(0.0, f64::max);
    disc(&mut p.pixels, c, span * 1.5, skin);
    let feature = Rgb([skin[0] / 3, skin[1] / 3, skin[2] / 3]);
    for q in pts {
        disc(&mut p.pixels, *q, (span * 0.12).max(1.0), feature);
    }
    p.notes.faces.push(FaceAnnotation { landmarks5: Some(l), landmarks68: None });
}

fn skin(rng: &mut ChaCha8Rng) -> Rgb<u8> {
    Rgb([rng.gen_range(170..240), rng.gen_range(120..190), rng.gen_range(90..160)])
}

fn body(center: Point, s: f64) -> Vec<Point> {
    let d = 40.0 * s;
    vec![
        Point::new(center.x, center.y + 0.9 * d),
        Point::new(center.x - d, center.y + 1.3 * d),
        Point::new(center.x + d, center.y + 1.3 * d),
        Point::new(center.x - 0.6 * d, center.y + 3.0 * d),
        Point::new(center.x + 0.6 * d, center.y + 3.0 * d),
    ]
}

const TAG_POOL: [&str; 8] = ["smile", "earrings", "short hair", "necklace", "looking at viewer", "outdoors", "glasses", "hat"];
const IDENTITY_TAGS: [&str; 4] = ["brown eyes", "lips", "ears", "nose"];

/// `n` upload photos of one persona at varied position, scale, in-plane angle
/// and quarter-turn orientation.
pub fn identity_uploads(name: &str, persona: Persona, n: usize, seed: u64) -> Vec<Picture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tone = skin(&mut rng);
    (0..n)
        .map(|i| {
            let (w, h) = (rng.gen_range(280..360), rng.gen_range(280..360));
            let mut p = Picture::new(format!("{name}-{i}"), background(&mut rng, w, h));
            let s = rng.gen_range(0.9..1.4);
            let phi = rng.gen_range(-0.3..0.3);
            let c = Point::new(w as f64 / 2.0 + rng.gen_range(-30.0..30.0), h as f64 / 2.0 + rng.gen_range(-30.0..30.0));
            draw_face(&mut p, placed_face(s, phi, c), tone);
            let mut tags: Vec<String> = IDENTITY_TAGS.iter().map(|t| t.to_string()).collect();
            for t in TAG_POOL {
                if rng.gen_bool(0.4) {
                    tags.push(t.to_string());
                }
            }
            p.notes.tags = Some(tags);
            p.notes.attributes = Some(persona.attributes(&mut rng));
            let turn = [QuarterTurn::Deg0, QuarterTurn::Deg90, QuarterTurn::Deg0, QuarterTurn::Deg270][i % 4];
            rotate_image(&p, Rotation::Quarter(turn), Rgb([0, 0, 0]))
        })
        .collect()
}

/// A photo with no face.
pub fn faceless(name: &str, seed: u64) -> Picture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Picture::new(name, background(&mut rng, 240, 200))
}

/// A scene with `faces` people side by side, with bone pose and hands.
pub fn template_photo(name: &str, faces: usize, seed: u64) -> Picture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = 240u32;
    let (w, h) = (spacing * faces.max(1) as u32, 360);
    let mut p = Picture::new(name, background(&mut rng, w, h));
    let mut bones = Vec::new();
    for k in 0..faces {
        let c = Point::new(spacing as f64 * (k as f64 + 0.5), 110.0);
        draw_face(&mut p, placed_face(1.0, 0.0, c), skin(&mut rng));
        bones.extend(body(c, 1.0));
        p.notes.hands.push(CropRect::new(c.x as i64 - 70, 250, c.x as i64 - 40, 280).expect("non-empty"));
    }
    p.notes.pose = Some(bones);
    p
}

/// A single-person try-on template and its garment (torso) mask.
pub fn garment_template(name: &str, seed: u64) -> (Picture, Mask) {
    let p = template_photo(name, 1, seed);
    let torso = CropRect::new(70, 160, 170, 300).expect("non-empty");
    let m = mask::rect(p.width(), p.height(), &torso);
    (p, m)
}

pub fn sample_styles() -> Vec<StyleSpec> {
    [("film-noir", "Film noir", "black and white, dramatic shadows"), ("pastel", "Pastel", "soft pastel colors"), ("watercolor", "Watercolor", "watercolor painting")]
        .into_iter()
        .map(|(id, name, prompt)| StyleSpec {
            id: id.into(),
            name: name.into(),
            adapter_ref: format!("synthetic:{id}"),
            prompt_additions: prompt.into(),
            negative_prompt: "lowres".into(),
            recommended_weight: 1.0,
            source: StyleSource::Contributed,
        })
        .collect()
}

/// Write the whole corpus under `dir`:
/// `uploads/` (four photos of one person plus a faceless one), `empty/`,
/// `templates/` (one- and two-person scenes), `garment.png` (with its
/// template), `styles/` (three descriptors and one malformed file) and
/// `speech.wav`.
pub fn write_corpus(dir: &Path) -> Result<()> {
    let uploads = dir.join("uploads");
    for p in identity_uploads("alice", Persona { female: true, age: 28.0 }, 4, 11) {
        p.save_with_sidecars(&uploads)?;
    }
    faceless("scenery", 12).save_with_sidecars(&uploads)?;
    std::fs::create_dir_all(dir.join("empty"))?;
    faceless("wall", 13).save_with_sidecars(&dir.join("empty"))?;

    let templates = dir.join("templates");
    template_photo("single", 1, 21).save_with_sidecars(&templates)?;
    template_photo("pair", 2, 22).save_with_sidecars(&templates)?;
    let (tryon, garment) = garment_template("tryon", 23);
    tryon.save_with_sidecars(&templates)?;
    std::fs::write(dir.join("garment.png"), encode_png_mask(&garment)?)?;

    let styles = dir.join("styles");
    std::fs::create_dir_all(&styles)?;
    for s in sample_styles() {
        std::fs::write(styles.join(format!("{}.json", s.id)), serde_json::to_vec_pretty(&s)?)?;
    }
    std::fs::write(styles.join("broken.json"), b"{\"id\": \"broken\", ")?;

    std::fs::write(dir.join("speech.wav"), StubTts.synthesize("hello", "narrator")?.to_wav_bytes()?)?;
    Ok(())
}
