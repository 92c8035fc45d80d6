mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use portrait_core::backends::{FaceDetection, FaceDetector, StubFaceDetector};
use portrait_core::fixtures::{placed_face, template_photo};
use portrait_core::geometry::{CropRect, Point};
use portrait_core::inpaint::{
    compute_alignment_affine, multi_id_inpaint, stage1_generate_face, stage2_inpaint, warp_landmarks, FaceAssignment,
    InpaintOptions,
};
use portrait_core::landmarks::LandmarkSet68;
use portrait_core::picture::{mask, Picture};
use portrait_core::Error;

use common::*;

/// Reports no face for the first `misses` landmark queries.
struct Flaky {
    misses: usize,
    calls: AtomicUsize,
}

impl FaceDetector for Flaky {
    fn detect(&self, p: &Picture) -> portrait_core::Result<FaceDetection> {
        StubFaceDetector.detect(p)
    }
    fn detect_all(&self, p: &Picture) -> portrait_core::Result<Vec<FaceDetection>> {
        StubFaceDetector.detect_all(p)
    }
    fn landmarks68(&self, p: &Picture, near: Option<&CropRect>) -> portrait_core::Result<LandmarkSet68> {
        if self.calls.fetch_add(1, Ordering::SeqCst) < self.misses {
            return Err(Error::NoFace(p.name.clone()));
        }
        StubFaceDetector.landmarks68(p, near)
    }
}

#[test]
fn stage1_retries_with_the_next_seed() {
    let t = trained("fay", true, 9);
    let m = model(&t);
    let template = template_photo("scene", 1, 1);
    let pose = backends().pose_estimator.pose(&template).unwrap();

    let mut b = backends();
    b.face_detector = Arc::new(Flaky { misses: 2, calls: AtomicUsize::new(0) });
    let out = stage1_generate_face(&pose, template.dims(), &t.identity, &m, &b, 40, 3).unwrap();
    assert_eq!((out.attempts, out.seed), (3, 42));

    b.face_detector = Arc::new(Flaky { misses: 3, calls: AtomicUsize::new(0) });
    let err = stage1_generate_face(&pose, template.dims(), &t.identity, &m, &b, 40, 3).unwrap_err();
    assert!(matches!(err, Error::Stage1Failure { attempts: 3 }));

    let plain = stage1_generate_face(&pose, template.dims(), &t.identity, &m, &backends(), 40, 3).unwrap();
    assert_eq!((plain.attempts, plain.seed), (1, 40));
}

#[test]
fn stage2_leaves_pixels_outside_the_mask_alone() {
    let t = trained("gus", false, 10);
    let m = model(&t);
    let b = backends();
    let template = template_photo("scene", 1, 2);
    let face = b.face_detector.detect(&template).unwrap();
    let region = b.human_parser.face_mask(&template, &face.bbox).unwrap();
    let pose = b.pose_estimator.pose(&template).unwrap();
    let s1 = stage1_generate_face(&pose, template.dims(), &t.identity, &m, &b, 1, 3).unwrap();
    let target = b.face_detector.landmarks68(&template, Some(&face.bbox)).unwrap();
    let fit = compute_alignment_affine(&s1.landmarks, &target).unwrap();
    let warped = warp_landmarks(&fit.map, &s1.landmarks);

    for strength in [0.0, 0.65, 1.0] {
        let out = stage2_inpaint(&template, &warped, &region, &t.identity, &m, &b, 5, strength).unwrap();
        for (x, y, p) in template.pixels.enumerate_pixels() {
            if !mask::is_set(&region, x, y) {
                assert_eq!(out.portrait.pixels.get_pixel(x, y), p);
            }
        }
        if strength == 0.0 {
            // the inpainter changes nothing, so only the fusion acts
            let fused = b.face_fusion.fuse(&t.identity.template, &template, Some(&region)).unwrap();
            assert_eq!(out.portrait.pixels, fused.pixels);
        }
    }

    assert!(stage2_inpaint(&template, &warped, &mask::empty(template.width(), template.height()), &t.identity, &m, &b, 5, 0.65).is_err());
}

fn union_of_masks(out: &portrait_core::inpaint::InpaintOutput, template: &Picture) -> portrait_core::picture::Mask {
    let b = backends();
    let (w, h) = template.dims();
    out.manifest.faces.iter().fold(mask::empty(w, h), |acc, f| {
        let m = b.human_parser.face_mask(template, &f.face_box).unwrap();
        let m = portrait_core::inpaint::expand_face_mask(&m, f.expansion_radius);
        mask::union(&acc, &mask::and_not(&m, &mask::invert(&mask::rect(w, h, &f.window))))
    })
}

#[test]
fn multi_id_compensation_restores_unmasked_pixels() {
    let a = trained("hal", false, 11);
    let c = trained("ivy", true, 12);
    let (ma, mc) = (model(&a), model(&c));
    let template = template_photo("pair", 2, 3);
    let assign = [
        FaceAssignment { face_index: 0, identity: &a.identity, model: &ma },
        FaceAssignment { face_index: 1, identity: &c.identity, model: &mc },
    ];
    let b = backends();

    let on = multi_id_inpaint(&template, &assign, &b, 9, &InpaintOptions::default()).unwrap();
    let masks = union_of_masks(&on, &template);
    let mut changed_inside = 0;
    for (x, y, p) in template.pixels.enumerate_pixels() {
        if mask::is_set(&masks, x, y) {
            changed_inside += usize::from(on.portrait.pixels.get_pixel(x, y) != p);
        } else {
            assert_eq!(on.portrait.pixels.get_pixel(x, y), p, "pixel ({x}, {y}) moved");
        }
    }
    assert!(changed_inside > 0);

    let off = multi_id_inpaint(&template, &assign, &b, 9, &InpaintOptions { compensate: false, ..Default::default() }).unwrap();
    let drifted = template
        .pixels
        .enumerate_pixels()
        .filter(|(x, y, p)| !mask::is_set(&masks, *x, *y) && off.portrait.pixels.get_pixel(*x, *y) != *p)
        .count();
    assert!(drifted > 0, "a lossy autoencoder should disturb the context without compensation");

    let reversed = [assign[1], assign[0]];
    let again = multi_id_inpaint(&template, &reversed, &b, 9, &InpaintOptions::default()).unwrap();
    assert_eq!(again.portrait.pixels, on.portrait.pixels);
    assert_eq!(again.manifest, on.manifest);
}

#[test]
fn multi_id_rejects_bad_assignments() {
    let a = trained("jo", true, 13);
    let m = model(&a);
    let template = template_photo("pair", 2, 4);
    let b = backends();
    let one = FaceAssignment { face_index: 0, identity: &a.identity, model: &m };
    assert!(multi_id_inpaint(&template, &[one, one], &b, 1, &InpaintOptions::default()).is_err());
    let missing = FaceAssignment { face_index: 5, ..one };
    assert!(multi_id_inpaint(&template, &[missing], &b, 1, &InpaintOptions::default()).is_err());

    // move the second face next to the first so their grown masks collide
    let mut crowded = template.clone();
    crowded.notes.faces[1].landmarks5 = Some(placed_face(1.0, 0.0, Point::new(190.0, 110.0)));
    let huge = InpaintOptions { expansion_radius: Some(60), ..Default::default() };
    let two = FaceAssignment { face_index: 1, ..one };
    assert!(matches!(multi_id_inpaint(&crowded, &[one, two], &b, 1, &huge), Err(Error::Overlap(_))));
    assert!(multi_id_inpaint(&template, &[one, two], &b, 1, &huge).is_ok());
}
