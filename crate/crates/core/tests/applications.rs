mod common;

use portrait_core::applications::{make_talking_head, tryon_controls, virtual_tryon, AudioSource, TalkingHeadOptions};
use portrait_core::fixtures::{garment_template, write_corpus};
use portrait_core::picture::mask;
use portrait_core::Error;

use common::*;

#[test]
fn tryon_keeps_the_garment() {
    let t = trained("kim", true, 14);
    let m = model(&t);
    let b = backends();
    let (template, garment) = garment_template("shop", 5);
    for refine in [false, true] {
        let out = virtual_tryon(&template, &garment, "city street", 3, (&t.identity, &m), refine, &b).unwrap();
        let mut changed = 0;
        for (x, y, p) in template.pixels.enumerate_pixels() {
            if mask::is_set(&garment, x, y) {
                assert_eq!(out.image.pixels.get_pixel(x, y), p);
            } else {
                changed += usize::from(out.image.pixels.get_pixel(x, y) != p);
            }
        }
        assert!(changed > 0);
        assert_eq!(out.manifest.strength, 1.0);
        assert_eq!(out.manifest.refinement.is_some(), refine);
    }
}

#[test]
fn tryon_depth_only_with_hands() {
    let b = backends();
    let (template, garment) = garment_template("shop", 6);
    let with = tryon_controls(&template, &garment, &b).unwrap();
    assert!(with.kinds().contains(&"depth"));
    let mut bare = template.clone();
    bare.notes.hands.clear();
    let without = tryon_controls(&bare, &garment, &b).unwrap();
    assert!(!without.kinds().contains(&"depth"));
}

#[test]
fn talking_head_durations_and_sizes() {
    let b = backends();
    let t = trained("lee", false, 15);
    let portrait = &t.identity.template;
    let tts = AudioSource::Tts { text: "hello".into(), voice: "narrator".into() };
    let out = make_talking_head(portrait, &tts, &TalkingHeadOptions::default(), &b).unwrap();
    assert!((out.audio.duration_secs() - 0.4).abs() < 1e-9);
    assert!((out.manifest.duration_secs - 0.4).abs() < 1e-9);
    assert_eq!((out.manifest.width, out.manifest.height), (256, 256));

    let opts = TalkingHeadOptions { resolution: 512, upscale: true, ..Default::default() };
    let up = make_talking_head(portrait, &tts, &opts, &b).unwrap();
    assert_eq!((up.manifest.width, up.manifest.height), (1024, 1024));

    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path()).unwrap();
    let from_file = make_talking_head(portrait, &AudioSource::File(dir.path().join("speech.wav")), &TalkingHeadOptions::default(), &b).unwrap();
    assert_eq!(from_file.manifest.digest, out.manifest.digest);

    let bad = TalkingHeadOptions { pose_index: 46, ..Default::default() };
    assert!(matches!(make_talking_head(portrait, &tts, &bad, &b), Err(Error::OutOfRange(_))));
}
