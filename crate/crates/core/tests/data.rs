use std::path::Path;

use laneseg::data::augment::{Affine, TransformKind, TransformSpec};
use laneseg::data::io::{read_image, read_mask, write_image, write_mask};
use laneseg::data::{
    augment, extract_frames, load_manifest, resize_pair, save_manifest, AugmentationSpec,
    DatasetManifest, ManifestEntry, Sample, Split,
};
use laneseg::{Error, Mask, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sample(h: usize, w: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::new(h, w);
    img.data.iter_mut().for_each(|v| *v = rng.random());
    let mut left = Mask::new(h, w);
    let mut right = Mask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            if rng.random_bool(0.2) {
                if x < w / 2 {
                    left.set(y, x, 1);
                } else {
                    right.set(y, x, 1);
                }
            }
        }
    }
    Sample::new(img, left, right, format!("r{seed}")).unwrap()
}

/// Image whose channels encode the source column, row and "inside" flag.
fn coordinate_sample(h: usize, w: usize, seed: u64) -> Sample {
    let mut s = random_sample(h, w, seed);
    for y in 0..h {
        for x in 0..w {
            s.image
                .set(y, x, [x as f64 / (w - 1) as f64, y as f64 / (h - 1) as f64, 1.0]);
        }
    }
    s
}

fn near_half(v: f64) -> bool {
    (v - v.floor() - 0.5).abs() < 1e-6
}

/// Decode where each output pixel came from and look the original masks up
/// at that index.
fn assert_synchronised(input: &Sample, output: &Sample) -> usize {
    let (h, w) = (input.height(), input.width());
    let mut checked = 0;
    for y in 0..h {
        for x in 0..w {
            let [cx, cy, inside] = output.image.get(y, x);
            if inside < 1e-12 {
                assert_eq!(output.mask_union.get(y, x), 0, "outside pixel ({y},{x}) labelled");
                continue;
            }
            if inside < 1.0 - 1e-9 {
                continue;
            }
            let (sx, sy) = (cx * (w - 1) as f64, cy * (h - 1) as f64);
            if near_half(sx) || near_half(sy) {
                continue;
            }
            let (sx, sy) = (sx.round() as usize, sy.round() as usize);
            assert_eq!(output.mask_left.get(y, x), input.mask_left.get(sy, sx), "left at ({y},{x})");
            assert_eq!(output.mask_right.get(y, x), input.mask_right.get(sy, sx), "right at ({y},{x})");
            checked += 1;
        }
    }
    checked
}

#[test]
fn geometric_warp_moves_image_and_masks_together() {
    let ssr = TransformSpec::new(TransformKind::ShiftScaleRotate)
        .with_p(1.0)
        .with_param("rotate", [-45.0, 45.0]);
    let spec = AugmentationSpec::single(ssr);
    for seed in 0..12 {
        let s = coordinate_sample(24, 32, seed);
        let out = augment(&s, &spec, seed).unwrap();
        let checked = assert_synchronised(&s, &out);
        assert!(checked > 24 * 32 / 3, "seed {seed}: only {checked} pixels checked");
    }
}

#[test]
fn photometric_transforms_never_move_masks() {
    for kind in TransformKind::ALL.into_iter().filter(|k| !k.is_spatial()) {
        let spec = AugmentationSpec::single(TransformSpec::new(kind).with_p(1.0));
        let s = random_sample(20, 20, 5);
        let out = augment(&s, &spec, 9).unwrap();
        assert_eq!(out.mask_left, s.mask_left, "{kind}");
        assert_eq!(out.mask_right, s.mask_right, "{kind}");
        assert_ne!(out.image, s.image, "{kind} had no effect");
    }
}

#[test]
fn affine_identity_is_exact() {
    let s = random_sample(10, 14, 1);
    let id = Affine { angle_deg: 0.0, scale: 1.0, dx: 0.0, dy: 0.0 };
    assert_eq!(id.warp_mask(&s.mask_left), s.mask_left);
    assert_eq!(id.warp_image(&s.image), s.image);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn augment_preserves_invariants(seed in any::<u64>(), sample_seed in 0u64..1000) {
        let s = random_sample(16, 24, sample_seed);
        let spec = AugmentationSpec::default().with_probability(0.7);
        let out = augment(&s, &spec, seed).unwrap();
        prop_assert!(out.validate().is_ok());
        prop_assert!(out.mask_union.data.iter().all(|&v| v <= 1));
        prop_assert!(out.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(augment(&s, &spec, seed).unwrap(), out);
    }

    #[test]
    fn zero_probability_is_identity(seed in any::<u64>()) {
        let s = random_sample(12, 12, seed % 97);
        let spec = AugmentationSpec::default().with_probability(0.0);
        prop_assert_eq!(augment(&s, &spec, seed).unwrap(), s);
    }

    #[test]
    fn resize_to_own_size_keeps_masks(h in 8usize..24, w in 8usize..24, seed in 0u64..100) {
        let s = random_sample(h, w, seed);
        let r = resize_pair(&s, (h, w)).unwrap();
        prop_assert_eq!(r.mask_left, s.mask_left);
        prop_assert_eq!(r.mask_right, s.mask_right);
    }
}

fn write_tiny_dataset(dir: &Path) {
    let s = random_sample(8, 8, 3);
    write_image(&dir.join("f.png"), &s.image).unwrap();
    write_mask(&dir.join("l.png"), &s.mask_left).unwrap();
    write_mask(&dir.join("r.png"), &s.mask_right).unwrap();
}

fn entry(split: Split) -> ManifestEntry {
    ManifestEntry {
        frame: "f.png".into(),
        mask_left: "l.png".into(),
        mask_right: "r.png".into(),
        split,
    }
}

#[test]
fn manifest_with_reference_split_validates() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_dataset(dir.path());
    let mut entries = vec![entry(Split::Train); 3075];
    entries.extend(vec![entry(Split::Val); 129]);
    let m = DatasetManifest::new(entries);
    let p = dir.path().join("manifest.json");
    save_manifest(&m, &p).unwrap();
    let loaded = load_manifest(&p).unwrap();
    assert_eq!(loaded, m);
    assert_eq!((loaded.counts().train, loaded.counts().val), (3075, 129));
}

#[test]
fn manifest_with_wrong_declared_counts_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_dataset(dir.path());
    let p = dir.path().join("manifest.json");
    std::fs::write(
        &p,
        r#"{"entries":[{"frame":"f.png","mask_left":"l.png","mask_right":"r.png","split":"train"}],
            "version":1,"counts":{"train":2,"val":0}}"#,
    )
    .unwrap();
    assert!(matches!(load_manifest(&p), Err(Error::Manifest { .. })));
}

#[test]
fn saved_masks_are_zero_or_255() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_dataset(dir.path());
    let raw = image::open(dir.path().join("l.png")).unwrap().to_luma8();
    assert!(raw.as_raw().iter().all(|&v| v == 0 || v == 255));
    let back = read_mask(&dir.path().join("l.png")).unwrap();
    assert_eq!(back, random_sample(8, 8, 3).mask_left);
    assert_eq!(read_image(&dir.path().join("f.png")).unwrap().height, 8);
}

fn write_video(path: &Path, frames: usize, w: usize, h: usize) {
    let file = std::fs::File::create(path).unwrap();
    let mut enc = y4m::encode(w, h, y4m::Ratio::new(25, 1)).write_header(file).unwrap();
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    for i in 0..frames {
        let yp: Vec<u8> = (0..w * h).map(|p| ((p + i) % 200 + 16) as u8).collect();
        let up = vec![128u8; cw * ch];
        let vp = vec![(100 + i % 50) as u8; cw * ch];
        enc.write_frame(&y4m::Frame::new([&yp, &up, &vp], None)).unwrap();
    }
}

#[test]
fn extract_every_frame_and_every_tenth() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("clip.y4m");
    write_video(&video, 100, 16, 12);

    let all = dir.path().join("all");
    assert_eq!(extract_frames(&video, &all, 1).unwrap(), 100);
    assert_eq!(std::fs::read_dir(&all).unwrap().count(), 100);
    assert!(all.join("frame_000099.png").exists());

    let tenth = dir.path().join("tenth");
    assert_eq!(extract_frames(&video, &tenth, 10).unwrap(), 10);
    assert!(tenth.join("frame_000090.png").exists());
    let a = std::fs::read(all.join("frame_000030.png")).unwrap();
    let b = std::fs::read(tenth.join("frame_000030.png")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_and_corrupt_videos() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.y4m");
    write_video(&empty, 0, 8, 8);
    assert!(matches!(extract_frames(&empty, &dir.path().join("o"), 1), Err(Error::EmptyVideo(_))));

    let bad = dir.path().join("bad.y4m");
    std::fs::write(&bad, b"not a video at all\n").unwrap();
    let err = extract_frames(&bad, &dir.path().join("o2"), 1).unwrap_err();
    assert!(matches!(err, Error::Ingest { .. }));
    assert!(err.to_string().contains("bad.y4m"));

    assert!(matches!(extract_frames(&empty, &dir.path().join("o3"), 0), Err(Error::Argument(_))));
}
