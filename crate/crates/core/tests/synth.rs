use std::collections::BTreeMap;
use std::path::Path;

use laneseg::data::{load_manifest, Split};
use laneseg::exec::{with_mode, ExecMode};
use laneseg::synth::{
    generate_dataset, generate_scene, generate_scene_with_geometry, LaneLine, SceneGeometry,
    SceneParams,
};
use laneseg::{Error, Mask};
use proptest::prelude::*;

/// Brute force: a pixel belongs to a line when its centre is within half the
/// thickness of the curve on that row, for rows at or below the horizon.
fn oracle_mask(line: &LaneLine, g: &SceneGeometry, h: usize, w: usize) -> Mask {
    let mut m = Mask::new(h, w);
    for y in 0..h {
        if (y as f64) < g.horizon {
            continue;
        }
        let t = y as f64 - g.horizon;
        let cx = line.a * t * t + line.b * t + line.c;
        for x in 0..w {
            if (x as f64 + 0.5 - cx).abs() <= g.thickness / 2.0 {
                m.set(y, x, 1);
            }
        }
    }
    m
}

fn params_strategy() -> impl Strategy<Value = SceneParams> {
    (32usize..96, 32usize..128, 0.0f64..1.0, 0.0f64..0.1).prop_map(|(h, w, curv, noise)| {
        let mut p = SceneParams::for_size(h, w);
        p.lane_curvature *= curv * 2.0;
        p.texture_noise_sigma = noise;
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn masks_equal_rerasterised_lines(seed in any::<u64>(), p in params_strategy()) {
        let (s, g) = generate_scene_with_geometry(seed, &p).unwrap();
        let (h, w) = p.image_size;
        prop_assert_eq!(&s.mask_left, &oracle_mask(&g.left, &g, h, w));
        prop_assert_eq!(&s.mask_right, &oracle_mask(&g.right, &g, h, w));
    }

    #[test]
    fn lanes_never_overlap(seed in any::<u64>(), p in params_strategy()) {
        let s = generate_scene(seed, &p).unwrap();
        let overlap = s.mask_left.data.iter().zip(&s.mask_right.data).filter(|(a, b)| **a == 1 && **b == 1).count();
        prop_assert_eq!(overlap, 0);
        let (l, r) = (s.mask_left.mean_column().unwrap(), s.mask_right.mean_column().unwrap());
        prop_assert!(l < r);
    }

    #[test]
    fn straight_lines_straddle_the_centre(seed in any::<u64>(), h in 32usize..96, w in 32usize..128) {
        let mut p = SceneParams::for_size(h, w);
        p.lane_curvature = 0.0;
        let s = generate_scene(seed, &p).unwrap();
        let centre = (w as f64 - 1.0) / 2.0;
        prop_assert!(s.mask_left.mean_column().unwrap() < centre);
        prop_assert!(s.mask_right.mean_column().unwrap() > centre);
    }
}

#[test]
fn straight_line_pixel_count() {
    for (h, w, th) in [(64, 96, 2.0), (96, 128, 3.0), (48, 64, 1.0)] {
        let mut p = SceneParams::for_size(h, w);
        p.lane_curvature = 0.0;
        p.texture_noise_sigma = 0.0;
        p.line_thickness_px = th;
        for seed in 0..5 {
            let (s, g) = generate_scene_with_geometry(seed, &p).unwrap();
            let visible = h - (g.horizon.ceil() as usize);
            for mask in [&s.mask_left, &s.mask_right] {
                for y in 0..h {
                    let row = (0..w).filter(|&x| mask.get(y, x) == 1).count();
                    if (y as f64) < g.horizon {
                        assert_eq!(row, 0);
                    } else {
                        assert!((row as f64 - th).abs() <= 1.0, "row {y}: {row} pixels for thickness {th}");
                    }
                }
                let total = mask.count() as f64;
                let expected = th * visible as f64;
                assert!((total - expected).abs() <= visible as f64, "{total} vs {expected}");
            }
        }
    }
}

#[test]
fn noise_free_scene_is_noise_free() {
    let mut p = SceneParams::for_size(40, 40);
    p.texture_noise_sigma = 0.0;
    let s = generate_scene(3, &p).unwrap();
    let distinct: std::collections::BTreeSet<u64> = s.image.data.iter().map(|v| v.to_bits()).collect();
    assert!(distinct.len() < 80);
}

#[test]
fn invalid_params_rejected() {
    let mut p = SceneParams::for_size(48, 64);
    p.lane_width_px = 2.0 * p.line_thickness_px;
    assert!(matches!(generate_scene(0, &p), Err(Error::Argument(_))));
    let mut p = SceneParams::for_size(48, 64);
    p.line_thickness_px = 0.5;
    assert!(matches!(generate_scene(0, &p), Err(Error::Argument(_))));
    let mut p = SceneParams::for_size(48, 64);
    p.horizon_row_fraction = 0.2;
    assert!(matches!(generate_scene(0, &p), Err(Error::Argument(_))));
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn ten_scene_dataset_split_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = SceneParams::for_size(32, 48);
    let m = generate_dataset(11, 10, &p, &dir.path().join("a")).unwrap();
    assert_eq!((m.counts().train, m.counts().val), (9, 1));
    assert_eq!(m.entries.last().unwrap().split, Split::Val);
    assert_eq!(load_manifest(&dir.path().join("a/manifest.json")).unwrap(), m);

    with_mode(ExecMode::Sequential, || generate_dataset(11, 10, &p, &dir.path().join("b")).unwrap());
    let a = tree(&dir.path().join("a"));
    assert_eq!(a.len(), 31);
    assert_eq!(a, tree(&dir.path().join("b")));

    generate_dataset(12, 10, &p, &dir.path().join("c")).unwrap();
    assert_ne!(a, tree(&dir.path().join("c")));
}

#[test]
fn single_scene_goes_to_training() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(0, 1, &SceneParams::for_size(32, 32), dir.path()).unwrap();
    assert_eq!((m.counts().train, m.counts().val), (1, 0));
    assert!(matches!(
        generate_dataset(0, 0, &SceneParams::for_size(32, 32), dir.path()),
        Err(Error::Argument(_))
    ));
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    let err = generate_dataset(0, 2, &SceneParams::for_size(32, 32), &file).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}
