use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use agnn::synth::{
    decode_pgm, decode_ppm, downsample_mask, encode_pgm, encode_ppm, generate_coseg_group, generate_dataset,
    generate_video, load_video, sample_clip_indices, sample_training_clip, segments, DatasetSpec, Manifest, ShapeClass,
    Split,
};
use agnn::{Error, Frame, Mask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn tiny() -> DatasetSpec {
    DatasetSpec {
        canvas: 32,
        frames_per_video: 5,
        train_videos: 3,
        test_videos: 2,
        coseg_images: 4,
        ..DatasetSpec::default()
    }
}

fn hash_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = Sha256::digest(fs::read(&p).unwrap());
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), digest.to_vec());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_byte_identical_trees() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&tiny(), 7, a.path()).unwrap();
    generate_dataset(&tiny(), 7, b.path()).unwrap();
    generate_dataset(&tiny(), 8, c.path()).unwrap();
    let (ha, hb, hc) = (hash_tree(a.path()), hash_tree(b.path()), hash_tree(c.path()));
    // 5 videos and 3 groups of 5 or 4 frames with a mask each, plus the manifest.
    assert_eq!(ha.len(), 2 * (5 * 5 + 3 * 4) + 1);
    assert_eq!(ha, hb);
    assert_ne!(ha, hc);
}

#[test]
fn dataset_layout_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&tiny(), 1, dir.path()).unwrap();
    assert_eq!(Manifest::load(dir.path()).unwrap(), m);
    let text = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(text.starts_with("train\t0\t5\tellipse\n"));
    assert!(dir.path().join("test/video_0003/frame_0004.ppm").is_file());
    assert!(dir.path().join("test/video_0004/mask_0000.pgm").is_file());
    assert_eq!(m.split(Split::Train).count(), 3);
    assert_eq!(m.split(Split::Test).count(), 2);
    for e in &m.entries {
        let v = load_video(dir.path(), e).unwrap();
        assert_eq!(v.len(), e.num_frames);
        assert!(v.masks.iter().all(|m| m.foreground_count() > 0));
    }
    let first = m.split(Split::Test).next().unwrap();
    let on_disk = load_video(dir.path(), first).unwrap();
    assert_eq!(on_disk, generate_video(&tiny().video(first.id, 1)).unwrap());

    fs::remove_file(dir.path().join("train/video_0001/mask_0002.pgm")).unwrap();
    assert!(matches!(Manifest::load(dir.path()), Err(Error::Missing(_))));
}

#[test]
fn unwritable_output_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    assert!(generate_dataset(&tiny(), 0, &blocker.join("sub")).is_err());
}

#[test]
fn videos_keep_class_and_minimum_area() {
    let spec = DatasetSpec::default();
    for id in 0..25 {
        let v = generate_video(&spec.video(id, 3)).unwrap();
        assert_eq!(v.class, ShapeClass::ALL[id % 3]);
        assert_eq!(v.len(), 24);
        for m in &v.masks {
            assert!(m.foreground_count() as f64 >= 0.02 * 64.0 * 64.0);
        }
    }
}

#[test]
fn coseg_groups_share_class_on_distinct_backgrounds() {
    let g = generate_coseg_group(32, 32, ShapeClass::Rectangle, 6, 0.0, 2).unwrap();
    assert_eq!(g.len(), 6);
    assert!(g.masks.iter().all(|m| m.foreground_count() > 0));
    // Without noise the corner pixel is pure background.
    let corners: Vec<[f64; 3]> = g.frames.iter().map(|f| f.pixel(0, 0)).collect();
    for i in 0..corners.len() {
        for j in i + 1..corners.len() {
            assert_ne!(corners[i], corners[j]);
        }
    }
}

#[test]
fn clip_sampling_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts = [0usize; 9];
    let draws = 10_000;
    for _ in 0..draws {
        let idx = sample_clip_indices(9, 3, &mut rng).unwrap();
        assert!((0..3).contains(&idx[0]) && (3..6).contains(&idx[1]) && (6..9).contains(&idx[2]));
        for i in idx {
            counts[i] += 1;
        }
    }
    for c in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 1.0 / 3.0).abs() <= 0.02, "{counts:?}");
    }
}

#[test]
fn clip_edge_cases() {
    let frames: Vec<usize> = (0..7).collect();
    assert_eq!(sample_training_clip(&frames, 7, 3).unwrap(), frames);
    assert!(sample_training_clip(&frames, 8, 3).is_err());
    assert_eq!(segments(10, 3).unwrap(), vec![0..4, 4..7, 7..10]);
}

fn block_oracle(fg: &[bool], h: usize, w: usize, d: usize) -> Vec<bool> {
    let mut out = Vec::new();
    for oy in 0..h / d {
        for ox in 0..w / d {
            let mut n = 0;
            for y in 0..d {
                for x in 0..d {
                    n += usize::from(fg[(oy * d + y) * w + ox * d + x]);
                }
            }
            out.push(n * 2 >= d * d);
        }
    }
    out
}

#[test]
fn downsample_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (h, w) = (4 * rng.gen_range(1..6), 4 * rng.gen_range(1..6));
        let p = rng.gen_range(0.1..0.9);
        let fg: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(p)).collect();
        let m = Mask::from_bools(h, w, &fg).unwrap();
        let out = downsample_mask(&m, 4).unwrap();
        assert_eq!(out.binarize(), block_oracle(&fg, h, w, 4));
    }
    let ones = Mask::from_bools(8, 8, &[true; 64]).unwrap();
    assert_eq!(downsample_mask(&ones, 4).unwrap().foreground_count(), 4);
    assert!(downsample_mask(&ones, 3).is_err());
}

#[test]
fn pnm_headers_and_errors() {
    let m = Mask::binary(2, 2, vec![1.0; 4]).unwrap();
    let bytes = encode_pgm(&m);
    let mut want = b"P5\n2 2\n255\n".to_vec();
    want.extend([0xFF; 4]);
    assert_eq!(bytes, want);

    assert!(decode_pgm(b"P5\n2 2\n15\n\xff\xff\xff\xff").is_err());
    match decode_pgm(b"P5\n2 2\n255\n\xff\xff") {
        // Reported where the input runs out: 11 header bytes plus 2 payload bytes.
        Err(Error::Format { position, .. }) => assert_eq!(position, 13),
        other => panic!("expected a format error, got {other:?}"),
    }
    assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(Error::Format { position: 0, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ppm_round_trip_is_byte_exact(h in 1usize..6, w in 1usize..6, bytes in proptest::collection::vec(any::<u8>(), 75)) {
        let px: Vec<f64> = bytes[..h * w * 3].iter().map(|&b| f64::from(b) / 255.0).collect();
        let f = Frame::new(h, w, px).unwrap();
        let enc = encode_ppm(&f);
        let back = decode_ppm(&enc).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(encode_ppm(&back), enc);
    }

    #[test]
    fn pgm_round_trip_is_byte_exact(h in 1usize..8, w in 1usize..8, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fg: Vec<bool> = (0..h * w).map(|_| rng.gen()).collect();
        let m = Mask::from_bools(h, w, &fg).unwrap();
        let enc = encode_pgm(&m);
        prop_assert_eq!(decode_pgm(&enc).unwrap().binarize(), fg);
    }

    #[test]
    fn clips_are_sorted_and_one_per_segment(n in 1usize..60, k in 1usize..10, seed: u64) {
        prop_assume!(k <= n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = sample_clip_indices(n, k, &mut rng).unwrap();
        let segs = segments(n, k).unwrap();
        prop_assert_eq!(idx.len(), k);
        for (i, s) in idx.iter().zip(&segs) {
            prop_assert!(s.contains(i));
        }
        let lens: Vec<usize> = segs.iter().map(|s| s.len()).collect();
        prop_assert!(lens.windows(2).all(|p| p[0] >= p[1] && p[0] - p[1] <= 1));
    }
}
