//! Segments one video with the interleaved test-time schedule and writes a
//! mask per frame. Uses a checkpoint if one is given, otherwise an untrained
//! model (the masks are then meaningless but the plumbing is the same).
//!
//!     cargo run --release --example video_inference -- [checkpoint] [n-prime]

use std::path::Path;

use agnn::pipeline::{infer_video, load_checkpoint, region_similarity, InferenceSchedule};
use agnn::synth::{generate_video, mask_file, write_mask, DatasetSpec};
use agnn::{Model, ModelConfig};

fn main() -> agnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = match args.next() {
        Some(p) => load_checkpoint(Path::new(&p))?,
        None => Model::init(ModelConfig::default(), 0)?,
    };
    let n_prime = args.next().map_or(5, |s| s.parse().expect("n-prime must be an integer"));

    let spec = DatasetSpec::default();
    let video = generate_video(&spec.video(spec.train_videos, 0))?;
    let schedule = InferenceSchedule::new(video.len(), n_prime)?;
    println!("{} frames, interval T = {}", video.len(), schedule.interval());
    for (t, s) in schedule.subsets().iter().enumerate() {
        println!("  subset {t}: {s:?}");
    }

    let masks = infer_video(&model, &video.frames, n_prime)?;
    let out = Path::new("masks");
    std::fs::create_dir_all(out).map_err(|e| agnn::Error::Config(e.to_string()))?;
    for (k, (m, gt)) in masks.iter().zip(&video.masks).enumerate() {
        write_mask(&out.join(mask_file(k)), m)?;
        println!("frame {k:>2}  J {:.3}", region_similarity(m, gt)?);
    }
    Ok(())
}
