//! Trains on freshly generated videos with the default schedule
//! (alternating static and dynamic iterations) and scores the held-out
//! videos, saving the checkpoint along the way.
//!
//!     cargo run --release --example train_and_evaluate -- [iters] [checkpoint]

use std::path::PathBuf;
use std::time::Instant;

use agnn::pipeline::{infer_video, load_checkpoint, save_checkpoint, score_frames, train, EvalReport, IterKind, TrainConfig};
use agnn::synth::{generate_video, DatasetSpec, Video};

fn main() -> agnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters = args.next().map_or(1500, |s| s.parse().expect("iters must be an integer"));
    let path = PathBuf::from(args.next().unwrap_or_else(|| "checkpoint.agnn".into()));

    let spec = DatasetSpec::default();
    let videos = |ids: std::ops::Range<usize>| -> agnn::Result<Vec<Video>> {
        ids.map(|i| generate_video(&spec.video(i, 0))).collect()
    };
    let (train_set, test_set) = (videos(0..spec.train_videos)?, videos(spec.train_videos..spec.train_videos + spec.test_videos)?);

    let config = TrainConfig { iters, ..TrainConfig::default() };
    let start = Instant::now();
    let mut window = Vec::new();
    let model = train(&train_set, config, |it, kind, loss| {
        if kind == IterKind::Dynamic {
            window.push(loss);
        }
        if (it + 1) % 100 == 0 {
            let mean = window.iter().sum::<f64>() / window.len().max(1) as f64;
            println!("iter {:>5}  graph loss {mean:8.3}  {:.0}s", it + 1, start.elapsed().as_secs_f64());
            window.clear();
        }
    })?;
    save_checkpoint(&path, &model)?;
    let model = load_checkpoint(&path)?;

    let scores = test_set
        .iter()
        .enumerate()
        .map(|(i, v)| score_frames(i, &infer_video(&model, &v.frames, 5)?, &v.masks))
        .collect::<agnn::Result<Vec<_>>>()?;
    print!("{}", EvalReport::from_videos(scores)?.to_csv());
    Ok(())
}
