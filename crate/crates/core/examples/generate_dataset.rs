//! Writes the default synthetic dataset (20 train and 5 test videos of 24
//! frames, plus three co-segmentation groups) and prints its manifest.
//!
//!     cargo run --release --example generate_dataset -- [out-dir] [seed]

use std::path::PathBuf;

use agnn::synth::{generate_dataset, DatasetSpec, Split};

fn main() -> agnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));

    let manifest = generate_dataset(&DatasetSpec::default(), seed, &out)?;
    for split in [Split::Train, Split::Test, Split::Coseg] {
        let entries: Vec<_> = manifest.split(split).collect();
        let frames: usize = entries.iter().map(|e| e.num_frames).sum();
        println!("{split:<6} {:>3} entries {frames:>5} frames", entries.len());
    }
    println!("manifest: {}", out.join("manifest.txt").display());
    Ok(())
}
