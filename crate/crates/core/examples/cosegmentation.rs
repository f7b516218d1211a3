//! Co-segments a group of images that share a foreground shape class. The
//! target's node state is carried through successive small graphs, each
//! holding a slice of the other images.
//!
//!     cargo run --release --example cosegmentation -- [checkpoint] [images] [n-prime]

use std::path::Path;

use agnn::pipeline::{iocs_groups, iocs_infer_all, load_checkpoint, region_similarity};
use agnn::synth::{generate_coseg_group, ShapeClass};
use agnn::{Model, ModelConfig};

fn main() -> agnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = match args.next().filter(|s| s != "-") {
        Some(p) => load_checkpoint(Path::new(&p))?,
        None => Model::init(ModelConfig::default(), 0)?,
    };
    let n = args.next().map_or(7, |s| s.parse().expect("image count must be an integer"));
    let n_prime = args.next().map_or(3, |s| s.parse().expect("n-prime must be an integer"));

    let group = generate_coseg_group(64, 64, ShapeClass::Triangle, n, 0.06, 4)?;
    println!("groups for image 0: {:?}", iocs_groups(n, 0, n_prime)?);
    let masks = iocs_infer_all(&model, &group.frames, n_prime)?;
    for (k, (m, gt)) in masks.iter().zip(&group.masks).enumerate() {
        println!("image {k}  J {:.3}", region_similarity(m, gt)?);
    }
    Ok(())
}
