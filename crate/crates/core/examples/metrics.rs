//! Region similarity and boundary F on hand-built masks.
//!
//!     cargo run --example metrics

use agnn::pipeline::{boundary_f, default_tolerance, region_similarity};
use agnn::Mask;

fn square(side: usize, y0: usize, x0: usize, len: usize) -> Mask {
    let fg: Vec<bool> = (0..side * side)
        .map(|i| (y0..y0 + len).contains(&(i / side)) && (x0..x0 + len).contains(&(i % side)))
        .collect();
    Mask::from_bools(side, side, &fg).expect("valid mask")
}

fn main() -> agnn::Result<()> {
    let theta = default_tolerance(64, 64);
    let gt = square(64, 20, 20, 16);
    let cases = [
        ("identical", gt.clone()),
        ("shifted by 1", square(64, 21, 20, 16)),
        ("shifted by 4", square(64, 24, 20, 16)),
        ("half size", square(64, 20, 20, 8)),
        ("disjoint", square(64, 0, 0, 8)),
    ];
    println!("tolerance {theta} px");
    for (name, pred) in &cases {
        println!(
            "{name:<13} J {:.3}  F {:.3}",
            region_similarity(pred, &gt)?,
            boundary_f(pred, &gt, theta)?
        );
    }
    Ok(())
}
