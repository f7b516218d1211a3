//! One message-passing round on a three-node graph, printing the edge,
//! message and gate statistics the round produces.
//!
//!     cargo run --release --example attention_edges

use agnn::engine::{Tape, Tensor};
use agnn::graph::{init_agnn, propagate_round_traced, GraphConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> agnn::Result<()> {
    let (side, channels) = (4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = init_agnn(channels, 1)?;
    params.alpha = Tensor::scalar(0.3);

    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape)?;
    let states = (0..3)
        .map(|_| {
            let t = Tensor::from_fn(&[side, side, channels], |_| rng.gen_range(-1.0..1.0));
            tape.constant(t)
        })
        .collect::<agnn::Result<Vec<_>>>()?;

    let trace = propagate_round_traced(&mut tape, &states, &p, &GraphConfig::default(), &[0, 1, 2])?;

    let edge = |a: usize, b: usize| trace.line_edges.iter().find(|(k, _)| *k == (a, b)).map(|&(_, v)| v);
    for &((i, j), e) in &trace.line_edges {
        let e = tape.value(e);
        let back = tape.value(edge(j, i).expect("both directions recorded"));
        let n = e.shape()[0];
        let mut asym = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                asym = asym.max((e.at(&[r, c]) - back.at(&[c, r])).abs());
            }
        }
        println!("edge {i}->{j}: {n}x{n}, max |e_ij - e_ji^T| = {asym:.1e}");
    }
    for &((j, i), g) in &trace.gates {
        let g = tape.value(g).data();
        let (lo, hi) = g.iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        println!("gate {j}->{i}: range [{lo:.3}, {hi:.3}]");
    }
    for (i, &h) in trace.states.iter().enumerate() {
        println!("node {i}: state {:?}", tape.shape(h));
    }
    Ok(())
}
