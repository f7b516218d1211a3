//! Finite-difference check of every parameter gradient through the whole
//! model: encoder, two message-passing rounds, readout and loss.
//!
//!     cargo run --release --example gradient_check

use agnn::engine::{grad_check, Tensor};
use agnn::pipeline::{dynamic_loss, Sample};
use agnn::synth::{generate_video, DatasetSpec};
use agnn::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> agnn::Result<()> {
    let mut config = ModelConfig::default();
    config.encoder.channels = 8;
    config.encoder.hidden = 4;
    config.readout_hidden = 4;
    config.graph.k_iters = 2;
    let mut model = Model::init(config, 3)?;
    // Open the intra-attention branch so its kernels receive gradient too.
    model.params.agnn.alpha = Tensor::scalar(0.5);
    // Zero biases put some ReLU inputs exactly on the kink, where central
    // differences average the two one-sided slopes.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    model.params.for_each_mut(|_, name, t| {
        if t.rank() == 1 && name != "alpha" {
            t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.1..0.1));
        }
    });

    let spec = DatasetSpec {
        canvas: 16,
        frames_per_video: 3,
        ..DatasetSpec::default()
    };
    let video = generate_video(&spec.video(0, 1))?;
    let clip: Vec<Sample> = video.frames.iter().zip(&video.masks).collect();

    let named = model.params.named();
    let inputs: Vec<Tensor> = named.iter().map(|(_, t)| (*t).clone()).collect();
    let report = grad_check(
        |tape, vars| {
            let mut k = 0;
            let p = model.params.map(|_, _, _| {
                k += 1;
                vars[k - 1]
            });
            dynamic_loss(tape, &model, &p, std::slice::from_ref(&clip))
        },
        &inputs,
        1e-5,
    )?;

    for ((name, _), err) in named.iter().zip(&report.per_input) {
        println!("{name:<20} max rel err {err:.2e}");
    }
    println!("{} coordinates, worst {:.2e}", report.coordinates, report.max_rel_err);
    Ok(())
}
