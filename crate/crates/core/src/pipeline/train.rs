//! Alternating static/dynamic training with momentum SGD.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::Frame;
use crate::engine::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::head::{weighted_bce_on_tape, Mask};
use crate::model::{Group, Model, ModelConfig, ModelParams};
use crate::synth::{downsample_mask, sample_clip_indices, static_scene, stream_seed, Video};

const TAG_BATCH: u64 = 11;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Graphs per dynamic iteration, one per sampled video.
    pub videos_per_batch: usize,
    /// Frames sampled per video (nodes per training graph).
    pub n_prime: usize,
    pub lr: f64,
    pub momentum: f64,
    pub iters: usize,
    /// Interleave static-image iterations with the dynamic ones.
    pub alternate: bool,
    /// Background noise of the generated static scenes.
    pub static_noise: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            videos_per_batch: 2,
            n_prime: 3,
            lr: 1e-4,
            momentum: 0.9,
            iters: 1500,
            alternate: true,
            static_noise: 0.06,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.videos_per_batch == 0 || self.n_prime == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "need lr >= 0 and momentum in [0, 1), got lr {} momentum {}",
                self.lr, self.momentum
            )));
        }
        Ok(())
    }

    /// Images per static iteration; matches the frames of a dynamic one.
    pub fn static_batch(&self) -> usize {
        self.videos_per_batch * self.n_prime
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IterKind {
    Static,
    Dynamic,
}

impl IterKind {
    fn groups(self) -> &'static [Group] {
        match self {
            IterKind::Static => &[Group::Encoder, Group::Aux],
            IterKind::Dynamic => &[Group::Encoder, Group::Agnn, Group::Readout],
        }
    }
}

/// One training example: frame and full-resolution ground truth.
pub type Sample<'a> = (&'a Frame, &'a Mask);

/// Mean weighted cross entropy over all frames of `clips`, each clip run as
/// one graph. Recorded on `tape`.
pub fn dynamic_loss(tape: &mut Tape, model: &Model, p: &ModelParams<Var>, clips: &[Vec<Sample<'_>>]) -> Result<Var> {
    let d = model.config.encoder.downsample;
    let mut terms = Vec::new();
    for clip in clips {
        let frames: Vec<&Frame> = clip.iter().map(|s| s.0).collect();
        let preds = model.forward_graph(tape, p, &frames)?;
        for (&pred, (_, gt)) in preds.iter().zip(clip) {
            terms.push(weighted_bce_on_tape(tape, &downsample_mask(gt, d)?, pred)?.0);
        }
    }
    mean(tape, &terms)
}

/// Mean weighted cross entropy of the auxiliary static head.
pub fn static_loss(tape: &mut Tape, model: &Model, p: &ModelParams<Var>, images: &[Sample<'_>]) -> Result<Var> {
    let d = model.config.encoder.downsample;
    let mut terms = Vec::with_capacity(images.len());
    for (frame, gt) in images {
        let pred = model.forward_static(tape, p, frame)?;
        terms.push(weighted_bce_on_tape(tape, &downsample_mask(gt, d)?, pred)?.0);
    }
    mean(tape, &terms)
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let (&first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::Config("loss over an empty batch".into()))?;
    let mut total = first;
    for &t in rest {
        total = tape.add(total, t)?;
    }
    tape.scale(total, 1.0 / terms.len() as f64)
}

/// Loss value of `clips` without recording gradients.
pub fn evaluate_loss(model: &Model, clips: &[Vec<Sample<'_>>]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.params.bind_frozen(&mut tape)?;
    let l = dynamic_loss(&mut tape, model, &p, clips)?;
    Ok(tape.value(l).item())
}

/// Training state: model, momentum buffers and iteration counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    velocity: ModelParams,
    iteration: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Self::from_model(Model::init(config.model, config.seed)?, config)
    }

    pub fn from_model(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model.config != config.model {
            return Err(Error::Config("model does not match the training configuration".into()));
        }
        let velocity = model.params.map(|_, _, t| Tensor::zeros(t.shape()));
        Ok(Trainer {
            model,
            config,
            velocity,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn kind(&self, iteration: usize) -> IterKind {
        if self.config.alternate && iteration.is_multiple_of(2) {
            IterKind::Static
        } else {
            IterKind::Dynamic
        }
    }

    /// The clips of dynamic iteration `iteration`: distinct videos, one
    /// frame per temporal segment.
    pub fn sample_clips<'a>(&self, videos: &'a [Video], iteration: usize) -> Result<Vec<Vec<Sample<'a>>>> {
        if videos.is_empty() {
            return Err(Error::Config("no training videos".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, TAG_BATCH, iteration as u64));
        let count = self.config.videos_per_batch.min(videos.len());
        let mut picked = sample(&mut rng, videos.len(), count).into_vec();
        picked.sort_unstable();
        picked
            .into_iter()
            .map(|v| {
                let video = &videos[v];
                let idx = sample_clip_indices(video.len(), self.config.n_prime, &mut rng)?;
                Ok(idx.into_iter().map(|i| (&video.frames[i], &video.masks[i])).collect())
            })
            .collect()
    }

    fn static_images(&self, height: usize, width: usize, iteration: usize) -> Result<Vec<(Frame, Mask)>> {
        let n = self.config.static_batch();
        (0..n)
            .map(|k| {
                let index = (iteration * n + k) as u64;
                static_scene(width, height, self.config.static_noise, self.config.seed, index)
            })
            .collect()
    }

    /// Runs one iteration and returns its loss.
    pub fn step(&mut self, videos: &[Video]) -> Result<f64> {
        let it = self.iteration;
        let kind = self.kind(it);
        let mut tape = Tape::new();
        let p = self.model.params.bind(&mut tape)?;
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Divergence {
                iteration: it,
                loss: f64::NAN,
            },
            e => e,
        };
        let loss = match kind {
            IterKind::Dynamic => {
                let clips = self.sample_clips(videos, it)?;
                dynamic_loss(&mut tape, &self.model, &p, &clips).map_err(diverged)?
            }
            IterKind::Static => {
                let first = videos
                    .first()
                    .and_then(|v| v.frames.first())
                    .ok_or_else(|| Error::Config("no training videos".into()))?;
                let images = self.static_images(first.height(), first.width(), it)?;
                let refs: Vec<Sample<'_>> = images.iter().map(|(f, m)| (f, m)).collect();
                static_loss(&mut tape, &self.model, &p, &refs).map_err(diverged)?
            }
        };
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence { iteration: it, loss: value });
        }
        let grads = tape.backward(loss, &Tensor::scalar(1.0)).map_err(diverged)?;
        let groups = kind.groups();
        let (lr, mu) = (self.config.lr, self.config.momentum);
        let mut vars = Vec::new();
        p.for_each(|g, _, &v| vars.push((g, v)));
        let mut velocity = Vec::new();
        self.velocity.for_each_mut(|_, _, t| velocity.push(t));
        let mut params = Vec::new();
        self.model.params.for_each_mut(|_, _, t| params.push(t));
        let mut bad = false;
        for ((param, vel), (g, var)) in params.into_iter().zip(velocity).zip(vars) {
            if !groups.contains(&g) {
                continue;
            }
            let grad = grads.get(var).expect("every parameter is a trainable leaf");
            for ((pv, vv), gv) in param.data_mut().iter_mut().zip(vel.data_mut()).zip(grad.data()) {
                *vv = mu * *vv + gv;
                *pv -= lr * *vv;
                bad |= !pv.is_finite();
            }
        }
        if bad {
            return Err(Error::Divergence { iteration: it, loss: value });
        }
        self.iteration += 1;
        Ok(value)
    }
}

/// Trains for `config.iters` iterations, reporting each loss to `log`.
pub fn train(videos: &[Video], config: TrainConfig, mut log: impl FnMut(usize, IterKind, f64)) -> Result<Model> {
    let mut t = Trainer::new(config)?;
    for it in 0..config.iters {
        let kind = t.kind(it);
        let loss = t.step(videos)?;
        log(it, kind, loss);
    }
    Ok(t.model)
}
