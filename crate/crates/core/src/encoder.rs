//! Small convolutional frame encoder producing the initial node state.
//!
//! Three 3x3 convolutions with ReLU (strides chosen by the downsample factor)
//! followed by a 1x1 projection to `channels`. One parameter set is shared by
//! every frame of every graph.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{conv_kernel, param_group};

/// RGB image in `[H, W, 3]` layout with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame(Tensor);

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        let t = Tensor::new(&[height, width, 3], pixels)?;
        Self::from_tensor(t)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 3 || t.shape()[2] != 3 {
            return Err(Error::shape("frame", format!("expected [H, W, 3], got {:?}", t.shape())));
        }
        if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("frame pixels must lie in [0, 1]".into()));
        }
        Ok(Frame(t))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// Channel values of pixel `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let o = (y * self.width() + x) * 3;
        let d = self.0.data();
        [d[o], d[o + 1], d[o + 2]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Spatial reduction factor, 4 or 8.
    pub downsample: usize,
    /// Output channels `C` of the node state.
    pub channels: usize,
    /// Width of the three hidden convolutions.
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            downsample: 4,
            channels: 32,
            hidden: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.downsample, 4 | 8) {
            return Err(Error::Config(format!("downsample must be 4 or 8, got {}", self.downsample)));
        }
        if self.channels == 0 || self.hidden == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        Ok(())
    }

    /// Strides of the three 3x3 layers.
    pub fn strides(&self) -> [usize; 3] {
        if self.downsample == 8 {
            [2, 2, 2]
        } else {
            [2, 2, 1]
        }
    }

    /// Node-state shape `[H / d, W / d, C]` for a frame of the given size.
    pub fn output_shape(&self, height: usize, width: usize) -> Result<[usize; 3]> {
        let d = self.downsample;
        if height == 0 || width == 0 || !height.is_multiple_of(d) || !width.is_multiple_of(d) {
            return Err(Error::shape(
                "encode",
                format!("frame {height}x{width} not divisible by downsample factor {d}"),
            ));
        }
        Ok([height / d, width / d, self.channels])
    }
}

param_group! {
    EncoderParams {
        conv1_w, conv1_b,
        conv2_w, conv2_b,
        conv3_w, conv3_b,
        proj_w, proj_b,
    }
}

pub fn init_encoder(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, c) = (config.hidden, config.channels);
    Ok(EncoderParams {
        conv1_w: conv_kernel(&mut rng, 3, 3, h),
        conv1_b: Tensor::zeros(&[h]),
        conv2_w: conv_kernel(&mut rng, 3, h, h),
        conv2_b: Tensor::zeros(&[h]),
        conv3_w: conv_kernel(&mut rng, 3, h, h),
        conv3_b: Tensor::zeros(&[h]),
        proj_w: conv_kernel(&mut rng, 1, h, c),
        proj_b: Tensor::zeros(&[c]),
    })
}

/// Encodes a frame already on the tape into its `[H/d, W/d, C]` node state.
pub fn encode(tape: &mut Tape, frame: Var, params: &EncoderParams<Var>, config: &EncoderConfig) -> Result<Var> {
    let shape = tape.shape(frame).to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::shape("encode", format!("expected [H, W, 3] frame, got {shape:?}")));
    }
    config.output_shape(shape[0], shape[1])?;
    encode_layers(tape, frame, params, config)
}

fn encode_layers(tape: &mut Tape, frame: Var, params: &EncoderParams<Var>, config: &EncoderConfig) -> Result<Var> {
    let [s1, s2, s3] = config.strides();
    let x = tape.conv2d(frame, params.conv1_w, Some(params.conv1_b), s1)?;
    let x = tape.relu(x)?;
    let x = tape.conv2d(x, params.conv2_w, Some(params.conv2_b), s2)?;
    let x = tape.relu(x)?;
    let x = tape.conv2d(x, params.conv3_w, Some(params.conv3_b), s3)?;
    let x = tape.relu(x)?;
    tape.conv2d(x, params.proj_w, Some(params.proj_b), 1)
}

/// Tape-free encoding of a single frame.
pub fn encode_frame(frame: &Frame, params: &EncoderParams, config: &EncoderConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape)?;
    let x = tape.constant(frame.tensor().clone())?;
    let out = encode(&mut tape, x, &bound, config)?;
    Ok(tape.value(out).clone())
}
