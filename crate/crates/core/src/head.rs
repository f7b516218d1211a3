//! Readout, auxiliary static head and the class-balanced loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{conv_kernel, param_group};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Foreground probabilities in `[0, 1]`.
    Predicted,
    /// Binary labels in `{0, 1}`.
    GroundTruth,
}

/// Single-channel `H x W` map.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<f64>,
    kind: MaskKind,
}

impl Mask {
    pub fn predicted(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::checked(height, width, values, MaskKind::Predicted)
    }

    pub fn binary(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::checked(height, width, values, MaskKind::GroundTruth)
    }

    pub fn from_bools(height: usize, width: usize, fg: &[bool]) -> Result<Self> {
        Self::binary(height, width, fg.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    fn checked(height: usize, width: usize, values: Vec<f64>, kind: MaskKind) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape(
                "mask",
                format!("{height}x{width} mask with {} values", values.len()),
            ));
        }
        let ok = match kind {
            MaskKind::Predicted => values.iter().all(|v| (0.0..=1.0).contains(v)),
            MaskKind::GroundTruth => values.iter().all(|&v| v == 0.0 || v == 1.0),
        };
        if !ok {
            let what = match kind {
                MaskKind::Predicted => "predicted mask values must lie in [0, 1]",
                MaskKind::GroundTruth => "ground-truth mask must be binary",
            };
            return Err(Error::Config(what.into()));
        }
        Ok(Mask {
            height,
            width,
            values,
            kind,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v >= 0.5).count()
    }

    /// Foreground indicator at threshold 0.5.
    pub fn binarize(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v >= 0.5).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width], self.values.clone()).expect("mask dims are positive")
    }

    /// Bilinear upsampling by an integer factor with half-pixel centres and
    /// edge clamping. The result is always a prediction.
    pub fn upsample(&self, factor: usize) -> Result<Mask> {
        if factor == 0 {
            return Err(Error::Config("upsample factor must be positive".into()));
        }
        let (oh, ow) = (self.height * factor, self.width * factor);
        let src = |o: usize, n: usize| -> (usize, usize, f64) {
            let p = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = p.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, p - lo as f64)
        };
        let mut out = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            let (y0, y1, fy) = src(y, self.height);
            for x in 0..ow {
                let (x0, x1, fx) = src(x, self.width);
                let top = self.at(y0, x0) * (1.0 - fx) + self.at(y0, x1) * fx;
                let bot = self.at(y1, x0) * (1.0 - fx) + self.at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
        Mask::predicted(oh, ow, out)
    }
}

param_group! {
    /// Two 3x3 convolutions with ReLU and a 1x1 output convolution.
    ReadoutParams {
        conv1_w, conv1_b,
        conv2_w, conv2_b,
        out_w, out_b,
    }
}

param_group! {
    /// 1x1 convolution from the encoder output to one channel.
    AuxParams { w, b }
}

pub fn init_readout(channels: usize, hidden: usize, seed: u64) -> Result<ReadoutParams> {
    if channels == 0 || hidden == 0 {
        return Err(Error::Config("readout widths must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ReadoutParams {
        conv1_w: conv_kernel(&mut rng, 3, 2 * channels, hidden),
        conv1_b: Tensor::zeros(&[hidden]),
        conv2_w: conv_kernel(&mut rng, 3, hidden, hidden),
        conv2_b: Tensor::zeros(&[hidden]),
        out_w: conv_kernel(&mut rng, 1, hidden, 1),
        out_b: Tensor::zeros(&[1]),
    })
}

pub fn init_aux(channels: usize, seed: u64) -> Result<AuxParams> {
    if channels == 0 {
        return Err(Error::Config("channels must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(AuxParams {
        w: conv_kernel(&mut rng, 1, channels, 1),
        b: Tensor::zeros(&[1]),
    })
}

/// Foreground probability map `[H, W]` from the final state and the
/// initial embedding.
pub fn readout(tape: &mut Tape, h_final: Var, v: Var, p: &ReadoutParams<Var>) -> Result<Var> {
    let (sh, sv) = (tape.shape(h_final).to_vec(), tape.shape(v).to_vec());
    if sh != sv || sh.len() != 3 {
        return Err(Error::shape("readout", format!("final state {sh:?} vs embedding {sv:?}")));
    }
    let x = tape.concat_channels(&[h_final, v])?;
    let x = tape.conv2d(x, p.conv1_w, Some(p.conv1_b), 1)?;
    let x = tape.relu(x)?;
    let x = tape.conv2d(x, p.conv2_w, Some(p.conv2_b), 1)?;
    let x = tape.relu(x)?;
    let x = tape.conv2d(x, p.out_w, Some(p.out_b), 1)?;
    let x = tape.sigmoid(x)?;
    tape.reshape(x, &sh[..2])
}

/// Static-image prediction `sigmoid(W * v + b)` straight from the encoder.
pub fn aux_static_predict(tape: &mut Tape, v: Var, p: &AuxParams<Var>) -> Result<Var> {
    let s = tape.shape(v).to_vec();
    if s.len() != 3 {
        return Err(Error::shape("aux_static_predict", format!("expected [H, W, C], got {s:?}")));
    }
    let x = tape.conv2d(v, p.w, Some(p.b), 1)?;
    let x = tape.sigmoid(x)?;
    tape.reshape(x, &s[..2])
}

/// Per-frame loss statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    /// Clamped foreground fraction of the target.
    pub eta: f64,
}

/// Foreground fraction of `target`, clamped to `[1/n, 1 - 1/n]`.
pub fn foreground_ratio(target: &Mask) -> f64 {
    let n = target.values.len() as f64;
    let fg = target.values.iter().sum::<f64>();
    let lo = 1.0 / n;
    (fg / n).clamp(lo, (1.0 - lo).max(lo))
}

/// Records the class-balanced cross entropy of `pred` against `target`.
pub fn weighted_bce_on_tape(tape: &mut Tape, target: &Mask, pred: Var) -> Result<(Var, f64)> {
    if target.kind != MaskKind::GroundTruth {
        return Err(Error::Config("loss target must be a binary ground-truth mask".into()));
    }
    if tape.shape(pred) != [target.height, target.width] {
        return Err(Error::shape(
            "weighted_bce",
            format!("prediction {:?} vs target {}x{}", tape.shape(pred), target.height, target.width),
        ));
    }
    let eta = foreground_ratio(target);
    let loss = tape.apply(
        Op::WeightedBce {
            target: target.to_tensor(),
            eta,
        },
        &[pred],
    )?;
    Ok((loss, eta))
}

/// `L = -sum_x (1 - eta) S log S^ + eta (1 - S) log(1 - S^)`.
pub fn weighted_bce(target: &Mask, pred: &Mask) -> Result<LossStats> {
    if pred.height != target.height || pred.width != target.width {
        return Err(Error::shape(
            "weighted_bce",
            format!("{}x{} vs {}x{}", pred.height, pred.width, target.height, target.width),
        ));
    }
    let mut tape = Tape::new();
    let p = tape.constant(pred.to_tensor())?;
    let (loss, eta) = weighted_bce_on_tape(&mut tape, target, p)?;
    Ok(LossStats {
        loss: tape.value(loss).item(),
        eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_ln_two_case() {
        let s = Mask::binary(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let p = Mask::predicted(2, 2, vec![0.5; 4]).unwrap();
        let stats = weighted_bce(&s, &p).unwrap();
        assert_eq!(stats.eta, 0.5);
        assert!((stats.loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn all_background_uses_clamped_ratio() {
        let s = Mask::binary(2, 2, vec![0.0; 4]).unwrap();
        let p = Mask::predicted(2, 2, vec![0.5; 4]).unwrap();
        let stats = weighted_bce(&s, &p).unwrap();
        assert_eq!(stats.eta, 0.25);
        assert!((stats.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let s = Mask::binary(3, 3, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = Mask::predicted(3, 3, s.values().to_vec()).unwrap();
        assert!(weighted_bce(&s, &p).unwrap().loss <= 9.0 * 1e-11);
    }

    #[test]
    fn rejects_non_binary_target() {
        assert!(Mask::binary(1, 2, vec![0.5, 1.0]).is_err());
        let s = Mask::predicted(1, 2, vec![0.5, 1.0]).unwrap();
        let p = Mask::predicted(1, 2, vec![0.5, 1.0]).unwrap();
        assert!(weighted_bce(&s, &p).is_err());
    }

    #[test]
    fn zero_weight_heads_output_half() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_fn(&[3, 3, 2], |i| i as f64 * 0.1)).unwrap();
        let h = tape.constant(Tensor::from_fn(&[3, 3, 2], |i| -(i as f64))).unwrap();
        let zero_readout = init_readout(2, 4, 0).unwrap().map(|_, t| Tensor::zeros(t.shape()));
        let zero_aux = init_aux(2, 0).unwrap().map(|_, t| Tensor::zeros(t.shape()));
        let rp = zero_readout.bind_frozen(&mut tape).unwrap();
        let ap = zero_aux.bind_frozen(&mut tape).unwrap();
        let s = readout(&mut tape, h, v, &rp).unwrap();
        let a = aux_static_predict(&mut tape, v, &ap).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5; 9]);
        assert_eq!(tape.value(a).data(), &[0.5; 9]);
        assert_eq!(tape.shape(s), &[3, 3]);
    }

    #[test]
    fn upsample_constant_and_bounds() {
        let m = Mask::predicted(2, 2, vec![0.2, 0.8, 0.8, 0.2]).unwrap();
        let up = m.upsample(4).unwrap();
        assert_eq!((up.height(), up.width()), (8, 8));
        assert!(up.values().iter().all(|v| (0.2..=0.8).contains(v)));
        assert_eq!(up.at(0, 0), 0.2);
    }
}
