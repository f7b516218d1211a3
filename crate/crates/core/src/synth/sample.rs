//! Training-clip sampling and mask downsampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::head::Mask;

/// Splits `0..n` into `parts` contiguous ranges of near-equal length, the
/// remainder going to the leading ranges.
pub fn segments(n: usize, parts: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if parts == 0 || parts > n {
        return Err(Error::Config(format!("cannot split {n} frames into {parts} segments")));
    }
    let (base, extra) = (n / parts, n % parts);
    let mut start = 0;
    Ok((0..parts)
        .map(|s| {
            let len = base + usize::from(s < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// One uniformly drawn index per segment, in temporal order.
pub fn sample_clip_indices<R: Rng>(n: usize, n_prime: usize, rng: &mut R) -> Result<Vec<usize>> {
    Ok(segments(n, n_prime)?.into_iter().map(|r| rng.gen_range(r)).collect())
}

pub fn sample_training_clip<T: Clone>(frames: &[T], n_prime: usize, seed: u64) -> Result<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_clip_indices(frames.len(), n_prime, &mut rng)?
        .into_iter()
        .map(|i| frames[i].clone())
        .collect())
}

/// Block majority vote: a cell is foreground when at least half of its
/// `d x d` block is.
pub fn downsample_mask(mask: &Mask, d: usize) -> Result<Mask> {
    let (h, w) = (mask.height(), mask.width());
    if d == 0 || h % d != 0 || w % d != 0 {
        return Err(Error::shape(
            "downsample_mask",
            format!("{h}x{w} mask not divisible by {d}"),
        ));
    }
    let fg = mask.binarize();
    let (oh, ow) = (h / d, w / d);
    let mut out = vec![false; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut count = 0;
            for y in oy * d..(oy + 1) * d {
                count += fg[y * w + ox * d..y * w + (ox + 1) * d].iter().filter(|&&b| b).count();
            }
            out[oy * ow + ox] = 2 * count >= d * d;
        }
    }
    Mask::from_bools(oh, ow, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_spread_remainder_forward() {
        let s = segments(11, 3).unwrap();
        assert_eq!(s, vec![0..4, 4..8, 8..11]);
        assert!(segments(2, 3).is_err());
        assert!(segments(2, 0).is_err());
    }

    #[test]
    fn full_clip_is_identity() {
        let frames: Vec<usize> = (0..6).collect();
        assert_eq!(sample_training_clip(&frames, 6, 9).unwrap(), frames);
    }

    #[test]
    fn checkerboard_ties_go_to_foreground() {
        let fg: Vec<bool> = (0..16).map(|i| (i / 4 + i % 4) % 2 == 0).collect();
        let m = Mask::from_bools(4, 4, &fg).unwrap();
        let d = downsample_mask(&m, 2).unwrap();
        assert!(d.values().iter().all(|&v| v == 1.0));
        assert!(downsample_mask(&m, 3).is_err());
    }
}
