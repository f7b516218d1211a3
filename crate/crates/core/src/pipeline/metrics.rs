//! Region similarity (IoU) and boundary F-measure.

use crate::error::{Error, Result};
use crate::head::Mask;

fn same_shape(op: &'static str, a: &Mask, b: &Mask) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok(())
}

/// Intersection over union of the masks binarised at 0.5; 1 when both are
/// empty.
pub fn region_similarity(pred: &Mask, gt: &Mask) -> Result<f64> {
    same_shape("region_similarity", pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.binarize().into_iter().zip(gt.binarize()) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Foreground pixels touching the image border or a 4-neighbour background.
pub fn boundary(mask: &Mask) -> Vec<bool> {
    let (h, w) = (mask.height(), mask.width());
    let fg = mask.binarize();
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !fg[y * w + x] {
                continue;
            }
            out[y * w + x] = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !fg[(y - 1) * w + x]
                || !fg[(y + 1) * w + x]
                || !fg[y * w + x - 1]
                || !fg[y * w + x + 1];
        }
    }
    out
}

/// `max(1, round(0.0075 * diagonal))`.
pub fn default_tolerance(height: usize, width: usize) -> usize {
    ((0.0075 * (height as f64).hypot(width as f64)).round() as usize).max(1)
}

/// Square dilation by `r` (Chebyshev ball), done separably.
fn dilate(src: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let mut rows = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[y * w + x] = src[y * w + lo..=y * w + hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
        }
    }
    out
}

/// Boundary F-measure with a Chebyshev distance tolerance `theta`.
pub fn boundary_f(pred: &Mask, gt: &Mask, theta: usize) -> Result<f64> {
    same_shape("boundary_f", pred, gt)?;
    let (h, w) = (pred.height(), pred.width());
    let (bp, bg) = (boundary(pred), boundary(gt));
    let (np, ng) = (bp.iter().filter(|&&b| b).count(), bg.iter().filter(|&&b| b).count());
    match (np, ng) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let near_gt = dilate(&bg, h, w, theta);
    let near_pred = dilate(&bp, h, w, theta);
    let hits = |b: &[bool], near: &[bool]| b.iter().zip(near).filter(|(&b, &n)| b && n).count();
    let precision = hits(&bp, &near_gt) as f64 / np as f64;
    let recall = hits(&bg, &near_pred) as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}
