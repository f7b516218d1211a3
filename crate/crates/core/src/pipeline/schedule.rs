//! Test-time node grouping for videos and co-segmentation.

use crate::error::{Error, Result};
use crate::synth::segments;

/// Partition of `0..n` into interleaved subsets `{t, t + T, t + 2T, ...}`
/// with `T = ceil(n / n_prime)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InferenceSchedule {
    n: usize,
    n_prime: usize,
    subsets: Vec<Vec<usize>>,
}

impl InferenceSchedule {
    pub fn new(n: usize, n_prime: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("cannot schedule an empty video".into()));
        }
        if n_prime == 0 {
            return Err(Error::Config("subset size must be positive".into()));
        }
        let t = n.div_ceil(n_prime);
        let subsets = (0..t).map(|s| (s..n).step_by(t).collect()).collect();
        Ok(InferenceSchedule { n, n_prime, subsets })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_prime(&self) -> usize {
        self.n_prime
    }

    /// Frame interval `T` within a subset, which is also the subset count.
    pub fn interval(&self) -> usize {
        self.subsets.len()
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }
}

/// Groups of the images other than `target`, in dataset order: `T =
/// ceil((n - 1) / (n_prime - 1))` contiguous groups of near-equal size.
/// A lone image yields no groups.
pub fn iocs_groups(n: usize, target: usize, n_prime: usize) -> Result<Vec<Vec<usize>>> {
    if target >= n {
        return Err(Error::Config(format!("target {target} out of range for {n} images")));
    }
    let others: Vec<usize> = (0..n).filter(|&i| i != target).collect();
    if others.is_empty() {
        return Ok(Vec::new());
    }
    if n_prime < 2 {
        return Err(Error::Config("co-segmentation graphs need room for at least one other image".into()));
    }
    let t = others.len().div_ceil(n_prime - 1);
    Ok(segments(others.len(), t)?.into_iter().map(|r| others[r].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaved_subsets() {
        let s = InferenceSchedule::new(10, 5).unwrap();
        assert_eq!(s.interval(), 2);
        assert_eq!(s.subsets(), &[vec![0, 2, 4, 6, 8], vec![1, 3, 5, 7, 9]]);
        let s = InferenceSchedule::new(7, 5).unwrap();
        assert_eq!(s.subsets(), &[vec![0, 2, 4, 6], vec![1, 3, 5]]);
        assert_eq!(InferenceSchedule::new(5, 5).unwrap().subsets(), &[vec![0, 1, 2, 3, 4]]);
        assert!(InferenceSchedule::new(0, 5).is_err());
    }

    #[test]
    fn coseg_groups() {
        assert_eq!(iocs_groups(7, 3, 3).unwrap(), vec![vec![0, 1], vec![2, 4], vec![5, 6]]);
        assert_eq!(iocs_groups(1, 0, 5).unwrap(), Vec::<Vec<usize>>::new());
        assert_eq!(iocs_groups(5, 0, 5).unwrap(), vec![vec![1, 2, 3, 4]]);
        assert!(iocs_groups(3, 3, 3).is_err());
        assert!(iocs_groups(3, 0, 1).is_err());
    }
}
