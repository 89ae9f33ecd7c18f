//! Median trees: every cell is cut `k_n` times, each time at the empirical
//! median of a uniformly drawn coordinate. The observation sitting at the
//! median is not passed down, so the remaining points stay uniformly
//! distributed on the child cells.

use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::sampling::uniform_index;
use crate::tree::{RegressionTree, Split};

/// Subsample size `a_n` and depth `k_n`, with `a_n 2^{-k_n} >= 4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MedianTreeParams {
    pub a_n: usize,
    pub k_n: usize,
}

impl MedianTreeParams {
    pub fn new(a_n: usize, k_n: usize) -> Result<Self> {
        let p = Self { a_n, k_n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a_n < 4 {
            return Err(Error::invalid(format!("median trees need a_n >= 4, got {}", self.a_n)));
        }
        if self.k_n > Self::max_depth(self.a_n) {
            return Err(Error::invalid(format!(
                "a_n * 2^-k_n must be at least 4: a_n = {}, k_n = {} gives {}",
                self.a_n,
                self.k_n,
                self.a_n as f64 / 2f64.powi(self.k_n as i32)
            )));
        }
        Ok(())
    }

    /// Largest admissible depth for a subsample of size `a_n`,
    /// i.e. `floor(log2(a_n)) - 2`.
    pub fn max_depth(a_n: usize) -> usize {
        if a_n < 4 {
            0
        } else {
            (usize::BITS - 1 - a_n.leading_zeros()) as usize - 2
        }
    }

    /// The nominal leaf occupancy `a_n 2^{-k_n}`.
    pub fn nodesize(&self) -> f64 {
        self.a_n as f64 / 2f64.powi(self.k_n as i32)
    }
}

/// Order statistic `X_(l)` with `l = floor(n/2) + 1` (1-based), the unique
/// one satisfying `F_n(X_(l-1)) <= 1/2 < F_n(X_(l))`.
pub fn empirical_median(values: &[f64]) -> Result<(usize, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyData("median of an empty list"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let rank = values.len() / 2 + 1;
    Ok((rank, sorted[rank - 1]))
}

/// Grows a median tree of depth `params.k_n` on the distinct rows `indices`.
///
/// Points strictly below the cut go left, strictly above go right; every
/// point equal to the cut value is dropped. The split gain records the
/// parent's sum of squares minus those of the two children.
pub fn grow_median_tree<R: Rng + ?Sized>(
    data: &Dataset,
    indices: &[usize],
    params: MedianTreeParams,
    rng: &mut R,
) -> Result<RegressionTree> {
    params.validate()?;
    if indices.len() != params.a_n {
        return Err(Error::invalid(format!(
            "median tree expects exactly a_n = {} points, got {}",
            params.a_n,
            indices.len()
        )));
    }
    let mut seen = indices.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("median trees require distinct rows (no bootstrap)"));
    }
    if let Some(&bad) = seen.last().filter(|&&i| i >= data.n()) {
        return Err(Error::invalid(format!("row index {bad} out of range")));
    }

    let y = data.responses();
    let mean = |idx: &[usize]| idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
    let sse = |idx: &[usize]| crate::cart::sum_of_squares(idx.iter().map(|&i| y[i]));
    let d = data.d();

    let mut tree = RegressionTree::with_root(d, indices.len(), mean(indices));
    let mut stack = vec![(0usize, 0usize, indices.to_vec())];
    let mut values = Vec::new();
    while let Some((id, depth, idx)) = stack.pop() {
        if depth == params.k_n {
            continue;
        }
        let dimension = uniform_index(rng, d);
        values.clear();
        values.extend(idx.iter().map(|&i| data.feature(i, dimension)));
        let (_, cut) = empirical_median(&values)?;
        let left: Vec<usize> = idx.iter().copied().filter(|&i| data.feature(i, dimension) < cut).collect();
        let right: Vec<usize> = idx.iter().copied().filter(|&i| data.feature(i, dimension) > cut).collect();
        if left.is_empty() || right.is_empty() {
            return Err(Error::DegenerateMedianSplit { depth, left: left.len(), right: right.len() });
        }
        let gain = (sse(&idx) - sse(&left) - sse(&right)).max(0.0);
        let (lid, rid) = tree.split_leaf(
            id,
            Split { dimension, threshold: cut, gain },
            (left.len(), mean(&left)),
            (right.len(), mean(&right)),
        );
        stack.push((rid, depth + 1, right));
        stack.push((lid, depth + 1, left));
    }
    Ok(tree)
}
