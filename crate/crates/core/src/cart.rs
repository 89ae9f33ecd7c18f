//! CART regression trees.
//!
//! A split minimises the total within-child sum of squares over the
//! candidate dimensions and the midpoints between consecutive distinct
//! feature values. Growth either follows the occupancy rule (split every
//! node holding more than `nodesize` observations) or, when a leaf budget
//! `maxnodes` is set, best-first by largest gain.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::sampling::subsample_without_replacement;
use crate::tree::{RegressionTree, Split};

/// Growth parameters for one CART tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CartParams {
    pub mtry: usize,
    pub nodesize: usize,
    pub maxnodes: Option<usize>,
}

impl CartParams {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.mtry == 0 || self.mtry > d {
            return Err(Error::invalid(format!("mtry must lie in 1..={d}, got {}", self.mtry)));
        }
        if self.nodesize == 0 {
            return Err(Error::invalid("nodesize must be at least 1"));
        }
        if let Some(m) = self.maxnodes {
            if m < 2 {
                return Err(Error::invalid(format!("maxnodes must be at least 2, got {m}")));
            }
        }
        Ok(())
    }
}

/// Midpoint of two consecutive distinct values, kept strictly below `hi`.
#[inline]
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Two-pass sum of squared deviations from the mean, in iteration order.
pub fn sum_of_squares(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum()
}

/// Tolerance under which two candidate splits count as tied. Scaled to the
/// node's sum of squares plus the rounding floor of the centring step.
pub fn tie_tolerance(parent_sse: f64, mean: f64, n: usize) -> f64 {
    1e-9 * parent_sse + f64::EPSILON * n as f64 * mean * mean
}

/// Impurity decrease of `split` on the node data, recomputed from scratch.
pub fn split_gain(data: &Dataset, indices: &[usize], dimension: usize, threshold: f64) -> f64 {
    let y = data.responses();
    let all = indices.iter().map(|&i| y[i]);
    let left = indices.iter().filter(|&&i| data.feature(i, dimension) <= threshold).map(|&i| y[i]);
    let right = indices.iter().filter(|&&i| data.feature(i, dimension) > threshold).map(|&i| y[i]);
    (sum_of_squares(all) - sum_of_squares(left) - sum_of_squares(right)).max(0.0)
}

/// Best variance-reducing split of the node `indices` (multiplicity allowed)
/// over `candidate_dims`.
///
/// Among candidates whose child sum of squares is within [`tie_tolerance`] of
/// the minimum, the lowest dimension and then the lowest threshold wins.
/// Returns `None` when every candidate dimension is constant on the node.
pub fn best_split(data: &Dataset, indices: &[usize], candidate_dims: &[usize]) -> Result<Option<Split>> {
    if indices.len() < 2 {
        return Err(Error::invalid(format!(
            "best_split needs at least 2 points, got {}",
            indices.len()
        )));
    }
    if candidate_dims.is_empty() {
        return Err(Error::invalid("best_split needs at least one candidate dimension"));
    }
    if let Some(&bad) = candidate_dims.iter().find(|&&j| j >= data.d()) {
        return Err(Error::DimensionMismatch { expected: data.d(), actual: bad + 1 });
    }
    let y = data.responses();
    let n = indices.len();
    let mean = indices.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let parent_sse: f64 = indices.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum();
    let tol = tie_tolerance(parent_sse, mean, n);

    let mut dims = candidate_dims.to_vec();
    dims.sort_unstable();
    dims.dedup();

    // (dimension, threshold, between-children score); larger score = smaller
    // child sum of squares, since score = parent_sse - children_sse.
    let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &j in &dims {
        pairs.clear();
        pairs.extend(indices.iter().map(|&i| (data.feature(i, j), y[i] - mean)));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += pairs[k].1;
            if pairs[k].0 < pairs[k + 1].0 {
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                candidates.push((j, midpoint(pairs[k].0, pairs[k + 1].0), score));
            }
        }
    }
    let Some(best_score) = candidates.iter().map(|c| c.2).max_by(f64::total_cmp) else {
        return Ok(None);
    };
    // candidates are already in (dimension, threshold) order
    let &(dimension, threshold, _) = candidates
        .iter()
        .find(|c| best_score - c.2 <= tol)
        .expect("the maximum is within tolerance of itself");
    let gain = split_gain(data, indices, dimension, threshold);
    Ok(Some(Split { dimension, threshold, gain }))
}

fn mean_of(data: &Dataset, indices: &[usize]) -> f64 {
    let y = data.responses();
    indices.iter().map(|&i| y[i]).sum::<f64>() / indices.len() as f64
}

fn partition(data: &Dataset, indices: &[usize], split: &Split) -> (Vec<usize>, Vec<usize>) {
    indices
        .iter()
        .partition(|&&i| data.feature(i, split.dimension) <= split.threshold)
}

/// A split is worth taking under best-first growth only if its gain clears
/// the rounding noise of the node's responses.
fn is_positive_gain(data: &Dataset, indices: &[usize], gain: f64) -> bool {
    let y = data.responses();
    let scale: f64 = indices.iter().map(|&i| y[i] * y[i]).sum();
    gain > f64::EPSILON * scale
}

fn draw_dims<R: Rng + ?Sized>(d: usize, mtry: usize, rng: &mut R) -> Result<Vec<usize>> {
    let mut dims = subsample_without_replacement(d, mtry, rng)?;
    dims.sort_unstable();
    Ok(dims)
}

/// Grows one CART tree on `indices` (duplicates allowed, e.g. a bootstrap
/// sample). `mtry` dimensions are drawn without replacement at every node.
///
/// Without `maxnodes` a node is split while it holds more than `nodesize`
/// observations and some candidate dimension is non-constant; zero-gain
/// splits are taken. With `maxnodes` the leaf with the largest positive gain
/// is split until the budget is reached; only leaves holding more than
/// `nodesize` observations are eligible. Candidate dimensions are drawn when
/// a node is created, so a tree grown with a smaller budget is a prefix of
/// one grown with a larger budget from the same generator state.
pub fn grow_cart_tree<R: Rng + ?Sized>(
    data: &Dataset,
    indices: &[usize],
    params: CartParams,
    rng: &mut R,
) -> Result<RegressionTree> {
    if indices.is_empty() {
        return Err(Error::EmptyData("cannot grow a tree on zero observations"));
    }
    params.validate(data.d())?;
    let mut tree = RegressionTree::with_root(data.d(), indices.len(), mean_of(data, indices));
    match params.maxnodes {
        None => grow_by_occupancy(data, indices, params, rng, &mut tree)?,
        Some(budget) => grow_best_first(data, indices, params, budget, rng, &mut tree)?,
    }
    Ok(tree)
}

fn grow_by_occupancy<R: Rng + ?Sized>(
    data: &Dataset,
    indices: &[usize],
    params: CartParams,
    rng: &mut R,
    tree: &mut RegressionTree,
) -> Result<()> {
    let mut stack = vec![(0usize, indices.to_vec())];
    while let Some((id, idx)) = stack.pop() {
        if idx.len() <= params.nodesize || idx.len() < 2 {
            continue;
        }
        let dims = draw_dims(data.d(), params.mtry, rng)?;
        let Some(split) = best_split(data, &idx, &dims)? else {
            continue;
        };
        let (l, r) = partition(data, &idx, &split);
        let (lid, rid) = tree.split_leaf(
            id,
            split,
            (l.len(), mean_of(data, &l)),
            (r.len(), mean_of(data, &r)),
        );
        // right pushed first so the left subtree is grown first
        stack.push((rid, r));
        stack.push((lid, l));
    }
    Ok(())
}

struct Frontier {
    gain: f64,
    id: usize,
    split: Split,
    indices: Vec<usize>,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // max-heap: largest gain first, then the oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then_with(|| other.id.cmp(&self.id))
    }
}

fn evaluate_leaf<R: Rng + ?Sized>(
    data: &Dataset,
    id: usize,
    indices: Vec<usize>,
    params: CartParams,
    rng: &mut R,
) -> Result<Option<Frontier>> {
    if indices.len() <= params.nodesize || indices.len() < 2 {
        return Ok(None);
    }
    let dims = draw_dims(data.d(), params.mtry, rng)?;
    Ok(best_split(data, &indices, &dims)?
        .filter(|s| is_positive_gain(data, &indices, s.gain))
        .map(|split| Frontier { gain: split.gain, id, split, indices }))
}

fn grow_best_first<R: Rng + ?Sized>(
    data: &Dataset,
    indices: &[usize],
    params: CartParams,
    budget: usize,
    rng: &mut R,
    tree: &mut RegressionTree,
) -> Result<()> {
    let mut heap = BinaryHeap::new();
    heap.extend(evaluate_leaf(data, 0, indices.to_vec(), params, rng)?);
    let mut leaves = 1;
    while leaves < budget {
        let Some(best) = heap.pop() else { break };
        let (l, r) = partition(data, &best.indices, &best.split);
        let (lid, rid) = tree.split_leaf(
            best.id,
            best.split,
            (l.len(), mean_of(data, &l)),
            (r.len(), mean_of(data, &r)),
        );
        leaves += 1;
        heap.extend(evaluate_leaf(data, lid, l, params, rng)?);
        heap.extend(evaluate_leaf(data, rid, r, params, rng)?);
    }
    Ok(())
}
