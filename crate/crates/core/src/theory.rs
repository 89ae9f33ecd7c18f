//! Risk bound for median forests and the quantities derived from it.
//!
//! For a median forest of depth `k` in dimension `d`, with noise variance at
//! most `σ²` and an `L`-Lipschitz regression function, the pointwise risk is
//! bounded by
//!
//! ```text
//! 2σ² 2^k / n  +  d L² C β^k,     β = 1 - 3/(4d),  C = exp(12/(4d - 3)).
//! ```
//!
//! The second term comes from a bound on the second moment of each side
//! length of the cell containing the query point, which is a product of
//! independent beta variables given the chain of cell occupancies. This
//! module evaluates the bound, its minimiser, the induced subsample size and
//! rates, and checks the side-length moment bound exactly and by simulation.

use std::f64::consts::LN_2;

use rand::Rng;

use crate::dataset::{Dataset, Origin};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::median_tree::{grow_median_tree, MedianTreeParams};
use crate::sampling::derive_stream;

/// `β = 1 - 3/(4d)`.
pub fn beta(d: usize) -> f64 {
    1.0 - 3.0 / (4.0 * d as f64)
}

/// `C = exp(12/(4d - 3))`, the constant of the side-length moment bound.
pub fn lemma_constant(d: usize) -> f64 {
    (12.0 / (4.0 * d as f64 - 3.0)).exp()
}

/// Dimension factor in front of `L² C β^k` in the approximation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApproxWeight {
    /// `d`, as in the statement of the bound.
    #[default]
    Linear,
    /// `d^{3/2}`, as used in the optimisation of the pruned forest.
    ThreeHalves,
}

impl ApproxWeight {
    pub fn factor(self, d: usize) -> f64 {
        match self {
            ApproxWeight::Linear => d as f64,
            ApproxWeight::ThreeHalves => (d as f64).powf(1.5),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "d" | "linear" => Ok(ApproxWeight::Linear),
            "d3/2" | "three-halves" => Ok(ApproxWeight::ThreeHalves),
            other => Err(Error::invalid(format!("unknown approximation weight `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ApproxWeight::Linear => "d",
            ApproxWeight::ThreeHalves => "d3/2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub d: usize,
    pub n: f64,
    pub sigma2: f64,
    pub lipschitz: f64,
    pub k: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.n >= 1.0 && self.n.is_finite()) {
            return Err(Error::invalid(format!("n must be at least 1, got {}", self.n)));
        }
        if !ok(self.sigma2) || !ok(self.lipschitz) || !ok(self.k) {
            return Err(Error::invalid("sigma2, L and k must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// `2σ² 2^k / n`.
pub fn estimation_term(inputs: &BoundInputs) -> f64 {
    2.0 * inputs.sigma2 * inputs.k.exp2() / inputs.n
}

/// `w(d) L² C β^k`.
pub fn approximation_term(inputs: &BoundInputs, weight: ApproxWeight) -> f64 {
    weight.factor(inputs.d)
        * inputs.lipschitz
        * inputs.lipschitz
        * lemma_constant(inputs.d)
        * beta(inputs.d).powf(inputs.k)
}

pub fn risk_bound(inputs: &BoundInputs) -> f64 {
    risk_bound_weighted(inputs, ApproxWeight::Linear)
}

pub fn risk_bound_weighted(inputs: &BoundInputs, weight: ApproxWeight) -> f64 {
    estimation_term(inputs) + approximation_term(inputs, weight)
}

fn check_positive(sigma2: f64, lipschitz: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite() && lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::invalid(format!(
            "optimal depth needs sigma2 > 0 and L > 0, got sigma2 = {sigma2}, L = {lipschitz}"
        )));
    }
    Ok(())
}

/// `C₃ = ln(-w(d) L² C ln β / (2σ² ln 2))`.
pub fn c3(d: usize, sigma2: f64, lipschitz: f64, weight: ApproxWeight) -> Result<f64> {
    check_positive(sigma2, lipschitz)?;
    let num = -weight.factor(d) * lipschitz * lipschitz * lemma_constant(d) * beta(d).ln();
    Ok((num / (2.0 * sigma2 * LN_2)).ln())
}

/// `ln 2 - ln β`, the common denominator of the depth and rate formulas.
pub fn depth_denominator(d: usize) -> f64 {
    LN_2 - beta(d).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthOptimum {
    pub k_star_real: f64,
    pub k_star_int: usize,
    pub c3: f64,
}

/// Minimiser of the bound over real `k`, and the better of its two integer
/// neighbours (clipped at zero, floor on ties).
pub fn optimal_depth(d: usize, n: f64, sigma2: f64, lipschitz: f64) -> Result<DepthOptimum> {
    optimal_depth_weighted(d, n, sigma2, lipschitz, ApproxWeight::Linear)
}

pub fn optimal_depth_weighted(
    d: usize,
    n: f64,
    sigma2: f64,
    lipschitz: f64,
    weight: ApproxWeight,
) -> Result<DepthOptimum> {
    BoundInputs { d, n, sigma2, lipschitz, k: 0.0 }.validate()?;
    let c3 = c3(d, sigma2, lipschitz, weight)?;
    let k_star_real = (n.ln() + c3) / depth_denominator(d);
    let bound_at = |k: f64| risk_bound_weighted(&BoundInputs { d, n, sigma2, lipschitz, k }, weight);
    let lo = k_star_real.floor().max(0.0);
    let hi = k_star_real.ceil().max(0.0);
    let k_star_int = if bound_at(hi) < bound_at(lo) { hi } else { lo } as usize;
    Ok(DepthOptimum { k_star_real, k_star_int, c3 })
}

/// `ln 2 / (ln 2 - ln β)`: growth exponent of the optimal subsample size.
pub fn subsample_exponent(d: usize) -> f64 {
    LN_2 / depth_denominator(d)
}

/// `ln β / (ln 2 - ln β)`: rate exponent of the median forest bound.
pub fn rate_exponent(d: usize) -> f64 {
    beta(d).ln() / depth_denominator(d)
}

/// `-3 / (4 d ln 2 + 3)`: rate exponent of the centred forest bound.
pub fn centred_rate_exponent(d: usize) -> f64 {
    -3.0 / (4.0 * d as f64 * LN_2 + 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleSize {
    pub c4: f64,
    pub exponent: f64,
    /// `C₄ n^{exponent}` before clamping.
    pub raw: f64,
    /// `min(raw, n)`.
    pub value: f64,
    pub clamped: bool,
}

/// Smallest subsample size for which fully grown median trees
/// (`k_n = log2(a_n) - 2`) reach the optimal depth:
/// `a_n = 4 · 2^{C₃/(ln2 - lnβ)} · n^{ln2/(ln2 - lnβ)}`, clamped to `n`.
pub fn min_subsample_size(d: usize, n: f64, sigma2: f64, lipschitz: f64) -> Result<SubsampleSize> {
    min_subsample_size_weighted(d, n, sigma2, lipschitz, ApproxWeight::Linear)
}

pub fn min_subsample_size_weighted(
    d: usize,
    n: f64,
    sigma2: f64,
    lipschitz: f64,
    weight: ApproxWeight,
) -> Result<SubsampleSize> {
    let c3 = c3(d, sigma2, lipschitz, weight)?;
    let exponent = subsample_exponent(d);
    let c4 = 4.0 * (c3 * exponent).exp();
    let raw = c4 * n.powf(exponent);
    Ok(SubsampleSize { c4, exponent, raw, value: raw.min(n), clamped: raw > n })
}

/// The simplified closed form `4 (3 L² C / (8 σ² ln 2))^{ln2/(ln2 - lnβ)}`,
/// which replaces `-d ln β` by its large-`d` limit `3/4`.
pub fn c4_large_d(d: usize, sigma2: f64, lipschitz: f64) -> Result<f64> {
    check_positive(sigma2, lipschitz)?;
    let base = 3.0 * lipschitz * lipschitz * lemma_constant(d) / (8.0 * sigma2 * LN_2);
    Ok(4.0 * base.powf(subsample_exponent(d)))
}

/// Every evaluated constant for one `(d, n, σ², L, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub weight: ApproxWeight,
    pub beta: f64,
    pub c: f64,
    pub bound_value: f64,
    pub c3: f64,
    pub c4: f64,
    pub k_star_real: f64,
    pub k_star_int: usize,
    pub a_n_min: f64,
    pub a_n_min_clamped: bool,
    pub subsample_exponent: f64,
    pub rate_exponent: f64,
    pub centred_rate_exponent: f64,
}

pub fn bound_report(inputs: &BoundInputs) -> Result<BoundReport> {
    bound_report_weighted(inputs, ApproxWeight::Linear)
}

pub fn bound_report_weighted(inputs: &BoundInputs, weight: ApproxWeight) -> Result<BoundReport> {
    inputs.validate()?;
    let depth = optimal_depth_weighted(inputs.d, inputs.n, inputs.sigma2, inputs.lipschitz, weight)?;
    let sub = min_subsample_size_weighted(inputs.d, inputs.n, inputs.sigma2, inputs.lipschitz, weight)?;
    Ok(BoundReport {
        inputs: *inputs,
        weight,
        beta: beta(inputs.d),
        c: lemma_constant(inputs.d),
        bound_value: risk_bound_weighted(inputs, weight),
        c3: depth.c3,
        c4: sub.c4,
        k_star_real: depth.k_star_real,
        k_star_int: depth.k_star_int,
        a_n_min: sub.value,
        a_n_min_clamped: sub.clamped,
        subsample_exponent: sub.exponent,
        rate_exponent: rate_exponent(inputs.d),
        centred_rate_exponent: centred_rate_exponent(inputs.d),
    })
}

/// Occupancies `n_0 >= n_1 >= … >= n_k` of the successive cells containing
/// a point, with `2 n_j <= n_{j-1}` and `n_k >= 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountSequence(Vec<usize>);

impl CountSequence {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        match counts.last() {
            None => return Err(Error::EmptyData("count sequence needs n_0")),
            Some(0) => return Err(Error::invalid("the last cell must hold at least one point")),
            _ => {}
        }
        if let Some(w) = counts.windows(2).find(|w| 2 * w[1] > w[0]) {
            return Err(Error::invalid(format!(
                "halving chain violated: {} follows {}",
                w[1], w[0]
            )));
        }
        Ok(Self(counts))
    }

    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    /// Number of cuts `k`.
    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }
}

/// Second moment of `Beta(a, b)`: `a(a+1) / ((a+b)(a+b+1))`.
pub fn beta_second_moment(a: f64, b: f64) -> f64 {
    a * (a + 1.0) / ((a + b) * (a + b + 1.0))
}

/// `E[V²]` for one side of the cell given the occupancy chain:
/// `∏_j [(d-1)/d + (1/d) E[Beta(n_j + 1, n_{j-1} - n_j)²]]`.
pub fn exact_side_second_moment(seq: &CountSequence, d: usize) -> f64 {
    let d = d as f64;
    seq.0
        .windows(2)
        .map(|w| {
            let (parent, child) = (w[0] as f64, w[1] as f64);
            let m2 = (child + 1.0) * (child + 2.0) / ((parent + 1.0) * (parent + 2.0));
            (d - 1.0) / d + m2 / d
        })
        .product()
}

/// Which cell of each simulated tree is measured.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CellSelection {
    /// The leaf containing the centre of the cube.
    #[default]
    Centre,
    /// The leaf containing an arbitrary fixed point.
    Point(Vec<f64>),
    /// A leaf reached by fair coin flips, independent of the data.
    RandomPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideMomentEstimate {
    /// Mean of the squared first side length over trials.
    pub estimate: f64,
    pub std_error: f64,
    /// Mean of [`exact_side_second_moment`] over the realised chains.
    pub exact_mean: f64,
    pub exact_std_error: f64,
    /// Standard error of the paired differences `V² - E[V² | chain]`.
    pub paired_std_error: f64,
    pub chains: Vec<CountSequence>,
    pub trials: usize,
}

impl SideMomentEstimate {
    /// `C β^k` from the side-length moment bound.
    pub fn lemma_bound(d: usize, k: usize) -> f64 {
        lemma_constant(d) * beta(d).powi(k as i32)
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Grows `trials` median trees of depth `k` on fresh uniform samples of
/// size `a_n` in `[0,1]^d`, measures the squared length of side 1 of the
/// selected leaf cell, and records each realised occupancy chain.
/// Trial `t` uses stream `(master_seed, t)`.
pub fn mc_side_second_moment(
    a_n: usize,
    k: usize,
    d: usize,
    trials: usize,
    master_seed: u64,
    selection: &CellSelection,
    exec: Exec,
) -> Result<SideMomentEstimate> {
    let params = MedianTreeParams::new(a_n, k)?;
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let query = match selection {
        CellSelection::Centre => Some(vec![0.5; d]),
        CellSelection::Point(x) => {
            crate::tree::check_query(x, d)?;
            Some(x.clone())
        }
        CellSelection::RandomPath => None,
    };
    let indices: Vec<usize> = (0..a_n).collect();
    let results = exec.try_map(trials, |t| -> Result<(f64, CountSequence)> {
        let mut rng = derive_stream(master_seed, t as u64);
        let features: Vec<f64> = (0..a_n * d).map(|_| rng.random::<f64>()).collect();
        let data = Dataset::new(features, vec![0.0; a_n], d, Origin::External)?;
        let tree = grow_median_tree(&data, &indices, params, &mut rng)?;
        let leaf = match &query {
            Some(x) => tree.leaf_of(x),
            None => {
                let mut id = 0;
                while let crate::tree::NodeKind::Internal { left, right, .. } = tree.node(id).kind {
                    id = if rng.random::<bool>() { left } else { right };
                }
                id
            }
        };
        let side = tree.cell(leaf).side(0);
        let chain = CountSequence::new(tree.path_to(leaf).iter().map(|&i| tree.node(i).count).collect())?;
        Ok((side * side, chain))
    })?;
    let squares: Vec<f64> = results.iter().map(|r| r.0).collect();
    let exact: Vec<f64> = results.iter().map(|r| exact_side_second_moment(&r.1, d)).collect();
    let diffs: Vec<f64> = squares.iter().zip(&exact).map(|(s, e)| s - e).collect();
    let (estimate, std_error) = mean_and_se(&squares);
    let (exact_mean, exact_std_error) = mean_and_se(&exact);
    let (_, paired_std_error) = mean_and_se(&diffs);
    Ok(SideMomentEstimate {
        estimate,
        std_error,
        exact_mean,
        exact_std_error,
        paired_std_error,
        chains: results.into_iter().map(|r| r.1).collect(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn beta_and_constant() {
        assert_eq!(beta(1), 0.25);
        assert_relative_eq!(lemma_constant(1), 12f64.exp(), max_relative = 1e-15);
        for d in 1..100 {
            assert!(beta(d) > 0.0 && beta(d) < 1.0);
            assert!(lemma_constant(d) > 1.0);
        }
    }

    #[test]
    fn bound_example_d1() {
        let b = risk_bound(&BoundInputs { d: 1, n: 1024.0, sigma2: 1.0, lipschitz: 1.0, k: 5.0 });
        let expected = 2.0 * 32.0 / 1024.0 + 12f64.exp() * 0.25f64.powi(5);
        assert_relative_eq!(b, expected, max_relative = 1e-12);
        assert_relative_eq!(b, 159.002_72, max_relative = 1e-6);
    }

    #[test]
    fn bound_vanishes_without_noise_or_slope() {
        for k in [0.0, 3.0, 17.5] {
            let b = risk_bound(&BoundInputs { d: 4, n: 77.0, sigma2: 0.0, lipschitz: 0.0, k });
            assert_eq!(b, 0.0);
        }
    }

    #[test]
    fn bound_at_depth_zero() {
        let inp = BoundInputs { d: 3, n: 50.0, sigma2: 0.7, lipschitz: 1.3, k: 0.0 };
        let expected = 2.0 * 0.7 / 50.0 + 3.0 * 1.3 * 1.3 * lemma_constant(3);
        assert_relative_eq!(risk_bound(&inp), expected, max_relative = 1e-15);
    }

    #[test]
    fn c3_is_twelve_in_dimension_one() {
        assert_relative_eq!(c3(1, 1.0, 1.0, ApproxWeight::Linear).unwrap(), 12.0, epsilon = 1e-9);
        let opt = optimal_depth(1, 1024.0, 1.0, 1.0).unwrap();
        let expected = (1024f64.ln() + 12.0) / (2f64.ln() + 4f64.ln());
        assert_relative_eq!(opt.k_star_real, expected, max_relative = 1e-12);
        assert!((opt.k_star_real - 9.104).abs() < 1e-3);
    }

    #[test]
    fn quadrupling_n_shifts_depth_by_two_thirds() {
        let a = optimal_depth(1, 1000.0, 0.5, 2.0).unwrap().k_star_real;
        let b = optimal_depth(1, 4000.0, 0.5, 2.0).unwrap().k_star_real;
        assert_relative_eq!(b - a, 2.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn nonpositive_inputs_rejected() {
        assert!(optimal_depth(2, 100.0, 0.0, 1.0).is_err());
        assert!(optimal_depth(2, 100.0, 1.0, 0.0).is_err());
        assert!(min_subsample_size(2, 100.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn subsample_size_d1() {
        assert_relative_eq!(subsample_exponent(1), 1.0 / 3.0, epsilon = 1e-12);
        let s = min_subsample_size(1, 1000.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(s.c4, 4.0 * 4f64.exp(), max_relative = 1e-12);
        assert!((s.c4 - 218.39).abs() < 0.01);
        assert!((s.raw - 2183.9).abs() < 0.1);
        assert!(s.clamped);
        assert_eq!(s.value, 1000.0);
    }

    #[test]
    fn doubling_lipschitz_scales_c4() {
        for d in [1, 3, 10] {
            let a = min_subsample_size(d, 500.0, 0.3, 1.0).unwrap().c4;
            let b = min_subsample_size(d, 500.0, 0.3, 2.0).unwrap().c4;
            assert_relative_eq!(b / a, 4f64.powf(subsample_exponent(d)), max_relative = 1e-12);
        }
    }

    #[test]
    fn large_d_closed_form_converges() {
        let exact = min_subsample_size(20_000, 1e6, 1.0, 1.0).unwrap().c4;
        let approx = c4_large_d(20_000, 1.0, 1.0).unwrap();
        assert_relative_eq!(exact, approx, max_relative = 1e-4);
    }

    #[test]
    fn exponents() {
        assert_relative_eq!(rate_exponent(1), -2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(centred_rate_exponent(1), -3.0 / (4.0 * LN_2 + 3.0), epsilon = 1e-15);
        assert!((centred_rate_exponent(1) + 0.5197).abs() < 1e-4);
        for d in 1..=50 {
            assert!(rate_exponent(d) < centred_rate_exponent(d));
            assert!(centred_rate_exponent(d) < 0.0);
            if d >= 2 {
                assert!(rate_exponent(d) > -2.0 / 3.0);
            }
        }
    }

    #[test]
    fn exact_moment_examples() {
        let root = CountSequence::new(vec![37]).unwrap();
        assert_eq!(exact_side_second_moment(&root, 3), 1.0);
        let chain = CountSequence::new(vec![2, 1]).unwrap();
        assert_relative_eq!(exact_side_second_moment(&chain, 1), 0.5, epsilon = 1e-15);
        assert_relative_eq!(exact_side_second_moment(&chain, 1), beta_second_moment(2.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(exact_side_second_moment(&chain, 2), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn chain_validation() {
        assert!(CountSequence::new(vec![]).is_err());
        assert!(CountSequence::new(vec![10, 6]).is_err());
        assert!(CountSequence::new(vec![10, 5, 0]).is_err());
        assert!(CountSequence::new(vec![10, 5, 2]).is_ok());
    }

    #[test]
    fn mc_depth_zero_is_one() {
        let est = mc_side_second_moment(8, 0, 2, 20, 1, &CellSelection::Centre, Exec::Sequential).unwrap();
        assert_eq!(est.estimate, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn mc_rejects_inadmissible_depth() {
        assert!(mc_side_second_moment(16, 3, 1, 10, 1, &CellSelection::Centre, Exec::Sequential).is_err());
    }
}
