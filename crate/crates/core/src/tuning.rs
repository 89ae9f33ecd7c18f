//! Experiment harness: leaf-budget and subsample-size sweeps against the
//! default bootstrap forest, extraction of the near-optimal parameter, the
//! proportionality study across sample sizes, and the median-forest rate
//! study.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{generate_model, split_train_test, tilde_transform, Dataset, ModelSpec, Origin};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forest::{empirical_l2_risk_with, train_forest_with, ForestConfig, Resample, TreeSpec};
use crate::median_tree::MedianTreeParams;
use crate::sampling::{derive_seed, derive_stream};
use crate::theory;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const DEFAULT_TOLERANCE: f64 = 0.05;

// stream ids below a repetition seed
const DATA_STREAM: u64 = 0;
const SPLIT_STREAM: u64 = 1;
const REFERENCE_STREAM: u64 = 2;
const GRID_STREAM_BASE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    MaxNodes,
    SampleSize,
}

impl SweepParameter {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "maxnodes" => Ok(SweepParameter::MaxNodes),
            "sampsize" => Ok(SweepParameter::SampleSize),
            other => Err(Error::invalid(format!(
                "swept parameter must be `maxnodes` or `sampsize`, got `{other}`"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::MaxNodes => "maxnodes",
            SweepParameter::SampleSize => "sampsize",
        }
    }

    /// Pruned forests use every training row per tree; subsampled forests
    /// keep the default occupancy rule.
    pub fn base_config(self, trees: usize) -> ForestConfig {
        let base = ForestConfig::breiman(0).with_trees(trees);
        match self {
            SweepParameter::MaxNodes => base.with_resample(Resample::None),
            SweepParameter::SampleSize => base,
        }
    }

    fn apply(self, base: &ForestConfig, value: usize) -> ForestConfig {
        match self {
            SweepParameter::MaxNodes => base.with_maxnodes(Some(value)),
            SweepParameter::SampleSize => base.with_resample(Resample::Subsample(value)),
        }
    }

    /// Default grid fractions of the training size.
    pub fn default_fractions(self) -> Vec<f64> {
        let (start, step): (usize, f64) = match self {
            SweepParameter::MaxNodes => (1, 0.05),
            SweepParameter::SampleSize => (1, 0.1),
        };
        let count = (1.0 / step).round() as usize;
        (start..=count).map(|i| i as f64 * step).collect()
    }
}

/// Grid values `round(f * train_size)`, deduplicated, with leaf budgets
/// raised to at least 2.
pub fn grid_from_fractions(parameter: SweepParameter, fractions: &[f64], train_size: usize) -> Vec<usize> {
    let floor = match parameter {
        SweepParameter::MaxNodes => 2,
        SweepParameter::SampleSize => 1,
    };
    let mut grid: Vec<usize> = fractions
        .iter()
        .map(|f| ((f * train_size as f64).round() as usize).clamp(floor, train_size.max(floor)))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    grid
}

pub fn train_size(n: usize, train_fraction: f64) -> usize {
    (train_fraction * n as f64).round() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub model: ModelSpec,
    pub n: usize,
    /// Tree count, tree rule and resampling of the swept forests; the seed
    /// is ignored (each forest gets its own derived seed).
    pub base_config: ForestConfig,
    pub parameter: SweepParameter,
    pub grid: Vec<usize>,
    pub repetitions: usize,
    pub master_seed: u64,
    pub train_fraction: f64,
}

impl SweepSpec {
    pub fn new(model: ModelSpec, n: usize, parameter: SweepParameter, trees: usize, repetitions: usize, master_seed: u64) -> Self {
        let grid = grid_from_fractions(
            parameter,
            &parameter.default_fractions(),
            train_size(n, DEFAULT_TRAIN_FRACTION),
        );
        Self {
            model,
            n,
            base_config: parameter.base_config(trees),
            parameter,
            grid,
            repetitions,
            master_seed,
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }

    pub fn with_grid(mut self, grid: Vec<usize>) -> Self {
        self.grid = grid;
        self
    }

    pub fn train_size(&self) -> usize {
        train_size(self.n, self.train_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("need at least one repetition"));
        }
        if self.grid.is_empty() {
            return Err(Error::invalid("sweep grid is empty"));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sweep grid must be strictly increasing"));
        }
        let train = self.train_size();
        if train == 0 || train >= self.n {
            return Err(Error::invalid(format!(
                "train fraction {} leaves an empty part for n = {}",
                self.train_fraction, self.n
            )));
        }
        match self.parameter {
            SweepParameter::MaxNodes => {
                if !matches!(self.base_config.tree, TreeSpec::Cart { .. }) {
                    return Err(Error::invalid("maxnodes sweeps need CART trees"));
                }
                if let Some(&bad) = self.grid.iter().find(|&&g| g < 2 || g > train) {
                    return Err(Error::invalid(format!(
                        "maxnodes {bad} outside 2..={train} (training size)"
                    )));
                }
            }
            SweepParameter::SampleSize => {
                if let Some(&bad) = self.grid.iter().find(|&&g| g == 0 || g > train) {
                    return Err(Error::invalid(format!(
                        "sampsize {bad} outside 1..={train} (training size)"
                    )));
                }
            }
        }
        for &g in &self.grid {
            self.parameter.apply(&self.base_config, g).validate(train, self.model.d)?;
        }
        Ok(())
    }
}

/// Seeds used by repetition `r` of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepetitionSeeds {
    pub data: u64,
    pub split: u64,
    pub reference: u64,
}

impl RepetitionSeeds {
    pub fn new(master_seed: u64, repetition: usize) -> Self {
        let rep = derive_seed(master_seed, repetition as u64);
        Self {
            data: derive_seed(rep, DATA_STREAM),
            split: derive_seed(rep, SPLIT_STREAM),
            reference: derive_seed(rep, REFERENCE_STREAM),
        }
    }

    pub fn forest(master_seed: u64, repetition: usize, value: usize) -> u64 {
        let rep = derive_seed(master_seed, repetition as u64);
        derive_seed(rep, GRID_STREAM_BASE + value as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub grid: Vec<usize>,
    pub mean_risk: Vec<f64>,
    pub std_risk: Vec<f64>,
    /// `risks[r][g]`: test risk of repetition `r` at grid point `g`.
    pub risks: Vec<Vec<f64>>,
    pub reference_risk: f64,
    pub reference_std: f64,
    pub reference_risks: Vec<f64>,
    pub optimum: usize,
    pub n: usize,
    pub train_size: usize,
    pub model_id: u32,
    pub repetitions: usize,
    pub trees: usize,
    pub master_seed: u64,
    /// Seeds actually used, one entry per repetition.
    pub seeds: Vec<RepetitionSeeds>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every `(repetition, grid point)` forest plus one default bootstrap
/// forest per repetition, all on the same train/test split of that
/// repetition. Cells run in parallel under `exec`; the aggregation order is
/// fixed.
pub fn run_sweep(spec: &SweepSpec, exec: Exec) -> Result<SweepResult> {
    spec.validate()?;
    let seeds: Vec<RepetitionSeeds> = (0..spec.repetitions)
        .map(|r| RepetitionSeeds::new(spec.master_seed, r))
        .collect();
    let splits: Vec<(Dataset, Dataset)> = exec.try_map(spec.repetitions, |r| {
        let data = generate_model(&spec.model, spec.n, seeds[r].data)?;
        split_train_test(&data, spec.train_fraction, seeds[r].split)
    })?;
    let cells = spec.grid.len() + 1;
    let reference_base = ForestConfig::breiman(0).with_trees(spec.base_config.trees);
    let risks = exec.try_map(spec.repetitions * cells, |task| {
        let (r, g) = (task / cells, task % cells);
        let (train, test) = &splits[r];
        let config = if g < spec.grid.len() {
            let value = spec.grid[g];
            spec.parameter
                .apply(&spec.base_config, value)
                .with_seed(RepetitionSeeds::forest(spec.master_seed, r, value))
        } else {
            reference_base.with_seed(seeds[r].reference)
        };
        let forest = train_forest_with(train, &config, Exec::Sequential)?;
        empirical_l2_risk_with(&forest, test, Exec::Sequential)
    })?;

    let per_rep: Vec<Vec<f64>> = risks.chunks(cells).map(|c| c[..cells - 1].to_vec()).collect();
    let reference_risks: Vec<f64> = risks.chunks(cells).map(|c| c[cells - 1]).collect();
    let (mean_risk, std_risk): (Vec<f64>, Vec<f64>) = (0..spec.grid.len())
        .map(|g| mean_std(&per_rep.iter().map(|row| row[g]).collect::<Vec<_>>()))
        .unzip();
    let (reference_risk, reference_std) = mean_std(&reference_risks);
    let optimum = extract_optimum(&spec.grid, &mean_risk, DEFAULT_TOLERANCE)?;
    Ok(SweepResult {
        parameter: spec.parameter,
        grid: spec.grid.clone(),
        mean_risk,
        std_risk,
        risks: per_rep,
        reference_risk,
        reference_std,
        reference_risks,
        optimum,
        n: spec.n,
        train_size: spec.train_size(),
        model_id: spec.model.model_id,
        repetitions: spec.repetitions,
        trees: spec.base_config.trees,
        master_seed: spec.master_seed,
        seeds,
    })
}

/// Smallest grid value `v` with `|L_v - min L| < tolerance · (max L - min L)`;
/// the smallest grid value when all risks are equal.
pub fn extract_optimum(grid: &[usize], risks: &[f64], tolerance_fraction: f64) -> Result<usize> {
    if grid.is_empty() || risks.is_empty() {
        return Err(Error::EmptyData("no sweep results to extract an optimum from"));
    }
    if grid.len() != risks.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), actual: risks.len() });
    }
    let min = risks.iter().copied().fold(f64::INFINITY, f64::min);
    let max = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(grid[0]);
    }
    let threshold = tolerance_fraction * (max - min);
    let pos = risks
        .iter()
        .position(|&l| (l - min).abs() < threshold)
        .expect("the minimiser satisfies the strict inequality when max > min");
    Ok(grid[pos])
}

impl SweepResult {
    pub fn extract_optimum(&self, tolerance_fraction: f64) -> Result<usize> {
        extract_optimum(&self.grid, &self.mean_risk, tolerance_fraction)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "parameter_value,mean_risk,std_risk,reference_risk,n,model_id,repetitions,M,seed")?;
        for ((v, m), s) in self.grid.iter().zip(&self.mean_risk).zip(&self.std_risk) {
            writeln!(
                w,
                "{v},{m},{s},{},{},{},{},{},{}",
                self.reference_risk, self.n, self.model_id, self.repetitions, self.trees, self.master_seed
            )?;
        }
        Ok(())
    }
}

/// Reads the `(parameter_value, mean_risk)` columns of a sweep CSV.
pub fn read_sweep_csv<R: std::io::Read>(reader: R) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedCsv { line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedCsv { line: 1, message: format!("missing column `{name}`") })
    };
    let (vc, rc) = (col("parameter_value")?, col("mean_risk")?);
    let mut grid = Vec::new();
    let mut risks = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::MalformedCsv { line, message: e.to_string() })?;
        let parse_err = |what: &str| Error::MalformedCsv { line, message: format!("bad {what}") };
        grid.push(rec.get(vc).and_then(|v| v.parse().ok()).ok_or_else(|| parse_err("parameter_value"))?);
        risks.push(rec.get(rc).and_then(|v| v.parse().ok()).ok_or_else(|| parse_err("mean_risk"))?);
    }
    Ok((grid, risks))
}

/// Sweep settings shared by every sample size of a proportionality study.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTemplate {
    pub parameter: SweepParameter,
    pub fractions: Vec<f64>,
    pub base_config: ForestConfig,
    pub repetitions: usize,
    pub master_seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionalityRow {
    pub n: usize,
    pub optimum: usize,
    pub ratio: f64,
    pub reference_risk: f64,
    pub optimum_risk: f64,
}

/// Sweeps each `n` and reports the extracted optimum and `optimum / n`.
pub fn proportionality_study(
    model: &ModelSpec,
    n_list: &[usize],
    template: &SweepTemplate,
    exec: Exec,
) -> Result<Vec<ProportionalityRow>> {
    if n_list.is_empty() {
        return Err(Error::EmptyData("no sample sizes given"));
    }
    n_list
        .iter()
        .map(|&n| {
            let train = train_size(n, DEFAULT_TRAIN_FRACTION);
            let spec = SweepSpec {
                model: *model,
                n,
                base_config: template.base_config,
                parameter: template.parameter,
                grid: grid_from_fractions(template.parameter, &template.fractions, train),
                repetitions: template.repetitions,
                master_seed: derive_seed(template.master_seed, n as u64),
                train_fraction: DEFAULT_TRAIN_FRACTION,
            };
            let result = run_sweep(&spec, exec)?;
            let optimum = result.extract_optimum(template.tolerance)?;
            let pos = result.grid.iter().position(|&g| g == optimum).expect("optimum is a grid value");
            Ok(ProportionalityRow {
                n,
                optimum,
                ratio: optimum as f64 / n as f64,
                reference_risk: result.reference_risk,
                optimum_risk: result.mean_risk[pos],
            })
        })
        .collect()
}

pub fn write_proportionality_csv<W: Write>(rows: &[ProportionalityRow], w: &mut W) -> Result<()> {
    writeln!(w, "n,optimum,ratio,optimum_risk,reference_risk")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.n, r.optimum, r.ratio, r.optimum_risk, r.reference_risk)?;
    }
    Ok(())
}

/// Median-forest convergence study in dimension 1 on `m(x) = x̃²` with
/// Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct RateStudySpec {
    pub sample_sizes: Vec<usize>,
    pub sigma: f64,
    /// Lipschitz constant fed to the depth formula (`x̃²` is 4-Lipschitz in `x`).
    pub lipschitz: f64,
    pub repetitions: usize,
    pub trees: usize,
    /// Subsample size as a fraction of `n`; `None` means no subsampling.
    pub subsample_fraction: Option<f64>,
    /// Replaces the theoretical `C₃` in the depth formula.
    pub c3_override: Option<f64>,
    pub test_points: usize,
    pub master_seed: u64,
}

impl RateStudySpec {
    pub fn new(master_seed: u64) -> Self {
        Self {
            sample_sizes: vec![256, 512, 1024, 2048, 4096],
            sigma: 0.1,
            lipschitz: 4.0,
            repetitions: 20,
            trees: 50,
            subsample_fraction: None,
            c3_override: None,
            test_points: 1000,
            master_seed,
        }
    }

    pub fn subsample_size(&self, n: usize) -> usize {
        match self.subsample_fraction {
            Some(f) => ((f * n as f64).round() as usize).clamp(4, n),
            None => n,
        }
    }

    /// Depth from the bound minimiser, clipped to the admissible range
    /// `a_n 2^{-k} >= 4`. Returns `(k, k_star_real, clipped)`.
    pub fn depth(&self, n: usize) -> Result<(usize, f64, bool)> {
        let (k_real, k_int) = match self.c3_override {
            Some(c3) => {
                let k = ((n as f64).ln() + c3) / theory::depth_denominator(1);
                (k, k.round().max(0.0) as usize)
            }
            None => {
                let opt = theory::optimal_depth(1, n as f64, self.sigma * self.sigma, self.lipschitz)?;
                (opt.k_star_real, opt.k_star_int)
            }
        };
        let max = MedianTreeParams::max_depth(self.subsample_size(n));
        Ok((k_int.min(max), k_real, k_int > max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub depth: usize,
    pub k_star_real: f64,
    pub depth_clipped: bool,
    pub a_n: usize,
    pub mean_risk: f64,
    pub std_risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateStudyResult {
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `ln(mean risk)` against `ln n`.
    pub slope: f64,
    pub intercept: f64,
}

fn rate_target(x: f64) -> f64 {
    let t = tilde_transform(x);
    t * t
}

/// Excess risk `mean (m_n(x) - m(x))²` over fresh uniform test points.
pub fn run_rate_study(spec: &RateStudySpec, exec: Exec) -> Result<RateStudyResult> {
    if spec.sample_sizes.len() < 2 {
        return Err(Error::invalid("rate study needs at least two sample sizes"));
    }
    if spec.repetitions == 0 || spec.trees == 0 || spec.test_points == 0 {
        return Err(Error::invalid("repetitions, trees and test points must be positive"));
    }
    let mut rows = Vec::with_capacity(spec.sample_sizes.len());
    for (si, &n) in spec.sample_sizes.iter().enumerate() {
        let (depth, k_star_real, depth_clipped) = spec.depth(n)?;
        let a_n = spec.subsample_size(n);
        let resample = if a_n == n { Resample::None } else { Resample::Subsample(a_n) };
        let size_seed = derive_seed(spec.master_seed, si as u64);
        let risks = exec.try_map(spec.repetitions, |r| -> Result<f64> {
            let mut rng = derive_stream(size_seed, r as u64);
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|&v| rate_target(v) + spec.sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let train = Dataset::new(x, y, 1, Origin::External)?;
            let config = ForestConfig::median(depth, resample, spec.trees, rng.random());
            let forest = train_forest_with(&train, &config, Exec::Sequential)?;
            let mut sum = 0.0;
            for _ in 0..spec.test_points {
                let q = rng.random::<f64>();
                let err = forest.predict_unchecked(&[q]) - rate_target(q);
                sum += err * err;
            }
            Ok(sum / spec.test_points as f64)
        })?;
        let (mean_risk, std_risk) = mean_std(&risks);
        rows.push(RateRow { n, depth, k_star_real, depth_clipped, a_n, mean_risk, std_risk });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_risk.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Ok(RateStudyResult { rows, slope, intercept })
}

/// Ordinary least-squares line through `(xs, ys)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

impl RateStudyResult {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# slope={}", self.slope)?;
        writeln!(w, "# intercept={}", self.intercept)?;
        writeln!(w, "n,depth,k_star_real,depth_clipped,a_n,mean_risk,std_risk")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.n, r.depth, r.k_star_real, r.depth_clipped, r.a_n, r.mean_risk, r.std_risk
            )?;
        }
        Ok(())
    }
}
