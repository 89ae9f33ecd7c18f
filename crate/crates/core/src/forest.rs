//! Forests of CART or median trees.
//!
//! Tree `j` draws its index sample from stream `(master_seed, j)` and its
//! candidate dimensions or median coordinates from a second stream keyed by
//! `j`, so a forest is a pure function of the configuration and the training
//! data whatever the worker count, and a full subsample grows the same trees
//! as no resampling.

use std::fmt;
use std::io::{BufRead, Write};

use crate::cart::{grow_cart_tree, CartParams};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::median_tree::{grow_median_tree, MedianTreeParams};
use crate::sampling::{bootstrap_sample, derive_stream, subsample_without_replacement};
use crate::tree::{check_query, RegressionTree};

pub const FOREST_FORMAT_VERSION: u32 = 1;

pub const DEFAULT_TREES: usize = 500;
pub const DEFAULT_NODESIZE: usize = 5;

/// How each tree's index sample is drawn from the `n` training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// `n` draws with replacement.
    Bootstrap,
    /// `a_n` draws without replacement.
    Subsample(usize),
    /// All rows, once each.
    None,
}

impl fmt::Display for Resample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resample::Bootstrap => write!(f, "bootstrap"),
            Resample::Subsample(a) => write!(f, "subsample:{a}"),
            Resample::None => write!(f, "none"),
        }
    }
}

impl Resample {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(Resample::Bootstrap),
            "none" => Ok(Resample::None),
            other => other
                .strip_prefix("subsample:")
                .and_then(|a| a.parse().ok())
                .map(Resample::Subsample)
                .ok_or_else(|| Error::invalid(format!("unknown resampling scheme `{other}`"))),
        }
    }

    /// Number of (not necessarily distinct) indices a tree receives.
    pub fn sample_size(&self, n: usize) -> usize {
        match *self {
            Resample::Bootstrap | Resample::None => n,
            Resample::Subsample(a) => a,
        }
    }
}

/// Tree growing rule together with the knobs that apply to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeSpec {
    Cart {
        /// `None` resolves to `ceil(d / 3)` at training time.
        mtry: Option<usize>,
        nodesize: usize,
        maxnodes: Option<usize>,
    },
    Median {
        depth: usize,
    },
}

impl TreeSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TreeSpec::Cart { .. } => "cart",
            TreeSpec::Median { .. } => "median",
        }
    }
}

pub fn default_mtry(d: usize) -> usize {
    d.div_ceil(3).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub tree: TreeSpec,
    pub trees: usize,
    pub resample: Resample,
    pub master_seed: u64,
}

impl ForestConfig {
    /// 500 bootstrapped CART trees, `mtry = ceil(d/3)`, `nodesize = 5`, no leaf budget.
    pub fn breiman(master_seed: u64) -> Self {
        Self {
            tree: TreeSpec::Cart { mtry: None, nodesize: DEFAULT_NODESIZE, maxnodes: None },
            trees: DEFAULT_TREES,
            resample: Resample::Bootstrap,
            master_seed,
        }
    }

    pub fn median(depth: usize, resample: Resample, trees: usize, master_seed: u64) -> Self {
        Self { tree: TreeSpec::Median { depth }, trees, resample, master_seed }
    }

    pub fn with_trees(mut self, trees: usize) -> Self {
        self.trees = trees;
        self
    }

    pub fn with_resample(mut self, resample: Resample) -> Self {
        self.resample = resample;
        self
    }

    /// Replaces the leaf budget; no-op for median trees.
    pub fn with_maxnodes(mut self, maxnodes: Option<usize>) -> Self {
        if let TreeSpec::Cart { mtry, nodesize, .. } = self.tree {
            self.tree = TreeSpec::Cart { mtry, nodesize, maxnodes };
        }
        self
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::invalid("a forest needs at least one tree"));
        }
        if n == 0 {
            return Err(Error::EmptyData("training set is empty"));
        }
        if let Resample::Subsample(a) = self.resample {
            if a == 0 || a > n {
                return Err(Error::invalid(format!("subsample size must lie in 1..={n}, got {a}")));
            }
        }
        match self.tree {
            TreeSpec::Cart { mtry, nodesize, maxnodes } => {
                CartParams { mtry: mtry.unwrap_or(default_mtry(d)), nodesize, maxnodes }.validate(d)
            }
            TreeSpec::Median { depth } => {
                if self.resample == Resample::Bootstrap {
                    return Err(Error::invalid("median forests use subsampling without replacement, not bootstrap"));
                }
                MedianTreeParams { a_n: self.resample.sample_size(n), k_n: depth }.validate()
            }
        }
    }

    /// `key value` lines, one per field, used as the forest file header.
    pub fn header_lines(&self) -> Vec<(String, String)> {
        let mut out = vec![("kind".to_string(), self.tree.kind_name().to_string())];
        match self.tree {
            TreeSpec::Cart { mtry, nodesize, maxnodes } => {
                out.push(("mtry".into(), mtry.map_or("default".into(), |m| m.to_string())));
                out.push(("nodesize".into(), nodesize.to_string()));
                out.push(("maxnodes".into(), maxnodes.map_or("none".into(), |m| m.to_string())));
            }
            TreeSpec::Median { depth } => out.push(("depth".into(), depth.to_string())),
        }
        out.push(("trees".into(), self.trees.to_string()));
        out.push(("resample".into(), self.resample.to_string()));
        out.push(("seed".into(), self.master_seed.to_string()));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    config: ForestConfig,
    d: usize,
    trees: Vec<RegressionTree>,
}

/// Stream id bit marking the split-randomness stream of a tree.
const GROWTH_STREAM: u64 = 1 << 63;

fn grow_tree(train: &Dataset, config: &ForestConfig, j: usize) -> Result<RegressionTree> {
    let n = train.n();
    let mut sampler = derive_stream(config.master_seed, j as u64);
    let mut rng = derive_stream(config.master_seed, j as u64 | GROWTH_STREAM);
    let indices = match config.resample {
        Resample::Bootstrap => bootstrap_sample(n, &mut sampler)?,
        Resample::Subsample(a) => subsample_without_replacement(n, a, &mut sampler)?,
        Resample::None => (0..n).collect(),
    };
    match config.tree {
        TreeSpec::Cart { mtry, nodesize, maxnodes } => {
            let params = CartParams { mtry: mtry.unwrap_or(default_mtry(train.d())), nodesize, maxnodes };
            grow_cart_tree(train, &indices, params, &mut rng)
        }
        TreeSpec::Median { depth } => {
            let params = MedianTreeParams { a_n: indices.len(), k_n: depth };
            grow_median_tree(train, &indices, params, &mut rng)
        }
    }
}

pub fn train_forest(train: &Dataset, config: &ForestConfig) -> Result<Forest> {
    train_forest_with(train, config, Exec::default())
}

pub fn train_forest_with(train: &Dataset, config: &ForestConfig, exec: Exec) -> Result<Forest> {
    config.validate(train.n(), train.d())?;
    let trees = exec.try_map(config.trees, |j| grow_tree(train, config, j))?;
    Ok(Forest { config: *config, d: train.d(), trees })
}

impl Forest {
    /// Assembles a forest from already grown trees (all of dimension `d`).
    pub fn from_trees(config: ForestConfig, trees: Vec<RegressionTree>) -> Result<Self> {
        let Some(first) = trees.first() else {
            return Err(Error::EmptyData("forest without trees"));
        };
        let d = first.d();
        if let Some(t) = trees.iter().find(|t| t.d() != d) {
            return Err(Error::DimensionMismatch { expected: d, actual: t.d() });
        }
        if trees.len() != config.trees {
            return Err(Error::invalid(format!(
                "config declares {} trees but {} were given",
                config.trees,
                trees.len()
            )));
        }
        Ok(Self { config, d, trees })
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Mean of the tree predictions, summed in tree order.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_query(x, self.d)?;
        Ok(self.predict_unchecked(x))
    }

    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_unchecked(x)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict_dataset(&self, data: &Dataset, exec: Exec) -> Result<Vec<f64>> {
        if data.d() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, actual: data.d() });
        }
        Ok(exec.map(data.n(), |i| self.predict_unchecked(data.row(i))))
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "subforest-forest v{FOREST_FORMAT_VERSION}")?;
        writeln!(w, "dims {}", self.d)?;
        for (k, v) in self.config.header_lines() {
            writeln!(w, "{k} {v}")?;
        }
        for (j, t) in self.trees.iter().enumerate() {
            t.write_text(w, j)?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_text<B: BufRead>(reader: B) -> Result<Self> {
        let mut lines = reader.lines();
        let mut line_no = 0;
        let mut next = |line_no: &mut usize| -> Result<String> {
            *line_no += 1;
            lines
                .next()
                .transpose()?
                .ok_or(Error::MalformedModel { line: *line_no, message: "unexpected end of file".into() })
        };
        let bad = |line: usize, message: String| Error::MalformedModel { line, message };
        let magic = next(&mut line_no)?;
        if magic != format!("subforest-forest v{FOREST_FORMAT_VERSION}") {
            return Err(bad(line_no, format!("unsupported header `{magic}`")));
        }
        let mut fields = std::collections::BTreeMap::new();
        let first = loop {
            let line = next(&mut line_no)?;
            if line.starts_with("tree ") {
                break line;
            }
            let Some((k, v)) = line.split_once(' ') else {
                return Err(bad(line_no, format!("expected `key value`, found `{line}`")));
            };
            fields.insert(k.to_string(), v.to_string());
        };
        let header_end = line_no;
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| bad(header_end, format!("missing header field `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| bad(header_end, format!("bad value for `{k}`")))
        };
        let d = num("dims")?;
        let trees = num("trees")?;
        let resample = Resample::parse(&get("resample")?)?;
        let master_seed: u64 =
            get("seed")?.parse().map_err(|_| bad(header_end, "bad value for `seed`".into()))?;
        let tree = match get("kind")?.as_str() {
            "cart" => {
                let mtry = match get("mtry")?.as_str() {
                    "default" => None,
                    _ => Some(num("mtry")?),
                };
                let maxnodes = match get("maxnodes")?.as_str() {
                    "none" => None,
                    _ => Some(num("maxnodes")?),
                };
                TreeSpec::Cart { mtry, nodesize: num("nodesize")?, maxnodes }
            }
            "median" => TreeSpec::Median { depth: num("depth")? },
            other => return Err(bad(header_end, format!("unknown tree kind `{other}`"))),
        };
        let config = ForestConfig { tree, trees, resample, master_seed };

        // re-feed the first tree header through a chained reader
        let rest: Vec<String> = lines.collect::<std::io::Result<_>>()?;
        let body = std::iter::once(first).chain(rest).collect::<Vec<_>>().join("\n");
        let mut body_lines = std::io::Cursor::new(body).lines();
        let mut body_line = header_end - 1;
        let mut parsed = Vec::with_capacity(trees);
        for j in 0..trees {
            let (index, t) = RegressionTree::read_text(&mut body_lines, &mut body_line)?;
            if index != j {
                return Err(bad(body_line, format!("expected tree {j}, found {index}")));
            }
            if t.d() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: t.d() });
            }
            parsed.push(t);
        }
        match body_lines.next().transpose()? {
            Some(l) if l == "end" => {}
            _ => return Err(bad(body_line + 1, "missing `end` marker".into())),
        }
        Forest::from_trees(config, parsed)
    }
}

/// Mean squared prediction error over `test`.
pub fn empirical_l2_risk(forest: &Forest, test: &Dataset) -> Result<f64> {
    empirical_l2_risk_with(forest, test, Exec::default())
}

pub fn empirical_l2_risk_with(forest: &Forest, test: &Dataset, exec: Exec) -> Result<f64> {
    let preds = forest.predict_dataset(test, exec)?;
    Ok(mean_squared_error(&preds, test.responses()))
}

pub fn mean_squared_error(predictions: &[f64], targets: &[f64]) -> f64 {
    debug_assert_eq!(predictions.len(), targets.len());
    let sum: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum();
    sum / targets.len() as f64
}
