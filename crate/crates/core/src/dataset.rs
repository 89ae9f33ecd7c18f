//! Synthetic regression models, train/test splitting and CSV exchange.
//!
//! All synthetic designs draw `X` uniformly on `[0,1]^d`; the model formulas
//! are written in terms of the centred coordinates `x̃ = 2(x - 0.5)`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sampling::{derive_stream, subsample_without_replacement};

/// Variance of the Gaussian noise term `N(0, 0.5)` under the default reading.
const BASE_NOISE: f64 = 0.5;

/// Model 6's indicator noise fires when a standard normal exceeds this level.
const MODEL6_CUTOFF: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Gaussian,
    BernoulliIndicator,
}

/// How the second parameter of `N(0, 0.5)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseInterpretation {
    #[default]
    Variance,
    StdDev,
}

impl NoiseInterpretation {
    pub fn std_dev(self) -> f64 {
        match self {
            NoiseInterpretation::Variance => BASE_NOISE.sqrt(),
            NoiseInterpretation::StdDev => BASE_NOISE,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseInterpretation::Variance => "variance",
            NoiseInterpretation::StdDev => "sd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(NoiseInterpretation::Variance),
            "sd" => Ok(NoiseInterpretation::StdDev),
            other => Err(Error::invalid(format!(
                "noise interpretation must be `variance` or `sd`, got `{other}`"
            ))),
        }
    }
}

/// One of the eight benchmark regression models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub model_id: u32,
    pub n_default: usize,
    pub d: usize,
    pub noise_kind: NoiseKind,
    pub noise_scale: f64,
    pub noise_interpretation: NoiseInterpretation,
}

/// `(model_id, n_default, d)` for Models 1–8.
pub const MODEL_TABLE: [(u32, usize, usize); 8] = [
    (1, 800, 50),
    (2, 600, 100),
    (3, 600, 100),
    (4, 600, 100),
    (5, 700, 20),
    (6, 500, 30),
    (7, 600, 300),
    (8, 500, 1000),
];

impl ModelSpec {
    pub fn new(model_id: u32) -> Result<Self> {
        Self::with_noise(model_id, 1.0)
    }

    /// `noise_scale` multiplies the model's noise term. For the noiseless
    /// Models 1 and 8, a scale `s > 1` adds Gaussian noise with standard
    /// deviation `(s - 1)` times the base level.
    pub fn with_noise(model_id: u32, noise_scale: f64) -> Result<Self> {
        let &(_, n_default, d) = MODEL_TABLE
            .iter()
            .find(|(id, _, _)| *id == model_id)
            .ok_or(Error::UnknownModel(model_id))?;
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "noise scale must be a finite nonnegative number, got {noise_scale}"
            )));
        }
        let noise_kind = match model_id {
            1 | 8 if noise_scale <= 1.0 => NoiseKind::None,
            1 | 8 => NoiseKind::Gaussian,
            6 => NoiseKind::BernoulliIndicator,
            _ => NoiseKind::Gaussian,
        };
        Ok(Self {
            model_id,
            n_default,
            d,
            noise_kind,
            noise_scale,
            noise_interpretation: NoiseInterpretation::default(),
        })
    }

    pub fn interpretation(mut self, interp: NoiseInterpretation) -> Self {
        self.noise_interpretation = interp;
        self
    }

    /// Noiseless regression function `m(x)`. `x` must have length `d`.
    pub fn regression_function(&self, x: &[f64]) -> f64 {
        let t = |i: usize| tilde_transform(x[i - 1]);
        match self.model_id {
            1 => t(1).powi(2) + (-t(2).powi(2)).exp(),
            2 => t(1) * t(2) + t(3).powi(2) - t(4) * t(7) + t(8) * t(10) - t(6).powi(2),
            3 => -(2.0 * t(1)).sin() + t(2).powi(2) + t(3) - (-t(4)).exp(),
            4 => {
                let s3 = (2.0 * PI * t(3)).sin();
                let a4 = 2.0 * PI * t(4);
                t(1) + (2.0 * t(2) - 1.0).powi(2)
                    + s3 / (2.0 - s3)
                    + a4.sin()
                    + 2.0 * a4.cos()
                    + 3.0 * a4.sin().powi(2)
                    + 4.0 * a4.cos().powi(2)
            }
            5 => {
                let step = |b: bool| if b { 1.0 } else { 0.0 };
                step(t(1) > 0.0)
                    + t(2).powi(3)
                    + step(t(4) + t(6) - t(8) - t(9) > 1.0 + t(10))
                    + (-t(2).powi(2)).exp()
            }
            6 => (1..=10).filter(|&k| t(k).powi(3) < 0.0).count() as f64,
            7 => t(1).powi(2) + t(2).powi(2) * t(3) * (-t(4).abs()).exp() + t(6) - t(8),
            8 => t(1) + 3.0 * t(3).powi(2) - 2.0 * (-t(5)).exp() + t(6),
            _ => unreachable!("model id validated at construction"),
        }
    }

    fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sd = self.noise_interpretation.std_dev();
        match self.noise_kind {
            NoiseKind::None => 0.0,
            NoiseKind::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                let scale = match self.model_id {
                    1 | 8 => self.noise_scale - 1.0,
                    _ => self.noise_scale,
                };
                scale * sd * z
            }
            NoiseKind::BernoulliIndicator => {
                let z: f64 = rng.sample(StandardNormal);
                if z > MODEL6_CUTOFF {
                    -self.noise_scale
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    Model(ModelSpec),
    External,
}

/// Features on `[0,1]^d` (row-major) with their responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    responses: Vec<f64>,
    d: usize,
    origin: Origin,
    realized_noise: Option<Vec<f64>>,
}

impl Dataset {
    /// Validates shape and the unit-cube constraint.
    pub fn new(features: Vec<f64>, responses: Vec<f64>, d: usize, origin: Origin) -> Result<Self> {
        if responses.is_empty() {
            return Err(Error::EmptyData("dataset without observations"));
        }
        if d == 0 {
            return Err(Error::invalid("dataset dimension must be at least 1"));
        }
        if features.len() != responses.len() * d {
            return Err(Error::DimensionMismatch {
                expected: responses.len() * d,
                actual: features.len(),
            });
        }
        for (k, &v) in features.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::FeatureOutOfRange { row: k / d, column: k % d, value: v });
            }
        }
        if let Some(pos) = responses.iter().position(|y| !y.is_finite()) {
            return Err(Error::invalid(format!("response {pos} is not finite")));
        }
        Ok(Self { features, responses, d, origin, realized_noise: None })
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn feature(&self, i: usize, j: usize) -> f64 {
        self.features[i * self.d + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn origin(&self) -> &Origin {
        &self.origin
    }

    /// Per-row noise realized during generation (synthetic data only).
    pub fn realized_noise(&self) -> Option<&[f64]> {
        self.realized_noise.as_deref()
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut responses = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            responses.push(self.responses[i]);
        }
        let realized_noise = self
            .realized_noise
            .as_ref()
            .map(|noise| indices.iter().map(|&i| noise[i]).collect());
        Dataset { features, responses, d: self.d, origin: self.origin.clone(), realized_noise }
    }

    pub fn mean_response(&self) -> f64 {
        self.responses.iter().sum::<f64>() / self.n() as f64
    }
}

/// `x̃ = 2(x - 0.5)`, mapping `[0,1]` onto `[-1,1]`.
#[inline]
pub fn tilde_transform(x: f64) -> f64 {
    2.0 * (x - 0.5)
}

/// Draws `n` observations from `spec`. Each row consumes `d` uniforms
/// followed by the noise draw, all from stream `(seed, 0)`.
pub fn generate_model(spec: &ModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    // revalidate in case the caller built the struct by hand
    let checked = ModelSpec::with_noise(spec.model_id, spec.noise_scale)?;
    if checked.d != spec.d {
        return Err(Error::DimensionMismatch { expected: checked.d, actual: spec.d });
    }
    if n == 0 {
        return Err(Error::EmptyData("cannot generate zero observations"));
    }
    let d = spec.d;
    let mut rng = derive_stream(seed, 0);
    let mut features = Vec::with_capacity(n * d);
    let mut responses = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    let mut row = vec![0.0; d];
    for _ in 0..n {
        for v in row.iter_mut() {
            *v = rng.random::<f64>();
        }
        let eps = spec.draw_noise(&mut rng);
        responses.push(spec.regression_function(&row) + eps);
        noise.push(eps);
        features.extend_from_slice(&row);
    }
    Ok(Dataset {
        features,
        responses,
        d,
        origin: Origin::Model(*spec),
        realized_noise: Some(noise),
    })
}

/// Uniform random partition with `round(train_fraction * n)` training rows.
/// Both parts keep the input's row order.
pub fn split_train_test(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let n = data.n();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} leaves an empty part for n = {n}"
        )));
    }
    let mut rng = derive_stream(seed, 0);
    let perm = subsample_without_replacement(n, n, &mut rng)?;
    let mut train_idx = perm[..n_train].to_vec();
    let mut test_idx = perm[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((data.select(&train_idx), data.select(&test_idx)))
}

/// Reads a CSV with header `x1,…,xd,y`. The last column is the response.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file)
}

pub fn read_csv_from<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::MalformedCsv { line: 1, message: e.to_string() })?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyData("csv file has no header"));
    }
    if header.len() < 2 {
        return Err(Error::MalformedCsv {
            line: 1,
            message: "need at least one feature column and a response column".into(),
        });
    }
    let d = header.len() - 1;
    let mut features = Vec::new();
    let mut responses = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::MalformedCsv { line, message: e.to_string() })?;
        if record.len() != d + 1 {
            return Err(Error::MalformedCsv {
                line,
                message: format!("expected {} columns, found {}", d + 1, record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::MalformedCsv {
                line,
                message: format!("column {} is not a number: `{field}`", col + 1),
            })?;
            if col < d {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::FeatureOutOfRange { row, column: col, value: v });
                }
                features.push(v);
            } else {
                responses.push(v);
            }
        }
    }
    if responses.is_empty() {
        return Err(Error::EmptyData("csv file has no data rows"));
    }
    Dataset::new(features, responses, d, Origin::External)
}

/// Writes `x1,…,xd,y` with shortest round-trip float formatting and LF endings.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv_to(data, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv_to<W: Write>(data: &Dataset, w: &mut W) -> Result<()> {
    let header: Vec<String> = (1..=data.d()).map(|j| format!("x{j}")).collect();
    writeln!(w, "{},y", header.join(","))?;
    for (row, y) in data.rows().zip(data.responses()) {
        for v in row {
            write!(w, "{v},")?;
        }
        writeln!(w, "{y}")?;
    }
    Ok(())
}
