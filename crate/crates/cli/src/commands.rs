use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use subforest::dataset::{generate_model, read_csv, split_train_test, write_csv_to, ModelSpec, NoiseInterpretation};
use subforest::forest::{
    default_mtry, empirical_l2_risk_with, train_forest_with, Forest, ForestConfig, Resample, TreeSpec, DEFAULT_NODESIZE,
    DEFAULT_TREES,
};
use subforest::sampling::derive_seed;
use subforest::theory::{self, ApproxWeight, BoundInputs, CellSelection, SideMomentEstimate};
use subforest::tuning::{
    grid_from_fractions, proportionality_study, read_sweep_csv, run_rate_study, run_sweep, train_size,
    write_proportionality_csv, RateStudySpec, SweepParameter, SweepSpec, SweepTemplate, DEFAULT_TOLERANCE,
    DEFAULT_TRAIN_FRACTION,
};
use subforest::Exec;

use crate::config::{Manifest, Resolver};
use crate::{
    BoundArgs, Command, Common, EvalArgs, GenerateArgs, LemmaArgs, OptimalArgs, RateArgs, SweepArgs, TrainArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => evaluate(a, false),
        Command::Risk(a) => evaluate(a, true),
        Command::Sweep(a) => sweep(a),
        Command::Optimal(a) => optimal(a),
        Command::Bound(a) => bound(a),
        Command::VerifyLemma(a) => verify_lemma(a),
        Command::RateStudy(a) => rate_study(a),
    }
}

/// Resolver plus the shared flags that every subcommand handles alike.
struct Setup {
    r: Resolver,
    seed: u64,
    threads: Option<usize>,
    out: Option<PathBuf>,
}

fn setup(name: &'static str, common: Common, randomized: bool) -> Result<Setup> {
    let mut r = Resolver::new(name, common.config.as_deref())?;
    let seed = r.peek("seed", common.seed)?;
    if randomized && seed.is_none() && std::env::var_os("CI").is_some() {
        bail!("`{name}` needs an explicit --seed when CI is set");
    }
    let seed = seed.unwrap_or(0);
    r.record("seed", &seed);
    // thread count never changes results, so it stays out of the manifest
    let threads = r.peek("threads", common.threads)?;
    if threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    let out = r.path("out", common.out)?;
    Ok(Setup { r, seed, threads, out })
}

#[cfg(feature = "parallel")]
fn with_exec<T: Send>(threads: Option<usize>, f: impl FnOnce(Exec) -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().context("cannot start worker pool")?;
    pool.install(|| f(Exec::Parallel))
}

#[cfg(not(feature = "parallel"))]
fn with_exec<T: Send>(_threads: Option<usize>, f: impl FnOnce(Exec) -> Result<T> + Send) -> Result<T> {
    f(Exec::Sequential)
}

/// Writes the artifact and its manifest, or prints the artifact.
fn emit(out: Option<&Path>, body: &[u8], manifest: &Manifest) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))?;
            manifest.write_beside(path)?;
        }
        None => std::io::stdout().write_all(body)?,
    }
    Ok(())
}

fn model_spec(r: &mut Resolver, model: Option<u32>, scale: Option<f64>, interp: Option<String>) -> Result<ModelSpec> {
    let id = r.required("model", model)?;
    let scale = r.or_default("noise-scale", scale, 1.0)?;
    let interp = r.or_default("noise-interpretation", interp, NoiseInterpretation::default().as_str().to_string())?;
    Ok(ModelSpec::with_noise(id, scale)?.interpretation(NoiseInterpretation::parse(&interp)?))
}

fn csv_bytes(data: &subforest::dataset::Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv_to(data, &mut buf)?;
    Ok(buf)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let Setup { mut r, seed, out, .. } = setup("generate", a.common, true)?;
    let spec = model_spec(&mut r, a.model, a.noise_scale, a.noise_interpretation)?;
    let n = r.or_default("n", a.n, spec.n_default)?;
    let fraction = r.optional("train-fraction", a.train_fraction)?;
    let test_out = r.path("test-out", a.test_out)?;
    let manifest = r.finish()?;
    let data = generate_model(&spec, n, seed)?;
    match (fraction, test_out) {
        (None, None) => emit(out.as_deref(), &csv_bytes(&data)?, &manifest),
        (Some(f), Some(test_path)) => {
            let Some(out) = out else {
                bail!("--train-fraction needs --out for the training part");
            };
            let (train, test) = split_train_test(&data, f, derive_seed(seed, 1))?;
            std::fs::write(&test_path, csv_bytes(&test)?)
                .with_context(|| format!("cannot write {}", test_path.display()))?;
            emit(Some(&out), &csv_bytes(&train)?, &manifest)
        }
        _ => bail!("--train-fraction and --test-out go together"),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let Setup { mut r, seed, threads, out } = setup("train", a.common, true)?;
    let data_path = r.path("data", a.data)?.context("`train` needs --data")?;
    let data = read_csv(&data_path)?;
    let kind = r.or_default("kind", a.kind, "cart".to_string())?;
    let trees = r.or_default("trees", a.trees, DEFAULT_TREES)?;
    let default_resample = if kind == "median" { "none" } else { "bootstrap" };
    let resample_name = r.or_default("resample", a.resample, default_resample.to_string())?;
    let resample = match resample_name.as_str() {
        "subsample" => Resample::Subsample(r.required("sampsize", a.sampsize)?),
        other => {
            r.forbid("sampsize", a.sampsize.is_some(), &format!("with --resample {other}"))?;
            Resample::parse(other)?
        }
    };
    let tree = match kind.as_str() {
        "cart" => {
            r.forbid("depth", a.depth.is_some(), "to CART trees")?;
            let mtry = r.or_default("mtry", a.mtry, default_mtry(data.d()))?;
            let nodesize = r.or_default("nodesize", a.nodesize, DEFAULT_NODESIZE)?;
            let maxnodes = r.optional("maxnodes", a.maxnodes)?;
            TreeSpec::Cart { mtry: Some(mtry), nodesize, maxnodes }
        }
        "median" => {
            r.forbid("mtry", a.mtry.is_some(), "to median trees")?;
            r.forbid("nodesize", a.nodesize.is_some(), "to median trees")?;
            r.forbid("maxnodes", a.maxnodes.is_some(), "to median trees")?;
            TreeSpec::Median { depth: r.required("depth", a.depth)? }
        }
        other => bail!("unknown tree kind `{other}` (expected cart or median)"),
    };
    let manifest = r.finish()?;
    let config = ForestConfig { tree, trees, resample, master_seed: seed };
    let forest = with_exec(threads, |exec| Ok(train_forest_with(&data, &config, exec)?))?;
    emit(out.as_deref(), forest.to_text().as_bytes(), &manifest)
}

fn evaluate(a: EvalArgs, risk: bool) -> Result<()> {
    let name = if risk { "risk" } else { "predict" };
    let Setup { mut r, threads, out, .. } = setup(name, a.common, false)?;
    let forest_path = r.path("forest", a.forest)?.with_context(|| format!("`{name}` needs --forest"))?;
    let data_path = r.path("data", a.data)?.with_context(|| format!("`{name}` needs --data"))?;
    let manifest = r.finish()?;
    let file = std::fs::File::open(&forest_path).with_context(|| format!("cannot open {}", forest_path.display()))?;
    let forest = Forest::read_text(std::io::BufReader::new(file))?;
    let data = read_csv(&data_path)?;
    let mut body = String::new();
    if risk {
        let value = with_exec(threads, |exec| Ok(empirical_l2_risk_with(&forest, &data, exec)?))?;
        writeln!(body, "n,risk\n{},{value}", data.n())?;
    } else {
        let preds = with_exec(threads, |exec| Ok(forest.predict_dataset(&data, exec)?))?;
        body.push_str("prediction\n");
        for p in preds {
            writeln!(body, "{p}")?;
        }
    }
    emit(out.as_deref(), body.as_bytes(), &manifest)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let Setup { mut r, seed, threads, out } = setup("sweep", a.common, true)?;
    let model = model_spec(&mut r, a.model, a.noise_scale, a.noise_interpretation)?;
    let parameter = SweepParameter::parse(&r.required("param", a.param)?)?;
    let reps = r.or_default("reps", a.reps, 50)?;
    let trees = r.or_default("trees", a.trees, DEFAULT_TREES)?;
    let train_fraction = r.or_default("train-fraction", a.train_fraction, DEFAULT_TRAIN_FRACTION)?;
    let tolerance = r.or_default("tolerance", a.tolerance, DEFAULT_TOLERANCE)?;
    let ns = r.peek("ns", a.ns.clone().map(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")))?;

    if ns.is_some() {
        let ns = r.list("ns", a.ns, vec![])?;
        r.forbid("n", a.n.is_some(), "to a study over several sample sizes")?;
        r.forbid("grid", a.grid.is_some(), "to a study over several sample sizes; use --fractions")?;
        if train_fraction != DEFAULT_TRAIN_FRACTION {
            bail!("studies over several sample sizes use the default train fraction");
        }
        let fractions = r.list("fractions", a.fractions, parameter.default_fractions())?;
        let manifest = r.finish()?;
        let template = SweepTemplate {
            parameter,
            fractions,
            base_config: parameter.base_config(trees),
            repetitions: reps,
            master_seed: seed,
            tolerance,
        };
        let rows = with_exec(threads, |exec| Ok(proportionality_study(&model, &ns, &template, exec)?))?;
        let mut body = Vec::new();
        write_proportionality_csv(&rows, &mut body)?;
        return emit(out.as_deref(), &body, &manifest);
    }

    let n = r.or_default("n", a.n, model.n_default)?;
    let mut spec = SweepSpec::new(model, n, parameter, trees, reps, seed);
    spec.train_fraction = train_fraction;
    let grid_given = a.grid.is_some() || r.peek::<String>("grid", None)?.is_some();
    spec.grid = if grid_given {
        r.forbid("fractions", a.fractions.is_some(), "together with --grid")?;
        r.list("grid", a.grid, vec![])?
    } else {
        let fractions = r.list("fractions", a.fractions, parameter.default_fractions())?;
        grid_from_fractions(parameter, &fractions, train_size(n, train_fraction))
    };
    let manifest = r.finish()?;
    let result = with_exec(threads, |exec| Ok(run_sweep(&spec, exec)?))?;
    let optimum = result.extract_optimum(tolerance)?;
    eprintln!("optimum {}={optimum} reference_risk={}", parameter.as_str(), result.reference_risk);
    let mut body = Vec::new();
    result.write_csv(&mut body)?;
    emit(out.as_deref(), &body, &manifest)
}

fn optimal(a: OptimalArgs) -> Result<()> {
    let Setup { mut r, out, .. } = setup("optimal", a.common, false)?;
    let path = r.path("sweep", a.sweep)?.context("`optimal` needs --sweep")?;
    let tolerance = r.or_default("tolerance", a.tolerance, DEFAULT_TOLERANCE)?;
    let manifest = r.finish()?;
    let file = std::fs::File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    let (grid, risks) = read_sweep_csv(file)?;
    let optimum = subforest::tuning::extract_optimum(&grid, &risks, tolerance)?;
    let pos = grid.iter().position(|&g| g == optimum).expect("optimum is a grid value");
    let body = format!("optimum,mean_risk\n{optimum},{}\n", risks[pos]);
    emit(out.as_deref(), body.as_bytes(), &manifest)
}

fn bound(a: BoundArgs) -> Result<()> {
    let Setup { mut r, out, .. } = setup("bound", a.common, false)?;
    let d = r.required("d", a.d)?;
    let n = r.required("n", a.n)?;
    let sigma2 = r.required("sigma2", a.sigma2)?;
    let lipschitz = r.required("L", a.lipschitz)?;
    let k_max = r.or_default("k-max", a.k_max, 30)?;
    let weight = ApproxWeight::parse(&r.or_default("weight", a.weight, ApproxWeight::default().as_str().to_string())?)?;
    let manifest = r.finish()?;
    let at = |k: f64| BoundInputs { d, n, sigma2, lipschitz, k };
    at(0.0).validate()?;

    let mut body = String::new();
    writeln!(body, "# d={d}")?;
    writeln!(body, "# n={n}")?;
    writeln!(body, "# sigma2={sigma2}")?;
    writeln!(body, "# L={lipschitz}")?;
    writeln!(body, "# weight={}", weight.as_str())?;
    writeln!(body, "# beta={}", theory::beta(d))?;
    writeln!(body, "# C={}", theory::lemma_constant(d))?;
    if sigma2 > 0.0 && lipschitz > 0.0 {
        let rep = theory::bound_report_weighted(&at(0.0), weight)?;
        writeln!(body, "# C3={}", rep.c3)?;
        writeln!(body, "# C4={}", rep.c4)?;
        writeln!(body, "# k_star_real={}", rep.k_star_real)?;
        writeln!(body, "# k_star_int={}", rep.k_star_int)?;
        writeln!(body, "# a_n_min={}", rep.a_n_min)?;
        writeln!(body, "# a_n_min_clamped={}", rep.a_n_min_clamped)?;
        if rep.a_n_min_clamped {
            eprintln!("warning: minimal subsample size exceeds n; clamped to n");
        }
    }
    writeln!(body, "# subsample_exponent={}", theory::subsample_exponent(d))?;
    writeln!(body, "# rate_exponent={}", theory::rate_exponent(d))?;
    writeln!(body, "# centred_rate_exponent={}", theory::centred_rate_exponent(d))?;
    writeln!(body, "k,bound,estimation_term,approximation_term")?;
    for k in 0..=k_max {
        let inp = at(k as f64);
        let est = theory::estimation_term(&inp);
        let app = theory::approximation_term(&inp, weight);
        writeln!(body, "{k},{},{est},{app}", theory::risk_bound_weighted(&inp, weight))?;
    }
    emit(out.as_deref(), body.as_bytes(), &manifest)
}

fn verify_lemma(a: LemmaArgs) -> Result<()> {
    let Setup { mut r, seed, threads, out } = setup("verify-lemma", a.common, true)?;
    let dims = r.list("d", a.dims, vec![1, 2, 5])?;
    let depths = r.list("k", a.depths, vec![1, 2, 3])?;
    let fixed_a = r.optional("a-n", a.a_n)?;
    let trials = r.or_default("trials", a.trials, 10_000)?;
    let cell_name = r.or_default("cell", a.cell, "centre".to_string())?;
    let cell = match cell_name.as_str() {
        "centre" | "center" => CellSelection::Centre,
        "random-path" => CellSelection::RandomPath,
        other => bail!("unknown cell selection `{other}` (expected centre or random-path)"),
    };
    let manifest = r.finish()?;
    let mut body = String::from(
        "d,k,a_n,trials,estimate,std_error,exact_mean,paired_std_error,z,lemma_bound,below_bound\n",
    );
    let mut index = 0u64;
    for &d in &dims {
        for &k in &depths {
            let a_n = fixed_a.unwrap_or(1 << (k + 6));
            let stream = derive_seed(seed, index);
            index += 1;
            let est = with_exec(threads, |exec| {
                Ok(theory::mc_side_second_moment(a_n, k, d, trials, stream, &cell, exec)?)
            })?;
            let z = if est.paired_std_error > 0.0 {
                (est.estimate - est.exact_mean) / est.paired_std_error
            } else {
                0.0
            };
            let bound = SideMomentEstimate::lemma_bound(d, k);
            let below = est.estimate <= bound + 3.0 * est.std_error;
            writeln!(
                body,
                "{d},{k},{a_n},{trials},{},{},{},{},{z},{bound},{below}",
                est.estimate, est.std_error, est.exact_mean, est.paired_std_error
            )?;
        }
    }
    emit(out.as_deref(), body.as_bytes(), &manifest)
}

fn rate_study(a: RateArgs) -> Result<()> {
    let Setup { mut r, seed, threads, out } = setup("rate-study", a.common, true)?;
    let mut spec = RateStudySpec::new(seed);
    spec.sample_sizes = r.list("ns", a.ns, spec.sample_sizes.clone())?;
    spec.sigma = r.or_default("sigma", a.sigma, spec.sigma)?;
    spec.lipschitz = r.or_default("L", a.lipschitz, spec.lipschitz)?;
    spec.repetitions = r.or_default("reps", a.reps, spec.repetitions)?;
    spec.trees = r.or_default("trees", a.trees, spec.trees)?;
    spec.test_points = r.or_default("test-points", a.test_points, spec.test_points)?;
    spec.subsample_fraction = r.optional("subsample-fraction", a.subsample_fraction)?;
    let manifest = r.finish()?;
    let result = with_exec(threads, |exec| Ok(run_rate_study(&spec, exec)?))?;
    eprintln!("slope={}", result.slope);
    let mut body = Vec::new();
    result.write_csv(&mut body)?;
    emit(out.as_deref(), &body, &manifest)
}
