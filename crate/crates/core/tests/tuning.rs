use proptest::prelude::*;
use subforest::dataset::{generate_model, split_train_test, ModelSpec};
use subforest::forest::{empirical_l2_risk, train_forest_with, Resample};
use subforest::tuning::*;
use subforest::Exec;

/// Literal scan of the definition: collect every grid value satisfying the
/// strict inequality, then take the smallest.
fn brute_force_optimum(grid: &[usize], risks: &[f64], tol: f64) -> usize {
    let min = risks.iter().copied().fold(f64::INFINITY, f64::min);
    let max = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ok: Vec<usize> = grid
        .iter()
        .zip(risks)
        .filter(|(_, &l)| (l - min).abs() < tol * (max - min))
        .map(|(&g, _)| g)
        .collect();
    ok.into_iter().min().unwrap_or(grid[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn optimum_matches_definition(
        risks in prop::collection::vec(prop_oneof![0.0f64..2.0, Just(0.5)], 1..30),
        tol in prop_oneof![Just(0.05), 0.0f64..0.5],
    ) {
        let grid: Vec<usize> = (0..risks.len()).map(|i| 3 * i + 2).collect();
        prop_assert_eq!(extract_optimum(&grid, &risks, tol).unwrap(), brute_force_optimum(&grid, &risks, tol));
    }
}

#[test]
fn strictly_decreasing_risks() {
    let grid: Vec<usize> = (1..=11).collect();
    let risks: Vec<f64> = (0..11).map(|i| 1.0 - 0.1 * i as f64).collect();
    // spread 1.0, threshold 0.05: only the last point qualifies
    assert_eq!(extract_optimum(&grid, &risks, 0.05).unwrap(), 11);
    let risks = [1.0, 0.5, 0.04, 0.02, 0.0];
    assert_eq!(extract_optimum(&[1, 2, 3, 4, 5], &risks, 0.05).unwrap(), 3);
}

fn small_spec(parameter: SweepParameter, grid: Vec<usize>) -> SweepSpec {
    SweepSpec::new(ModelSpec::new(1).unwrap(), 120, parameter, 12, 3, 5).with_grid(grid)
}

#[test]
fn sweep_is_reproducible_across_schedules() {
    let spec = small_spec(SweepParameter::MaxNodes, vec![2, 10, 48, 96]);
    let a = run_sweep(&spec, Exec::Sequential).unwrap();
    let b = run_sweep(&spec, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    assert!(a.grid.contains(&a.optimum));
    assert_eq!(a.mean_risk.len(), a.grid.len());
    assert!(a.mean_risk.iter().all(|&r| r >= 0.0));
}

#[test]
fn reference_uses_the_same_splits() {
    let spec = small_spec(SweepParameter::SampleSize, vec![40, 96]);
    let result = run_sweep(&spec, Exec::Parallel).unwrap();
    for (r, seeds) in result.seeds.iter().enumerate() {
        assert_eq!(*seeds, RepetitionSeeds::new(spec.master_seed, r));
        let data = generate_model(&spec.model, spec.n, seeds.data).unwrap();
        let (train, test) = split_train_test(&data, spec.train_fraction, seeds.split).unwrap();
        let reference = subforest::ForestConfig::breiman(seeds.reference).with_trees(12);
        let forest = train_forest_with(&train, &reference, Exec::Parallel).unwrap();
        assert_eq!(empirical_l2_risk(&forest, &test).unwrap(), result.reference_risks[r]);

        let swept = spec
            .base_config
            .with_resample(Resample::Subsample(40))
            .with_seed(RepetitionSeeds::forest(spec.master_seed, r, 40));
        let forest = train_forest_with(&train, &swept, Exec::Parallel).unwrap();
        assert_eq!(empirical_l2_risk(&forest, &test).unwrap(), result.risks[r][0]);
    }
}

#[test]
fn full_subsample_matches_no_resampling() {
    let spec = small_spec(SweepParameter::SampleSize, vec![96]);
    let full = run_sweep(&spec, Exec::Parallel).unwrap();
    for (r, seeds) in full.seeds.iter().enumerate() {
        let data = generate_model(&spec.model, spec.n, seeds.data).unwrap();
        let (train, test) = split_train_test(&data, spec.train_fraction, seeds.split).unwrap();
        let none = spec
            .base_config
            .with_resample(Resample::None)
            .with_seed(RepetitionSeeds::forest(spec.master_seed, r, 96));
        let forest = train_forest_with(&train, &none, Exec::Parallel).unwrap();
        let risk = empirical_l2_risk(&forest, &test).unwrap();
        assert!((risk - full.risks[r][0]).abs() <= 1e-9 * risk);
    }
}

#[test]
fn invalid_grids_are_rejected() {
    assert!(run_sweep(&small_spec(SweepParameter::MaxNodes, vec![1, 10]), Exec::Parallel).is_err());
    assert!(run_sweep(&small_spec(SweepParameter::MaxNodes, vec![10, 500]), Exec::Parallel).is_err());
    assert!(run_sweep(&small_spec(SweepParameter::SampleSize, vec![10, 10]), Exec::Parallel).is_err());
    assert!(run_sweep(&small_spec(SweepParameter::SampleSize, vec![]), Exec::Parallel).is_err());
}

#[test]
fn two_leaves_underfit_model_one() {
    let train = train_size(400, DEFAULT_TRAIN_FRACTION);
    let grid = vec![2, (0.3 * train as f64).round() as usize, train];
    let spec = SweepSpec::new(ModelSpec::new(1).unwrap(), 400, SweepParameter::MaxNodes, 100, 10, 7).with_grid(grid);
    let r = run_sweep(&spec, Exec::Parallel).unwrap();
    assert!(r.mean_risk[1] < r.mean_risk[0], "{:?}", r.mean_risk);
}

#[test]
fn sweep_csv_round_trips_the_curve() {
    let r = run_sweep(&small_spec(SweepParameter::MaxNodes, vec![4, 20]), Exec::Parallel).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("parameter_value,mean_risk,std_risk,reference_risk,n,model_id,repetitions,M,seed\n"));
    let (grid, risks) = read_sweep_csv(buf.as_slice()).unwrap();
    assert_eq!(grid, r.grid);
    assert_eq!(risks, r.mean_risk);
}

#[test]
fn proportionality_rows_report_ratios() {
    let template = SweepTemplate {
        parameter: SweepParameter::MaxNodes,
        fractions: vec![0.1, 0.3, 0.6, 1.0],
        base_config: SweepParameter::MaxNodes.base_config(8),
        repetitions: 2,
        master_seed: 3,
        tolerance: DEFAULT_TOLERANCE,
    };
    let rows = proportionality_study(&ModelSpec::new(1).unwrap(), &[100, 200], &template, Exec::Parallel).unwrap();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row.ratio, row.optimum as f64 / row.n as f64);
    }
    let mut buf = Vec::new();
    write_proportionality_csv(&rows, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
}
