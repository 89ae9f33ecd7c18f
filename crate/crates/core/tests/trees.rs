use proptest::prelude::*;
use rand::Rng;
use subforest::cart::{grow_cart_tree, CartParams};
use subforest::dataset::{generate_model, Dataset, ModelSpec, Origin};
use subforest::median_tree::{grow_median_tree, MedianTreeParams};
use subforest::sampling::{bootstrap_sample, derive_stream};
use subforest::tree::{NodeKind, RegressionTree};

fn uniform(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = derive_stream(seed, 99);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
    Dataset::new(x, y, d, Origin::External).unwrap()
}

fn leaves_containing(tree: &RegressionTree, x: &[f64]) -> usize {
    tree.leaf_ids().filter(|&l| tree.cell(l).contains(x)).count()
}

#[test]
fn cart_leaf_cells_partition_the_cube() {
    let data = generate_model(&ModelSpec::new(2).unwrap(), 300, 5).unwrap();
    let idx = bootstrap_sample(data.n(), &mut derive_stream(5, 1)).unwrap();
    let params = CartParams { mtry: 2, nodesize: 5, maxnodes: None };
    let tree = grow_cart_tree(&data, &idx, params, &mut derive_stream(5, 2)).unwrap();
    let volume: f64 = tree.leaf_ids().map(|l| tree.cell(l).volume()).sum();
    assert!((volume - 1.0).abs() < 1e-9, "leaf volumes sum to {volume}");

    let mut rng = derive_stream(5, 3);
    let mut x = vec![0.0; data.d()];
    for _ in 0..10_000 {
        x.iter_mut().for_each(|v| *v = rng.random());
        assert_eq!(leaves_containing(&tree, &x), 1);
        assert!(tree.cell(tree.leaf_of(&x)).contains(&x));
    }
    // faces of the cube belong to exactly one leaf too
    assert_eq!(leaves_containing(&tree, &vec![0.0; data.d()]), 1);
    assert_eq!(leaves_containing(&tree, &vec![1.0; data.d()]), 1);
}

#[test]
fn median_leaf_cells_partition_the_cube() {
    let data = uniform(256, 3, 8);
    let idx: Vec<usize> = (0..256).collect();
    let tree = grow_median_tree(&data, &idx, MedianTreeParams::new(256, 6).unwrap(), &mut derive_stream(8, 1)).unwrap();
    let mut rng = derive_stream(8, 2);
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..3).map(|_| rng.random()).collect();
        assert_eq!(leaves_containing(&tree, &x), 1);
    }
}

/// Per-leaf sums computed by routing every training row, independent of
/// the values stored during growth.
fn leaf_folds(tree: &RegressionTree, data: &Dataset, idx: &[usize]) -> Vec<(usize, f64, usize)> {
    tree.leaf_ids()
        .map(|l| {
            let cell = tree.cell(l);
            let inside: Vec<usize> = idx.iter().copied().filter(|&i| cell.contains(data.row(i))).collect();
            (l, inside.iter().map(|&i| data.responses()[i]).sum(), inside.len())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cart_leaves_store_routed_means(n in 2usize..120, d in 1usize..5, nodesize in 1usize..8, seed in any::<u64>()) {
        let data = uniform(n, d, seed);
        let idx = bootstrap_sample(n, &mut derive_stream(seed, 1)).unwrap();
        let mtry = 1 + (seed as usize % d);
        let tree = grow_cart_tree(&data, &idx, CartParams { mtry, nodesize, maxnodes: None }, &mut derive_stream(seed, 2)).unwrap();
        for (l, sum, count) in leaf_folds(&tree, &data, &idx) {
            let node = tree.node(l);
            prop_assert_eq!(node.count, count);
            prop_assert!(count >= 1);
            let mean = sum / count as f64;
            prop_assert!((node.value - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        }
        // splits only where the stopping rule allows
        for node in tree.nodes() {
            if !node.is_leaf() {
                prop_assert!(node.count > nodesize);
            }
        }
    }

    #[test]
    fn training_risk_matches_leaf_fold(n in 2usize..80, d in 1usize..4, seed in any::<u64>()) {
        let data = uniform(n, d, seed);
        let idx: Vec<usize> = (0..n).collect();
        let tree = grow_cart_tree(&data, &idx, CartParams { mtry: d, nodesize: 3, maxnodes: None }, &mut derive_stream(seed, 2)).unwrap();
        let y = data.responses();
        let by_prediction: f64 = idx.iter().map(|&i| (tree.predict(data.row(i)).unwrap() - y[i]).powi(2)).sum::<f64>() / n as f64;
        // within-leaf sum of squares, leaf by leaf
        let mut by_leaves = 0.0;
        for l in tree.leaf_ids() {
            let cell = tree.cell(l);
            let ys: Vec<f64> = idx.iter().filter(|&&i| cell.contains(data.row(i))).map(|&i| y[i]).collect();
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            by_leaves += ys.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        by_leaves /= n as f64;
        prop_assert!((by_prediction - by_leaves).abs() <= 1e-9 * by_leaves.max(1e-12));
    }

    #[test]
    fn best_first_budget_is_respected_and_nested(n in 10usize..120, d in 1usize..4, small in 2usize..10, extra in 1usize..20, seed in any::<u64>()) {
        let data = uniform(n, d, seed);
        let idx: Vec<usize> = (0..n).collect();
        let grow = |budget| {
            grow_cart_tree(&data, &idx, CartParams { mtry: d, nodesize: 1, maxnodes: Some(budget) }, &mut derive_stream(seed, 4)).unwrap()
        };
        let a = grow(small);
        let b = grow(small + extra);
        prop_assert!(a.n_leaves() <= small);
        prop_assert!(b.n_leaves() <= small + extra);
        prop_assert!(a.nodes().len() <= b.nodes().len());
        // node ids are assigned in split order, so the smaller tree is a prefix
        for (id, node) in a.nodes().iter().enumerate() {
            let other = b.node(id);
            prop_assert_eq!(node.parent, other.parent);
            prop_assert_eq!(node.count, other.count);
            if let NodeKind::Internal { split, .. } = node.kind {
                let NodeKind::Internal { split: s2, .. } = other.kind else {
                    return Err(TestCaseError::fail(format!("node {id} is a leaf in the larger tree")));
                };
                prop_assert_eq!(split, s2);
            }
        }
    }
}

#[test]
fn median_tree_structure_over_many_trees() {
    let mut trees = 0;
    for (s, &a_n) in [64usize, 128, 256].iter().enumerate() {
        let max_k = MedianTreeParams::max_depth(a_n);
        for rep in 0..34 {
            let k = rep % (max_k + 1);
            let seed = (s * 1000 + rep) as u64;
            let data = uniform(a_n, 1 + rep % 4, seed);
            let idx: Vec<usize> = (0..a_n).collect();
            let tree = grow_median_tree(&data, &idx, MedianTreeParams::new(a_n, k).unwrap(), &mut derive_stream(seed, 1)).unwrap();
            let leaves: Vec<usize> = tree.leaf_ids().collect();
            assert_eq!(leaves.len(), 1 << k);
            assert!(leaves.iter().all(|&l| tree.node(l).depth == k));
            let mass: usize = leaves.iter().map(|&l| tree.node(l).count).sum();
            assert_eq!(mass, a_n - ((1 << k) - 1));
            let nominal = a_n as f64 / (1u64 << k) as f64;
            for &l in &leaves {
                let c = tree.node(l).count as f64;
                assert!(c >= nominal - 2.0 && c <= nominal, "leaf count {c} outside [{}, {nominal}]", nominal - 2.0);
            }
            for node in tree.nodes() {
                if let NodeKind::Internal { left, right, .. } = node.kind {
                    let (l, r) = (tree.node(left).count, tree.node(right).count);
                    assert_eq!((l, r), (node.count / 2, node.count.div_ceil(2) - 1));
                }
            }
            trees += 1;
        }
    }
    assert!(trees >= 100);
}

#[test]
fn median_leaves_store_routed_means() {
    let data = uniform(128, 2, 21);
    let idx: Vec<usize> = (0..128).collect();
    let tree = grow_median_tree(&data, &idx, MedianTreeParams::new(128, 4).unwrap(), &mut derive_stream(21, 0)).unwrap();
    for l in tree.leaf_ids() {
        // points strictly inside the cell; the removed median points sit on faces
        let cell = tree.cell(l);
        let inside: Vec<f64> = idx
            .iter()
            .filter(|&&i| {
                let x = data.row(i);
                (0..2).all(|j| x[j] > cell.lower[j] && x[j] < cell.upper[j])
            })
            .map(|&i| data.responses()[i])
            .collect();
        assert_eq!(inside.len(), tree.node(l).count);
        let mean = inside.iter().sum::<f64>() / inside.len() as f64;
        assert!((mean - tree.node(l).value).abs() <= 1e-12 * mean.abs().max(1.0));
    }
}

#[test]
fn tree_text_survives_reparse() {
    let data = generate_model(&ModelSpec::new(4).unwrap(), 120, 3).unwrap();
    let idx: Vec<usize> = (0..120).collect();
    let tree = grow_cart_tree(&data, &idx, CartParams { mtry: 2, nodesize: 5, maxnodes: Some(12) }, &mut derive_stream(3, 0)).unwrap();
    let text = tree.to_text();
    let mut lines = std::io::BufRead::lines(std::io::Cursor::new(text.clone()));
    let mut line_no = 0;
    let (index, back) = RegressionTree::read_text(&mut lines, &mut line_no).unwrap();
    assert_eq!(index, 0);
    assert_eq!(back, tree);
    assert_eq!(back.to_text(), text);
}
