mod common;

use common::{training_accuracy, xor_fixture};
use ctxmine::forest::{bootstrap_indices, gini_gain, grow_tree, train_forest, ForestConfig, ForestModel, Node, Tree};
use ctxmine::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(n_trees: usize, seed: u64) -> ForestConfig {
    ForestConfig { n_trees, seed, ..ForestConfig::default() }
}

fn noisy_data(seed: u64, n: usize, p: usize) -> (Matrix, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let y = rows
        .iter()
        .map(|r| {
            let s: f64 = r.iter().sum::<f64>() + rng.gen_range(-0.3..0.3);
            if s < p as f64 * 0.45 { 1 } else if s < p as f64 * 0.55 { 2 } else { 3 }
        })
        .collect();
    (Matrix::from_rows(&rows), y)
}

#[test]
fn out_of_bag_fraction_near_one_over_e() {
    let (x, y) = noisy_data(1, 1500, 3);
    let model = train_forest(&x, &y, &ForestConfig { n_trees: 30, max_depth: Some(3), ..cfg(30, 9) }).unwrap();
    for (t, oob) in model.oob_indices.iter().enumerate() {
        let frac = oob.len() as f64 / 1500.0;
        assert!((0.25..=0.50).contains(&frac), "tree {t}: {frac}");
        // the stored out-of-bag rows are exactly those missing from the draw
        let sample = bootstrap_indices(9, t, 1500);
        let mut in_bag = vec![false; 1500];
        sample.iter().for_each(|&i| in_bag[i] = true);
        assert_eq!(*oob, (0..1500).filter(|&i| !in_bag[i]).collect::<Vec<_>>());
    }
}

/// Walks a tree with its bootstrap sample and returns the Gini gain of every
/// split node.
fn split_gains(tree: &Tree, x: &Matrix, y: &[u32], classes: &[u32], sample: &[usize]) -> Vec<f64> {
    let mut gains = Vec::new();
    let mut stack = vec![(0usize, sample.to_vec())];
    let counts = |rows: &[usize]| -> Vec<u64> {
        classes.iter().map(|c| rows.iter().filter(|&&i| y[i] == *c).count() as u64).collect()
    };
    while let Some((node, rows)) = stack.pop() {
        if let Node::Split { feature, threshold, right } = &tree.nodes[node] {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, *feature) <= *threshold);
            gains.push(gini_gain(&counts(&rows), &counts(&l)));
            stack.push((node + 1, l));
            stack.push((*right, r));
        }
    }
    gains
}

#[test]
fn every_split_reduces_impurity() {
    let (x, y) = noisy_data(2, 400, 4);
    let model = train_forest(&x, &y, &cfg(10, 5)).unwrap();
    let mut checked = 0;
    for (t, tree) in model.trees.iter().enumerate() {
        let gains = split_gains(tree, &x, &y, &model.classes, &bootstrap_indices(5, t, 400));
        assert!(gains.iter().all(|&g| g > 0.0), "tree {t}: {gains:?}");
        checked += gains.len();
    }
    assert!(checked > 50);
}

#[test]
fn row_order_does_not_matter_given_the_same_draws() {
    let (x, y) = noisy_data(3, 300, 3);
    let n = x.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    let xp = x.select_rows(&perm);
    let yp: Vec<u32> = perm.iter().map(|&i| y[i]).collect();
    let mut position = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        position[old] = new;
    }
    let classes = [1, 2, 3];
    let c = cfg(1, 0);
    for t in 0..5u64 {
        let sample = bootstrap_indices(t, 0, n);
        let moved: Vec<usize> = sample.iter().map(|&i| position[i]).collect();
        let a = grow_tree(&x, &y, &classes, &sample, &c, &mut ChaCha8Rng::seed_from_u64(t)).unwrap();
        let b = grow_tree(&xp, &yp, &classes, &moved, &c, &mut ChaCha8Rng::seed_from_u64(t)).unwrap();
        let (probe, _) = noisy_data(100 + t, 200, 3);
        for r in 0..probe.nrows() {
            assert_eq!(a.vote(probe.row(r)), b.vote(probe.row(r)));
        }
    }
}

#[test]
fn forest_at_least_as_good_as_one_tree_on_xor() {
    let (x, y) = xor_fixture(8, 200);
    let single = train_forest(&x, &y, &ForestConfig { max_depth: Some(4), ..cfg(1, 8) }).unwrap();
    let forest = train_forest(&x, &y, &ForestConfig { max_depth: Some(4), ..cfg(50, 8) }).unwrap();
    let a1 = training_accuracy(&single.predict(&x).unwrap(), &y);
    let a50 = training_accuracy(&forest.predict(&x).unwrap(), &y);
    assert!(a50 >= a1, "forest {a50} < tree {a1}");
}

#[test]
fn xor_is_learned() {
    let (x, y) = xor_fixture(12, 200);
    let model = train_forest(&x, &y, &cfg(50, 12)).unwrap();
    assert!(training_accuracy(&model.predict(&x).unwrap(), &y) > 0.95);
}

#[test]
fn deterministic_and_round_trips() {
    let (x, y) = noisy_data(4, 250, 5);
    let a = train_forest(&x, &y, &cfg(20, 77)).unwrap();
    let b = train_forest(&x, &y, &cfg(20, 77)).unwrap();
    assert_eq!(a, b);
    let text = a.to_text();
    assert_eq!(text, b.to_text());
    let back = ForestModel::from_text(&text).unwrap();
    assert_eq!(back.to_text(), text);
    assert_eq!(back.predict(&x).unwrap(), a.predict(&x).unwrap());
    let c = train_forest(&x, &y, &cfg(20, 78)).unwrap();
    assert_ne!(c.to_text(), text);
}

#[test]
fn single_class_is_constant() {
    let (x, _) = noisy_data(5, 60, 2);
    let model = train_forest(&x, &vec![4; 60], &cfg(10, 1)).unwrap();
    let (probe, _) = noisy_data(6, 30, 2);
    assert!(model.predict(&probe).unwrap().iter().all(|&c| c == 4));
}

#[test]
fn vote_ties_go_to_the_smaller_class() {
    // two stumps with opposite single-leaf votes
    let leaf = |counts: Vec<u64>| Tree { nodes: vec![Node::Leaf { counts }] };
    let model = ForestModel {
        classes: vec![1, 4],
        n_features: 1,
        trees: vec![leaf(vec![0, 3]), leaf(vec![5, 0])],
        oob_indices: vec![vec![], vec![]],
    };
    assert_eq!(model.predict(&Matrix::column_vector(&[0.0])).unwrap(), vec![1]);
    let one = ForestModel { trees: vec![leaf(vec![2, 7])], oob_indices: vec![vec![]], ..model.clone() };
    assert_eq!(one.predict(&Matrix::column_vector(&[0.0])).unwrap(), vec![4]);
}
