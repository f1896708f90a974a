//! Property checks shared by the property suite and the acceptance run.
//! Each check drives a proptest runner and reports the first failure.

#![allow(dead_code)]

use capital_core::dataset::{
    load_survival_csv, load_trial_csv, save_survival_csv, save_trial_csv, CovariateMatrix, TrialDataset,
};
use capital_core::eval::{conditional_mean_above, solve_eta};
use capital_core::forest::{fit_regression_forest, fit_survival_forest, ForestParams};
use capital_core::policytree::{search, PolicyNode, PolicyTree};
use capital_core::reward::{build_reward_table, build_rewards, RewardKind};
use capital_core::simulate::{gen_survival, gen_trial, Noise, ScenarioSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub type Check = fn(u32) -> Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

/// Contrast vectors mixing continuous values with heavy ties.
pub fn contrasts(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(-5.0..5.0f64, 1..max_len),
        prop::collection::vec((-4i32..=4).prop_map(|k| k as f64 * 0.1), 1..max_len),
    ]
}

fn column_matrix(cols: Vec<Vec<f64>>) -> CovariateMatrix {
    CovariateMatrix::from_columns(cols).unwrap()
}

/// (covariates with ties, dyadic rewards) for exact search comparisons.
pub fn search_instance(max_n: usize, max_r: usize) -> impl Strategy<Value = (CovariateMatrix, Vec<f64>)> {
    (1..=max_n, 1..=max_r).prop_flat_map(|(n, r)| {
        let value = prop_oneof![(-3i32..=3).prop_map(f64::from), -3.0..3.0f64];
        (
            prop::collection::vec(prop::collection::vec(value, n), r),
            prop::collection::vec((-16i32..=16).prop_map(|k| k as f64 / 8.0), n),
        )
            .prop_map(|(cols, g)| (column_matrix(cols), g))
    })
}

/// Exhaustive recursion over every leaf action and every split at every
/// observed value. Independent of the library search.
pub fn brute_force(x: &CovariateMatrix, gamma: &[f64], rows: &[usize], depth: usize) -> f64 {
    let select: f64 = rows.iter().map(|&i| gamma[i]).sum();
    let mut best = select.max(0.0);
    if depth == 0 || rows.len() < 2 {
        return best;
    }
    for j in 0..x.n_cols() {
        let mut values: Vec<f64> = rows.iter().map(|&i| x.get(i, j)).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for &t in &values[..values.len() - 1] {
            let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, j) <= t);
            let v = brute_force(x, gamma, &left, depth - 1) + brute_force(x, gamma, &right, depth - 1);
            if v > best {
                best = v;
            }
        }
    }
    best
}

pub fn cum_mean_monotone(cases: u32) -> Result<(), String> {
    run(cases, (contrasts(80), -3.0..3.0f64), |(c, delta)| {
        let t = build_reward_table(&c, delta).unwrap();
        prop_assert_eq!(t.cum_mean[0], t.r_sorted[0]);
        for w in t.r_sorted.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        for w in t.cum_mean.windows(2) {
            prop_assert!(w[0] >= w[1], "cum_mean rises: {:?}", w);
        }
        Ok(())
    })
}

pub fn penalty_zero_is_value(cases: u32) -> Result<(), String> {
    run(cases, (contrasts(80), -3.0..3.0f64), |(c, delta)| {
        let t = build_reward_table(&c, delta).unwrap();
        let value = build_rewards(&t, RewardKind::Value, 0.0).unwrap();
        let penalized = build_rewards(&t, RewardKind::Penalized, 0.0).unwrap();
        prop_assert_eq!(value.gamma_select, penalized.gamma_select);
        Ok(())
    })
}

pub fn sign_subset_optimal(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec((-6i32..=6).prop_map(|k| k as f64 * 0.5), 1..=15), -2.0..2.0f64);
    run(cases, strategy, |(c, delta)| {
        let t = build_reward_table(&c, delta).unwrap();
        let gamma = build_rewards(&t, RewardKind::Sign, 0.0).unwrap().gamma_select;
        prop_assert!(gamma.iter().all(|g| [-1.0, 0.0, 1.0].contains(g)));
        let n = c.len();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << n) {
            let v: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| gamma[i]).sum();
            best = best.max(v);
        }
        let chosen: f64 = (0..n).filter(|&i| t.cum_mean_of(i) > 0.0).map(|i| gamma[i]).sum();
        prop_assert_eq!(chosen, best);
        Ok(())
    })
}

pub fn prefix_feasibility(cases: u32) -> Result<(), String> {
    run(cases, (contrasts(80), -3.0..3.0f64), |(c, delta)| {
        let t = build_reward_table(&c, delta).unwrap();
        for k in 1..=c.len() {
            if t.cum_mean[k - 1] >= 0.0 {
                let top: f64 = (0..c.len()).filter(|&i| t.rank[i] <= k).map(|i| c[i]).sum();
                let scale = c.iter().map(|v| v.abs()).sum::<f64>() + k as f64 * delta.abs();
                prop_assert!(top >= k as f64 * delta - 1e-12 * scale, "k = {}", k);
            }
        }
        Ok(())
    })
}

pub fn rank_bijective_and_stable(cases: u32) -> Result<(), String> {
    run(cases, (contrasts(80), -3.0..3.0f64), |(c, delta)| {
        let t = build_reward_table(&c, delta).unwrap();
        let mut ranks = t.rank.clone();
        ranks.sort_unstable();
        prop_assert_eq!(ranks, (1..=c.len()).collect::<Vec<_>>());
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                if c[i] == c[j] {
                    prop_assert!(t.rank[i] < t.rank[j]);
                }
            }
        }
        prop_assert_eq!(t, build_reward_table(&c, delta).unwrap());
        Ok(())
    })
}

fn policy_nodes() -> impl Strategy<Value = PolicyNode> {
    let threshold = prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO;
    (0u8..2).prop_map(PolicyNode::leaf).prop_recursive(4, 31, 2, move |inner| {
        (0usize..6, threshold, inner.clone(), inner).prop_map(|(j, t, l, r)| PolicyNode::split(j, t, l, r))
    })
}

fn height(node: &PolicyNode) -> usize {
    match node {
        PolicyNode::Leaf { .. } => 0,
        PolicyNode::Split { left, right, .. } => 1 + height(left).max(height(right)),
    }
}

pub fn tree_json_round_trip(cases: u32) -> Result<(), String> {
    run(cases, (policy_nodes(), 0usize..2), |(root, slack)| {
        let tree = PolicyTree::new(height(&root).max(1) + slack, root).unwrap();
        prop_assert_eq!(PolicyTree::from_json(&tree.to_json()).unwrap(), tree.clone());
        prop_assert_eq!(PolicyTree::from_json(&tree.to_json_pretty()).unwrap(), tree);
        Ok(())
    })
}

pub fn csv_round_trip(cases: u32) -> Result<(), String> {
    let scenario = prop_oneof![
        (1u8..=3).prop_map(ScenarioSpec::trial),
        Just(ScenarioSpec::survival(Noise::Normal, 0.15)),
        Just(ScenarioSpec::survival(Noise::Extreme, 0.25)),
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("round.csv");
    run(cases, (scenario, 2usize..5, 24usize..60, any::<u64>()), |(spec, r, n, seed)| {
        let spec = spec.with_r(r);
        if spec.is_survival() {
            let ds = gen_survival(&spec, n, seed).unwrap();
            save_survival_csv(&ds, &path).unwrap();
            prop_assert_eq!(load_survival_csv(&path).unwrap(), ds);
        } else {
            let ds = gen_trial(&spec, n, seed).unwrap();
            save_trial_csv(&ds, &path).unwrap();
            prop_assert_eq!(load_trial_csv(&path, 0.5).unwrap(), ds);
        }
        Ok(())
    })?;
    // Arbitrary finite values, including extremes and subnormals.
    let value = prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO;
    let rows = (2usize..30).prop_flat_map(move |n| {
        (
            prop::collection::vec(value, n * 2),
            prop::collection::vec(value, n),
            prop::collection::vec(0u8..2, n - 2),
        )
    });
    run(cases, rows, |(xs, y, mut a)| {
        let n = y.len();
        a.extend([0, 1]);
        let x = column_matrix(vec![xs[..n].to_vec(), xs[n..].to_vec()]);
        let ds = TrialDataset::new(x, a, y, 0.5, None).unwrap();
        save_trial_csv(&ds, &path).unwrap();
        prop_assert_eq!(load_trial_csv(&path, 0.5).unwrap(), ds);
        Ok(())
    })
}

fn small_regression() -> impl Strategy<Value = (CovariateMatrix, Vec<f64>, ForestParams)> {
    (8usize..50, 1usize..4).prop_flat_map(|(n, r)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, n), r),
            prop::collection::vec(-3.0..3.0f64, n),
            1usize..15,
            1usize..5,
            any::<u64>(),
        )
            .prop_map(|(cols, y, trees, min_node, seed)| {
                let mut p = ForestParams::regression(seed).with_trees(trees);
                p.min_node_size = min_node;
                (column_matrix(cols), y, p)
            })
    })
}

pub fn oob_exclusion(cases: u32) -> Result<(), String> {
    run(cases, small_regression(), |(x, y, params)| {
        let forest = fit_regression_forest(&x, &y, &params).unwrap();
        let oob = forest.predict_oob(&x).unwrap();
        let full = forest.predict(&x).unwrap();
        let mut fallback = 0;
        for i in 0..x.n_rows() {
            let out: Vec<f64> = (0..forest.trees.len())
                .filter(|&t| forest.inbag[t][i] == 0)
                .map(|t| *forest.trees[t].leaf_for(&x, i))
                .collect();
            let expected = if out.is_empty() {
                fallback += 1;
                full[i]
            } else {
                out.iter().sum::<f64>() / out.len() as f64
            };
            prop_assert!((oob.values[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()), "row {}", i);
        }
        prop_assert_eq!(oob.fallback_count, fallback);
        for counts in &forest.inbag {
            prop_assert_eq!(counts.iter().map(|&c| c as usize).sum::<usize>(), x.n_rows());
        }
        Ok(())
    })
}

pub fn survival_curves_monotone(cases: u32) -> Result<(), String> {
    let strategy = (15usize..60, 1usize..4).prop_flat_map(|(n, r)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, n), r),
            prop::collection::vec(0.01..5.0f64, n),
            prop::collection::vec(0u8..2, n - 1),
            1usize..10,
            1usize..8,
            any::<u64>(),
            prop::collection::vec(-1.5..1.5f64, r),
        )
    });
    run(cases, strategy, |(cols, time, mut event, trees, min_node, seed, query)| {
        event.push(1);
        let x = column_matrix(cols);
        let mut p = ForestParams::survival(seed).with_trees(trees);
        p.min_node_size = min_node;
        let forest = fit_survival_forest(&x, &time, &event, &p).unwrap();
        let curve = forest.predict_survival_curve(&query).unwrap();
        prop_assert_eq!(curve.eval(0.0), 1.0);
        let mut prev = 1.0;
        for &t in &forest.time_grid {
            let s = curve.eval(t);
            prop_assert!((0.0..=1.0).contains(&s) && s <= prev, "S({}) = {}", t, s);
            prev = s;
        }
        let q = CovariateMatrix::from_rows(std::slice::from_ref(&query)).unwrap();
        let mut last = 0.0;
        for tau in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let mu = forest.predict_rmst(&q, tau).unwrap()[0];
            prop_assert!(mu >= last - 1e-12 && mu <= tau + 1e-12, "tau {}: {}", tau, mu);
            last = mu;
        }
        Ok(())
    })
}

pub fn search_matches_brute_force(cases: u32) -> Result<(), String> {
    run(cases, (search_instance(40, 3), 1usize..=2), |((x, gamma), depth)| {
        let found = search(&x, &gamma, depth).unwrap();
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        prop_assert_eq!(found.objective, brute_force(&x, &gamma, &rows, depth));
        let assigned = found.tree.assign(&x).unwrap();
        let value: f64 = (0..x.n_rows()).filter(|&i| assigned[i] == 1).map(|i| gamma[i]).sum();
        prop_assert_eq!(value, found.objective);
        prop_assert_eq!(assigned.iter().filter(|&&a| a == 1).count(), found.n_selected);
        Ok(())
    })
}

pub fn depth_monotone(cases: u32) -> Result<(), String> {
    run(cases, search_instance(25, 3), |(x, gamma)| {
        let objectives: Vec<f64> = (1..=3).map(|d| search(&x, &gamma, d).unwrap().objective).collect();
        prop_assert!(objectives[1] >= objectives[0] && objectives[2] >= objectives[1], "{:?}", objectives);
        Ok(())
    })
}

pub fn scale_invariant_selection(cases: u32) -> Result<(), String> {
    let scales = prop::sample::select(vec![0.125, 0.25, 0.5, 2.0, 3.0, 5.0, 7.0]);
    run(cases, (search_instance(40, 3), 1usize..=2, scales), |((x, gamma), depth, c)| {
        let scaled: Vec<f64> = gamma.iter().map(|g| g * c).collect();
        let a = search(&x, &gamma, depth).unwrap().tree.assign(&x).unwrap();
        let b = search(&x, &scaled, depth).unwrap().tree.assign(&x).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

pub fn worker_count_invariant(cases: u32) -> Result<(), String> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    run(cases, (search_instance(40, 3), small_regression()), |((x, gamma), (fx, fy, params))| {
        let a = one.install(|| search(&x, &gamma, 2).unwrap());
        let b = four.install(|| search(&x, &gamma, 2).unwrap());
        prop_assert_eq!(a, b);
        let fa = one.install(|| fit_regression_forest(&fx, &fy, &params).unwrap());
        let fb = four.install(|| fit_regression_forest(&fx, &fy, &params).unwrap());
        prop_assert_eq!(fa.predict_oob(&fx).unwrap(), fb.predict_oob(&fx).unwrap());
        prop_assert_eq!(fa, fb);
        Ok(())
    })
}

pub fn threshold_equivalence(cases: u32) -> Result<(), String> {
    run(cases, (contrasts(200), -3.0..3.0f64), |(c, delta)| {
        let max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if delta >= max {
            prop_assert!(solve_eta(&c, delta).is_err());
            return Ok(());
        }
        let eta = solve_eta(&c, delta).unwrap().eta;
        for &t in &c {
            if t < eta && t > eta - 1e-6 {
                continue;
            }
            let by_mean = conditional_mean_above(&c, t).unwrap() >= delta;
            prop_assert_eq!(t >= eta, by_mean, "t = {}, eta = {}", t, eta);
        }
        Ok(())
    })
}

pub fn threshold_scales(cases: u32) -> Result<(), String> {
    let grid = prop::collection::vec((-24i32..=24).prop_map(|k| k as f64 / 8.0), 2..150);
    let scales = prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 10.0]);
    run(cases, (grid, -3.0..3.0f64, scales), |(c, delta, k)| {
        let max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(delta < max);
        let base = solve_eta(&c, delta).unwrap().eta;
        let scaled_c: Vec<f64> = c.iter().map(|v| v * k).collect();
        let scaled = solve_eta(&scaled_c, delta * k).unwrap().eta;
        prop_assert!((scaled - k * base).abs() <= 2e-6 * (1.0 + k), "{} vs {}", scaled, k * base);
        for (v, s) in c.iter().zip(&scaled_c) {
            prop_assert_eq!(*v >= base, *s >= scaled);
        }
        Ok(())
    })
}
