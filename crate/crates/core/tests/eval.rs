use gdaflow::diffmath::Mat;
use gdaflow::eval::*;
use gdaflow::rng::SeedTree;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn cloud(n: usize, seed: u64) -> Mat<f64> {
    let mut rng = SeedTree::new(seed).rng();
    Mat::from_vec(n, 2, (0..2 * n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn cost_of(cost: &[f64], n: usize, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
}

#[test]
fn hungarian_matches_brute_force() {
    let mut rng = SeedTree::new(1).rng();
    for instance in 0..100 {
        let n = 1 + instance % 6;
        // integer costs make ties common
        let cost: Vec<f64> = (0..n * n)
            .map(|_| if instance % 2 == 0 { rng.gen_range(0..5) as f64 } else { rng.gen::<f64>() * 10.0 })
            .collect();
        let perm = min_cost_assignment(&cost, n).unwrap();
        let mut seen = perm.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>(), "not a permutation");
        let best = permutations(n).iter().map(|p| cost_of(&cost, n, p)).fold(f64::INFINITY, f64::min);
        assert!((cost_of(&cost, n, &perm) - best).abs() < 1e-9, "instance {instance}");
    }
}

#[test]
fn assignment_rejects_bad_input() {
    assert!(matches!(min_cost_assignment(&[1.0, 2.0], 2), Err(AssignmentError::Shape { .. })));
    assert!(matches!(
        min_cost_assignment(&[1.0, f64::NAN, 0.0, 1.0], 2),
        Err(AssignmentError::NonFinite { row: 0, col: 1 })
    ));
}

#[test]
fn translation_distance_is_exact() {
    let a = cloud(40, 2);
    let mut b = a.clone();
    for i in 0..b.rows() {
        let r = b.row_mut(i);
        r[0] += 3.0;
        r[1] -= 4.0;
    }
    assert!((wasserstein2(&a, &b).unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn permuted_cloud_is_at_distance_zero() {
    let a = cloud(30, 3);
    let idx: Vec<usize> = (0..30).rev().collect();
    assert!(wasserstein2(&a, &a.select_rows(&idx)).unwrap() < 1e-12);
}

#[test]
fn size_limits() {
    assert!(wasserstein2(&cloud(3, 1), &cloud(4, 1)).is_err());
    let big = cloud(W2_MAX_POINTS + 1, 1);
    assert!(wasserstein2(&big, &big).is_err());
    assert!(wasserstein2_subsampled(&big, &cloud(600, 2), 100, SeedTree::new(1)).unwrap() > 0.0);
    assert_eq!(subsample(&big, 10, SeedTree::new(3)).rows(), 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn w2_is_a_metric(n in 1usize..12, s in 0u64..1000) {
        let (a, b, c) = (cloud(n, s), cloud(n, s + 1), cloud(n, s + 2));
        let ab = wasserstein2(&a, &b).unwrap();
        let ba = wasserstein2(&b, &a).unwrap();
        let bc = wasserstein2(&b, &c).unwrap();
        let ac = wasserstein2(&a, &c).unwrap();
        prop_assert!(wasserstein2(&a, &a).unwrap() < 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn pearson_is_affine_invariant(
        xs in proptest::collection::vec(-10.0f64..10.0, 3..20),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x + i as f64).collect();
        let Ok(r) = pearson(&xs, &ys) else { return Ok(()) };
        let xs2: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
        prop_assert!((pearson(&xs2, &ys).unwrap() - r).abs() < 1e-9);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        prop_assert!((pearson(&neg, &ys).unwrap() + r).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r));
    }
}

#[test]
fn pearson_known_values() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap() - 1.0).abs() < 1e-15);
    // sxy = 8, sxx = 10, syy = 10
    let r = pearson(&x, &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
    assert!((r - 0.8).abs() < 1e-12);
    assert!(pearson(&x, &[1.0; 5]).is_err());
    assert!(pearson(&x[..1], &[1.0]).is_err());
    assert!(pearson(&x, &[1.0]).is_err());
}

#[test]
fn adjacent_max_picks_the_largest_gap() {
    let a = cloud(20, 5);
    let shifted = |d: f64| {
        let mut m = a.clone();
        for i in 0..m.rows() {
            m.row_mut(i)[0] += d;
        }
        m
    };
    let (b, c) = (shifted(1.0), shifted(3.5));
    let got = adjacent_max_w2(&[&a, &b, &c], 512, SeedTree::new(1)).unwrap();
    assert!((got - 2.5).abs() < 1e-12);
}
