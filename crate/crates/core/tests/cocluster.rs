mod common;

use codebook_transfer::cocluster::factorize_from;
use codebook_transfer::{
    binarize, factorize, onmtf_objective, CoClusterConfig, DenseMatrix, SparseRatingMatrix,
};
use common::{block_fixture, random_matrix, rng};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn hand_built_block_factorization_is_exact() {
    let x = block_fixture();
    let member = DenseMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
    let s = DenseMatrix::from_rows(&[[5.0, 1.0], [1.0, 5.0]]).unwrap();
    assert_eq!(
        onmtf_objective(&x, &member, &s, &member, 1.0, 1.0).unwrap(),
        0.0
    );
}

#[test]
fn block_fixture_is_recovered() {
    let x = block_fixture();
    let cfg = CoClusterConfig {
        max_iters: 5000,
        tol: 1e-12,
        ..CoClusterConfig::new(2, 2)
    };
    let fac = factorize(&x, &cfg).unwrap();
    let fit = x.masked_residual_sq(&fac.reconstruction()).unwrap();
    assert!(fit <= 1e-6, "residual {fit}");
    let err = fac.reconstruction().max_abs_diff(&x.densify());
    assert!(err <= 1e-3, "max entry error {err}");

    let users = fac.user_memberships().unwrap();
    let items = fac.item_memberships().unwrap();
    let a = users.assignments();
    assert!(a[0] == a[1] && a[2] == a[3] && a[0] != a[2]);
    let b = items.assignments();
    assert!(b[0] == b[1] && b[2] == b[3] && b[0] != b[2]);
}

/// With one cluster per side and large penalties the factors are pinned near
/// P = 1, Q = 1 and the best constant is the observed mean.
#[test]
fn single_cluster_tends_to_observed_mean() {
    let mut r = rng(7);
    for _ in 0..5 {
        let x = random_matrix(&mut r, 6, 5, 0.6, 5);
        let mean = x.observed_mean().unwrap();
        let cfg = CoClusterConfig {
            alpha: 1e4,
            beta: 1e4,
            max_iters: 3000,
            tol: 1e-14,
            ..CoClusterConfig::new(1, 1)
        };
        let fac = factorize(&x, &cfg).unwrap();
        let recon = fac.reconstruction();
        for v in recon.as_slice() {
            assert!((v - mean).abs() < 1e-2, "{v} vs mean {mean}");
        }
    }
}

#[test]
fn identical_seeds_give_identical_factors() {
    let x = random_matrix(&mut rng(3), 12, 9, 0.5, 5);
    let cfg = CoClusterConfig {
        seed: 99,
        ..CoClusterConfig::new(3, 2)
    };
    let a = factorize(&x, &cfg).unwrap();
    let b = factorize(&x, &cfg).unwrap();
    assert_eq!(a.p, b.p);
    assert_eq!(a.s, b.s);
    assert_eq!(a.q, b.q);
    assert_eq!(a.objective_trace, b.objective_trace);
}

fn nonnegative_als_objective(x: &SparseRatingMatrix, k: usize, seed: u64, sweeps: usize) -> f64 {
    // Independent oracle: projected alternating least squares on X ≈ W Hᵀ,
    // each row solved coordinate-wise in closed form and clipped at zero.
    let (m, n) = (x.n_users(), x.n_items());
    let mut r = rng(seed);
    let mut w: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..k).map(|_| r.random::<f64>()).collect())
        .collect();
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| r.random::<f64>()).collect())
        .collect();
    let dense = x.densify();
    let pred = |w: &[f64], h: &[f64]| w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    for _ in 0..sweeps {
        for i in 0..m {
            for c in 0..k {
                let (mut num, mut den) = (0.0, 0.0);
                for j in 0..n {
                    let rest = pred(&w[i], &h[j]) - w[i][c] * h[j][c];
                    num += (dense[(i, j)] - rest) * h[j][c];
                    den += h[j][c] * h[j][c];
                }
                if den > 0.0 {
                    w[i][c] = (num / den).max(0.0);
                }
            }
        }
        for j in 0..n {
            for c in 0..k {
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..m {
                    let rest = pred(&w[i], &h[j]) - w[i][c] * h[j][c];
                    num += (dense[(i, j)] - rest) * w[i][c];
                    den += w[i][c] * w[i][c];
                }
                if den > 0.0 {
                    h[j][c] = (num / den).max(0.0);
                }
            }
        }
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            let d = dense[(i, j)] - pred(&w[i], &h[j]);
            total += d * d;
        }
    }
    total
}

#[test]
fn fit_quality_matches_nonnegative_als() {
    // α = β = 0 on fully observed 10×8 instances; PSQᵀ with k1 = k2 = 3 has
    // the same capacity as a rank-3 nonnegative factorization.
    for seed in 0..10 {
        let x = random_matrix(&mut rng(100 + seed), 10, 8, 1.1, 5);
        assert_eq!(x.len(), 80);
        let cfg = CoClusterConfig {
            alpha: 0.0,
            beta: 0.0,
            max_iters: 2000,
            tol: 1e-10,
            seed,
            ..CoClusterConfig::new(3, 3)
        };
        let fac = factorize(&x, &cfg).unwrap();
        assert!(fac.final_objective() <= fac.objective_trace[0]);
        let als = nonnegative_als_objective(&x, 3, seed, 200);
        let fitted = fac.final_objective();
        assert!(
            fitted <= 1.05 * als,
            "seed {seed}: factorize {fitted}, nn-ALS {als}"
        );
    }
}

#[test]
fn continuing_from_a_fixed_start_improves_it() {
    let x = random_matrix(&mut rng(5), 10, 8, 0.7, 5);
    let cfg = CoClusterConfig::new(2, 3);
    let mut p = DenseMatrix::filled(10, 2, 0.5);
    let mut s = DenseMatrix::filled(2, 3, 3.0);
    let mut q = DenseMatrix::filled(8, 3, 1.0 / 3.0);
    let start = onmtf_objective(&x, &p, &s, &q, cfg.alpha, cfg.beta).unwrap();
    let fac = factorize_from(&x, &cfg, &mut p, &mut s, &mut q).unwrap();
    assert_eq!(fac.objective_trace[0], start);
    assert!(fac.final_objective() < start);
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(32) })]

    #[test]
    fn trace_is_monotone_and_factors_nonnegative(
        seed in 0u64..10_000,
        m in 2usize..12,
        n in 2usize..10,
        k1 in 1usize..4,
        k2 in 1usize..4,
    ) {
        let x = random_matrix(&mut rng(seed), m, n, 0.5, 5);
        let cfg = CoClusterConfig {
            k1: k1.min(m),
            k2: k2.min(n),
            max_iters: 60,
            seed,
            ..CoClusterConfig::new(1, 1)
        };
        let fac = factorize(&x, &cfg).unwrap();
        for w in fac.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        prop_assert!(fac.p.min() >= 0.0 && fac.s.min() >= 0.0 && fac.q.min() >= 0.0);
    }

    #[test]
    fn binarize_ignores_increasing_row_transforms(
        rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 1..6),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let f = DenseMatrix::from_rows(&rows).unwrap();
        let g = f.map(|v| (scale * v + shift).exp());
        prop_assert_eq!(binarize(&f).unwrap(), binarize(&g).unwrap());
    }
}
