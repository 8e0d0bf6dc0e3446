mod common;

use codebook_transfer::transfer::{decode_score, initial_model, StepPolicy};
use codebook_transfer::{
    decode, fit, fit_baseline_mmmf, gradients, objective, DenseMatrix, RatingTriple,
    SparseRatingMatrix, TransferConfig, TransferModel,
};
use common::{block_fixture, random_matrix, rng};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;

fn random_dense(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

fn random_model(r: &mut ChaCha8Rng, m: usize, n: usize, k: usize, levels: usize) -> TransferModel {
    let u = random_dense(r, m, k, -1.0, 1.0);
    let v = random_dense(r, n, k, -1.0, 1.0);
    let theta = random_dense(r, m, levels, -2.0, 2.0);
    let b = random_dense(r, k, k, 0.5, 5.0);
    TransferModel::new(u, v, theta, b).unwrap()
}

#[derive(Clone, Copy)]
enum Block {
    U,
    V,
    Theta,
}

fn perturbed(model: &TransferModel, block: Block, idx: usize, delta: f64) -> TransferModel {
    let (mut u, mut v, mut theta) = (model.u().clone(), model.v().clone(), model.theta().clone());
    let target = match block {
        Block::U => &mut u,
        Block::V => &mut v,
        Block::Theta => &mut theta,
    };
    target.as_mut_slice()[idx] += delta;
    TransferModel::new(u, v, theta, model.codebook().clone()).unwrap()
}

#[test]
fn gradients_match_central_differences() {
    let lambda = 0.5;
    let mut r = rng(2024);
    let mut checked = 0;
    for _ in 0..20 {
        let m = r.random_range(2..=6);
        let n = r.random_range(2..=5);
        let y = random_matrix(&mut r, m, n, 0.5, 5);
        let model = random_model(&mut r, m, n, 3, 4);
        let g = gradients(&y, &model, lambda).unwrap();
        for (block, analytic) in [(Block::U, &g.u), (Block::V, &g.v), (Block::Theta, &g.theta)] {
            for (idx, &a) in analytic.as_slice().iter().enumerate() {
                let plus = objective(&y, &perturbed(&model, block, idx, FD_STEP), lambda).unwrap();
                let minus =
                    objective(&y, &perturbed(&model, block, idx, -FD_STEP), lambda).unwrap();
                let fd = (plus - minus) / (2.0 * FD_STEP);
                let err = (a - fd).abs();
                assert!(
                    err <= 1e-8 || err <= 1e-4 * a.abs().max(fd.abs()),
                    "analytic {a} vs finite difference {fd}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 500);
}

#[test]
fn hand_computed_objective() {
    // one rating y = 3, thresholds [-1, 0, 1, 2], z = 0, zero factors:
    // d = [1, 0, 1, 2] → h = [0, ½, 0, 0]; raising θ_2 lowers d_2 and raises the loss
    let y = SparseRatingMatrix::new(vec![RatingTriple::new(0, 0, 3)], 1, 1, 5).unwrap();
    let model = TransferModel::new(
        DenseMatrix::zeros(1, 1),
        DenseMatrix::zeros(1, 1),
        DenseMatrix::from_rows(&[[-1.0, 0.0, 1.0, 2.0]]).unwrap(),
        DenseMatrix::identity(1),
    )
    .unwrap();
    assert_eq!(objective(&y, &model, 0.5).unwrap(), 0.5);
    let g = gradients(&y, &model, 0.5).unwrap();
    assert_eq!(g.theta.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn block_fixture_is_reproduced_exactly() {
    let y = block_fixture();
    let b = DenseMatrix::from_rows(&[[5.0, 1.0], [1.0, 5.0]]).unwrap();
    let model = fit(&y, &b, &TransferConfig::default()).unwrap();
    let pred = decode(&model);
    for t in y.iter() {
        assert_eq!(
            pred.rating(t.user, t.item),
            t.rating,
            "at ({}, {})",
            t.user,
            t.item
        );
    }
}

#[test]
fn constant_target_decodes_to_its_value() {
    let triples = (0..5)
        .flat_map(|i| (0..4).map(move |j| RatingTriple::new(i, j, 3)))
        .collect();
    let y = SparseRatingMatrix::new(triples, 5, 4, 5).unwrap();
    let b = DenseMatrix::from_rows(&[[4.0, 2.0], [1.0, 3.0]]).unwrap();
    let model = fit(&y, &b, &TransferConfig::default()).unwrap();
    let pred = decode(&model);
    assert!(pred_all(&pred, 5, 4, 3));
}

fn pred_all(pred: &codebook_transfer::PredictionMatrix, m: usize, n: usize, value: u8) -> bool {
    (0..m).all(|i| (0..n).all(|j| pred.rating(i, j) == value))
}

#[test]
fn codebook_is_untouched_by_fit() {
    let y = random_matrix(&mut rng(11), 8, 7, 0.5, 5);
    let b = random_dense(&mut rng(12), 3, 2, 1.0, 5.0);
    let before = b.clone();
    let model = fit(
        &y,
        &b,
        &TransferConfig {
            max_iters: 50,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(b, before);
    assert_eq!(model.codebook(), &before);
}

#[test]
fn identity_codebook_is_the_mmmf_baseline() {
    let y = random_matrix(&mut rng(21), 9, 7, 0.5, 5);
    let cfg = TransferConfig {
        max_iters: 80,
        seed: 4,
        ..Default::default()
    };
    let a = fit(&y, &DenseMatrix::identity(3), &cfg).unwrap();
    let b = fit_baseline_mmmf(&y, 3, &cfg).unwrap();
    assert_eq!(a.objective_trace(), b.objective_trace());
    assert_eq!(a.u(), b.u());
}

#[test]
fn fit_is_deterministic_and_starts_from_the_seeded_model() {
    let y = random_matrix(&mut rng(31), 10, 6, 0.6, 5);
    let b = random_dense(&mut rng(32), 2, 3, 1.0, 5.0);
    let cfg = TransferConfig {
        max_iters: 40,
        seed: 9,
        ..Default::default()
    };
    let a = fit(&y, &b, &cfg).unwrap();
    let c = fit(&y, &b, &cfg).unwrap();
    assert_eq!(a.objective_trace(), c.objective_trace());
    assert_eq!(a.v(), c.v());
    let init = initial_model(10, 6, &b, &cfg).unwrap();
    assert_eq!(
        a.objective_trace()[0],
        objective(&y, &init, cfg.lambda).unwrap()
    );
    assert_eq!(init.theta().row(0), &[-1.0, 0.0, 1.0, 2.0]);
}

#[test]
fn fixed_steps_follow_the_plain_update() {
    let y = random_matrix(&mut rng(41), 5, 4, 0.7, 5);
    let b = random_dense(&mut rng(42), 2, 2, 1.0, 5.0);
    let cfg = TransferConfig {
        max_iters: 1,
        step: StepPolicy::Fixed,
        learn_rate: 0.05,
        ..Default::default()
    };
    let fitted = fit(&y, &b, &cfg).unwrap();
    let init = initial_model(5, 4, &b, &cfg).unwrap();
    let g = gradients(&y, &init, cfg.lambda).unwrap();
    let expected = init.u().add_scaled(-0.05, &g.u);
    assert!(fitted.u().max_abs_diff(&expected) < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(50) })]

    #[test]
    fn backtracking_trace_never_increases(
        seed in 0u64..100_000,
        m in 2usize..=20,
        n in 2usize..=15,
        k1 in 1usize..4,
        k2 in 1usize..4,
    ) {
        let mut r = rng(seed);
        let y = random_matrix(&mut r, m, n, 0.3, 5);
        let b = random_dense(&mut r, k1, k2, 1.0, 5.0);
        let cfg = TransferConfig { max_iters: 60, seed, ..Default::default() };
        let model = fit(&y, &b, &cfg).unwrap();
        for w in model.objective_trace().windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn decoding_stays_in_range(
        score in -1e6f64..1e6,
        thresholds in proptest::collection::vec(-1e6f64..1e6, 4),
    ) {
        let y = decode_score(score, &thresholds);
        prop_assert!((1..=5).contains(&y));
    }

    #[test]
    fn decoding_is_monotone_in_the_score(
        a in -10f64..10.0,
        b in -10f64..10.0,
        thresholds in proptest::collection::vec(-10f64..10.0, 1..9),
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(decode_score(lo, &thresholds) <= decode_score(hi, &thresholds));
    }
}
