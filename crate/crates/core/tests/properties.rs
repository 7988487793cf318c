mod common;

use common::{random_matrix, random_orthogonal, random_params, random_positive, rng};
use mgfa::constraints::{bounds_satisfied, governed_quantities_satisfied, project, ProjectionMode};
use mgfa::model::{
    covariance_from_factors, log_density, mixture_log_likelihood, relative_reduction, Dataset,
    EigenBounds,
};
use mgfa::simulation::{misclassification_error, sample_n, MixtureSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn dense_log_density(x: &DVector<f64>, mean: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let chol = sigma.clone().cholesky().unwrap();
    let diff = x - mean;
    let solved = chol.solve(&diff);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + diff.dot(&solved))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn factored_density_matches_dense(seed in any::<u64>(), d in 2usize..=10, qfrac in 0.0f64..1.0) {
        let mut r = rng(seed);
        let q = 1 + ((d - 1) as f64 * qfrac) as usize;
        let q = q.min(d - 1);
        let lam = random_matrix(&mut r, d, q, 1.5);
        let psi = random_positive(&mut r, d, 0.05, 2.0);
        let mean = random_matrix(&mut r, d, 1, 2.0).column(0).into_owned();
        let x = random_matrix(&mut r, d, 1, 3.0).column(0).into_owned();
        let sigma = covariance_from_factors(&lam, &psi).unwrap();
        let dense = dense_log_density(&x, &mean, &sigma);
        let fast = log_density(&x, &mean, &lam, &psi).unwrap();
        prop_assert!((fast - dense).abs() <= 1e-8 * dense.abs().max(1.0));
    }

    #[test]
    fn covariance_is_positive_definite_above_min_uniqueness(seed in any::<u64>(), d in 2usize..=8) {
        let mut r = rng(seed);
        let q = r.random_range(1..d);
        let lam = random_matrix(&mut r, d, q, 2.0);
        let psi = random_positive(&mut r, d, 0.01, 1.0);
        let sigma = covariance_from_factors(&lam, &psi).unwrap();
        prop_assert!((&sigma - sigma.transpose()).amax() == 0.0);
        let min_eig = sigma.symmetric_eigenvalues().min();
        prop_assert!(min_eig >= psi.min() - 1e-10);
    }

    #[test]
    fn likelihood_invariant_under_component_permutation(seed in any::<u64>(), g in 1usize..=4) {
        let mut r = rng(seed);
        let params = random_params(&mut r, g, 4, 2, 3.0);
        let data = Dataset::new(random_matrix(&mut r, 25, 4, 5.0)).unwrap();
        let mut order: Vec<usize> = (0..g).collect();
        order.rotate_left(seed as usize % g);
        order.swap(0, g - 1);
        let base = mixture_log_likelihood(&params, &data).unwrap();
        let permuted = mixture_log_likelihood(&params.permuted(&order).unwrap(), &data).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-9 * base.abs());
    }

    #[test]
    fn likelihood_invariant_under_loading_rotation(seed in any::<u64>(), q in 1usize..=3) {
        let mut r = rng(seed);
        let params = random_params(&mut r, 2, 5, q, 3.0);
        let data = Dataset::new(random_matrix(&mut r, 20, 5, 4.0)).unwrap();
        let mut components = params.components().to_vec();
        for c in &mut components {
            let h = random_orthogonal(&mut r, q);
            c.loadings = &c.loadings * h.transpose();
        }
        let rotated = mgfa::MgfaParams::new(components).unwrap();
        let a = mixture_log_likelihood(&params, &data).unwrap();
        let b = mixture_log_likelihood(&rotated, &data).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs());
    }

    #[test]
    fn projection_is_idempotent_and_feasible(
        seed in any::<u64>(),
        d in 2usize..=8,
        lower in 0.01f64..0.5,
        width in 0.5f64..10.0,
        strict in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let q = r.random_range(1..d);
        let lam = random_matrix(&mut r, d, q, 3.0);
        let psi = random_positive(&mut r, d, 1e-4, 4.0);
        let bounds = EigenBounds::new(lower, lower + width).unwrap();
        let mode = if strict { ProjectionMode::Strict } else { ProjectionMode::Literal };
        let (l1, p1) = project(&lam, &psi, &bounds, mode);
        let (l2, p2) = project(&l1, &p1, &bounds, mode);
        prop_assert_eq!(&l1, &l2);
        prop_assert_eq!(&p1, &p2);
        if strict {
            prop_assert!(bounds_satisfied(&l1, &p1, &bounds));
        } else {
            prop_assert!(p1.iter().skip(q).all(|&v| v >= lower - 1e-12));
            let slack = 1e-9 * (lower + width);
            let uniqueness_too_large = p1.iter().take(q).any(|&v| v > lower + width);
            prop_assert!(uniqueness_too_large || governed_quantities_satisfied(&l1, &p1, &bounds, slack));
        }
    }

    #[test]
    fn misclassification_symmetric_and_relabel_invariant(
        truth in prop::collection::vec(0usize..4, 1..40),
        noise in prop::collection::vec(0usize..4, 40),
        shift in 0usize..4,
    ) {
        let pred: Vec<usize> = truth.iter().zip(&noise).map(|(&t, &z)| if z == 0 { (t + 1) % 4 } else { t }).collect();
        let relabeled: Vec<usize> = pred.iter().map(|&p| (p + shift) % 4).collect();
        let e = misclassification_error(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert_eq!(e, misclassification_error(&truth, &pred).unwrap());
        prop_assert_eq!(e, misclassification_error(&relabeled, &truth).unwrap());
        prop_assert_eq!(misclassification_error(&truth, &truth).unwrap(), 0.0);
    }

    #[test]
    fn relative_reduction_sign_matches_parsimony_condition(d in 2usize..40, q in 1usize..40) {
        prop_assume!(q < d);
        let rr = relative_reduction(d, q).unwrap();
        let p = (d as i64 - q as i64).pow(2) - (d + q) as i64;
        prop_assert_eq!(rr > 0.0, p > 0);
    }
}

fn brute_force_error(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for i in 0..=p.len() {
                let mut v = p.clone();
                v.insert(i, k - 1);
                out.push(v);
            }
        }
        out
    }
    let mut table = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    let best = permutations(k)
        .iter()
        .map(|perm| (0..k).map(|i| table[i][perm[i]]).sum::<usize>())
        .max()
        .unwrap();
    1.0 - best as f64 / pred.len() as f64
}

#[test]
fn assignment_solver_matches_brute_force_beyond_enumeration_limit() {
    let mut r = rng(41);
    for _ in 0..8 {
        let k = 9;
        let truth: Vec<usize> = (0..60).map(|i| i % k).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| {
                if r.random_bool(0.3) {
                    r.random_range(0..k)
                } else {
                    (t * 4 + 1) % k
                }
            })
            .collect();
        let expected = brute_force_error(&pred, &truth, k);
        let got = misclassification_error(&pred, &truth).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }
}

#[test]
fn misclassification_zero_iff_aligned_by_permutation() {
    let truth = vec![0, 0, 1, 1, 2, 2];
    assert_eq!(
        misclassification_error(&[2, 2, 0, 0, 1, 1], &truth).unwrap(),
        0.0
    );
    assert!(misclassification_error(&[2, 2, 0, 1, 1, 1], &truth).unwrap() > 0.0);
}

#[test]
fn standardize_is_idempotent() {
    let mut r = rng(5);
    let spec = MixtureSpec::from_params(random_params(&mut r, 2, 4, 1, 4.0), 50);
    let data = sample_n(&spec, 50, 1).unwrap();
    let (once, _) = mgfa::data_io::standardize(&data).unwrap();
    let (twice, _) = mgfa::data_io::standardize(&once).unwrap();
    assert!((once.observations() - twice.observations()).amax() < 1e-12);
}
