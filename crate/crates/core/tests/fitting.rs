mod common;

use common::{random_matrix, random_params, rng};
use mgfa::aecm::{
    factor_scores, init_loadings, inner_loop, m_step_weights_means, FitConfig, Init, ScoreCentering,
};
use mgfa::constraints::{bounds_satisfied, ProjectionMode};
use mgfa::model::{Component, Dataset, EigenBounds, MgfaParams, Responsibilities};
use mgfa::simulation::{
    builtin_mixture, misclassification_error, right_maximum_reference, run_experiment,
    run_experiment_with_partitions, sample, sample_n, BoundsSetting, ExperimentConfig, MixtureSpec,
    RunStatus,
};
use mgfa::{fit, MgfaError};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn separable_data() -> Dataset {
    let mut r = rng(3);
    let centers = [[0.0, 0.0, 0.0], [20.0, 0.0, 0.0], [0.0, 20.0, 20.0]];
    let n = 60;
    let mut labels = Vec::new();
    let x = DMatrix::from_fn(n, 3, |i, j| centers[i % 3][j] + r.random_range(-0.05..0.05));
    for i in 0..n {
        labels.push(i % 3);
    }
    Dataset::new(x).unwrap().with_labels(labels).unwrap()
}

#[test]
fn separable_case_reproduces_the_initial_labels() {
    let data = separable_data();
    let truth = data.labels().unwrap().to_vec();
    let result = fit(
        &data,
        3,
        1,
        Init::Labels(truth.clone()),
        &FitConfig::default(),
    )
    .unwrap();
    assert_eq!(result.hard_labels, truth);
    assert_eq!(
        misclassification_error(&result.hard_labels, &truth).unwrap(),
        0.0
    );
    assert_eq!(result.factor_scores.shape(), (60, 1));
}

#[test]
fn fit_is_deterministic() {
    let spec = builtin_mixture(1).unwrap();
    let data = sample(&spec, 11).unwrap();
    let config = FitConfig {
        rng_seed: 5,
        ..FitConfig::default()
    };
    let a = fit(&data, 3, 2, Init::Random, &config).unwrap();
    let b = fit(&data, 3, 2, Init::Random, &config).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.loglik_trace, b.loglik_trace);
    assert_eq!(a.hard_labels, b.hard_labels);
}

#[test]
fn relabeled_init_gives_relabeled_result() {
    let spec = builtin_mixture(1).unwrap();
    let data = sample(&spec, 12).unwrap();
    let truth = data.labels().unwrap().to_vec();
    let perm = [2usize, 0, 1];
    let relabeled: Vec<usize> = truth.iter().map(|&l| perm[l]).collect();
    let config = FitConfig::default().with_bounds(Some(EigenBounds::new(0.01, 10.0).unwrap()));
    let a = fit(&data, 3, 2, Init::Labels(truth), &config).unwrap();
    let b = fit(&data, 3, 2, Init::Labels(relabeled), &config).unwrap();
    assert_eq!(a.outer_iterations, b.outer_iterations);
    assert!((a.log_likelihood() - b.log_likelihood()).abs() < 1e-8);
    for (la, lb) in a.hard_labels.iter().zip(&b.hard_labels) {
        assert_eq!(perm[*la], *lb);
    }
    for (g, &pg) in perm.iter().enumerate() {
        let ca = a.params.component(g);
        let cb = b.params.component(pg);
        assert!((ca.weight - cb.weight).abs() < 1e-12);
        assert!((&ca.mean - &cb.mean).amax() < 1e-10);
        assert!((ca.covariance() - cb.covariance()).amax() < 1e-8);
    }
}

#[test]
fn one_hot_m_step_matches_class_statistics() {
    let mut r = rng(8);
    let n = 37;
    let x = random_matrix(&mut r, n, 3, 4.0);
    let labels: Vec<usize> = (0..n).map(|i| (i * 7) % 3).collect();
    let data = Dataset::new(x.clone()).unwrap();
    let resp = Responsibilities::from_labels(&labels, 3).unwrap();
    let (weights, means, scatter) = m_step_weights_means(&resp, &data, 1).unwrap();
    for g in 0..3 {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == g).collect();
        let count = rows.len() as f64;
        assert!((weights[g] - count / n as f64).abs() < 1e-15);
        let mut mean = DVector::zeros(3);
        for &i in &rows {
            mean += x.row(i).transpose();
        }
        mean /= count;
        assert!((&means[g] - &mean).amax() < 1e-12);
        let mut s = DMatrix::zeros(3, 3);
        for &i in &rows {
            let c = x.row(i).transpose() - &mean;
            s += &c * c.transpose();
        }
        s /= count;
        assert!((&scatter.scatters[g] - &s).amax() < 1e-12);
        assert_eq!(scatter.counts[g], count);
    }
}

#[test]
fn weighted_means_match_direct_weighted_average() {
    let mut r = rng(9);
    let (n, d, g) = (20, 3, 3);
    let x = random_matrix(&mut r, n, d, 3.0);
    let mut z = DMatrix::from_fn(n, g, |_, _| r.random_range(0.05..1.0));
    for i in 0..n {
        let s: f64 = z.row(i).sum();
        z.row_mut(i).scale_mut(1.0 / s);
    }
    let data = Dataset::new(x.clone()).unwrap();
    let (weights, means, _) =
        m_step_weights_means(&Responsibilities::new(z.clone()).unwrap(), &data, 1).unwrap();
    for k in 0..g {
        let nk: f64 = z.column(k).sum();
        assert!((weights[k] - nk / n as f64).abs() < 1e-12);
        let mut m = DVector::zeros(d);
        for i in 0..n {
            m += x.row(i).transpose() * z[(i, k)];
        }
        assert!((&means[k] - m / nk).amax() < 1e-12);
    }
}

#[test]
fn uniform_responsibilities_put_both_means_at_the_grand_mean() {
    let mut r = rng(10);
    let data = Dataset::new(random_matrix(&mut r, 15, 3, 2.0)).unwrap();
    let resp = Responsibilities::new(DMatrix::from_element(15, 2, 0.5)).unwrap();
    let (_, means, _) = m_step_weights_means(&resp, &data, 1).unwrap();
    let grand = data.grand_mean();
    assert!((&means[0] - &grand).amax() < 1e-12);
    assert!((&means[1] - &grand).amax() < 1e-12);
}

#[test]
fn init_loadings_match_truncated_eigen_expansion() {
    let mut r = rng(12);
    let a = random_matrix(&mut r, 5, 5, 1.0);
    let s = &a * a.transpose() + DMatrix::identity(5, 5) * 0.1;
    let (lam, psi) = init_loadings(&s, 2).unwrap();
    let eig = s.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut truncated = DMatrix::zeros(5, 5);
    for &k in &order[..2] {
        let v = eig.eigenvectors.column(k);
        truncated += eig.eigenvalues[k] * v * v.transpose();
    }
    assert!((&lam * lam.transpose() - &truncated).amax() < 1e-10);
    for j in 0..5 {
        let expected = (s[(j, j)] - truncated[(j, j)]).max(mgfa::aecm::PSI_FLOOR);
        assert!((psi[j] - expected).abs() < 1e-10);
    }
}

#[test]
fn single_component_inner_loop_reaches_factor_analysis_stationarity() {
    let spec = builtin_mixture(1).unwrap();
    let data = sample_n(&spec, 3000, 21).unwrap();
    let resp = Responsibilities::from_labels(data.labels().unwrap(), 3).unwrap();
    let (_, _, scatter) = m_step_weights_means(&resp, &data, 2).unwrap();
    let s = &scatter.scatters[0];
    let (l0, p0) = init_loadings(s, 2).unwrap();
    let tight = FitConfig {
        inner_max_iterations: 100_000,
        inner_tolerance: 1e-12,
        ..FitConfig::default()
    };
    let out = inner_loop(s, &l0, &p0, &tight).unwrap();
    assert!(out.converged);
    let sigma =
        &out.loadings * out.loadings.transpose() + DMatrix::from_diagonal(&out.uniquenesses);
    for j in 0..6 {
        assert!((sigma[(j, j)] - s[(j, j)]).abs() < 1e-6);
    }

    // The default tolerance lands on the same fit up to the truncation floor.
    let oracle_gap = (&sigma - s).norm();
    let default = inner_loop(s, &l0, &p0, &FitConfig::default()).unwrap();
    let sigma_default = &default.loadings * default.loadings.transpose()
        + DMatrix::from_diagonal(&default.uniquenesses);
    assert!(((&sigma_default - s).norm() - oracle_gap).abs() < 1e-3);
}

fn feasible_start(
    r: &mut impl Rng,
    g: usize,
    d: usize,
    q: usize,
    bounds: &EigenBounds,
) -> MgfaParams {
    let params = random_params(r, g, d, q, 4.0);
    mgfa::project_all(&params, bounds, ProjectionMode::Strict)
}

#[test]
fn traces_are_nondecreasing_for_random_problems() {
    let mut r = rng(31);
    for trial in 0..12 {
        let d = r.random_range(2..=6);
        let q = r.random_range(1..d);
        let g = r.random_range(1..=3);
        let truth = random_params(&mut r, g, d, q, 5.0);
        let data = sample_n(&MixtureSpec::from_params(truth, 80), 80, trial).unwrap();
        let bounds = EigenBounds::new(0.05, 8.0).unwrap();
        let start = feasible_start(&mut r, g, d, q, &bounds);
        for config in [
            FitConfig::default(),
            FitConfig::default().with_bounds(Some(bounds)),
        ] {
            let result = match fit(&data, g, q, Init::Params(start.clone()), &config) {
                Ok(res) => res,
                Err(MgfaError::EmptyComponent { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            for w in result.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "trial {trial}: {} -> {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn infeasible_start_is_projected_and_the_trace_still_rises() {
    let spec = builtin_mixture(1).unwrap();
    let data = sample(&spec, 4).unwrap();
    let MixtureSpec {
        components: mgfa::simulation::MixtureComponents::Factor(truth),
        ..
    } = spec
    else {
        unreachable!()
    };
    let inflated: Vec<Component> = truth
        .components()
        .iter()
        .map(|c| Component {
            loadings: &c.loadings * 3.0,
            ..c.clone()
        })
        .collect();
    let start = MgfaParams::new(inflated).unwrap();
    assert!(start.max_covariance_eigenvalue() > 6.0);
    let bounds = EigenBounds::new(0.01, 6.0).unwrap();
    let config = FitConfig {
        projection: ProjectionMode::Strict,
        ..FitConfig::default()
    }
    .with_bounds(Some(bounds));
    let result = fit(&data, 3, 2, Init::Params(start), &config).unwrap();
    for c in result.params.components() {
        assert!(bounds_satisfied(&c.loadings, &c.uniquenesses, &bounds));
    }
    for w in result.loglik_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8);
    }
}

#[test]
fn empty_component_is_an_error_naming_it() {
    let data = separable_data();
    let mut labels = data.labels().unwrap().to_vec();
    for l in labels.iter_mut() {
        if *l == 2 {
            *l = 0;
        }
    }
    labels[0] = 2;
    match fit(&data, 3, 1, Init::Labels(labels), &FitConfig::default()) {
        Err(MgfaError::EmptyComponent { component, .. }) => assert_eq!(component, 3),
        other => panic!("expected an empty-component error, got {other:?}"),
    }
}

#[test]
fn grand_mean_scores_differ_from_component_mean_scores() {
    let data = separable_data();
    let result = fit(
        &data,
        3,
        1,
        Init::Labels(data.labels().unwrap().to_vec()),
        &FitConfig::default(),
    )
    .unwrap();
    let own = factor_scores(&result.params, &data, ScoreCentering::ComponentMean).unwrap();
    let grand = factor_scores(&result.params, &data, ScoreCentering::GrandMean).unwrap();
    assert_eq!(own.shape(), (60, 1));
    assert!((&own - &result.factor_scores).amax() < 1e-12);
    assert!((&own - &grand).amax() > 1e-3);
}

#[test]
fn reference_from_separable_data_matches_truth_and_ignores_label_names() {
    let data = separable_data();
    let reference = right_maximum_reference(&data, 1, &FitConfig::default()).unwrap();
    assert_eq!(reference.hard_labels, data.labels().unwrap());
    let relabeled: Vec<usize> = data
        .labels()
        .unwrap()
        .iter()
        .map(|&l| (l + 1) % 3)
        .collect();
    let other = fit(&data, 3, 1, Init::Labels(relabeled), &FitConfig::default()).unwrap();
    assert!((other.log_likelihood() - reference.log_likelihood()).abs() < 1e-8);
}

#[test]
fn true_label_restart_always_reaches_the_right_maximum() {
    let spec = builtin_mixture(1).unwrap();
    let data = sample(&spec, 2).unwrap();
    let partitions = vec![(0u64, data.labels().unwrap().to_vec())];
    let settings = BoundsSetting::parse_list("0.01:6,unbounded").unwrap();
    let reports = run_experiment_with_partitions(
        &data,
        3,
        2,
        &settings,
        &partitions,
        &ExperimentConfig::default(),
    )
    .unwrap();
    for report in reports {
        assert_eq!(report.summary.right_max_fraction, 1.0);
    }
}

#[test]
fn experiment_is_identical_across_worker_counts() {
    let spec = builtin_mixture(3).unwrap();
    let data = sample(&spec, 6).unwrap();
    let settings = BoundsSetting::parse_list("0.01:6,unbounded").unwrap();
    let config = ExperimentConfig {
        restarts: 12,
        seed: 99,
        ..ExperimentConfig::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment(&data, 2, 1, &settings, &config).unwrap())
    };
    let one = run(1);
    let four = run(4);
    for (a, b) in one.iter().zip(&four) {
        assert_eq!(a.runs, b.runs);
        assert_eq!(a.summary, b.summary);
    }
    // Every setting starts from the same partitions.
    let seeds: Vec<u64> = one[0].runs.iter().map(|r| r.seed).collect();
    assert_eq!(
        seeds,
        one[1].runs.iter().map(|r| r.seed).collect::<Vec<_>>()
    );
}

#[test]
fn failed_restarts_are_recorded_not_fatal() {
    let data = separable_data();
    let mut bad = data.labels().unwrap().to_vec();
    for l in bad.iter_mut() {
        *l = if *l == 2 { 0 } else { *l };
    }
    bad[0] = 2;
    let partitions = vec![(1u64, bad), (2u64, data.labels().unwrap().to_vec())];
    let reports = run_experiment_with_partitions(
        &data,
        3,
        1,
        &[BoundsSetting::unbounded()],
        &partitions,
        &ExperimentConfig::default(),
    )
    .unwrap();
    let runs = &reports[0].runs;
    assert!(matches!(runs[0].status, RunStatus::Failed(_)));
    assert!(!runs[0].right_max);
    assert!(runs[1].right_max);
    assert_eq!(reports[0].summary.failed, 1);
    assert_eq!(reports[0].summary.right_max_fraction, 0.5);
}

#[test]
fn strict_fit_of_random_problem_respects_bounds() {
    let mut r = rng(77);
    let truth = random_params(&mut r, 2, 5, 2, 6.0);
    let data = sample_n(&MixtureSpec::from_params(truth, 120), 120, 3).unwrap();
    let bounds = EigenBounds::new(0.2, 2.0).unwrap();
    let config = FitConfig {
        projection: ProjectionMode::Strict,
        ..FitConfig::default()
    }
    .with_bounds(Some(bounds));
    let result = fit(
        &data,
        2,
        2,
        Init::Labels(data.labels().unwrap().to_vec()),
        &config,
    )
    .unwrap();
    for c in result.params.components() {
        assert!(bounds_satisfied(&c.loadings, &c.uniquenesses, &bounds));
    }
}
