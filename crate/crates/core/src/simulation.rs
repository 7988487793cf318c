//! Synthetic data, the three reference mixtures, and the random-restart
//! experiment protocol.
//!
//! An experiment draws one dataset and one list of uniform random
//! partitions, then fits every bounds setting from the same partitions.
//! Each setting gets its own reference fit started from the true labels
//! (the "right maximum"); a restart reaches it when it converges within
//! [`ExperimentConfig::loglik_tolerance`] of the reference log-likelihood
//! and its classification differs from the reference classification by at
//! most [`ExperimentConfig::classification_tolerance`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::aecm::{fit, FitConfig, FitResult, Init};
use crate::error::{MgfaError, Result};
use crate::linalg::sym_eigenvalues_desc;
use crate::model::{Dataset, EigenBounds, MgfaParams};

const MIXTURE_1: &str = include_str!("../data/mixture1.txt");
const MIXTURE_2: &str = include_str!("../data/mixture2.txt");
const MIXTURE_3: &str = include_str!("../data/mixture3.txt");

/// Largest label count solved by enumerating permutations.
pub const MAX_ENUMERATED_CLASSES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum MixtureComponents {
    Factor(MgfaParams),
    /// Components given by full covariance matrices.
    Covariance {
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    },
}

/// A generating mixture and its default sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub components: MixtureComponents,
    pub sample_size: usize,
}

impl MixtureSpec {
    pub fn from_params(params: MgfaParams, sample_size: usize) -> Self {
        Self {
            components: MixtureComponents::Factor(params),
            sample_size,
        }
    }

    pub fn from_covariances(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        sample_size: usize,
    ) -> Result<Self> {
        let g = weights.len();
        if g == 0 || means.len() != g || covariances.len() != g {
            return Err(MgfaError::invalid(
                "weights, means and covariances must have equal, nonzero counts",
            ));
        }
        let d = means[0].len();
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(MgfaError::invalid(
                "weights must be nonnegative and sum to 1",
            ));
        }
        for (k, (m, s)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != d || s.nrows() != d || s.ncols() != d {
                return Err(MgfaError::invalid(format!(
                    "component {} has inconsistent dimensions",
                    k + 1
                )));
            }
            if (s - s.transpose()).amax() > 1e-12 || s.clone().cholesky().is_none() {
                return Err(MgfaError::invalid(format!(
                    "covariance of component {} is not symmetric positive definite",
                    k + 1
                )));
            }
        }
        Ok(Self {
            components: MixtureComponents::Covariance {
                weights,
                means,
                covariances,
            },
            sample_size,
        })
    }

    pub fn dim(&self) -> usize {
        match &self.components {
            MixtureComponents::Factor(p) => p.dim(),
            MixtureComponents::Covariance { means, .. } => means[0].len(),
        }
    }

    pub fn num_components(&self) -> usize {
        match &self.components {
            MixtureComponents::Factor(p) => p.num_components(),
            MixtureComponents::Covariance { weights, .. } => weights.len(),
        }
    }

    /// Number of factors, for factor-form specs.
    pub fn factors(&self) -> Option<usize> {
        match &self.components {
            MixtureComponents::Factor(p) => Some(p.factors()),
            MixtureComponents::Covariance { .. } => None,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        match &self.components {
            MixtureComponents::Factor(p) => p.weights(),
            MixtureComponents::Covariance { weights, .. } => weights.clone(),
        }
    }

    pub fn covariances(&self) -> Vec<DMatrix<f64>> {
        match &self.components {
            MixtureComponents::Factor(p) => p.covariances(),
            MixtureComponents::Covariance { covariances, .. } => covariances.clone(),
        }
    }

    fn means(&self) -> Vec<DVector<f64>> {
        match &self.components {
            MixtureComponents::Factor(p) => p.components().iter().map(|c| c.mean.clone()).collect(),
            MixtureComponents::Covariance { means, .. } => means.clone(),
        }
    }

    /// Eigenvalues of each component covariance, nonincreasing.
    pub fn covariance_eigenvalues(&self) -> Vec<Vec<f64>> {
        self.covariances()
            .iter()
            .map(sym_eigenvalues_desc)
            .collect()
    }
}

/// The built-in simulation mixtures 1, 2 and 3.
pub fn builtin_mixture(id: u32) -> Result<MixtureSpec> {
    let text = match id {
        1 => MIXTURE_1,
        2 => MIXTURE_2,
        3 => MIXTURE_3,
        _ => {
            return Err(MgfaError::invalid(format!(
                "unknown built-in mixture {id} (expected 1, 2 or 3)"
            )))
        }
    };
    crate::data_io::parse_mixture_spec(text)
}

/// Raw text of a built-in mixture file.
pub fn builtin_mixture_source(id: u32) -> Option<&'static str> {
    match id {
        1 => Some(MIXTURE_1),
        2 => Some(MIXTURE_2),
        3 => Some(MIXTURE_3),
        _ => None,
    }
}

/// Independent 64-bit seed for item `index` of a seeded family.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `spec.sample_size` labelled observations.
pub fn sample(spec: &MixtureSpec, seed: u64) -> Result<Dataset> {
    sample_n(spec, spec.sample_size, seed)
}

/// Draws `n` observations: a component from the weights, then
/// `x = μ_g + Λ_g u + e` with `u ~ N(0, I_q)`, `e ~ N(0, Ψ_g)`, or
/// `x ~ N(μ_g, Σ_g)` for covariance-form specs.
pub fn sample_n(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(MgfaError::invalid("sample size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dim();
    let weights = spec.weights();
    let means = spec.means();
    let cholesky: Vec<DMatrix<f64>> = match &spec.components {
        MixtureComponents::Covariance { covariances, .. } => covariances
            .iter()
            .map(|s| s.clone().cholesky().map(|c| c.unpack()))
            .collect::<Option<_>>()
            .ok_or_else(|| MgfaError::invalid("covariance is not positive definite"))?,
        MixtureComponents::Factor(_) => Vec::new(),
    };

    let mut x = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let g = draw_component(&weights, &mut rng);
        let mut row = means[g].clone();
        match &spec.components {
            MixtureComponents::Factor(p) => {
                let c = p.component(g);
                let u = DVector::from_fn(p.factors(), |_, _| rng.sample::<f64, _>(StandardNormal));
                row += &c.loadings * u;
                for j in 0..d {
                    row[j] += c.uniquenesses[j].sqrt() * rng.sample::<f64, _>(StandardNormal);
                }
            }
            MixtureComponents::Covariance { .. } => {
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                row += &cholesky[g] * z;
            }
        }
        x.row_mut(i).copy_from(&row.transpose());
        labels.push(g);
    }
    Dataset::new(x)?.with_labels(labels)
}

fn draw_component(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (g, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return g;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// i.i.d. uniform zero-based labels in `0..G`, redrawn until every
/// component is nonempty.
pub fn random_partition(n: usize, num_components: usize, seed: u64) -> Result<Vec<usize>> {
    if num_components == 0 || n < num_components {
        return Err(MgfaError::invalid(format!(
            "cannot partition {n} observations into {num_components} nonempty groups"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let labels: Vec<usize> = (0..n)
            .map(|_| rng.random_range(0..num_components))
            .collect();
        let mut seen = vec![false; num_components];
        for &l in &labels {
            seen[l] = true;
        }
        if seen.iter().all(|&s| s) {
            return Ok(labels);
        }
    }
}

/// Fits from the true labels; the result is the reference solution.
pub fn right_maximum_reference(
    data: &Dataset,
    factors: usize,
    config: &FitConfig,
) -> Result<FitResult> {
    let labels = data
        .labels()
        .ok_or_else(|| MgfaError::invalid("the right-maximum reference needs labelled data"))?;
    let g = data.num_classes().unwrap_or(0);
    fit(data, g, factors, Init::Labels(labels.to_vec()), config)
}

fn confusion(predicted: &[usize], truth: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        m[p][t] += 1;
    }
    m
}

/// Smallest fraction of disagreeing labels over all relabelings of
/// `predicted`. Labels are zero-based.
///
/// Up to [`MAX_ENUMERATED_CLASSES`] labels every permutation is enumerated;
/// beyond that an assignment solver finds the optimal matching.
pub fn misclassification_error(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(MgfaError::invalid("label vectors differ in length"));
    }
    if predicted.is_empty() {
        return Err(MgfaError::invalid("label vectors are empty"));
    }
    let k = predicted.iter().chain(truth).copied().max().unwrap_or(0) + 1;
    let table = confusion(predicted, truth, k);
    let matched = if k <= MAX_ENUMERATED_CLASSES {
        best_matching_by_enumeration(&table)
    } else {
        best_matching_by_assignment(&table)
    };
    Ok(1.0 - matched as f64 / predicted.len() as f64)
}

fn best_matching_by_enumeration(table: &[Vec<usize>]) -> usize {
    fn recurse(table: &[Vec<usize>], row: usize, used: &mut [bool], acc: usize, best: &mut usize) {
        if row == table.len() {
            *best = (*best).max(acc);
            return;
        }
        for col in 0..table.len() {
            if !used[col] {
                used[col] = true;
                recurse(table, row + 1, used, acc + table[row][col], best);
                used[col] = false;
            }
        }
    }
    let mut best = 0;
    recurse(table, 0, &mut vec![false; table.len()], 0, &mut best);
    best
}

/// Maximum-weight perfect matching on a square count table (Hungarian
/// algorithm on negated counts).
fn best_matching_by_assignment(table: &[Vec<usize>]) -> usize {
    let k = table.len();
    let max = table.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| max - table[i][j] as i64;
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; k + 1];
    let mut v = vec![0i64; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=k).map(|j| table[p[j] - 1][j - 1]).sum()
}

/// One column of an experiment: a label and optional bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSetting {
    pub label: String,
    pub bounds: Option<EigenBounds>,
}

impl BoundsSetting {
    pub fn unbounded() -> Self {
        Self {
            label: "unbounded".into(),
            bounds: None,
        }
    }

    pub fn bounded(lower: f64, upper: f64) -> Result<Self> {
        Ok(Self {
            label: format!("{lower}:{upper}"),
            bounds: Some(EigenBounds::new(lower, upper)?),
        })
    }

    /// Parses `"a:b,a:b,...,unbounded"`; `b` may be `inf`.
    pub fn parse_list(text: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if item.eq_ignore_ascii_case("unbounded") {
                out.push(Self::unbounded());
                continue;
            }
            let (a, b) = item.split_once(':').ok_or_else(|| {
                MgfaError::invalid(format!("bounds '{item}' are not of the form a:b"))
            })?;
            let parse = |s: &str| -> Result<f64> {
                match s.trim() {
                    "inf" | "+inf" => Ok(f64::INFINITY),
                    t => t.parse().map_err(|_| {
                        MgfaError::invalid(format!("bad number '{t}' in bounds '{item}'"))
                    }),
                }
            };
            let bounds = EigenBounds::new(parse(a)?, parse(b)?)?;
            out.push(Self {
                label: item.to_string(),
                bounds: Some(bounds),
            });
        }
        if out.is_empty() {
            return Err(MgfaError::invalid("empty bounds list"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub restarts: usize,
    pub seed: u64,
    /// Base fit settings; `bounds` is replaced per setting.
    pub fit: FitConfig,
    pub loglik_tolerance: f64,
    pub classification_tolerance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            restarts: 100,
            seed: 0,
            fit: FitConfig::default(),
            loglik_tolerance: 0.1,
            classification_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Converged,
    /// Hit the outer iteration limit.
    NotConverged,
    /// Stopped by an error, e.g. an emptied component.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub restart: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub loglik: Option<f64>,
    pub iterations: usize,
    /// Against the true labels.
    pub misclassification: Option<f64>,
    pub right_max: bool,
}

impl RunRecord {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }
}

/// min, Q1, median, Q3, max with linear interpolation between order
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let quantile = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            min: v[0],
            q1: quantile(0.25),
            median: quantile(0.5),
            q3: quantile(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub runs: usize,
    pub converged: usize,
    pub not_converged: usize,
    pub failed: usize,
    pub right_max: usize,
    /// Fraction in `[0, 1]`.
    pub right_max_fraction: f64,
    pub misclassification: Option<FiveNumber>,
}

impl ExperimentSummary {
    fn of(runs: &[RunRecord]) -> Self {
        let count = |f: &dyn Fn(&RunRecord) -> bool| runs.iter().filter(|r| f(r)).count();
        let right_max = count(&|r| r.right_max);
        let errors: Vec<f64> = runs.iter().filter_map(|r| r.misclassification).collect();
        Self {
            runs: runs.len(),
            converged: count(&|r| r.status == RunStatus::Converged),
            not_converged: count(&|r| r.status == RunStatus::NotConverged),
            failed: count(&|r| matches!(r.status, RunStatus::Failed(_))),
            right_max,
            right_max_fraction: if runs.is_empty() {
                0.0
            } else {
                right_max as f64 / runs.len() as f64
            },
            misclassification: FiveNumber::of(&errors),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub setting: BoundsSetting,
    /// The reference fit from the true labels, or why it failed.
    pub reference: std::result::Result<FitResult, String>,
    pub runs: Vec<RunRecord>,
    pub summary: ExperimentSummary,
}

impl ExperimentReport {
    pub fn reference_loglik(&self) -> Option<f64> {
        self.reference.as_ref().ok().map(FitResult::log_likelihood)
    }
}

/// Draws `restarts` random partitions of `n` points, one per restart seed.
pub fn restart_partitions(
    n: usize,
    num_components: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<(u64, Vec<usize>)>> {
    (0..restarts)
        .map(|r| {
            let s = derive_seed(seed, r as u64);
            random_partition(n, num_components, s).map(|p| (s, p))
        })
        .collect()
}

/// Samples the dataset for a mixture experiment.
pub fn experiment_dataset(spec: &MixtureSpec, seed: u64) -> Result<Dataset> {
    sample(spec, derive_seed(seed, u64::MAX))
}

/// Runs every bounds setting from the same set of random partitions.
pub fn run_experiment(
    data: &Dataset,
    num_components: usize,
    factors: usize,
    settings: &[BoundsSetting],
    config: &ExperimentConfig,
) -> Result<Vec<ExperimentReport>> {
    if config.restarts == 0 {
        return Err(MgfaError::invalid("restarts must be at least 1"));
    }
    let partitions = restart_partitions(data.n(), num_components, config.restarts, config.seed)?;
    run_experiment_with_partitions(data, num_components, factors, settings, &partitions, config)
}

/// [`run_experiment`] with caller-supplied `(seed, labels)` starts.
pub fn run_experiment_with_partitions(
    data: &Dataset,
    num_components: usize,
    factors: usize,
    settings: &[BoundsSetting],
    partitions: &[(u64, Vec<usize>)],
    config: &ExperimentConfig,
) -> Result<Vec<ExperimentReport>> {
    let truth = data
        .labels()
        .ok_or_else(|| MgfaError::invalid("experiments need labelled data"))?;
    if data.num_classes() != Some(num_components) {
        return Err(MgfaError::invalid(format!(
            "data has {} classes but G = {num_components}",
            data.num_classes().unwrap_or(0)
        )));
    }
    config.fit.validate()?;

    let reports = settings
        .iter()
        .map(|setting| {
            let fit_config = config.fit.clone().with_bounds(setting.bounds);
            let reference =
                right_maximum_reference(data, factors, &fit_config).map_err(|e| e.to_string());
            let runs: Vec<RunRecord> = partitions
                .par_iter()
                .enumerate()
                .map(|(restart, (seed, labels))| {
                    let cfg = FitConfig {
                        rng_seed: *seed,
                        ..fit_config.clone()
                    };
                    let outcome = fit(
                        data,
                        num_components,
                        factors,
                        Init::Labels(labels.clone()),
                        &cfg,
                    );
                    score_run(
                        restart,
                        *seed,
                        outcome,
                        truth,
                        reference.as_ref().ok(),
                        config,
                    )
                })
                .collect();
            let summary = ExperimentSummary::of(&runs);
            ExperimentReport {
                setting: setting.clone(),
                reference,
                runs,
                summary,
            }
        })
        .collect();
    Ok(reports)
}

fn score_run(
    restart: usize,
    seed: u64,
    outcome: Result<FitResult>,
    truth: &[usize],
    reference: Option<&FitResult>,
    config: &ExperimentConfig,
) -> RunRecord {
    match outcome {
        Err(e) => RunRecord {
            restart,
            seed,
            status: RunStatus::Failed(e.to_string()),
            loglik: None,
            iterations: 0,
            misclassification: None,
            right_max: false,
        },
        Ok(result) => {
            let loglik = result.log_likelihood();
            let status = if result.converged {
                RunStatus::Converged
            } else {
                RunStatus::NotConverged
            };
            let misclassification = misclassification_error(&result.hard_labels, truth).ok();
            let right_max = result.converged
                && reference.is_some_and(|r| {
                    (loglik - r.log_likelihood()).abs() <= config.loglik_tolerance
                        && misclassification_error(&result.hard_labels, &r.hard_labels)
                            .is_ok_and(|e| e <= config.classification_tolerance)
                });
            RunRecord {
                restart,
                seed,
                status,
                loglik: Some(loglik),
                iterations: result.outer_iterations,
                misclassification,
                right_max,
            }
        }
    }
}

fn csv_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

/// Per-run CSV with header
/// `restart,bounds_label,converged,loglik,iterations,miscl_error,right_max`.
/// Restarts are numbered from 1; failed runs have `NaN` log-likelihood and
/// error.
pub fn write_runs_csv<W: Write>(reports: &[ExperimentReport], mut w: W) -> Result<()> {
    writeln!(
        w,
        "restart,bounds_label,converged,loglik,iterations,miscl_error,right_max"
    )?;
    for report in reports {
        for run in &report.runs {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                run.restart + 1,
                report.setting.label,
                run.converged(),
                csv_num(run.loglik),
                run.iterations,
                csv_num(run.misclassification),
                run.right_max
            )?;
        }
    }
    Ok(())
}

/// Summary CSV, one row per bounds setting.
pub fn write_summary_csv<W: Write>(reports: &[ExperimentReport], mut w: W) -> Result<()> {
    writeln!(
        w,
        "bounds_label,lower,upper,runs,converged,not_converged,failed,right_max,right_max_pct,reference_loglik,miscl_min,miscl_q1,miscl_median,miscl_q3,miscl_max"
    )?;
    for r in reports {
        let (lower, upper) = match &r.setting.bounds {
            Some(b) => (b.lower().to_string(), b.upper_or_inf().to_string()),
            None => ("NaN".into(), "NaN".into()),
        };
        let s = &r.summary;
        let five = s.misclassification;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.setting.label,
            lower,
            upper,
            s.runs,
            s.converged,
            s.not_converged,
            s.failed,
            s.right_max,
            100.0 * s.right_max_fraction,
            csv_num(r.reference_loglik()),
            csv_num(five.map(|f| f.min)),
            csv_num(five.map(|f| f.q1)),
            csv_num(five.map(|f| f.median)),
            csv_num(five.map(|f| f.q3)),
            csv_num(five.map(|f| f.max)),
        )?;
    }
    Ok(())
}

/// Human-readable table: one column per setting with the right-maximum
/// percentage and the misclassification quartiles.
pub fn format_summary_table(reports: &[ExperimentReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.setting.label.len())
        .max()
        .unwrap_or(0)
        .max(9);
    let mut out = String::new();
    let row = |name: &str, cells: Vec<String>| {
        let mut line = format!("{name:<14}");
        for c in cells {
            line.push_str(&format!(" {c:>width$}"));
        }
        line.push('\n');
        line
    };
    let pct = |v: f64| format!("{:.1}%", 100.0 * v);
    out.push_str(&row(
        "bounds",
        reports.iter().map(|r| r.setting.label.clone()).collect(),
    ));
    out.push_str(&row(
        "right max",
        reports
            .iter()
            .map(|r| pct(r.summary.right_max_fraction))
            .collect(),
    ));
    let five = |f: fn(&FiveNumber) -> f64| -> Vec<String> {
        reports
            .iter()
            .map(|r| {
                r.summary
                    .misclassification
                    .as_ref()
                    .map_or("-".into(), |x| pct(f(x)))
            })
            .collect()
    };
    out.push_str(&row("miscl min", five(|f| f.min)));
    out.push_str(&row("miscl Q1", five(|f| f.q1)));
    out.push_str(&row("miscl median", five(|f| f.median)));
    out.push_str(&row("miscl Q3", five(|f| f.q3)));
    out.push_str(&row("miscl max", five(|f| f.max)));
    out.push_str(&row(
        "not converged",
        reports
            .iter()
            .map(|r| r.summary.not_converged.to_string())
            .collect(),
    ));
    out.push_str(&row(
        "failed",
        reports
            .iter()
            .map(|r| r.summary.failed.to_string())
            .collect(),
    ));
    out
}
