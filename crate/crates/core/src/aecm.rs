//! Two-cycle AECM estimation.
//!
//! Each outer iteration runs one E-step and two conditional maximizations:
//!
//! * cycle 1 updates the mixing weights and means from the responsibilities;
//! * cycle 2 builds the weighted scatter `S_g` around the new means and runs
//!   the inner fixed-point iteration on `(Λ_g, Ψ_g)`
//!   (`γ = Λ'(ΛΛ'+Ψ)⁻¹`, `Θ = I − γΛ + γSγ'`, `Λ⁺ = Sγ'Θ⁻¹`,
//!   `Ψ⁺ = diag(S − Λ⁺γS)`), followed by the eigenvalue projection when
//!   bounds are configured.
//!
//! Iteration stops when the Aitken-extrapolated log-likelihood is within
//! `ε` of the current value.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{project, ProjectionMode};
use crate::error::{MgfaError, Result};
use crate::linalg::{sym_eigen_desc, FactorCovariance};
use crate::model::{
    check_data_dims, log_sum_exp, weighted_log_densities, Component, Dataset, EigenBounds,
    MgfaParams, Responsibilities,
};

/// Uniquenesses are floored here during updates so the factored covariance
/// stays invertible. This is not a statistical constraint.
pub const PSI_FLOOR: f64 = 1e-10;

/// Below this change in log-likelihood the Aitken rule reports a plateau.
pub const AITKEN_PLATEAU: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_outer_iterations: usize,
    pub inner_max_iterations: usize,
    pub inner_tolerance: f64,
    pub aitken_epsilon: f64,
    pub bounds: Option<EigenBounds>,
    pub projection: ProjectionMode,
    /// Start cycle 2 from the previous `(Λ, Ψ)` instead of re-deriving them
    /// from `S_g` on every outer iteration. Off by default: with a cold
    /// start the factor solution depends only on the current scatter, so
    /// restarts ending in the same partition end at the same maximum.
    pub warm_start: bool,
    pub rng_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 1000,
            inner_max_iterations: 200,
            inner_tolerance: 1e-6,
            aitken_epsilon: 1e-3,
            bounds: None,
            projection: ProjectionMode::Literal,
            warm_start: false,
            rng_seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 {
            return Err(MgfaError::invalid(
                "max_outer_iterations must be at least 1",
            ));
        }
        if !(self.inner_tolerance > 0.0) || !(self.aitken_epsilon > 0.0) {
            return Err(MgfaError::invalid("tolerances must be positive"));
        }
        Ok(())
    }

    pub fn with_bounds(mut self, bounds: Option<EigenBounds>) -> Self {
        self.bounds = bounds;
        self
    }
}

/// How the first outer iteration is seeded.
#[derive(Debug, Clone)]
pub enum Init {
    /// Zero-based hard labels.
    Labels(Vec<usize>),
    Responsibilities(Responsibilities),
    /// Start from full parameters; the first E-step uses them.
    Params(MgfaParams),
    /// Uniform random partition drawn from `FitConfig::rng_seed`.
    Random,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: MgfaParams,
    /// Observed-data log-likelihood after each outer iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub responsibilities: Responsibilities,
    /// Zero-based MAP component per observation.
    pub hard_labels: Vec<usize>,
    /// n×q posterior factor means, centered at the assigned component mean.
    pub factor_scores: DMatrix<f64>,
}

impl FitResult {
    pub fn log_likelihood(&self) -> f64 {
        *self
            .loglik_trace
            .last()
            .expect("a fit runs at least one iteration")
    }
}

/// Per-component weighted scatter matrices and effective counts.
#[derive(Debug, Clone)]
pub struct ScatterSet {
    pub scatters: Vec<DMatrix<f64>>,
    pub counts: Vec<f64>,
}

pub fn e_step(params: &MgfaParams, data: &Dataset) -> Result<Responsibilities> {
    e_step_with_loglik(params, data).map(|(r, _)| r)
}

/// Responsibilities together with the observed-data log-likelihood at the
/// same parameters (both come out of the same log-sum-exp pass).
pub fn e_step_with_loglik(params: &MgfaParams, data: &Dataset) -> Result<(Responsibilities, f64)> {
    let mut table = weighted_log_densities(params, data)?;
    let mut loglik = 0.0;
    let mut row_buf = vec![0.0; table.ncols()];
    for i in 0..table.nrows() {
        for (g, v) in row_buf.iter_mut().enumerate() {
            *v = table[(i, g)];
        }
        let norm = log_sum_exp(&row_buf);
        if !norm.is_finite() {
            return Err(MgfaError::Underflow { row: i });
        }
        loglik += norm;
        for g in 0..row_buf.len() {
            table[(i, g)] = (row_buf[g] - norm).exp();
        }
    }
    Ok((Responsibilities::from_matrix_unchecked(table), loglik))
}

/// Smallest effective count a component may have, `max(q + 1, 2)`.
pub fn min_component_count(factors: usize) -> f64 {
    (factors + 1).max(2) as f64
}

/// Cycle-1 update of weights and means plus the cycle-2 scatter matrices
/// around the new means.
pub fn m_step_weights_means(
    resp: &Responsibilities,
    data: &Dataset,
    factors: usize,
) -> Result<(Vec<f64>, Vec<DVector<f64>>, ScatterSet)> {
    if resp.n() != data.n() {
        return Err(MgfaError::invalid(format!(
            "{} responsibility rows for {} observations",
            resp.n(),
            data.n()
        )));
    }
    let z = resp.matrix();
    let x = data.observations();
    let (n, d) = (data.n(), data.d());
    let threshold = min_component_count(factors);
    let mut weights = Vec::with_capacity(resp.num_components());
    let mut means = Vec::with_capacity(resp.num_components());
    let mut scatters = Vec::with_capacity(resp.num_components());
    let mut counts = Vec::with_capacity(resp.num_components());
    for g in 0..resp.num_components() {
        let count: f64 = z.column(g).sum();
        if count < threshold {
            return Err(MgfaError::EmptyComponent {
                component: g + 1,
                count,
                threshold,
            });
        }
        let mut mean = DVector::zeros(d);
        for i in 0..n {
            let w = z[(i, g)];
            for j in 0..d {
                mean[j] += w * x[(i, j)];
            }
        }
        mean /= count;
        let mut scatter = DMatrix::zeros(d, d);
        let mut r = vec![0.0; d];
        for i in 0..n {
            let w = z[(i, g)];
            if w == 0.0 {
                continue;
            }
            for j in 0..d {
                r[j] = x[(i, j)] - mean[j];
            }
            for a in 0..d {
                let wa = w * r[a];
                for b in 0..=a {
                    scatter[(a, b)] += wa * r[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                scatter[(b, a)] = scatter[(a, b)];
            }
        }
        scatter /= count;
        weights.push(count / n as f64);
        means.push(mean);
        scatters.push(scatter);
        counts.push(count);
    }
    Ok((weights, means, ScatterSet { scatters, counts }))
}

/// Starting loadings `λ_ij = √d_j · a_ij` from the top-q eigenpairs of `S`,
/// and `Ψ = diag(S − ΛΛ')` floored at [`PSI_FLOOR`].
pub fn init_loadings(
    scatter: &DMatrix<f64>,
    factors: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = scatter.nrows();
    if scatter.ncols() != d {
        return Err(MgfaError::invalid("scatter matrix must be square"));
    }
    if factors >= d {
        return Err(MgfaError::invalid(format!(
            "need q < d, got q={factors}, d={d}"
        )));
    }
    if scatter.iter().any(|v| !v.is_finite()) {
        return Err(MgfaError::invalid("scatter matrix has non-finite entries"));
    }
    let (values, vectors) = sym_eigen_desc(scatter);
    let mut loadings = DMatrix::zeros(d, factors);
    for j in 0..factors {
        let scale = values[j].max(0.0).sqrt();
        for i in 0..d {
            loadings[(i, j)] = scale * vectors[(i, j)];
        }
    }
    let fitted = &loadings * loadings.transpose();
    let uniquenesses =
        DVector::from_fn(d, |i, _| (scatter[(i, i)] - fitted[(i, i)]).max(PSI_FLOOR));
    Ok((loadings, uniquenesses))
}

/// One inner update of `(Λ, Ψ)` for a fixed scatter matrix.
pub fn inner_factor_update(
    scatter: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    inner_update_for(scatter, loadings, uniquenesses, 0)
}

fn inner_update_for(
    scatter: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
    component: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let q = loadings.ncols();
    let d = loadings.nrows();
    if scatter.nrows() != d || scatter.ncols() != d {
        return Err(MgfaError::invalid("scatter and loadings dimensions differ"));
    }
    let fc = FactorCovariance::new(loadings, uniquenesses, component)?;
    let gamma = fc.gamma();
    let s_gamma_t = scatter * gamma.transpose();
    let theta = DMatrix::identity(q, q) - &gamma * loadings + &gamma * &s_gamma_t;
    let theta = (&theta + theta.transpose()) * 0.5;
    let theta_chol = theta.cholesky().ok_or(MgfaError::Singular { component })?;
    // Λ⁺ = Sγ'Θ⁻¹, solved as Θ Λ⁺' = γS.
    let new_loadings = theta_chol.solve(&s_gamma_t.transpose()).transpose();
    let gamma_s = s_gamma_t.transpose();
    let new_uniquenesses = DVector::from_fn(d, |i, _| {
        let reduction: f64 = (0..q).map(|k| new_loadings[(i, k)] * gamma_s[(k, i)]).sum();
        (scatter[(i, i)] - reduction).max(PSI_FLOOR)
    });
    if new_loadings.iter().any(|v| !v.is_finite()) {
        return Err(MgfaError::Singular { component });
    }
    Ok((new_loadings, new_uniquenesses))
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub loadings: DMatrix<f64>,
    pub uniquenesses: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Repeats [`inner_factor_update`] until the largest absolute change in
/// `(Λ, Ψ)` drops below `config.inner_tolerance`, or the iteration budget
/// runs out. The last iterate is returned either way.
pub fn inner_loop(
    scatter: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
    config: &FitConfig,
) -> Result<InnerOutcome> {
    inner_loop_for(scatter, loadings, uniquenesses, config, 0)
}

fn inner_loop_for(
    scatter: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
    config: &FitConfig,
    component: usize,
) -> Result<InnerOutcome> {
    let mut lam = loadings.clone();
    let mut psi = uniquenesses.clone();
    for it in 1..=config.inner_max_iterations {
        let (next_lam, next_psi) = inner_update_for(scatter, &lam, &psi, component)?;
        let change = (&next_lam - &lam).amax().max((&next_psi - &psi).amax());
        lam = next_lam;
        psi = next_psi;
        if change < config.inner_tolerance {
            return Ok(InnerOutcome {
                loadings: lam,
                uniquenesses: psi,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(InnerOutcome {
        loadings: lam,
        uniquenesses: psi,
        iterations: config.inner_max_iterations,
        converged: false,
    })
}

/// Per-observation expected complete-data objective of one component,
/// `−½(log|Σ| + tr(Σ⁻¹S))`, up to constants.
pub fn factor_objective(
    scatter: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
) -> Result<f64> {
    let fc = FactorCovariance::new(loadings, uniquenesses, 0)?;
    let trace = fc.precision().component_mul(scatter).sum();
    Ok(-0.5 * (fc.log_det() + trace))
}

/// Aitken stopping rule over `[ℒ^(k−1), ℒ^(k), ℒ^(k+1)]`.
///
/// With `a = (ℒ^(k+1) − ℒ^(k)) / (ℒ^(k) − ℒ^(k−1))` and
/// `ℒ_∞ = ℒ^(k) + (ℒ^(k+1) − ℒ^(k)) / (1 − a)`, stops iff `a < 1` and
/// `ℒ_∞ − ℒ^(k) < ε`. For `a ≥ 1` the increments are not shrinking and the
/// extrapolation has no finite limit, so iteration continues. A vanishing
/// denominator counts as a plateau and stops.
pub fn aitken_should_stop(window: [f64; 3], epsilon: f64) -> bool {
    let [prev, cur, next] = window;
    let denom = cur - prev;
    if denom.abs() < AITKEN_PLATEAU {
        return true;
    }
    let accel = (next - cur) / denom;
    if !(accel < 1.0) {
        return false;
    }
    let asymptote = cur + (next - cur) / (1.0 - accel);
    asymptote - cur < epsilon
}

/// Where factor scores are centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreCentering {
    /// Mean of the component each observation is assigned to.
    #[default]
    ComponentMean,
    /// Grand mean of the data.
    GrandMean,
}

/// Posterior factor means `γ̂_g (x_i − c)` using each observation's MAP
/// component `g`, where `c` is chosen by `centering`.
pub fn factor_scores(
    params: &MgfaParams,
    data: &Dataset,
    centering: ScoreCentering,
) -> Result<DMatrix<f64>> {
    let resp = e_step(params, data)?;
    factor_scores_for(params, data, &resp.hard_labels(), centering)
}

fn factor_scores_for(
    params: &MgfaParams,
    data: &Dataset,
    labels: &[usize],
    centering: ScoreCentering,
) -> Result<DMatrix<f64>> {
    check_data_dims(params, data)?;
    let gammas: Vec<DMatrix<f64>> = params
        .factor_covariances()?
        .iter()
        .map(FactorCovariance::gamma)
        .collect();
    let grand = data.grand_mean();
    let mut scores = DMatrix::zeros(data.n(), params.factors());
    for (i, &g) in labels.iter().enumerate() {
        let center = match centering {
            ScoreCentering::ComponentMean => &params.component(g).mean,
            ScoreCentering::GrandMean => &grand,
        };
        let u = &gammas[g] * (data.row(i) - center);
        scores.row_mut(i).copy_from(&u.transpose());
    }
    Ok(scores)
}

struct PreviousFactors {
    loadings: DMatrix<f64>,
    uniquenesses: DVector<f64>,
    /// Whether `(Λ, Ψ)` lies in the constrained set, making it an admissible
    /// fallback for the cycle-2 update.
    admissible: bool,
}

/// Fits a G-component mixture of q-factor analyzers.
pub fn fit(
    data: &Dataset,
    num_components: usize,
    factors: usize,
    init: Init,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    let (n, d) = (data.n(), data.d());
    if num_components == 0 {
        return Err(MgfaError::invalid("need at least one component"));
    }
    if factors >= d {
        return Err(MgfaError::invalid(format!(
            "need q < d, got q={factors}, d={d}"
        )));
    }
    if n < num_components {
        return Err(MgfaError::invalid("fewer observations than components"));
    }

    let mut previous: Option<Vec<PreviousFactors>> = None;
    let mut resp = match init {
        Init::Labels(labels) => {
            if labels.len() != n {
                return Err(MgfaError::invalid(
                    "initial labels do not cover every observation",
                ));
            }
            Responsibilities::from_labels(&labels, num_components)?
        }
        Init::Responsibilities(r) => {
            if r.n() != n || r.num_components() != num_components {
                return Err(MgfaError::invalid(
                    "initial responsibilities have the wrong shape",
                ));
            }
            r
        }
        Init::Random => {
            let labels = crate::simulation::random_partition(n, num_components, config.rng_seed)?;
            Responsibilities::from_labels(&labels, num_components)?
        }
        Init::Params(p) => {
            if p.num_components() != num_components || p.factors() != factors {
                return Err(MgfaError::invalid(
                    "initial parameters have the wrong G or q",
                ));
            }
            let resp = e_step(&p, data)?;
            previous = Some(
                p.components()
                    .iter()
                    .map(|c| {
                        let admissible = match &config.bounds {
                            None => true,
                            Some(b) => {
                                let (l, s) =
                                    project(&c.loadings, &c.uniquenesses, b, config.projection);
                                l == c.loadings && s == c.uniquenesses
                            }
                        };
                        PreviousFactors {
                            loadings: c.loadings.clone(),
                            uniquenesses: c.uniquenesses.clone(),
                            admissible,
                        }
                    })
                    .collect(),
            );
            resp
        }
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut params = None;
    for _ in 0..config.max_outer_iterations {
        let (weights, means, scatter) = m_step_weights_means(&resp, data, factors)?;
        let mut components = Vec::with_capacity(num_components);
        let mut next_previous = Vec::with_capacity(num_components);
        for g in 0..num_components {
            let s = &scatter.scatters[g];
            let prev = previous.as_ref().map(|p| &p[g]);
            let (start_l, start_p) = match prev {
                Some(p) if config.warm_start => (p.loadings.clone(), p.uniquenesses.clone()),
                _ => init_loadings(s, factors)?,
            };
            let inner = inner_loop_for(s, &start_l, &start_p, config, g + 1)?;
            let (mut lam, mut psi) = match &config.bounds {
                Some(b) => project(&inner.loadings, &inner.uniquenesses, b, config.projection),
                None => (inner.loadings, inner.uniquenesses),
            };
            // The conditional maximization must not lose ground against the
            // previous admissible (Λ, Ψ) under the current scatter; projection
            // alone does not guarantee that.
            if let Some(p) = prev.filter(|p| p.admissible) {
                let old = factor_objective(s, &p.loadings, &p.uniquenesses)?;
                let keep_old = match factor_objective(s, &lam, &psi) {
                    Ok(new) => new < old,
                    Err(_) => true,
                };
                if keep_old {
                    lam = p.loadings.clone();
                    psi = p.uniquenesses.clone();
                }
            }
            next_previous.push(PreviousFactors {
                loadings: lam.clone(),
                uniquenesses: psi.clone(),
                admissible: true,
            });
            components.push(Component {
                weight: weights[g],
                mean: means[g].clone(),
                loadings: lam,
                uniquenesses: psi,
            });
        }
        let current = MgfaParams::from_components_unchecked(components);
        let (next_resp, loglik) = e_step_with_loglik(&current, data)?;
        resp = next_resp;
        trace.push(loglik);
        previous = Some(next_previous);
        params = Some(current);
        if let [.., a, b, c] = trace[..] {
            if aitken_should_stop([a, b, c], config.aitken_epsilon) {
                converged = true;
                break;
            }
        }
    }

    let params = params.expect("at least one outer iteration");
    let hard_labels = resp.hard_labels();
    let factor_scores =
        factor_scores_for(&params, data, &hard_labels, ScoreCentering::ComponentMean)?;
    Ok(FitResult {
        params,
        outer_iterations: trace.len(),
        loglik_trace: trace,
        converged,
        responsibilities: resp,
        hard_labels,
        factor_scores,
    })
}
