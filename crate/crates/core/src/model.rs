//! Parameter and data containers for mixtures of Gaussian factor analyzers,
//! covariance assembly, density evaluation and parsimony arithmetic.

use nalgebra::{DMatrix, DVector};

use crate::error::{MgfaError, Result};
use crate::linalg::{sym_eigenvalues_desc, FactorCovariance};

/// Tolerance on `Σ π_g = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Tolerance on each responsibility row summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-10;

/// One mixture component: weight, mean, loadings (d×q) and diagonal
/// uniquenesses.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub loadings: DMatrix<f64>,
    pub uniquenesses: DVector<f64>,
}

impl Component {
    /// `ΛΛ' + Ψ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        assemble_covariance(&self.loadings, &self.uniquenesses)
    }
}

/// Full parameter vector of a G-component mixture of factor analyzers.
#[derive(Debug, Clone, PartialEq)]
pub struct MgfaParams {
    components: Vec<Component>,
    dim: usize,
    factors: usize,
}

impl MgfaParams {
    /// Validates dimensions, `q < d`, positive uniquenesses and weights
    /// summing to one within [`WEIGHT_SUM_TOLERANCE`]. Weights off by more
    /// than a few ulps (but within tolerance) are renormalized.
    pub fn new(mut components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| MgfaError::invalid("a mixture needs at least one component"))?;
        let dim = first.mean.len();
        let factors = first.loadings.ncols();
        if dim == 0 {
            return Err(MgfaError::invalid("dimension must be at least 1"));
        }
        if factors >= dim {
            return Err(MgfaError::invalid(format!(
                "number of factors q={factors} must be smaller than d={dim}"
            )));
        }
        for (g, c) in components.iter().enumerate() {
            if c.mean.len() != dim
                || c.loadings.nrows() != dim
                || c.loadings.ncols() != factors
                || c.uniquenesses.len() != dim
            {
                return Err(MgfaError::invalid(format!(
                    "component {} has inconsistent dimensions",
                    g + 1
                )));
            }
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(MgfaError::invalid(format!(
                    "weight of component {} must be a finite nonnegative number",
                    g + 1
                )));
            }
            if c.uniquenesses.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                return Err(MgfaError::invalid(format!(
                    "uniquenesses of component {} must be finite and positive",
                    g + 1
                )));
            }
            if c.mean
                .iter()
                .chain(c.loadings.iter())
                .any(|v| !v.is_finite())
            {
                return Err(MgfaError::invalid(format!(
                    "component {} has non-finite mean or loadings",
                    g + 1
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(MgfaError::invalid(format!(
                "mixing weights sum to {total}, expected 1"
            )));
        }
        if (total - 1.0).abs() > 8.0 * f64::EPSILON {
            for c in &mut components {
                c.weight /= total;
            }
        }
        Ok(Self {
            components,
            dim,
            factors,
        })
    }

    pub(crate) fn from_components_unchecked(components: Vec<Component>) -> Self {
        let dim = components[0].mean.len();
        let factors = components[0].loadings.ncols();
        Self {
            components,
            dim,
            factors,
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, g: usize) -> &Component {
        &self.components[g]
    }

    pub fn into_components(self) -> Vec<Component> {
        self.components
    }

    /// d
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// q
    pub fn factors(&self) -> usize {
        self.factors
    }

    /// G
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn covariances(&self) -> Vec<DMatrix<f64>> {
        self.components.iter().map(Component::covariance).collect()
    }

    /// Largest eigenvalue over all component covariances.
    pub fn max_covariance_eigenvalue(&self) -> f64 {
        self.components
            .iter()
            .map(|c| sym_eigenvalues_desc(&c.covariance())[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Returns the parameters with components reordered so that new
    /// component `k` is old component `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.components.len() {
            return Err(MgfaError::invalid("permutation length mismatch"));
        }
        let mut seen = vec![false; order.len()];
        for &o in order {
            if o >= order.len() || std::mem::replace(&mut seen[o], true) {
                return Err(MgfaError::invalid("not a permutation"));
            }
        }
        Ok(Self {
            components: order.iter().map(|&o| self.components[o].clone()).collect(),
            dim: self.dim,
            factors: self.factors,
        })
    }

    pub(crate) fn factor_covariances(&self) -> Result<Vec<FactorCovariance>> {
        self.components
            .iter()
            .enumerate()
            .map(|(g, c)| FactorCovariance::new(&c.loadings, &c.uniquenesses, g))
            .collect()
    }
}

/// An n×d sample, optionally with ground-truth class labels.
///
/// Labels are stored zero-based (`0..G`); files and reports use `1..G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(observations: DMatrix<f64>) -> Result<Self> {
        if observations.nrows() == 0 || observations.ncols() == 0 {
            return Err(MgfaError::invalid("a dataset needs n >= 1 and d >= 1"));
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(MgfaError::invalid("observations must be finite"));
        }
        Ok(Self {
            observations,
            labels: None,
            feature_names: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(MgfaError::invalid(format!(
                "{} labels for {} observations",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d() {
            return Err(MgfaError::invalid("feature name count does not match d"));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.observations.nrows()
    }

    pub fn d(&self) -> usize {
        self.observations.ncols()
    }

    pub fn observations(&self) -> &DMatrix<f64> {
        &self.observations
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.observations.row(i).transpose()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of distinct classes implied by the labels (max label + 1).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Column means.
    pub fn grand_mean(&self) -> DVector<f64> {
        self.observations.row_mean().transpose()
    }
}

/// Posterior component memberships, an n×G row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(DMatrix<f64>);

impl Responsibilities {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        for (i, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|&z| !(z >= 0.0) || !z.is_finite()) {
                return Err(MgfaError::invalid(format!(
                    "responsibility row {i} has negative or non-finite entries"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(MgfaError::invalid(format!(
                    "responsibility row {i} sums to {s}"
                )));
            }
        }
        Ok(Self(matrix))
    }

    pub(crate) fn from_matrix_unchecked(matrix: DMatrix<f64>) -> Self {
        Self(matrix)
    }

    /// One-hot responsibilities from zero-based labels.
    pub fn from_labels(labels: &[usize], num_components: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_components) {
            return Err(MgfaError::invalid(format!(
                "label {} outside 1..{num_components}",
                bad + 1
            )));
        }
        let mut m = DMatrix::zeros(labels.len(), num_components);
        for (i, &l) in labels.iter().enumerate() {
            m[(i, l)] = 1.0;
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_components(&self) -> usize {
        self.0.ncols()
    }

    /// Zero-based argmax per row; ties go to the lowest index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.0
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for g in 1..row.len() {
                    if row[g] > row[best] {
                        best = g;
                    }
                }
                best
            })
            .collect()
    }
}

/// Interval `[a, b]` confining every eigenvalue of every component
/// covariance. `upper == None` means no upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenBounds {
    lower: f64,
    upper: Option<f64>,
}

impl EigenBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0) || !lower.is_finite() {
            return Err(MgfaError::invalid(format!(
                "lower eigenvalue bound must be positive, got {lower}"
            )));
        }
        if upper.is_nan() || upper < lower {
            return Err(MgfaError::invalid(format!(
                "upper bound {upper} is below lower bound {lower}"
            )));
        }
        Ok(Self {
            lower,
            upper: upper.is_finite().then_some(upper),
        })
    }

    pub fn lower_only(lower: f64) -> Result<Self> {
        Self::new(lower, f64::INFINITY)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> Option<f64> {
        self.upper
    }

    /// `b`, or `+∞` when unbounded above.
    pub fn upper_or_inf(&self) -> f64 {
        self.upper.unwrap_or(f64::INFINITY)
    }

    /// `c = a/b`, the implied bound on eigenvalue ratios between components.
    pub fn ratio(&self) -> f64 {
        self.lower / self.upper_or_inf()
    }

    pub fn contains(&self, value: f64, slack: f64) -> bool {
        value >= self.lower - slack && value <= self.upper_or_inf() + slack
    }
}

fn assemble_covariance(loadings: &DMatrix<f64>, uniquenesses: &DVector<f64>) -> DMatrix<f64> {
    let mut sigma = loadings * loadings.transpose();
    // Average with the transpose so the result is exactly symmetric.
    sigma = (&sigma + sigma.transpose()) * 0.5;
    for i in 0..uniquenesses.len() {
        sigma[(i, i)] += uniquenesses[i];
    }
    sigma
}

/// `Σ = ΛΛ' + diag(ψ)`.
pub fn covariance_from_factors(
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let d = loadings.nrows();
    if uniquenesses.len() != d {
        return Err(MgfaError::invalid(format!(
            "loadings have {d} rows but {} uniquenesses were given",
            uniquenesses.len()
        )));
    }
    if loadings.ncols() >= d {
        return Err(MgfaError::invalid(format!(
            "loadings have q={} columns, need q < d={d}",
            loadings.ncols()
        )));
    }
    if uniquenesses.iter().any(|&p| !(p > 0.0)) {
        return Err(MgfaError::invalid("uniquenesses must be positive"));
    }
    Ok(assemble_covariance(loadings, uniquenesses))
}

/// `log φ_d(x; μ, ΛΛ' + Ψ)` evaluated through the factored covariance.
pub fn log_density(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
) -> Result<f64> {
    if x.len() != mean.len() || x.len() != loadings.nrows() {
        return Err(MgfaError::invalid("dimension mismatch in log_density"));
    }
    if x.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
        return Err(MgfaError::invalid("non-finite input to log_density"));
    }
    let fc = FactorCovariance::new(loadings, uniquenesses, 0)?;
    let centered: Vec<f64> = x.iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
    Ok(fc.log_pdf_centered(&centered))
}

/// `log Σ exp(v)` without overflow; `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-density of every observation under every component plus the log
/// weight: entry (i, g) is `log π_g + log φ_d(x_i; μ_g, Σ_g)`.
pub(crate) fn weighted_log_densities(params: &MgfaParams, data: &Dataset) -> Result<DMatrix<f64>> {
    check_data_dims(params, data)?;
    let covs = params.factor_covariances()?;
    let n = data.n();
    let g_count = params.num_components();
    let x = data.observations();
    let mut out = DMatrix::zeros(n, g_count);
    let mut centered = vec![0.0; params.dim()];
    for (g, (comp, fc)) in params.components().iter().zip(&covs).enumerate() {
        let log_w = comp.weight.ln();
        for i in 0..n {
            for (j, c) in centered.iter_mut().enumerate() {
                *c = x[(i, j)] - comp.mean[j];
            }
            out[(i, g)] = log_w + fc.log_pdf_centered(&centered);
        }
    }
    Ok(out)
}

pub(crate) fn check_data_dims(params: &MgfaParams, data: &Dataset) -> Result<()> {
    if params.dim() != data.d() {
        return Err(MgfaError::invalid(format!(
            "model dimension {} does not match data dimension {}",
            params.dim(),
            data.d()
        )));
    }
    Ok(())
}

/// Observed-data log-likelihood `Σ_i log Σ_g π_g φ_d(x_i; μ_g, Σ_g)`.
pub fn mixture_log_likelihood(params: &MgfaParams, data: &Dataset) -> Result<f64> {
    let table = weighted_log_densities(params, data)?;
    Ok(table
        .row_iter()
        .map(|row| log_sum_exp(&row.iter().copied().collect::<Vec<_>>()))
        .sum())
}

/// Free parameters per component: `dq + d − q(q−1)/2`.
pub fn free_parameter_count(d: usize, q: usize) -> Result<usize> {
    if q >= d {
        return Err(MgfaError::invalid(format!("need q < d, got q={q}, d={d}")));
    }
    Ok(d * q + d - q * q.saturating_sub(1) / 2)
}

fn reduction_numerator(d: usize, q: usize) -> i64 {
    let (d, q) = (d as i64, q as i64);
    (d - q) * (d - q) - (d + q)
}

/// `RR(d, q) = ((d−q)² − (d+q)) / (d(d+1))`, negative when the factor
/// model is not more parsimonious than a full covariance.
pub fn relative_reduction(d: usize, q: usize) -> Result<f64> {
    if q >= d {
        return Err(MgfaError::invalid(format!("need q < d, got q={q}, d={d}")));
    }
    Ok(reduction_numerator(d, q) as f64 / (d * (d + 1)) as f64)
}

/// Renders the RR(d, q) grid for `q = 1..=qmax`, `d = 1..=dmax` with two
/// decimals (rounded half-up on the exact fraction) and `-` wherever the
/// reduction is not positive or `q >= d`.
pub fn relative_reduction_table(dmax: usize, qmax: usize) -> String {
    let mut out = String::from("q|d");
    for d in 1..=dmax {
        out.push_str(&format!("\t{d}"));
    }
    out.push('\n');
    for q in 1..=qmax {
        out.push_str(&q.to_string());
        for d in 1..=dmax {
            out.push('\t');
            out.push_str(&relative_reduction_cell(d, q));
        }
        out.push('\n');
    }
    out
}

/// A single cell of [`relative_reduction_table`].
pub fn relative_reduction_cell(d: usize, q: usize) -> String {
    let num = reduction_numerator(d, q);
    if q >= d || num <= 0 {
        return "-".to_string();
    }
    let den = (d * (d + 1)) as i64;
    let hundredths = (200 * num + den) / (2 * den);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn dense_log_density(x: &DVector<f64>, mean: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
        let chol = sigma.clone().cholesky().unwrap();
        let r = x - mean;
        let sol = chol.solve(&r);
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + r.dot(&sol))
    }

    #[test]
    fn zero_loadings_give_scaled_identity() {
        let lam = DMatrix::zeros(4, 2);
        let psi = DVector::from_element(4, 0.1);
        let sigma = covariance_from_factors(&lam, &psi).unwrap();
        assert_eq!(sigma, DMatrix::identity(4, 4) * 0.1);
    }

    #[test]
    fn covariance_dimension_mismatch() {
        let lam = DMatrix::zeros(4, 2);
        let psi = DVector::from_element(3, 0.1);
        assert!(matches!(
            covariance_from_factors(&lam, &psi),
            Err(MgfaError::InvalidArgument(_))
        ));
        assert!(
            covariance_from_factors(&DMatrix::zeros(2, 2), &DVector::from_element(2, 1.0)).is_err()
        );
    }

    #[test]
    fn standard_normal_at_mean() {
        let x = DVector::zeros(2);
        let v = log_density(
            &x,
            &x,
            &DMatrix::zeros(2, 1),
            &DVector::from_element(2, 1.0),
        )
        .unwrap();
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn diagonal_shift_drops_half() {
        let psi: DVector<f64> = DVector::from_vec(vec![0.7, 2.0, 0.3]);
        let mean = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let lam = DMatrix::zeros(3, 1);
        let mut x = mean.clone();
        x[0] += psi[0].sqrt();
        let at_mean = log_density(&mean, &mean, &lam, &psi).unwrap();
        let shifted = log_density(&x, &mean, &lam, &psi).unwrap();
        assert!((at_mean - shifted - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut x = DVector::zeros(2);
        x[0] = f64::NAN;
        let r = log_density(
            &x,
            &DVector::zeros(2),
            &DMatrix::zeros(2, 1),
            &DVector::from_element(2, 1.0),
        );
        assert!(matches!(r, Err(MgfaError::InvalidArgument(_))));
    }

    #[test]
    fn factored_matches_dense_small() {
        let lam = dmatrix![0.5, 1.0; 1.0, 0.45; 0.05, -0.5; -0.6, 0.5; 0.5, 0.1; 1.0, -0.15];
        let psi = DVector::from_element(6, 0.1);
        let mean = DVector::zeros(6);
        let x = DVector::from_vec(vec![0.3, -0.2, 1.1, 0.0, -0.7, 0.4]);
        let sigma = covariance_from_factors(&lam, &psi).unwrap();
        let got = log_density(&x, &mean, &lam, &psi).unwrap();
        let want = dense_log_density(&x, &mean, &sigma);
        assert!(((got - want) / want).abs() < 1e-10);
    }

    #[test]
    fn free_parameters() {
        assert_eq!(free_parameter_count(6, 2).unwrap(), 17);
        assert_eq!(free_parameter_count(4, 1).unwrap(), 8);
        assert_eq!(free_parameter_count(27, 4).unwrap(), 129);
        assert!(free_parameter_count(3, 3).is_err());
    }

    #[test]
    fn reduction_values() {
        assert_eq!(relative_reduction_cell(4, 1), "0.20");
        assert_eq!(relative_reduction_cell(10, 3), "0.33");
        assert_eq!(relative_reduction_cell(15, 5), "0.33");
        assert_eq!(relative_reduction_cell(9, 5), "0.02");
        assert_eq!(relative_reduction_cell(15, 4), "0.43");
        assert_eq!(relative_reduction_cell(1, 4), "-");
        assert!((relative_reduction(4, 1).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(relative_reduction(3, 1).unwrap(), 0.0);
        assert!(relative_reduction(4, 2).unwrap() < 0.0);
        assert!(relative_reduction(2, 2).is_err());
    }

    #[test]
    fn weights_validated() {
        let comp = |w: f64| Component {
            weight: w,
            mean: DVector::zeros(2),
            loadings: DMatrix::zeros(2, 1),
            uniquenesses: DVector::from_element(2, 1.0),
        };
        assert!(MgfaParams::new(vec![comp(0.5), comp(0.4)]).is_err());
        assert!(MgfaParams::new(vec![comp(0.5), comp(0.5)]).is_ok());
        assert!(MgfaParams::new(vec![comp(1.5), comp(-0.5)]).is_err());
        let mut bad = comp(1.0);
        bad.uniquenesses[1] = 0.0;
        assert!(MgfaParams::new(vec![bad]).is_err());
    }

    #[test]
    fn bounds_validation() {
        assert!(EigenBounds::new(0.0, 1.0).is_err());
        assert!(EigenBounds::new(2.0, 1.0).is_err());
        let b = EigenBounds::new(0.01, 6.0).unwrap();
        assert!((b.ratio() - 0.01 / 6.0).abs() < 1e-18);
        assert_eq!(EigenBounds::lower_only(0.1).unwrap().upper(), None);
    }

    #[test]
    fn hard_labels_argmax() {
        let r = Responsibilities::new(dmatrix![0.2, 0.8; 0.6, 0.4; 0.5, 0.5]).unwrap();
        assert_eq!(r.hard_labels(), vec![1, 0, 0]);
        assert!(Responsibilities::new(dmatrix![0.2, 0.7]).is_err());
    }
}
