//! Eigenvalue bounds on component covariances.
//!
//! A covariance `Σ = ΛΛ' + Ψ` is kept inside `[a, b]` by editing the
//! singular values of `Λ = U D V'` and the diagonal of `Ψ`:
//!
//! 1. decompose `Λ` by SVD and square its singular values;
//! 2. for `i ≤ q`, if `d_i² + ψ_i < a` raise `d_i` to `√(a − ψ_i)` (or `√a`);
//! 3. for `i > q`, raise `ψ_i` below `a` to `a`;
//! 4. for `i ≤ q`, if `d_i² + ψ_i > b` lower `d_i` to `√(b − ψ_i)` (or `√b`);
//! 5. for `i > q`, lower `ψ_i` above `b` to `b`;
//! 6. rebuild `Λ* = U D* V'` with the original singular vectors.
//!
//! The i-th singular value is paired with the i-th diagonal uniqueness,
//! exactly as the steps read. These conditions are sufficient bounds on
//! `λ_min`/`λ_max`, not equalities, so [`ProjectionMode::Strict`] adds a
//! final eigenvalue check that guarantees `a ≤ λ_i(Σ*) ≤ b`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{complete_orthonormal, sym_eigenvalues_desc};
use crate::model::{EigenBounds, MgfaParams};

/// Slack used by [`bounds_satisfied`].
pub const EIGEN_CHECK_SLACK: f64 = 1e-10;

/// Relative slack below which a bound violation is treated as rounding.
const TRIGGER_RELATIVE_SLACK: f64 = 1e-12;

/// Passes of the step sequence before giving up on a fixed point. More than
/// one pass is only needed when editing the singular values changes their
/// order, and with it the index pairing.
const MAX_PASSES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionMode {
    /// The step sequence as written.
    #[default]
    Literal,
    /// Additionally clamp every uniqueness into `[a, b]` and shrink the
    /// loadings until `λ_max(Σ*) ≤ b`.
    Strict,
}

/// Full SVD of a d×q loading matrix, singular values nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdParts {
    /// U, d×d orthogonal.
    pub left_vectors: DMatrix<f64>,
    /// d_1 ≥ … ≥ d_q ≥ 0.
    pub singular_values: DVector<f64>,
    /// V, q×q orthogonal.
    pub right_vectors: DMatrix<f64>,
}

impl SvdParts {
    pub fn of(loadings: &DMatrix<f64>) -> Self {
        let d = loadings.nrows();
        let q = loadings.ncols();
        if q == 0 {
            return Self {
                left_vectors: DMatrix::identity(d, d),
                singular_values: DVector::zeros(0),
                right_vectors: DMatrix::zeros(0, 0),
            };
        }
        let svd = loadings.clone().svd(true, true);
        let u = svd.u.expect("left singular vectors requested");
        let v_t = svd.v_t.expect("right singular vectors requested");
        let k = svd.singular_values.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let mut u_thin = DMatrix::zeros(d, k);
        let mut v = DMatrix::zeros(q, k);
        let mut values = DVector::zeros(k);
        for (dst, &src) in order.iter().enumerate() {
            u_thin.set_column(dst, &u.column(src));
            v.set_column(dst, &v_t.row(src).transpose());
            values[dst] = svd.singular_values[src];
        }
        Self {
            left_vectors: complete_orthonormal(&u_thin),
            singular_values: values,
            right_vectors: v,
        }
    }

    pub fn num_factors(&self) -> usize {
        self.singular_values.len()
    }

    /// `U D V'` for replacement singular values.
    pub fn reconstruct(&self, singular_values: &DVector<f64>) -> DMatrix<f64> {
        let q = self.num_factors();
        let u = self.left_vectors.columns(0, q);
        let mut scaled = u.clone_owned();
        for j in 0..q {
            scaled.column_mut(j).scale_mut(singular_values[j]);
        }
        scaled * self.right_vectors.transpose()
    }
}

/// True iff every eigenvalue of `ΛΛ' + Ψ` lies in `[a − 1e-10, b + 1e-10]`.
///
/// Uses a direct symmetric eigendecomposition, independent of the
/// sufficient conditions used by [`project`].
pub fn bounds_satisfied(
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
    bounds: &EigenBounds,
) -> bool {
    covariance_eigenvalues(loadings, uniquenesses)
        .iter()
        .all(|&l| bounds.contains(l, EIGEN_CHECK_SLACK))
}

/// True iff the quantities the projection steps govern are inside the
/// bounds: `a ≤ d_i² + ψ_i ≤ b` for `i ≤ q` and `a ≤ ψ_i ≤ b` for `i > q`.
pub fn governed_quantities_satisfied(
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
    bounds: &EigenBounds,
    slack: f64,
) -> bool {
    let svd = SvdParts::of(loadings);
    let q = svd.num_factors();
    (0..q).all(|i| bounds.contains(svd.singular_values[i].powi(2) + uniquenesses[i], slack))
        && (q..uniquenesses.len()).all(|i| bounds.contains(uniquenesses[i], slack))
}

fn covariance_eigenvalues(loadings: &DMatrix<f64>, uniquenesses: &DVector<f64>) -> Vec<f64> {
    let mut sigma = loadings * loadings.transpose();
    for i in 0..uniquenesses.len() {
        sigma[(i, i)] += uniquenesses[i];
    }
    sym_eigenvalues_desc(&sigma)
}

struct Slack {
    lower: f64,
    upper: f64,
}

impl Slack {
    fn for_bounds(bounds: &EigenBounds) -> Self {
        Self {
            lower: TRIGGER_RELATIVE_SLACK * bounds.lower().max(1.0),
            upper: TRIGGER_RELATIVE_SLACK * bounds.upper().map_or(1.0, |b| b.max(1.0)),
        }
    }
}

/// One pass of the step sequence. Returns `None` when no step changes
/// anything.
fn literal_pass(
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
    bounds: &EigenBounds,
    slack: &Slack,
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let a = bounds.lower();
    let b = bounds.upper_or_inf();
    let svd = SvdParts::of(loadings);
    let q = svd.num_factors();
    let d = uniquenesses.len();
    let psi = uniquenesses;
    let mut d_star = svd.singular_values.clone();
    let mut psi_star = psi.clone();
    let mut loadings_changed = false;
    let mut psi_changed = false;

    // Replacing d_i by a value whose square equals the current one up to
    // rounding is not a change.
    let mut set_singular = |d_star: &mut DVector<f64>, i: usize, value: f64, tol: f64| {
        if (value * value - d_star[i] * d_star[i]).abs() > tol {
            d_star[i] = value;
            loadings_changed = true;
        }
    };

    for i in 0..q {
        if d_star[i] * d_star[i] + psi[i] < a - slack.lower {
            let value = if a - psi[i] >= 0.0 {
                (a - psi[i]).sqrt()
            } else {
                a.sqrt()
            };
            set_singular(&mut d_star, i, value, slack.lower);
        }
    }
    for i in q..d {
        if psi_star[i] < a {
            psi_star[i] = a;
            psi_changed = true;
        }
    }
    for i in 0..q {
        if d_star[i] * d_star[i] + psi[i] > b + slack.upper {
            let value = if b - psi[i] >= 0.0 {
                (b - psi[i]).sqrt()
            } else {
                b.sqrt()
            };
            set_singular(&mut d_star, i, value, slack.upper);
        }
    }
    for i in q..d {
        if psi_star[i] > b {
            psi_star[i] = b;
            psi_changed = true;
        }
    }

    if !loadings_changed && !psi_changed {
        return None;
    }
    let new_loadings = if loadings_changed {
        svd.reconstruct(&d_star)
    } else {
        loadings.clone()
    };
    Some((new_loadings, psi_star))
}

/// Projects `(Λ, Ψ)` onto the constrained set.
///
/// The first pass is the step sequence from the module docs. Further passes
/// run only if re-decomposing the result changes which singular value pairs
/// with which uniqueness; the output is a fixed point, so projecting it again
/// returns it bitwise unchanged.
pub fn project(
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
    bounds: &EigenBounds,
    mode: ProjectionMode,
) -> (DMatrix<f64>, DVector<f64>) {
    let slack = Slack::for_bounds(bounds);
    let mut lam = loadings.clone();
    let mut psi = uniquenesses.clone();

    if mode == ProjectionMode::Strict {
        let a = bounds.lower();
        let b = bounds.upper_or_inf();
        for p in psi.iter_mut() {
            *p = p.clamp(a, b);
        }
    }

    let mut settled = false;
    for _ in 0..MAX_PASSES {
        match literal_pass(&lam, &psi, bounds, &slack) {
            Some((l, p)) => {
                lam = l;
                psi = p;
            }
            None => {
                settled = true;
                break;
            }
        }
    }
    if !settled {
        (lam, psi) = pairing_free_projection(&lam, &psi, bounds);
    }

    if mode == ProjectionMode::Strict {
        if let Some(b) = bounds.upper() {
            lam = shrink_to_upper_bound(lam, &psi, b, slack.upper);
        }
    }
    (lam, psi)
}

/// Used when the step sequence cycles: re-sorting the edited singular
/// values can pair them with uniquenesses they were not edited for, most
/// often when some `ψ_i > b` with `i ≤ q`. Clamping every `ψ_i` into
/// `[a, b]` and every `d_i²` to at most `b − max_{j≤q} ψ_j` satisfies the
/// conditions under any pairing, so the result is a fixed point.
fn pairing_free_projection(
    loadings: &DMatrix<f64>,
    uniquenesses: &DVector<f64>,
    bounds: &EigenBounds,
) -> (DMatrix<f64>, DVector<f64>) {
    let a = bounds.lower();
    let b = bounds.upper_or_inf();
    let psi = uniquenesses.map(|p| p.clamp(a, b));
    let svd = SvdParts::of(loadings);
    let q = svd.num_factors();
    let cap = (0..q)
        .map(|i| b - psi[i])
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let d_star = svd.singular_values.map(|v| v.min(cap.sqrt()));
    (svd.reconstruct(&d_star), psi)
}

/// Scales `Λ` by the largest factor in `[0, 1]` with `λ_max(s²ΛΛ' + Ψ) ≤ b`.
/// Requires `max ψ ≤ b`.
fn shrink_to_upper_bound(
    loadings: DMatrix<f64>,
    uniquenesses: &DVector<f64>,
    b: f64,
    slack: f64,
) -> DMatrix<f64> {
    let lambda_max = |s: f64| covariance_eigenvalues(&(&loadings * s), uniquenesses)[0];
    if lambda_max(1.0) <= b + slack {
        return loadings;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if lambda_max(mid) <= b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    loadings * lo
}

/// Applies [`project`] to every component; weights and means are untouched.
pub fn project_all(params: &MgfaParams, bounds: &EigenBounds, mode: ProjectionMode) -> MgfaParams {
    let components = params
        .components()
        .iter()
        .map(|c| {
            let (loadings, uniquenesses) = project(&c.loadings, &c.uniquenesses, bounds, mode);
            crate::model::Component {
                loadings,
                uniquenesses,
                ..c.clone()
            }
        })
        .collect();
    MgfaParams::from_components_unchecked(components)
}
