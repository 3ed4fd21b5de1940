//! Dense and spectral operator algebra.
//!
//! Dense operators are plain [`DenseOp`] matrices. A [`SpectralOperator`] is
//! a self-adjoint operator stored as its eigenvalues on a labelled orthonormal
//! basis; functions of such operators act on the eigenvalues only.

use crate::{DenseOp, Error, Result, Vector};

/// Singular values below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Largest principal-angle sine accepted by [`range_equal_diagnostic`].
pub const RANGE_ANGLE_TOL: f64 = 1e-8;

/// Orthonormal basis on which a [`SpectralOperator`] is diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Discrete Dirichlet sine modes on an `m x n` grid, flattened as
    /// `(k - 1) * n + (l - 1)`.
    Sine { m: usize, n: usize },
    /// Coordinate basis of `R^dim`.
    Abstract(usize),
}

impl Basis {
    pub fn size(&self) -> usize {
        match *self {
            Basis::Sine { m, n } => m * n,
            Basis::Abstract(d) => d,
        }
    }
}

/// Self-adjoint operator given by its eigenvalues on `basis`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    basis: Basis,
    eigenvalues: Vec<f64>,
    psd: bool,
}

impl SpectralOperator {
    pub fn new(basis: Basis, eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.len() != basis.size() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} eigenvalues", basis.size()),
                got: format!("{}", eigenvalues.len()),
            });
        }
        if let Some((index, &eigenvalue)) = eigenvalues.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteResult { index, eigenvalue });
        }
        let psd = eigenvalues.iter().all(|&v| v >= 0.0);
        Ok(Self { basis, eigenvalues, psd })
    }

    /// Like [`SpectralOperator::new`] but rejects negative eigenvalues.
    pub fn new_psd(basis: Basis, eigenvalues: Vec<f64>) -> Result<Self> {
        let op = Self::new(basis, eigenvalues)?;
        if !op.psd {
            let min = op.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            return Err(Error::NotPositiveSemidefinite(min));
        }
        Ok(op)
    }

    pub fn identity(basis: Basis) -> Self {
        Self { basis, eigenvalues: vec![1.0; basis.size()], psd: true }
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn is_psd(&self) -> bool {
        self.psd
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Matrix in the operator's own basis coordinates (diagonal).
    pub fn to_dense(&self) -> DenseOp {
        DenseOp::from_diagonal(&Vector::from_column_slice(&self.eigenvalues))
    }
}

/// `x ⊗ y`, the rank-one operator `z -> <z, y> x`, as the matrix `x yᵀ`.
pub fn tensor_product(x: &Vector, y: &Vector) -> DenseOp {
    x * y.transpose()
}

/// Operator, Hilbert-Schmidt and trace norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorNorms {
    pub op_norm: f64,
    pub hs_norm: f64,
    pub trace_norm: f64,
}

/// Relative reconstruction error above which a library SVD is rejected.
const SVD_RECOMPOSE_TOL: f64 = 1e-11;

/// Unordered thin SVD `(U, σ, V)` with `A = U diag(σ) Vᵀ`.
///
/// nalgebra's bidiagonal SVD occasionally returns inaccurate factors, so the
/// result is checked by recomposition and replaced by a one-sided Jacobi SVD
/// when the check fails.
fn thin_svd(a: &DenseOp) -> (DenseOp, Vec<f64>, DenseOp) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let recomposed = &u * DenseOp::from_diagonal(&svd.singular_values) * &vt;
    let scale = a.norm();
    if (recomposed - a).norm() <= SVD_RECOMPOSE_TOL * scale.max(f64::MIN_POSITIVE) {
        return (u, sigma, vt.transpose());
    }
    log::debug!("library SVD failed recomposition; using Jacobi");
    jacobi_svd(a)
}

/// One-sided (Hestenes) Jacobi SVD. Left vectors of zero singular values are
/// left as zero columns.
fn jacobi_svd(a: &DenseOp) -> (DenseOp, Vec<f64>, DenseOp) {
    if a.nrows() < a.ncols() {
        let (u, s, v) = jacobi_svd(&a.transpose());
        return (v, s, u);
    }
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DenseOp::identity(n, n);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for i in 0..m.nrows() {
                        let (xp, xq) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * xp - s * xq;
                        m[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    for (j, &sj) in sigma.iter().enumerate() {
        if sj > 0.0 {
            w.column_mut(j).unscale_mut(sj);
        }
    }
    (w, sigma, v)
}

/// Singular values in descending order.
pub fn singular_values(a: &DenseOp) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s = thin_svd(a).1;
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// All three norms from one set of singular values. The trace norm is
/// `Σ <(AᵀA)^{1/2} e_n, e_n> = Σ σ_n`, which also covers non-self-adjoint `A`.
pub fn operator_norms(a: &DenseOp) -> OperatorNorms {
    let s = singular_values(a);
    OperatorNorms {
        op_norm: s.first().copied().unwrap_or(0.0),
        hs_norm: s.iter().map(|v| v * v).sum::<f64>().sqrt(),
        trace_norm: s.iter().sum(),
    }
}

/// `f(A)` by the spectral mapping theorem.
pub fn apply_function<F>(f: F, a: &SpectralOperator) -> Result<SpectralOperator>
where
    F: Fn(f64) -> f64,
{
    let mut eigenvalues = Vec::with_capacity(a.dim());
    for (index, &lambda) in a.eigenvalues.iter().enumerate() {
        let v = f(lambda);
        if !v.is_finite() {
            return Err(Error::NonFiniteResult { index, eigenvalue: lambda });
        }
        eigenvalues.push(v);
    }
    SpectralOperator::new(a.basis, eigenvalues)
}

/// Anything that applies `A⁻¹` to a block of right-hand sides.
pub trait LinearSolve {
    fn solve(&self, rhs: &DenseOp) -> DenseOp;
}

impl<F> LinearSolve for F
where
    F: Fn(&DenseOp) -> DenseOp,
{
    fn solve(&self, rhs: &DenseOp) -> DenseOp {
        self(rhs)
    }
}

/// `(A + U C V)⁻¹ rhs` via Sherman-Morrison-Woodbury, for a block `rhs`.
///
/// Only the small `k x k` system `C⁻¹ + V A⁻¹ U` is factored.
pub fn smw_solve_many(
    a_inv: &dyn LinearSolve,
    u: &DenseOp,
    c_inv: &DenseOp,
    v: &DenseOp,
    rhs: &DenseOp,
) -> Result<DenseOp> {
    let k = c_inv.nrows();
    if c_inv.ncols() != k || u.ncols() != k || v.nrows() != k || u.nrows() != rhs.nrows() {
        return Err(Error::ShapeMismatch {
            expected: format!("U: n x {k}, C⁻¹: {k} x {k}, V: {k} x n"),
            got: format!(
                "U: {}x{}, C⁻¹: {}x{}, V: {}x{}, rhs rows {}",
                u.nrows(),
                u.ncols(),
                c_inv.nrows(),
                c_inv.ncols(),
                v.nrows(),
                v.ncols(),
                rhs.nrows()
            ),
        });
    }
    let a_inv_rhs = a_inv.solve(rhs);
    if k == 0 {
        return Ok(a_inv_rhs);
    }
    let a_inv_u = a_inv.solve(u);
    let inner = c_inv + v * &a_inv_u;
    let s = singular_values(&inner);
    let smax = s[0];
    let smin = s[s.len() - 1];
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return Err(Error::SingularInnerSystem);
    }
    let lu = inner.lu();
    let correction = lu.solve(&(v * &a_inv_rhs)).ok_or(Error::SingularInnerSystem)?;
    Ok(a_inv_rhs - a_inv_u * correction)
}

/// Single right-hand-side form of [`smw_solve_many`].
pub fn smw_solve(a_inv: &dyn LinearSolve, u: &DenseOp, c_inv: &DenseOp, v: &DenseOp, rhs: &Vector) -> Result<Vector> {
    let block = DenseOp::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let out = smw_solve_many(a_inv, u, c_inv, v, &block)?;
    Ok(out.column(0).into_owned())
}

/// Thin SVD truncated at the numerical rank.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub left: DenseOp,
    pub singular_values: Vec<f64>,
    pub right: DenseOp,
    pub rank: usize,
}

pub fn svd_factors(a: &DenseOp) -> SvdFactors {
    let (rows, cols) = a.shape();
    if a.is_empty() {
        return SvdFactors {
            left: DenseOp::zeros(rows, 0),
            singular_values: Vec::new(),
            right: DenseOp::zeros(cols, 0),
            rank: 0,
        };
    }
    let (u, sigma, v) = thin_svd(a);
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let smax = order.first().map(|&i| sigma[i]).unwrap_or(0.0);
    let kept: Vec<usize> = order.into_iter().filter(|&i| smax > 0.0 && sigma[i] > RANK_TOL * smax).collect();
    let rank = kept.len();
    let mut left = DenseOp::zeros(rows, rank);
    let mut right = DenseOp::zeros(cols, rank);
    let mut values = Vec::with_capacity(rank);
    for (c, &i) in kept.iter().enumerate() {
        left.set_column(c, &u.column(i));
        right.set_column(c, &v.column(i));
        values.push(sigma[i]);
    }
    SvdFactors { left, singular_values: values, right, rank }
}

/// Largest sine of the principal angles between the column spaces spanned by
/// two orthonormal blocks of equal width.
pub fn max_principal_sine(q1: &DenseOp, q2: &DenseOp) -> f64 {
    if q1.ncols() == 0 {
        return 0.0;
    }
    let residual = q2 - q1 * (q1.transpose() * q2);
    operator_norms(&residual).op_norm
}

/// Checks `Range(A Aᵀ) = Range(A)` numerically: equal numerical rank and all
/// principal angles below [`RANGE_ANGLE_TOL`].
pub fn range_equal_diagnostic(a: &DenseOp) -> bool {
    let of_a = svd_factors(a);
    let of_aat = svd_factors(&(a * a.transpose()));
    of_a.rank == of_aat.rank && max_principal_sine(&of_a.left, &of_aat.left) < RANGE_ANGLE_TOL
}
