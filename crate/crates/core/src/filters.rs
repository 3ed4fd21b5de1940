//! Assimilation updates: optimal statistical interpolation / Kalman filter,
//! the perturbed-observation EnKF with its exact-gain reference, the ETKF
//! square-root filter and Bayesian reweighting of particles.
//!
//! Ensembles use the `N - 1` divisor throughout this module.

use nalgebra::Cholesky;
use rand::Rng;

use crate::ensemble_stats::{sample_cov, sample_mean, Divisor, Ensemble};
use crate::rng::{standard_normal_vec, StreamRng, StreamTag};
use crate::spectral_ops::{smw_solve_many, svd_factors};
use crate::{DenseOp, Error, Result, Vector};

/// Tolerance for the algebraic cross-checks of the OSI and EnKF forms.
pub const CROSS_CHECK_TOL: f64 = 1e-8;
/// Tolerance for the ETKF exactness identities.
pub const ETKF_EXACT_TOL: f64 = 1e-10;
/// Smallest admissible eigenvalue of `R`.
pub const R_MIN_EIGENVALUE: f64 = 1e-12;

fn symmetrize(m: &DenseOp) -> DenseOp {
    (m + m.transpose()) * 0.5
}

/// `|a - b| / max(|a|, |b|)` in the Frobenius norm, zero when both vanish.
pub fn rel_diff(a: &DenseOp, b: &DenseOp) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

fn rel_diff_vec(a: &Vector, b: &Vector) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

fn shape(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::ShapeMismatch { expected: expected.into(), got: got.into() }
}

/// Cholesky factor of a symmetric positive definite `R`, or `SingularR`.
fn factor_r(r: &DenseOp) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if r.nrows() != r.ncols() || r.nrows() == 0 {
        return Err(Error::SingularR);
    }
    let scale = r.amax().max(1.0);
    if (r - r.transpose()).amax() > 1e-10 * scale {
        return Err(Error::SingularR);
    }
    let chol = Cholesky::new(symmetrize(r)).ok_or(Error::SingularR)?;
    let min_pivot = chol.l_dirty().diagonal().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    if min_pivot <= R_MIN_EIGENVALUE {
        return Err(Error::SingularR);
    }
    Ok(chol)
}

/// Mean and covariance of a Gaussian state.
#[derive(Debug, Clone, PartialEq)]
pub struct KfState {
    pub mean: Vector,
    pub cov: DenseOp,
}

impl KfState {
    pub fn new(mean: Vector, cov: DenseOp) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(shape(format!("{n}x{n} covariance"), format!("{}x{}", cov.nrows(), cov.ncols())));
        }
        if (&cov - cov.transpose()).amax() > 1e-10 * cov.amax().max(1.0) {
            return Err(Error::InvalidArgument("state covariance is not symmetric".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Linear observation `d = H x + ε`, `ε ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub h: DenseOp,
    pub r: DenseOp,
    pub d: Vector,
}

impl ObservationModel {
    pub fn new(h: DenseOp, r: DenseOp, d: Vector) -> Result<Self> {
        let m = d.len();
        if h.nrows() != m || r.shape() != (m, m) {
            return Err(shape(
                format!("H with {m} rows and {m}x{m} R"),
                format!("H {}x{}, R {}x{}", h.nrows(), h.ncols(), r.nrows(), r.ncols()),
            ));
        }
        factor_r(&r)?;
        Ok(Self { h, r, d })
    }

    pub fn obs_dim(&self) -> usize {
        self.d.len()
    }
    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    fn check_state_dim(&self, n: usize) -> Result<()> {
        if self.h.ncols() != n {
            return Err(shape(format!("H with {n} columns"), format!("{}", self.h.ncols())));
        }
        Ok(())
    }
}

/// `x -> A x + f` with covariance regularization `D` added in the forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DenseOp,
    pub f: Vector,
    pub reg: DenseOp,
}

impl LinearModel {
    pub fn new(a: DenseOp, f: Vector, reg: DenseOp) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || f.len() != n || reg.shape() != (n, n) {
            return Err(shape(format!("square A, f and D of size {n}"), format!("A {}x{}", a.nrows(), a.ncols())));
        }
        crate::gaussian::psd_eigen(&reg)?;
        Ok(Self { a, f, reg })
    }

    pub fn identity(n: usize) -> Self {
        Self { a: DenseOp::identity(n, n), f: Vector::zeros(n), reg: DenseOp::zeros(n, n) }
    }

    /// Deterministic model applied to every ensemble member.
    pub fn advance(&self, e: &Ensemble) -> Result<Ensemble> {
        let mut x = &self.a * e.matrix();
        for mut c in x.column_iter_mut() {
            c += &self.f;
        }
        Ensemble::new(x)
    }
}

/// Result of the OSI analysis together with the cross-check diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct OsiAnalysis {
    pub state: KfState,
    pub gain: DenseOp,
    /// `(Q⁻¹ + HᵀR⁻¹H)⁻¹ (Q⁻¹μ + HᵀR⁻¹d)` when `Q` is invertible.
    pub precision_mean: Option<Vector>,
    /// `(Q⁻¹ + HᵀR⁻¹H)⁻¹` when `Q` is invertible.
    pub precision_cov: Option<DenseOp>,
    /// `Q - QHᵀ(R + HQHᵀ)⁻¹HQ`
    pub expanded_cov: DenseOp,
}

impl OsiAnalysis {
    pub fn mean_discrepancy(&self) -> Option<f64> {
        self.precision_mean.as_ref().map(|m| rel_diff_vec(&self.state.mean, m))
    }

    /// Largest relative gap between `(I-KH)Q` and its SMW-equivalent forms.
    pub fn cov_discrepancy(&self) -> f64 {
        let expanded = rel_diff(&self.state.cov, &self.expanded_cov);
        match &self.precision_cov {
            Some(p) => expanded.max(rel_diff(&self.state.cov, p)),
            None => expanded,
        }
    }

    /// Fails unless every available form agrees to [`CROSS_CHECK_TOL`].
    pub fn verify(&self) -> Result<()> {
        if let Some(d) = self.mean_discrepancy() {
            if d > CROSS_CHECK_TOL {
                return Err(Error::CrossCheckFailed { what: "OSI mean", discrepancy: d, tolerance: CROSS_CHECK_TOL });
            }
        }
        let d = self.cov_discrepancy();
        if d > CROSS_CHECK_TOL {
            return Err(Error::CrossCheckFailed { what: "OSI covariance", discrepancy: d, tolerance: CROSS_CHECK_TOL });
        }
        Ok(())
    }
}

/// `K = QHᵀ(HQHᵀ + R)⁻¹`
pub fn kalman_gain(q: &DenseOp, obs: &ObservationModel) -> Result<DenseOp> {
    let qht = q * obs.h.transpose();
    let s = symmetrize(&(&obs.h * &qht + &obs.r));
    let chol = Cholesky::new(s).ok_or(Error::SingularInnovation)?;
    // K = (S⁻¹ H Q)ᵀ
    Ok(chol.solve(&qht.transpose()).transpose())
}

/// Optimal statistical interpolation: `μᵃ = μ + K(d - Hμ)`, `Qᵃ = (I - KH)Q`.
pub fn osi_analysis(prior: &KfState, obs: &ObservationModel) -> Result<OsiAnalysis> {
    let n = prior.dim();
    obs.check_state_dim(n)?;
    let k = kalman_gain(&prior.cov, obs)?;
    let mean = &prior.mean + &k * (&obs.d - &obs.h * &prior.mean);
    let ikh = DenseOp::identity(n, n) - &k * &obs.h;
    let cov = symmetrize(&(&ikh * &prior.cov));

    let hq = &obs.h * &prior.cov;
    let s = symmetrize(&(&hq * obs.h.transpose() + &obs.r));
    let s_chol = Cholesky::new(s).ok_or(Error::SingularInnovation)?;
    let expanded_cov = symmetrize(&(&prior.cov - hq.transpose() * s_chol.solve(&hq)));

    let (precision_mean, precision_cov) = match precision_form(prior, obs)? {
        Some((m, c)) => (Some(m), Some(c)),
        None => (None, None),
    };
    Ok(OsiAnalysis { state: KfState { mean, cov }, gain: k, precision_mean, precision_cov, expanded_cov })
}

/// Precision (least-squares) form of the OSI update, if `Q` is numerically
/// invertible.
fn precision_form(prior: &KfState, obs: &ObservationModel) -> Result<Option<(Vector, DenseOp)>> {
    let n = prior.dim();
    let q_chol = match Cholesky::new(symmetrize(&prior.cov)) {
        Some(c) => c,
        None => return Ok(None),
    };
    let diag = q_chol.l_dirty().diagonal();
    let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if n == 0 || dmin <= 1e-6 * dmax {
        return Ok(None);
    }
    let r_chol = factor_r(&obs.r)?;
    let q_inv = q_chol.inverse();
    let rinv_h = r_chol.solve(&obs.h);
    let precision = symmetrize(&(&q_inv + obs.h.transpose() * &rinv_h));
    let p_chol = match Cholesky::new(precision) {
        Some(c) => c,
        None => return Ok(None),
    };
    let rhs = &q_inv * &prior.mean + obs.h.transpose() * r_chol.solve(&obs.d);
    Ok(Some((p_chol.solve(&rhs), symmetrize(&p_chol.inverse()))))
}

/// Kalman forecast `μ' = Aμ + f`, `Q' = AQAᵀ + D`.
pub fn kf_forecast(state: &KfState, model: &LinearModel) -> Result<KfState> {
    if model.a.ncols() != state.dim() {
        return Err(shape(format!("model of size {}", state.dim()), format!("{}", model.a.ncols())));
    }
    let mean = &model.a * &state.mean + &model.f;
    let cov = symmetrize(&(&model.a * &state.cov * model.a.transpose() + &model.reg));
    Ok(KfState { mean, cov })
}

/// Perturbed data ensemble `D_k ~ N(d, R)`, one column per member.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedData {
    pub columns: DenseOp,
    pub seed: Option<u64>,
}

impl PerturbedData {
    pub fn size(&self) -> usize {
        self.columns.ncols()
    }
}

fn data_column<R: Rng + ?Sized>(obs: &ObservationModel, l: &DenseOp, rng: &mut R) -> Vector {
    &obs.d + l * standard_normal_vec(rng, obs.obs_dim())
}

/// `n` independent draws of `N(d, R)` from one sequential stream.
pub fn make_perturbed_data<R: Rng + ?Sized>(obs: &ObservationModel, n: usize, rng: &mut R) -> Result<PerturbedData> {
    if n == 0 {
        return Err(Error::DegenerateEnsemble(0));
    }
    let l = factor_r(&obs.r)?.unpack();
    let cols: Vec<Vector> = (0..n).map(|_| data_column(obs, &l, rng)).collect();
    Ok(PerturbedData { columns: DenseOp::from_columns(&cols), seed: None })
}

/// Perturbed data where member `k` of cycle `cycle` comes from its own
/// counter-based stream, so the data for `N` members is the prefix of the
/// data for any larger `N`.
pub fn perturbed_data_streamed(obs: &ObservationModel, n: usize, seed: u64, cycle: u64) -> Result<PerturbedData> {
    if n == 0 {
        return Err(Error::DegenerateEnsemble(0));
    }
    let l = factor_r(&obs.r)?.unpack();
    let cols: Vec<Vector> = (0..n)
        .map(|k| {
            let mut rng = StreamRng::member(seed, StreamTag::PerturbedData, cycle, k as u64);
            data_column(obs, &l, &mut rng)
        })
        .collect();
    Ok(PerturbedData { columns: DenseOp::from_columns(&cols), seed: Some(seed) })
}

fn check_pair(x: &Ensemble, obs: &ObservationModel, data: &PerturbedData) -> Result<()> {
    obs.check_state_dim(x.state_dim())?;
    if data.columns.shape() != (obs.obs_dim(), x.size()) {
        return Err(shape(
            format!("{}x{} perturbed data", obs.obs_dim(), x.size()),
            format!("{}x{}", data.columns.nrows(), data.columns.ncols()),
        ));
    }
    Ok(())
}

/// EnKF analysis `Xᵃ = X + K_N(D - HX)` with `K_N` from the sample covariance.
///
/// `Q_N` is never formed: `K_N (D - HX) = A Bᵀ S⁻¹ (D - HX) / (N-1)` with
/// `B = HA` and `S = BBᵀ/(N-1) + R`.
pub fn enkf_analysis(x: &Ensemble, obs: &ObservationModel, data: &PerturbedData) -> Result<Ensemble> {
    let n = x.size();
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    check_pair(x, obs, data)?;
    let a = x.deviations();
    let b = &obs.h * &a;
    let nm1 = (n - 1) as f64;
    let s = symmetrize(&(&b * b.transpose() / nm1 + &obs.r));
    let chol = Cholesky::new(s).ok_or(Error::SingularInnovation)?;
    let innovations = &data.columns - &obs.h * x.matrix();
    let z = chol.solve(&innovations);
    Ensemble::new(x.matrix() + a * (b.transpose() * z) / nm1)
}

/// EnKF analysis plus the two algebraic cross-checks.
#[derive(Debug, Clone, PartialEq)]
pub struct EnkfAnalysis {
    pub ensemble: Ensemble,
    /// Gain `K_N` built explicitly from `Q_N`.
    pub gain: DenseOp,
    /// Direct `(HQ_NHᵀ + R)⁻¹` against its Sherman-Morrison-Woodbury form.
    pub smw_discrepancy: f64,
    /// `X + K_N(D - HX)` against the transform form `X T`.
    pub transform_discrepancy: f64,
}

impl EnkfAnalysis {
    pub fn verify(&self) -> Result<()> {
        for (what, d) in
            [("EnKF SMW inverse", self.smw_discrepancy), ("EnKF transform form", self.transform_discrepancy)]
        {
            if d > CROSS_CHECK_TOL {
                return Err(Error::CrossCheckFailed { what, discrepancy: d, tolerance: CROSS_CHECK_TOL });
            }
        }
        Ok(())
    }
}

/// [`enkf_analysis`] computed in gain form with an explicit `Q_N`, together
/// with the SMW inner inverse and the ensemble-transform form
/// `T = I + (I - eeᵀ/N) XᵀHᵀ (HQ_NHᵀ + R)⁻¹ (D - HX) / (N-1)`.
pub fn enkf_analysis_checked(x: &Ensemble, obs: &ObservationModel, data: &PerturbedData) -> Result<EnkfAnalysis> {
    let n = x.size();
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    check_pair(x, obs, data)?;
    let nm1 = (n - 1) as f64;
    let m = obs.obs_dim();
    let q_n = sample_cov(x, Divisor::NMinusOne)?;
    let hq = &obs.h * &q_n;
    let s = symmetrize(&(&hq * obs.h.transpose() + &obs.r));
    let s_inv = Cholesky::new(s).ok_or(Error::SingularInnovation)?.inverse();

    let b = &obs.h * x.deviations();
    let r_chol = factor_r(&obs.r)?;
    let r_solve = |rhs: &DenseOp| r_chol.solve(rhs);
    let c_inv = DenseOp::identity(n, n) * nm1;
    let smw_inv = smw_solve_many(&r_solve, &b, &c_inv, &b.transpose(), &DenseOp::identity(m, m))?;
    let smw_discrepancy = rel_diff(&s_inv, &smw_inv);

    let gain = hq.transpose() * &s_inv;
    let innovations = &data.columns - &obs.h * x.matrix();
    let xa = x.matrix() + &gain * &innovations;

    let centering = DenseOp::identity(n, n) - DenseOp::from_element(n, n, 1.0 / n as f64);
    let t =
        DenseOp::identity(n, n) + centering * x.matrix().transpose() * obs.h.transpose() * &s_inv * &innovations / nm1;
    let xt = x.matrix() * t;
    let transform_discrepancy = rel_diff(&xa, &xt);

    Ok(EnkfAnalysis { ensemble: Ensemble::new(xa)?, gain, smw_discrepancy, transform_discrepancy })
}

/// Reference analysis `Uᵃ = U + K(D - HU)` with the gain of the exact
/// covariance `q_exact`.
pub fn exact_gain_analysis(
    u: &Ensemble,
    obs: &ObservationModel,
    q_exact: &DenseOp,
    data: &PerturbedData,
) -> Result<Ensemble> {
    check_pair(u, obs, data)?;
    let n = u.state_dim();
    if q_exact.shape() != (n, n) {
        return Err(shape(format!("{n}x{n} covariance"), format!("{}x{}", q_exact.nrows(), q_exact.ncols())));
    }
    let k = kalman_gain(q_exact, obs)?;
    Ensemble::new(u.matrix() + k * (&data.columns - &obs.h * u.matrix()))
}

/// Output of the ETKF analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct EtkfAnalysis {
    pub ensemble: Ensemble,
    /// `X̄ᵃ = X̄ + A wᵃ`
    pub mean: Vector,
    /// `wᵃ`
    pub weights: Vector,
    /// `Q̃ᵃ = ((N-1)I + BᵀR⁻¹B)⁻¹`
    pub qa_tilde: DenseOp,
    /// Symmetric square root `W` of `(N-1) Q̃ᵃ`.
    pub transform: DenseOp,
    /// Forecast deviations `A`.
    pub deviations: DenseOp,
}

impl EtkfAnalysis {
    /// Analysis covariance `A Q̃ᵃ Aᵀ`.
    pub fn analysis_cov(&self) -> DenseOp {
        symmetrize(&(&self.deviations * &self.qa_tilde * self.deviations.transpose()))
    }

    /// Full ensemble transform `T` with `Xᵃ = X T`:
    /// `T = eeᵀ/N + (I - eeᵀ/N)(wᵃeᵀ + W)`.
    pub fn ensemble_transform(&self) -> DenseOp {
        let n = self.transform.nrows();
        let avg = DenseOp::from_element(n, n, 1.0 / n as f64);
        let centering = DenseOp::identity(n, n) - &avg;
        let mut inner = self.transform.clone();
        for mut c in inner.column_iter_mut() {
            c += &self.weights;
        }
        avg + centering * inner
    }
}

/// Ensemble transform Kalman filter analysis with a possibly nonlinear
/// observation function, linearised as `H(X̄ + Aw) ≈ Ȳ + Bw`.
pub fn etkf_analysis(
    x: &Ensemble,
    obs_fn: &dyn Fn(&Vector) -> Vector,
    r: &DenseOp,
    d: &Vector,
) -> Result<EtkfAnalysis> {
    let n = x.size();
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    let r_chol = factor_r(r)?;
    let m = r.nrows();
    if d.len() != m {
        return Err(shape(format!("data of length {m}"), d.len().to_string()));
    }
    let ys: Vec<Vector> = x.matrix().column_iter().map(|c| obs_fn(&c.into_owned())).collect();
    if ys.iter().any(|y| y.len() != m) {
        return Err(shape(format!("observations of length {m}"), "other length"));
    }
    let y = Ensemble::from_members(&ys)?;
    let y_mean = sample_mean(&y);
    let b = y.deviations();
    let a = x.deviations();
    let nm1 = (n - 1) as f64;

    let rinv_b = r_chol.solve(&b);
    let inner = symmetrize(&(DenseOp::identity(n, n) * nm1 + b.transpose() * &rinv_b));
    let eig = inner.try_symmetric_eigen(f64::EPSILON, 1000 * n.max(10)).ok_or(Error::DecompositionFailure)?;
    let v = &eig.eigenvectors;
    let inv_vals = eig.eigenvalues.map(|mu| 1.0 / mu);
    let root_vals = eig.eigenvalues.map(|mu| (nm1 / mu).sqrt());
    let qa_tilde = symmetrize(&(v * DenseOp::from_diagonal(&inv_vals) * v.transpose()));
    let w = symmetrize(&(v * DenseOp::from_diagonal(&root_vals) * v.transpose()));

    let weights = &qa_tilde * (rinv_b.transpose() * (d - &y_mean));
    let mean = sample_mean(x) + &a * &weights;
    let mut xa = &a * &w;
    for mut c in xa.column_iter_mut() {
        c += &mean;
    }
    Ok(EtkfAnalysis { ensemble: Ensemble::new(xa)?, mean, weights, qa_tilde, transform: w, deviations: a })
}

/// Measured residuals of the square-root identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtkfExactness {
    /// Relative gap between the sample mean of `Xᵃ` and `X̄ᵃ`.
    pub mean_error: f64,
    /// Relative gap between the sample covariance of `Xᵃ` and `A Q̃ᵃ Aᵀ`.
    pub cov_error: f64,
    /// `|A W e| / |A|`
    pub deviation_sum: f64,
    /// Largest relative residual of projecting `Xᵃ_i - X̄` onto `Range(A)`.
    pub span_residual: f64,
    /// Relative gap between `Xᵃ` and `X T`.
    pub transform_error: f64,
}

impl EtkfExactness {
    pub fn passes(&self, tol: f64) -> bool {
        self.mean_error < tol
            && self.cov_error < tol
            && self.deviation_sum < tol
            && self.span_residual < tol
            && self.transform_error < tol
    }
}

pub fn etkf_exactness(forecast: &Ensemble, analysis: &EtkfAnalysis) -> Result<EtkfExactness> {
    let xa = &analysis.ensemble;
    let mean_error = rel_diff_vec(&sample_mean(xa), &analysis.mean);
    let cov_error = rel_diff(&sample_cov(xa, Divisor::NMinusOne)?, &analysis.analysis_cov());
    let n = xa.size();
    let a_norm = analysis.deviations.norm();
    let awe = &analysis.deviations * &analysis.transform * Vector::from_element(n, 1.0);
    let deviation_sum = if a_norm > 0.0 { awe.norm() / a_norm } else { awe.norm() };

    let basis = svd_factors(&analysis.deviations).left;
    let x_mean = sample_mean(forecast);
    let span_residual = xa
        .matrix()
        .column_iter()
        .map(|c| {
            let v = c - &x_mean;
            let resid = &v - &basis * (basis.transpose() * &v);
            let scale = v.norm();
            if scale > 0.0 {
                resid.norm() / scale
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let transform_error = rel_diff(xa.matrix(), &(forecast.matrix() * analysis.ensemble_transform()));
    Ok(EtkfExactness { mean_error, cov_error, deviation_sum, span_residual, transform_error })
}

/// `I - Bᵀ(R + BBᵀ/(N-1))⁻¹B/(N-1)`, the SMW form of `(I + BᵀR⁻¹B/(N-1))⁻¹`.
pub fn etkf_smw_inner(b: &DenseOp, r: &DenseOp, n: usize) -> Result<DenseOp> {
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    factor_r(r)?;
    if b.nrows() != r.nrows() {
        return Err(shape(format!("B with {} rows", r.nrows()), b.nrows().to_string()));
    }
    let nm1 = (n - 1) as f64;
    let s = symmetrize(&(r + b * b.transpose() / nm1));
    let chol = Cholesky::new(s).ok_or(Error::SingularR)?;
    let k = b.ncols();
    Ok(symmetrize(&(DenseOp::identity(k, k) - b.transpose() * chol.solve(b) / nm1)))
}

/// Relative gap between [`etkf_smw_inner`] and the direct inverse
/// `(I + BᵀR⁻¹B/(N-1))⁻¹`.
pub fn etkf_inner_discrepancy(b: &DenseOp, r: &DenseOp, n: usize) -> Result<f64> {
    let smw = etkf_smw_inner(b, r, n)?;
    let nm1 = (n - 1) as f64;
    let k = b.ncols();
    let direct = symmetrize(&(DenseOp::identity(k, k) + b.transpose() * factor_r(r)?.solve(b) / nm1));
    let inv = Cholesky::new(direct).ok_or(Error::SingularR)?.inverse();
    Ok(rel_diff(&smw, &inv))
}

/// Both sides of `H(X̄ + Aw) = Ȳ + Bw` for an affine scalar observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarExactness {
    pub lhs: f64,
    pub rhs: f64,
    pub diff: f64,
}

/// Checks the ensemble-space linearisation for `H(x) = h0 + h1ᵀx`, where it
/// is exact.
pub fn scalar_obs_exactness(x: &Ensemble, h0: f64, h1: &Vector, w: &Vector) -> Result<ScalarExactness> {
    if h1.len() != x.state_dim() || w.len() != x.size() {
        return Err(shape(
            format!("h1 of length {} and w of length {}", x.state_dim(), x.size()),
            format!("{} and {}", h1.len(), w.len()),
        ));
    }
    let obs = |v: &Vector| h0 + h1.dot(v);
    let x_mean = sample_mean(x);
    let lhs = obs(&(&x_mean + x.deviations() * w));
    let ys: Vec<f64> = x.matrix().column_iter().map(|c| obs(&c.into_owned())).collect();
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let bw: f64 = ys.iter().zip(w.iter()).map(|(y, wi)| (y - y_mean) * wi).sum();
    let rhs = y_mean + bw;
    Ok(ScalarExactness { lhs, rhs, diff: (lhs - rhs).abs() })
}

/// Weighted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    particles: Vec<Vector>,
    weights: Vec<f64>,
}

impl ParticleSet {
    pub fn new(particles: Vec<Vector>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() || particles.len() != weights.len() {
            return Err(Error::InvalidArgument("need one weight per particle and at least one particle".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { particles, weights })
    }

    pub fn uniform(particles: Vec<Vector>) -> Result<Self> {
        let n = particles.len().max(1);
        Self::new(particles, vec![1.0 / n as f64; n])
    }

    pub fn particles(&self) -> &[Vector] {
        &self.particles
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `1 / Σ w²`
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn weighted_mean(&self) -> Vector {
        self.particles
            .iter()
            .zip(&self.weights)
            .fold(Vector::zeros(self.particles[0].len()), |acc, (p, w)| acc + p * *w)
    }
}

/// Bayes update of the weights by the Gaussian data likelihood
/// `exp(-½ (Hx - d)ᵀ R⁻¹ (Hx - d))`.
pub fn bayes_reweight(p: &ParticleSet, obs: &ObservationModel) -> Result<ParticleSet> {
    let chol = factor_r(&obs.r)?;
    let mut raw = Vec::with_capacity(p.particles.len());
    for (x, w) in p.particles.iter().zip(&p.weights) {
        obs.check_state_dim(x.len())?;
        let resid = &obs.h * x - &obs.d;
        let misfit = resid.dot(&chol.solve(&resid));
        raw.push(w * (-0.5 * misfit).exp());
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllWeightsZero);
    }
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let again: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= again);
    Ok(ParticleSet { particles: p.particles.clone(), weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_obs(h: f64, r: f64, d: f64) -> ObservationModel {
        ObservationModel::new(
            DenseOp::from_element(1, 1, h),
            DenseOp::from_element(1, 1, r),
            Vector::from_element(1, d),
        )
        .unwrap()
    }

    #[test]
    fn osi_scalar_hand_case() {
        let prior = KfState::new(Vector::zeros(1), DenseOp::identity(1, 1)).unwrap();
        let out = osi_analysis(&prior, &scalar_obs(1.0, 1.0, 2.0)).unwrap();
        assert_relative_eq!(out.state.mean[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(out.state.cov[(0, 0)], 0.5, epsilon = 1e-15);
        out.verify().unwrap();
    }

    #[test]
    fn osi_without_information() {
        let prior =
            KfState::new(Vector::from_vec(vec![1.0, 2.0]), DenseOp::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]))
                .unwrap();
        let obs =
            ObservationModel::new(DenseOp::zeros(1, 2), DenseOp::identity(1, 1), Vector::from_element(1, 5.0)).unwrap();
        let out = osi_analysis(&prior, &obs).unwrap();
        assert_eq!(out.state.mean, prior.mean);
        assert_relative_eq!(out.state.cov, prior.cov, epsilon = 1e-15);

        let vague = ObservationModel::new(
            DenseOp::from_row_slice(1, 2, &[1.0, 0.0]),
            DenseOp::from_element(1, 1, 1e8),
            Vector::from_element(1, 5.0),
        )
        .unwrap();
        let out = osi_analysis(&prior, &vague).unwrap();
        assert!((out.state.mean - &prior.mean).norm() < 1e-6);
    }

    #[test]
    fn invalid_r_is_singular() {
        let bad = ObservationModel::new(DenseOp::identity(1, 1), DenseOp::zeros(1, 1), Vector::zeros(1));
        assert!(matches!(bad, Err(Error::SingularR)));
        let asym = DenseOp::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            ObservationModel::new(DenseOp::identity(2, 2), asym, Vector::zeros(2)),
            Err(Error::SingularR)
        ));
    }

    #[test]
    fn forecast_cases() {
        let s = KfState::new(Vector::from_vec(vec![1.0, -1.0]), DenseOp::identity(2, 2)).unwrap();
        assert_eq!(kf_forecast(&s, &LinearModel::identity(2)).unwrap(), s);
        let doubling = LinearModel::new(DenseOp::identity(2, 2) * 2.0, Vector::zeros(2), DenseOp::zeros(2, 2)).unwrap();
        let out = kf_forecast(&s, &doubling).unwrap();
        assert_eq!(out.cov, DenseOp::identity(2, 2) * 4.0);
        assert_eq!(out.mean, Vector::from_vec(vec![2.0, -2.0]));
    }

    #[test]
    fn enkf_two_member_hand_case() {
        // Q_N = 2, K_N = 2/(2+1) = 2/3.
        let x = Ensemble::from_members(&[Vector::from_element(1, 0.0), Vector::from_element(1, 2.0)]).unwrap();
        let obs = scalar_obs(1.0, 1.0, 1.0);
        let data = PerturbedData { columns: DenseOp::from_row_slice(1, 2, &[1.5, -0.5]), seed: None };
        let out = enkf_analysis_checked(&x, &obs, &data).unwrap();
        assert_relative_eq!(out.gain[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(out.ensemble.matrix()[(0, 0)], 0.0 + 2.0 / 3.0 * 1.5, epsilon = 1e-14);
        assert_relative_eq!(out.ensemble.matrix()[(0, 1)], 2.0 + 2.0 / 3.0 * (-2.5), epsilon = 1e-14);
        out.verify().unwrap();
        let fast = enkf_analysis(&x, &obs, &data).unwrap();
        assert_relative_eq!(fast.matrix(), out.ensemble.matrix(), epsilon = 1e-14);
    }

    #[test]
    fn enkf_with_zero_h_is_identity() {
        let x = Ensemble::from_members(&[
            Vector::from_vec(vec![1.0, 2.0]),
            Vector::from_vec(vec![0.0, 1.0]),
            Vector::from_vec(vec![-1.0, 3.0]),
        ])
        .unwrap();
        let obs = ObservationModel::new(DenseOp::zeros(1, 2), DenseOp::identity(1, 1), Vector::zeros(1)).unwrap();
        let mut rng = StreamRng::new(1);
        let data = make_perturbed_data(&obs, 3, &mut rng).unwrap();
        assert_eq!(enkf_analysis(&x, &obs, &data).unwrap(), x);
        let one = Ensemble::from_members(&[Vector::zeros(2)]).unwrap();
        let data1 = make_perturbed_data(&obs, 1, &mut rng).unwrap();
        assert!(matches!(enkf_analysis(&one, &obs, &data1), Err(Error::DegenerateEnsemble(1))));
    }

    #[test]
    fn exact_gain_with_zero_covariance() {
        let u = Ensemble::from_members(&[Vector::from_vec(vec![1.0, 2.0]), Vector::from_vec(vec![3.0, 4.0])]).unwrap();
        let obs = ObservationModel::new(DenseOp::identity(2, 2), DenseOp::identity(2, 2), Vector::zeros(2)).unwrap();
        let data = perturbed_data_streamed(&obs, 2, 5, 0).unwrap();
        assert_eq!(exact_gain_analysis(&u, &obs, &DenseOp::zeros(2, 2), &data).unwrap(), u);
    }

    #[test]
    fn degenerate_data_noise() {
        let obs = ObservationModel::new(
            DenseOp::identity(2, 2),
            DenseOp::identity(2, 2) * 1e-12 * 1.0001,
            Vector::from_vec(vec![1.0, -1.0]),
        )
        .unwrap();
        let mut rng = StreamRng::new(2);
        let data = make_perturbed_data(&obs, 50, &mut rng).unwrap();
        for c in data.columns.column_iter() {
            assert!((c - &obs.d).norm() < 1e-4);
        }
    }

    #[test]
    fn streamed_data_is_nested() {
        let obs = ObservationModel::new(DenseOp::identity(2, 2), DenseOp::identity(2, 2), Vector::zeros(2)).unwrap();
        let small = perturbed_data_streamed(&obs, 4, 9, 1).unwrap();
        let big = perturbed_data_streamed(&obs, 16, 9, 1).unwrap();
        assert_eq!(small.columns, big.columns.columns(0, 4).into_owned());
        let other_cycle = perturbed_data_streamed(&obs, 4, 9, 2).unwrap();
        assert_ne!(small.columns, other_cycle.columns);
    }

    #[test]
    fn etkf_zero_innovation_keeps_mean() {
        let x = Ensemble::from_members(&[
            Vector::from_vec(vec![1.0, 0.0]),
            Vector::from_vec(vec![0.0, 1.0]),
            Vector::from_vec(vec![-1.0, 2.0]),
        ])
        .unwrap();
        let h = DenseOp::from_row_slice(1, 2, &[1.0, 1.0]);
        let obs_fn = |v: &Vector| &h * v;
        let ybar = sample_mean(&x).sum();
        let out = etkf_analysis(&x, &obs_fn, &DenseOp::identity(1, 1), &Vector::from_element(1, ybar)).unwrap();
        assert!(out.weights.norm() < 1e-15);
        assert_relative_eq!(out.mean, sample_mean(&x), epsilon = 1e-14);
        let ex = etkf_exactness(&x, &out).unwrap();
        assert!(ex.passes(1e-10), "{ex:?}");
    }

    #[test]
    fn etkf_uninformative_data() {
        let x = Ensemble::from_members(&[
            Vector::from_vec(vec![1.0, 0.5]),
            Vector::from_vec(vec![0.0, 1.0]),
            Vector::from_vec(vec![-2.0, 2.0]),
            Vector::from_vec(vec![0.3, -1.0]),
        ])
        .unwrap();
        let obs_fn = |v: &Vector| v.clone();
        let out =
            etkf_analysis(&x, &obs_fn, &(DenseOp::identity(2, 2) * 1e8), &Vector::from_vec(vec![3.0, 3.0])).unwrap();
        assert_relative_eq!(out.qa_tilde, DenseOp::identity(4, 4) / 3.0, epsilon = 1e-7);
        assert_relative_eq!(out.transform, DenseOp::identity(4, 4), epsilon = 1e-7);
        assert_relative_eq!(out.ensemble.matrix(), x.matrix(), epsilon = 1e-6);
    }

    #[test]
    fn etkf_rejects_bad_r() {
        let x = Ensemble::from_members(&[Vector::zeros(1), Vector::from_element(1, 1.0)]).unwrap();
        let obs_fn = |v: &Vector| v.clone();
        let asym = DenseOp::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        assert!(matches!(etkf_analysis(&x, &obs_fn, &asym, &Vector::zeros(2)), Err(Error::SingularR)));
    }

    #[test]
    fn smw_inner_with_zero_b() {
        let b = DenseOp::zeros(2, 4);
        let out = etkf_smw_inner(&b, &DenseOp::identity(2, 2), 4).unwrap();
        assert_eq!(out, DenseOp::identity(4, 4));
    }

    #[test]
    fn scalar_exactness_trivial_cases() {
        let x = Ensemble::from_members(&[Vector::from_vec(vec![1.0, 2.0]), Vector::from_vec(vec![0.0, -1.0])]).unwrap();
        let h1 = Vector::from_vec(vec![0.5, 2.0]);
        let r = scalar_obs_exactness(&x, 1.0, &h1, &Vector::zeros(2)).unwrap();
        assert_relative_eq!(r.lhs, r.rhs, epsilon = 1e-15);
        assert_relative_eq!(r.lhs, 1.0 + h1.dot(&sample_mean(&x)), epsilon = 1e-15);
        let r = scalar_obs_exactness(&x, 3.0, &Vector::zeros(2), &Vector::from_vec(vec![0.3, 2.0])).unwrap();
        assert_eq!((r.lhs, r.rhs), (3.0, 3.0));
    }

    #[test]
    fn reweighting() {
        let same = ParticleSet::uniform(vec![Vector::from_element(1, 0.5); 4]).unwrap();
        let obs = scalar_obs(1.0, 1.0, 0.0);
        let out = bayes_reweight(&same, &obs).unwrap();
        for w in out.weights() {
            assert_relative_eq!(*w, 0.25, epsilon = 1e-15);
        }
        assert_relative_eq!(out.effective_sample_size(), 4.0, epsilon = 1e-12);

        // One particle at d: weight ratio e^{½(x₂-d)ᵀR⁻¹(x₂-d)}.
        let d = Vector::from_vec(vec![1.0, 2.0]);
        let x2 = Vector::from_vec(vec![0.0, 3.0]);
        let r = DenseOp::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let obs2 = ObservationModel::new(DenseOp::identity(2, 2), r.clone(), d.clone()).unwrap();
        let p = ParticleSet::uniform(vec![d.clone(), x2.clone()]).unwrap();
        let out = bayes_reweight(&p, &obs2).unwrap();
        let diff = &x2 - &d;
        let misfit = diff.dot(&(r.try_inverse().unwrap() * &diff));
        assert_relative_eq!(out.weights()[0] / out.weights()[1], (0.5 * misfit).exp(), max_relative = 1e-12);

        let far = scalar_obs(1.0, 1.0, 1e6);
        assert!(matches!(bayes_reweight(&same, &far), Err(Error::AllWeightsZero)));
    }

    #[test]
    fn particle_set_validation() {
        assert!(ParticleSet::new(vec![Vector::zeros(1)], vec![0.5]).is_err());
        assert!(ParticleSet::new(vec![Vector::zeros(1); 2], vec![1.5, -0.5]).is_err());
        assert!(ParticleSet::new(vec![], vec![]).is_err());
    }
}
