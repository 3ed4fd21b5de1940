//! Sample moments and Monte Carlo laws of large numbers.
//!
//! Experiments are replicated with one counter-based stream per replicate
//! (`StreamRng::replicate(seed, r)`), so the reports are bit-identical no
//! matter how many threads run the replicates.

use std::io::Write;

use rayon::prelude::*;

use crate::gaussian::{moment_estimate, GaussianSpec, SampleBatch};
use crate::rng::StreamRng;
use crate::spectral_ops::operator_norms;
use crate::{DenseOp, Error, Result, Vector};

/// `N` state vectors of a common dimension, stored as the columns of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DenseOp,
}

impl Ensemble {
    pub fn new(members: DenseOp) -> Result<Self> {
        if members.ncols() == 0 {
            return Err(Error::DegenerateEnsemble(0));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("ensemble has non-finite entries".into()));
        }
        Ok(Self { members })
    }

    pub fn from_members(members: &[Vector]) -> Result<Self> {
        let first = members.first().ok_or(Error::DegenerateEnsemble(0))?;
        if members.iter().any(|m| m.len() != first.len()) {
            return Err(Error::ShapeMismatch {
                expected: format!("members of length {}", first.len()),
                got: "members of mixed length".into(),
            });
        }
        Self::new(DenseOp::from_columns(members))
    }

    /// Number of members `N`.
    pub fn size(&self) -> usize {
        self.members.ncols()
    }
    pub fn state_dim(&self) -> usize {
        self.members.nrows()
    }
    pub fn matrix(&self) -> &DenseOp {
        &self.members
    }
    pub fn into_matrix(self) -> DenseOp {
        self.members
    }
    pub fn member(&self, k: usize) -> Vector {
        self.members.column(k).into_owned()
    }

    /// Deviations from the sample mean, `A = X (I - eeᵀ/N)`.
    pub fn deviations(&self) -> DenseOp {
        let mean = sample_mean(self);
        let mut a = self.members.clone();
        for mut c in a.column_iter_mut() {
            c -= &mean;
        }
        a
    }

    /// One member per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for c in self.members.column_iter() {
            let row: Vec<String> = c.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Normalisation of the sample covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divisor {
    /// `1/N`, the plug-in covariance of the empirical measure.
    N,
    /// `1/(N-1)`, the unbiased estimator used by the filters.
    NMinusOne,
}

/// `(1/N) Σ X_k`
pub fn sample_mean(e: &Ensemble) -> Vector {
    e.members.column_mean()
}

/// `Σ (X_k - X̄)(X_k - X̄)ᵀ / divisor`
pub fn sample_cov(e: &Ensemble, divisor: Divisor) -> Result<DenseOp> {
    let n = e.size();
    let denom = match divisor {
        Divisor::N => n as f64,
        Divisor::NMinusOne => {
            if n < 2 {
                return Err(Error::DegenerateEnsemble(n));
            }
            (n - 1) as f64
        }
    };
    let a = e.deviations();
    let c = &a * a.transpose() / denom;
    Ok((&c + c.transpose()) * 0.5)
}

/// `E_N(X ⊗ X) = (1/N) Σ X_k X_kᵀ`
pub fn second_moment(e: &Ensemble) -> DenseOp {
    &e.members * e.members.transpose() / e.size() as f64
}

/// Measured convergence of an estimator against sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub sizes: Vec<usize>,
    pub errors: Vec<f64>,
    /// Replicate standard error of each entry of `errors`.
    pub std_errors: Vec<f64>,
    /// Theoretical upper bound at each size, where one is explicit.
    pub bounds: Option<Vec<f64>>,
    /// Least-squares slope of `log error` on `log size`, smallest size
    /// excluded. `NaN` if any fitted error is zero.
    pub slope: f64,
    /// `max_n error · √n`
    pub empirical_constant: f64,
}

impl ConvergenceReport {
    pub fn new(sizes: Vec<usize>, errors: Vec<f64>, std_errors: Vec<f64>, bounds: Option<Vec<f64>>) -> Self {
        let slope = fit_loglog_slope(&sizes, &errors);
        let empirical_constant = sizes.iter().zip(&errors).map(|(&n, &e)| e * (n as f64).sqrt()).fold(0.0, f64::max);
        Self { sizes, errors, std_errors, bounds, slope, empirical_constant }
    }

    pub fn slope_within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }

    /// Every error is below its bound plus `k` replicate standard errors.
    pub fn bound_holds(&self, k: f64) -> bool {
        match &self.bounds {
            Some(b) => self.errors.iter().zip(b).zip(&self.std_errors).all(|((e, b), se)| *e <= b + k * se),
            None => true,
        }
    }

    /// Columns `size,error,bound`; slope and constant in a trailing row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "size,error,bound")?;
        for (i, (n, e)) in self.sizes.iter().zip(&self.errors).enumerate() {
            match &self.bounds {
                Some(b) => writeln!(w, "{n},{e:e},{:e}", b[i])?,
                None => writeln!(w, "{n},{e:e},")?,
            }
        }
        writeln!(w, "# slope={} empirical_constant={}", self.slope, self.empirical_constant)?;
        Ok(())
    }
}

/// Least-squares slope of `(log n, log e)` with the smallest size dropped.
pub fn fit_loglog_slope(sizes: &[usize], errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = sizes.iter().zip(errors).skip(1).map(|(&n, &e)| ((n as f64).ln(), e.ln())).collect();
    if pts.len() < 2 || pts.iter().any(|(_, y)| !y.is_finite()) {
        return f64::NAN;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() || sizes[0] == 0 {
        return Err(Error::InvalidArgument("sizes must be a nonempty list of positive counts".into()));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("sizes must be strictly increasing".into()));
    }
    Ok(())
}

/// `(mean_r e_r^p)^{1/p}` for each size, with a delta-method standard error.
pub fn lp_aggregate(per_replicate: &[Vec<f64>], p: f64) -> (Vec<f64>, Vec<f64>) {
    let r = per_replicate.len() as f64;
    let n_sizes = per_replicate.first().map_or(0, Vec::len);
    let mut errors = Vec::with_capacity(n_sizes);
    let mut ses = Vec::with_capacity(n_sizes);
    for s in 0..n_sizes {
        let powered: Vec<f64> = per_replicate.iter().map(|v| v[s].powf(p)).collect();
        let m = powered.iter().sum::<f64>() / r;
        let var = if r > 1.0 { powered.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (r - 1.0) } else { f64::NAN };
        let se_m = (var / r).sqrt();
        let err = m.powf(1.0 / p);
        let se = if m > 0.0 { se_m * m.powf(1.0 / p - 1.0) / p } else { 0.0 };
        errors.push(err);
        ses.push(se);
    }
    (errors, ses)
}

/// `L^p` law of large numbers for the sample mean.
///
/// For each size `n` the error is `(E|E_n(X_k) - E X_1|^p)^{1/p}` estimated
/// over replicates; each replicate uses one nested sequence of draws. For
/// `p = 2` the bound `2‖X_1‖₂/√n` is attached.
pub fn lln_experiment(
    source: &GaussianSpec,
    sizes: &[usize],
    replicates: usize,
    p: f64,
    seed: u64,
) -> Result<ConvergenceReport> {
    validate_sizes(sizes)?;
    if !(p >= 1.0) || replicates == 0 {
        return Err(Error::InvalidArgument(format!("need p ≥ 1 and replicates ≥ 1, got p={p}, R={replicates}")));
    }
    let max_n = *sizes.last().expect("nonempty");
    let per_replicate: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = StreamRng::replicate(seed, r as u64);
            let mut sum = Vector::zeros(source.dim());
            let mut out = Vec::with_capacity(sizes.len());
            let mut next = sizes.iter().peekable();
            for n in 1..=max_n {
                sum += source.draw(&mut rng);
                if next.peek() == Some(&&n) {
                    next.next();
                    out.push((&sum / n as f64 - source.mean()).norm());
                }
            }
            out
        })
        .collect();
    let (errors, std_errors) = lp_aggregate(&per_replicate, p);
    let bounds = (p == 2.0).then(|| {
        let x1 = source.l2_norm();
        sizes.iter().map(|&n| 2.0 * x1 / (n as f64).sqrt()).collect()
    });
    Ok(ConvergenceReport::new(sizes.to_vec(), errors, std_errors, bounds))
}

/// Sample-covariance convergence measured in two norms.
#[derive(Debug, Clone, PartialEq)]
pub struct CovConvergence {
    /// Hilbert-Schmidt (Frobenius) error.
    pub hs: ConvergenceReport,
    /// Operator-norm error.
    pub op: ConvergenceReport,
}

/// `L^p` law of large numbers for the sample covariance (divisor `N`)
/// against the source covariance.
pub fn cov_convergence_experiment(
    source: &GaussianSpec,
    sizes: &[usize],
    replicates: usize,
    p: f64,
    seed: u64,
) -> Result<CovConvergence> {
    validate_sizes(sizes)?;
    if !(p >= 1.0) || replicates == 0 {
        return Err(Error::InvalidArgument(format!("need p ≥ 1 and replicates ≥ 1, got p={p}, R={replicates}")));
    }
    let q = source.cov_matrix();
    let d = source.dim();
    let max_n = *sizes.last().expect("nonempty");
    let per_replicate: Vec<(Vec<f64>, Vec<f64>)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = StreamRng::replicate(seed, r as u64);
            let mut sum = Vector::zeros(d);
            let mut sum2 = DenseOp::zeros(d, d);
            let (mut hs, mut op) = (Vec::new(), Vec::new());
            let mut next = sizes.iter().peekable();
            for n in 1..=max_n {
                let x = source.draw(&mut rng);
                sum += &x;
                sum2.ger(1.0, &x, &x, 1.0);
                if next.peek() == Some(&&n) {
                    next.next();
                    let nf = n as f64;
                    let mean = &sum / nf;
                    let c = &sum2 / nf - &mean * mean.transpose();
                    let diff = c - &q;
                    hs.push(diff.norm());
                    op.push(operator_norms(&diff).op_norm);
                }
            }
            (hs, op)
        })
        .collect();
    let hs_runs: Vec<Vec<f64>> = per_replicate.iter().map(|r| r.0.clone()).collect();
    let op_runs: Vec<Vec<f64>> = per_replicate.iter().map(|r| r.1.clone()).collect();
    let (hs_err, hs_se) = lp_aggregate(&hs_runs, p);
    let (op_err, op_se) = lp_aggregate(&op_runs, p);
    Ok(CovConvergence {
        hs: ConvergenceReport::new(sizes.to_vec(), hs_err, hs_se, None),
        op: ConvergenceReport::new(sizes.to_vec(), op_err, op_se, None),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebyshevCheck {
    /// Fraction of draws with `|X| > θ`.
    pub empirical: f64,
    /// `(‖X‖_p / θ)^p`
    pub bound: f64,
    /// `empirical ≤ bound + 3 √(bound / M)`
    pub holds: bool,
}

/// Generalized Chebyshev inequality `Pr(|X| > θ) ≤ E|X|^p / θ^p` on a batch.
pub fn chebyshev_check(batch: &SampleBatch, theta: f64, p: f64) -> Result<ChebyshevCheck> {
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {theta}")));
    }
    let m = batch.len();
    if m == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let moment = moment_estimate(batch, p)?;
    let bound = (moment / theta).powf(p);
    let empirical = batch.draws.iter().filter(|x| x.norm() > theta).count() as f64 / m as f64;
    let holds = empirical <= bound + 3.0 * (bound / m as f64).sqrt();
    Ok(ChebyshevCheck { empirical, bound, holds })
}

/// Scalar summaries compared across member indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairQuantity {
    X,
    U,
    Difference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairStatistic {
    /// Mean of the coordinates.
    CoordinateMean,
    /// `|Z|² / dim`
    MeanSquare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexComparison {
    pub quantity: PairQuantity,
    pub statistic: PairStatistic,
    /// Replicate mean of the statistic for each member index.
    pub index_means: Vec<f64>,
    pub index_std_errors: Vec<f64>,
    /// `max_k |mean_k - pooled| / se_k`
    pub max_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeabilityReport {
    pub comparisons: Vec<IndexComparison>,
    pub replicates: usize,
    pub members: usize,
    /// Threshold on `max_z` (3 standard errors).
    pub z_limit: f64,
    pub passed: bool,
}

/// Testable consequence of exchangeability of the pairs `[X_k; U_k]`: every
/// member index has the same marginal moments.
///
/// `replicates[r][k]` is the pair for member `k` in independent replicate `r`.
pub fn exchangeability_check(replicates: &[Vec<(Vector, Vector)>]) -> Result<ExchangeabilityReport> {
    let r = replicates.len();
    let n = replicates.first().map_or(0, Vec::len);
    if r < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 replicates, got {r}")));
    }
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    if replicates.iter().any(|rep| rep.len() != n) {
        return Err(Error::InvalidArgument("replicates have different member counts".into()));
    }
    let z_limit = 3.0;
    let mut comparisons = Vec::new();
    for quantity in [PairQuantity::X, PairQuantity::U, PairQuantity::Difference] {
        for statistic in [PairStatistic::CoordinateMean, PairStatistic::MeanSquare] {
            let value = |(x, u): &(Vector, Vector)| {
                let z = match quantity {
                    PairQuantity::X => x.clone(),
                    PairQuantity::U => u.clone(),
                    PairQuantity::Difference => x - u,
                };
                let dim = z.len().max(1) as f64;
                match statistic {
                    PairStatistic::CoordinateMean => z.sum() / dim,
                    PairStatistic::MeanSquare => z.norm_squared() / dim,
                }
            };
            let mut index_means = Vec::with_capacity(n);
            let mut index_std_errors = Vec::with_capacity(n);
            for k in 0..n {
                let vals: Vec<f64> = replicates.iter().map(|rep| value(&rep[k])).collect();
                let m = vals.iter().sum::<f64>() / r as f64;
                let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (r - 1) as f64;
                index_means.push(m);
                index_std_errors.push((var / r as f64).sqrt());
            }
            let pooled = index_means.iter().sum::<f64>() / n as f64;
            let max_z = index_means
                .iter()
                .zip(&index_std_errors)
                .map(|(m, se)| {
                    let gap = (m - pooled).abs();
                    if *se > 0.0 {
                        gap / se
                    } else if gap <= 1e-12 * pooled.abs().max(1.0) {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0, f64::max);
            comparisons.push(IndexComparison { quantity, statistic, index_means, index_std_errors, max_z });
        }
    }
    let passed = comparisons.iter().all(|c| c.max_z <= z_limit);
    Ok(ExchangeabilityReport { comparisons, replicates: r, members: n, z_limit, passed })
}
