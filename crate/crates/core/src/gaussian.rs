//! Gaussian measures at finite truncation.
//!
//! Sign convention for the characteristic functional: the Fourier transform
//! is `μ̂(h) = E e^{-i<h,X>}`, so for `N(a, Q)` the exact value is
//! `e^{-i<a,h> - <Qh,h>/2}`. Both sides of [`char_fn_check`] use this pair.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;

use crate::rng::{standard_normal_vec, StreamRng};
use crate::spectral_ops::{Basis, SpectralOperator};
use crate::{DenseOp, Error, Result, Vector};

/// Dense covariances must be symmetric to this (scaled) tolerance.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues in `[-PSD_CLAMP_TOL, 0)` are clamped to zero.
pub const PSD_CLAMP_TOL: f64 = 1e-12;
/// Whitening discards eigenvalues below this fraction of the largest.
pub const WHITEN_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Dense(DenseOp),
    /// Diagonal on the basis coordinates: the vectors of the measure are
    /// coefficient vectors in the operator's basis.
    Spectral(SpectralOperator),
}

/// `N(a, Q)` together with its eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    mean: Vector,
    covariance: Covariance,
    /// Clamped eigenvalues, descending.
    eigenvalues: Vec<f64>,
    /// Matching orthonormal eigenvectors as columns.
    eigenvectors: DenseOp,
}

fn symmetric_eigen(q: &DenseOp) -> Result<(Vec<f64>, DenseOp)> {
    let n = q.nrows();
    if n == 0 {
        return Ok((Vec::new(), DenseOp::zeros(0, 0)));
    }
    let eig = q.clone().try_symmetric_eigen(f64::EPSILON, 1000 * n.max(10)).ok_or(Error::DecompositionFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DenseOp::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    Ok((values, vectors))
}

/// Symmetric eigendecomposition with the PSD clamp applied; eigenvalues are
/// returned in descending order.
pub fn psd_eigen(q: &DenseOp) -> Result<(Vec<f64>, DenseOp)> {
    if q.nrows() != q.ncols() {
        return Err(Error::ShapeMismatch {
            expected: "square covariance".into(),
            got: format!("{}x{}", q.nrows(), q.ncols()),
        });
    }
    let scale = q.amax().max(1.0);
    if (q - q.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument("covariance is not symmetric".into()));
    }
    let sym = (q + q.transpose()) * 0.5;
    let (mut values, vectors) = symmetric_eigen(&sym)?;
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_CLAMP_TOL * scale {
                return Err(Error::NotPositiveSemidefinite(*v));
            }
            *v = 0.0;
        }
    }
    Ok((values, vectors))
}

impl GaussianSpec {
    pub fn new(mean: Vector, covariance: Covariance) -> Result<Self> {
        let dim = mean.len();
        let (eigenvalues, eigenvectors) = match &covariance {
            Covariance::Dense(q) => {
                if q.nrows() != dim {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{dim}x{dim} covariance"),
                        got: format!("{}x{}", q.nrows(), q.ncols()),
                    });
                }
                psd_eigen(q)?
            }
            Covariance::Spectral(op) => {
                if op.dim() != dim {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{dim} eigenvalues"),
                        got: op.dim().to_string(),
                    });
                }
                if !op.is_psd() {
                    let min = op.eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
                    return Err(Error::NotPositiveSemidefinite(min));
                }
                let mut order: Vec<usize> = (0..dim).collect();
                let ev = op.eigenvalues();
                order.sort_by(|&i, &j| ev[j].total_cmp(&ev[i]));
                let mut vectors = DenseOp::zeros(dim, dim);
                for (c, &i) in order.iter().enumerate() {
                    vectors[(i, c)] = 1.0;
                }
                (order.iter().map(|&i| ev[i]).collect(), vectors)
            }
        };
        Ok(Self { mean, covariance, eigenvalues, eigenvectors })
    }

    /// `N(0, I)` on `R^dim`.
    pub fn standard(dim: usize) -> Self {
        Self::new(Vector::zeros(dim), Covariance::Spectral(SpectralOperator::identity(Basis::Abstract(dim))))
            .expect("identity covariance is valid")
    }

    /// Centered measure with a diagonal covariance.
    pub fn diagonal(variances: Vec<f64>) -> Result<Self> {
        let dim = variances.len();
        Self::new(Vector::zeros(dim), Covariance::Spectral(SpectralOperator::new_psd(Basis::Abstract(dim), variances)?))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
    pub fn mean(&self) -> &Vector {
        &self.mean
    }
    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
    pub fn eigenvectors(&self) -> &DenseOp {
        &self.eigenvectors
    }

    pub fn cov_matrix(&self) -> DenseOp {
        match &self.covariance {
            Covariance::Dense(q) => (q + q.transpose()) * 0.5,
            Covariance::Spectral(op) => op.to_dense(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `‖X‖₂ = (E|X|²)^{1/2} = (|a|² + Tr Q)^{1/2}`
    pub fn l2_norm(&self) -> f64 {
        (self.mean.norm_squared() + self.trace()).sqrt()
    }

    /// Draw `a + Σ λ_n^{1/2} ξ_n u_n`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let xi = standard_normal_vec(rng, self.dim());
        let scaled =
            Vector::from_iterator(self.dim(), self.eigenvalues.iter().zip(xi.iter()).map(|(l, x)| l.sqrt() * x));
        &self.mean + &self.eigenvectors * scaled
    }
}

/// Draws from one [`GaussianSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub draws: Vec<Vector>,
    pub spec: GaussianSpec,
    pub seed: Option<u64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.draws.len()
    }
    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Seed line first, then one draw per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        match self.seed {
            Some(s) => writeln!(w, "# seed={s}")?,
            None => writeln!(w, "# seed=unrecorded")?,
        }
        for x in &self.draws {
            let row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `count` independent draws of `N(a, Q)`.
pub fn sample<R: Rng + ?Sized>(spec: &GaussianSpec, count: usize, rng: &mut R) -> SampleBatch {
    SampleBatch { draws: (0..count).map(|_| spec.draw(rng)).collect(), spec: spec.clone(), seed: None }
}

/// [`sample`] from a fresh counter-based stream; the seed is recorded.
pub fn sample_seeded(spec: &GaussianSpec, count: usize, seed: u64) -> SampleBatch {
    let mut rng = StreamRng::new(seed);
    let mut batch = sample(spec, count, &mut rng);
    batch.seed = Some(seed);
    batch
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharFnCheck {
    pub empirical: Complex64,
    pub exact: Complex64,
    pub abs_error: f64,
}

/// Empirical against exact characteristic functional at `h`.
pub fn char_fn_check(batch: &SampleBatch, h: &Vector) -> Result<CharFnCheck> {
    if h.len() != batch.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("h of length {}", batch.dim()),
            got: h.len().to_string(),
        });
    }
    let n = batch.len().max(1) as f64;
    let sum = batch.draws.iter().fold(Complex64::new(0.0, 0.0), |acc, x| acc + Complex64::from_polar(1.0, -h.dot(x)));
    let empirical = sum / n;
    let q = batch.spec.cov_matrix();
    let quad = h.dot(&(&q * h));
    let exact = Complex64::from_polar((-0.5 * quad).exp(), -batch.spec.mean.dot(h));
    Ok(CharFnCheck { empirical, exact, abs_error: (empirical - exact).norm() })
}

/// Numerical rank of a PSD spectrum sorted descending.
fn numerical_rank(eigenvalues: &[f64]) -> usize {
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    eigenvalues.iter().take_while(|&&l| l > WHITEN_REL_TOL * top).count()
}

/// `T = Σ_{n ≤ K} λ_n^{-1/2} u_n u_nᵀ`; never divides by discarded eigenvalues.
fn whitening_operator(q: &DenseOp, truncation: usize) -> Result<DenseOp> {
    let (values, vectors) = psd_eigen(q)?;
    let rank = numerical_rank(&values);
    if truncation > rank {
        return Err(Error::RankDeficient { requested: truncation, rank });
    }
    let n = q.nrows();
    let mut t = DenseOp::zeros(n, n);
    for (i, l) in values.iter().take(truncation).enumerate() {
        let u = vectors.column(i);
        t += (u * u.transpose()) / l.sqrt();
    }
    Ok(t)
}

/// Projects each draw on the top-`truncation` eigenvectors of `q` and scales
/// coordinate `n` by `λ_n^{-1/2}`. Output vectors stay in the ambient
/// coordinates; on the retained subspace their covariance is the identity.
pub fn whiten(batch: &SampleBatch, q: &DenseOp, truncation: usize) -> Result<SampleBatch> {
    if q.nrows() != batch.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{0}x{0} covariance", batch.dim()),
            got: format!("{}x{}", q.nrows(), q.ncols()),
        });
    }
    let t = whitening_operator(q, truncation)?;
    let draws = batch.draws.iter().map(|x| &t * x).collect();
    let mean = &t * batch.spec.mean();
    let cov = &t * batch.spec.cov_matrix() * t.transpose();
    let spec = GaussianSpec::new(mean, Covariance::Dense((&cov + cov.transpose()) * 0.5))?;
    Ok(SampleBatch { draws, spec, seed: batch.seed })
}

/// Finite-truncation white-noise pairing `<z, F> = Σ_{n ≤ K} λ_n^{-1/2} z_n <u_n, x - a>`.
///
/// For `x ~ N(a, Q)` this is `N(0, Σ_{n≤K} z_n²)`: the map `z -> <z, F>` is an
/// isometry into `L²`, while `F` itself has `E|F|² = K`.
pub fn white_noise_pairing(spec: &GaussianSpec, z: &Vector, x: &Vector, truncation: usize) -> Result<f64> {
    let rank = numerical_rank(spec.eigenvalues());
    if truncation > rank {
        return Err(Error::RankDeficient { requested: truncation, rank });
    }
    if z.len() < truncation || x.len() != spec.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("z with ≥ {truncation} entries, x of length {}", spec.dim()),
            got: format!("z {}, x {}", z.len(), x.len()),
        });
    }
    let centred = x - spec.mean();
    Ok((0..truncation).map(|n| z[n] * spec.eigenvectors().column(n).dot(&centred) / spec.eigenvalues()[n].sqrt()).sum())
}

/// Mean squared norm of `draws_per_dim` standard normal vectors in each
/// dimension: the truncated trace of the identity, which grows without bound.
pub fn white_noise_growth<R: Rng + ?Sized>(
    dims: &[usize],
    draws_per_dim: usize,
    rng: &mut R,
) -> Result<Vec<(usize, f64)>> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("dimension list is empty".into()));
    }
    let m = draws_per_dim.max(1);
    Ok(dims
        .iter()
        .map(|&d| {
            let total: f64 = (0..m).map(|_| standard_normal_vec(rng, d).norm_squared()).sum();
            (d, total / m as f64)
        })
        .collect())
}

/// `(mean ‖X‖^p)^{1/p}` over the batch.
pub fn moment_estimate(batch: &SampleBatch, p: f64) -> Result<f64> {
    moment_of_norms(batch.draws.iter().map(|x| x.norm()), p)
}

/// `(mean v^p)^{1/p}` of nonnegative values.
pub fn moment_of_norms(values: impl Iterator<Item = f64>, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("moment order must be ≥ 1, got {p}")));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v.powf(p);
        count += 1;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok((sum / count as f64).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn batch_variance(b: &SampleBatch, coord: usize) -> f64 {
        let n = b.len() as f64;
        let mean = b.draws.iter().map(|x| x[coord]).sum::<f64>() / n;
        b.draws.iter().map(|x| (x[coord] - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn zero_covariance_gives_the_mean() {
        let a = Vector::from_vec(vec![1.0, -2.0]);
        let spec = GaussianSpec::new(a.clone(), Covariance::Dense(DenseOp::zeros(2, 2))).unwrap();
        let b = sample_seeded(&spec, 10, 1);
        assert!(b.draws.iter().all(|x| *x == a));
    }

    #[test]
    fn scalar_variance() {
        let spec = GaussianSpec::diagonal(vec![4.0]).unwrap();
        let n = 10_000;
        let b = sample_seeded(&spec, n, 2);
        let v = batch_variance(&b, 0);
        // SE of the sample variance of a normal is σ² √(2/(n-1)).
        let se = 4.0 * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((v - 4.0).abs() < 3.0 * se, "variance {v}");
    }

    #[test]
    fn dense_covariance_is_reproduced() {
        let q = DenseOp::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.3, 0.0, 0.3, 0.5]);
        let spec = GaussianSpec::new(Vector::from_vec(vec![1.0, 0.0, -1.0]), Covariance::Dense(q.clone())).unwrap();
        let b = sample_seeded(&spec, 100_000, 3);
        let n = b.len() as f64;
        let mean = b.draws.iter().fold(Vector::zeros(3), |acc, x| acc + x) / n;
        let mut c = DenseOp::zeros(3, 3);
        for x in &b.draws {
            let d = x - &mean;
            c += &d * d.transpose();
        }
        c /= n - 1.0;
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[(i, j)] - q[(i, j)]).abs() < 0.05 * q[(i, i)].max(q[(j, j)]), "{i},{j}");
            }
        }
    }

    #[test]
    fn invalid_covariances() {
        let asym = DenseOp::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GaussianSpec::new(Vector::zeros(2), Covariance::Dense(asym)).is_err());
        let neg = DenseOp::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(
            GaussianSpec::new(Vector::zeros(2), Covariance::Dense(neg)),
            Err(Error::NotPositiveSemidefinite(_))
        ));
        let tiny = DenseOp::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-14]);
        let spec = GaussianSpec::new(Vector::zeros(2), Covariance::Dense(tiny)).unwrap();
        assert_eq!(spec.eigenvalues()[1], 0.0);
    }

    #[test]
    fn char_fn_at_zero_and_unit() {
        let spec = GaussianSpec::standard(1);
        let b = sample_seeded(&spec, 1000, 4);
        let c0 = char_fn_check(&b, &Vector::zeros(1)).unwrap();
        assert_relative_eq!(c0.empirical.re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(c0.exact.re, 1.0, epsilon = 1e-15);
        let c1 = char_fn_check(&b, &Vector::from_vec(vec![1.0])).unwrap();
        assert_relative_eq!(c1.exact.re, (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(c1.exact.im, 0.0, epsilon = 1e-15);
        assert!(char_fn_check(&b, &Vector::zeros(2)).is_err());
    }

    #[test]
    fn char_fn_with_mean_uses_matching_sign() {
        let spec = GaussianSpec::new(Vector::from_vec(vec![0.7]), Covariance::Dense(DenseOp::from_element(1, 1, 0.25)))
            .unwrap();
        let n = 40_000;
        let b = sample_seeded(&spec, n, 5);
        let c = char_fn_check(&b, &Vector::from_vec(vec![1.3])).unwrap();
        assert!(c.abs_error <= 5.0 / (n as f64).sqrt());
        assert!(c.exact.im < 0.0);
    }

    #[test]
    fn whitening_identity_is_projection() {
        let spec = GaussianSpec::standard(3);
        let b = sample_seeded(&spec, 20, 6);
        let w = whiten(&b, &DenseOp::identity(3, 3), 3).unwrap();
        for (x, y) in b.draws.iter().zip(&w.draws) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn whitening_diagonal() {
        let q = DenseOp::from_diagonal(&Vector::from_vec(vec![4.0, 1.0]));
        let spec = GaussianSpec::new(Vector::zeros(2), Covariance::Dense(q.clone())).unwrap();
        let b = sample_seeded(&spec, 100_000, 7);
        let w = whiten(&b, &q, 2).unwrap();
        for c in 0..2 {
            assert!((batch_variance(&w, c) - 1.0).abs() < 0.05);
        }
        let w1 = whiten(&b, &q, 1).unwrap();
        assert!((batch_variance(&w1, 0) - 1.0).abs() < 0.05);
        assert!(batch_variance(&w1, 1) < 1e-20);
    }

    #[test]
    fn whitening_beyond_rank_fails() {
        let q = DenseOp::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        let spec = GaussianSpec::new(Vector::zeros(2), Covariance::Dense(q.clone())).unwrap();
        let b = sample_seeded(&spec, 5, 8);
        assert!(matches!(whiten(&b, &q, 2), Err(Error::RankDeficient { requested: 2, rank: 1 })));
        assert!(whiten(&b, &q, 1).is_ok());
    }

    #[test]
    fn white_noise_pairing_is_isometric() {
        let spec = GaussianSpec::diagonal(vec![9.0, 1.0, 0.01]).unwrap();
        let z = Vector::from_vec(vec![0.6, 0.0, 0.8]);
        let mut rng = StreamRng::new(9);
        let n = 20_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = spec.draw(&mut rng);
            sq += white_noise_pairing(&spec, &z, &x, 3).unwrap().powi(2);
        }
        assert!((sq / n as f64 - 1.0).abs() < 0.05);
    }

    #[test]
    fn white_noise_growth_small_dims() {
        let mut rng = StreamRng::new(10);
        let g = white_noise_growth(&[1, 100], 10_000, &mut rng).unwrap();
        assert!((g[0].1 - 1.0).abs() < 0.05);
        assert!((g[1].1 - 100.0).abs() < 5.0);
        assert!(white_noise_growth(&[], 10, &mut rng).is_err());
    }

    #[test]
    fn moments() {
        let c = Vector::from_vec(vec![3.0, 4.0]);
        let spec = GaussianSpec::new(c.clone(), Covariance::Dense(DenseOp::zeros(2, 2))).unwrap();
        let b = sample_seeded(&spec, 7, 11);
        for p in [1.0, 2.0, 3.5] {
            assert_relative_eq!(moment_estimate(&b, p).unwrap(), 5.0, epsilon = 1e-12);
        }
        assert!(moment_estimate(&b, 0.5).is_err());

        let b = sample_seeded(&GaussianSpec::standard(4), 50_000, 12);
        let m2 = moment_estimate(&b, 2.0).unwrap();
        assert!((m2 - 2.0).abs() < 0.02);
        assert!(moment_estimate(&b, 1.0).unwrap() <= m2);
    }

    #[test]
    fn coordinate_functionals_shrink_with_eigenvalues() {
        // |v_n|_{L²(μ)} = λ_n^{1/2} while |v_n|_{H'} = 1.
        let lambdas: Vec<f64> = (1..=6).map(|n| 1.0 / (n * n) as f64).collect();
        let spec = GaussianSpec::diagonal(lambdas.clone()).unwrap();
        let b = sample_seeded(&spec, 40_000, 13);
        for (n, l) in lambdas.iter().enumerate() {
            let norm = moment_of_norms(b.draws.iter().map(|x| x[n].abs()), 2.0).unwrap();
            assert!((norm / l.sqrt() - 1.0).abs() < 0.03, "n = {n}");
        }
    }

    #[test]
    fn csv_has_seed_line() {
        let b = sample_seeded(&GaussianSpec::standard(2), 3, 99);
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed=99");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(',').count(), 2);
    }
}
