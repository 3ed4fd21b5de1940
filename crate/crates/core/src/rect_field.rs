//! Random fields on the rectangle `(0,a) x (0,b)` with Dirichlet boundary.
//!
//! Covariances are functions of the Laplacian and therefore diagonal in the
//! sine eigenbasis. On the `m x n` interior grid the discrete modes
//!
//! ```text
//! φ_kl(i, j) = 2/√(ab) · sin(ikπ/(m+1)) · sin(jlπ/(n+1))
//! ```
//!
//! are orthonormal for the quadrature inner product `h_x h_y Σ f g`, so the
//! forward and inverse transforms below are exact inverses and Parseval holds
//! on the grid.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::spectral_ops::{Basis, SpectralOperator};
use crate::{Error, Result};

/// Rectangle `(0,a) x (0,b)` with an `m x n` grid of interior nodes
/// `(i h_x, j h_y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectDomain {
    a: f64,
    b: f64,
    m: usize,
    n: usize,
}

impl RectDomain {
    pub fn new(a: f64, b: f64, m: usize, n: usize) -> Result<Self> {
        if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidArgument(format!("side lengths must be positive, got a={a}, b={b}")));
        }
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!("grid must be nonempty, got {m}x{n}")));
        }
        Ok(Self { a, b, m, n })
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn hx(&self) -> f64 {
        self.a / (self.m + 1) as f64
    }
    pub fn hy(&self) -> f64 {
        self.b / (self.n + 1) as f64
    }
    /// Quadrature weight of one grid node.
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }
    pub fn len(&self) -> usize {
        self.m * self.n
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn basis(&self) -> Basis {
        Basis::Sine { m: self.m, n: self.n }
    }
    /// `∫∫ sin²(kπx/a) sin²(lπy/b)`, the normalisation constant of the
    /// unnormalised sine modes.
    pub fn unnormalised_mode_mass(&self) -> f64 {
        self.a * self.b / 4.0
    }
}

/// Which Laplacian eigenvalues a covariance law is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenSource {
    /// `(kπ/a)² + (lπ/b)²`.
    Continuous,
    /// Five-point finite-difference eigenvalues on the grid.
    Discrete,
}

/// One-dimensional eigenvalue laws indexed by position `p = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceRule {
    /// `λ_p = 1`
    Constant,
    /// `λ_p = 1/p`
    Inverse,
    /// `λ_p = 1/p²`
    InverseSquare,
}

impl SequenceRule {
    pub fn eigenvalue(&self, p: usize) -> f64 {
        let p = p as f64;
        match self {
            SequenceRule::Constant => 1.0,
            SequenceRule::Inverse => 1.0 / p,
            SequenceRule::InverseSquare => 1.0 / (p * p),
        }
    }

    pub fn is_summable(&self) -> bool {
        matches!(self, SequenceRule::InverseSquare)
    }

    pub fn tag(&self) -> &'static str {
        match self {
            SequenceRule::Constant => "const",
            SequenceRule::Inverse => "inv",
            SequenceRule::InverseSquare => "inv_sq",
        }
    }
}

impl FromStr for SequenceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "const" => Ok(SequenceRule::Constant),
            "inv" => Ok(SequenceRule::Inverse),
            "inv_sq" => Ok(SequenceRule::InverseSquare),
            other => Err(Error::Config(format!("unknown eigenvalue sequence `{other}`"))),
        }
    }
}

/// Covariance built as a function of the Dirichlet Laplacian, or a prescribed
/// eigenvalue sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceLaw {
    /// `(-Δ)^{-α}`
    InversePower(f64),
    /// Heat kernel `e^{-TΛ}` with `Λ` the eigenvalues of `-Δ`.
    HeatKernel(f64),
    EigenvalueSequence(SequenceRule),
}

impl CovarianceLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            CovarianceLaw::InversePower(alpha) if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::InvalidArgument(format!("inverse power needs α > 0, got {alpha}")))
            }
            CovarianceLaw::HeatKernel(t) if !(t >= 0.0 && t.is_finite()) => {
                Err(Error::InvalidArgument(format!("heat kernel needs T ≥ 0, got {t}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether `Σ λ < ∞` for the infinite-dimensional law.
    pub fn has_finite_trace(&self) -> bool {
        match *self {
            CovarianceLaw::InversePower(alpha) => alpha > 1.0,
            CovarianceLaw::HeatKernel(t) => t > 0.0,
            CovarianceLaw::EigenvalueSequence(rule) => rule.is_summable(),
        }
    }
}

impl fmt::Display for CovarianceLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovarianceLaw::InversePower(alpha) => write!(f, "inverse_power:{alpha}"),
            CovarianceLaw::HeatKernel(t) => write!(f, "heat_kernel:{t}"),
            CovarianceLaw::EigenvalueSequence(rule) => write!(f, "seq:{}", rule.tag()),
        }
    }
}

impl FromStr for CovarianceLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("covariance law `{s}` is not of the form kind:value")))?;
        let number = |v: &str| {
            v.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number `{v}` in covariance law `{s}`")))
        };
        let law = match kind.trim() {
            "inverse_power" => CovarianceLaw::InversePower(number(arg)?),
            "heat_kernel" => CovarianceLaw::HeatKernel(number(arg)?),
            "seq" => CovarianceLaw::EigenvalueSequence(arg.parse()?),
            other => return Err(Error::Config(format!("unknown covariance law `{other}`"))),
        };
        law.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(law)
    }
}

/// Real values at the interior nodes, row-major: `values[(i-1)*n + (j-1)]`
/// belongs to node `(i h_x, j h_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    domain: RectDomain,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(domain: RectDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(shape_error(domain, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid field has non-finite entries".into()));
        }
        Ok(Self { domain, values })
    }

    pub fn zeros(domain: RectDomain) -> Self {
        Self { domain, values: vec![0.0; domain.len()] }
    }

    /// Node function `f(x, y)` sampled on the grid.
    pub fn from_fn(domain: RectDomain, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (hx, hy) = (domain.hx(), domain.hy());
        let mut values = Vec::with_capacity(domain.len());
        for i in 1..=domain.m {
            for j in 1..=domain.n {
                values.push(f(i as f64 * hx, j as f64 * hy));
            }
        }
        Self::new(domain, values)
    }

    pub fn domain(&self) -> RectDomain {
        self.domain
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at 1-based node `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[(i - 1) * self.domain.n + (j - 1)]
    }

    /// `h_x h_y Σ f g`
    pub fn inner(&self, other: &GridField) -> f64 {
        self.domain.cell_area() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j,value")?;
        for i in 1..=self.domain.m {
            for j in 1..=self.domain.n {
                writeln!(w, "{},{},{:e}", i, j, self.at(i, j))?;
            }
        }
        Ok(())
    }

    /// Reads the `i,j,value` layout written by [`GridField::write_csv`].
    pub fn read_csv<R: BufRead>(domain: RectDomain, r: R) -> Result<Self> {
        let mut values = vec![f64::NAN; domain.len()];
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "i,j,value" => {}
            _ => return Err(Error::InvalidArgument("missing `i,j,value` header".into())),
        }
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let parsed = (|| {
                if parts.len() != 3 {
                    return None;
                }
                Some((
                    parts[0].trim().parse::<usize>().ok()?,
                    parts[1].trim().parse::<usize>().ok()?,
                    parts[2].trim().parse::<f64>().ok()?,
                ))
            })();
            let (i, j, v) = parsed.ok_or_else(|| Error::InvalidArgument(format!("bad csv row `{line}`")))?;
            if i == 0 || j == 0 || i > domain.m || j > domain.n {
                return Err(Error::IndexOutOfRange { k: i, l: j, m: domain.m, n: domain.n });
            }
            values[(i - 1) * domain.n + (j - 1)] = v;
        }
        Self::new(domain, values)
    }
}

fn shape_error(domain: RectDomain, got: usize) -> Error {
    Error::ShapeMismatch {
        expected: format!("{}x{} = {} values", domain.m, domain.n, domain.len()),
        got: got.to_string(),
    }
}

/// `(kπ/a)² + (lπ/b)²`
pub fn continuous_eigenvalue(k: usize, l: usize, dom: &RectDomain) -> f64 {
    let kx = k as f64 * std::f64::consts::PI / dom.a;
    let ly = l as f64 * std::f64::consts::PI / dom.b;
    kx * kx + ly * ly
}

/// Eigenvalue of the five-point Laplacian for mode `(k, l)`.
pub fn discrete_eigenvalue(k: usize, l: usize, dom: &RectDomain) -> Result<f64> {
    if k == 0 || l == 0 || k > dom.m || l > dom.n {
        return Err(Error::IndexOutOfRange { k, l, m: dom.m, n: dom.n });
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let sx = (half_pi * k as f64 / (dom.m + 1) as f64).sin() / dom.hx();
    let sy = (half_pi * l as f64 / (dom.n + 1) as f64).sin() / dom.hy();
    Ok(4.0 * sx * sx + 4.0 * sy * sy)
}

/// Orthonormal grid mode `φ_kl`.
pub fn sine_mode(k: usize, l: usize, dom: &RectDomain) -> Result<GridField> {
    if k == 0 || l == 0 || k > dom.m || l > dom.n {
        return Err(Error::IndexOutOfRange { k, l, m: dom.m, n: dom.n });
    }
    let scale = 2.0 / (dom.a * dom.b).sqrt();
    let pi = std::f64::consts::PI;
    let mut values = Vec::with_capacity(dom.len());
    for i in 1..=dom.m {
        let sx = (pi * (i * k) as f64 / (dom.m + 1) as f64).sin();
        for j in 1..=dom.n {
            let sy = (pi * (j * l) as f64 / (dom.n + 1) as f64).sin();
            values.push(scale * sx * sy);
        }
    }
    GridField::new(*dom, values)
}

/// Unnormalised DST-I, `y_k = Σ_{j=1}^{len} x_j sin(π j k / (len+1))`,
/// through an FFT of the odd extension of length `2(len+1)`.
struct Dst1 {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Dst1 {
    fn new(planner: &mut FftPlanner<f64>, len: usize) -> Self {
        Self { len, fft: planner.plan_fft_forward(2 * (len + 1)) }
    }

    fn apply(&self, data: &mut [f64], buf: &mut Vec<Complex64>) {
        let n = self.len;
        let total = 2 * (n + 1);
        buf.clear();
        buf.resize(total, Complex64::new(0.0, 0.0));
        for j in 0..n {
            buf[j + 1].re = data[j];
            buf[total - 1 - j].re = -data[j];
        }
        self.fft.process(buf);
        for k in 0..n {
            data[k] = -0.5 * buf[k + 1].im;
        }
    }
}

/// Raw 2-D DST-I of a row-major `m x n` array, in place.
fn dst2_raw(values: &mut [f64], m: usize, n: usize) {
    let mut planner = FftPlanner::new();
    let rows = Dst1::new(&mut planner, n);
    let cols = Dst1::new(&mut planner, m);
    let mut buf = Vec::new();
    for row in values.chunks_mut(n) {
        rows.apply(row, &mut buf);
    }
    let mut column = vec![0.0; m];
    for j in 0..n {
        for i in 0..m {
            column[i] = values[i * n + j];
        }
        cols.apply(&mut column, &mut buf);
        for i in 0..m {
            values[i * n + j] = column[i];
        }
    }
}

/// Coefficients `c_kl = <field, φ_kl>` in the orthonormal sine basis, laid
/// out like the field (`(k-1)*n + (l-1)`).
pub fn dst2_forward(field: &GridField) -> Vec<f64> {
    let dom = field.domain;
    let mut c = field.values.clone();
    dst2_raw(&mut c, dom.m, dom.n);
    let scale = dom.cell_area() * 2.0 / (dom.a * dom.b).sqrt();
    c.iter_mut().for_each(|v| *v *= scale);
    c
}

/// `Σ c_kl φ_kl`
pub fn dst2_inverse(coefficients: &[f64], dom: &RectDomain) -> Result<GridField> {
    if coefficients.len() != dom.len() {
        return Err(shape_error(*dom, coefficients.len()));
    }
    let mut v = coefficients.to_vec();
    dst2_raw(&mut v, dom.m, dom.n);
    let scale = 2.0 / (dom.a * dom.b).sqrt();
    v.iter_mut().for_each(|x| *x *= scale);
    GridField::new(*dom, v)
}

/// Mode pairs `(k, l)` in diagonal order: `k + l` ascending, then `k`.
pub fn diagonal_order(m: usize, n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(m * n);
    for s in 2..=(m + n) {
        let k_lo = s.saturating_sub(n).max(1);
        let k_hi = (s - 1).min(m);
        for k in k_lo..=k_hi {
            out.push((k, s - k));
        }
    }
    out
}

/// Covariance eigenvalues on the sine basis of `dom`.
///
/// Laplacian laws use the eigenvalues selected by `source`; sequence laws
/// assign `rule(p)` to the `p`-th mode in [`diagonal_order`].
pub fn covariance_eigs(law: CovarianceLaw, dom: &RectDomain, source: EigenSource) -> Result<SpectralOperator> {
    law.validate()?;
    let (m, n) = (dom.m, dom.n);
    let mut eig = vec![0.0; m * n];
    match law {
        CovarianceLaw::EigenvalueSequence(rule) => {
            for (p, (k, l)) in diagonal_order(m, n).into_iter().enumerate() {
                eig[(k - 1) * n + (l - 1)] = rule.eigenvalue(p + 1);
            }
        }
        CovarianceLaw::InversePower(_) | CovarianceLaw::HeatKernel(_) => {
            for k in 1..=m {
                for l in 1..=n {
                    let lambda = match source {
                        EigenSource::Continuous => continuous_eigenvalue(k, l, dom),
                        EigenSource::Discrete => discrete_eigenvalue(k, l, dom)?,
                    };
                    eig[(k - 1) * n + (l - 1)] = match law {
                        CovarianceLaw::InversePower(alpha) => lambda.powf(-alpha),
                        CovarianceLaw::HeatKernel(t) => (-t * lambda).exp(),
                        CovarianceLaw::EigenvalueSequence(_) => unreachable!(),
                    };
                }
            }
        }
    }
    SpectralOperator::new_psd(dom.basis(), eig)
}

fn check_sine_basis(cov: &SpectralOperator, dom: &RectDomain) -> Result<()> {
    if cov.basis() != dom.basis() {
        return Err(Error::ShapeMismatch { expected: format!("{:?}", dom.basis()), got: format!("{:?}", cov.basis()) });
    }
    Ok(())
}

/// Karhunen-Loeve coefficients `λ_kl^{1/2} ξ_kl` with `ξ_kl ~ N(0,1)` i.i.d.
pub fn sample_coefficients<R: Rng + ?Sized>(cov: &SpectralOperator, rng: &mut R) -> Result<Vec<f64>> {
    if !cov.is_psd() {
        let min = cov.eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::NotPositiveSemidefinite(min));
    }
    let xi = crate::rng::standard_normal_vec(rng, cov.dim());
    Ok(cov.eigenvalues().iter().zip(xi.iter()).map(|(l, x)| l.sqrt() * x).collect())
}

/// One draw of the Gaussian random field with covariance `cov`.
pub fn sample_field<R: Rng + ?Sized>(cov: &SpectralOperator, dom: &RectDomain, rng: &mut R) -> Result<GridField> {
    check_sine_basis(cov, dom)?;
    let c = sample_coefficients(cov, rng)?;
    dst2_inverse(&c, dom)
}

/// `C w` for a covariance diagonal in the sine basis.
pub fn apply_covariance(cov: &SpectralOperator, w: &GridField) -> Result<GridField> {
    check_sine_basis(cov, &w.domain)?;
    let mut c = dst2_forward(w);
    c.iter_mut().zip(cov.eigenvalues()).for_each(|(v, l)| *v *= l);
    dst2_inverse(&c, &w.domain)
}

/// Analytic verdict on a series of eigenvalues (or Sobolev energies).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Converges,
    Diverges,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Converges => "converges",
            Verdict::Diverges => "diverges",
        })
    }
}

/// Partial sums of a mode series over growing truncations.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesReport {
    /// Number of modes in each truncation.
    pub truncations: Vec<usize>,
    pub partial_sums: Vec<f64>,
    /// Rigorous upper bound on the remainder after each truncation, when the
    /// series converges.
    pub tail_bounds: Option<Vec<f64>>,
    pub verdict: Verdict,
    /// Whether the partial sums behave as the verdict predicts: for
    /// convergent series every gap to the last partial sum is within the tail
    /// bound, for divergent series the sums keep growing.
    pub numeric_consistent: bool,
}

impl SeriesReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "modes,partial_sum,tail_bound")?;
        for (i, (k, s)) in self.truncations.iter().zip(&self.partial_sums).enumerate() {
            match &self.tail_bounds {
                Some(t) => writeln!(w, "{k},{s:e},{:e}", t[i])?,
                None => writeln!(w, "{k},{s:e},")?,
            }
        }
        writeln!(w, "# verdict={} numeric_consistent={}", self.verdict, self.numeric_consistent)?;
        Ok(())
    }
}

/// Square sides `2, 4, 8, ...` up to `floor(√K)`, always ending at `floor(√K)`.
fn truncation_sides(k_modes: usize) -> Result<Vec<usize>> {
    if k_modes < 2 {
        return Err(Error::InvalidArgument(format!("truncation must be at least 2 modes, got {k_modes}")));
    }
    let q_max = (k_modes as f64).sqrt().floor() as usize;
    let mut sides = Vec::new();
    let mut q = 1;
    while q < q_max {
        sides.push(q);
        q *= 2;
    }
    sides.push(q_max);
    Ok(sides)
}

/// Smallest value of `(π/a)² k² + (π/b)² l²` per unit `k² + l²`.
fn eigen_floor(dom: &RectDomain) -> f64 {
    let pi2 = std::f64::consts::PI.powi(2);
    pi2 * (1.0 / (dom.a * dom.a)).min(1.0 / (dom.b * dom.b))
}

/// `Σ_{k,l ≤ q} term(k, l)` for each side `q`.
fn square_partial_sums(sides: &[usize], term: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(sides.len());
    let mut acc = 0.0;
    let mut prev = 0;
    for &q in sides {
        // Add the L-shaped shell between squares of side `prev` and `q`.
        for k in 1..=q {
            let l_start = if k <= prev { prev + 1 } else { 1 };
            for l in l_start..=q {
                acc += term(k, l);
            }
        }
        out.push(acc);
        prev = q;
    }
    out
}

fn judge(partial: &[f64], tails: Option<&[f64]>) -> bool {
    let last = *partial.last().expect("nonempty");
    match tails {
        Some(t) => partial.iter().zip(t).all(|(s, bound)| last - s <= bound + 1e-12 * last.abs()),
        None => {
            let increasing = partial.windows(2).all(|w| w[1] > w[0]);
            let n = partial.len();
            increasing && n >= 2 && (partial[n - 1] - partial[n - 2]) > 1e-6 * partial[n - 1].abs()
        }
    }
}

/// Partial sums of the covariance eigenvalues `Σ λ` over truncations up to
/// `k_modes` modes. The verdict is analytic; the partial sums only have to be
/// consistent with it.
pub fn trace_partial_sums(law: CovarianceLaw, dom: &RectDomain, k_modes: usize) -> Result<SeriesReport> {
    law.validate()?;
    let sides = truncation_sides(k_modes)?;
    let truncations: Vec<usize> = sides.iter().map(|q| q * q).collect();
    let verdict = if law.has_finite_trace() { Verdict::Converges } else { Verdict::Diverges };
    let c = eigen_floor(dom);
    let (partial_sums, tail_bounds) = match law {
        CovarianceLaw::EigenvalueSequence(rule) => {
            let mut sums = Vec::new();
            let mut acc = 0.0;
            let mut p = 0;
            for &t in &truncations {
                while p < t {
                    p += 1;
                    acc += rule.eigenvalue(p);
                }
                sums.push(acc);
            }
            // Σ_{p > N} 1/p² ≤ 1/N
            let tails = rule.is_summable().then(|| truncations.iter().map(|&t| 1.0 / t as f64).collect());
            (sums, tails)
        }
        CovarianceLaw::InversePower(alpha) => {
            let sums = square_partial_sums(&sides, |k, l| continuous_eigenvalue(k, l, dom).powf(-alpha));
            let tails =
                (verdict == Verdict::Converges).then(|| sides.iter().map(|&q| power_tail(c, alpha, 0, q)).collect());
            (sums, tails)
        }
        CovarianceLaw::HeatKernel(t) => {
            let sums = square_partial_sums(&sides, |k, l| (-t * continuous_eigenvalue(k, l, dom)).exp());
            let tails = (verdict == Verdict::Converges).then(|| {
                let beta = t * c;
                let pi = std::f64::consts::PI;
                sides.iter().map(|&q| pi / (4.0 * beta) * (-beta * (q * q) as f64).exp()).collect()
            });
            (sums, tails)
        }
    };
    let numeric_consistent = judge(&partial_sums, tail_bounds.as_deref());
    Ok(SeriesReport { truncations, partial_sums, tail_bounds, verdict, numeric_consistent })
}

/// Bound on `Σ_{max(k,l) > q} (k²+l²)^s (c(k²+l²))^{-α}` by the integral of
/// `r^{2s-2α}` over the quarter plane outside radius `q`.
fn power_tail(c: f64, alpha: f64, s: u32, q: usize) -> f64 {
    let beta = alpha - s as f64;
    let pi = std::f64::consts::PI;
    c.powf(-alpha) * (pi / 2.0) * (q as f64).powf(2.0 - 2.0 * beta) / (2.0 * beta - 2.0)
}

/// Partial sums of `Σ_{p+q=s} k^{2p} l^{2q} λ_kl^{-α}`, the expected squared
/// `H^s` seminorm of the inverse-power field up to a constant. Finite iff
/// `α > 1 + s`.
pub fn sobolev_energy(law: CovarianceLaw, s: u32, dom: &RectDomain, k_modes: usize) -> Result<SeriesReport> {
    let alpha = match law {
        CovarianceLaw::InversePower(alpha) => alpha,
        other => return Err(Error::UnsupportedLaw(other.to_string())),
    };
    law.validate()?;
    let sides = truncation_sides(k_modes)?;
    let truncations: Vec<usize> = sides.iter().map(|q| q * q).collect();
    let verdict = if alpha > 1.0 + s as f64 { Verdict::Converges } else { Verdict::Diverges };
    let partial_sums = square_partial_sums(&sides, |k, l| {
        let (k2, l2) = ((k * k) as f64, (l * l) as f64);
        let weight: f64 = (0..=s).map(|p| k2.powi(p as i32) * l2.powi((s - p) as i32)).sum();
        weight * continuous_eigenvalue(k, l, dom).powf(-alpha)
    });
    let c = eigen_floor(dom);
    let tail_bounds =
        (verdict == Verdict::Converges).then(|| sides.iter().map(|&q| power_tail(c, alpha, s, q)).collect::<Vec<_>>());
    let numeric_consistent = judge(&partial_sums, tail_bounds.as_deref());
    Ok(SeriesReport { truncations, partial_sums, tail_bounds, verdict, numeric_consistent })
}
