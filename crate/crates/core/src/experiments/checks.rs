use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::{pass_fail, ExperimentConfig, Outcome};
use crate::ensemble_stats::Ensemble;
use crate::filters::{
    enkf_analysis_checked, etkf_analysis, etkf_exactness, etkf_inner_discrepancy, make_perturbed_data, osi_analysis,
    scalar_obs_exactness, KfState, ObservationModel, CROSS_CHECK_TOL, ETKF_EXACT_TOL,
};
use crate::gaussian::{char_fn_check, sample_seeded, Covariance, GaussianSpec};
use crate::rng::{standard_normal_vec, StreamRng, StreamTag};
use crate::{DenseOp, Error, Result, Vector};

/// Tolerance on the affine-observation linearisation, relative to the
/// observed value.
pub const SCALAR_TOL: f64 = 1e-12;

fn trial_rng(seed: u64, suite: u64, trial: usize) -> StreamRng {
    StreamRng::keyed(seed, &[StreamTag::Sample as u64, suite, trial as u64])
}

fn gaussian_matrix(rng: &mut StreamRng, rows: usize, cols: usize) -> DenseOp {
    let v = standard_normal_vec(rng, rows * cols);
    DenseOp::from_column_slice(rows, cols, v.as_slice())
}

/// `G Gᵀ / k + floor · I`, well conditioned and positive definite.
fn random_spd(rng: &mut StreamRng, n: usize, floor: f64) -> DenseOp {
    let g = gaussian_matrix(rng, n, n);
    let s = &g * g.transpose() / n as f64 + DenseOp::identity(n, n) * floor;
    (&s + s.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtkfParams {
    pub trials: usize,
    pub max_state: usize,
    pub max_members: usize,
    pub max_obs: usize,
    /// Added to `R[0][1]` only, making `R` asymmetric when nonzero.
    pub r_asymmetry: f64,
    pub seed: u64,
}

impl Default for EtkfParams {
    fn default() -> Self {
        Self { trials: 100, max_state: 20, max_members: 40, max_obs: 20, r_asymmetry: 0.0, seed: 0 }
    }
}

/// Worst residuals over all trials.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EtkfSuite {
    pub trials: usize,
    pub mean_error: f64,
    pub cov_error: f64,
    pub deviation_sum: f64,
    pub span_residual: f64,
    pub transform_error: f64,
    pub smw_inner: f64,
    pub enkf_smw: f64,
    pub enkf_transform: f64,
    pub scalar_diff: f64,
}

impl EtkfSuite {
    /// `(name, worst residual, tolerance)` for every identity.
    pub fn checks(&self) -> Vec<(&'static str, f64, f64)> {
        vec![
            ("etkf mean", self.mean_error, ETKF_EXACT_TOL),
            ("etkf covariance", self.cov_error, ETKF_EXACT_TOL),
            ("etkf A W e", self.deviation_sum, ETKF_EXACT_TOL),
            ("etkf span", self.span_residual, CROSS_CHECK_TOL),
            ("etkf transform form", self.transform_error, ETKF_EXACT_TOL),
            ("etkf smw inner", self.smw_inner, CROSS_CHECK_TOL),
            ("enkf smw inverse", self.enkf_smw, CROSS_CHECK_TOL),
            ("enkf transform form", self.enkf_transform, CROSS_CHECK_TOL),
            ("affine observation", self.scalar_diff, SCALAR_TOL),
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|(_, v, tol)| v < tol)
    }

    fn merge(self, o: Self) -> Self {
        Self {
            trials: self.trials + o.trials,
            mean_error: self.mean_error.max(o.mean_error),
            cov_error: self.cov_error.max(o.cov_error),
            deviation_sum: self.deviation_sum.max(o.deviation_sum),
            span_residual: self.span_residual.max(o.span_residual),
            transform_error: self.transform_error.max(o.transform_error),
            smw_inner: self.smw_inner.max(o.smw_inner),
            enkf_smw: self.enkf_smw.max(o.enkf_smw),
            enkf_transform: self.enkf_transform.max(o.enkf_transform),
            scalar_diff: self.scalar_diff.max(o.scalar_diff),
        }
    }
}

fn etkf_trial(p: &EtkfParams, t: usize) -> Result<EtkfSuite> {
    let mut rng = trial_rng(p.seed, 1, t);
    let n_state = rng.random_range(1..=p.max_state);
    let members = rng.random_range(2..=p.max_members);
    let min_obs = if p.r_asymmetry != 0.0 { 2 } else { 1 };
    let m = rng.random_range(min_obs..=p.max_obs.max(min_obs));
    let scale = rng.random_range(0.1..10.0);
    let x = Ensemble::new(gaussian_matrix(&mut rng, n_state, members) * scale)?;
    let h = gaussian_matrix(&mut rng, m, n_state);
    let mut r = random_spd(&mut rng, m, 0.5);
    if p.r_asymmetry != 0.0 {
        r[(0, 1)] += p.r_asymmetry;
    }
    let d = &h * standard_normal_vec(&mut rng, n_state) * scale + standard_normal_vec(&mut rng, m);

    let obs_fn = |v: &Vector| &h * v;
    let etkf = etkf_analysis(&x, &obs_fn, &r, &d)?;
    let ex = etkf_exactness(&x, &etkf)?;
    let b = &h * x.deviations();
    let smw_inner = etkf_inner_discrepancy(&b, &r, members)?;

    let obs = ObservationModel::new(h.clone(), r.clone(), d.clone())?;
    let pd = make_perturbed_data(&obs, members, &mut rng)?;
    let enkf = enkf_analysis_checked(&x, &obs, &pd)?;

    let h0: f64 = rng.random_range(-5.0..5.0);
    let h1 = standard_normal_vec(&mut rng, n_state);
    let w = standard_normal_vec(&mut rng, members);
    let sc = scalar_obs_exactness(&x, h0, &h1, &w)?;

    Ok(EtkfSuite {
        trials: 1,
        mean_error: ex.mean_error,
        cov_error: ex.cov_error,
        deviation_sum: ex.deviation_sum,
        span_residual: ex.span_residual,
        transform_error: ex.transform_error,
        smw_inner,
        enkf_smw: enkf.smw_discrepancy,
        enkf_transform: enkf.transform_discrepancy,
        scalar_diff: sc.diff / sc.lhs.abs().max(1.0),
    })
}

/// Exactness identities of the ETKF and the algebraic cross-checks of the
/// EnKF on random ensembles.
pub fn etkf_suite(p: &EtkfParams) -> Result<EtkfSuite> {
    if p.trials == 0 || p.max_state == 0 || p.max_members < 2 || p.max_obs == 0 {
        return Err(Error::InvalidArgument("trials, max_state, max_obs ≥ 1 and max_members ≥ 2 required".into()));
    }
    let results: Vec<EtkfSuite> = (0..p.trials).into_par_iter().map(|t| etkf_trial(p, t)).collect::<Result<_>>()?;
    Ok(results.into_iter().fold(EtkfSuite::default(), EtkfSuite::merge))
}

/// Worst relative gaps between the OSI forms over random instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OsiSuite {
    pub trials: usize,
    pub mean_discrepancy: f64,
    pub cov_discrepancy: f64,
}

impl OsiSuite {
    pub fn passed(&self) -> bool {
        self.mean_discrepancy < CROSS_CHECK_TOL && self.cov_discrepancy < CROSS_CHECK_TOL
    }
}

/// Gain form against precision form for the mean, and `(I-KH)Q` against
/// the SMW-expanded covariance, on random positive definite instances of
/// dimension up to `max_dim`.
pub fn osi_suite(trials: usize, max_dim: usize, seed: u64) -> Result<OsiSuite> {
    if trials == 0 || max_dim == 0 {
        return Err(Error::InvalidArgument("trials and max_dim must be positive".into()));
    }
    let gaps: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, 2, t);
            let n = rng.random_range(1..=max_dim);
            let m = rng.random_range(1..=max_dim);
            let q = random_spd(&mut rng, n, 0.1);
            let r = random_spd(&mut rng, m, 0.1);
            let h = gaussian_matrix(&mut rng, m, n);
            let mean = standard_normal_vec(&mut rng, n);
            let d = standard_normal_vec(&mut rng, m);
            let out = osi_analysis(&KfState::new(mean, q)?, &ObservationModel::new(h, r, d)?)?;
            let mean_gap = out
                .mean_discrepancy()
                .ok_or_else(|| Error::InvalidArgument("prior covariance not invertible".into()))?;
            Ok((mean_gap, out.cov_discrepancy()))
        })
        .collect::<Result<_>>()?;
    Ok(OsiSuite {
        trials,
        mean_discrepancy: gaps.iter().map(|g| g.0).fold(0.0, f64::max),
        cov_discrepancy: gaps.iter().map(|g| g.1).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharFnParams {
    pub dims: Vec<usize>,
    pub draws: usize,
    pub directions: usize,
    pub max_norm: f64,
    /// Random mean and covariance instead of `N(0, I)`.
    pub random_source: bool,
    pub seed: u64,
}

impl Default for CharFnParams {
    fn default() -> Self {
        Self { dims: vec![1, 2, 5], draws: 100_000, directions: 20, max_norm: 3.0, random_source: false, seed: 0 }
    }
}

/// Largest characteristic-functional error per dimension, against the
/// Monte Carlo allowance `5/√N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharFnSuite {
    pub dims: Vec<usize>,
    pub max_errors: Vec<f64>,
    pub bound: f64,
}

impl CharFnSuite {
    pub fn passed(&self) -> bool {
        self.max_errors.iter().all(|e| *e <= self.bound)
    }
}

pub fn char_fn_suite(p: &CharFnParams) -> Result<CharFnSuite> {
    if p.draws == 0 || p.directions == 0 || p.dims.contains(&0) || !(p.max_norm >= 0.0) {
        return Err(Error::InvalidArgument("draws, directions and dims must be positive".into()));
    }
    let max_errors = p
        .dims
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let mut rng = trial_rng(p.seed, 3, i);
            let spec = if p.random_source {
                GaussianSpec::new(standard_normal_vec(&mut rng, d), Covariance::Dense(random_spd(&mut rng, d, 0.1)))?
            } else {
                GaussianSpec::standard(d)
            };
            let batch = sample_seeded(&spec, p.draws, rng.random());
            let mut worst: f64 = 0.0;
            for _ in 0..p.directions {
                let dir = standard_normal_vec(&mut rng, d);
                let radius = p.max_norm * rng.random::<f64>();
                let h = dir.normalize() * radius;
                worst = worst.max(char_fn_check(&batch, &h)?.abs_error);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CharFnSuite { dims: p.dims.clone(), max_errors, bound: 5.0 / (p.draws as f64).sqrt() })
}

const ETKF_KEYS: &[&str] =
    &["trials", "max_state", "max_members", "max_obs", "r_asymmetry", "osi_trials", "osi_max_dim"];

pub(super) fn cmd_etkf_check(config: &ExperimentConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    config.check_keys("etkf-check", ETKF_KEYS)?;
    let d = EtkfParams::default();
    let p = EtkfParams {
        trials: config.get_or("trials", d.trials)?,
        max_state: config.get_or("max_state", d.max_state)?,
        max_members: config.get_or("max_members", d.max_members)?,
        max_obs: config.get_or("max_obs", d.max_obs)?,
        r_asymmetry: config.get_or("r_asymmetry", d.r_asymmetry)?,
        seed: config.seed()?,
    };
    if p.trials == 0 || p.max_state == 0 || p.max_members < 2 || p.max_obs == 0 {
        return Err(Error::Config("trials, max_state, max_obs ≥ 1 and max_members ≥ 2 required".into()));
    }
    let osi_trials = config.get_or("osi_trials", 100usize)?;
    let osi_max_dim = config.get_or("osi_max_dim", 30usize)?;
    if osi_trials == 0 || osi_max_dim == 0 {
        return Err(Error::Config("osi_trials and osi_max_dim must be positive".into()));
    }
    let suite = etkf_suite(&p)?;
    let osi = osi_suite(osi_trials, osi_max_dim, p.seed)?;
    let mut rows = suite.checks();
    rows.push(("osi mean forms", osi.mean_discrepancy, CROSS_CHECK_TOL));
    rows.push(("osi covariance forms", osi.cov_discrepancy, CROSS_CHECK_TOL));
    for (name, value, tol) in &rows {
        out.line(format!("{name}: max residual {value:.3e} < {tol:e} [{}]", pass_fail(value < tol)));
    }
    out.passed &= suite.passed() && osi.passed();
    out.write_file(dir, "etkf_check.csv", |w: &mut dyn Write| {
        writeln!(w, "check,max_residual,tolerance,passed")?;
        for (name, value, tol) in &rows {
            writeln!(w, "{name},{value:e},{tol:e},{}", value < tol)?;
        }
        writeln!(w, "# etkf_trials={} osi_trials={}", suite.trials, osi.trials)?;
        Ok(())
    })
}

const CHAR_KEYS: &[&str] = &["dims", "draws", "directions", "max_norm", "source"];

pub(super) fn cmd_char_fn(config: &ExperimentConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    config.check_keys("char-fn", CHAR_KEYS)?;
    let d = CharFnParams::default();
    let random_source = match config.get::<String>("source")?.as_deref() {
        None | Some("standard") => false,
        Some("random") => true,
        Some(other) => return Err(Error::Config(format!("source must be standard or random, got '{other}'"))),
    };
    let p = CharFnParams {
        dims: config.list_or("dims", d.dims)?,
        draws: config.get_or("draws", d.draws)?,
        directions: config.get_or("directions", d.directions)?,
        max_norm: config.get_or("max_norm", d.max_norm)?,
        random_source,
        seed: config.seed()?,
    };
    let suite = char_fn_suite(&p).map_err(|e| Error::Config(e.to_string()))?;
    for (dim, err) in suite.dims.iter().zip(&suite.max_errors) {
        out.line(format!(
            "dim {dim}: max |empirical - exact| = {err:.3e} <= {:.3e} [{}]",
            suite.bound,
            pass_fail(*err <= suite.bound)
        ));
    }
    out.passed &= suite.passed();
    out.write_file(dir, "char_fn.csv", |w: &mut dyn Write| {
        writeln!(w, "dim,max_abs_error,bound")?;
        for (dim, err) in suite.dims.iter().zip(&suite.max_errors) {
            writeln!(w, "{dim},{err:e},{:e}", suite.bound)?;
        }
        Ok(())
    })
}
