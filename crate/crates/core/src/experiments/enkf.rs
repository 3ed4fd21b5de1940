use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;

use super::{check_increasing, check_replicates, pass_fail, ExperimentConfig, Outcome};
use crate::ensemble_stats::{lp_aggregate, sample_cov, sample_mean, ConvergenceReport, Divisor, Ensemble};
use crate::filters::{
    enkf_analysis, exact_gain_analysis, kalman_gain, perturbed_data_streamed, LinearModel, ObservationModel,
};
use crate::gaussian::{Covariance, GaussianSpec};
use crate::rng::{standard_normal_vec, StreamRng, StreamTag};
use crate::{DenseOp, Error, Result, Vector};

pub const MAX_CYCLES: usize = 5;
pub const SLOPE_TARGET: f64 = -0.5;
pub const SLOPE_TOL: f64 = 0.15;

/// Linear forecast model of the twin experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Identity,
    /// `0.8 I + 0.2 S` with `S` the cyclic shift.
    Advect,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(ModelKind::Identity),
            "advect" => Ok(ModelKind::Advect),
            other => Err(Error::Config(format!("unknown model '{other}' (identity, advect)"))),
        }
    }
}

impl ModelKind {
    fn build(self, n: usize) -> LinearModel {
        match self {
            ModelKind::Identity => LinearModel::identity(n),
            ModelKind::Advect => {
                let mut a = DenseOp::identity(n, n) * 0.8;
                for i in 0..n {
                    a[(i, (i + n - 1) % n)] += 0.2;
                }
                LinearModel { a, f: Vector::zeros(n), reg: DenseOp::zeros(n, n) }
            }
        }
    }
}

/// Twin experiment comparing the EnKF with the exact-gain ensemble built
/// from the same initial members and the same perturbed data.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinParams {
    pub state_dim: usize,
    /// Every `obs_stride`-th coordinate is observed.
    pub obs_stride: usize,
    pub obs_var: f64,
    pub model: ModelKind,
    pub cycles: usize,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for TwinParams {
    fn default() -> Self {
        Self {
            state_dim: 10,
            obs_stride: 2,
            obs_var: 0.5,
            model: ModelKind::Identity,
            cycles: 1,
            sizes: (3..=10).map(|k| 1usize << k).collect(),
            replicates: 100,
            seed: 0,
        }
    }
}

struct Setup {
    prior: GaussianSpec,
    model: LinearModel,
    h: DenseOp,
    r: DenseOp,
}

impl TwinParams {
    fn setup(&self) -> Result<Setup> {
        let n = self.state_dim;
        if n == 0 || self.obs_stride == 0 || !(self.obs_var > 0.0) {
            return Err(Error::InvalidArgument("state_dim, obs_stride and obs_var must be positive".into()));
        }
        // Squared-exponential prior with a small nugget.
        let q0 = DenseOp::from_fn(n, n, |i, j| {
            let d = i as f64 - j as f64;
            (-d * d / 8.0).exp() + if i == j { 0.05 } else { 0.0 }
        });
        let prior = GaussianSpec::new(Vector::zeros(n), Covariance::Dense(q0))?;
        let observed: Vec<usize> = (0..n).step_by(self.obs_stride).collect();
        let h = DenseOp::from_fn(observed.len(), n, |r, c| if observed[r] == c { 1.0 } else { 0.0 });
        let r = DenseOp::identity(observed.len(), observed.len()) * self.obs_var;
        Ok(Setup { prior, model: self.model.build(n), h, r })
    }
}

fn replicate_seed(seed: u64, r: usize) -> u64 {
    StreamRng::replicate(seed, r as u64).next_u64()
}

/// Truth run and its data per cycle: `d_c = H x_c + ε_c`.
fn truth_run(s: &Setup, rep_seed: u64, cycles: usize) -> (Vec<Vector>, Vec<Vector>) {
    let mut truth = s.prior.draw(&mut StreamRng::member(rep_seed, StreamTag::Truth, 0, 0));
    let l = s.r.map(f64::sqrt);
    (1..=cycles)
        .map(|c| {
            truth = &s.model.a * &truth + &s.model.f;
            let mut rng = StreamRng::member(rep_seed, StreamTag::Observation, c as u64, 0);
            let d = &s.h * &truth + &l * standard_normal_vec(&mut rng, s.h.nrows());
            (truth.clone(), d)
        })
        .unzip()
}

fn cycle_data(s: &Setup, rep_seed: u64, cycles: usize) -> Vec<Vector> {
    truth_run(s, rep_seed, cycles).1
}

/// Analysis ensembles `(X_cᵃ, U_cᵃ)` for cycles `1..=cycles` with `n`
/// members. Member `k` of the initial ensemble and of each cycle's perturbed
/// data comes from its own stream, so runs for different `n` are nested.
fn twin_run(s: &Setup, data: &[Vector], rep_seed: u64, n: usize) -> Result<Vec<(Ensemble, Ensemble)>> {
    let members: Vec<Vector> = (0..n)
        .map(|k| s.prior.draw(&mut StreamRng::member(rep_seed, StreamTag::InitialEnsemble, 0, k as u64)))
        .collect();
    let mut x = Ensemble::from_members(&members)?;
    let mut u = x.clone();
    let mut q = s.prior.cov_matrix();
    let mut out = Vec::with_capacity(data.len());
    for (c, d) in data.iter().enumerate() {
        let cycle = (c + 1) as u64;
        x = s.model.advance(&x)?;
        u = s.model.advance(&u)?;
        q = &s.model.a * &q * s.model.a.transpose() + &s.model.reg;
        let obs = ObservationModel::new(s.h.clone(), s.r.clone(), d.clone())?;
        let pd = perturbed_data_streamed(&obs, n, rep_seed, cycle)?;
        x = enkf_analysis(&x, &obs, &pd)?;
        u = exact_gain_analysis(&u, &obs, &q, &pd)?;
        let k = kalman_gain(&q, &obs)?;
        q = &q - &k * &s.h * &q;
        q = (&q + q.transpose()) * 0.5;
        out.push((x.clone(), u.clone()));
    }
    Ok(out)
}

/// `(E|X_1ᵃ - U_1ᵃ|²)^{1/2}` against ensemble size, one report per cycle.
pub fn enkf_convergence(p: &TwinParams) -> Result<Vec<ConvergenceReport>> {
    if p.cycles == 0 || p.cycles > MAX_CYCLES {
        return Err(Error::InvalidArgument(format!("cycles must be in 1..={MAX_CYCLES}, got {}", p.cycles)));
    }
    if p.sizes.first().is_none_or(|&n| n < 2) || p.sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("sizes must be strictly increasing and at least 2".into()));
    }
    if p.replicates < 2 {
        return Err(Error::InvalidArgument("need at least 2 replicates".into()));
    }
    let s = p.setup()?;
    // runs[r][size][cycle]
    let runs: Vec<Vec<Vec<f64>>> = (0..p.replicates)
        .into_par_iter()
        .map(|r| {
            let rep_seed = replicate_seed(p.seed, r);
            let data = cycle_data(&s, rep_seed, p.cycles);
            p.sizes
                .iter()
                .map(|&n| {
                    let run = twin_run(&s, &data, rep_seed, n)?;
                    Ok(run.iter().map(|(x, u)| (x.member(0) - u.member(0)).norm()).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..p.cycles)
        .map(|c| {
            let per_rep: Vec<Vec<f64>> = runs.iter().map(|rep| rep.iter().map(|sz| sz[c]).collect()).collect();
            let (errors, ses) = lp_aggregate(&per_rep, 2.0);
            ConvergenceReport::new(p.sizes.clone(), errors, ses, None)
        })
        .collect())
}

/// Member pairs `(X_kᵃ, U_kᵃ)` after one cycle with `n` members, for each of
/// `replicates` independent replicates.
pub fn paired_members(p: &TwinParams, n: usize, replicates: usize) -> Result<Vec<Vec<(Vector, Vector)>>> {
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    let s = p.setup()?;
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let rep_seed = replicate_seed(p.seed, r);
            let data = cycle_data(&s, rep_seed, 1);
            let run = twin_run(&s, &data, rep_seed, n)?;
            let (x, u) = &run[0];
            Ok((0..n).map(|k| (x.member(k), u.member(k))).collect())
        })
        .collect()
}

/// One line of the per-cycle filter log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleLog {
    pub cycle: usize,
    /// `|X̄ᵃ - x_true| / √n` for the EnKF analysis mean.
    pub rmse: f64,
    /// Trace of the EnKF analysis sample covariance.
    pub trace: f64,
    /// Trace of the exact Kalman analysis covariance.
    pub exact_trace: f64,
}

/// Filter log of replicate 0 with the largest ensemble size.
pub fn filter_log(p: &TwinParams) -> Result<Vec<CycleLog>> {
    let s = p.setup()?;
    let n = *p.sizes.last().ok_or_else(|| Error::InvalidArgument("no sizes".into()))?;
    let rep_seed = replicate_seed(p.seed, 0);
    let (truths, data) = truth_run(&s, rep_seed, p.cycles);
    let run = twin_run(&s, &data, rep_seed, n)?;
    let exact = exact_traces(&s, &data)?;
    let dim = (p.state_dim as f64).sqrt();
    run.iter()
        .zip(truths.iter().zip(exact))
        .enumerate()
        .map(|(c, ((x, _), (truth, exact_trace)))| {
            Ok(CycleLog {
                cycle: c + 1,
                rmse: (sample_mean(x) - truth).norm() / dim,
                trace: sample_cov(x, Divisor::NMinusOne)?.trace(),
                exact_trace,
            })
        })
        .collect()
}

fn exact_traces(s: &Setup, data: &[Vector]) -> Result<Vec<f64>> {
    let mut q = s.prior.cov_matrix();
    data.iter()
        .map(|d| {
            q = &s.model.a * &q * s.model.a.transpose() + &s.model.reg;
            let obs = ObservationModel::new(s.h.clone(), s.r.clone(), d.clone())?;
            let k = kalman_gain(&q, &obs)?;
            q = &q - &k * &s.h * &q;
            Ok(q.trace())
        })
        .collect()
}

const KEYS: &[&str] = &["state_dim", "obs_stride", "obs_var", "model", "cycles", "sizes", "replicates"];

fn params(config: &ExperimentConfig, out: &mut Outcome) -> Result<TwinParams> {
    config.check_keys("enkf-converge", KEYS)?;
    let d = TwinParams::default();
    let sizes = config.list_or("sizes", d.sizes.clone())?;
    check_increasing("sizes", &sizes)?;
    if sizes[0] < 2 || sizes.len() < 3 {
        return Err(Error::Config("sizes need at least 3 entries, each at least 2".into()));
    }
    let cycles = config.get_or("cycles", d.cycles)?;
    if cycles == 0 || cycles > MAX_CYCLES {
        return Err(Error::Config(format!("cycles must be in 1..={MAX_CYCLES}")));
    }
    let replicates = config.get_or("replicates", d.replicates)?;
    check_replicates(replicates, out)?;
    if replicates < 2 {
        return Err(Error::Config("need at least 2 replicates".into()));
    }
    let p = TwinParams {
        state_dim: config.get_or("state_dim", d.state_dim)?,
        obs_stride: config.get_or("obs_stride", d.obs_stride)?,
        obs_var: config.get_or("obs_var", d.obs_var)?,
        model: config.get_or("model", d.model)?,
        cycles,
        sizes,
        replicates,
        seed: config.seed()?,
    };
    if p.state_dim == 0 || p.obs_stride == 0 || !(p.obs_var > 0.0) {
        return Err(Error::Config("state_dim, obs_stride and obs_var must be positive".into()));
    }
    Ok(p)
}

pub(super) fn cmd_enkf_converge(config: &ExperimentConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let p = params(config, out)?;
    let reports = enkf_convergence(&p)?;
    for (c, rep) in reports.iter().enumerate() {
        let ok = rep.slope_within(SLOPE_TARGET, SLOPE_TOL);
        out.line(format!("cycle {}: slope={:.4} [{}]", c + 1, rep.slope, pass_fail(ok)));
        out.passed &= ok;
    }
    out.write_file(dir, "enkf_converge.csv", |w: &mut dyn Write| {
        writeln!(w, "cycle,size,error,std_error")?;
        for (c, rep) in reports.iter().enumerate() {
            for (i, n) in rep.sizes.iter().enumerate() {
                writeln!(w, "{},{n},{:e},{:e}", c + 1, rep.errors[i], rep.std_errors[i])?;
            }
        }
        for (c, rep) in reports.iter().enumerate() {
            writeln!(w, "# cycle={} slope={}", c + 1, rep.slope)?;
        }
        Ok(())
    })?;
    let log = filter_log(&p)?;
    out.write_file(dir, "filter_log.csv", |w: &mut dyn Write| {
        writeln!(w, "cycle,rmse,trace,exact_trace")?;
        for l in &log {
            writeln!(w, "{},{:e},{:e},{:e}", l.cycle, l.rmse, l.trace, l.exact_trace)?;
        }
        Ok(())
    })
}
