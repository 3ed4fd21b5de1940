use std::io::Write;
use std::path::Path;

use super::{check_increasing, check_replicates, default_sizes, pass_fail, ExperimentConfig, Outcome};
use crate::ensemble_stats::{cov_convergence_experiment, lln_experiment, ConvergenceReport, CovConvergence};
use crate::gaussian::GaussianSpec;
use crate::{Error, Result};

pub const SLOPE_TARGET: f64 = -0.5;
pub const SLOPE_TOL: f64 = 0.1;
/// Standard errors of slack on the explicit `L²` bound.
pub const BOUND_SE: f64 = 3.0;

const KEYS: &[&str] = &["dim", "dims", "variances", "sizes", "replicates", "p"];

struct LlnParams {
    sources: Vec<GaussianSpec>,
    sizes: Vec<usize>,
    replicates: usize,
    p: f64,
    seed: u64,
}

/// Standard Gaussians in each dimension of `dims`.
pub fn lln_sources(dims: &[usize]) -> Vec<GaussianSpec> {
    dims.iter().map(|&d| GaussianSpec::standard(d)).collect()
}

fn params(command: &str, config: &ExperimentConfig, out: &mut Outcome) -> Result<LlnParams> {
    config.check_keys(command, KEYS)?;
    let sources = match (config.list::<f64>("variances")?, config.list::<usize>("dims")?, config.get::<usize>("dim")?) {
        (Some(v), None, None) => vec![GaussianSpec::diagonal(v).map_err(|e| Error::Config(e.to_string()))?],
        (None, Some(d), None) => lln_sources(&d),
        (None, None, Some(d)) => lln_sources(&[d]),
        (None, None, None) => lln_sources(&[1]),
        _ => return Err(Error::Config("give only one of dim, dims, variances".into())),
    };
    if sources.iter().any(|s| s.dim() == 0) {
        return Err(Error::Config("dimension must be positive".into()));
    }
    let sizes = config.list_or("sizes", default_sizes())?;
    check_increasing("sizes", &sizes)?;
    if sizes.len() < 3 {
        return Err(Error::Config("need at least 3 sizes to fit a slope".into()));
    }
    let replicates = config.get_or("replicates", 100)?;
    check_replicates(replicates, out)?;
    let p: f64 = config.get_or("p", 2.0)?;
    if !(p >= 1.0) {
        return Err(Error::Config(format!("p must be at least 1, got {p}")));
    }
    Ok(LlnParams { sources, sizes, replicates, p, seed: config.seed()? })
}

fn source_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

pub(super) fn cmd_lln(config: &ExperimentConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let p = params("lln", config, out)?;
    let mut reports = Vec::new();
    for (i, src) in p.sources.iter().enumerate() {
        let rep = lln_experiment(src, &p.sizes, p.replicates, p.p, source_seed(p.seed, i))?;
        let slope_ok = rep.slope_within(SLOPE_TARGET, SLOPE_TOL);
        let bound_ok = rep.bound_holds(BOUND_SE);
        out.line(format!(
            "dim {}: slope={:.4} [{}] empirical_constant={:.4}",
            src.dim(),
            rep.slope,
            pass_fail(slope_ok),
            rep.empirical_constant
        ));
        if rep.bounds.is_some() {
            out.line(format!(
                "dim {}: bound 2|X1|/sqrt(n) with 2|X1| = {:.4} [{}]",
                src.dim(),
                2.0 * src.l2_norm(),
                pass_fail(bound_ok)
            ));
        }
        out.passed &= slope_ok && bound_ok;
        reports.push((src.dim(), rep));
    }
    out.write_file(dir, "lln.csv", |w| write_lln(w, &reports))
}

fn write_lln(w: &mut dyn Write, reports: &[(usize, ConvergenceReport)]) -> Result<()> {
    writeln!(w, "dim,size,error,std_error,bound")?;
    for (dim, rep) in reports {
        for (i, n) in rep.sizes.iter().enumerate() {
            let bound = rep.bounds.as_ref().map(|b| format!("{:e}", b[i])).unwrap_or_default();
            writeln!(w, "{dim},{n},{:e},{:e},{bound}", rep.errors[i], rep.std_errors[i])?;
        }
        writeln!(w, "# dim={dim} slope={} empirical_constant={}", rep.slope, rep.empirical_constant)?;
    }
    Ok(())
}

/// Sample-covariance convergence for one source, with the HS ≥ operator
/// norm check at every size.
#[derive(Debug, Clone, PartialEq)]
pub struct CovLlnReport {
    pub dim: usize,
    pub convergence: CovConvergence,
    pub hs_dominates: bool,
}

impl CovLlnReport {
    pub fn passed(&self) -> bool {
        self.convergence.hs.slope_within(SLOPE_TARGET, SLOPE_TOL) && self.hs_dominates
    }
}

pub fn cov_lln_experiment(
    source: &GaussianSpec,
    sizes: &[usize],
    replicates: usize,
    p: f64,
    seed: u64,
) -> Result<CovLlnReport> {
    let convergence = cov_convergence_experiment(source, sizes, replicates, p, seed)?;
    let hs_dominates =
        convergence.hs.errors.iter().zip(&convergence.op.errors).all(|(hs, op)| *hs >= op * (1.0 - 1e-12));
    Ok(CovLlnReport { dim: source.dim(), convergence, hs_dominates })
}

pub(super) fn cmd_cov_lln(config: &ExperimentConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let p = params("cov-lln", config, out)?;
    let mut reports = Vec::new();
    for (i, src) in p.sources.iter().enumerate() {
        let rep = cov_lln_experiment(src, &p.sizes, p.replicates, p.p, source_seed(p.seed, i))?;
        out.line(format!(
            "dim {}: hs slope={:.4} [{}] op slope={:.4} hs>=op [{}]",
            rep.dim,
            rep.convergence.hs.slope,
            pass_fail(rep.convergence.hs.slope_within(SLOPE_TARGET, SLOPE_TOL)),
            rep.convergence.op.slope,
            pass_fail(rep.hs_dominates)
        ));
        out.passed &= rep.passed();
        reports.push(rep);
    }
    out.write_file(dir, "cov_lln.csv", |w| {
        writeln!(w, "dim,size,hs_error,hs_std_error,op_error,op_std_error")?;
        for rep in &reports {
            let (hs, op) = (&rep.convergence.hs, &rep.convergence.op);
            for (i, n) in hs.sizes.iter().enumerate() {
                writeln!(
                    w,
                    "{},{n},{:e},{:e},{:e},{:e}",
                    rep.dim, hs.errors[i], hs.std_errors[i], op.errors[i], op.std_errors[i]
                )?;
            }
            writeln!(w, "# dim={} hs_slope={} op_slope={}", rep.dim, hs.slope, op.slope)?;
        }
        Ok(())
    })
}
