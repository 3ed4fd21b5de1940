//! Ensemble filtering of one-dimensional random fields whose covariance
//! eigenvalues follow a prescribed sequence, as the state dimension grows.
//!
//! The state is a field on `d` interior nodes of `(0, 1)` with spacing
//! `h = 1/(d+1)`; modes `φ_n(i) = √2 sin(nπi/(d+1))` are orthonormal in the
//! grid `L²` norm, so a field with eigenvalues `λ_n` has `E‖u‖² = Σ_{n≤d} λ_n`.
//! Observations are point values at `m` evenly spaced nodes.

use std::io::Write;
use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;

use super::{check_increasing, check_replicates, pass_fail, ExperimentConfig, Outcome};
use crate::ensemble_stats::{lp_aggregate, sample_mean, Ensemble};
use crate::filters::{bayes_reweight, enkf_analysis, perturbed_data_streamed, ObservationModel, ParticleSet};
use crate::rect_field::SequenceRule;
use crate::rng::{standard_normal_vec, StreamRng, StreamTag};
use crate::{DenseOp, Error, Result, Vector};

/// Standard errors of slack on "non-increasing".
pub const FLAT_SE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CurseParams {
    pub dims: Vec<usize>,
    pub laws: Vec<SequenceRule>,
    pub members: usize,
    pub observations: usize,
    pub obs_var: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for CurseParams {
    fn default() -> Self {
        Self {
            dims: vec![50, 100, 200, 400],
            laws: vec![SequenceRule::InverseSquare, SequenceRule::Inverse, SequenceRule::Constant],
            members: 10,
            observations: 25,
            obs_var: 0.01,
            replicates: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurseRow {
    pub law: SequenceRule,
    pub dim: usize,
    /// `(mean_r ‖x̄ᵃ - x_true‖²)^{1/2}` in the grid `L²` norm.
    pub rmse: f64,
    pub std_error: f64,
    /// Same quantity for the forecast ensemble mean.
    pub prior_rmse: f64,
    /// Mean effective sample size of the reweighted forecast members over the
    /// replicates where reweighting did not underflow.
    pub mean_ess: f64,
    /// Fraction of replicates where every likelihood underflowed.
    pub degenerate_fraction: f64,
}

/// Expected trend of a law and whether it was observed.
#[derive(Debug, Clone, PartialEq)]
pub struct CurseVerdict {
    pub law: SequenceRule,
    /// `"non-increasing"`, `"increasing"` or `"none"`.
    pub expected: &'static str,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurseReport {
    pub members: usize,
    pub observations: usize,
    pub replicates: usize,
    pub rows: Vec<CurseRow>,
    pub verdicts: Vec<CurseVerdict>,
}

impl CurseReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.holds)
    }

    pub fn rows_for(&self, law: SequenceRule) -> Vec<&CurseRow> {
        self.rows.iter().filter(|r| r.law == law).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# members={} observations={} replicates={}", self.members, self.observations, self.replicates)?;
        writeln!(w, "law,dim,rmse,std_error,prior_rmse,mean_ess,degenerate_fraction")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{}",
                r.law.tag(),
                r.dim,
                r.rmse,
                r.std_error,
                r.prior_rmse,
                r.mean_ess,
                r.degenerate_fraction
            )?;
        }
        for v in &self.verdicts {
            writeln!(w, "# law={} expected={} holds={}", v.law.tag(), v.expected, v.holds)?;
        }
        Ok(())
    }
}

/// `Φ diag(λ)^{1/2}` with `Φ_{in} = √2 sin(nπi/(d+1))`.
fn scaled_modes(law: SequenceRule, d: usize) -> DenseOp {
    let w = std::f64::consts::PI / (d + 1) as f64;
    DenseOp::from_fn(d, d, |i, n| {
        let (i, n) = ((i + 1) as f64, n + 1);
        std::f64::consts::SQRT_2 * (w * n as f64 * i).sin() * law.eigenvalue(n).sqrt()
    })
}

/// Nodes `floor((j + ½) d / m)`, 0-based.
fn observed_nodes(d: usize, m: usize) -> Vec<usize> {
    (0..m).map(|j| ((((j as f64 + 0.5) * d as f64) / m as f64).floor() as usize).min(d - 1)).collect()
}

struct Trial {
    l2_error: f64,
    prior_error: f64,
    ess: Option<f64>,
}

fn law_code(law: SequenceRule) -> u64 {
    match law {
        SequenceRule::Constant => 0,
        SequenceRule::Inverse => 1,
        SequenceRule::InverseSquare => 2,
    }
}

fn trial(p: &CurseParams, law: SequenceRule, d: usize, modes: &DenseOp, h: &DenseOp, r: usize) -> Result<Trial> {
    let rep_seed =
        StreamRng::keyed(p.seed, &[StreamTag::Replicate as u64, law_code(law), d as u64, r as u64]).next_u64();
    let draw = |tag: StreamTag, k: usize| {
        let mut rng = StreamRng::member(rep_seed, tag, 0, k as u64);
        modes * standard_normal_vec(&mut rng, d)
    };
    let truth = draw(StreamTag::Truth, 0);
    let members: Vec<Vector> = (0..p.members).map(|k| draw(StreamTag::InitialEnsemble, k)).collect();
    let forecast = Ensemble::from_members(&members)?;
    let m = h.nrows();
    let mut noise_rng = StreamRng::member(rep_seed, StreamTag::Observation, 1, 0);
    let data = h * &truth + standard_normal_vec(&mut noise_rng, m) * p.obs_var.sqrt();
    let obs = ObservationModel::new(h.clone(), DenseOp::identity(m, m) * p.obs_var, data)?;
    let pd = perturbed_data_streamed(&obs, p.members, rep_seed, 1)?;
    let analysis = enkf_analysis(&forecast, &obs, &pd)?;
    let grid = 1.0 / (d + 1) as f64;
    let l2 = |v: Vector| (grid * v.norm_squared()).sqrt();
    let ess = match bayes_reweight(&ParticleSet::uniform(members)?, &obs) {
        Ok(ps) => Some(ps.effective_sample_size()),
        Err(Error::AllWeightsZero) => None,
        Err(e) => return Err(e),
    };
    Ok(Trial { l2_error: l2(sample_mean(&analysis) - &truth), prior_error: l2(sample_mean(&forecast) - &truth), ess })
}

fn validate(p: &CurseParams) -> Result<()> {
    if p.members < 2 {
        return Err(Error::DegenerateEnsemble(p.members));
    }
    if p.observations == 0 || p.dims.iter().any(|&d| d < p.observations) {
        return Err(Error::InvalidArgument("need 0 < observations ≤ every dimension".into()));
    }
    if p.laws.is_empty() || p.replicates < 2 || !(p.obs_var > 0.0) {
        return Err(Error::InvalidArgument("need laws, at least 2 replicates and obs_var > 0".into()));
    }
    Ok(())
}

/// Runs the sweep and judges the trend per law: `inv_sq` must not increase
/// beyond noise, `const` must increase at every step; `inv` is reported only.
pub fn curse_experiment(p: &CurseParams) -> Result<CurseReport> {
    validate(p)?;
    let mut rows = Vec::new();
    for &law in &p.laws {
        for &d in &p.dims {
            let modes = scaled_modes(law, d);
            let nodes = observed_nodes(d, p.observations);
            let h = DenseOp::from_fn(nodes.len(), d, |j, i| if nodes[j] == i { 1.0 } else { 0.0 });
            let trials: Vec<Trial> =
                (0..p.replicates).into_par_iter().map(|r| trial(p, law, d, &modes, &h, r)).collect::<Result<_>>()?;
            let runs: Vec<Vec<f64>> = trials.iter().map(|t| vec![t.l2_error, t.prior_error]).collect();
            let (errs, ses) = lp_aggregate(&runs, 2.0);
            let ess: Vec<f64> = trials.iter().filter_map(|t| t.ess).collect();
            let mean_ess = if ess.is_empty() { f64::NAN } else { ess.iter().sum::<f64>() / ess.len() as f64 };
            rows.push(CurseRow {
                law,
                dim: d,
                rmse: errs[0],
                std_error: ses[0],
                prior_rmse: errs[1],
                mean_ess,
                degenerate_fraction: (trials.len() - ess.len()) as f64 / trials.len() as f64,
            });
        }
    }
    let verdicts = p
        .laws
        .iter()
        .map(|&law| {
            let rs: Vec<&CurseRow> = rows.iter().filter(|r| r.law == law).collect();
            let steps = rs.windows(2);
            match law {
                SequenceRule::InverseSquare => CurseVerdict {
                    law,
                    expected: "non-increasing",
                    holds: steps
                        .into_iter()
                        .all(|w| w[1].rmse <= w[0].rmse + FLAT_SE * w[0].std_error.hypot(w[1].std_error)),
                },
                SequenceRule::Constant => CurseVerdict {
                    law,
                    expected: "increasing",
                    holds: steps.into_iter().all(|w| w[1].rmse > w[0].rmse),
                },
                SequenceRule::Inverse => CurseVerdict { law, expected: "none", holds: true },
            }
        })
        .collect();
    Ok(CurseReport { members: p.members, observations: p.observations, replicates: p.replicates, rows, verdicts })
}

const KEYS: &[&str] = &["dims", "laws", "members", "observations", "obs_var", "replicates"];

pub(super) fn cmd_curse(config: &ExperimentConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    config.check_keys("curse", KEYS)?;
    let d = CurseParams::default();
    let dims = config.list_or("dims", d.dims.clone())?;
    check_increasing("dims", &dims)?;
    let replicates = config.get_or("replicates", d.replicates)?;
    check_replicates(replicates, out)?;
    let p = CurseParams {
        dims,
        laws: config.list_or("laws", d.laws.clone())?,
        members: config.get_or("members", d.members)?,
        observations: config.get_or("observations", d.observations)?,
        obs_var: config.get_or("obs_var", d.obs_var)?,
        replicates,
        seed: config.seed()?,
    };
    validate(&p).map_err(|e| Error::Config(e.to_string()))?;
    let report = curse_experiment(&p)?;
    out.line(format!("members N={} observations m={}", report.members, report.observations));
    for row in &report.rows {
        out.line(format!(
            "law {} dim {}: rmse={:.4} (se {:.4}) ess={:.2}",
            row.law.tag(),
            row.dim,
            row.rmse,
            row.std_error,
            row.mean_ess
        ));
    }
    for v in &report.verdicts {
        out.line(format!("law {}: expected {} [{}]", v.law.tag(), v.expected, pass_fail(v.holds)));
    }
    out.passed &= report.passed();
    out.write_file(dir, "curse.csv", |w| report.write_csv(w))
}
