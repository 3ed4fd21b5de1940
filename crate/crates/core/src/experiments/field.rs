use std::path::Path;

use super::{ExperimentConfig, Outcome};
use crate::rect_field::{
    covariance_eigs, sample_field, sobolev_energy, trace_partial_sums, CovarianceLaw, EigenSource, GridField,
    RectDomain, SeriesReport,
};
use crate::rng::{StreamRng, StreamTag};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub law: CovarianceLaw,
    pub a: f64,
    pub b: f64,
    pub m: usize,
    pub n: usize,
    pub source: EigenSource,
    /// Modes in the largest truncation of the trace and Sobolev series.
    pub modes: usize,
    pub sobolev_s: u32,
    pub seed: u64,
}

impl Default for FieldParams {
    fn default() -> Self {
        Self {
            law: CovarianceLaw::InversePower(2.0),
            a: 1.0,
            b: 1.0,
            m: 64,
            n: 64,
            source: EigenSource::Continuous,
            modes: 128 * 128,
            sobolev_s: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldReport {
    pub field: GridField,
    pub trace: SeriesReport,
    /// Only for inverse-power laws.
    pub sobolev: Option<SeriesReport>,
}

pub fn field_experiment(p: &FieldParams) -> Result<FieldReport> {
    let dom = RectDomain::new(p.a, p.b, p.m, p.n)?;
    let cov = covariance_eigs(p.law, &dom, p.source)?;
    let mut rng = StreamRng::keyed(p.seed, &[StreamTag::Field as u64]);
    let field = sample_field(&cov, &dom, &mut rng)?;
    let trace = trace_partial_sums(p.law, &dom, p.modes)?;
    let sobolev = match p.law {
        CovarianceLaw::InversePower(_) => Some(sobolev_energy(p.law, p.sobolev_s, &dom, p.modes)?),
        _ => None,
    };
    Ok(FieldReport { field, trace, sobolev })
}

const KEYS: &[&str] = &["law", "a", "b", "m", "n", "eigs", "modes", "sobolev_s"];

fn params(config: &ExperimentConfig) -> Result<FieldParams> {
    config.check_keys("field", KEYS)?;
    let d = FieldParams::default();
    let source = match config.get::<String>("eigs")?.as_deref() {
        None | Some("continuous") => EigenSource::Continuous,
        Some("discrete") => EigenSource::Discrete,
        Some(other) => return Err(Error::Config(format!("eigs must be continuous or discrete, got '{other}'"))),
    };
    let law = match config.get::<String>("law")? {
        Some(s) => s.parse()?,
        None => d.law,
    };
    Ok(FieldParams {
        law,
        a: config.get_or("a", d.a)?,
        b: config.get_or("b", d.b)?,
        m: config.get_or("m", d.m)?,
        n: config.get_or("n", d.n)?,
        source,
        modes: config.get_or("modes", d.modes)?,
        sobolev_s: config.get_or("sobolev_s", d.sobolev_s)?,
        seed: config.seed()?,
    })
}

pub(super) fn cmd_field(config: &ExperimentConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let p = params(config)?;
    let report = field_experiment(&p).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Config(msg),
        other => other,
    })?;
    out.write_file(dir, "field.csv", |w| report.field.write_csv(w))?;
    out.write_file(dir, "trace.csv", |w| report.trace.write_csv(w))?;
    out.line(format!("law: {}", p.law));
    out.line(format!("trace: {}", report.trace.verdict));
    out.passed &= report.trace.numeric_consistent;
    match &report.sobolev {
        Some(s) => {
            out.write_file(dir, "sobolev.csv", |w| s.write_csv(w))?;
            out.line(format!("sobolev s={}: {}", p.sobolev_s, s.verdict));
            out.passed &= s.numeric_consistent;
        }
        None => out.line("sobolev: not applicable"),
    }
    if !out.passed {
        out.line("partial sums inconsistent with the analytic verdict");
    }
    Ok(())
}
