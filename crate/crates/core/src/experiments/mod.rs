//! Seeded experiment drivers behind the `hilbert-da` command line.
//!
//! Each command reads an [`ExperimentConfig`], writes CSV reports into an
//! output directory and returns an [`Outcome`] whose `passed` flag reflects
//! the experiment's acceptance threshold.

mod checks;
mod config;
mod curse;
mod enkf;
mod field;
mod lln;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use checks::{char_fn_suite, etkf_suite, osi_suite, CharFnParams, CharFnSuite, EtkfParams, EtkfSuite, OsiSuite};
pub use config::{check_increasing, ExperimentConfig};
pub use curse::{curse_experiment, CurseParams, CurseReport, CurseRow, CurseVerdict};
pub use enkf::{enkf_convergence, filter_log, paired_members, CycleLog, ModelKind, TwinParams};
pub use field::{field_experiment, FieldParams, FieldReport};
pub use lln::{cov_lln_experiment, lln_sources, CovLlnReport};

use crate::Result;

/// Default sample sizes for the law-of-large-numbers commands.
pub fn default_sizes() -> Vec<usize> {
    (4..=12).map(|k| 1usize << k).collect()
}

/// Below this many replicates the fitted slopes are too noisy to trust.
pub const MIN_RELIABLE_REPLICATES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Field,
    Lln,
    CovLln,
    EnkfConverge,
    Curse,
    EtkfCheck,
    CharFn,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Field => "field",
            Command::Lln => "lln",
            Command::CovLln => "cov-lln",
            Command::EnkfConverge => "enkf-converge",
            Command::Curse => "curse",
            Command::EtkfCheck => "etkf-check",
            Command::CharFn => "char-fn",
        }
    }
}

/// Result of one command: report lines for stdout, logged warnings and
/// the pass/fail verdict against the experiment's threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub passed: bool,
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    fn warn(&mut self, s: impl Into<String>) {
        let s = s.into();
        log::warn!("{s}");
        self.warnings.push(s);
    }

    fn write_file(&mut self, dir: &Path, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }
}

pub(crate) fn pass_fail(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Runs `command` with `config`, writing reports to `out_dir` (default: the
/// `out` key, else the current directory).
pub fn run(command: Command, config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Outcome> {
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => config.out_dir().unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&dir)?;
    let mut outcome = Outcome { passed: true, ..Default::default() };
    match command {
        Command::Field => field::cmd_field(config, &dir, &mut outcome)?,
        Command::Lln => lln::cmd_lln(config, &dir, &mut outcome)?,
        Command::CovLln => lln::cmd_cov_lln(config, &dir, &mut outcome)?,
        Command::EnkfConverge => enkf::cmd_enkf_converge(config, &dir, &mut outcome)?,
        Command::Curse => curse::cmd_curse(config, &dir, &mut outcome)?,
        Command::EtkfCheck => checks::cmd_etkf_check(config, &dir, &mut outcome)?,
        Command::CharFn => checks::cmd_char_fn(config, &dir, &mut outcome)?,
    }
    Ok(outcome)
}

fn check_replicates(replicates: usize, outcome: &mut Outcome) -> Result<()> {
    if replicates == 0 {
        return Err(crate::Error::Config("replicates must be positive".into()));
    }
    if replicates < MIN_RELIABLE_REPLICATES {
        outcome.warn(format!(
            "only {replicates} replicates; fitted slopes will be noisy (use at least {MIN_RELIABLE_REPLICATES})"
        ));
    }
    Ok(())
}
