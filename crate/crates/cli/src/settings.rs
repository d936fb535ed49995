//! Command-line flags merged with an optional config file into a validated
//! [`CliConfig`].

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use joule_fem::mms::CASE_NAMES;
use joule_fem::scheme::step_count;

use crate::config::{parse_config, ConfigFile};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "joule-fem",
    version,
    about = "Finite element solver and convergence studies for Joule heating"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Single run of a manufactured case; reports final and maximal errors.
    Solve(Flags),
    /// Mesh refinement study at fixed step.
    ConvergeSpace(Flags),
    /// Step halving study on a fixed mesh.
    ConvergeTime(Flags),
    /// Sweep of every (n, tau) pair, recording blow-up instead of aborting.
    Stability(Flags),
    /// Spatial and temporal error split against a finer reference run.
    Split(Flags),
    /// Finite-difference check of the manufactured forcings.
    VerifyMms(Flags),
}

/// Every flag is accepted as text so that values from the command line and
/// the config file go through the same parser.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Manufactured case (trig or linear).
    #[arg(long)]
    pub case: Option<String>,
    /// Mesh count per side; a comma list for stability and split.
    #[arg(long)]
    pub n: Option<String>,
    /// Time step; a comma list for stability and split.
    #[arg(long)]
    pub tau: Option<String>,
    /// Final time.
    #[arg(long = "T")]
    pub t_final: Option<String>,
    /// Number of levels in a convergence study (at least 3).
    #[arg(long)]
    pub levels: Option<String>,
    /// Uniform refinements of the reference mesh in a splitting study.
    #[arg(long = "ref")]
    pub ref_refinements: Option<String>,
    /// CSV output path; CSV goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<String>,
    /// Worker threads for study cells.
    #[arg(long)]
    pub jobs: Option<String>,
    /// Relative residual tolerance of the linear solver.
    #[arg(long)]
    pub tol: Option<String>,
    /// Config file of `key = value` lines; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for randomized checks.
    #[arg(long)]
    pub seed: Option<String>,
    /// Write final nodal values of U and Phi to this CSV (solve only).
    #[arg(long)]
    pub fields: Option<String>,
    /// Read the mesh from this file instead of the unit square (solve only).
    #[arg(long)]
    pub mesh: Option<String>,
    /// Write the mesh used by the run to this file (solve only).
    #[arg(long = "write-mesh")]
    pub write_mesh: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    ConvergeSpace,
    ConvergeTime,
    Stability,
    Split,
    VerifyMms,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::ConvergeSpace => "converge-space",
            Command::ConvergeTime => "converge-time",
            Command::Stability => "stability",
            Command::Split => "split",
            Command::VerifyMms => "verify-mms",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub command: Command,
    pub case: String,
    pub meshes: Vec<usize>,
    pub taus: Vec<f64>,
    pub t_final: f64,
    pub levels: usize,
    pub ref_refinements: usize,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub tol: f64,
    pub seed: u64,
    pub fields: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub write_mesh: Option<PathBuf>,
}

struct Defaults {
    n: &'static str,
    tau: &'static str,
    t_final: &'static str,
}

fn defaults(command: Command) -> Defaults {
    let (n, tau, t_final) = match command {
        Command::Solve => ("16", "0.01", "0.1"),
        Command::ConvergeSpace => ("8", "1e-4", "0.1"),
        Command::ConvergeTime => ("96", "0.1", "0.5"),
        Command::Stability => ("8,64", "0.5,0.25,0.0625,0.015625", "1"),
        Command::Split => ("8,16,32", "0.1,0.0125", "0.5"),
        Command::VerifyMms => ("16", "0.01", "0.1"),
    };
    Defaults { n, tau, t_final }
}

/// A raw value and where it came from, for error messages.
struct Raw<'a> {
    key: &'static str,
    value: &'a str,
    line: Option<usize>,
}

impl Raw<'_> {
    fn fail(&self, expected: &str) -> CliError {
        let origin = match self.line {
            Some(l) => format!("config key `{}` (line {l})", self.key),
            None => format!("--{}", self.key),
        };
        CliError::Validation(format!(
            "invalid value `{}` for {origin}: expected {expected}",
            self.value
        ))
    }

    fn positive_usize(&self) -> Result<usize, CliError> {
        self.value
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| self.fail("a positive integer"))
    }

    fn usize(&self) -> Result<usize, CliError> {
        self.value
            .parse()
            .map_err(|_| self.fail("a nonnegative integer"))
    }

    fn positive_f64(&self) -> Result<f64, CliError> {
        self.value
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v > 0.0)
            .ok_or_else(|| self.fail("a positive number"))
    }

    fn list<T>(&self, item: impl Fn(&Raw) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
        let items: Vec<&str> = self.value.split(',').map(str::trim).collect();
        if items.iter().any(|s| s.is_empty()) {
            return Err(self.fail("a comma-separated list without empty entries"));
        }
        items
            .into_iter()
            .map(|value| {
                item(&Raw {
                    key: self.key,
                    value,
                    line: self.line,
                })
            })
            .collect()
    }
}

fn flag_value<'a>(flags: &'a Flags, key: &str) -> Option<&'a String> {
    match key {
        "case" => flags.case.as_ref(),
        "n" => flags.n.as_ref(),
        "tau" => flags.tau.as_ref(),
        "T" => flags.t_final.as_ref(),
        "levels" => flags.levels.as_ref(),
        "ref" => flags.ref_refinements.as_ref(),
        "out" => flags.out.as_ref(),
        "jobs" => flags.jobs.as_ref(),
        "tol" => flags.tol.as_ref(),
        "seed" => flags.seed.as_ref(),
        "fields" => flags.fields.as_ref(),
        "mesh" => flags.mesh.as_ref(),
        "write-mesh" => flags.write_mesh.as_ref(),
        _ => None,
    }
}

fn lookup<'a>(flags: &'a Flags, file: &'a ConfigFile, key: &'static str) -> Option<Raw<'a>> {
    if let Some(v) = flag_value(flags, key) {
        return Some(Raw {
            key,
            value: v,
            line: None,
        });
    }
    file.get(key).map(|(value, line)| Raw {
        key,
        value,
        line: Some(line),
    })
}

fn lookup_or<'a>(
    flags: &'a Flags,
    file: &'a ConfigFile,
    key: &'static str,
    default: &'a str,
) -> Raw<'a> {
    lookup(flags, file, key).unwrap_or(Raw {
        key,
        value: default,
        line: None,
    })
}

impl CliConfig {
    pub fn from_args(args: CommandArgs) -> Result<Self, CliError> {
        let (command, flags) = match args {
            CommandArgs::Solve(f) => (Command::Solve, f),
            CommandArgs::ConvergeSpace(f) => (Command::ConvergeSpace, f),
            CommandArgs::ConvergeTime(f) => (Command::ConvergeTime, f),
            CommandArgs::Stability(f) => (Command::Stability, f),
            CommandArgs::Split(f) => (Command::Split, f),
            CommandArgs::VerifyMms(f) => (Command::VerifyMms, f),
        };
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Validation(format!("cannot read config file {}: {e}", path.display()))
                })?;
                parse_config(&text)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        Self::resolve(command, &flags, &file)
    }

    pub fn resolve(command: Command, flags: &Flags, file: &ConfigFile) -> Result<Self, CliError> {
        let d = defaults(command);
        let case = lookup_or(flags, file, "case", "trig").value.to_string();
        if !CASE_NAMES.contains(&case.as_str()) {
            return Err(CliError::Validation(format!(
                "unknown case `{case}` (expected one of {})",
                CASE_NAMES.join(", ")
            )));
        }
        let meshes = lookup_or(flags, file, "n", d.n).list(|r| r.positive_usize())?;
        let taus = lookup_or(flags, file, "tau", d.tau).list(|r| r.positive_f64())?;
        let t_final = lookup_or(flags, file, "T", d.t_final).positive_f64()?;
        let levels_default = if command == Command::ConvergeTime {
            "4"
        } else {
            "3"
        };
        let levels = lookup_or(flags, file, "levels", levels_default).positive_usize()?;
        let ref_refinements = lookup_or(flags, file, "ref", "2").usize()?;
        let default_jobs = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .to_string();
        let jobs = lookup_or(flags, file, "jobs", &default_jobs).positive_usize()?;
        let tol = lookup_or(flags, file, "tol", "1e-10").positive_f64()?;
        let seed = lookup_or(flags, file, "seed", "7")
            .value
            .parse::<u64>()
            .map_err(|_| lookup_or(flags, file, "seed", "").fail("an unsigned integer"))?;
        let path = |key| lookup(flags, file, key).map(|r| PathBuf::from(r.value));

        let cfg = CliConfig {
            command,
            case,
            meshes,
            taus,
            t_final,
            levels,
            ref_refinements,
            out: path("out"),
            jobs,
            tol,
            seed,
            fields: path("fields"),
            mesh: path("mesh"),
            write_mesh: path("write-mesh"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let single = matches!(
            self.command,
            Command::Solve | Command::ConvergeSpace | Command::ConvergeTime
        );
        if single && (self.meshes.len() != 1 || self.taus.len() != 1) {
            return Err(CliError::Validation(format!(
                "{} takes a single --n and --tau value",
                self.command
            )));
        }
        if self.command != Command::Solve
            && (self.fields.is_some() || self.mesh.is_some() || self.write_mesh.is_some())
        {
            return Err(CliError::Validation(
                "--fields, --mesh and --write-mesh apply to solve only".into(),
            ));
        }
        if matches!(self.command, Command::ConvergeSpace | Command::ConvergeTime) && self.levels < 3
        {
            return Err(CliError::Validation(format!(
                "--levels must be at least 3 to report orders, got {}",
                self.levels
            )));
        }
        if self.levels > 12 {
            return Err(CliError::Validation(format!(
                "--levels {} is too large (at most 12)",
                self.levels
            )));
        }
        if self.command == Command::VerifyMms {
            return Ok(());
        }
        for tau in self.step_sizes() {
            step_count(self.t_final, tau).map_err(|_| {
                CliError::Validation(format!(
                    "T / tau must be an integer: T = {} and tau = {tau} give {}",
                    self.t_final,
                    self.t_final / tau
                ))
            })?;
        }
        Ok(())
    }

    /// Every step size the command will run with.
    pub fn step_sizes(&self) -> Vec<f64> {
        match self.command {
            Command::ConvergeTime => (0..self.levels)
                .map(|k| self.taus[0] / (1u64 << k) as f64)
                .collect(),
            _ => self.taus.clone(),
        }
    }

    /// Every input that affects the CSV, in a fixed order.
    pub fn header_params(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[String]| v.join(",");
        let mut p = vec![
            ("command", self.command.to_string()),
            ("case", self.case.clone()),
        ];
        if self.command == Command::VerifyMms {
            p.push(("seed", self.seed.to_string()));
            return p;
        }
        p.push((
            "n",
            list(
                &self
                    .meshes
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>(),
            ),
        ));
        p.push((
            "tau",
            list(
                &self
                    .taus
                    .iter()
                    .map(|t| format!("{t:e}"))
                    .collect::<Vec<_>>(),
            ),
        ));
        p.push(("T", format!("{:e}", self.t_final)));
        match self.command {
            Command::ConvergeSpace | Command::ConvergeTime => {
                p.push(("levels", self.levels.to_string()))
            }
            Command::Split => p.push(("ref", self.ref_refinements.to_string())),
            _ => {}
        }
        if let Some(m) = &self.mesh {
            p.push(("mesh", m.display().to_string()));
        }
        p.push(("tol", format!("{:e}", self.tol)));
        p
    }
}
