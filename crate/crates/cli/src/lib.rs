//! Command-line front end for the `joule-fem` solver.

pub mod config;
pub mod settings;

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::Parser;
use joule_fem::analysis::{
    convergence_study, header_comment, sci, solve_case_on, splitting_study, stability_sweep,
    AnalysisError, Axis, ConvergenceTable, ErrorReport, SplittingConfig, StudyConfig,
};
use joule_fem::linalg::CgOptions;
use joule_fem::mesh::{self, read_mesh, write_mesh, Mesh};
use joule_fem::mms::{case_by_name, verify_consistency, ManufacturedCase};
use joule_fem::scheme::{RunConfig, SchemeError};
use joule_fem::FeFunction;
use thiserror::Error;

pub use settings::{Cli, CliConfig, Command};

/// Sample count of `verify-mms` and the residual it must stay under.
pub const MMS_SAMPLES: usize = 1000;
pub const MMS_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 1 for bad input, 2 for a failed run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Solver(_) | CliError::Io(_) => 2,
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::InvalidStudy(m) => CliError::Validation(m),
            AnalysisError::Scheme(SchemeError::NonIntegralSteps { .. }) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Solver(other.to_string()),
        }
    }
}

/// CSV body and the table printed for people.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub csv: String,
    pub table: String,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("cannot write {}: {e}", path.display()))
}

fn cg_options(cfg: &CliConfig) -> CgOptions {
    CgOptions {
        rel_tol: cfg.tol,
        ..CgOptions::default()
    }
}

fn case(cfg: &CliConfig) -> Result<ManufacturedCase, CliError> {
    case_by_name(&cfg.case)
        .ok_or_else(|| CliError::Validation(format!("unknown case `{}`", cfg.case)))
}

/// Right-aligned text table.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out += &line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    );
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

fn short(v: f64) -> String {
    format!("{v:.4e}")
}

fn order(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |o| format!("{o:.3}"))
}

const REPORT_COLUMNS: &str =
    "l2_u,h1_u,l2_phi,h1_phi,max_l2_u,max_l2_phi,max_h1_u,max_h1_phi,max_abs_u";

fn report_fields(e: &ErrorReport) -> Vec<f64> {
    vec![
        e.l2_u,
        e.h1_u,
        e.l2_phi,
        e.h1_phi,
        e.max_l2_u,
        e.max_l2_phi,
        e.max_h1_u,
        e.max_h1_phi,
        e.max_abs_u,
    ]
}

fn solve(cfg: &CliConfig) -> Result<Output, CliError> {
    let case = case(cfg)?.with_final_time(cfg.t_final);
    let mesh: Arc<Mesh> = match &cfg.mesh {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read mesh {}: {e}", path.display()))
            })?;
            Arc::new(
                read_mesh(&text)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
            )
        }
        None => Arc::new(
            mesh::unit_square_mesh(cfg.meshes[0])
                .map_err(|e| CliError::Validation(e.to_string()))?,
        ),
    };
    if let Some(path) = &cfg.write_mesh {
        std::fs::write(path, write_mesh(&mesh)).map_err(|e| io_err(path, e))?;
    }
    let mut run = RunConfig::new(cfg.meshes[0], cfg.taus[0]);
    run.rel_tol = cfg.tol;
    let (result, errors) = solve_case_on(&case, Arc::clone(&mesh), &run)?;
    if !errors.is_finite() {
        return Err(CliError::Solver(
            "the run produced non-finite errors".into(),
        ));
    }
    if let Some(path) = &cfg.fields {
        let text = node_values(&result.final_state.u, &result.final_state.phi);
        std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    }

    let mut csv = header_comment(&cfg.header_params());
    csv += &format!("nodes,triangles,h,tau,T,steps,{REPORT_COLUMNS}\n");
    let mut row = vec![
        mesh.num_nodes().to_string(),
        mesh.num_triangles().to_string(),
        sci(mesh.h()),
        sci(cfg.taus[0]),
        sci(cfg.t_final),
        result.temperature_solves.to_string(),
    ];
    row.extend(report_fields(&errors).into_iter().map(sci));
    csv += &(row.join(",") + "\n");

    let names = [
        "L2 error U",
        "H1 error U",
        "L2 error Phi",
        "H1 error Phi",
        "max L2 U",
        "max L2 Phi",
        "max H1 U",
        "max H1 Phi",
        "max |U|",
    ];
    let rows: Vec<Vec<String>> = names
        .iter()
        .zip(report_fields(&errors))
        .map(|(n, v)| vec![n.to_string(), short(v)])
        .collect();
    let table = format!(
        "case {} on {} nodes, tau = {}, T = {}, {} steps\n{}",
        case.name,
        mesh.num_nodes(),
        cfg.taus[0],
        cfg.t_final,
        result.temperature_solves,
        render_table(&["quantity", "value"], &rows)
    );
    Ok(Output { csv, table })
}

/// `node,x,y,boundary,u,phi` with one line per mesh node.
pub fn node_values(u: &FeFunction, phi: &FeFunction) -> String {
    let mesh = u.mesh();
    let mut out = String::from("node,x,y,boundary,u,phi\n");
    for (i, p) in mesh.nodes().iter().enumerate() {
        out += &format!(
            "{i},{},{},{},{},{}\n",
            sci(p[0]),
            sci(p[1]),
            u8::from(mesh.is_boundary(i)),
            sci(u.coeffs()[i]),
            sci(phi.coeffs()[i])
        );
    }
    out
}

fn convergence(cfg: &CliConfig, axis: Axis) -> Result<Output, CliError> {
    let study = StudyConfig {
        axis,
        levels: cfg.levels,
        n_mesh: cfg.meshes[0],
        tau: cfg.taus[0],
        t_final: cfg.t_final,
        cg: cg_options(cfg),
        jobs: cfg.jobs,
    };
    let table = convergence_study(&case(cfg)?, &study)?;
    Ok(Output {
        csv: table.to_csv(&cfg.header_params()),
        table: convergence_table(&table),
    })
}

fn convergence_table(t: &ConvergenceTable) -> String {
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n_mesh.to_string(),
                short(r.tau),
                short(r.errors.l2_u),
                order(r.order_l2_u),
                short(r.errors.h1_u),
                order(r.order_h1_u),
                short(r.errors.l2_phi),
                order(r.order_l2_phi),
                short(r.errors.h1_phi),
                order(r.order_h1_phi),
            ]
        })
        .collect();
    render_table(
        &[
            "n", "tau", "L2 U", "order", "H1 U", "order", "L2 Phi", "order", "H1 Phi", "order",
        ],
        &rows,
    )
}

fn stability(cfg: &CliConfig) -> Result<Output, CliError> {
    let t = stability_sweep(
        &case(cfg)?,
        &cfg.meshes,
        &cfg.taus,
        cfg.t_final,
        &cg_options(cfg),
        cfg.jobs,
    )?;
    let rows: Vec<Vec<String>> = t
        .cells
        .iter()
        .map(|c| {
            let (l2, h1, mx) = c.errors.map_or(("-".into(), "-".into(), "-".into()), |e| {
                (short(e.l2_u), short(e.h1_u), short(e.max_abs_u))
            });
            let status = if c.finite {
                "ok".to_string()
            } else {
                c.failure.clone().unwrap_or("non-finite".into())
            };
            vec![c.n_mesh.to_string(), short(c.tau), l2, h1, mx, status]
        })
        .collect();
    Ok(Output {
        csv: t.to_csv(&cfg.header_params()),
        table: render_table(&["n", "tau", "L2 U", "H1 U", "max |U|", "status"], &rows),
    })
}

fn split(cfg: &CliConfig) -> Result<Output, CliError> {
    let study = SplittingConfig {
        meshes: cfg.meshes.clone(),
        taus: cfg.taus.clone(),
        ref_refinements: cfg.ref_refinements,
        t_final: cfg.t_final,
        cg: cg_options(cfg),
        jobs: cfg.jobs,
    };
    let report = splitting_study(&case(cfg)?, &study)?;
    let spatial: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.n_mesh.to_string(),
                short(c.tau),
                short(c.e_h_l2),
                short(c.eta_h_l2),
            ]
        })
        .collect();
    let temporal: Vec<Vec<String>> = report
        .temporal
        .iter()
        .map(|r| {
            vec![
                r.n_ref.to_string(),
                short(r.tau),
                short(r.e_l2),
                short(r.e_h1),
            ]
        })
        .collect();
    let table = format!(
        "spatial part\n{}\ntemporal part\n{}",
        render_table(&["n", "tau", "L2 e_h", "L2 eta_h"], &spatial),
        render_table(&["n_ref", "tau", "L2 e", "H1 e"], &temporal)
    );
    Ok(Output {
        csv: report.to_csv(&cfg.header_params()),
        table,
    })
}

fn verify(cfg: &CliConfig) -> Result<Output, CliError> {
    let residual = verify_consistency(&case(cfg)?, MMS_SAMPLES, cfg.seed);
    let passed = residual <= MMS_TOLERANCE;
    let mut csv = header_comment(&cfg.header_params());
    csv += "case,samples,residual,tolerance,passed\n";
    csv += &format!(
        "{},{MMS_SAMPLES},{},{},{passed}\n",
        cfg.case,
        sci(residual),
        sci(MMS_TOLERANCE)
    );
    let table = render_table(
        &["case", "samples", "residual", "tolerance", "result"],
        &[vec![
            cfg.case.clone(),
            MMS_SAMPLES.to_string(),
            short(residual),
            short(MMS_TOLERANCE),
            if passed { "pass" } else { "FAIL" }.into(),
        ]],
    );
    if !passed {
        return Err(CliError::Solver(format!(
            "case `{}` forcing is inconsistent: residual {residual:e} exceeds {MMS_TOLERANCE:e}",
            cfg.case
        )));
    }
    Ok(Output { csv, table })
}

/// Runs the configured command.
pub fn execute(cfg: &CliConfig) -> Result<Output, CliError> {
    match cfg.command {
        Command::Solve => solve(cfg),
        Command::ConvergeSpace => convergence(cfg, Axis::Space),
        Command::ConvergeTime => convergence(cfg, Axis::Time),
        Command::Stability => stability(cfg),
        Command::Split => split(cfg),
        Command::VerifyMms => verify(cfg),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    1
                }
            };
            return code;
        }
    };
    let result = CliConfig::from_args(cli.command).and_then(|cfg| {
        let out = execute(&cfg)?;
        Ok((cfg, out))
    });
    match result {
        Ok((cfg, out)) => {
            let written = match &cfg.out {
                Some(path) => std::fs::write(path, &out.csv)
                    .map_err(|e| io_err(path, e))
                    .map(|_| writeln!(stdout, "{}wrote {}", out.table, path.display())),
                None => {
                    Ok(write!(stderr, "{}", out.table).and_then(|_| write!(stdout, "{}", out.csv)))
                }
            };
            match written {
                Ok(_) => 0,
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    e.exit_code()
                }
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
