//! Error norms, observed orders, Ritz projection on nested meshes, and the
//! convergence, stability and error-splitting studies built on them.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{self, Assembler, FeFunction, FemError};
use crate::field::ScalarField;
use crate::linalg::{apply_dirichlet, cg_solve, CgOptions, LinalgError};
use crate::mesh::{self, Mesh, MeshError};
use crate::mms::ManufacturedCase;
use crate::quadrature::DUNAVANT_4;
use crate::scheme::{self, RunConfig, SchemeError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("exact field has no gradient map; H1 errors need one")]
    MissingGradient,
    #[error("observed order needs positive inputs, got e_coarse = {e_coarse}, e_fine = {e_fine}, ratio = {ratio}")]
    NonPositive {
        e_coarse: f64,
        e_fine: f64,
        ratio: f64,
    },
    #[error("fine mesh is not a refinement of the coarse mesh")]
    NotNested,
    #[error("Ritz projection needs zero boundary values; fine node {node} has {value:e}")]
    NonZeroTrace { node: usize, value: f64 },
    #[error("{0}")]
    InvalidStudy(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

/// Errors below this level are treated as exact and get no order.
pub const ORDER_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1_seminorm: f64,
    pub h1: f64,
}

/// L2 and H1 errors of `f - exact(., t)` with the degree-4 triangle rule.
pub fn error_norms(
    f: &FeFunction,
    exact: &ScalarField,
    t: f64,
) -> Result<ErrorNorms, AnalysisError> {
    if !exact.has_gradient() {
        return Err(AnalysisError::MissingGradient);
    }
    let mesh = f.mesh();
    let (mut l2, mut semi) = (0.0, 0.0);
    for e in 0..mesh.num_triangles() {
        let v = mesh.vertices(e);
        let area = mesh.signed_area(e);
        let g = f.element_gradient(e);
        for (p, l, w) in DUNAVANT_4.map(&v) {
            let d = f.value_in(e, l) - exact.eval(p[0], p[1], t);
            let ge = exact.grad(p[0], p[1], t).expect("checked above");
            let (dx, dy) = (g[0] - ge[0], g[1] - ge[1]);
            l2 += area * w * d * d;
            semi += area * w * (dx * dx + dy * dy);
        }
    }
    Ok(ErrorNorms {
        l2: l2.sqrt(),
        h1_seminorm: semi.sqrt(),
        h1: (l2 + semi).sqrt(),
    })
}

/// L2 norm and H1 seminorm of a finite element function.
pub fn fe_norms(f: &FeFunction) -> (f64, f64) {
    let mesh = f.mesh();
    let (mut l2, mut semi) = (0.0, 0.0);
    for e in 0..mesh.num_triangles() {
        let area = mesh.signed_area(e);
        let g = f.element_gradient(e);
        semi += area * (g[0] * g[0] + g[1] * g[1]);
        for (_, l, w) in DUNAVANT_4.map(&mesh.vertices(e)) {
            let v = f.value_in(e, l);
            l2 += area * w * v * v;
        }
    }
    (l2.sqrt(), semi.sqrt())
}

/// `log(e_coarse / e_fine) / log(ratio)`.
pub fn observed_order(e_coarse: f64, e_fine: f64, ratio: f64) -> Result<f64, AnalysisError> {
    if !(e_coarse > 0.0 && e_fine > 0.0 && ratio > 0.0) || ratio == 1.0 {
        return Err(AnalysisError::NonPositive {
            e_coarse,
            e_fine,
            ratio,
        });
    }
    Ok((e_coarse / e_fine).ln() / ratio.ln())
}

fn order_or_none(e_coarse: f64, e_fine: f64, ratio: f64) -> Option<f64> {
    if e_coarse < ORDER_FLOOR || e_fine < ORDER_FLOOR {
        return None;
    }
    observed_order(e_coarse, e_fine, ratio).ok()
}

/// Ritz projection onto the P1 space of `coarse` of a function given on a
/// nested refinement. The right-hand side `(grad F, grad phi_i)` is exact
/// because coarse basis gradients are constant on every fine element.
pub fn ritz_project(
    coarse: &Arc<Mesh>,
    fine: &FeFunction,
    cg: &CgOptions,
) -> Result<FeFunction, AnalysisError> {
    let fine_mesh = fine.mesh();
    let ancestors = fine_mesh
        .ancestor_elements(coarse)
        .ok_or(AnalysisError::NotNested)?;
    for node in fine_mesh.boundary_nodes() {
        let value = fine.coeffs()[node];
        if value.abs() > 1e-10 {
            return Err(AnalysisError::NonZeroTrace { node, value });
        }
    }
    if fine.is_on(coarse) {
        return Ok(FeFunction::new(Arc::clone(coarse), fine.coeffs().to_vec())?);
    }

    let mut rhs = vec![0.0; coarse.num_nodes()];
    for (e, &parent) in ancestors.iter().enumerate() {
        let gf = fine.element_gradient(e);
        let area = fine_mesh.signed_area(e);
        let gc = fem::basis_gradients(&coarse.vertices(parent));
        for (k, &i) in coarse.triangles()[parent].iter().enumerate() {
            rhs[i] += area * (gf[0] * gc[k][0] + gf[1] * gc[k][1]);
        }
    }
    let a = Assembler::new(Arc::clone(coarse)).stiffness();
    let constraints: Vec<(usize, f64)> = coarse
        .boundary_nodes()
        .into_iter()
        .map(|i| (i, 0.0))
        .collect();
    let (a, rhs) = apply_dirichlet(&a, &rhs, &constraints)?;
    let (mut x, _) = cg_solve(&a, &rhs, &vec![0.0; rhs.len()], cg)?;
    for &(i, _) in &constraints {
        x[i] = 0.0;
    }
    Ok(FeFunction::new(Arc::clone(coarse), x)?)
}

/// Final-time errors plus maxima over steps `1..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorReport {
    pub l2_u: f64,
    pub h1_u: f64,
    pub l2_phi: f64,
    pub h1_phi: f64,
    pub max_l2_u: f64,
    pub max_l2_phi: f64,
    pub max_h1_u: f64,
    pub max_h1_phi: f64,
    /// Largest nodal |U| over all steps.
    pub max_abs_u: f64,
}

impl ErrorReport {
    pub fn is_finite(&self) -> bool {
        [
            self.l2_u,
            self.h1_u,
            self.l2_phi,
            self.h1_phi,
            self.max_l2_u,
            self.max_l2_phi,
            self.max_h1_u,
            self.max_h1_phi,
            self.max_abs_u,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Runs a manufactured case on the unit square and measures errors at every
/// time level.
pub fn solve_case(
    case: &ManufacturedCase,
    cfg: &RunConfig,
) -> Result<(scheme::RunResult, ErrorReport), AnalysisError> {
    let mesh = Arc::new(mesh::unit_square_mesh(cfg.n_mesh)?);
    solve_case_on(case, mesh, cfg)
}

pub fn solve_case_on(
    case: &ManufacturedCase,
    mesh: Arc<Mesh>,
    cfg: &RunConfig,
) -> Result<(scheme::RunResult, ErrorReport), AnalysisError> {
    let mut report = ErrorReport::default();
    let mut failure = None;
    let result = scheme::run_on_mesh(mesh, &case.spec, cfg, |state| {
        report.max_abs_u = report.max_abs_u.max(state.u.max_abs());
        if state.n == 0 || failure.is_some() {
            return;
        }
        match (
            error_norms(&state.u, &case.exact_u, state.t),
            error_norms(&state.phi, &case.exact_phi, state.t),
        ) {
            (Ok(eu), Ok(ep)) => {
                report.max_l2_u = report.max_l2_u.max(eu.l2);
                report.max_h1_u = report.max_h1_u.max(eu.h1);
                report.max_l2_phi = report.max_l2_phi.max(ep.l2);
                report.max_h1_phi = report.max_h1_phi.max(ep.h1);
                report.l2_u = eu.l2;
                report.h1_u = eu.h1;
                report.l2_phi = ep.l2;
                report.h1_phi = ep.h1;
            }
            (Err(e), _) | (_, Err(e)) => failure = Some(e),
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok((result, report)),
    }
}

fn thread_pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Space,
    Time,
}

/// Parameters of a convergence study. Along the chosen axis the mesh count
/// doubles (space) or the step halves (time) at each level; the other
/// parameter stays fixed.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub axis: Axis,
    pub levels: usize,
    pub n_mesh: usize,
    pub tau: f64,
    pub t_final: f64,
    pub cg: CgOptions,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n_mesh: usize,
    pub tau: f64,
    /// `1/n` for space studies, `tau` for time studies.
    pub resolution: f64,
    pub errors: ErrorReport,
    pub order_l2_u: Option<f64>,
    pub order_h1_u: Option<f64>,
    pub order_l2_phi: Option<f64>,
    pub order_h1_phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub case: String,
    pub axis: Axis,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    fn from_errors(case: &str, axis: Axis, cells: Vec<(usize, f64, f64, ErrorReport)>) -> Self {
        let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(cells.len());
        for (n_mesh, tau, resolution, errors) in cells {
            let prev = rows.last();
            let order = |pick: fn(&ErrorReport) -> f64| {
                prev.and_then(|p| {
                    order_or_none(pick(&p.errors), pick(&errors), p.resolution / resolution)
                })
            };
            let row = ConvergenceRow {
                n_mesh,
                tau,
                resolution,
                order_l2_u: order(|e| e.l2_u),
                order_h1_u: order(|e| e.h1_u),
                order_l2_phi: order(|e| e.l2_phi),
                order_h1_phi: order(|e| e.h1_phi),
                errors,
            };
            rows.push(row);
        }
        Self {
            case: case.to_string(),
            axis,
            rows,
        }
    }

    pub fn to_csv(&self, params: &[(&str, String)]) -> String {
        let mut out = header_comment(params);
        out.push_str("n_mesh,tau,resolution,l2_u,h1_u,l2_phi,h1_phi,order_l2_u,order_h1_u,order_l2_phi,order_h1_phi\n");
        for r in &self.rows {
            let e = &r.errors;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.n_mesh,
                sci(r.tau),
                sci(r.resolution),
                sci(e.l2_u),
                sci(e.h1_u),
                sci(e.l2_phi),
                sci(e.h1_phi),
                opt(r.order_l2_u),
                opt(r.order_h1_u),
                opt(r.order_l2_phi),
                opt(r.order_h1_phi)
            )
            .unwrap();
        }
        out
    }
}

pub fn convergence_study(
    case: &ManufacturedCase,
    cfg: &StudyConfig,
) -> Result<ConvergenceTable, AnalysisError> {
    if cfg.levels < 3 {
        return Err(AnalysisError::InvalidStudy(format!(
            "a convergence study needs at least 3 levels, got {}",
            cfg.levels
        )));
    }
    let case = case.clone().with_final_time(cfg.t_final);
    let params: Vec<(usize, f64, f64)> = (0..cfg.levels)
        .map(|k| match cfg.axis {
            Axis::Space => {
                let n = cfg.n_mesh << k;
                (n, cfg.tau, 1.0 / n as f64)
            }
            Axis::Time => {
                let tau = cfg.tau / (1u64 << k) as f64;
                (cfg.n_mesh, tau, tau)
            }
        })
        .collect();
    let cells = thread_pool(cfg.jobs).install(|| {
        params
            .par_iter()
            .map(|&(n, tau, res)| {
                let mut run = RunConfig::new(n, tau);
                run.rel_tol = cfg.cg.rel_tol;
                run.max_iter = cfg.cg.max_iter;
                run.precond = cfg.cg.precond;
                solve_case(&case, &run).map(|(_, e)| (n, tau, res, e))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(ConvergenceTable::from_errors(case.name, cfg.axis, cells))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCell {
    pub n_mesh: usize,
    pub tau: f64,
    pub errors: Option<ErrorReport>,
    pub finite: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityTable {
    pub case: String,
    pub t_final: f64,
    pub cells: Vec<StabilityCell>,
}

impl StabilityTable {
    pub fn to_csv(&self, params: &[(&str, String)]) -> String {
        let mut out = header_comment(params);
        out.push_str(
            "n_mesh,tau,l2_u,h1_u,l2_phi,h1_phi,max_l2_u,max_l2_phi,max_abs_u,finite,failure\n",
        );
        for c in &self.cells {
            let e = c.errors.unwrap_or(ErrorReport {
                l2_u: f64::NAN,
                h1_u: f64::NAN,
                l2_phi: f64::NAN,
                h1_phi: f64::NAN,
                max_l2_u: f64::NAN,
                max_l2_phi: f64::NAN,
                max_h1_u: f64::NAN,
                max_h1_phi: f64::NAN,
                max_abs_u: f64::NAN,
            });
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.n_mesh,
                sci(c.tau),
                sci(e.l2_u),
                sci(e.h1_u),
                sci(e.l2_phi),
                sci(e.h1_phi),
                sci(e.max_l2_u),
                sci(e.max_l2_phi),
                sci(e.max_abs_u),
                u8::from(c.finite),
                c.failure.as_deref().unwrap_or("").replace([',', '\n'], ";")
            )
            .unwrap();
        }
        out
    }
}

/// Runs every `(n, tau)` pair; a failing or diverging cell is recorded, never
/// fatal.
pub fn stability_sweep(
    case: &ManufacturedCase,
    meshes: &[usize],
    taus: &[f64],
    t_final: f64,
    cg: &CgOptions,
    jobs: usize,
) -> Result<StabilityTable, AnalysisError> {
    if meshes.is_empty() || taus.is_empty() {
        return Err(AnalysisError::InvalidStudy(
            "stability sweep needs nonempty mesh and tau lists".into(),
        ));
    }
    let case = case.clone().with_final_time(t_final);
    let pairs: Vec<(usize, f64)> = meshes
        .iter()
        .flat_map(|&n| taus.iter().map(move |&tau| (n, tau)))
        .collect();
    let cells = thread_pool(jobs).install(|| {
        pairs
            .par_iter()
            .map(|&(n, tau)| {
                let mut run = RunConfig::new(n, tau);
                run.rel_tol = cg.rel_tol;
                run.max_iter = cg.max_iter;
                run.precond = cg.precond;
                match solve_case(&case, &run) {
                    Ok((_, e)) => StabilityCell {
                        n_mesh: n,
                        tau,
                        finite: e.is_finite(),
                        errors: Some(e),
                        failure: None,
                    },
                    Err(err) => StabilityCell {
                        n_mesh: n,
                        tau,
                        errors: None,
                        finite: false,
                        failure: Some(err.to_string()),
                    },
                }
            })
            .collect()
    });
    Ok(StabilityTable {
        case: case.name.to_string(),
        t_final,
        cells,
    })
}

#[derive(Debug, Clone)]
pub struct SplittingConfig {
    /// Coarse mesh counts `n` (h = 1/n).
    pub meshes: Vec<usize>,
    pub taus: Vec<f64>,
    /// Reference mesh is `2^ref_refinements` times finer than each coarse
    /// mesh. At least 2 is needed for meaningful numbers; 0 compares each
    /// run with itself.
    pub ref_refinements: usize,
    pub t_final: f64,
    pub cg: CgOptions,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCell {
    pub n_mesh: usize,
    pub h: f64,
    pub tau: f64,
    /// `||U_h - R_h U_ref||_{L2}` at the final time.
    pub e_h_l2: f64,
    /// `||Phi_h - I_h Phi_ref||_{L2}` at the final time.
    pub eta_h_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalRow {
    pub tau: f64,
    /// Mesh count of the reference run the row was measured on.
    pub n_ref: usize,
    /// `||U_ref - u||` at the final time.
    pub e_l2: f64,
    pub e_h1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplittingReport {
    pub case: String,
    pub cells: Vec<SplitCell>,
    pub temporal: Vec<TemporalRow>,
}

impl SplittingReport {
    pub fn cell(&self, n_mesh: usize, tau: f64) -> Option<&SplitCell> {
        self.cells
            .iter()
            .find(|c| c.n_mesh == n_mesh && c.tau == tau)
    }

    pub fn to_csv(&self, params: &[(&str, String)]) -> String {
        let mut out = header_comment(params);
        out.push_str("kind,n_mesh,h,tau,e_h_l2,eta_h_l2,e_l2,e_h1\n");
        for c in &self.cells {
            writeln!(
                out,
                "spatial,{},{},{},{},{},,",
                c.n_mesh,
                sci(c.h),
                sci(c.tau),
                sci(c.e_h_l2),
                sci(c.eta_h_l2)
            )
            .unwrap();
        }
        for r in &self.temporal {
            writeln!(
                out,
                "temporal,{},,{},,,{},{}",
                r.n_ref,
                sci(r.tau),
                sci(r.e_l2),
                sci(r.e_h1)
            )
            .unwrap();
        }
        out
    }
}

/// Splits the error of the fully discrete scheme into a spatial part
/// measured against a nested reference run at the same step (which stands
/// in for the time-discrete solution) and a temporal part of the reference
/// run against the exact solution.
pub fn splitting_study(
    case: &ManufacturedCase,
    cfg: &SplittingConfig,
) -> Result<SplittingReport, AnalysisError> {
    if cfg.meshes.is_empty() || cfg.taus.is_empty() {
        return Err(AnalysisError::InvalidStudy(
            "splitting study needs mesh and tau values".into(),
        ));
    }
    let case = case.clone().with_final_time(cfg.t_final);
    let pairs: Vec<(usize, f64)> = cfg
        .meshes
        .iter()
        .flat_map(|&n| cfg.taus.iter().map(move |&tau| (n, tau)))
        .collect();
    let finest = *cfg.meshes.iter().max().expect("nonempty");

    let results = thread_pool(cfg.jobs).install(|| {
        pairs
            .par_iter()
            .map(|&(n, tau)| split_cell(&case, n, tau, cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut cells = Vec::with_capacity(results.len());
    let mut temporal = Vec::new();
    for (cell, reference) in results {
        if cell.n_mesh == finest {
            temporal.push(reference);
        }
        cells.push(cell);
    }
    Ok(SplittingReport {
        case: case.name.to_string(),
        cells,
        temporal,
    })
}

fn split_cell(
    case: &ManufacturedCase,
    n: usize,
    tau: f64,
    cfg: &SplittingConfig,
) -> Result<(SplitCell, TemporalRow), AnalysisError> {
    let coarse = Arc::new(mesh::unit_square_mesh(n)?);
    let mut fine = Arc::clone(&coarse);
    for _ in 0..cfg.ref_refinements {
        fine = Arc::new(mesh::refine_uniform(&fine));
    }
    let mut run = RunConfig::new(n, tau);
    run.rel_tol = cfg.cg.rel_tol;
    run.max_iter = cfg.cg.max_iter;
    run.precond = cfg.cg.precond;

    let coarse_run = scheme::run_on_mesh(Arc::clone(&coarse), &case.spec, &run, |_| {})?;
    let reference = if cfg.ref_refinements == 0 {
        coarse_run.clone()
    } else {
        scheme::run_on_mesh(Arc::clone(&fine), &case.spec, &run, |_| {})?
    };
    let uh = &coarse_run.final_state.u;
    let phih = &coarse_run.final_state.phi;
    let u_ref = &reference.final_state.u;
    let phi_ref = &reference.final_state.phi;

    let ritz = ritz_project(&coarse, u_ref, &run_cg(&run))?;
    let e_h = difference(uh, &ritz);
    let phi_nodal = fem::restrict_nodal(phi_ref, &coarse).ok_or(AnalysisError::NotNested)?;
    let eta_h = difference(phih, &phi_nodal);

    let t = reference.final_state.t;
    let eu = error_norms(u_ref, &case.exact_u, t)?;
    Ok((
        SplitCell {
            n_mesh: n,
            h: 1.0 / n as f64,
            tau,
            e_h_l2: fe_norms(&e_h).0,
            eta_h_l2: fe_norms(&eta_h).0,
        },
        TemporalRow {
            tau,
            n_ref: n << cfg.ref_refinements,
            e_l2: eu.l2,
            e_h1: eu.h1,
        },
    ))
}

fn run_cg(run: &RunConfig) -> CgOptions {
    CgOptions {
        rel_tol: run.rel_tol,
        max_iter: run.max_iter,
        precond: run.precond,
    }
}

fn difference(a: &FeFunction, b: &FeFunction) -> FeFunction {
    let coeffs = a
        .coeffs()
        .iter()
        .zip(b.coeffs())
        .map(|(x, y)| x - y)
        .collect();
    FeFunction::new(Arc::clone(a.mesh()), coeffs).expect("same mesh")
}

/// Scientific notation with 13 significant digits.
pub fn sci(v: f64) -> String {
    format!("{v:.12e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

/// `# key=value ...` line recording every input of a study.
pub fn header_comment(params: &[(&str, String)]) -> String {
    let mut out = String::from("#");
    for (k, v) in params {
        write!(out, " {k}={v}").unwrap();
    }
    out.push('\n');
    out
}
