//! Linearized semi-implicit Euler time stepping.
//!
//! At step `n` the potential is solved with the conductivity frozen at
//! `sigma(U^n)`, then one linear implicit heat step produces `U^{n+1}`:
//!
//! ```text
//! (sigma(U^n) grad Phi^n, grad xi) = (f_phi(t_n), xi),          Phi^n = g^n on the boundary
//! (M/tau + A) U^{n+1} = M U^n / tau + (sigma(U^n)|grad Phi^n|^2, xi) + (f_u(t_{n+1}), xi)
//! ```

use std::sync::Arc;

use thiserror::Error;

use crate::fem::{self, Assembler, FeFunction, FemError};
use crate::field::{ScalarField, SigmaModel};
use crate::linalg::{
    apply_dirichlet, cg_solve, CgOptions, LinalgError, Preconditioner, SparseMatrix,
};
use crate::mesh::{self, Mesh, MeshError};

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("final time must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("T / tau = {ratio} is not an integer (T = {t_final}, tau = {tau})")]
    NonIntegralSteps { t_final: f64, tau: f64, ratio: f64 },
    #[error(
        "initial temperature is {value:e} at boundary node {node}, must vanish on the boundary"
    )]
    InitialDataOnBoundary { node: usize, value: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("{stage} solve failed at step {step}: {source}")]
    Solver {
        step: usize,
        stage: &'static str,
        #[source]
        source: LinalgError,
    },
    #[error("non-finite {field} at step {step}")]
    NonFinite { step: usize, field: &'static str },
}

/// Coupled problem data. Forcings default to zero.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub sigma: SigmaModel,
    /// Potential boundary data, defined on the whole closed domain.
    pub g: ScalarField,
    pub u0: ScalarField,
    pub f_u: Option<ScalarField>,
    pub f_phi: Option<ScalarField>,
    pub t_final: f64,
}

impl ProblemSpec {
    pub fn new(sigma: SigmaModel, g: ScalarField, u0: ScalarField, t_final: f64) -> Self {
        Self {
            sigma,
            g,
            u0,
            f_u: None,
            f_phi: None,
            t_final,
        }
    }

    pub fn with_forcing(mut self, f_u: ScalarField, f_phi: ScalarField) -> Self {
        self.f_u = Some(f_u);
        self.f_phi = Some(f_phi);
        self
    }

    /// Checks `T > 0` and that `u0` vanishes at the boundary nodes of `mesh`.
    pub fn validate(&self, mesh: &Mesh) -> Result<(), SchemeError> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(SchemeError::NonPositiveHorizon(self.t_final));
        }
        for node in mesh.boundary_nodes() {
            let p = mesh.nodes()[node];
            let value = self.u0.eval(p[0], p[1], 0.0);
            if !(value.abs() <= 1e-12) {
                return Err(SchemeError::InitialDataOnBoundary { node, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepState {
    pub n: usize,
    pub t: f64,
    pub u: FeFunction,
    pub phi: FeFunction,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n_mesh: usize,
    pub tau: f64,
    pub rel_tol: f64,
    /// `None` selects `10 * unknowns`.
    pub max_iter: Option<usize>,
    pub precond: Preconditioner,
    pub record_trajectory: bool,
}

impl RunConfig {
    pub fn new(n_mesh: usize, tau: f64) -> Self {
        Self {
            n_mesh,
            tau,
            rel_tol: 1e-10,
            max_iter: None,
            precond: Preconditioner::Jacobi,
            record_trajectory: false,
        }
    }

    fn cg_options(&self) -> CgOptions {
        CgOptions {
            rel_tol: self.rel_tol,
            max_iter: self.max_iter,
            precond: self.precond,
        }
    }
}

/// Number of steps `N = T / tau`, rejecting non-integral ratios.
pub fn step_count(t_final: f64, tau: f64) -> Result<usize, SchemeError> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(SchemeError::NonPositiveHorizon(t_final));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SchemeError::NonPositiveStep(tau));
    }
    let ratio = t_final / tau;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 || n < 1.0 {
        return Err(SchemeError::NonIntegralSteps {
            t_final,
            tau,
            ratio,
        });
    }
    Ok(n as usize)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_state: StepState,
    pub trajectory: Option<Vec<StepState>>,
    pub potential_solves: usize,
    pub temperature_solves: usize,
}

/// Operators and solver settings for one mesh, reused across steps.
#[derive(Debug, Clone)]
pub struct Stepper {
    assembler: Assembler,
    mass: SparseMatrix,
    stiffness: SparseMatrix,
    boundary: Vec<usize>,
    cg: CgOptions,
}

impl Stepper {
    pub fn new(mesh: Arc<Mesh>, cg: CgOptions) -> Self {
        let assembler = Assembler::new(Arc::clone(&mesh));
        let mass = assembler.mass();
        let stiffness = assembler.stiffness();
        Self {
            boundary: mesh.boundary_nodes(),
            assembler,
            mass,
            stiffness,
            cg,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.assembler.mesh()
    }

    /// Potential at time `t` with conductivity frozen at `sigma(u)`.
    /// Boundary values are assigned from `g`; `guess` warm-starts the solver.
    pub fn solve_potential(
        &self,
        u: &FeFunction,
        t: f64,
        spec: &ProblemSpec,
        guess: Option<&FeFunction>,
    ) -> Result<FeFunction, SchemeError> {
        let mesh = self.mesh();
        let weights = self.assembler.sigma_at_centroids(u, &spec.sigma)?;
        let a = self.assembler.stiffness_weighted(&weights);
        let rhs = match &spec.f_phi {
            Some(f) => fem::assemble_load(mesh, f, t),
            None => vec![0.0; mesh.num_nodes()],
        };
        let constraints: Vec<(usize, f64)> = self
            .boundary
            .iter()
            .map(|&i| {
                let p = mesh.nodes()[i];
                (i, spec.g.eval(p[0], p[1], t))
            })
            .collect();
        let (a, rhs) =
            apply_dirichlet(&a, &rhs, &constraints).map_err(|source| SchemeError::Solver {
                step: 0,
                stage: "potential",
                source,
            })?;
        let x0 = match guess {
            Some(g) if g.is_on(mesh) => g.coeffs().to_vec(),
            _ => fem::interpolate(mesh, &spec.g, t)?.into_coeffs(),
        };
        let (mut x, _) =
            cg_solve(&a, &rhs, &x0, &self.cg).map_err(|source| SchemeError::Solver {
                step: 0,
                stage: "potential",
                source,
            })?;
        // Boundary values are assigned, not solved for.
        for &(i, v) in &constraints {
            x[i] = v;
        }
        Ok(FeFunction::new(Arc::clone(mesh), x)?)
    }

    /// One implicit heat step from `state` (which must carry `Phi^n`).
    pub fn step_temperature(
        &self,
        state: &StepState,
        tau: f64,
        spec: &ProblemSpec,
    ) -> Result<FeFunction, SchemeError> {
        let mesh = self.mesh();
        if !(tau > 0.0) {
            return Err(SchemeError::NonPositiveStep(tau));
        }
        let lhs = self
            .mass
            .add_scaled(1.0 / tau, &self.stiffness, 1.0)
            .expect("operators share a mesh");
        let mut rhs = self
            .mass
            .spmv(state.u.coeffs())
            .expect("length checked by FeFunction");
        rhs.iter_mut().for_each(|v| *v /= tau);
        let joule = fem::assemble_joule_load(mesh, &state.u, &state.phi, &spec.sigma)?;
        for (r, j) in rhs.iter_mut().zip(&joule) {
            *r += j;
        }
        if let Some(f) = &spec.f_u {
            let t_next = (state.n + 1) as f64 * tau;
            for (r, b) in rhs.iter_mut().zip(fem::assemble_load(mesh, f, t_next)) {
                *r += b;
            }
        }
        let constraints: Vec<(usize, f64)> = self.boundary.iter().map(|&i| (i, 0.0)).collect();
        let solver_err = |source| SchemeError::Solver {
            step: state.n,
            stage: "temperature",
            source,
        };
        let (lhs, rhs) = apply_dirichlet(&lhs, &rhs, &constraints).map_err(solver_err)?;
        let (mut x, _) = cg_solve(&lhs, &rhs, state.u.coeffs(), &self.cg).map_err(solver_err)?;
        for &i in &self.boundary {
            x[i] = 0.0;
        }
        Ok(FeFunction::new(Arc::clone(mesh), x)?)
    }
}

fn check_finite(f: &FeFunction, step: usize, field: &'static str) -> Result<(), SchemeError> {
    if f.coeffs().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SchemeError::NonFinite { step, field })
    }
}

/// Runs the scheme on the unit square with `cfg.n_mesh` cells per side.
pub fn run(spec: &ProblemSpec, cfg: &RunConfig) -> Result<RunResult, SchemeError> {
    let mesh = Arc::new(mesh::unit_square_mesh(cfg.n_mesh)?);
    run_on_mesh(mesh, spec, cfg, |_| {})
}

/// Runs the scheme on a given mesh, calling `observe` with `(U^n, Phi^n)`
/// for every `n = 0..=N`.
pub fn run_on_mesh(
    mesh: Arc<Mesh>,
    spec: &ProblemSpec,
    cfg: &RunConfig,
    mut observe: impl FnMut(&StepState),
) -> Result<RunResult, SchemeError> {
    let steps = step_count(spec.t_final, cfg.tau)?;
    spec.validate(&mesh)?;
    let stepper = Stepper::new(Arc::clone(&mesh), cfg.cg_options());
    let tau = cfg.tau;
    let at_step = |e: SchemeError, n: usize| match e {
        SchemeError::Solver { stage, source, .. } => SchemeError::Solver {
            step: n,
            stage,
            source,
        },
        other => other,
    };

    let mut coeffs = fem::interpolate(&mesh, &spec.u0, 0.0)?.into_coeffs();
    for &i in &stepper.boundary {
        coeffs[i] = 0.0;
    }
    let u = FeFunction::new(Arc::clone(&mesh), coeffs)?;
    let mut phi = stepper
        .solve_potential(&u, 0.0, spec, None)
        .map_err(|e| at_step(e, 0))?;
    let mut potential_solves = 1;
    let mut temperature_solves = 0;
    let mut state = StepState {
        n: 0,
        t: 0.0,
        u,
        phi,
    };
    check_finite(&state.phi, 0, "potential")?;
    observe(&state);
    let mut trajectory = cfg.record_trajectory.then(|| vec![state.clone()]);

    for n in 0..steps {
        let u_next = stepper
            .step_temperature(&state, tau, spec)
            .map_err(|e| at_step(e, n))?;
        temperature_solves += 1;
        check_finite(&u_next, n + 1, "temperature")?;
        let t_next = (n + 1) as f64 * tau;
        phi = stepper
            .solve_potential(&u_next, t_next, spec, Some(&state.phi))
            .map_err(|e| at_step(e, n + 1))?;
        potential_solves += 1;
        check_finite(&phi, n + 1, "potential")?;
        state = StepState {
            n: n + 1,
            t: t_next,
            u: u_next,
            phi,
        };
        observe(&state);
        if let Some(tr) = trajectory.as_mut() {
            tr.push(state.clone());
        }
    }
    Ok(RunResult {
        final_state: state,
        trajectory,
        potential_solves,
        temperature_solves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use std::f64::consts::PI;

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(mesh::unit_square_mesh(n).unwrap())
    }

    fn trig_sigma() -> SigmaModel {
        SigmaModel::new(|s| 2.0 + s.sin(), 1.0, 3.0, 1.0).unwrap()
    }

    fn bump() -> ScalarField {
        ScalarField::new(|x, y, _| (PI * x).sin() * (PI * y).sin())
    }

    #[test]
    fn step_count_validation() {
        assert_eq!(step_count(1.0, 0.25).unwrap(), 4);
        assert_eq!(step_count(0.1, 1e-4).unwrap(), 1000);
        assert!(matches!(
            step_count(1.0, 0.3),
            Err(SchemeError::NonIntegralSteps { .. })
        ));
        assert!(matches!(
            step_count(0.0, 0.1),
            Err(SchemeError::NonPositiveHorizon(_))
        ));
        assert!(matches!(
            step_count(1.0, -0.1),
            Err(SchemeError::NonPositiveStep(_))
        ));
        assert!(matches!(
            step_count(0.1, 0.3),
            Err(SchemeError::NonIntegralSteps { .. })
        ));
    }

    #[test]
    fn potential_constant_data() {
        let mesh = square(6);
        let stepper = Stepper::new(Arc::clone(&mesh), CgOptions::default());
        let u = fem::interpolate(&mesh, &bump(), 0.0).unwrap();
        let spec = ProblemSpec::new(trig_sigma(), ScalarField::constant(2.5), bump(), 1.0);
        let phi = stepper.solve_potential(&u, 0.0, &spec, None).unwrap();
        assert!(phi.coeffs().iter().all(|v| (v - 2.5).abs() < 1e-10));
    }

    #[test]
    fn potential_linear_data_is_reproduced() {
        let mesh = square(7);
        let stepper = Stepper::new(Arc::clone(&mesh), CgOptions::default());
        let u = FeFunction::zeros(Arc::clone(&mesh));
        let spec = ProblemSpec::new(
            SigmaModel::constant(1.0).unwrap(),
            ScalarField::new(|x, _, _| x),
            bump(),
            1.0,
        );
        let phi = stepper.solve_potential(&u, 0.0, &spec, None).unwrap();
        for (v, p) in phi.coeffs().iter().zip(mesh.nodes()) {
            assert!((v - p[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn potential_boundary_assigned_exactly() {
        let mesh = square(5);
        let stepper = Stepper::new(Arc::clone(&mesh), CgOptions::default());
        let u = fem::interpolate(&mesh, &bump(), 0.0).unwrap();
        let g = ScalarField::new(|x, y, t| (x + 0.3).exp() * (1.0 + y * t));
        let spec = ProblemSpec::new(trig_sigma(), g.clone(), bump(), 1.0);
        let phi = stepper.solve_potential(&u, 0.7, &spec, None).unwrap();
        for i in mesh.boundary_nodes() {
            let p = mesh.nodes()[i];
            assert_eq!(phi.coeffs()[i], g.eval(p[0], p[1], 0.7));
        }
    }

    #[test]
    fn temperature_step_single_interior_node() {
        // On the 2x2 mesh the centre node has six incident triangles of area
        // 1/8: M_44 = 6 * (2/12) * (1/8) = 1/8, A_44 = 4 and ∫φ_4 = 1/4.
        let mesh = square(2);
        let stepper = Stepper::new(Arc::clone(&mesh), CgOptions::default());
        let spec = ProblemSpec::new(
            SigmaModel::constant(1.0).unwrap(),
            ScalarField::new(|x, _, _| x),
            bump(),
            1.0,
        );
        let mut c = vec![0.0; 9];
        c[4] = 0.3;
        let u = FeFunction::new(Arc::clone(&mesh), c).unwrap();
        let phi = stepper.solve_potential(&u, 0.0, &spec, None).unwrap();
        let state = StepState {
            n: 0,
            t: 0.0,
            u,
            phi,
        };
        let tau = 0.1;
        let next = stepper.step_temperature(&state, tau, &spec).unwrap();
        let expected = (0.3 / (8.0 * tau) + 0.25) / (1.0 / (8.0 * tau) + 4.0);
        assert!((next.coeffs()[4] - expected).abs() < 1e-12);
        for i in mesh.boundary_nodes() {
            assert_eq!(next.coeffs()[i], 0.0);
        }
    }

    #[test]
    fn temperature_stays_zero_without_sources() {
        let mesh = square(6);
        let stepper = Stepper::new(Arc::clone(&mesh), CgOptions::default());
        let spec = ProblemSpec::new(
            trig_sigma(),
            ScalarField::constant(1.0),
            ScalarField::zero(),
            1.0,
        );
        let u = FeFunction::zeros(Arc::clone(&mesh));
        let phi = stepper.solve_potential(&u, 0.0, &spec, None).unwrap();
        let state = StepState {
            n: 0,
            t: 0.0,
            u,
            phi,
        };
        let next = stepper.step_temperature(&state, 0.1, &spec).unwrap();
        assert!(next.coeffs().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn energy_decays_without_sources() {
        let mesh = square(8);
        let spec = ProblemSpec::new(trig_sigma(), ScalarField::constant(-0.5), bump(), 1.0);
        let mut cfg = RunConfig::new(8, 0.1);
        cfg.record_trajectory = true;
        let result = run_on_mesh(Arc::clone(&mesh), &spec, &cfg, |_| {}).unwrap();
        let mass = fem::assemble_mass(&mesh);
        let energy: Vec<f64> = result
            .trajectory
            .unwrap()
            .iter()
            .map(|s| dot(s.u.coeffs(), &mass.spmv(s.u.coeffs()).unwrap()).sqrt())
            .collect();
        assert_eq!(energy.len(), 11);
        for w in energy.windows(2) {
            assert!(w[1] <= w[0], "{energy:?}");
        }
    }

    #[test]
    fn run_counts_solves() {
        let spec = ProblemSpec::new(
            trig_sigma(),
            ScalarField::constant(1.0),
            ScalarField::zero(),
            1.0,
        );
        let result = run(&spec, &RunConfig::new(4, 0.25)).unwrap();
        assert_eq!(result.temperature_solves, 4);
        assert_eq!(result.potential_solves, 5);
        assert_eq!(result.final_state.n, 4);
        assert!((result.final_state.t - 1.0).abs() < 1e-15);
        assert!(result
            .final_state
            .u
            .coeffs()
            .iter()
            .all(|v| v.abs() < 1e-10));
        assert!(result
            .final_state
            .phi
            .coeffs()
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn run_rejects_bad_configuration() {
        let spec = ProblemSpec::new(
            trig_sigma(),
            ScalarField::constant(1.0),
            ScalarField::zero(),
            1.0,
        );
        assert!(matches!(
            run(&spec, &RunConfig::new(4, 0.3)),
            Err(SchemeError::NonIntegralSteps { .. })
        ));
        let hot = ProblemSpec::new(
            trig_sigma(),
            ScalarField::constant(1.0),
            ScalarField::constant(1.0),
            1.0,
        );
        assert!(matches!(
            run(&hot, &RunConfig::new(4, 0.25)),
            Err(SchemeError::InitialDataOnBoundary { .. })
        ));
        assert!(matches!(
            run(&spec, &RunConfig::new(0, 0.25)),
            Err(SchemeError::Mesh(_))
        ));
    }

    #[test]
    fn solver_failure_reports_step() {
        let spec = ProblemSpec::new(trig_sigma(), ScalarField::new(|x, _, _| x), bump(), 0.5);
        let mut cfg = RunConfig::new(8, 0.25);
        cfg.max_iter = Some(1);
        match run(&spec, &cfg) {
            Err(SchemeError::Solver {
                step,
                stage,
                source,
            }) => {
                assert_eq!(step, 0);
                assert_eq!(stage, "potential");
                assert!(matches!(source, LinalgError::MaxIterExceeded { .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn boundary_exact_at_every_step() {
        let g = ScalarField::new(|x, y, t| x * y * (1.0 + t));
        let spec = ProblemSpec::new(trig_sigma(), g.clone(), bump(), 0.5);
        let mesh = square(6);
        let mut seen = 0;
        run_on_mesh(Arc::clone(&mesh), &spec, &RunConfig::new(6, 0.125), |s| {
            seen += 1;
            for i in mesh.boundary_nodes() {
                let p = mesh.nodes()[i];
                assert_eq!(s.phi.coeffs()[i], g.eval(p[0], p[1], s.t));
                assert_eq!(s.u.coeffs()[i], 0.0);
            }
        })
        .unwrap();
        assert_eq!(seen, 5);
    }

    #[test]
    fn run_is_deterministic() {
        let spec = ProblemSpec::new(trig_sigma(), ScalarField::new(|x, y, _| x - y), bump(), 0.3);
        let a = run(&spec, &RunConfig::new(8, 0.1)).unwrap();
        let b = run(&spec, &RunConfig::new(8, 0.1)).unwrap();
        assert_eq!(a.final_state.u.coeffs(), b.final_state.u.coeffs());
        assert_eq!(a.final_state.phi.coeffs(), b.final_state.phi.coeffs());
    }
}
