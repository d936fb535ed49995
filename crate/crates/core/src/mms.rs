//! Manufactured solutions with closed-form forcings, and a finite-difference
//! check that the forcings are consistent with the exact fields.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{ScalarField, SigmaModel};
use crate::scheme::ProblemSpec;

/// Names accepted by [`case_by_name`].
pub const CASE_NAMES: &[&str] = &["trig", "linear"];

#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub exact_u: ScalarField,
    pub exact_phi: ScalarField,
    pub spec: ProblemSpec,
}

impl ManufacturedCase {
    pub fn with_final_time(mut self, t_final: f64) -> Self {
        self.spec.t_final = t_final;
        self
    }

    /// Copy with the temperature forcing removed; used to show that the
    /// consistency check detects a wrong forcing.
    pub fn without_temperature_forcing(mut self) -> Self {
        self.spec.f_u = Some(ScalarField::zero());
        self
    }
}

pub fn case_by_name(name: &str) -> Option<ManufacturedCase> {
    match name {
        "trig" => Some(make_trig_case()),
        "linear" => Some(make_linear_case()),
        _ => None,
    }
}

/// `u = e^{-t} sin(pi x) sin(pi y)`, `phi = e^{-t} x y`,
/// `sigma(s) = 2 + sin(s)`, on the unit square with `T = 0.1`.
pub fn make_trig_case() -> ManufacturedCase {
    let u = |x: f64, y: f64, t: f64| (-t).exp() * (PI * x).sin() * (PI * y).sin();
    let grad_u = |x: f64, y: f64, t: f64| {
        let e = (-t).exp() * PI;
        [
            e * (PI * x).cos() * (PI * y).sin(),
            e * (PI * x).sin() * (PI * y).cos(),
        ]
    };
    let phi = |x: f64, y: f64, t: f64| (-t).exp() * x * y;
    let grad_phi = |x: f64, y: f64, t: f64| {
        let e = (-t).exp();
        [e * y, e * x]
    };
    let sigma =
        SigmaModel::new(|s| 2.0 + s.sin(), 1.0, 3.0, 1.0).expect("2 + sin(s) lies in [1, 3]");

    // u_t = -u, Δu = -2π² u, |∇φ|² = e^{-2t}(x² + y²).
    let f_u = move |x: f64, y: f64, t: f64| {
        let uv = u(x, y, t);
        (2.0 * PI * PI - 1.0) * uv - (2.0 + uv.sin()) * (-2.0 * t).exp() * (x * x + y * y)
    };
    // φ is harmonic, so -∇·(σ(u)∇φ) = -σ'(u) ∇u·∇φ.
    let f_phi = move |x: f64, y: f64, t: f64| {
        let gu = grad_u(x, y, t);
        let gp = grad_phi(x, y, t);
        -u(x, y, t).cos() * (gu[0] * gp[0] + gu[1] * gp[1])
    };

    let exact_u = ScalarField::with_gradient(u, grad_u);
    let exact_phi = ScalarField::with_gradient(phi, grad_phi);
    let spec = ProblemSpec::new(sigma, exact_phi.clone(), exact_u.clone(), 0.1)
        .with_forcing(ScalarField::new(f_u), ScalarField::new(f_phi));
    ManufacturedCase {
        name: "trig",
        exact_u,
        exact_phi,
        spec,
    }
}

/// Stationary case whose exact solution is in the P1 space:
/// `u = 0`, `phi = x`, `sigma = 1`, `f_u = -1`, `f_phi = 0`.
pub fn make_linear_case() -> ManufacturedCase {
    let exact_u = ScalarField::zero();
    let exact_phi = ScalarField::with_gradient(|x, _, _| x, |_, _, _| [1.0, 0.0]);
    let sigma = SigmaModel::constant(1.0).expect("constant conductivity");
    let spec = ProblemSpec::new(sigma, exact_phi.clone(), exact_u.clone(), 0.1)
        .with_forcing(ScalarField::constant(-1.0), ScalarField::zero());
    ManufacturedCase {
        name: "linear",
        exact_u,
        exact_phi,
        spec,
    }
}

/// Finite-difference step, a power of two near 1e-5 so that shifted sample
/// coordinates stay exactly representable.
pub const FD_STEP: f64 = 1.0 / 131_072.0;

/// Maximum residual of both forcing identities at `samples` random points
/// in `(0, 1)^2 x (0, 1)`, with every derivative taken by central
/// differences of the exact fields.
pub fn verify_consistency(case: &ManufacturedCase, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    let u = &case.exact_u;
    let phi = &case.exact_phi;
    let sigma = &case.spec.sigma;
    let zero = ScalarField::zero();
    let f_u = case.spec.f_u.as_ref().unwrap_or(&zero);
    let f_phi = case.spec.f_phi.as_ref().unwrap_or(&zero);

    // Grid of spacing h keeps x ± h, x ± 2h exact in binary.
    let snap = |v: f64| (v / h).round() * h;
    let dphi = |x: f64, y: f64, t: f64| {
        [
            (phi.eval(x + h, y, t) - phi.eval(x - h, y, t)) / (2.0 * h),
            (phi.eval(x, y + h, t) - phi.eval(x, y - h, t)) / (2.0 * h),
        ]
    };
    let flux = |x: f64, y: f64, t: f64| {
        let s = sigma.eval(u.eval(x, y, t));
        let g = dphi(x, y, t);
        [s * g[0], s * g[1]]
    };

    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = snap(rng.gen_range(0.01..0.99));
        let y = snap(rng.gen_range(0.01..0.99));
        let t = snap(rng.gen_range(0.0..1.0));

        let uc = u.eval(x, y, t);
        let u_t = (u.eval(x, y, t + h) - u.eval(x, y, t - h)) / (2.0 * h);
        let lap =
            (u.eval(x + h, y, t) + u.eval(x - h, y, t) + u.eval(x, y + h, t) + u.eval(x, y - h, t)
                - 4.0 * uc)
                / (h * h);
        let gp = dphi(x, y, t);
        let joule = sigma.eval(uc) * (gp[0] * gp[0] + gp[1] * gp[1]);
        let div = (flux(x + h, y, t)[0] - flux(x - h, y, t)[0]) / (2.0 * h)
            + (flux(x, y + h, t)[1] - flux(x, y - h, t)[1]) / (2.0 * h);

        let r_u = (f_u.eval(x, y, t) - (u_t - lap - joule)).abs();
        let r_phi = (f_phi.eval(x, y, t) + div).abs();
        worst = worst.max(r_u).max(r_phi);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_values() {
        let c = make_trig_case();
        assert!((c.exact_u.eval(0.5, 0.5, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(c.exact_phi.eval(0.3, 0.7, 0.0), 0.3 * 0.7);
        assert_eq!(c.exact_phi.grad(0.3, 0.7, 0.0), Some([0.7, 0.3]));
        assert_eq!(c.spec.sigma.kappa(), 1.0);
        assert_eq!(c.spec.sigma.k_up(), 3.0);
        assert_eq!(c.spec.sigma.lipschitz(), 1.0);
    }

    #[test]
    fn trig_f_phi_vanishes_when_gradients_orthogonal() {
        let c = make_trig_case();
        let f = c.spec.f_phi.as_ref().unwrap();
        // ∇u = 0 at the centre; ∇φ = 0 at the origin.
        assert!(f.eval(0.5, 0.5, 0.3).abs() < 1e-15);
        assert!(f.eval(0.0, 0.0, 0.0).abs() < 1e-15);
        // Generic point.
        assert!(f.eval(0.3, 0.6, 0.0).abs() > 1e-3);
    }

    #[test]
    fn trig_consistent() {
        let r = verify_consistency(&make_trig_case(), 1000, 7);
        assert!(r <= 1e-4, "residual {r}");
    }

    #[test]
    fn mutation_detected() {
        let r = verify_consistency(&make_trig_case().without_temperature_forcing(), 1000, 7);
        assert!(r > 0.1, "residual {r}");
    }

    #[test]
    fn linear_case_exact() {
        let r = verify_consistency(&make_linear_case(), 1000, 1);
        assert!(r <= 1e-10, "residual {r}");
    }

    #[test]
    fn exact_u_vanishes_on_boundary() {
        for case in CASE_NAMES.iter().map(|n| case_by_name(n).unwrap()) {
            for k in 0..=200 {
                let s = k as f64 / 200.0;
                for t in [0.0, 0.37, 1.0] {
                    for (x, y) in [(s, 0.0), (s, 1.0), (0.0, s), (1.0, s)] {
                        assert!(
                            case.exact_u.eval(x, y, t).abs() <= 1e-14,
                            "{} at ({x},{y},{t})",
                            case.name
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn lookup_by_name() {
        assert_eq!(case_by_name("trig").unwrap().name, "trig");
        assert!(case_by_name("nope").is_none());
        assert_eq!(make_trig_case().with_final_time(0.5).spec.t_final, 0.5);
    }
}
