//! Closed-form space-time fields and the conductivity model.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

type ValueFn = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;
type GradientFn = dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync;

/// A deterministic map `(x, y, t) -> value` with an optional closed-form
/// spatial gradient.
#[derive(Clone)]
pub struct ScalarField {
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradientFn>>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("has_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl ScalarField {
    pub fn new(value: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            gradient: None,
        }
    }

    pub fn with_gradient(
        value: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(f64, f64, f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Some(Arc::new(gradient)),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::with_gradient(move |_, _, _| c, |_, _, _| [0.0, 0.0])
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        (self.value)(x, y, t)
    }

    #[inline]
    pub fn grad(&self, x: f64, y: f64, t: f64) -> Option<[f64; 2]> {
        self.gradient.as_ref().map(|g| g(x, y, t))
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid conductivity model: {0}")]
pub struct SigmaError(pub String);

/// Temperature-dependent conductivity with certified bounds
/// `kappa <= sigma(s) <= k_up` and Lipschitz constant.
#[derive(Clone)]
pub struct SigmaModel {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    kappa: f64,
    k_up: f64,
    lipschitz: f64,
}

impl fmt::Debug for SigmaModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigmaModel")
            .field("kappa", &self.kappa)
            .field("k_up", &self.k_up)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// Sample points covering [-1e6, 1e6] coarsely and [-10, 10] densely.
fn sample_points() -> impl Iterator<Item = f64> {
    let wide = (0..=20_000).map(|i| -1e6 + 100.0 * i as f64);
    let dense = (0..=20_000).map(|i| -10.0 + 1e-3 * i as f64);
    wide.chain(dense)
}

impl SigmaModel {
    /// Checks the certified bounds on a fixed sample set before accepting
    /// the model.
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        kappa: f64,
        k_up: f64,
        lipschitz: f64,
    ) -> Result<Self, SigmaError> {
        if !(kappa > 0.0 && kappa <= k_up && k_up.is_finite()) {
            return Err(SigmaError(format!(
                "need 0 < kappa <= K, got kappa = {kappa}, K = {k_up}"
            )));
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(SigmaError(format!(
                "Lipschitz constant must be finite and >= 0, got {lipschitz}"
            )));
        }
        let model = Self {
            f: Arc::new(f),
            kappa,
            k_up,
            lipschitz,
        };
        model.check_samples()?;
        Ok(model)
    }

    pub fn constant(c: f64) -> Result<Self, SigmaError> {
        Self::new(move |_| c, c, c, 0.0)
    }

    fn check_samples(&self) -> Result<(), SigmaError> {
        let mut prev: Option<(f64, f64)> = None;
        for s in sample_points() {
            let v = self.eval(s);
            if !(v >= self.kappa && v <= self.k_up) {
                return Err(SigmaError(format!(
                    "sigma({s}) = {v} outside [{}, {}]",
                    self.kappa, self.k_up
                )));
            }
            if let Some((ps, pv)) = prev.filter(|(ps, _)| *ps < s) {
                let slack = 1e-12 * v.abs().max(1.0);
                if (v - pv).abs() > self.lipschitz * (s - ps) + slack {
                    return Err(SigmaError(format!(
                        "|sigma({s}) - sigma({ps})| = {} exceeds Lipschitz bound {}",
                        (v - pv).abs(),
                        self.lipschitz
                    )));
                }
            }
            prev = Some((s, v));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn k_up(&self) -> f64 {
        self.k_up
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}
