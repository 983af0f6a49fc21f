//! Model coefficients, jump measures, martingale drift, and symbol evaluation.
//!
//! A model is a scalar log-price process with local half-variance `a(t,x)`,
//! local default intensity `γ(t,x)`, and a jump field factored as a scalar
//! state multiplier times a fixed jump measure, `ν(t,x,dz) = f(t,x)·𝒩(dz)`.
//! The risk-neutral drift is pinned by the martingale condition
//! `μ = γ − a − ∫(e^z − 1 − z) ν(dz)`, so that the discounted exponential of
//! the process is a martingale up to the default time.
//!
//! The characteristic exponent ("symbol") of the process with coefficients
//! frozen at a point is
//!
//! ```text
//! φ(t,ξ) = γ·(iξ − 1) + a·(−ξ² − iξ) − iξ·∫(e^z−1−z) ν(dz)
//!        + ∫(e^{iξz} − 1 − iξz) ν(dz),
//! ```
//!
//! with the jump integrals in closed form for the Gaussian and
//! variance-gamma families and by adaptive quadrature for numeric densities.
//! [`FrozenSymbol`] evaluates `φ` pointwise and as a derivative jet in `ξ`;
//! both satisfy `φ(0) = −γ` exactly and `φ(−i) = 0` for martingale models.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::jets::Jet;
use crate::quad::{adaptive_simpson, gl_integrate_panels};

/// Evaluable coefficient of `(t, x)`.
pub type CoefFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Evaluable function of `x` alone.
pub type SpaceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Evaluable n-th `x`-derivative: arguments `(n, t, x)`.
pub type DerivFn = Arc<dyn Fn(usize, f64, f64) -> f64 + Send + Sync>;

/// A scalar function of time that is very often a constant.
///
/// Expansion coefficients are constants for time-homogeneous models, in
/// which case the fast time-homogeneous expansion engine applies; otherwise
/// they are closures of `t` and the time-dependent engine must be used.
#[derive(Clone)]
pub enum TimeFn {
    /// A constant value.
    Constant(f64),
    /// A genuinely time-dependent value.
    Varying(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl TimeFn {
    /// Evaluate at time `t`.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Constant(v) => *v,
            TimeFn::Varying(f) => f(t),
        }
    }

    /// True when the value does not depend on time.
    pub fn is_constant(&self) -> bool {
        matches!(self, TimeFn::Constant(_))
    }
}

impl fmt::Debug for TimeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeFn::Constant(v) => write!(f, "TimeFn::Constant({v})"),
            TimeFn::Varying(_) => write!(f, "TimeFn::Varying(..)"),
        }
    }
}

/// Jump-measure family `𝒩(dz)` entering `ν(t,x,dz) = f(t,x)·𝒩(dz)`.
#[derive(Clone)]
pub enum LevyMeasureSpec {
    /// Compound-Poisson jumps with Gaussian marks:
    /// `𝒩(dz) = λ · N(m, η²)(dz)`.
    Gaussian {
        /// Jump intensity per year, `λ ≥ 0`.
        lambda: f64,
        /// Mean jump size.
        m: f64,
        /// Jump-size standard deviation, `η > 0`.
        eta: f64,
    },
    /// Variance-gamma measure
    /// `𝒩(dz) = e^{−λ₊ z}/(κ z)·1_{z>0} dz + e^{−λ₋ |z|}/(κ |z|)·1_{z<0} dz`.
    VarianceGamma {
        /// Drift of the time-changed Brownian motion.
        theta: f64,
        /// Volatility of the time-changed Brownian motion.
        rho: f64,
        /// Variance rate of the gamma subordinator, `κ > 0`.
        kappa: f64,
        /// Derived positive-tail decay rate; must exceed 1.
        lambda_plus: f64,
        /// Derived negative-tail decay rate; must be positive.
        lambda_minus: f64,
    },
    /// Tabulated / closure-defined density on a bounded support.
    NumericDensity {
        /// Density `z ↦ 𝒩(z) ≥ 0`.
        density: SpaceFn,
        /// Lower integration truncation.
        z_min: f64,
        /// Upper integration truncation.
        z_max: f64,
    },
}

impl fmt::Debug for LevyMeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevyMeasureSpec::Gaussian { lambda, m, eta } => f
                .debug_struct("Gaussian")
                .field("lambda", lambda)
                .field("m", m)
                .field("eta", eta)
                .finish(),
            LevyMeasureSpec::VarianceGamma {
                theta,
                rho,
                kappa,
                lambda_plus,
                lambda_minus,
            } => f
                .debug_struct("VarianceGamma")
                .field("theta", theta)
                .field("rho", rho)
                .field("kappa", kappa)
                .field("lambda_plus", lambda_plus)
                .field("lambda_minus", lambda_minus)
                .finish(),
            LevyMeasureSpec::NumericDensity { z_min, z_max, .. } => f
                .debug_struct("NumericDensity")
                .field("z_min", z_min)
                .field("z_max", z_max)
                .finish(),
        }
    }
}

impl LevyMeasureSpec {
    /// Gaussian-mark compound-Poisson measure with intensity `lambda`,
    /// mean jump `m`, and standard deviation `eta`.
    pub fn gaussian(lambda: f64, m: f64, eta: f64) -> Result<LevyMeasureSpec> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "jump intensity must satisfy λ ≥ 0, got {lambda}"
            )));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::Config(format!(
                "jump standard deviation must satisfy η > 0, got {eta}"
            )));
        }
        if !m.is_finite() {
            return Err(Error::Config(format!("mean jump size must be finite, got {m}")));
        }
        Ok(LevyMeasureSpec::Gaussian { lambda, m, eta })
    }

    /// Variance-gamma measure from the time-changed Brownian
    /// parameterization `(θ, ρ, κ)`.  The tail decay rates are
    ///
    /// `λ± = ( √(θ²κ²/4 + ρ²κ/2) ± θκ/2 )^{-1}`,
    ///
    /// and construction fails unless `λ₊ > 1` (finite exponential moment,
    /// required for the martingale drift) and `λ₋ > 0`.
    pub fn variance_gamma(theta: f64, rho: f64, kappa: f64) -> Result<LevyMeasureSpec> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::Config(format!(
                "variance rate must satisfy κ > 0, got {kappa}"
            )));
        }
        if !(rho >= 0.0) || !rho.is_finite() || !theta.is_finite() {
            return Err(Error::Config(format!(
                "variance-gamma parameters must be finite with ρ ≥ 0, got θ={theta}, ρ={rho}"
            )));
        }
        let s = (theta * theta * kappa * kappa / 4.0 + rho * rho * kappa / 2.0).sqrt();
        let denom_plus = s + theta * kappa / 2.0;
        let denom_minus = s - theta * kappa / 2.0;
        if denom_plus <= 0.0 || denom_minus <= 0.0 {
            return Err(Error::Config(
                "degenerate variance-gamma parameters: tail decay rates are not both positive"
                    .into(),
            ));
        }
        let lambda_plus = 1.0 / denom_plus;
        let lambda_minus = 1.0 / denom_minus;
        if lambda_plus <= 1.0 {
            return Err(Error::Config(format!(
                "variance-gamma positive tail decays too slowly: λ₊ = {lambda_plus:.6} ≤ 1, \
                 the exponential moment ∫_{{z≥1}} e^z ν(dz) diverges"
            )));
        }
        Ok(LevyMeasureSpec::VarianceGamma {
            theta,
            rho,
            kappa,
            lambda_plus,
            lambda_minus,
        })
    }

    /// Measure given by an explicit density on a bounded support.
    /// Integrability of `min(1, z²)` and of `e^z` on `|z| ≥ 1` is checked
    /// numerically at construction.
    pub fn numeric(density: SpaceFn, z_min: f64, z_max: f64) -> Result<LevyMeasureSpec> {
        if !(z_min < z_max) || !z_min.is_finite() || !z_max.is_finite() {
            return Err(Error::Config(format!(
                "numeric measure needs finite truncation bounds with z_min < z_max, \
                 got [{z_min}, {z_max}]"
            )));
        }
        let spec = LevyMeasureSpec::NumericDensity {
            density: density.clone(),
            z_min,
            z_max,
        };
        let small: f64 =
            gl_integrate_panels(z_min, z_max, 0.05, 16, |z| z.powi(2).min(1.0) * density(z));
        let expz: f64 = gl_integrate_panels(z_min, z_max, 0.05, 16, |z| {
            if z.abs() >= 1.0 {
                z.exp() * density(z)
            } else {
                0.0
            }
        });
        for (name, v) in [("∫min(1,z²)ν", small), ("∫_{|z|≥1}e^z ν", expz)] {
            if !v.is_finite() || v > 1e12 || v < 0.0 {
                return Err(Error::Config(format!(
                    "numeric jump density fails the integrability check: {name} = {v}"
                )));
            }
        }
        Ok(spec)
    }

    /// Open strip of `Im ξ` on which `∫ e^{iξz} 𝒩(dz)` converges.
    pub fn strip(&self) -> (f64, f64) {
        match self {
            LevyMeasureSpec::Gaussian { .. } | LevyMeasureSpec::NumericDensity { .. } => {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
            LevyMeasureSpec::VarianceGamma {
                lambda_plus,
                lambda_minus,
                ..
            } => (-lambda_plus, *lambda_minus),
        }
    }

    /// Total mass `𝒩(ℝ)`, or `None` for infinite-activity families.
    pub fn intensity(&self) -> Option<f64> {
        match self {
            LevyMeasureSpec::Gaussian { lambda, .. } => Some(*lambda),
            LevyMeasureSpec::VarianceGamma { .. } => None,
            LevyMeasureSpec::NumericDensity {
                density,
                z_min,
                z_max,
            } => {
                let d = density.clone();
                Some(gl_integrate_panels(*z_min, *z_max, 0.05, 16, |z| d(z)))
            }
        }
    }

    /// Mean jump size `∫ z 𝒩(dz)`.
    pub fn mean_jump(&self) -> f64 {
        match self {
            LevyMeasureSpec::Gaussian { lambda, m, .. } => lambda * m,
            LevyMeasureSpec::VarianceGamma {
                kappa,
                lambda_plus,
                lambda_minus,
                ..
            } => (1.0 / lambda_plus - 1.0 / lambda_minus) / kappa,
            LevyMeasureSpec::NumericDensity {
                density,
                z_min,
                z_max,
            } => {
                let d = density.clone();
                gl_integrate_panels(*z_min, *z_max, 0.05, 16, |z| z * d(z))
            }
        }
    }

    /// Exponential compensator `∫ (e^z − 1 − z) 𝒩(dz)`, in closed form for
    /// the Gaussian and variance-gamma families.
    pub fn compensator(&self) -> f64 {
        match self {
            LevyMeasureSpec::Gaussian { lambda, m, eta } => {
                lambda * ((m + 0.5 * eta * eta).exp() - 1.0 - m)
            }
            LevyMeasureSpec::VarianceGamma {
                kappa,
                lambda_plus,
                lambda_minus,
                ..
            } => {
                let mean = self.mean_jump();
                -((1.0 - 1.0 / lambda_plus).ln() + (1.0 + 1.0 / lambda_minus).ln()) / kappa - mean
            }
            LevyMeasureSpec::NumericDensity {
                density,
                z_min,
                z_max,
            } => {
                let d = density.clone();
                gl_integrate_panels(*z_min, *z_max, 0.05, 16, |z| (z.exp() - 1.0 - z) * d(z))
            }
        }
    }

    /// Grouped jump transform `Π(ξ) = ∫ (e^{iξz} − 1 − iξz) 𝒩(dz)`.
    ///
    /// `Im ξ` must lie in [`strip`](Self::strip).
    pub fn grouped_transform(&self, xi: Complex64) -> Result<Complex64> {
        self.check_strip(xi.im)?;
        Ok(match self {
            LevyMeasureSpec::Gaussian { lambda, m, eta } => {
                let ixi = Complex64::I * xi;
                let e = (ixi * *m - xi * xi * (eta * eta / 2.0)).exp();
                (e - 1.0 - ixi * *m) * *lambda
            }
            LevyMeasureSpec::VarianceGamma {
                kappa,
                lambda_plus,
                lambda_minus,
                ..
            } => {
                let ixi = Complex64::I * xi;
                let psi = -((1.0 - ixi / *lambda_plus).ln() + (1.0 + ixi / *lambda_minus).ln())
                    / *kappa;
                psi - ixi * self.mean_jump()
            }
            LevyMeasureSpec::NumericDensity { .. } => self.grouped_transform_by_quadrature(xi)?,
        })
    }

    /// `Π(ξ)` evaluated by adaptive quadrature of the density — the
    /// independent oracle for the closed forms above.  For the analytic
    /// families the density is written out explicitly, not derived from the
    /// closed-form transform.
    pub fn grouped_transform_by_quadrature(&self, xi: Complex64) -> Result<Complex64> {
        self.check_strip(xi.im)?;
        let grouped = move |z: f64| -> Complex64 {
            if z == 0.0 {
                return Complex64::ZERO;
            }
            let ixz = Complex64::I * xi * z;
            ixz.exp() - 1.0 - ixz
        };
        Ok(match self {
            LevyMeasureSpec::Gaussian { lambda, m, eta } => {
                let norm = *lambda / (eta * (2.0 * std::f64::consts::PI).sqrt());
                let (m, eta) = (*m, *eta);
                let mut f = move |z: f64| {
                    grouped(z) * (norm * (-((z - m) / eta).powi(2) / 2.0).exp())
                };
                adaptive_simpson(m - 14.0 * eta, m + 14.0 * eta, 1e-13, 48, &mut f)
            }
            LevyMeasureSpec::VarianceGamma {
                kappa,
                lambda_plus,
                lambda_minus,
                ..
            } => {
                let (kappa, lp, lm) = (*kappa, *lambda_plus, *lambda_minus);
                // Positive tail; the grouped integrand is O(z) near zero, so
                // the 1/z singularity of the density cancels.
                let mut fp = move |z: f64| {
                    if z <= 0.0 {
                        Complex64::ZERO
                    } else {
                        grouped(z) * ((-lp * z).exp() / (kappa * z))
                    }
                };
                let mut fm = move |z: f64| {
                    if z >= 0.0 {
                        Complex64::ZERO
                    } else {
                        grouped(z) * ((lm * z).exp() / (kappa * (-z)))
                    }
                };
                let upper = 60.0 / lp;
                let lower = -60.0 / lm;
                adaptive_simpson(0.0, upper, 1e-13, 48, &mut fp)
                    + adaptive_simpson(lower, 0.0, 1e-13, 48, &mut fm)
            }
            LevyMeasureSpec::NumericDensity {
                density,
                z_min,
                z_max,
            } => {
                let d = density.clone();
                let mut f = move |z: f64| grouped(z) * d(z);
                adaptive_simpson(*z_min, *z_max, 1e-13, 48, &mut f)
            }
        })
    }

    /// Derivative jet of `Π` at `base`, of the given order.
    pub fn grouped_transform_jet(&self, base: Complex64, order: usize) -> Result<Jet> {
        self.check_strip(base.im)?;
        let xi = Jet::variable(base, order)?;
        let ixi = xi.scale(Complex64::I);
        match self {
            LevyMeasureSpec::Gaussian { lambda, m, eta } => {
                let one = Jet::constant(base, Complex64::ONE, order)?;
                let arg = ixi.scale(Complex64::from(*m))
                    - (xi * xi).scale(Complex64::from(eta * eta / 2.0));
                Ok((arg.exp() - one - ixi.scale(Complex64::from(*m))).scale(Complex64::from(*lambda)))
            }
            LevyMeasureSpec::VarianceGamma {
                kappa,
                lambda_plus,
                lambda_minus,
                ..
            } => {
                let one = Jet::constant(base, Complex64::ONE, order)?;
                let lp = (one - ixi.scale(Complex64::from(1.0 / lambda_plus))).ln()?;
                let lm = (one + ixi.scale(Complex64::from(1.0 / lambda_minus))).ln()?;
                let psi = (lp + lm).scale(Complex64::from(-1.0 / kappa));
                Ok(psi - ixi.scale(Complex64::from(self.mean_jump())))
            }
            LevyMeasureSpec::NumericDensity {
                density,
                z_min,
                z_max,
            } => {
                // Derivatives of Π at ξ₀: Π⁽ᵏ⁾(ξ₀) = ∫(iz)^k e^{iξ₀z} ν(dz)
                // for k ≥ 2, with the grouped corrections at k = 0, 1.
                let mut derivs = vec![Complex64::ZERO; order + 1];
                for (k, slot) in derivs.iter_mut().enumerate() {
                    let d = density.clone();
                    let mut f = move |z: f64| {
                        let iz = Complex64::I * z;
                        let core = (Complex64::I * base * z).exp();
                        let weight = d(z);
                        let val = match k {
                            0 => {
                                if z == 0.0 {
                                    Complex64::ZERO
                                } else {
                                    core - 1.0 - Complex64::I * base * z
                                }
                            }
                            1 => iz * (core - 1.0),
                            _ => iz.powu(k as u32) * core,
                        };
                        val * weight
                    };
                    *slot = adaptive_simpson(*z_min, *z_max, 1e-13, 48, &mut f);
                }
                Jet::from_derivatives(base, &derivs)
            }
        }
    }

    fn check_strip(&self, xi_im: f64) -> Result<()> {
        let (lo, hi) = self.strip();
        if xi_im <= lo || xi_im >= hi {
            return Err(Error::StripViolation {
                xi_i: xi_im,
                lo,
                hi,
                what: "jump-measure transform".into(),
            });
        }
        Ok(())
    }
}

/// Proportional coefficient structure `a = A(t)·f(x)`, `γ = Γ(t)·f(x)`,
/// jump multiplier `= f(x)`, with a shared spatial profile `f`.
///
/// This is the structure required by the two-point Taylor basis: every
/// expansion order then shares a single frozen symbol amplitude.
#[derive(Clone)]
pub struct ProportionalForm {
    /// Shared spatial profile `f(x)`.
    pub f: SpaceFn,
    /// `n`-th derivative of the profile: arguments `(n, x)`.
    pub f_deriv: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>,
    /// Diffusion amplitude `A(t)`.
    pub a_scale: TimeFn,
    /// Default-intensity amplitude `Γ(t)`.
    pub gamma_scale: TimeFn,
}

impl fmt::Debug for ProportionalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProportionalForm")
            .field("a_scale", &self.a_scale)
            .field("gamma_scale", &self.gamma_scale)
            .finish_non_exhaustive()
    }
}

/// Rectangular `(t, x)` validation / bound domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    /// Time range `[t_lo, t_hi]`.
    pub t: (f64, f64),
    /// Log-price range `[x_lo, x_hi]`.
    pub x: (f64, f64),
}

impl Default for Domain {
    fn default() -> Self {
        Domain {
            t: (0.0, 5.0),
            x: (-2.0, 2.0),
        }
    }
}

/// Full model: coefficient functions, jump measure, and optional structure
/// (analytic derivatives, proportional form) that expansions can exploit.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    a: CoefFn,
    gamma: CoefFn,
    jump_mult: CoefFn,
    measure: LevyMeasureSpec,
    x_derivs: Option<XDerivs>,
    proportional: Option<ProportionalForm>,
    time_homogeneous: bool,
    domain: Domain,
}

/// Analytic x-derivative evaluators for the three coefficient functions.
#[derive(Clone)]
pub struct XDerivs {
    /// `∂ₓⁿ a(t,x)` as `(n, t, x)`.
    pub a: DerivFn,
    /// `∂ₓⁿ γ(t,x)` as `(n, t, x)`.
    pub gamma: DerivFn,
    /// `∂ₓⁿ f(t,x)` of the jump multiplier as `(n, t, x)`.
    pub jump_mult: DerivFn,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("measure", &self.measure)
            .field("time_homogeneous", &self.time_homogeneous)
            .field("proportional", &self.proportional.is_some())
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// General constructor from coefficient closures.  Positivity of the
    /// three coefficients is spot-checked on a grid over `domain`.
    pub fn new(
        name: impl Into<String>,
        a: CoefFn,
        gamma: CoefFn,
        jump_mult: CoefFn,
        measure: LevyMeasureSpec,
        time_homogeneous: bool,
        domain: Domain,
    ) -> Result<ModelSpec> {
        let model = ModelSpec {
            name: name.into(),
            a,
            gamma,
            jump_mult,
            measure,
            x_derivs: None,
            proportional: None,
            time_homogeneous,
            domain,
        };
        model.validate_grid()?;
        Ok(model)
    }

    /// Model with coefficients proportional to one spatial profile:
    /// `a = A(t)·f(x)`, `γ = Γ(t)·f(x)`, jump multiplier `f(x)`.
    pub fn proportional(
        name: impl Into<String>,
        form: ProportionalForm,
        measure: LevyMeasureSpec,
        domain: Domain,
    ) -> Result<ModelSpec> {
        let f = form.f.clone();
        let fa = form.a_scale.clone();
        let fg = form.gamma_scale.clone();
        let fd = form.f_deriv.clone();
        let time_homogeneous = fa.is_constant() && fg.is_constant();
        // Zero scales short-circuit so a vanishing coefficient stays zero
        // even where the profile overflows (e.g. e^{-βx} far in a tail).
        let a: CoefFn = {
            let f = f.clone();
            let fa = fa.clone();
            Arc::new(move |t, x| {
                let s = fa.eval(t);
                if s == 0.0 { 0.0 } else { s * f(x) }
            })
        };
        let gamma: CoefFn = {
            let f = f.clone();
            let fg = fg.clone();
            Arc::new(move |t, x| {
                let s = fg.eval(t);
                if s == 0.0 { 0.0 } else { s * f(x) }
            })
        };
        let jump_mult: CoefFn = {
            let f = f.clone();
            Arc::new(move |_, x| f(x))
        };
        let x_derivs = XDerivs {
            a: {
                let fd = fd.clone();
                let fa = fa.clone();
                Arc::new(move |n, t, x| {
                    let s = fa.eval(t);
                    if s == 0.0 { 0.0 } else { s * fd(n, x) }
                })
            },
            gamma: {
                let fd = fd.clone();
                let fg = fg.clone();
                Arc::new(move |n, t, x| {
                    let s = fg.eval(t);
                    if s == 0.0 { 0.0 } else { s * fd(n, x) }
                })
            },
            jump_mult: {
                let fd = fd.clone();
                Arc::new(move |n, _, x| fd(n, x))
            },
        };
        let mut model = ModelSpec {
            name: name.into(),
            a,
            gamma,
            jump_mult,
            measure,
            x_derivs: Some(x_derivs),
            proportional: Some(form),
            time_homogeneous,
            domain,
        };
        model.validate_grid()?;
        // A degenerate attached profile invalidates the proportional
        // structure checks nowhere; keep as supplied.
        if model.name.is_empty() {
            model.name = "proportional".into();
        }
        Ok(model)
    }

    /// Constant-coefficient model (an exponential Lévy model).
    pub fn constant(
        name: impl Into<String>,
        a0: f64,
        gamma0: f64,
        jump_mult0: f64,
        measure: LevyMeasureSpec,
    ) -> Result<ModelSpec> {
        if a0 < 0.0 || gamma0 < 0.0 || jump_mult0 < 0.0 {
            return Err(Error::Config(
                "constant coefficients must be nonnegative".into(),
            ));
        }
        // Express as a proportional model so that every basis (including
        // two-point Taylor) applies.  If the jump multiplier is positive it
        // serves as the profile; otherwise the profile is 1 and the measure
        // is unused (its multiplier is zero).
        let (profile, a_scale, gamma_scale) = if jump_mult0 > 0.0 {
            (jump_mult0, a0 / jump_mult0, gamma0 / jump_mult0)
        } else {
            (0.0, a0, gamma0)
        };
        let use_profile_one = jump_mult0 == 0.0;
        let f: SpaceFn = Arc::new(move |_| if use_profile_one { 1.0 } else { profile });
        let f_deriv: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync> = {
            let f = f.clone();
            Arc::new(move |n, x| if n == 0 { f(x) } else { 0.0 })
        };
        let measure = if jump_mult0 == 0.0 {
            // Jumps disabled: replace by a zero-intensity measure so the
            // multiplier comes out identically zero through the profile.
            LevyMeasureSpec::gaussian(0.0, 0.0, 1.0)?
        } else {
            measure
        };
        let form = ProportionalForm {
            f,
            f_deriv,
            a_scale: TimeFn::Constant(a_scale),
            gamma_scale: TimeFn::Constant(gamma_scale),
        };
        let mut model = ModelSpec::proportional(name, form, measure, Domain::default())?;
        if use_profile_one {
            // With profile ≡ 1 the jump multiplier must be forced to zero.
            model.jump_mult = Arc::new(|_, _| 0.0);
            if let Some(x) = model.x_derivs.as_mut() {
                x.jump_mult = Arc::new(|_, _, _| 0.0);
            }
        }
        Ok(model)
    }

    /// Attach analytic x-derivative evaluators.
    pub fn with_x_derivs(mut self, derivs: XDerivs) -> ModelSpec {
        self.x_derivs = Some(derivs);
        self
    }

    /// Replace the validation / bound domain.
    pub fn with_domain(mut self, domain: Domain) -> ModelSpec {
        self.domain = domain;
        self
    }

    fn validate_grid(&self) -> Result<()> {
        let (t0, t1) = self.domain.t;
        let (x0, x1) = self.domain.x;
        for i in 0..=16 {
            let t = t0 + (t1 - t0) * i as f64 / 16.0;
            for j in 0..=16 {
                let x = x0 + (x1 - x0) * j as f64 / 16.0;
                for (name, v) in [
                    ("a", (self.a)(t, x)),
                    ("gamma", (self.gamma)(t, x)),
                    ("jump multiplier", (self.jump_mult)(t, x)),
                ] {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::Config(format!(
                            "coefficient {name} is {v} at (t, x) = ({t}, {x}); \
                             coefficients must be finite and nonnegative on the domain"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Model name (preset name or file stem).
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Local half-variance `a(t,x) = σ(t,x)²/2`.
    pub fn a(&self, t: f64, x: f64) -> f64 {
        (self.a)(t, x)
    }

    /// Local default intensity `γ(t,x)`.
    pub fn gamma(&self, t: f64, x: f64) -> f64 {
        (self.gamma)(t, x)
    }

    /// Jump multiplier `f(t,x)` scaling the measure.
    pub fn jump_mult(&self, t: f64, x: f64) -> f64 {
        (self.jump_mult)(t, x)
    }

    /// The jump-measure family.
    pub fn measure(&self) -> &LevyMeasureSpec {
        &self.measure
    }

    /// Declared `(t, x)` domain.
    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// True when all coefficients are time-constant.
    pub fn time_homogeneous(&self) -> bool {
        self.time_homogeneous
    }

    /// Proportional structure, when the model has one.
    pub fn proportional_form(&self) -> Option<&ProportionalForm> {
        self.proportional.as_ref()
    }

    /// `n`-th x-derivative of `a` at `(t, x)`: analytic when supplied,
    /// otherwise central finite differences.
    pub fn a_deriv(&self, n: usize, t: f64, x: f64) -> f64 {
        match (&self.x_derivs, n) {
            (_, 0) => self.a(t, x),
            (Some(d), _) => (d.a)(n, t, x),
            (None, _) => fd_derivative(&*self.a, n, t, x),
        }
    }

    /// `n`-th x-derivative of `γ` at `(t, x)`.
    pub fn gamma_deriv(&self, n: usize, t: f64, x: f64) -> f64 {
        match (&self.x_derivs, n) {
            (_, 0) => self.gamma(t, x),
            (Some(d), _) => (d.gamma)(n, t, x),
            (None, _) => fd_derivative(&*self.gamma, n, t, x),
        }
    }

    /// `n`-th x-derivative of the jump multiplier at `(t, x)`.
    pub fn jump_mult_deriv(&self, n: usize, t: f64, x: f64) -> f64 {
        match (&self.x_derivs, n) {
            (_, 0) => self.jump_mult(t, x),
            (Some(d), _) => (d.jump_mult)(n, t, x),
            (None, _) => fd_derivative(&*self.jump_mult, n, t, x),
        }
    }

    /// Martingale drift `μ(t,x) = γ − a − ∫(e^z − 1 − z) ν(t,x,dz)`.
    pub fn drift(&self, t: f64, x: f64) -> f64 {
        self.gamma(t, x) - self.a(t, x) - self.jump_mult(t, x) * self.measure.compensator()
    }

    /// Full symbol `φ(t, x, ξ)` with coefficients frozen at `(t, x)`.
    pub fn symbol(&self, t: f64, x: f64, xi: Complex64) -> Result<Complex64> {
        let frozen = FrozenSymbol {
            a: TimeFn::Constant(self.a(t, x)),
            gamma: TimeFn::Constant(self.gamma(t, x)),
            jump_mult: TimeFn::Constant(self.jump_mult(t, x)),
            measure: self.measure.clone(),
        };
        frozen.eval(t, xi)
    }

    /// Warn when the coefficients appear to grow without bound in `x`.
    ///
    /// The asymptotic error guarantees assume bounded coefficients; models
    /// like the constant-elasticity family violate this on all of ℝ while
    /// remaining perfectly usable, so unboundedness is reported, not
    /// rejected.
    pub fn unboundedness_warning(&self) -> Option<String> {
        let (x0, x1) = self.domain.x;
        let half = 0.5 * (x1 - x0);
        let t = 0.5 * (self.domain.t.0 + self.domain.t.1);
        let mut dom_max = 0.0f64;
        for j in 0..=16 {
            let x = x0 + (x1 - x0) * j as f64 / 16.0;
            dom_max = dom_max
                .max(self.a(t, x).abs())
                .max(self.gamma(t, x).abs())
                .max(self.jump_mult(t, x).abs());
        }
        let mut far_max = 0.0f64;
        for x in [x0 - 10.0 * half, x1 + 10.0 * half] {
            far_max = far_max
                .max(self.a(t, x).abs())
                .max(self.gamma(t, x).abs())
                .max(self.jump_mult(t, x).abs());
        }
        if !far_max.is_finite() || far_max > 100.0 * (dom_max + 1e-12) {
            Some(format!(
                "model '{}' has coefficients that grow without bound in x \
                 (max {far_max:.3e} far from the domain vs {dom_max:.3e} on it); \
                 expansion error guarantees assume bounded coefficients",
                self.name
            ))
        } else {
            None
        }
    }
}

/// Central finite-difference `n`-th derivative in `x` with step
/// `h = max(1, |x|) · ε^{1/(n+2)}`.  Accuracy degrades beyond order 4.
pub(crate) fn fd_derivative(f: &(dyn Fn(f64, f64) -> f64 + Sync), n: usize, t: f64, x: f64) -> f64 {
    if n == 0 {
        return f(t, x);
    }
    let h = x.abs().max(1.0) * f64::EPSILON.powf(1.0 / (n as f64 + 2.0));
    let mut acc = 0.0;
    let mut sign = 1.0;
    for k in 0..=n {
        let offset = n as f64 / 2.0 - k as f64;
        acc += sign * binomial(n, k) * f(t, x + offset * h);
        sign = -sign;
    }
    acc / h.powi(n as i32)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let mut b = 1.0;
    for j in 0..k {
        b = b * (n - j) as f64 / (j + 1) as f64;
    }
    b
}

/// Symbol of one expansion order: time-dependent coefficient triple
/// `(aₙ(t), γₙ(t), multₙ(t)·𝒩(dz))` and the associated exponent
/// `φₙ(t,ξ)`.
#[derive(Clone, Debug)]
pub struct FrozenSymbol {
    /// Diffusion coefficient of this order.
    pub a: TimeFn,
    /// Default-intensity coefficient of this order.
    pub gamma: TimeFn,
    /// Jump-measure multiplier of this order.
    pub jump_mult: TimeFn,
    /// Shared jump-measure family.
    pub measure: LevyMeasureSpec,
}

impl FrozenSymbol {
    /// Order with all coefficients zero (appears when an expansion order
    /// contributes nothing).
    pub fn zero(measure: LevyMeasureSpec) -> FrozenSymbol {
        FrozenSymbol {
            a: TimeFn::Constant(0.0),
            gamma: TimeFn::Constant(0.0),
            jump_mult: TimeFn::Constant(0.0),
            measure,
        }
    }

    /// True when all three coefficients are time-constant.
    pub fn is_time_constant(&self) -> bool {
        self.a.is_constant() && self.gamma.is_constant() && self.jump_mult.is_constant()
    }

    /// Admissible `Im ξ` strip (trivial unless the measure multiplier can
    /// be nonzero).
    pub fn strip(&self) -> (f64, f64) {
        match &self.jump_mult {
            TimeFn::Constant(c) if *c == 0.0 => (f64::NEG_INFINITY, f64::INFINITY),
            _ => self.measure.strip(),
        }
    }

    /// Evaluate `φₙ(t, ξ)`.
    pub fn eval(&self, t: f64, xi: Complex64) -> Result<Complex64> {
        let a = self.a.eval(t);
        let g = self.gamma.eval(t);
        let mult = self.jump_mult.eval(t);
        let ixi = Complex64::I * xi;
        let mut phi = g * (ixi - 1.0) + a * (-xi * xi - ixi);
        if mult != 0.0 {
            let comp = self.measure.compensator();
            phi += (self.measure.grouped_transform(xi)? - ixi * comp) * mult;
        }
        Ok(phi)
    }

    /// Derivative jet of `φₙ(t, ·)` at `base`.
    pub fn jet(&self, t: f64, base: Complex64, order: usize) -> Result<Jet> {
        let a = self.a.eval(t);
        let g = self.gamma.eval(t);
        let mult = self.jump_mult.eval(t);
        let xi = Jet::variable(base, order)?;
        let ixi = xi.scale(Complex64::I);
        let one = Jet::constant(base, Complex64::ONE, order)?;
        let mut phi =
            (ixi - one).scale(Complex64::from(g)) + (-(xi * xi) - ixi).scale(Complex64::from(a));
        if mult != 0.0 {
            let comp = self.measure.compensator();
            let pi = self.measure.grouped_transform_jet(base, order)?;
            phi = phi + (pi - ixi.scale(Complex64::from(comp))).scale(Complex64::from(mult));
        }
        Ok(phi)
    }
}

/// Martingale drift of a model at `(t, x)`; see [`ModelSpec::drift`].
pub fn drift_from_coefficients(model: &ModelSpec, t: f64, x: f64) -> f64 {
    model.drift(t, x)
}

/// Evaluate a frozen per-order symbol; see [`FrozenSymbol::eval`].
pub fn symbol_eval(frozen: &FrozenSymbol, t: f64, xi: Complex64) -> Result<Complex64> {
    frozen.eval(t, xi)
}

/// Named built-in models.
///
/// * `cev-gauss` — constant-elasticity local volatility
///   `a(x) = ½δ²e^{2(β−1)x}` with δ=0.2, β=0.25, Gaussian jumps
///   (λ=0.3, m=−0.1, η=0.4) modulated by `e^{2(β−1)x}`, no default.
/// * `cev-vg` — pure-jump variance-gamma model (θ=−0.3, ρ=0.3, κ=0.15)
///   modulated by the same profile, no diffusion, no default.
pub fn preset(name: &str) -> Result<ModelSpec> {
    match name {
        "cev-gauss" => {
            let c2 = 2.0 * (0.25 - 1.0); // 2(β−1) with β = 1/4
            let f: SpaceFn = Arc::new(move |x| (c2 * x).exp());
            let f_deriv: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync> =
                Arc::new(move |n, x| c2.powi(n as i32) * (c2 * x).exp());
            let form = ProportionalForm {
                f,
                f_deriv,
                a_scale: TimeFn::Constant(0.02), // ½ δ² with δ = 0.2
                gamma_scale: TimeFn::Constant(0.0),
            };
            ModelSpec::proportional(
                "cev-gauss",
                form,
                LevyMeasureSpec::gaussian(0.3, -0.1, 0.4)?,
                Domain::default(),
            )
        }
        "cev-vg" => {
            let c2 = 2.0 * (0.25 - 1.0);
            let f: SpaceFn = Arc::new(move |x| (c2 * x).exp());
            let f_deriv: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync> =
                Arc::new(move |n, x| c2.powi(n as i32) * (c2 * x).exp());
            let form = ProportionalForm {
                f,
                f_deriv,
                a_scale: TimeFn::Constant(0.0),
                gamma_scale: TimeFn::Constant(0.0),
            };
            ModelSpec::proportional(
                "cev-vg",
                form,
                LevyMeasureSpec::variance_gamma(-0.3, 0.3, 0.15)?,
                Domain::default(),
            )
        }
        other => Err(Error::Config(format!(
            "unknown preset '{other}'; available presets: cev-gauss, cev-vg"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

mod file_format {
    use serde::Deserialize;

    #[derive(Deserialize)]
    pub struct Root {
        pub model: Model,
    }

    #[derive(Deserialize)]
    pub struct Model {
        pub a: String,
        pub gamma: String,
        pub jump: Jump,
        #[serde(default)]
        pub domain: Option<DomainSpec>,
    }

    #[derive(Deserialize)]
    pub struct Jump {
        pub multiplier: String,
        pub measure: Measure,
    }

    #[derive(Deserialize)]
    #[serde(tag = "type", rename_all = "lowercase")]
    pub enum Measure {
        Gaussian { lambda: f64, m: f64, eta: f64 },
        Vg { theta: f64, rho: f64, kappa: f64 },
        Numeric { density: String, z_min: f64, z_max: f64 },
    }

    #[derive(Deserialize)]
    pub struct DomainSpec {
        pub t: [f64; 2],
        pub x: [f64; 2],
    }
}

// meval's bound closures capture an `Rc`-based context and are not `Send`;
// evaluate the (plain-data, shareable) parsed expression through a
// thread-local context instead.
thread_local! {
    static EXPR_CTX: std::cell::RefCell<meval::Context<'static>> =
        std::cell::RefCell::new(meval::Context::new());
}

fn eval_expr2(expr: &meval::Expr, t: f64, x: f64) -> std::result::Result<f64, meval::Error> {
    EXPR_CTX.with(|cell| {
        let mut ctx = cell.borrow_mut();
        ctx.var("t", t).var("x", x);
        expr.eval_with_context(&*ctx)
    })
}

fn eval_expr1(expr: &meval::Expr, z: f64) -> std::result::Result<f64, meval::Error> {
    EXPR_CTX.with(|cell| {
        let mut ctx = cell.borrow_mut();
        ctx.var("z", z);
        expr.eval_with_context(&*ctx)
    })
}

fn compile_tx_expression(label: &str, src: &str) -> Result<CoefFn> {
    let expr: meval::Expr = src
        .parse()
        .map_err(|e| Error::Config(format!("cannot parse expression for {label}: {e}")))?;
    let expr = Arc::new(expr);
    eval_expr2(&expr, 0.0, 0.0).map_err(|e| {
        Error::Config(format!(
            "expression for {label} must be a function of (t, x): {e}"
        ))
    })?;
    Ok(Arc::new(move |t, x| {
        eval_expr2(&expr, t, x).unwrap_or(f64::NAN)
    }))
}

/// Parse a model from structured-text content (the format used by
/// `--model` files): coefficient expressions in `(t, x)` plus a jump
/// measure description.
pub fn from_toml_str(name: &str, content: &str) -> Result<ModelSpec> {
    let root: file_format::Root = toml::from_str(content)
        .map_err(|e| Error::Config(format!("malformed model file: {e}")))?;
    let a = compile_tx_expression("model.a", &root.model.a)?;
    let gamma = compile_tx_expression("model.gamma", &root.model.gamma)?;
    let jump_mult = compile_tx_expression("model.jump.multiplier", &root.model.jump.multiplier)?;
    let measure = match root.model.jump.measure {
        file_format::Measure::Gaussian { lambda, m, eta } => {
            LevyMeasureSpec::gaussian(lambda, m, eta)?
        }
        file_format::Measure::Vg { theta, rho, kappa } => {
            LevyMeasureSpec::variance_gamma(theta, rho, kappa)?
        }
        file_format::Measure::Numeric {
            density,
            z_min,
            z_max,
        } => {
            let expr: meval::Expr = density
                .parse()
                .map_err(|e| Error::Config(format!("cannot parse jump density: {e}")))?;
            let expr = Arc::new(expr);
            eval_expr1(&expr, 0.0).map_err(|e| {
                Error::Config(format!("jump density must be a function of z: {e}"))
            })?;
            let func: SpaceFn = Arc::new(move |z| eval_expr1(&expr, z).unwrap_or(f64::NAN));
            LevyMeasureSpec::numeric(func, z_min, z_max)?
        }
    };
    let domain = match root.model.domain {
        Some(d) => Domain {
            t: (d.t[0], d.t[1]),
            x: (d.x[0], d.x[1]),
        },
        None => Domain::default(),
    };
    let time_homogeneous = [&a, &gamma, &jump_mult].iter().all(|f| {
        let probe = |t: f64| {
            (0..=8)
                .map(|j| {
                    let x = domain.x.0 + (domain.x.1 - domain.x.0) * j as f64 / 8.0;
                    f(t, x)
                })
                .collect::<Vec<f64>>()
        };
        let (t0, t1) = domain.t;
        let base = probe(t0);
        [0.37, 0.71, 1.0].iter().all(|&frac| {
            probe(t0 + frac * (t1 - t0))
                .iter()
                .zip(base.iter())
                .all(|(u, v)| (u - v).abs() <= 1e-12 * (1.0 + v.abs()))
        })
    });
    let mut model = ModelSpec::new(
        name,
        a,
        gamma,
        jump_mult,
        measure,
        time_homogeneous,
        domain,
    )?;
    if let Some(form) = detect_proportional(&model) {
        model.proportional = Some(form);
    }
    Ok(model)
}

/// Load a model from a file on disk; the model name is the file stem.
pub fn from_file(path: &std::path::Path) -> Result<ModelSpec> {
    let content = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model")
        .to_string();
    from_toml_str(&name, &content)
}

/// Detect the proportional structure `(a, γ, mult) = (A, Γ, 1)·f(x)` on a
/// grid.  Returns the form when the model is time-homogeneous and the
/// ratios `a/f` and `γ/f` are constant in `x` to high relative accuracy.
fn detect_proportional(model: &ModelSpec) -> Option<ProportionalForm> {
    if !model.time_homogeneous {
        return None;
    }
    let t = model.domain.t.0;
    let (x0, x1) = model.domain.x;
    let xc = 0.5 * (x0 + x1);
    let f_ref = model.jump_mult(t, xc);
    if f_ref <= 0.0 {
        return None;
    }
    let a_scale = model.a(t, xc) / f_ref;
    let g_scale = model.gamma(t, xc) / f_ref;
    for j in 0..=16 {
        let x = x0 + (x1 - x0) * j as f64 / 16.0;
        let fx = model.jump_mult(t, x);
        if fx <= 0.0 {
            return None;
        }
        let ok = |lhs: f64, scale: f64| (lhs - scale * fx).abs() <= 1e-10 * (1.0 + lhs.abs());
        if !ok(model.a(t, x), a_scale) || !ok(model.gamma(t, x), g_scale) {
            return None;
        }
    }
    let mult = model.jump_mult.clone();
    let f: SpaceFn = Arc::new(move |x| mult(t, x));
    let mult2 = model.jump_mult.clone();
    let f_deriv: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync> =
        Arc::new(move |n, x| fd_derivative(&*mult2, n, t, x));
    Some(ProportionalForm {
        f,
        f_deriv,
        a_scale: TimeFn::Constant(a_scale),
        gamma_scale: TimeFn::Constant(g_scale),
    })
}
