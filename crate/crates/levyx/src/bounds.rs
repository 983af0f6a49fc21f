//! Evaluable error-envelope kernels for Gaussian-jump models.
//!
//! The truncation error of the expansion-based densities and prices admits,
//! for compound-Poisson models with Gaussian marks, an envelope of the shape
//!
//! ```text
//! C · (T − t) · ( Γ̄(t,x;T,y) + ‖∂ₓν‖∞ · Γ̃(t,x;T,y) )
//! ```
//!
//! where `Γ̄` is the transition density of a *dominating* constant-coefficient
//! jump-diffusion — Brownian motion with half-variance `M̄/2` plus
//! compound-Poisson jumps of intensity `M̄` and `N(M̄, M̄)` marks — and `Γ̃`
//! resums convolution powers `𝒞ᵏΓ̄` of `Γ̄` against the mark law with
//! `(M̄τ)^{k/2}/√(k!)` weights.  Both kernels are explicit Poisson-weighted
//! Gaussian series and are evaluated here by direct summation.
//!
//! The constants `C` and `M̄` are not constructive: every value produced by
//! this module is an **envelope shape** for ratio and decay-rate studies,
//! never a certified bound.  `M̄` can be supplied directly or derived from a
//! model's coefficient suprema over a compact window via
//! [`BoundParams::auto`]; `C` is always caller-supplied.
//!
//! Two structural identities make the kernels testable without reference
//! values: `Γ̄` is a probability density in `y`, and the convolution powers
//! satisfy the Chapman–Kolmogorov relation
//! `∫ 𝒞ᵏΓ̄(t,x;s,ζ) 𝒞ᴺΓ̄(s,ζ;T,y) dζ = 𝒞^{k+N}Γ̄(t,x;T,y)`.
//! [`semigroup_check`] evaluates that residual by quadrature.

use crate::error::{Error, Result};
use crate::models::{LevyMeasureSpec, ModelSpec};
use crate::quad;
use crate::transform::PayoffTransform;

/// Terms of either series are dropped once their weight falls below this
/// threshold (past the mode, so the tail is genuinely decreasing).
const WEIGHT_CUTOFF: f64 = 1e-16;

/// Gauss–Legendre order used for the `y`/`ζ` integrations.
const PANEL_ORDER: usize = 32;

/// Tail padding for integration windows, in standard deviations of the
/// widest Gaussian present.
const TAIL_SIGMAS: f64 = 13.0;

/// Parameters of the dominating constant-coefficient jump-diffusion and the
/// series truncation limits.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundParams {
    /// Dominating constant `M̄ > 0`: half-variance scale, jump intensity,
    /// mark mean, and mark variance of the dominating process.
    pub m_bar: f64,
    /// Hard cap on the Poisson index `n` of each kernel series.
    pub n_max: usize,
    /// Hard cap on the convolution index `k` of the `Γ̃` series.
    pub k_max: usize,
}

impl BoundParams {
    /// Parameters with the default truncation limits.  The limits are far
    /// beyond where the `1e-16` weight cutoff stops summation for any
    /// moderate `M̄·(T−t)`, so doubling them does not change values.
    pub fn new(m_bar: f64) -> Result<BoundParams> {
        BoundParams::with_cutoffs(m_bar, 80, 60)
    }

    /// Parameters with explicit series truncation limits.
    pub fn with_cutoffs(m_bar: f64, n_max: usize, k_max: usize) -> Result<BoundParams> {
        if !m_bar.is_finite() || !(m_bar > 0.0) {
            return Err(Error::Config(format!(
                "dominating constant must satisfy M̄ > 0, got {m_bar}"
            )));
        }
        if n_max == 0 || k_max == 0 {
            return Err(Error::Config(format!(
                "series truncation limits must be positive, got n_max = {n_max}, k_max = {k_max}"
            )));
        }
        Ok(BoundParams {
            m_bar,
            n_max,
            k_max,
        })
    }

    /// Derive `M̄` from a model's coefficient suprema over the compact
    /// window `t ∈ t_window`, `x ∈ x_window`.
    ///
    /// Scans a grid for the largest of `2a`, `γ`, the effective jump
    /// intensity, the mark variance `η²`, and the mark mean `|m|`, then adds
    /// 10% headroom.  Requires Gaussian marks — the envelope theory does not
    /// cover other jump families.
    pub fn auto(
        model: &ModelSpec,
        t_window: (f64, f64),
        x_window: (f64, f64),
    ) -> Result<BoundParams> {
        let (lambda, m, eta) = require_gaussian(model.measure())?;
        for (name, (lo, hi)) in [("t", t_window), ("x", x_window)] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::Config(format!(
                    "{name} window must be a finite ordered interval, got [{lo}, {hi}]"
                )));
            }
        }
        let t_points = if model.time_homogeneous() || t_window.0 == t_window.1 {
            1
        } else {
            41
        };
        let x_points = 201;
        let mut sup = eta * eta;
        sup = sup.max(m.abs());
        for i in 0..t_points {
            let t = if t_points == 1 {
                t_window.0
            } else {
                t_window.0 + (t_window.1 - t_window.0) * i as f64 / (t_points - 1) as f64
            };
            for j in 0..x_points {
                let x = x_window.0
                    + (x_window.1 - x_window.0) * j as f64 / (x_points - 1) as f64;
                sup = sup.max(2.0 * model.a(t, x));
                sup = sup.max(model.gamma(t, x));
                sup = sup.max(model.jump_mult(t, x) * lambda);
            }
        }
        if !(sup > 0.0) {
            return Err(Error::Config(
                "all dominating quantities vanish on the window: the model has no \
                 diffusion, killing, or jumps there"
                    .into(),
            ));
        }
        BoundParams::new(1.1 * sup)
    }
}

/// Largest of the `x`-derivative suprema of the state-dependent measure
/// parameters over the window — the `‖∂ₓν‖∞` input of the envelope.
///
/// For Gaussian marks with a state-dependent multiplier only the effective
/// intensity varies in `x`; the mark mean and variance are constants, so
/// their derivatives vanish.
pub fn measure_x_derivative_sup(
    model: &ModelSpec,
    t_window: (f64, f64),
    x_window: (f64, f64),
) -> Result<f64> {
    let (lambda, _, _) = require_gaussian(model.measure())?;
    let t_points = if model.time_homogeneous() || t_window.0 == t_window.1 {
        1
    } else {
        41
    };
    let x_points = 201;
    let mut sup = 0.0f64;
    for i in 0..t_points {
        let t = if t_points == 1 {
            t_window.0
        } else {
            t_window.0 + (t_window.1 - t_window.0) * i as f64 / (t_points - 1) as f64
        };
        for j in 0..x_points {
            let x = x_window.0 + (x_window.1 - x_window.0) * j as f64 / (x_points - 1) as f64;
            sup = sup.max((model.jump_mult_deriv(1, t, x) * lambda).abs());
        }
    }
    Ok(sup)
}

fn require_gaussian(measure: &LevyMeasureSpec) -> Result<(f64, f64, f64)> {
    match measure {
        LevyMeasureSpec::Gaussian { lambda, m, eta } => Ok((*lambda, *m, *eta)),
        other => Err(Error::UnsupportedForm(format!(
            "error envelopes require Gaussian jump marks, got {other:?}"
        ))),
    }
}

fn validate_times(t: f64, big_t: f64) -> Result<f64> {
    if !t.is_finite() || !big_t.is_finite() || !(t < big_t) {
        return Err(Error::Config(format!(
            "require t < T with both finite, got t = {t}, T = {big_t}"
        )));
    }
    Ok(big_t - t)
}

/// `k`-fold mark-convolution `𝒞ᵏΓ̄(t,x;T,y)` of the dominating transition
/// density, as a Poisson-weighted Gaussian series:
///
/// ```text
/// e^{−M̄τ} Σₙ (M̄τ)ⁿ/n! · N(x − y + M̄(n+k); 0, M̄(τ+n+k))
/// ```
///
/// with `τ = T − t`.  `k = 0` is `Γ̄` itself.  The sum stops when the
/// Poisson weight drops below `1e-16` past its mode.
pub fn convolved_kernel(
    k: usize,
    t: f64,
    x: f64,
    big_t: f64,
    y: f64,
    params: &BoundParams,
) -> Result<f64> {
    let tau = validate_times(t, big_t)?;
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::Config(format!(
            "spatial arguments must be finite, got x = {x}, y = {y}"
        )));
    }
    let mb = params.m_bar;
    let rate = mb * tau;
    let mut total = 0.0;
    let mut weight = (-rate).exp();
    for n in 0..params.n_max {
        if n > 0 {
            weight *= rate / n as f64;
        }
        if weight < WEIGHT_CUTOFF && n as f64 > rate {
            break;
        }
        let var = mb * (tau + (n + k) as f64);
        let shift = x - y + mb * (n + k) as f64;
        total += weight * (-shift * shift / (2.0 * var)).exp()
            / (2.0 * std::f64::consts::PI * var).sqrt();
    }
    Ok(total)
}

/// The resummed kernel `Γ̃(t,x;T,y)`, evaluated as the explicit double
/// series
///
/// ```text
/// e^{−M̄τ} Σₙ Σₖ (M̄τ)^{n+k/2} / (n!·√(k!)) · N(x − y + M̄(n+k+1); 0, M̄(τ+n+k+1))
/// ```
///
/// The `√(k!)` denominator gives the outer series super-exponential decay;
/// like the Poisson sum it is truncated at weight `1e-16` past the mode.
pub fn gamma_tilde(t: f64, x: f64, big_t: f64, y: f64, params: &BoundParams) -> Result<f64> {
    let tau = validate_times(t, big_t)?;
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::Config(format!(
            "spatial arguments must be finite, got x = {x}, y = {y}"
        )));
    }
    let mb = params.m_bar;
    let rate = mb * tau;
    let sqrt_rate = rate.sqrt();
    let mut total = 0.0;
    let mut outer = 1.0; // (M̄τ)^{k/2} / √(k!)
    for k in 0..params.k_max {
        if k > 0 {
            outer *= sqrt_rate / (k as f64).sqrt();
        }
        if outer < WEIGHT_CUTOFF && k as f64 > rate {
            break;
        }
        let mut weight = (-rate).exp();
        for n in 0..params.n_max {
            if n > 0 {
                weight *= rate / n as f64;
            }
            if weight < WEIGHT_CUTOFF && n as f64 > rate {
                break;
            }
            let var = mb * (tau + (n + k + 1) as f64);
            let shift = x - y + mb * (n + k + 1) as f64;
            total += outer * weight * (-shift * shift / (2.0 * var)).exp()
                / (2.0 * std::f64::consts::PI * var).sqrt();
        }
    }
    Ok(total)
}

/// Component breakdown of one envelope evaluation.
#[derive(Clone, Copy, Debug)]
pub struct EnvelopeBreakdown {
    /// The dominating density `Γ̄(t,x;T,y)`.
    pub gamma_bar: f64,
    /// The resummed kernel `Γ̃(t,x;T,y)`.
    pub gamma_tilde: f64,
    /// `C·(T−t)·(Γ̄ + ‖∂ₓν‖∞·Γ̃)`.
    pub value: f64,
}

/// Density error-envelope shape `C·(T−t)·(Γ̄ + ‖∂ₓν‖∞·Γ̃)` at `(t,x;T,y)`.
///
/// `measure` witnesses the Gaussian-marks hypothesis under which the
/// envelope is meaningful; other jump families are rejected.  `d_nu_sup`
/// is the largest `x`-derivative supremum of the measure parameters
/// (see [`measure_x_derivative_sup`]); `c` is the caller's constant.
pub fn density_error_envelope(
    measure: &LevyMeasureSpec,
    t: f64,
    x: f64,
    big_t: f64,
    y: f64,
    params: &BoundParams,
    d_nu_sup: f64,
    c: f64,
) -> Result<EnvelopeBreakdown> {
    require_gaussian(measure)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Config(format!(
            "envelope constant must satisfy C > 0, got {c}"
        )));
    }
    if !(d_nu_sup >= 0.0) || !d_nu_sup.is_finite() {
        return Err(Error::Config(format!(
            "measure-derivative supremum must be ≥ 0, got {d_nu_sup}"
        )));
    }
    let tau = validate_times(t, big_t)?;
    let gamma_bar = convolved_kernel(0, t, x, big_t, y, params)?;
    let tilde = if d_nu_sup > 0.0 {
        gamma_tilde(t, x, big_t, y, params)?
    } else {
        0.0
    };
    Ok(EnvelopeBreakdown {
        gamma_bar,
        gamma_tilde: tilde,
        value: c * tau * (gamma_bar + d_nu_sup * tilde),
    })
}

/// Price error-envelope shape: the density envelope integrated against the
/// absolute payoff, `C·(T−t)·∫|h(y)|(Γ̄ + ‖∂ₓν‖∞·Γ̃)(t,x;T,y) dy`.
///
/// For the Dirac payoff this reduces to the density envelope at the target
/// point.
pub fn price_error_envelope(
    measure: &LevyMeasureSpec,
    payoff: &PayoffTransform,
    t: f64,
    x: f64,
    big_t: f64,
    params: &BoundParams,
    d_nu_sup: f64,
    c: f64,
) -> Result<f64> {
    require_gaussian(measure)?;
    let tau = validate_times(t, big_t)?;
    if let PayoffTransform::Delta { y } = payoff {
        return Ok(density_error_envelope(measure, t, x, big_t, *y, params, d_nu_sup, c)?.value);
    }
    let (mut lo, mut hi) = envelope_window(t, x, big_t, params, d_nu_sup > 0.0);
    match payoff {
        PayoffTransform::Put { log_strike } => {
            // |h| vanishes above the strike.
            hi = hi.min(*log_strike);
        }
        PayoffTransform::Call { log_strike } => {
            // |h| vanishes below the strike but grows like e^y above it, so
            // push the upper edge out by the largest Gaussian variance.
            lo = lo.max(*log_strike);
            let (n_eff, k_eff) = series_extents(params, tau);
            hi += params.m_bar * (tau + (n_eff + k_eff + 1) as f64);
        }
        PayoffTransform::Delta { .. } => unreachable!("handled above"),
    }
    if lo >= hi {
        return Ok(0.0);
    }
    let integral = integrate_panels(lo, hi, panel_width(params, tau), &mut |y| {
        let h = payoff
            .payoff_value(y)
            .expect("call/put payoffs have pointwise values");
        if h == 0.0 {
            return Ok(0.0);
        }
        let e = density_error_envelope(measure, t, x, big_t, y, params, d_nu_sup, c)?;
        Ok(h.abs() * (e.gamma_bar + d_nu_sup * e.gamma_tilde))
    })?;
    Ok(c * tau * integral)
}

/// `∫ Γ̄(t,x;T,y) dy` by quadrature — equals 1 for any parameters, since
/// `Γ̄` is the transition density of the dominating process.
pub fn gamma_bar_mass(t: f64, x: f64, big_t: f64, params: &BoundParams) -> Result<f64> {
    let tau = validate_times(t, big_t)?;
    let (lo, hi) = envelope_window(t, x, big_t, params, false);
    integrate_panels(lo, hi, panel_width(params, tau), &mut |y| {
        convolved_kernel(0, t, x, big_t, y, params)
    })
}

/// Chapman–Kolmogorov residual
/// `|∫𝒞ᵏΓ̄(t,x;s,ζ)·𝒞ᴺΓ̄(s,ζ;T,y) dζ − 𝒞^{k+N}Γ̄(t,x;T,y)|`
/// with the `ζ` integral done by panelled Gauss–Legendre quadrature.
pub fn semigroup_check(
    k: usize,
    n: usize,
    t: f64,
    s: f64,
    big_t: f64,
    x: f64,
    y: f64,
    params: &BoundParams,
) -> Result<f64> {
    validate_times(t, s)?;
    validate_times(s, big_t)?;
    let mb = params.m_bar;
    // First kernel sends mass upward from x on [t, s]; the second, read as a
    // function of its *starting* point ζ, reaches y from below on [s, T].
    let (n1, _) = series_extents(params, s - t);
    let (n2, _) = series_extents(params, big_t - s);
    let pad1 = TAIL_SIGMAS * (mb * ((s - t) + (n1 + k) as f64)).sqrt() + 1.0;
    let pad2 = TAIL_SIGMAS * (mb * ((big_t - s) + (n2 + n) as f64)).sqrt() + 1.0;
    let lo = (x - pad1).min(y - mb * (n2 + n) as f64 - pad2);
    let hi = (x + mb * (n1 + k) as f64 + pad1).max(y + pad2);
    let width = panel_width(params, (s - t).min(big_t - s));
    let integral = integrate_panels(lo, hi, width, &mut |z| {
        Ok(convolved_kernel(k, t, x, s, z, params)?
            * convolved_kernel(n, s, z, big_t, y, params)?)
    })?;
    let direct = convolved_kernel(k + n, t, x, big_t, y, params)?;
    Ok((integral - direct).abs())
}

/// Number of series terms retained before the weight cutoff fires, for the
/// Poisson index and the `√(k!)` index respectively.
fn series_extents(params: &BoundParams, tau: f64) -> (usize, usize) {
    let rate = params.m_bar * tau;
    let mut n_eff = params.n_max;
    let mut weight = (-rate).exp();
    for n in 0..params.n_max {
        if n > 0 {
            weight *= rate / n as f64;
        }
        if weight < WEIGHT_CUTOFF && n as f64 > rate {
            n_eff = n;
            break;
        }
    }
    let sqrt_rate = rate.sqrt();
    let mut k_eff = params.k_max;
    let mut outer = 1.0;
    for k in 0..params.k_max {
        if k > 0 {
            outer *= sqrt_rate / (k as f64).sqrt();
        }
        if outer < WEIGHT_CUTOFF && k as f64 > rate {
            k_eff = k;
            break;
        }
    }
    (n_eff, k_eff)
}

/// Window outside which every retained Gaussian of `Γ̄` (and of `Γ̃` when
/// `with_tilde` is set) is far below the weight cutoff.
fn envelope_window(
    t: f64,
    x: f64,
    big_t: f64,
    params: &BoundParams,
    with_tilde: bool,
) -> (f64, f64) {
    let tau = big_t - t;
    let mb = params.m_bar;
    let (n_eff, k_eff) = series_extents(params, tau);
    let reach = if with_tilde { n_eff + k_eff + 1 } else { n_eff };
    let pad = TAIL_SIGMAS * (mb * (tau + reach as f64)).sqrt() + 1.0;
    (x - pad, x + mb * reach as f64 + pad)
}

/// Panel width adapted to the narrowest Gaussian present, `σ = √(M̄τ)`.
fn panel_width(params: &BoundParams, tau: f64) -> f64 {
    (params.m_bar * tau).sqrt().clamp(0.2, 2.0)
}

/// Composite Gauss–Legendre integration of `f` over `[lo, hi]`.
fn integrate_panels(
    lo: f64,
    hi: f64,
    width: f64,
    f: &mut dyn FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    let n_panels = (((hi - lo) / width).ceil() as usize).max(1);
    let step = (hi - lo) / n_panels as f64;
    let rule = quad::gauss_legendre(PANEL_ORDER);
    let mut panel_values = Vec::with_capacity(n_panels);
    for p in 0..n_panels {
        let a = lo + p as f64 * step;
        let mid = a + 0.5 * step;
        let half = 0.5 * step;
        let mut sum = 0.0;
        for (&node, &w) in rule.0.iter().zip(&rule.1) {
            sum += f(mid + half * node)? * (half * w);
        }
        panel_values.push(sum);
    }
    Ok(quad::pairwise_sum(&panel_values))
}
