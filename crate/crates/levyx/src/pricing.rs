//! Prices, survival probabilities, implied volatilities and greeks.
//!
//! This layer glues the expansion engines ([`crate::expand`]) to the
//! inverse transform ([`crate::transform`]):
//!
//! * [`price`] evaluates one payoff, returning per-order contributions and
//!   integration diagnostics.  Put payoffs on models with a default
//!   intensity are decomposed into a contour integral plus a
//!   strike-times-default-probability leg, with the survival probabilities
//!   evaluated by delta contraction (no contour nodes).
//! * [`price_batch`] prices many strikes in one pass, building the term
//!   polynomials once per contour node and contracting them against each
//!   strike's payoff jet — the per-strike marginal cost is a few jet
//!   multiplications.
//! * [`survival_probabilities`] / [`bond_price`] evaluate defaultable
//!   zero-coupon bonds exactly in the delta representation.
//! * [`greeks`] returns spot delta and gamma via Fourier multipliers,
//!   exact to the same order as the price itself.
//! * [`implied_vol`] inverts the zero-rate Black–Scholes formula with a
//!   safeguarded Newton iteration.

use num_complex::Complex64;
use once_cell::sync::Lazy;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::basis::SymbolExpansion;
use crate::error::{Error, Result};
use crate::expand::{
    build_term_polynomials, required_budget, ExpansionTermSet, InhomogeneousEngine,
    TermPolynomial,
};
use crate::models::TimeFn;
use crate::transform::{inverse_fourier, Contour, InversionOptions, PayoffTransform};

/// Which term-construction engine to use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Engine {
    /// Time-homogeneous engine when the expansion allows it, otherwise the
    /// quadrature engine with its default order.
    Auto,
    /// Force the polynomial recursion (errors on time-dependent
    /// coefficients).
    Homogeneous,
    /// Force nested Gauss–Legendre time integration.
    Inhomogeneous {
        /// Quadrature order per nesting level.
        quad_order: usize,
    },
}

impl Default for Engine {
    fn default() -> Self {
        Engine::Auto
    }
}

/// Default quadrature order used when [`Engine::Auto`] falls back to the
/// time-inhomogeneous engine.
pub const DEFAULT_TIME_QUAD_ORDER: usize = 24;

/// Everything needed to price one payoff.
#[derive(Clone, Debug)]
pub struct PricingRequest {
    /// Payoff to price.
    pub payoff: PayoffTransform,
    /// Valuation time `t`.
    pub valuation_time: f64,
    /// Terminal time `T`; the time to maturity is `T − t`.
    pub horizon: f64,
    /// Initial log-price `x₀`.
    pub x0: f64,
    /// Integration contour; defaults to the payoff's conventional offset.
    pub contour: Option<Contour>,
    /// Inverse-transform controls.
    pub inversion: InversionOptions,
    /// Engine selection.
    pub engine: Engine,
}

impl PricingRequest {
    /// Request with conventional defaults: valuation at `t = 0`, start
    /// `x₀ = 0`, default contour, automatic engine.
    pub fn new(payoff: PayoffTransform, horizon: f64) -> PricingRequest {
        PricingRequest {
            payoff,
            valuation_time: 0.0,
            horizon,
            x0: 0.0,
            contour: None,
            inversion: InversionOptions::default(),
            engine: Engine::Auto,
        }
    }
}

/// Numerical context of a computed price.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    /// Contour evaluations performed (0 for pure delta contractions).
    pub contour_nodes: usize,
    /// Truncation radius of the inverse transform (0 when unused).
    pub truncation_radius: f64,
    /// Largest imaginary residual across orders.
    pub im_residual: f64,
    /// Non-fatal observations.
    pub warnings: Vec<String>,
}

impl Diagnostics {
    fn contourless() -> Diagnostics {
        Diagnostics {
            contour_nodes: 0,
            truncation_radius: 0.0,
            im_residual: 0.0,
            warnings: Vec::new(),
        }
    }
}

/// A price with its per-order breakdown.
#[derive(Clone, Debug)]
pub struct PricingResult {
    /// Contribution of each expansion order; the approximation of order
    /// `n` is the sum of entries `0..=n`.
    pub per_order: Vec<f64>,
    /// Sum of all orders.
    pub value: f64,
    /// Integration diagnostics.
    pub diagnostics: Diagnostics,
}

/// Spot sensitivities alongside the price.
#[derive(Clone, Debug)]
pub struct GreeksResult {
    /// Price (all orders summed).
    pub value: f64,
    /// `∂ₓ v` — log-price delta.
    pub delta_x: f64,
    /// `∂ₓₓ v` — log-price second derivative.
    pub gamma_x: f64,
    /// `∂_S v` with `S = e^{x₀}`.
    pub delta_spot: f64,
    /// `∂²_S v`.
    pub gamma_spot: f64,
    /// Integration diagnostics.
    pub diagnostics: Diagnostics,
}

fn time_to_maturity(req: &PricingRequest) -> Result<f64> {
    let tau = req.horizon - req.valuation_time;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!(
            "time to maturity must be positive and finite, got horizon {} − valuation {}",
            req.horizon, req.valuation_time
        )));
    }
    Ok(tau)
}

/// True when any expansion order carries a default intensity.
fn has_killing(expansion: &SymbolExpansion) -> bool {
    (0..=expansion.max_order()).any(|n| match &expansion.order_symbol(n).gamma {
        TimeFn::Constant(c) => *c != 0.0,
        TimeFn::Varying(_) => true,
    })
}

enum ResolvedEngine {
    Homogeneous,
    Inhomogeneous(usize),
}

fn resolve_engine(expansion: &SymbolExpansion, engine: Engine) -> ResolvedEngine {
    match engine {
        Engine::Auto => {
            if expansion.time_homogeneous() {
                ResolvedEngine::Homogeneous
            } else {
                ResolvedEngine::Inhomogeneous(DEFAULT_TIME_QUAD_ORDER)
            }
        }
        Engine::Homogeneous => ResolvedEngine::Homogeneous,
        Engine::Inhomogeneous { quad_order } => ResolvedEngine::Inhomogeneous(quad_order),
    }
}

/// Build the value channels for a family of payoffs and a ladder of
/// Fourier multipliers `(iξ)^p`, `p = 0..multipliers`.
///
/// Channel layout: payoff-major, then multiplier power, then expansion
/// order — `channel = ((payoff_idx × multipliers) + p) × (N+1) + n`.
fn term_channel_set(
    expansion: &SymbolExpansion,
    payoffs: &[PayoffTransform],
    req: &PricingRequest,
    multipliers: usize,
) -> Result<ExpansionTermSet> {
    let tau = time_to_maturity(req)?;
    let n_orders = expansion.max_order() + 1;
    let orders = payoffs.len() * multipliers * n_orders;
    let payoffs = payoffs.to_vec();
    let expansion = expansion.clone();
    let (t, horizon) = (req.valuation_time, req.horizon);

    let eval: std::sync::Arc<dyn Fn(Complex64) -> Result<Vec<Complex64>> + Send + Sync> =
        match resolve_engine(&expansion, req.engine) {
            ResolvedEngine::Homogeneous => std::sync::Arc::new(move |xi| {
                let terms = build_term_polynomials(&expansion, xi, 0)?;
                let max_m = terms
                    .iter()
                    .map(TermPolynomial::max_h_order)
                    .max()
                    .unwrap_or(0);
                let mut out = Vec::with_capacity(payoffs.len() * multipliers * terms.len());
                for payoff in &payoffs {
                    let h = payoff.jet(xi, max_m)?;
                    let base: Vec<Complex64> = terms
                        .iter()
                        .map(|term| term.value(tau, &h))
                        .collect::<Result<_>>()?;
                    let mut mult = Complex64::new(1.0, 0.0);
                    for _ in 0..multipliers {
                        out.extend(base.iter().map(|v| mult * v));
                        mult *= Complex64::I * xi;
                    }
                }
                Ok(out)
            }),
            ResolvedEngine::Inhomogeneous(quad_order) => std::sync::Arc::new(move |xi| {
                let engine = InhomogeneousEngine::new(&expansion, horizon, 0, quad_order)?;
                let budget = required_budget(&expansion, expansion.max_order());
                let mut out = Vec::with_capacity(payoffs.len() * multipliers * n_orders);
                for payoff in &payoffs {
                    let h = payoff.jet(xi, budget)?;
                    let base = engine.values(t, xi, &h)?;
                    let mut mult = Complex64::new(1.0, 0.0);
                    for _ in 0..multipliers {
                        out.extend(base.iter().map(|v| mult * v));
                        mult *= Complex64::I * xi;
                    }
                }
                Ok(out)
            }),
        };
    Ok(ExpansionTermSet { orders, eval })
}

/// Per-order survival probabilities (defaultable zero-coupon bond terms)
/// via delta contraction at `ξ₀ = 0` — no contour integration.
pub fn survival_probabilities(
    expansion: &SymbolExpansion,
    req: &PricingRequest,
) -> Result<Vec<f64>> {
    survival_multiplied(expansion, req, 0)
}

fn survival_multiplied(
    expansion: &SymbolExpansion,
    req: &PricingRequest,
    p: usize,
) -> Result<Vec<f64>> {
    let tau = time_to_maturity(req)?;
    let extra = required_budget(expansion, expansion.max_order());
    let origin = Complex64::new(0.0, 0.0);
    let values: Vec<Complex64> = match resolve_engine(expansion, req.engine) {
        ResolvedEngine::Homogeneous => build_term_polynomials(expansion, origin, extra)?
            .iter()
            .map(|term| term.delta_value_multiplied(tau, req.x0, p))
            .collect::<Result<_>>()?,
        ResolvedEngine::Inhomogeneous(quad_order) => {
            let engine = InhomogeneousEngine::new(expansion, req.horizon, extra, quad_order)?;
            if p > 0 {
                return Err(Error::UnsupportedForm(
                    "spatial derivatives of survival probabilities are only available \
                     with the time-homogeneous engine"
                        .into(),
                ));
            }
            engine.delta_values(req.valuation_time, req.x0)?
        }
    };
    values
        .into_iter()
        .map(|v| {
            if v.im.abs() > 1e-8 * (1.0 + v.re.abs()) {
                Err(Error::Numeric(format!(
                    "survival term has imaginary residual {:.3e}",
                    v.im
                )))
            } else {
                Ok(v.re)
            }
        })
        .collect()
}

/// Defaultable zero-coupon bond `E[exp(−∫γ)]` with per-order breakdown.
/// Uses no contour nodes; the payoff field of the request is ignored.
pub fn bond_price(expansion: &SymbolExpansion, req: &PricingRequest) -> Result<PricingResult> {
    let per_order = survival_probabilities(expansion, req)?;
    let value = per_order.iter().sum();
    Ok(PricingResult {
        per_order,
        value,
        diagnostics: Diagnostics::contourless(),
    })
}

/// Continuously compounded credit spread `−ln(v)/τ` of a bond price.
pub fn credit_spread(bond_value: f64, tau: f64) -> Result<f64> {
    if !(bond_value > 0.0) {
        return Err(Error::Numeric(format!(
            "cannot take a credit spread of non-positive bond value {bond_value}"
        )));
    }
    Ok(-bond_value.ln() / tau)
}

/// Price one payoff.
pub fn price(expansion: &SymbolExpansion, req: &PricingRequest) -> Result<PricingResult> {
    let results = price_many(expansion, req, std::slice::from_ref(&req.payoff))?;
    Ok(results.into_iter().next().expect("one payoff in, one result out"))
}

/// Price the same payoff type across many strikes, sharing all
/// symbol-dependent work per contour node.
///
/// `params` are log-strikes for calls and puts, or evaluation points for
/// the delta payoff.  The request's own payoff field sets the payoff kind
/// and the contour default.
pub fn price_batch(
    expansion: &SymbolExpansion,
    req: &PricingRequest,
    params: &[f64],
) -> Result<Vec<PricingResult>> {
    let payoffs: Vec<PayoffTransform> = params
        .iter()
        .map(|&p| match req.payoff {
            PayoffTransform::Delta { .. } => PayoffTransform::Delta { y: p },
            PayoffTransform::Call { .. } => PayoffTransform::Call { log_strike: p },
            PayoffTransform::Put { .. } => PayoffTransform::Put { log_strike: p },
        })
        .collect();
    price_many(expansion, req, &payoffs)
}

fn price_many(
    expansion: &SymbolExpansion,
    req: &PricingRequest,
    payoffs: &[PayoffTransform],
) -> Result<Vec<PricingResult>> {
    if payoffs.is_empty() {
        return Ok(Vec::new());
    }
    let contour = req
        .contour
        .unwrap_or_else(|| Contour::default_for(&payoffs[0]));
    let mut strips = vec![expansion.strip()];
    for p in payoffs {
        strips.push(p.strip());
    }
    contour.validate(&strips, "pricing contour")?;

    let n_orders = expansion.max_order() + 1;
    let set = term_channel_set(expansion, payoffs, req, 1)?;
    let out = inverse_fourier(&set, req.x0, contour, &req.inversion)?;

    // Strike-independent default leg, computed once if needed.
    let needs_bond = has_killing(expansion)
        && payoffs
            .iter()
            .any(|p| matches!(p, PayoffTransform::Put { .. }));
    let bond = if needs_bond {
        Some(survival_probabilities(expansion, req)?)
    } else {
        None
    };

    let mut results = Vec::with_capacity(payoffs.len());
    for (i, payoff) in payoffs.iter().enumerate() {
        let mut per_order = out.per_order[i * n_orders..(i + 1) * n_orders].to_vec();
        let im_res = out.per_order_im[i * n_orders..(i + 1) * n_orders]
            .iter()
            .fold(0.0f64, |a, b| a.max(b.abs()));
        if let (Some(bond), PayoffTransform::Put { log_strike }) = (&bond, payoff) {
            // A put on a defaultable asset pays the full strike on default:
            // value = contour part + K·(1 − survival probability).
            let strike = log_strike.exp();
            for (n, po) in per_order.iter_mut().enumerate() {
                let indicator = if n == 0 { 1.0 } else { 0.0 };
                *po += strike * (indicator - bond[n]);
            }
        }
        let value = per_order.iter().sum();
        results.push(PricingResult {
            per_order,
            value,
            diagnostics: Diagnostics {
                contour_nodes: out.nodes,
                truncation_radius: out.radius,
                im_residual: im_res,
                warnings: out.warnings.clone(),
            },
        });
    }
    Ok(results)
}

/// Price plus exact spot delta and gamma.
///
/// The log-price derivatives are Fourier multipliers `(iξ)^p` in the same
/// contour integral; spot sensitivities follow from
/// `∂_S = e^{−x}∂ₓ` and `∂²_S = e^{−2x}(∂ₓₓ − ∂ₓ)`.
pub fn greeks(expansion: &SymbolExpansion, req: &PricingRequest) -> Result<GreeksResult> {
    let contour = req
        .contour
        .unwrap_or_else(|| Contour::default_for(&req.payoff));
    contour.validate(&[expansion.strip(), req.payoff.strip()], "pricing contour")?;

    let n_orders = expansion.max_order() + 1;
    let set = term_channel_set(expansion, std::slice::from_ref(&req.payoff), req, 3)?;
    let out = inverse_fourier(&set, req.x0, contour, &req.inversion)?;
    let sum_block =
        |p: usize| -> f64 { out.per_order[p * n_orders..(p + 1) * n_orders].iter().sum() };
    let mut value = sum_block(0);
    let mut vx = sum_block(1);
    let mut vxx = sum_block(2);

    if has_killing(expansion) {
        if let PayoffTransform::Put { log_strike } = req.payoff {
            let strike = log_strike.exp();
            let bond: f64 = survival_probabilities(expansion, req)?.iter().sum();
            let bond_dx: f64 = survival_multiplied(expansion, req, 1)?.iter().sum();
            let bond_dxx: f64 = survival_multiplied(expansion, req, 2)?.iter().sum();
            value += strike * (1.0 - bond);
            vx -= strike * bond_dx;
            vxx -= strike * bond_dxx;
        }
    }

    let s_inv = (-req.x0).exp();
    Ok(GreeksResult {
        value,
        delta_x: vx,
        gamma_x: vxx,
        delta_spot: s_inv * vx,
        gamma_spot: s_inv * s_inv * (vxx - vx),
        diagnostics: Diagnostics {
            contour_nodes: out.nodes,
            truncation_radius: out.radius,
            im_residual: out
                .per_order_im
                .iter()
                .fold(0.0f64, |a, b| a.max(b.abs())),
            warnings: out.warnings,
        },
    })
}

static STD_NORMAL: Lazy<Normal> =
    Lazy::new(|| Normal::new(0.0, 1.0).expect("unit normal parameters are valid"));

/// Zero-rate Black–Scholes price in log coordinates: spot `e^{x0}`,
/// strike `e^{log_strike}`, total volatility `vol·√τ`.
pub fn black_scholes_price(
    is_put: bool,
    x0: f64,
    log_strike: f64,
    vol: f64,
    tau: f64,
) -> f64 {
    let s = x0.exp();
    let k = log_strike.exp();
    let w = vol * tau.sqrt();
    if w <= 0.0 {
        let call = (s - k).max(0.0);
        return if is_put { call - s + k } else { call };
    }
    let d1 = (x0 - log_strike) / w + 0.5 * w;
    let d2 = d1 - w;
    let call = s * STD_NORMAL.cdf(d1) - k * STD_NORMAL.cdf(d2);
    if is_put {
        call - s + k
    } else {
        call
    }
}

/// Black–Scholes vega (identical for put and call at zero rates).
pub fn black_scholes_vega(x0: f64, log_strike: f64, vol: f64, tau: f64) -> f64 {
    let w = vol * tau.sqrt();
    if w <= 0.0 {
        return 0.0;
    }
    let d1 = (x0 - log_strike) / w + 0.5 * w;
    x0.exp() * STD_NORMAL.pdf(d1) * tau.sqrt()
}

/// Invert the zero-rate Black–Scholes formula for the volatility.
///
/// Returns [`Error::OutOfRange`] when the price sits outside the
/// arbitrage bounds (intrinsic value, spot/strike cap).
pub fn implied_vol(
    price: f64,
    is_put: bool,
    x0: f64,
    log_strike: f64,
    tau: f64,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("implied vol needs τ > 0, got {tau}")));
    }
    let s = x0.exp();
    let k = log_strike.exp();
    let (lower, upper) = if is_put {
        ((k - s).max(0.0), k)
    } else {
        ((s - k).max(0.0), s)
    };
    if !(price > lower) || !(price < upper) {
        return Err(Error::OutOfRange(format!(
            "price {price:.6e} outside the arbitrage interval ({lower:.6e}, {upper:.6e}) \
             for {} at strike e^{log_strike:.4}",
            if is_put { "put" } else { "call" },
        )));
    }

    // Bracket the root, then run Newton safeguarded by bisection.
    let mut lo = 1e-9;
    let mut hi = 1.0;
    while black_scholes_price(is_put, x0, log_strike, hi, tau) < price {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::Numeric(format!(
                "implied vol iteration failed to bracket price {price}"
            )));
        }
    }
    let mut sigma = 0.5 * (lo + hi);
    for _ in 0..200 {
        let diff = black_scholes_price(is_put, x0, log_strike, sigma, tau) - price;
        if diff.abs() < 1e-16 * k {
            return Ok(sigma);
        }
        if diff > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        if (hi - lo) < 1e-10 {
            return Ok(0.5 * (lo + hi));
        }
        let vega = black_scholes_vega(x0, log_strike, sigma, tau);
        let newton = sigma - diff / vega;
        sigma = if vega > 1e-300 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(sigma)
}
