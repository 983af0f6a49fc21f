//! Polynomial basis expansions of the state-dependent symbol.
//!
//! A state-dependent symbol `φ(t, x, ξ)` is written as
//! `φ = Σₙ Bₙ(x)·φₙ(t, ξ)` with `B₀ ≡ 1`, so that the order-0 part is an
//! honest (state-independent) characteristic exponent and the higher orders
//! are polynomial corrections.  Three families are provided:
//!
//! * **Taylor** around a point `x̄`: `Bₙ = (x − x̄)ⁿ`, coefficients from
//!   x-derivatives of the model coefficients.
//! * **Two-point Taylor** around `x̄₁ < x̄₂` with an additive shift `M`:
//!   degree-(2n−1) basis polynomials interpolating derivative data at both
//!   points.  Requires the proportional coefficient structure
//!   `(a, γ, ν) = f(x)·(A(t), Γ(t), 𝒩)`, in which case every order `n ≥ 1`
//!   shares the single amplitude symbol `Φ` and order 0 carries `M·Φ`.
//! * **Hermite** around `x̄`: orthonormal Hermite functions under the weight
//!   `exp(−(x−x̄)²)`, coefficients by Gauss–Hermite quadrature — no
//!   derivatives of the model coefficients are needed.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::models::{FrozenSymbol, ModelSpec, TimeFn};

/// Selects an expansion family and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisFamily {
    /// One-point Taylor expansion around `xbar`.
    Taylor {
        /// Expansion point.
        xbar: f64,
    },
    /// Two-point Taylor expansion around `x1 < x2` with additive shift `m`.
    TwoPointTaylor {
        /// Left expansion point.
        x1: f64,
        /// Right expansion point.
        x2: f64,
        /// Additive constant split off so that `B₀ ≡ 1`.
        m: f64,
    },
    /// Hermite expansion centered at `xbar` with the given Gauss–Hermite
    /// quadrature order for the coefficient projections.
    Hermite {
        /// Center of the Gaussian weight.
        xbar: f64,
        /// Gauss–Hermite order used for coefficient integrals.
        quad_order: usize,
    },
}

/// A basis polynomial stored by monomial coefficients (ascending powers).
#[derive(Clone, Debug, PartialEq)]
pub struct BasisPolynomial {
    coeffs: Vec<f64>,
}

impl BasisPolynomial {
    /// Build from monomial coefficients in ascending order; trailing zeros
    /// are trimmed (the zero polynomial keeps a single coefficient).
    pub fn new(mut coeffs: Vec<f64>) -> BasisPolynomial {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        BasisPolynomial { coeffs }
    }

    /// The constant polynomial 1.
    pub fn one() -> BasisPolynomial {
        BasisPolynomial { coeffs: vec![1.0] }
    }

    /// Monomial coefficients, ascending.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree of the stored polynomial (0 for constants, including 0).
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// True when all coefficients vanish.
    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Evaluate by Horner's rule.
    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn poly_add_scaled(acc: &mut Vec<f64>, p: &[f64], s: f64) {
    if acc.len() < p.len() {
        acc.resize(p.len(), 0.0);
    }
    for (a, &c) in acc.iter_mut().zip(p.iter()) {
        *a += s * c;
    }
}

/// Expand `(x + shift)^n` into monomial coefficients.
fn shifted_power(shift: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = crate::models::binomial(n, k) * shift.powi((n - k) as i32);
    }
    out
}

/// The full expansion: basis polynomials paired with per-order frozen
/// symbols, `φ(t,x,ξ) ≈ Σₙ Bₙ(x)·φₙ(t,ξ)`.
#[derive(Clone, Debug)]
pub struct SymbolExpansion {
    family: BasisFamily,
    basis: Vec<BasisPolynomial>,
    orders: Vec<FrozenSymbol>,
    time_homogeneous: bool,
}

impl SymbolExpansion {
    /// The family this expansion was built with.
    pub fn family(&self) -> &BasisFamily {
        &self.family
    }

    /// Highest expansion order `N` (orders run `0..=N`).
    pub fn max_order(&self) -> usize {
        self.orders.len() - 1
    }

    /// Basis polynomial `Bₙ`.
    pub fn basis(&self, n: usize) -> &BasisPolynomial {
        &self.basis[n]
    }

    /// Frozen symbol `φₙ`.
    pub fn order_symbol(&self, n: usize) -> &FrozenSymbol {
        &self.orders[n]
    }

    /// True when every order has time-constant coefficients, enabling the
    /// time-homogeneous expansion engine.
    pub fn time_homogeneous(&self) -> bool {
        self.time_homogeneous
    }

    /// Intersection of the admissible `Im ξ` strips of all orders.
    pub fn strip(&self) -> (f64, f64) {
        self.orders.iter().fold(
            (f64::NEG_INFINITY, f64::INFINITY),
            |(lo, hi), sym| {
                let (l, h) = sym.strip();
                (lo.max(l), hi.min(h))
            },
        )
    }

    /// Reconstruct the diffusion coefficient `Σₙ Bₙ(x)·aₙ(t)` — the
    /// diagnostic for how well the truncated basis represents the model.
    pub fn reconstruct_a(&self, t: f64, x: f64) -> f64 {
        self.reconstruct_with(t, x, |sym| &sym.a)
    }

    /// Reconstruct the default intensity.
    pub fn reconstruct_gamma(&self, t: f64, x: f64) -> f64 {
        self.reconstruct_with(t, x, |sym| &sym.gamma)
    }

    /// Reconstruct the jump multiplier.
    pub fn reconstruct_jump_mult(&self, t: f64, x: f64) -> f64 {
        self.reconstruct_with(t, x, |sym| &sym.jump_mult)
    }

    fn reconstruct_with(&self, t: f64, x: f64, pick: impl Fn(&FrozenSymbol) -> &TimeFn) -> f64 {
        self.basis
            .iter()
            .zip(self.orders.iter())
            .map(|(b, sym)| b.eval(x) * pick(sym).eval(t))
            .sum()
    }
}

fn time_fn_from(model: &ModelSpec, eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>) -> TimeFn {
    if model.time_homogeneous() {
        TimeFn::Constant(eval(model.domain().t.0))
    } else {
        TimeFn::Varying(eval)
    }
}

/// One-point Taylor expansion of the model symbol around `xbar`, orders
/// `0..=n_max`.  Coefficients are scaled x-derivatives of the model
/// coefficients at `xbar` (analytic when the model supplies them, central
/// finite differences otherwise).
pub fn taylor_expand(model: &ModelSpec, xbar: f64, n_max: usize) -> Result<SymbolExpansion> {
    let mut basis = Vec::with_capacity(n_max + 1);
    let mut orders = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        basis.push(BasisPolynomial::new(shifted_power(-xbar, n)));
        let fact = crate::jets::factorial(n);
        let a = {
            let m = model.clone();
            time_fn_from(model, Arc::new(move |t| m.a_deriv(n, t, xbar) / fact))
        };
        let gamma = {
            let m = model.clone();
            time_fn_from(model, Arc::new(move |t| m.gamma_deriv(n, t, xbar) / fact))
        };
        let jump_mult = {
            let m = model.clone();
            time_fn_from(
                model,
                Arc::new(move |t| m.jump_mult_deriv(n, t, xbar) / fact),
            )
        };
        orders.push(FrozenSymbol {
            a,
            gamma,
            jump_mult,
            measure: model.measure().clone(),
        });
    }
    let time_homogeneous = orders.iter().all(FrozenSymbol::is_time_constant);
    Ok(SymbolExpansion {
        family: BasisFamily::Taylor { xbar },
        basis,
        orders,
        time_homogeneous,
    })
}

/// Interpolation coefficient `Cₙ(α, β)` of the two-point Taylor series of
/// `F`, built from plain derivatives of `F` at the two points.
///
/// Returns `(value, scale)` where `scale` is the sum of the magnitudes of
/// the individual summands.  When the profile is a low-degree polynomial the
/// summands cancel exactly in real arithmetic; comparing `value` against
/// `scale` lets the caller recognise a coefficient that is pure rounding
/// noise and snap it to zero.
fn two_point_c(
    n: usize,
    alpha: f64,
    beta: f64,
    f_at: &dyn Fn(usize, f64) -> f64,
) -> (f64, f64) {
    if n == 0 {
        let v = f_at(0, beta) / (beta - alpha);
        return (v, v.abs());
    }
    let mut sum = 0.0;
    let mut scale = 0.0;
    for k in 0..=n {
        let w = crate::jets::factorial(k + n - 1)
            / (crate::jets::factorial(k)
                * crate::jets::factorial(n)
                * crate::jets::factorial(n - k));
        let sign_k = if k % 2 == 0 { 1.0 } else { -1.0 };
        let sign_n1 = if (n + 1) % 2 == 0 { 1.0 } else { -1.0 };
        let numer = sign_k * k as f64 * f_at(n - k, alpha) + sign_n1 * n as f64 * f_at(n - k, beta);
        let term = w * numer / (alpha - beta).powi((k + n + 1) as i32);
        sum += term;
        scale += term.abs();
    }
    (sum, scale)
}

/// Two-point Taylor expansion around `x1 < x2` with additive shift `m`,
/// orders `0..=n_max`.
///
/// Requires the proportional structure `(a, γ, ν) = f(x)·(A(t), Γ(t), 𝒩)`:
/// order 0 is `B₀ ≡ 1` with symbol `M·Φ`, and each order `n ≥ 1` carries the
/// degree-(2n−1) interpolating polynomial with the shared amplitude `Φ`.
pub fn two_point_taylor_expand(
    model: &ModelSpec,
    x1: f64,
    x2: f64,
    m: f64,
    n_max: usize,
) -> Result<SymbolExpansion> {
    if !(x1 < x2) {
        return Err(Error::Config(format!(
            "two-point expansion needs x1 < x2, got x1 = {x1}, x2 = {x2}"
        )));
    }
    let form = model.proportional_form().ok_or_else(|| {
        Error::UnsupportedForm(
            "two-point Taylor expansion requires coefficients proportional to a \
             single spatial profile f(x); this model has no such structure"
                .into(),
        )
    })?;
    let f = form.f.clone();
    let f_deriv = form.f_deriv.clone();
    // Derivatives of F = f − M: the shift only affects order 0.
    let f_at = move |j: usize, x: f64| -> f64 {
        if j == 0 {
            f(x) - m
        } else {
            f_deriv(j, x)
        }
    };

    let mut basis = vec![BasisPolynomial::one()];
    for n in 1..=n_max {
        let (c12raw, s12) = two_point_c(n - 1, x1, x2, &f_at);
        let (c21raw, s21) = two_point_c(n - 1, x2, x1, &f_at);
        // For profiles that are polynomials of degree < n the summands inside
        // Cₙ₋₁ cancel exactly in real arithmetic; snap rounding residue to
        // zero so the expansion genuinely terminates (and downstream
        // recursions can skip the order).
        let c12 = if c12raw.abs() <= 1e-13 * s12 { 0.0 } else { c12raw };
        let c21 = if c21raw.abs() <= 1e-13 * s21 { 0.0 } else { c21raw };
        // Bracket: c12·(x − x1) + c21·(x − x2).
        let bracket = vec![-c12 * x1 - c21 * x2, c12 + c21];
        // Multiply by ((x − x1)(x − x2))^{n−1}.
        let quad = poly_mul(&[-x1, 1.0], &[-x2, 1.0]);
        let mut poly = bracket;
        for _ in 0..n - 1 {
            poly = poly_mul(&poly, &quad);
        }
        let b = BasisPolynomial::new(poly);
        debug_assert!(b.degree() <= 2 * n - 1);
        basis.push(b);
    }

    let amplitude = FrozenSymbol {
        a: form.a_scale.clone(),
        gamma: form.gamma_scale.clone(),
        jump_mult: TimeFn::Constant(1.0),
        measure: model.measure().clone(),
    };
    let scale_time_fn = |tf: &TimeFn, s: f64| -> TimeFn {
        match tf {
            TimeFn::Constant(v) => TimeFn::Constant(v * s),
            TimeFn::Varying(f) => {
                let f = f.clone();
                TimeFn::Varying(Arc::new(move |t| f(t) * s))
            }
        }
    };
    let mut orders = vec![FrozenSymbol {
        a: scale_time_fn(&amplitude.a, m),
        gamma: scale_time_fn(&amplitude.gamma, m),
        jump_mult: TimeFn::Constant(m),
        measure: model.measure().clone(),
    }];
    for _ in 1..=n_max {
        orders.push(amplitude.clone());
    }
    let time_homogeneous = orders.iter().all(FrozenSymbol::is_time_constant);
    Ok(SymbolExpansion {
        family: BasisFamily::TwoPointTaylor { x1, x2, m },
        basis,
        orders,
        time_homogeneous,
    })
}

/// Monomial coefficients of the orthonormal Hermite function `Hₙ` for the
/// weight `exp(−x²)`:
///
/// `Hₙ(x) = (∂ₓⁿ e^{−x²}) / (e^{−x²} · √((2n)!! √π))`,
///
/// i.e. `(−1)ⁿ/√(2ⁿ n! √π)` times the physicists' Hermite polynomial.
pub fn hermite_polynomial(n: usize) -> BasisPolynomial {
    // Physicists' recurrence: H₀ = 1, H₁ = 2x, H_{k+1} = 2x·H_k − 2k·H_{k−1}.
    let mut prev: Vec<f64> = vec![1.0];
    let mut cur: Vec<f64> = vec![0.0, 2.0];
    let phys: Vec<f64> = match n {
        0 => prev,
        1 => cur,
        _ => {
            for k in 1..n {
                let mut next = vec![0.0; k + 2];
                for (j, &c) in cur.iter().enumerate() {
                    next[j + 1] += 2.0 * c;
                }
                for (j, &c) in prev.iter().enumerate() {
                    next[j] -= 2.0 * k as f64 * c;
                }
                prev = std::mem::replace(&mut cur, next);
            }
            cur
        }
    };
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let norm = sign
        / (2.0f64.powi(n as i32) * crate::jets::factorial(n) * std::f64::consts::PI.sqrt())
            .sqrt();
    BasisPolynomial::new(phys.into_iter().map(|c| c * norm).collect())
}

/// Hermite expansion centered at `xbar`, orders `0..=n_max`, with
/// coefficient projections `⟨·, Hₙ⟩` computed by Gauss–Hermite quadrature
/// of order `quad_order` (must be at least `n_max + 1`).
pub fn hermite_expand(
    model: &ModelSpec,
    xbar: f64,
    n_max: usize,
    quad_order: usize,
) -> Result<SymbolExpansion> {
    if quad_order < n_max + 1 {
        return Err(Error::Config(format!(
            "Gauss–Hermite order {quad_order} is insufficient for expansion order {n_max}; \
             need at least {}",
            n_max + 1
        )));
    }
    let rule = crate::quad::gauss_hermite(quad_order);
    let mut basis = Vec::with_capacity(n_max + 1);
    let mut orders = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let centered = hermite_polynomial(n);
        // Precompute Hₙ at the quadrature nodes (in the centered variable).
        let h_at_nodes: Vec<f64> = rule.0.iter().map(|&u| centered.eval(u)).collect();
        let project = |coef: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>| -> TimeFn {
            let rule = rule.clone();
            let h_at_nodes = h_at_nodes.clone();
            let eval: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(move |t| {
                rule.0
                    .iter()
                    .zip(rule.1.iter())
                    .zip(h_at_nodes.iter())
                    .map(|((&u, &w), &h)| w * coef(t, xbar + u) * h)
                    .sum()
            });
            time_fn_from(model, eval)
        };
        let a = {
            let m = model.clone();
            project(Arc::new(move |t, x| m.a(t, x)))
        };
        let gamma = {
            let m = model.clone();
            project(Arc::new(move |t, x| m.gamma(t, x)))
        };
        let jump_mult = {
            let m = model.clone();
            project(Arc::new(move |t, x| m.jump_mult(t, x)))
        };
        for (label, tf) in [("a", &a), ("gamma", &gamma), ("jump multiplier", &jump_mult)] {
            let probe = tf.eval(model.domain().t.0);
            if !probe.is_finite() {
                return Err(Error::Config(format!(
                    "Hermite projection of {label} is not finite; the coefficient is not \
                     square-integrable under the Gaussian weight"
                )));
            }
        }
        // Shift to x via u = x − xbar.
        let mut shifted = vec![0.0; centered.degree() + 1];
        for (j, &cj) in centered.coeffs().iter().enumerate() {
            poly_add_scaled(&mut shifted, &shifted_power(-xbar, j), cj);
        }
        basis.push(BasisPolynomial::new(shifted));
        orders.push(FrozenSymbol {
            a,
            gamma,
            jump_mult,
            measure: model.measure().clone(),
        });
    }
    // Hermite's B₀ is the constant π^{-1/4}, not 1; rescale order 0 so that
    // B₀ ≡ 1 with the coefficient absorbed into φ₀.  (The product B₀·φ₀ is
    // unchanged; downstream engines rely on B₀ ≡ 1.)
    let b0 = basis[0].coeffs()[0];
    basis[0] = BasisPolynomial::one();
    let scale = |tf: &TimeFn| -> TimeFn {
        match tf {
            TimeFn::Constant(v) => TimeFn::Constant(v * b0),
            TimeFn::Varying(f) => {
                let f = f.clone();
                TimeFn::Varying(Arc::new(move |t| f(t) * b0))
            }
        }
    };
    orders[0] = FrozenSymbol {
        a: scale(&orders[0].a),
        gamma: scale(&orders[0].gamma),
        jump_mult: scale(&orders[0].jump_mult),
        measure: orders[0].measure.clone(),
    };
    let time_homogeneous = orders.iter().all(FrozenSymbol::is_time_constant);
    Ok(SymbolExpansion {
        family: BasisFamily::Hermite { xbar, quad_order },
        basis,
        orders,
        time_homogeneous,
    })
}

/// Build the expansion selected by `family`.
pub fn expand(model: &ModelSpec, family: &BasisFamily, n_max: usize) -> Result<SymbolExpansion> {
    match family {
        BasisFamily::Taylor { xbar } => taylor_expand(model, *xbar, n_max),
        BasisFamily::TwoPointTaylor { x1, x2, m } => {
            two_point_taylor_expand(model, *x1, *x2, *m, n_max)
        }
        BasisFamily::Hermite { xbar, quad_order } => {
            hermite_expand(model, xbar_or(*xbar), n_max, *quad_order)
        }
    }
}

fn xbar_or(x: f64) -> f64 {
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{preset, Domain, LevyMeasureSpec, ModelSpec, ProportionalForm, TimeFn};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn quiet_measure() -> LevyMeasureSpec {
        LevyMeasureSpec::gaussian(0.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn taylor_of_constant_model_has_no_higher_orders() {
        let m = ModelSpec::constant("flat", 0.03, 0.01, 0.5, quiet_measure()).unwrap();
        let e = taylor_expand(&m, 0.2, 4).unwrap();
        assert_abs_diff_eq!(e.order_symbol(0).a.eval(0.0), 0.03, epsilon = 1e-12);
        assert_abs_diff_eq!(e.order_symbol(0).gamma.eval(0.0), 0.01, epsilon = 1e-12);
        for n in 1..=4 {
            assert!(e.order_symbol(n).a.eval(0.0).abs() < 1e-9, "a_{n}");
            assert!(e.order_symbol(n).gamma.eval(0.0).abs() < 1e-9, "gamma_{n}");
            assert!(e.order_symbol(n).jump_mult.eval(0.0).abs() < 1e-9, "mult_{n}");
        }
    }

    #[test]
    fn taylor_cev_coefficients() {
        let m = preset("cev-gauss").unwrap();
        let e = taylor_expand(&m, 0.0, 3).unwrap();
        assert_abs_diff_eq!(e.order_symbol(0).a.eval(0.0), 0.02, epsilon = 1e-14);
        assert_abs_diff_eq!(e.order_symbol(1).a.eval(0.0), -0.03, epsilon = 1e-14);
        // Confirm the analytic first derivative against a plain central
        // difference with step 1e−6.
        let h = 1e-6;
        let fd = (m.a(0.0, h) - m.a(0.0, -h)) / (2.0 * h);
        assert!((e.order_symbol(1).a.eval(0.0) - fd).abs() < 1e-7);
        // Basis polynomials are monomials (x − x̄)ⁿ = xⁿ at x̄ = 0.
        assert_eq!(e.basis(0).coeffs(), &[1.0]);
        assert_eq!(e.basis(2).coeffs(), &[0.0, 0.0, 1.0]);
        assert_eq!(e.basis(3).degree(), 3);
    }

    #[test]
    fn taylor_reproduces_polynomials_exactly() {
        // a(x) = 2 + 3x − x³ + 0.25x⁴ (nonnegative on the domain).
        let a: crate::models::CoefFn =
            Arc::new(|_, x: f64| 2.0 + 3.0 * x - x.powi(3) + 0.25 * x.powi(4));
        let zero: crate::models::CoefFn = Arc::new(|_, _| 0.0);
        let m = ModelSpec::new(
            "poly",
            a.clone(),
            zero.clone(),
            zero,
            quiet_measure(),
            true,
            Domain {
                t: (0.0, 1.0),
                x: (-1.0, 1.0),
            },
        )
        .unwrap();
        // Finite-difference coefficients: roundoff in the high-order stencils
        // limits agreement to roughly 1e−5 at the domain edge.
        let e = taylor_expand(&m, 0.1, 5).unwrap();
        for i in 0..=10 {
            let x = -1.0 + 0.2 * i as f64;
            assert!(
                (e.reconstruct_a(0.0, x) - a(0.0, x)).abs() < 1e-4,
                "x = {x}"
            );
        }
        // With analytic derivatives the degree-4 polynomial is reproduced to
        // machine precision.
        let da: crate::models::DerivFn = Arc::new(|n, _, x: f64| match n {
            0 => 2.0 + 3.0 * x - x.powi(3) + 0.25 * x.powi(4),
            1 => 3.0 - 3.0 * x * x + x.powi(3),
            2 => -6.0 * x + 3.0 * x * x,
            3 => -6.0 + 6.0 * x,
            4 => 6.0,
            _ => 0.0,
        });
        let dz: crate::models::DerivFn = Arc::new(|_, _, _| 0.0);
        let m2 = m.with_x_derivs(crate::models::XDerivs {
            a: da,
            gamma: dz.clone(),
            jump_mult: dz,
        });
        let e2 = taylor_expand(&m2, 0.1, 5).unwrap();
        for i in 0..=10 {
            let x = -1.0 + 0.2 * i as f64;
            assert!(
                (e2.reconstruct_a(0.0, x) - a(0.0, x)).abs() < 1e-12,
                "x = {x}"
            );
        }
    }

    fn proportional_model(
        f: crate::models::SpaceFn,
        f_deriv: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>,
        domain: Domain,
    ) -> ModelSpec {
        let form = ProportionalForm {
            f,
            f_deriv,
            a_scale: TimeFn::Constant(1.0),
            gamma_scale: TimeFn::Constant(0.0),
        };
        ModelSpec::proportional("prop", form, quiet_measure(), domain).unwrap()
    }

    #[test]
    fn two_point_square_example() {
        // f(x) = x², x̄₁ = −1, x̄₂ = 1, M = 0: B₁ ≡ 1 and B₂ = x² − 1, so
        // the order-2 truncation reproduces f exactly everywhere.
        let f: crate::models::SpaceFn = Arc::new(|x: f64| x * x);
        let fd: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync> = Arc::new(|n, x| match n {
            0 => x * x,
            1 => 2.0 * x,
            2 => 2.0,
            _ => 0.0,
        });
        let m = proportional_model(
            f,
            fd,
            Domain {
                t: (0.0, 1.0),
                x: (-2.0, 2.0),
            },
        );
        let e = two_point_taylor_expand(&m, -1.0, 1.0, 0.0, 2).unwrap();
        // B₁ collapses to the constant 1.
        for i in 0..=8 {
            let x = -2.0 + 0.5 * i as f64;
            assert_abs_diff_eq!(e.basis(1).eval(x), 1.0, epsilon = 1e-12);
        }
        assert_eq!(e.basis(2).degree(), 2);
        assert_abs_diff_eq!(e.basis(2).coeffs()[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.basis(2).coeffs()[2], 1.0, epsilon = 1e-12);
        for i in 0..=8 {
            let x = -2.0 + 0.5 * i as f64;
            assert_abs_diff_eq!(e.reconstruct_a(0.0, x), x * x, epsilon = 1e-10);
        }
    }

    #[test]
    fn two_point_affine_terminates() {
        let f: crate::models::SpaceFn = Arc::new(|x: f64| 2.0 + 0.5 * x);
        let fd: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync> = Arc::new(|n, x| match n {
            0 => 2.0 + 0.5 * x,
            1 => 0.5,
            _ => 0.0,
        });
        let m = proportional_model(f.clone(), fd, Domain::default());
        let e = two_point_taylor_expand(&m, -0.7, 0.4, 0.0, 3).unwrap();
        assert!(e.basis(2).is_zero());
        assert!(e.basis(3).is_zero());
        for i in 0..=10 {
            let x = -5.0 + i as f64;
            assert_abs_diff_eq!(e.reconstruct_a(0.0, x), f(x), epsilon = 1e-10);
        }
    }

    #[test]
    fn two_point_cev_profile() {
        // f(x) = e^{−1.5x}, x̄₁ = −0.5, x̄₂ = 0.5, M = f(0) = 1, N = 2:
        // exact at the expansion points, error −1.3685e−2 at the midpoint.
        let m = preset("cev-gauss").unwrap();
        let e = two_point_taylor_expand(&m, -0.5, 0.5, 1.0, 2).unwrap();
        let f = |x: f64| (-1.5 * x).exp();
        let scale = 0.02; // the diffusion amplitude A(t)
        for x in [-0.5, 0.5] {
            assert_abs_diff_eq!(e.reconstruct_a(0.0, x), scale * f(x), epsilon = 1e-12);
        }
        let err0 = e.reconstruct_a(0.0, 0.0) / scale - f(0.0);
        assert_abs_diff_eq!(err0, -1.368549e-2, epsilon = 1e-7);
        // One more order shrinks the midpoint error by two magnitudes.
        let e3 = two_point_taylor_expand(&m, -0.5, 0.5, 1.0, 3).unwrap();
        let err0_3 = e3.reconstruct_a(0.0, 0.0) / scale - f(0.0);
        assert_abs_diff_eq!(err0_3, 2.547350e-4, epsilon = 1e-8);
        // Degrees follow the declared pattern 2n−1.
        assert_eq!(e.basis(1).degree(), 1);
        assert_eq!(e.basis(2).degree(), 3);
        // Order symbols: φ₀ = M·Φ, φₙ = Φ.
        assert_abs_diff_eq!(e.order_symbol(0).a.eval(0.0), 0.02, epsilon = 1e-14);
        assert_abs_diff_eq!(e.order_symbol(2).a.eval(0.0), 0.02, epsilon = 1e-14);
        assert_abs_diff_eq!(e.order_symbol(0).jump_mult.eval(0.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn two_point_rejects_bad_inputs() {
        let m = preset("cev-gauss").unwrap();
        assert!(two_point_taylor_expand(&m, 0.5, 0.5, 1.0, 2).is_err());
        assert!(two_point_taylor_expand(&m, 0.5, -0.5, 1.0, 2).is_err());

        // A model without proportional structure is rejected.
        let a: crate::models::CoefFn = Arc::new(|_, x: f64| 0.01 * (x).exp());
        let mult: crate::models::CoefFn = Arc::new(|_, x: f64| (2.0 * x).exp());
        let zero: crate::models::CoefFn = Arc::new(|_, _| 0.0);
        let np = ModelSpec::new(
            "nonprop",
            a,
            zero,
            mult,
            quiet_measure(),
            true,
            Domain {
                t: (0.0, 1.0),
                x: (-1.0, 1.0),
            },
        )
        .unwrap();
        assert!(matches!(
            two_point_taylor_expand(&np, -0.5, 0.5, 1.0, 2),
            Err(Error::UnsupportedForm(_))
        ));
    }

    #[test]
    fn hermite_polynomials_are_orthonormal() {
        let rule = crate::quad::gauss_hermite(16);
        for m in 0..=8usize {
            for n in 0..=8usize {
                let hm = hermite_polynomial(m);
                let hn = hermite_polynomial(n);
                let ip: f64 = rule
                    .0
                    .iter()
                    .zip(rule.1.iter())
                    .map(|(&u, &w)| w * hm.eval(u) * hn.eval(u))
                    .sum();
                let expect = if m == n { 1.0 } else { 0.0 };
                assert!(
                    (ip - expect).abs() < 1e-10,
                    "⟨H_{m}, H_{n}⟩ = {ip}"
                );
            }
        }
    }

    #[test]
    fn hermite_of_unit_constant() {
        // f ≡ 1: projection on H₀ is π^{1/4}; the stored order-0 pair is
        // rescaled to B₀ ≡ 1 with coefficient π^{1/4}·H₀ = 1.
        let m = ModelSpec::constant("unit", 1.0, 0.0, 0.0, quiet_measure()).unwrap();
        let e = hermite_expand(&m, 0.0, 4, 20).unwrap();
        assert_eq!(e.basis(0).coeffs(), &[1.0]);
        assert_abs_diff_eq!(e.order_symbol(0).a.eval(0.0), 1.0, epsilon = 1e-12);
        for n in 1..=4 {
            assert!(e.order_symbol(n).a.eval(0.0).abs() < 1e-10, "order {n}");
        }
        // Raw projection value, before the B₀ rescale: π^{1/4}.
        let h0 = hermite_polynomial(0);
        let rule = crate::quad::gauss_hermite(20);
        let raw: f64 = rule.1.iter().map(|&w| w * h0.eval(0.0)).sum();
        assert_abs_diff_eq!(
            raw,
            std::f64::consts::PI.powf(0.25),
            epsilon = 1e-10
        );
    }

    #[test]
    fn hermite_is_locally_worse_than_taylor_for_cev() {
        let m = preset("cev-gauss").unwrap();
        let herm = hermite_expand(&m, 0.0, 4, 40).unwrap();
        let tay = taylor_expand(&m, 0.0, 4).unwrap();
        for x in [-0.5, 0.5] {
            let truth = m.a(0.0, x);
            let eh = (herm.reconstruct_a(0.0, x) - truth).abs();
            let et = (tay.reconstruct_a(0.0, x) - truth).abs();
            assert!(
                eh > et,
                "Hermite should be locally worse at x = {x}: {eh} vs {et}"
            );
        }
        // Frozen magnitudes from direct evaluation of both reconstructions
        // (profile only, amplitude divided out).
        let eh = herm.reconstruct_a(0.0, 0.5) / 0.02 - (-0.75f64).exp();
        assert_abs_diff_eq!(eh, 1.129373e-1, epsilon = 1e-5);
    }

    #[test]
    fn hermite_rejects_insufficient_quadrature() {
        let m = preset("cev-gauss").unwrap();
        assert!(hermite_expand(&m, 0.0, 4, 4).is_err());
        assert!(hermite_expand(&m, 0.0, 4, 5).is_ok());
    }

    #[test]
    fn b0_is_one_for_every_family() {
        let m = preset("cev-gauss").unwrap();
        let t = taylor_expand(&m, 0.3, 3).unwrap();
        let tp = two_point_taylor_expand(&m, -0.4, 0.4, 1.0, 3).unwrap();
        let h = hermite_expand(&m, 0.3, 3, 12).unwrap();
        for e in [&t, &tp, &h] {
            assert_eq!(e.basis(0).coeffs(), &[1.0]);
        }
    }

    #[test]
    fn strip_intersects_measure_strips() {
        let m = preset("cev-vg").unwrap();
        let e = taylor_expand(&m, 0.0, 2).unwrap();
        let (lo, hi) = e.strip();
        assert_abs_diff_eq!(lo, -15.953130, epsilon = 1e-4);
        assert_abs_diff_eq!(hi, 9.286463, epsilon = 1e-4);
    }

    #[test]
    fn dispatcher_routes_families() {
        let m = preset("cev-gauss").unwrap();
        let e = expand(&m, &BasisFamily::Taylor { xbar: 0.0 }, 2).unwrap();
        assert!(matches!(e.family(), BasisFamily::Taylor { .. }));
        let e = expand(
            &m,
            &BasisFamily::TwoPointTaylor {
                x1: -0.1,
                x2: 0.1,
                m: 1.0,
            },
            2,
        )
        .unwrap();
        assert_eq!(e.basis(2).degree(), 3);
        let e = expand(
            &m,
            &BasisFamily::Hermite {
                xbar: 0.0,
                quad_order: 8,
            },
            2,
        )
        .unwrap();
        assert_eq!(e.basis(2).degree(), 2);
    }
}
