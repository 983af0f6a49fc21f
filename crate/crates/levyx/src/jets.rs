//! Truncated derivative jets in the frequency variable.
//!
//! A [`Jet`] stores the scaled derivatives `c_j = g^{(j)}(ξ₀) / j!` of an
//! analytic function at a fixed base point, up to a finite order.  Jets form
//! a truncated power-series algebra: sums, products, exponentials,
//! logarithms, and reciprocals all propagate derivative information exactly,
//! which lets the expansion engine apply polynomial differential operators in
//! frequency without any numerical differentiation.
//!
//! Two rules govern every operation:
//!
//! * **Order-min rule** — a binary operation on jets of orders `p` and `q`
//!   yields a jet of order `min(p, q)`; derivative information beyond the
//!   shorter operand would be incorrect, so it is dropped.
//! * **Order budget** — requesting a derivative order that an operand does
//!   not carry is an [`Error::OrderBudget`], never a silent zero.
//!
//! Orders are capped at [`MAX_ORDER`]; the recursive expansion engine keeps
//! its own accounting so that the cap is never hit in valid configurations.

use num_complex::Complex64;

use crate::basis::BasisPolynomial;
use crate::error::{Error, Result};

/// Hard upper bound on the derivative order a jet may carry.
pub const MAX_ORDER: usize = 12;

const CAP: usize = MAX_ORDER + 1;

/// Exact factorial as a float; valid through `n = 20`.
pub(crate) fn factorial(n: usize) -> f64 {
    debug_assert!(n <= 20);
    let mut f = 1.0;
    for k in 2..=n {
        f *= k as f64;
    }
    f
}

/// Truncated Taylor jet of an analytic function at a base point.
///
/// Coefficient `j` is `g^{(j)}(ξ₀) / j!`, so the jet is the list of Taylor
/// coefficients of `g` at `ξ₀` through its order.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    base: Complex64,
    len: u8,
    c: [Complex64; CAP],
}

impl Jet {
    fn with_len(base: Complex64, len: usize) -> Jet {
        debug_assert!((1..=CAP).contains(&len));
        Jet {
            base,
            len: len as u8,
            c: [Complex64::ZERO; CAP],
        }
    }

    fn check_order(order: usize) -> Result<()> {
        if order > MAX_ORDER {
            return Err(Error::Config(format!(
                "jet order {order} exceeds the supported maximum {MAX_ORDER}"
            )));
        }
        Ok(())
    }

    /// Jet of the constant function `v` at `base`, carrying `order` zeros.
    pub fn constant(base: Complex64, v: Complex64, order: usize) -> Result<Jet> {
        Self::check_order(order)?;
        let mut j = Jet::with_len(base, order + 1);
        j.c[0] = v;
        Ok(j)
    }

    /// Jet of the identity function `ξ ↦ ξ` at `base`.
    pub fn variable(base: Complex64, order: usize) -> Result<Jet> {
        Self::check_order(order)?;
        let mut j = Jet::with_len(base, order + 1);
        j.c[0] = base;
        if order >= 1 {
            j.c[1] = Complex64::ONE;
        }
        Ok(j)
    }

    /// Build a jet directly from unscaled derivatives `g^{(j)}(ξ₀)`.
    pub fn from_derivatives(base: Complex64, derivs: &[Complex64]) -> Result<Jet> {
        if derivs.is_empty() {
            return Err(Error::Config("a jet needs at least its value".into()));
        }
        Self::check_order(derivs.len() - 1)?;
        let mut j = Jet::with_len(base, derivs.len());
        for (k, &d) in derivs.iter().enumerate() {
            j.c[k] = d / factorial(k);
        }
        Ok(j)
    }

    /// Base point of the jet.
    pub fn base(&self) -> Complex64 {
        self.base
    }

    /// Highest derivative order carried.
    pub fn order(&self) -> usize {
        self.len as usize - 1
    }

    /// Function value `g(ξ₀)`.
    pub fn value(&self) -> Complex64 {
        self.c[0]
    }

    /// Scaled coefficient `g^{(j)}(ξ₀) / j!`.
    pub fn coeff(&self, j: usize) -> Complex64 {
        debug_assert!(j < self.len as usize);
        self.c[j]
    }

    /// Unscaled derivative `g^{(j)}(ξ₀)`, or an order-budget error if the
    /// jet does not carry order `j`.
    pub fn derivative_value(&self, j: usize) -> Result<Complex64> {
        if j > self.order() {
            return Err(Error::OrderBudget {
                needed: j,
                available: self.order(),
            });
        }
        Ok(self.c[j] * factorial(j))
    }

    fn common_len(&self, rhs: &Jet) -> usize {
        debug_assert!(
            (self.base - rhs.base).norm() <= 1e-12 * (1.0 + self.base.norm()),
            "jets combined at different base points"
        );
        self.len.min(rhs.len) as usize
    }

    /// Sum, at the common (minimum) order.
    pub fn add(&self, rhs: &Jet) -> Jet {
        let n = self.common_len(rhs);
        let mut out = Jet::with_len(self.base, n);
        for k in 0..n {
            out.c[k] = self.c[k] + rhs.c[k];
        }
        out
    }

    /// Difference, at the common (minimum) order.
    pub fn sub(&self, rhs: &Jet) -> Jet {
        let n = self.common_len(rhs);
        let mut out = Jet::with_len(self.base, n);
        for k in 0..n {
            out.c[k] = self.c[k] - rhs.c[k];
        }
        out
    }

    /// Product (Cauchy convolution of coefficients), at the common order.
    pub fn mul(&self, rhs: &Jet) -> Jet {
        let n = self.common_len(rhs);
        let mut out = Jet::with_len(self.base, n);
        for i in 0..n {
            let mut acc = Complex64::ZERO;
            for j in 0..=i {
                acc += self.c[j] * rhs.c[i - j];
            }
            out.c[i] = acc;
        }
        out
    }

    /// Multiply every coefficient by a complex scalar.
    pub fn scale(&self, k: Complex64) -> Jet {
        let mut out = *self;
        for c in out.c[..out.len as usize].iter_mut() {
            *c *= k;
        }
        out
    }

    /// Negation.
    pub fn neg(&self) -> Jet {
        self.scale(-Complex64::ONE)
    }

    /// Jet of `exp ∘ g`, same order.
    pub fn exp(&self) -> Jet {
        let n = self.len as usize;
        let mut out = Jet::with_len(self.base, n);
        out.c[0] = self.c[0].exp();
        for m in 1..n {
            let mut acc = Complex64::ZERO;
            for k in 1..=m {
                acc += self.c[k] * out.c[m - k] * (k as f64);
            }
            out.c[m] = acc / (m as f64);
        }
        out
    }

    /// Jet of `log ∘ g`, same order; the value must be nonzero.
    pub fn ln(&self) -> Result<Jet> {
        if self.c[0] == Complex64::ZERO {
            return Err(Error::Numeric("logarithm of a jet with zero value".into()));
        }
        let n = self.len as usize;
        let mut out = Jet::with_len(self.base, n);
        out.c[0] = self.c[0].ln();
        for m in 1..n {
            let mut acc = self.c[m] * (m as f64);
            for k in 1..m {
                acc -= out.c[k] * self.c[m - k] * (k as f64);
            }
            out.c[m] = acc / (self.c[0] * m as f64);
        }
        Ok(out)
    }

    /// Jet of `1 / g`, same order; the value must be nonzero.
    pub fn recip(&self) -> Result<Jet> {
        if self.c[0] == Complex64::ZERO {
            return Err(Error::Numeric(
                "reciprocal of a jet with zero value".into(),
            ));
        }
        let n = self.len as usize;
        let mut out = Jet::with_len(self.base, n);
        out.c[0] = self.c[0].inv();
        for m in 1..n {
            let mut acc = Complex64::ZERO;
            for k in 1..=m {
                acc += self.c[k] * out.c[m - k];
            }
            out.c[m] = -acc / self.c[0];
        }
        Ok(out)
    }

    /// Jet of `g'`, one order lower.  Differentiating an order-0 jet is an
    /// order-budget error.
    pub fn derivative(&self) -> Result<Jet> {
        if self.len == 1 {
            return Err(Error::OrderBudget {
                needed: 1,
                available: 0,
            });
        }
        let n = self.len as usize - 1;
        let mut out = Jet::with_len(self.base, n);
        for j in 0..n {
            out.c[j] = self.c[j + 1] * ((j + 1) as f64);
        }
        Ok(out)
    }
}

impl std::ops::Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        Jet::add(&self, &rhs)
    }
}

impl std::ops::Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        Jet::sub(&self, &rhs)
    }
}

impl std::ops::Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        Jet::mul(&self, &rhs)
    }
}

impl std::ops::Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet::neg(&self)
    }
}

/// Apply the polynomial differential operator associated with a basis
/// polynomial to a jet and evaluate at the base point:
///
/// `B(x) = Σ_m b_m x^m` acts as `Σ_m b_m i^m g^{(m)}(ξ₀)`, i.e.
/// `Σ_m b_m i^m m! c_m` on the scaled coefficients.
///
/// The jet must carry at least `deg B` orders; otherwise this is an
/// order-budget error.
pub fn apply_basis_operator(b: &BasisPolynomial, g: &Jet) -> Result<Complex64> {
    let deg = b.degree();
    if g.order() < deg {
        return Err(Error::OrderBudget {
            needed: deg,
            available: g.order(),
        });
    }
    let mut acc = Complex64::ZERO;
    let mut i_pow = Complex64::ONE;
    for (m, &bm) in b.coeffs().iter().enumerate() {
        if bm != 0.0 {
            acc += g.coeff(m) * (i_pow * bm * factorial(m));
        }
        i_pow *= Complex64::I;
    }
    Ok(acc)
}
