//! Quadrature building blocks.
//!
//! Thin wrappers around Gauss–Legendre and Gauss–Hermite rules with process-
//! wide node caching, a panelized integrator for long oscillatory contours,
//! an adaptive Simpson rule for one-off integrals against irregular
//! integrands, and a pairwise summation helper used wherever many panel
//! contributions are accumulated.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::ops::{Add, Mul};
use std::sync::{Arc, Mutex};

use gauss_quad::{GaussHermite, GaussLegendre};
use num_complex::Complex64;
use num_traits::Zero;
use once_cell::sync::Lazy;

/// Values that can be accumulated by the generic integrators: real samples,
/// complex samples, or small fixed bundles of complex samples.
pub trait Accumulate: Copy + Zero + Add<Output = Self> + Mul<f64, Output = Self> {}
impl<T: Copy + Zero + Add<Output = T> + Mul<f64, Output = T>> Accumulate for T {}

static GL_CACHE: Lazy<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));
static GH_CACHE: Lazy<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Gauss–Legendre nodes and weights of the given order on `[-1, 1]`,
/// computed once per process and shared.
pub fn gauss_legendre(order: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    assert!(order >= 1, "Gauss-Legendre order must be at least 1");
    let mut cache = GL_CACHE.lock().unwrap();
    cache
        .entry(order)
        .or_insert_with(|| {
            let rule = GaussLegendre::new(NonZeroUsize::new(order).unwrap());
            let (nodes, weights) = rule.into_node_weight_pairs().into_vec().into_iter().unzip();
            Arc::new((nodes, weights))
        })
        .clone()
}

/// Gauss–Hermite nodes and weights of the given order for integrals of the
/// form `∫ e^{-u²} f(u) du`, computed once per process and shared.
pub fn gauss_hermite(order: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    assert!(order >= 1, "Gauss-Hermite order must be at least 1");
    let mut cache = GH_CACHE.lock().unwrap();
    cache
        .entry(order)
        .or_insert_with(|| {
            let rule = GaussHermite::new(NonZeroUsize::new(order).unwrap());
            let (nodes, weights) = rule.into_node_weight_pairs().into_vec().into_iter().unzip();
            Arc::new((nodes, weights))
        })
        .clone()
}

/// Integrate `f` over `[a, b]` with a single Gauss–Legendre rule.
pub fn gl_integrate<T: Accumulate>(a: f64, b: f64, order: usize, mut f: impl FnMut(f64) -> T) -> T {
    let rule = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = T::zero();
    for (&u, &w) in rule.0.iter().zip(rule.1.iter()) {
        acc = acc + f(mid + half * u) * (w * half);
    }
    acc
}

/// Integrate `f` over `[a, b]` by splitting the interval into panels of at
/// most `panel_width` and applying a fixed Gauss–Legendre rule on each.
/// Panel results are combined with pairwise summation.
pub fn gl_integrate_panels<T: Accumulate>(
    a: f64,
    b: f64,
    panel_width: f64,
    order: usize,
    mut f: impl FnMut(f64) -> T,
) -> T {
    assert!(panel_width > 0.0, "panel width must be positive");
    if b <= a {
        return T::zero();
    }
    let n_panels = ((b - a) / panel_width).ceil().max(1.0) as usize;
    let step = (b - a) / n_panels as f64;
    let rule = gauss_legendre(order);
    let mut parts = Vec::with_capacity(n_panels);
    for p in 0..n_panels {
        let lo = a + step * p as f64;
        let hi = lo + step;
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (lo + hi);
        let mut acc = T::zero();
        for (&u, &w) in rule.0.iter().zip(rule.1.iter()) {
            acc = acc + f(mid + half * u) * (w * half);
        }
        parts.push(acc);
    }
    pairwise_sum(&parts)
}

/// Sum a slice by recursive halving.  For long slices this loses far less
/// precision than left-to-right accumulation and is deterministic for a
/// fixed input order.
pub fn pairwise_sum<T: Accumulate>(xs: &[T]) -> T {
    match xs.len() {
        0 => T::zero(),
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Adaptive Simpson integration of a complex-valued integrand.
///
/// Classical bisection with the 1/15 Richardson error estimate; recursion
/// stops when the local estimate meets the (subdivided) tolerance or the
/// depth limit is reached.
pub fn adaptive_simpson(
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
    f: &mut impl FnMut(f64) -> Complex64,
) -> Complex64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson_rule(a, b, fa, fm, fb);
    simpson_recurse(a, b, fa, fm, fb, whole, tol, max_depth, f)
}

fn simpson_rule(a: f64, b: f64, fa: Complex64, fm: Complex64, fb: Complex64) -> Complex64 {
    (fa + fm * 4.0 + fb) * ((b - a) / 6.0)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse(
    a: f64,
    b: f64,
    fa: Complex64,
    fm: Complex64,
    fb: Complex64,
    whole: Complex64,
    tol: f64,
    depth: usize,
    f: &mut impl FnMut(f64) -> Complex64,
) -> Complex64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_rule(a, m, fa, flm, fm);
    let right = simpson_rule(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.norm() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, f)
            + simpson_recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        // An order-n rule is exact through degree 2n-1.
        let exact = 2.0 / 7.0; // ∫_{-1}^{1} x^6 dx
        let got: f64 = gl_integrate(-1.0, 1.0, 4, |x| x.powi(6));
        assert_abs_diff_eq!(got, exact, epsilon = 1e-14);
    }

    #[test]
    fn gl_handles_shifted_intervals() {
        let got: f64 = gl_integrate(1.0, 3.0, 16, |x| x.ln());
        let exact = 3.0 * 3.0_f64.ln() - 3.0 - (1.0 * 0.0 - 1.0);
        assert_abs_diff_eq!(got, exact, epsilon = 1e-13);
    }

    #[test]
    fn panels_match_single_rule_on_smooth_integrand() {
        let single: f64 = gl_integrate(0.0, 10.0, 64, |x| (-x * x / 8.0).exp());
        let panels: f64 = gl_integrate_panels(0.0, 10.0, 2.5, 16, |x| (-x * x / 8.0).exp());
        assert_abs_diff_eq!(single, panels, epsilon = 1e-12);
    }

    #[test]
    fn panels_resolve_oscillation_where_single_rule_cannot() {
        // ∫_0^{40} cos(7x) dx, known in closed form.
        let exact = (7.0 * 40.0_f64).sin() / 7.0;
        let panels: f64 = gl_integrate_panels(0.0, 40.0, 2.0, 16, |x| (7.0 * x).cos());
        assert_abs_diff_eq!(panels, exact, epsilon = 1e-12);
    }

    #[test]
    fn gauss_hermite_normalizes_gaussian() {
        // ∫ e^{-u²} du = √π.
        let rule = gauss_hermite(30);
        let total: f64 = rule.1.iter().sum();
        assert_abs_diff_eq!(total, PI.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn gauss_hermite_even_moments() {
        // ∫ e^{-u²} u⁴ du = (3/4)√π.
        let rule = gauss_hermite(12);
        let got: f64 = rule
            .0
            .iter()
            .zip(rule.1.iter())
            .map(|(&u, &w)| w * u.powi(4))
            .sum();
        assert_abs_diff_eq!(got, 0.75 * PI.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn nodes_are_cached_and_shared() {
        let a = gauss_legendre(24);
        let b = gauss_legendre(24);
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn adaptive_simpson_oscillatory_complex() {
        // ∫_0^1 e^{i k x} dx = (e^{ik} - 1) / (ik).
        let k = 37.0;
        let got = adaptive_simpson(0.0, 1.0, 1e-12, 40, &mut |x| {
            (Complex64::new(0.0, k * x)).exp()
        });
        let ik = Complex64::new(0.0, k);
        let exact = ((ik).exp() - 1.0) / ik;
        assert!((got - exact).norm() < 1e-10);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let xs = [1.0, 2.0, 3.0, 4.5];
        assert_abs_diff_eq!(pairwise_sum(&xs), 10.5, epsilon = 0.0);
        let empty: [f64; 0] = [];
        assert_abs_diff_eq!(pairwise_sum(&empty), 0.0, epsilon = 0.0);
    }
}
