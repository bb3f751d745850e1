//! Real Wright omega function: the positive solution of w + log(w) = x.
//!
//! The dual block updates of the transport proximal operator evaluate omega
//! at arguments spanning hundreds of orders of magnitude, so the solver works
//! on t = log(w). In t-space the defining equation becomes t + exp(t) = x,
//! which is smooth and overflow-free for every representable argument: t
//! stays within roughly [-745, 710] wherever exp(t) matters.

/// Residual tolerance, relative to max(1, |x|).
const RESIDUAL_TOL: f64 = 1e-13;

/// Below this argument w = exp(x) is exact to double precision: the next
/// correction term is exp(2x) < 2^-120.
const EXP_REGIME: f64 = -50.0;

/// Wright omega: the unique positive root of w + log(w) = x.
///
/// NaN propagates, -inf maps to 0, +inf maps to +inf.
pub fn wright_omega(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return f64::INFINITY;
    }
    if x <= EXP_REGIME {
        // Covers -inf and the deep underflow regime: returning exp(x)
        // (possibly 0) keeps downstream clamps exact.
        return x.exp();
    }

    // Regime-split initial guess for t = log(w).
    let mut t = if x < -2.0 {
        // w ~ exp(x), so t ~ x.
        x
    } else if x > 2.0 {
        // w ~ x - log(x), refined once below.
        (x - x.ln()).ln()
    } else {
        // Cubic fit of log(omega) through x in {-2, 0, 1, 2}, accurate to a
        // few percent on [-2, 2]; Newton contracts the rest.
        let c = [-0.567143, 0.633095, -0.067857, 0.001905];
        c[0] + x * (c[1] + x * (c[2] + x * c[3]))
    };

    // Newton on g(t) = t + exp(t) - x. g is increasing and convex, so after
    // one step the iterates approach the root monotonically from below.
    let tol = RESIDUAL_TOL * x.abs().max(1.0);
    for _ in 0..60 {
        let et = t.exp();
        let g = t + et - x;
        if g.abs() <= tol {
            break;
        }
        let mut step = g / (1.0 + et);
        // Clamp wild first steps from a poor guess; convexity makes any
        // clamped step safe.
        if step.abs() > 50.0 {
            step = step.signum() * 50.0;
        }
        t -= step;
    }
    t.exp()
}

/// Shifted Wright omega: `omega(a + ln(a) + r) - a` for `a > 0`.
///
/// The transport column update evaluates omega at `xi = a + ln(a) + r` with
/// `a = 1/(4*theta*eps)`, which can reach 1e15 and beyond; forming
/// `omega(xi) - a` directly then loses the entire answer to cancellation.
/// Substituting `d = omega(xi) - a` into the defining identity gives
/// `d + log1p(d/a) = r`, which this solves for `d` without ever forming the
/// large intermediate. The equation's left side is increasing and concave in
/// `d`, so a guarded Newton iteration converges from any seed.
pub fn wright_omega_shifted(a: f64, r: f64) -> f64 {
    // Linearized seed: d*(1 + 1/a) ~ r.
    wright_omega_shifted_from(a, r, r * a / (1.0 + a))
}

/// As [`wright_omega_shifted`] with a caller-provided seed, for iterative
/// schemes that re-solve at slowly moving arguments.
pub(crate) fn wright_omega_shifted_from(a: f64, r: f64, seed: f64) -> f64 {
    debug_assert!(a > 0.0);
    if r == 0.0 {
        return 0.0;
    }
    let tol = 1e-14 * r.abs().max(1.0);
    let mut d = if seed.is_finite() { seed.max(-a * 0.99) } else { r };
    for _ in 0..60 {
        let g = d + (d / a).ln_1p() - r;
        if g.abs() <= tol {
            break;
        }
        let slope = 1.0 + 1.0 / (a + d);
        let mut next = d - g / slope;
        if next <= -a {
            // Bisect toward the domain edge; the root lies in (-a, d).
            next = 0.5 * (d - a);
        }
        d = next;
    }
    d
}
