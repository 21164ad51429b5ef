//! Adaptive Simpson quadrature and a bracketed monotone root finder.

/// Result of a quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    /// Richardson estimate of the absolute error.
    pub error: f64,
    /// False when some subinterval hit the depth limit before meeting its tolerance.
    pub converged: bool,
}

const MAX_DEPTH: u32 = 48;
const MIN_DEPTH: u32 = 3;
const ENDPOINT_NUDGE: f64 = 1e-13;

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
///
/// The integrand must be smooth on the open interval; split at known
/// discontinuities with [`integrate_piecewise`]. Endpoint values are
/// taken as one-sided limits.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Integral {
    if b <= a {
        return Integral {
            value: 0.0,
            error: 0.0,
            converged: true,
        };
    }
    // endpoints are sampled just inside so a step exactly at `a` or `b`
    // is seen from the integration side
    let nudge = (b - a) * ENDPOINT_NUDGE;
    let fa = f(a + nudge);
    let fb = f(b - nudge);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut acc = Acc::default();
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 0, &mut acc);
    Integral {
        value: acc.value,
        error: acc.error,
        converged: acc.converged,
    }
}

struct Acc {
    value: f64,
    error: f64,
    converged: bool,
}

impl Default for Acc {
    fn default() -> Self {
        Acc {
            value: 0.0,
            error: 0.0,
            converged: true,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    acc: &mut Acc,
) {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    let done = depth >= MIN_DEPTH && delta.abs() <= 15.0 * tol;
    // interval no longer splittable in floating point
    let degenerate = lm <= a || rm >= b || m <= a || m >= b;
    if done || depth >= MAX_DEPTH || degenerate {
        acc.value += left + right + delta / 15.0;
        acc.error += delta.abs() / 15.0;
        if !done {
            acc.converged = false;
        }
        return;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1, acc);
    simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1, acc);
}

/// Integrates over `[a, b]`, restarting the quadrature at every breakpoint
/// in `(a, b)`. The tolerance is shared in proportion to segment length.
pub fn integrate_piecewise<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, breaks: &[f64], tol: f64) -> Integral {
    let mut total = Integral {
        value: 0.0,
        error: 0.0,
        converged: true,
    };
    if b <= a {
        return total;
    }
    let len = b - a;
    let mut lo = a;
    for &p in breaks.iter().filter(|&&p| p > a && p < b).chain(std::iter::once(&b)) {
        if p <= lo {
            continue;
        }
        let part = adaptive_simpson(f, lo, p, tol * (p - lo) / len);
        total.value += part.value;
        total.error += part.error;
        total.converged &= part.converged;
        lo = p;
    }
    total
}

/// Finds `t ∈ [lo, hi]` with `g(t) = 0` for nondecreasing `g` given
/// `g(lo) < 0 ≤ g(hi)`, to bracket width `tol`.
///
/// Illinois-modified secant steps, with a bisection whenever a step fails
/// to halve the bracket.
pub fn solve_increasing<G: FnMut(f64) -> f64>(
    mut g: G,
    mut lo: f64,
    mut hi: f64,
    mut glo: f64,
    mut ghi: f64,
    tol: f64,
) -> f64 {
    if ghi == 0.0 {
        return hi;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let width = hi - lo;
        if width <= tol {
            break;
        }
        let mut t = if ghi > glo {
            lo - glo * width / (ghi - glo)
        } else {
            0.5 * (lo + hi)
        };
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
        }
        let gt = g(t);
        if gt == 0.0 {
            return t;
        }
        if gt < 0.0 {
            lo = t;
            glo = gt;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            ghi = gt;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
        if hi - lo > 0.5 * width {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm == 0.0 {
                return mid;
            }
            if gm < 0.0 {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
                ghi = gm;
            }
            side = 0;
        }
    }
    0.5 * (lo + hi)
}

/// Sum with pairwise splitting; result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}
