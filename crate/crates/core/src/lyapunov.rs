//! Lyapunov functions `V_m(Z) = (1+x+y)^m`, the extended generator, drift
//! checks and the explicit constants of the moment bounds.
//!
//! The generator of the process acts on a test function `h` by
//!
//! ```text
//! Lh(Z) = λ(Z)(h(Z^cn) − h(Z)) + μ(Z)(h(Z^nc) − h(Z)) + ∂h/∂x + ∂h/∂y
//! ```
//!
//! For `V_m`, `V_m(Z^cn) = (1+y)^m` and `V_m(Z^nc) = (1+x)^m` whatever the
//! regime flags are.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::intensity::IntensityModel;
use crate::state::State;

/// `(1+x+y)^m`
#[inline]
pub fn v(m: f64, z: &State) -> f64 {
    z.seminorm().powf(m)
}

/// `(1+t)^k (1+x+y)^m`
#[inline]
pub fn v_tk(k: f64, m: f64, t: f64, z: &State) -> f64 {
    (1.0 + t).powf(k) * v(m, z)
}

/// The sublevel set `{Z : (1+x+y)^power ≤ level}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublevelSet {
    pub level: f64,
    pub power: f64,
}

impl SublevelSet {
    pub fn new(level: f64, power: f64) -> Result<Self> {
        if !(level.is_finite() && level > 0.0) {
            return Err(invalid(format!("sublevel K must be finite and > 0, got {level}")));
        }
        if !(power.is_finite() && power >= 1.0) {
            return Err(invalid(format!("sublevel power must be >= 1, got {power}")));
        }
        Ok(SublevelSet { level, power })
    }

    #[inline]
    pub fn contains(&self, z: &State) -> bool {
        v(self.power, z) <= self.level
    }

    /// Largest `1+x+y` inside the set.
    #[inline]
    pub fn radius(&self) -> f64 {
        self.level.powf(1.0 / self.power)
    }

    /// Same power, level replaced.
    pub fn with_level(&self, level: f64) -> Result<Self> {
        Self::new(level, self.power)
    }
}

/// Parameters `(m, k, K)` of the Lyapunov family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    pub m: f64,
    pub k: f64,
    #[serde(rename = "K")]
    pub level: f64,
}

impl LyapunovSpec {
    pub fn new(m: f64, k: f64, level: f64) -> Result<Self> {
        if !(m >= 1.0 && m.is_finite()) {
            return Err(invalid(format!("m must be >= 1, got {m}")));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(invalid(format!("k must be >= 0, got {k}")));
        }
        SublevelSet::new(level, m)?;
        Ok(LyapunovSpec { m, k, level })
    }

    pub fn sublevel(&self) -> SublevelSet {
        SublevelSet {
            level: self.level,
            power: self.m,
        }
    }
}

/// A test function with its value, both partial derivatives, and its
/// values at the two jump images.
pub trait TestFunction: Sync {
    fn value(&self, z: &State) -> f64;
    fn dx(&self, z: &State) -> f64;
    fn dy(&self, z: &State) -> f64;
}

/// `h ≡ c`
#[derive(Debug, Clone, Copy)]
pub struct ConstantFn(pub f64);

impl TestFunction for ConstantFn {
    fn value(&self, _: &State) -> f64 {
        self.0
    }
    fn dx(&self, _: &State) -> f64 {
        0.0
    }
    fn dy(&self, _: &State) -> f64 {
        0.0
    }
}

/// `V_m` as a test function.
#[derive(Debug, Clone, Copy)]
pub struct PowerFn {
    pub m: f64,
}

impl TestFunction for PowerFn {
    fn value(&self, z: &State) -> f64 {
        v(self.m, z)
    }
    fn dx(&self, z: &State) -> f64 {
        self.m * v(self.m - 1.0, z)
    }
    fn dy(&self, z: &State) -> f64 {
        self.m * v(self.m - 1.0, z)
    }
}

/// Test function from three closures.
pub struct FnTestFunction<H, Dx, Dy> {
    pub value: H,
    pub dx: Dx,
    pub dy: Dy,
}

impl<H, Dx, Dy> TestFunction for FnTestFunction<H, Dx, Dy>
where
    H: Fn(&State) -> f64 + Sync,
    Dx: Fn(&State) -> f64 + Sync,
    Dy: Fn(&State) -> f64 + Sync,
{
    fn value(&self, z: &State) -> f64 {
        (self.value)(z)
    }
    fn dx(&self, z: &State) -> f64 {
        (self.dx)(z)
    }
    fn dy(&self, z: &State) -> f64 {
        (self.dy)(z)
    }
}

/// `Lh(Z)` for a generic test function.
pub fn generator_apply<H: TestFunction + ?Sized>(model: &IntensityModel, h: &H, z: &State) -> f64 {
    let r = model.evaluate(z);
    let here = h.value(z);
    r.lambda * (h.value(&z.jump_cn()) - here) + r.mu * (h.value(&z.jump_nc()) - here) + h.dx(z) + h.dy(z)
}

/// `L V_m(Z)` in closed form.
pub fn generator_on_v(model: &IntensityModel, m: f64, z: &State) -> f64 {
    let r = model.evaluate(z);
    let s = z.seminorm();
    let vm = s.powf(m);
    r.lambda * ((1.0 + z.y()).powf(m) - vm) + r.mu * ((1.0 + z.x()).powf(m) - vm) + 2.0 * m * s.powf(m - 1.0)
}

/// Threshold `K(δ) = δ^{−m}`.
///
/// Outside `{V_m ≤ K}` we have `S = x+y > K^{1/m} − 1`, and the minimum of
/// `x/(1+x) + y/(1+y)` on `{x+y = S}` is attained at a corner with value
/// `S/(1+S)`. That is at least `1−δ` once `S ≥ (1−δ)/δ`, i.e. for
/// `K ≥ (1/δ)^m`.
pub fn k_of_delta(delta: f64, m: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(m >= 1.0 && m.is_finite()) {
        return Err(invalid(format!("m must be >= 1, got {m}")));
    }
    Ok(delta.powf(-m))
}

/// Parameters of the drift inequalities and of the constant `C(k, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub m: f64,
    pub m0: f64,
    pub k: f64,
}

impl DriftParams {
    /// `(1−δ)γ − 2m`, the drift coefficient.
    pub fn drift_coefficient(&self) -> f64 {
        (1.0 - self.delta) * self.gamma - 2.0 * self.m
    }
}

/// One evaluated grid state of a drift check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub state: State,
    /// `L V_m(Z)`
    pub lv: f64,
    /// `−((1−δ)γ − 2m) V_{m−1}(Z)`
    pub bound: f64,
    /// `bound − lv`; negative means violated.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub params: DriftParams,
    pub threshold: f64,
    pub rows: Vec<DriftRow>,
    pub violations: usize,
    pub min_margin: f64,
}

impl DriftReport {
    pub const CSV_HEADER: &'static str = "i,x,j,y,LV,bound,margin,pass";

    fn csv_of<'a>(rows: impl Iterator<Item = &'a DriftRow>) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.state.csv_fields(),
                r.lv,
                r.bound,
                r.margin,
                r.pass
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        Self::csv_of(self.rows.iter())
    }

    pub fn violations_csv(&self) -> String {
        Self::csv_of(self.rows.iter().filter(|r| !r.pass))
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Relative tolerance of the drift inequality.
pub const DRIFT_REL_TOL: f64 = 1e-9;

/// Checks `L V_m ≤ −((1−δ)γ − 2m) V_{m−1}` at every grid state. All states
/// must lie outside `{V_m ≤ K(δ)}`.
pub fn drift_check(model: &IntensityModel, params: &DriftParams, grid: &[State]) -> Result<DriftReport> {
    let threshold = k_of_delta(params.delta, params.m)?;
    if let Some(z) = grid.iter().find(|z| v(params.m, z) <= threshold) {
        return Err(invalid(format!(
            "grid state {z:?} lies inside the sublevel set V_{} <= K(delta) = {threshold}",
            params.m
        )));
    }
    let c = params.drift_coefficient();
    let rows: Vec<DriftRow> = grid
        .par_iter()
        .map(|z| {
            let lv = generator_on_v(model, params.m, z);
            let bound = -c * v(params.m - 1.0, z);
            let margin = bound - lv;
            let scale = lv.abs().max(bound.abs()).max(1.0);
            DriftRow {
                state: *z,
                lv,
                bound,
                margin,
                pass: margin >= -DRIFT_REL_TOL * scale,
            }
        })
        .collect();
    let violations = rows.iter().filter(|r| !r.pass).count();
    let min_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    Ok(DriftReport {
        params: *params,
        threshold,
        rows,
        violations,
        min_margin,
    })
}

/// Grid strictly outside `{(1+x+y)^m ≤ level}`: `n_sum` log-spaced values of
/// `x+y` from just past the boundary up to `max_sum`, each split into
/// `n_split` proportions (corners included). Regime pairs cycle.
pub fn outside_grid(m: f64, level: f64, n_sum: usize, n_split: usize, max_sum: f64) -> Vec<State> {
    let s0 = (level.powf(1.0 / m) - 1.0).max(0.0);
    let lo = (s0 * (1.0 + 1e-9)).max(1e-9);
    let (l0, l1) = (lo.ln(), max_sum.ln());
    let mut out = Vec::with_capacity(n_sum * n_split);
    for a in 0..n_sum {
        let s = (l0 + (l1 - l0) * a as f64 / (n_sum.max(2) - 1) as f64).exp();
        for b in 0..n_split {
            let theta = b as f64 / (n_split.max(2) - 1) as f64;
            let x = theta * s;
            let y = s - x;
            let r = (a * n_split + b) % 4;
            out.push(State::new((r / 2) as u8, x, (r % 2) as u8, y.max(0.0)).expect("finite grid"));
        }
    }
    out
}

fn hypothesis(msg: &str) -> Error {
    Error::Hypothesis(msg.to_string())
}

/// `C(k, K) = (k+1)/((1−δ)γ − 2m − ε) · (1 + ε^{−(m0−m)} k^{1+m0−m}/(m0−m−k))`.
///
/// Requires `K ≥ K(δ)` at the set's power, `1+k < m < m0−k` and
/// `0 < ε < (1−δ)γ − 2m`.
pub fn constant_c(set: &SublevelSet, params: &DriftParams) -> Result<f64> {
    let DriftParams {
        delta,
        epsilon,
        m,
        m0,
        k,
        ..
    } = *params;
    let threshold = k_of_delta(delta, set.power)?;
    if set.level < threshold {
        return Err(hypothesis(&format!(
            "K ≥ K(δ) fails (K = {}, K(δ) = {threshold})",
            set.level
        )));
    }
    if !(k > 0.0) {
        return Err(hypothesis(&format!("k > 0 fails (k = {k})")));
    }
    if !(1.0 + k < m) {
        return Err(hypothesis(&format!("1+k < m fails (k = {k}, m = {m})")));
    }
    if !(m < m0 - k) {
        return Err(hypothesis(&format!("m < m0−k fails (m = {m}, m0 = {m0}, k = {k})")));
    }
    let c = params.drift_coefficient();
    if !(epsilon > 0.0 && epsilon < c) {
        return Err(hypothesis(&format!(
            "0 < ε < (1−δ)γ − 2m fails (ε = {epsilon}, (1−δ)γ − 2m = {c})"
        )));
    }
    let b = m0 - m;
    let value = (k + 1.0) / (c - epsilon) * (1.0 + epsilon.powf(-b) * k.powf(1.0 + b) / (b - k));
    if !(value.is_finite() && value > 0.0) {
        return Err(invalid(format!("C(k, K) is not finite and positive: {value}")));
    }
    Ok(value)
}

/// Relative tail bound at which the `C̃` series is truncated.
pub const SERIES_REL_TOL: f64 = 1e-9;
const SERIES_MAX_TERMS: u64 = 500_000_000;

/// The series
/// `Σ_{ℓ≥1} [(ℓ+1)^{k1} (2C + ℓ^{k1+1})]^{1/p1} (1−q)^{(ℓ−1)/p2}`
/// with `p1 = (k1+1)/(k+1)`, `p2 = (k1+1)/(k1−k)` and `C = C(k1, K)`.
///
/// Summation stops once a geometric envelope of the remaining tail drops
/// below `1e-9` of the partial sum.
pub fn constant_c_tilde(k: f64, k1: f64, c_k1: f64, q: f64) -> Result<f64> {
    let (p1, ln_r) = c_tilde_shape(k, k1, c_k1, q)?;
    let mut sum = 0.0;
    for l in 1..=SERIES_MAX_TERMS {
        let t = c_tilde_term(l, k1, c_k1, p1, ln_r);
        sum += t;
        let lf = l as f64;
        let rho = ((lf + 2.0) / (lf + 1.0)).powf(k1 / p1) * ((lf + 1.0) / lf).powf((k1 + 1.0) / p1) * ln_r.exp();
        if rho < 1.0 {
            let tail = t * rho / (1.0 - rho);
            if tail <= SERIES_REL_TOL * sum {
                return Ok(sum);
            }
        }
    }
    Err(invalid(format!(
        "C̃ series did not reach its tail tolerance within {SERIES_MAX_TERMS} terms (q = {q})"
    )))
}

/// The first `n` terms of the `C̃` series.
pub fn constant_c_tilde_partial(k: f64, k1: f64, c_k1: f64, q: f64, n: u64) -> Result<f64> {
    let (p1, ln_r) = c_tilde_shape(k, k1, c_k1, q)?;
    Ok((1..=n).map(|l| c_tilde_term(l, k1, c_k1, p1, ln_r)).sum())
}

fn c_tilde_shape(k: f64, k1: f64, c_k1: f64, q: f64) -> Result<(f64, f64)> {
    if !(k > 0.0 && k < k1 && k1.is_finite()) {
        return Err(invalid(format!("need 0 < k < k1, got k = {k}, k1 = {k1}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("q must lie in (0, 1], got {q}")));
    }
    if !(c_k1.is_finite() && c_k1 > 0.0) {
        return Err(invalid(format!("C(k1, K) must be finite and > 0, got {c_k1}")));
    }
    let p1 = (k1 + 1.0) / (k + 1.0);
    let p2 = (k1 + 1.0) / (k1 - k);
    // ln of the geometric ratio (1−q)^{1/p2}; −inf when q = 1
    let ln_r = (1.0 - q).ln() / p2;
    Ok((p1, ln_r))
}

#[inline]
fn c_tilde_term(l: u64, k1: f64, c_k1: f64, p1: f64, ln_r: f64) -> f64 {
    let lf = l as f64;
    let base = ((lf + 1.0).powf(k1) * (2.0 * c_k1 + lf.powf(k1 + 1.0))).powf(1.0 / p1);
    let geo = if l == 1 { 1.0 } else { ((lf - 1.0) * ln_r).exp() };
    base * geo
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(i: u8, x: f64, j: u8, y: f64) -> State {
        State::new(i, x, j, y).unwrap()
    }

    #[test]
    fn v_examples() {
        assert_eq!(v(1.0, &State::ORIGIN), 1.0);
        assert_eq!(v(2.0, &st(0, 3.0, 1, 1.0)), 25.0);
        assert!((v(2.5, &st(1, 0.0, 0, 3.0)) - 32.0).abs() < 1e-12);
        assert_eq!(v_tk(1.0, 1.0, 1.0, &st(0, 1.0, 0, 1.0)), 6.0);
        let z = st(1, 0.7, 1, 2.2);
        assert_eq!(v_tk(1.3, 2.1, 0.0, &z), v(2.1, &z));
        assert_eq!(v_tk(0.0, 2.1, 5.0, &z), v(2.1, &z));
    }

    #[test]
    fn generator_examples() {
        let c = IntensityModel::constant(1.0, 1.0).unwrap();
        assert_eq!(generator_on_v(&c, 2.0, &State::ORIGIN), 4.0);
        assert_eq!(generator_on_v(&c, 1.0, &st(0, 3.0, 0, 4.0)), -5.0);
        let eq = IntensityModel::equality(3.0).unwrap();
        assert!((generator_on_v(&eq, 1.0, &st(0, 1.0, 0, 0.0)) - 0.5).abs() < 1e-15);

        assert_eq!(generator_apply(&eq, &ConstantFn(3.5), &st(1, 2.0, 0, 9.0)), 0.0);
        let hx = FnTestFunction {
            value: |z: &State| z.x(),
            dx: |_: &State| 1.0,
            dy: |_: &State| 0.0,
        };
        assert_eq!(generator_apply(&c, &hx, &st(0, 3.0, 0, 4.0)), -2.0);
    }

    #[test]
    fn k_of_delta_examples() {
        assert!((k_of_delta(0.2, 1.0).unwrap() - 5.0).abs() < 1e-12);
        assert!((k_of_delta(0.5, 2.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((k_of_delta(1.0 - 1e-12, 1.0).unwrap() - 1.0).abs() < 1e-9);
        assert!(k_of_delta(0.0, 1.0).is_err());
        assert!(k_of_delta(1.0, 1.0).is_err());
    }

    /// Brute-force minimum of `x/(1+x) + y/(1+y)` over `x + y = s`.
    fn min_on_line(s: f64) -> f64 {
        (0..=10_000)
            .map(|a| {
                let x = s * a as f64 / 10_000.0;
                let y = s - x;
                x / (1.0 + x) + y / (1.0 + y)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn k_of_delta_corner_oracle() {
        for (delta, m) in [(0.2, 1.0), (0.5, 2.0), (0.1, 1.5), (0.3, 3.0)] {
            let k = k_of_delta(delta, m).unwrap();
            let s = k.powf(1.0 / m) - 1.0;
            let min = min_on_line(s);
            assert!((min - s / (1.0 + s)).abs() < 1e-12, "corner is the minimiser");
            assert!(min >= 1.0 - delta - 1e-12);
            // a smaller threshold would not do
            let s_less = s * 0.99;
            assert!(min_on_line(s_less) < 1.0 - delta);
        }
    }

    #[test]
    fn drift_certificate_and_fault_injection() {
        let eq = IntensityModel::equality(6.0).unwrap();
        for m in [1.0, 2.0] {
            let params = DriftParams {
                gamma: 6.0,
                delta: 0.2,
                epsilon: 0.0,
                m,
                m0: m,
                k: 0.0,
            };
            let grid = outside_grid(m, k_of_delta(0.2, m).unwrap(), 100, 100, 1e4);
            assert_eq!(grid.len(), 10_000);
            let rep = drift_check(&eq, &params, &grid).unwrap();
            assert_eq!(rep.violations, 0, "m = {m}, min margin {}", rep.min_margin);

            let weak = IntensityModel::uncertified(
                crate::Family::Reciprocal { a: 0.0, b: 0.6 },
                crate::Family::Reciprocal { a: 0.0, b: 6.0 },
                6.0,
                6.0,
            )
            .unwrap();
            let rep = drift_check(&weak, &params, &grid).unwrap();
            assert!(rep.violations > 0);
            assert_eq!(rep.violations_csv().lines().count(), rep.violations + 1);
        }
    }

    #[test]
    fn drift_rejects_inside_states() {
        let eq = IntensityModel::equality(6.0).unwrap();
        let params = DriftParams {
            gamma: 6.0,
            delta: 0.2,
            epsilon: 0.0,
            m: 1.0,
            m0: 1.0,
            k: 0.0,
        };
        assert!(drift_check(&eq, &params, &[st(0, 1.0, 0, 1.0)]).is_err());
    }

    fn part2() -> DriftParams {
        DriftParams {
            gamma: 6.0,
            delta: 0.2,
            epsilon: 1.0,
            m: 1.75,
            m0: 2.5,
            k: 0.5,
        }
    }

    #[test]
    fn constant_c_example() {
        let set = SublevelSet::new(5.0, 1.0).unwrap();
        let c = constant_c(&set, &part2()).unwrap();
        // (1.5/0.3)(1 + 2^{-1.75}/0.25)
        let expect = 5.0 * (1.0 + 2f64.powf(-1.75) / 0.25);
        assert!((c - expect).abs() < 1e-12);
        assert!((c - 10.946).abs() < 5e-4, "{c}");
    }

    #[test]
    fn constant_c_boundaries() {
        let set = SublevelSet::new(5.0, 1.0).unwrap();
        let mut p = part2();
        p.epsilon = p.drift_coefficient();
        assert!(matches!(constant_c(&set, &p), Err(Error::Hypothesis(_))));
        let mut p = part2();
        p.m0 = 2.25; // m0 − m − k = 0
        let err = constant_c(&set, &p).unwrap_err();
        assert!(err.to_string().contains("m < m0−k"), "{err}");
        let low = SublevelSet::new(4.0, 1.0).unwrap();
        assert!(constant_c(&low, &part2()).unwrap_err().to_string().contains("K ≥ K(δ)"));
    }

    #[test]
    fn c_tilde_behaviour() {
        let c = 10.946;
        let near_one = constant_c_tilde(0.2, 0.5, c, 1.0).unwrap();
        let first = constant_c_tilde_partial(0.2, 0.5, c, 1.0, 1).unwrap();
        assert_eq!(near_one, first);
        let a = constant_c_tilde(0.2, 0.5, c, 0.15).unwrap();
        let b = constant_c_tilde(0.2, 0.5, c, 0.3).unwrap();
        assert!(b < a);
        assert!(b.is_finite());
        assert!(constant_c_tilde(0.2, 0.5, c, 0.0).is_err());
        assert!(constant_c_tilde(0.5, 0.2, c, 0.3).is_err());
    }

    #[test]
    fn c_tilde_two_depths_agree() {
        let c = 10.946;
        let full = constant_c_tilde(0.2, 0.5, c, 0.3).unwrap();
        let d1 = constant_c_tilde_partial(0.2, 0.5, c, 0.3, 2_000).unwrap();
        let d2 = constant_c_tilde_partial(0.2, 0.5, c, 0.3, 4_000).unwrap();
        assert!(((d1 - d2) / d2).abs() < 1e-6);
        assert!(((full - d2) / d2).abs() < 1e-6);
    }
}
