//! Intensity models for the two regime switches.
//!
//! `λ(Z)` is the switching rate of the first element and `μ(Z)` that of the
//! second. Every model carries constants `γ ≤ Γ` with
//!
//! ```text
//! γ/(1+x) ≤ λ(Z) ≤ Γ,    γ/(1+y) ≤ μ(Z) ≤ Γ
//! ```
//!
//! Only a closed set of parametric families is accepted so the bound can be
//! certified analytically for every state, not only on a grid. Families see
//! their "own" elapsed time (`x` for λ, `y` for μ) and the "other" one.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::state::State;

/// Which of the two rates a family describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lambda,
    Mu,
}

impl Side {
    #[inline]
    fn own_other(self, z: &State) -> (f64, f64) {
        match self {
            Side::Lambda => (z.x(), z.y()),
            Side::Mu => (z.y(), z.x()),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Side::Lambda => "lambda",
            Side::Mu => "mu",
        }
    }
}

/// Axis-aligned piecewise-constant rate over `(x, y)`, optionally different
/// per regime pair.
///
/// Cells are `[e_k, e_{k+1})` along each axis, with an implicit first edge at
/// 0 and last edge at infinity. `values[a][b]` is the rate on x-cell `a` and
/// y-cell `b`; `values_ij` overrides it for the regime pair `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseTable {
    #[serde(default)]
    pub x_edges: Vec<f64>,
    #[serde(default)]
    pub y_edges: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values_00: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values_01: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values_10: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values_11: Option<Vec<Vec<f64>>>,
}

impl PiecewiseTable {
    fn table_for(&self, regime: usize) -> &Vec<Vec<f64>> {
        let o = match regime {
            0 => &self.values_00,
            1 => &self.values_01,
            2 => &self.values_10,
            _ => &self.values_11,
        };
        o.as_ref().unwrap_or(&self.values)
    }

    fn tables(&self) -> impl Iterator<Item = &Vec<Vec<f64>>> {
        (0..4).map(|r| self.table_for(r))
    }

    #[inline]
    fn cell(edges: &[f64], v: f64) -> usize {
        edges.partition_point(|&e| e <= v)
    }

    #[inline]
    fn value(&self, z: &State) -> f64 {
        let t = self.table_for(z.regime());
        t[Self::cell(&self.x_edges, z.x())][Self::cell(&self.y_edges, z.y())]
    }

    fn check_shape(&self) -> Result<()> {
        for (name, edges) in [("x_edges", &self.x_edges), ("y_edges", &self.y_edges)] {
            if edges.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                return Err(invalid(format!("piecewise_table {name} must be finite and > 0")));
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("piecewise_table {name} must be strictly increasing")));
            }
        }
        let (nx, ny) = (self.x_edges.len() + 1, self.y_edges.len() + 1);
        for t in self.tables() {
            if t.len() != nx || t.iter().any(|row| row.len() != ny) {
                return Err(invalid(format!(
                    "piecewise_table values must be {nx} rows of {ny} cells"
                )));
            }
            if t.iter().flatten().any(|v| !v.is_finite()) {
                return Err(invalid("piecewise_table values must be finite"));
            }
        }
        Ok(())
    }
}

/// A parametric family for one of the two rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Family {
    /// `c`
    Constant {
        c: f64,
    },
    /// `a + b/(1+own)`
    Reciprocal {
        a: f64,
        b: f64,
    },
    /// `Γ − (Γ−g0)/(1+own)`, increasing from `g0` towards `Γ`.
    Aging {
        g0: f64,
    },
    /// `g0/(1+own) + β·1(other > x0)`, discontinuous in the other clock.
    CrossStep {
        g0: f64,
        beta: f64,
        x0: f64,
    },
    PiecewiseTable(PiecewiseTable),
}

impl Family {
    pub fn kind(&self) -> &'static str {
        match self {
            Family::Constant { .. } => "constant",
            Family::Reciprocal { .. } => "reciprocal",
            Family::Aging { .. } => "aging",
            Family::CrossStep { .. } => "cross_step",
            Family::PiecewiseTable(_) => "piecewise_table",
        }
    }

    #[inline]
    pub fn eval(&self, side: Side, z: &State, upper: f64) -> f64 {
        let (own, other) = side.own_other(z);
        match self {
            Family::Constant { c } => *c,
            Family::Reciprocal { a, b } => a + b / (1.0 + own),
            Family::Aging { g0 } => upper - (upper - g0) / (1.0 + own),
            Family::CrossStep { g0, beta, x0 } => {
                let step = if other > *x0 { *beta } else { 0.0 };
                g0 / (1.0 + own) + step
            }
            Family::PiecewiseTable(t) => t.value(z),
        }
    }

    /// Analytic check of `γ/(1+own) ≤ rate ≤ Γ` over the whole state space.
    pub fn certify(&self, side: Side, gamma: f64, upper: f64) -> Result<()> {
        let fail = |constraint: String| Error::BoundViolation {
            family: format!("{}.{}", side.name(), self.kind()),
            constraint,
        };
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match *self {
            Family::Constant { c } => {
                if !finite(&[c]) {
                    return Err(invalid("constant c must be finite"));
                }
                if c < gamma {
                    return Err(fail(format!("c >= gamma fails (c = {c}, gamma = {gamma})")));
                }
                if c > upper {
                    return Err(fail(format!("c <= Gamma fails (c = {c}, Gamma = {upper})")));
                }
            }
            Family::Reciprocal { a, b } => {
                if !finite(&[a, b]) {
                    return Err(invalid("reciprocal a, b must be finite"));
                }
                if a < 0.0 {
                    return Err(fail(format!("a >= 0 fails (a = {a})")));
                }
                if b < gamma {
                    return Err(fail(format!("b >= gamma fails (b = {b}, gamma = {gamma})")));
                }
                if a + b > upper {
                    return Err(fail(format!(
                        "a + b <= Gamma fails (a + b = {}, Gamma = {upper})",
                        a + b
                    )));
                }
            }
            Family::Aging { g0 } => {
                if !finite(&[g0]) {
                    return Err(invalid("aging g0 must be finite"));
                }
                if g0 < gamma {
                    return Err(fail(format!("g0 >= gamma fails (g0 = {g0}, gamma = {gamma})")));
                }
                if g0 > upper {
                    return Err(fail(format!("g0 <= Gamma fails (g0 = {g0}, Gamma = {upper})")));
                }
            }
            Family::CrossStep { g0, beta, x0 } => {
                if !finite(&[g0, beta, x0]) {
                    return Err(invalid("cross_step parameters must be finite"));
                }
                if g0 < gamma {
                    return Err(fail(format!("g0 >= gamma fails (g0 = {g0}, gamma = {gamma})")));
                }
                if beta < 0.0 {
                    return Err(fail(format!("beta >= 0 fails (beta = {beta})")));
                }
                if g0 + beta > upper {
                    return Err(fail(format!(
                        "g0 + beta <= Gamma fails (g0 + beta = {}, Gamma = {upper})",
                        g0 + beta
                    )));
                }
            }
            Family::PiecewiseTable(ref t) => {
                t.check_shape()?;
                for (r, table) in t.tables().enumerate() {
                    for (a, row) in table.iter().enumerate() {
                        for (b, &v) in row.iter().enumerate() {
                            if v < gamma || v > upper {
                                return Err(fail(format!(
                                    "cell value in [gamma, Gamma] fails at regime {}{} cell ({a},{b}): {v} not in [{gamma}, {upper}]",
                                    r / 2,
                                    r % 2
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Flow offsets in `(0, horizon)` where this family may jump.
    fn push_breakpoints(&self, side: Side, z: &State, horizon: f64, out: &mut Vec<f64>) {
        let mut push = |s: f64| {
            if s > 0.0 && s < horizon {
                out.push(s);
            }
        };
        match self {
            Family::CrossStep { x0, .. } => {
                let (_, other) = side.own_other(z);
                push(x0 - other);
            }
            Family::PiecewiseTable(t) => {
                for e in &t.x_edges {
                    push(e - z.x());
                }
                for e in &t.y_edges {
                    push(e - z.y());
                }
            }
            _ => {}
        }
    }

    fn is_smooth(&self) -> bool {
        !matches!(self, Family::CrossStep { .. } | Family::PiecewiseTable(_))
    }
}

/// Rates at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub lambda: f64,
    pub mu: f64,
    /// `λ + μ`
    pub total: f64,
}

/// A pair of intensity families with their bound constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityModel {
    lambda: Family,
    mu: Family,
    gamma: f64,
    #[serde(rename = "Gamma")]
    upper: f64,
    certified: bool,
}

impl IntensityModel {
    /// Builds a model and certifies the rate bounds for both families.
    pub fn new(lambda: Family, mu: Family, gamma: f64, upper: f64) -> Result<Self> {
        let mut model = Self::uncertified(lambda, mu, gamma, upper)?;
        model.lambda.certify(Side::Lambda, gamma, upper)?;
        model.mu.certify(Side::Mu, gamma, upper)?;
        model.certified = true;
        Ok(model)
    }

    /// Builds a model without the bound certificate. Meant for fault
    /// injection; thinning is only exact while `λ + μ ≤ 2Γ`.
    pub fn uncertified(lambda: Family, mu: Family, gamma: f64, upper: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(invalid(format!("gamma must be finite and > 0, got {gamma}")));
        }
        if !(upper.is_finite() && upper >= gamma) {
            return Err(invalid(format!("Gamma must be finite and >= gamma, got {upper}")));
        }
        for f in [&lambda, &mu] {
            if let Family::PiecewiseTable(t) = f {
                t.check_shape()?;
            }
        }
        Ok(IntensityModel {
            lambda,
            mu,
            gamma,
            upper,
            certified: false,
        })
    }

    /// `λ = γ/(1+x)`, `μ = γ/(1+y)`: the smallest rates the bound allows.
    pub fn equality(gamma: f64) -> Result<Self> {
        let f = Family::Reciprocal { a: 0.0, b: gamma };
        Self::new(f.clone(), f, gamma, gamma)
    }

    /// Constant rates, with `γ = min` and `Γ = max` of the two.
    pub fn constant(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(
            Family::Constant { c: lambda },
            Family::Constant { c: mu },
            lambda.min(mu),
            lambda.max(mu),
        )
    }

    pub fn lambda_family(&self) -> &Family {
        &self.lambda
    }

    pub fn mu_family(&self) -> &Family {
        &self.mu
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// The upper rate bound Γ.
    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_certified(&self) -> bool {
        self.certified
    }

    #[inline]
    pub fn lambda(&self, z: &State) -> f64 {
        self.lambda.eval(Side::Lambda, z, self.upper)
    }

    #[inline]
    pub fn mu(&self, z: &State) -> f64 {
        self.mu.eval(Side::Mu, z, self.upper)
    }

    #[inline]
    pub fn evaluate(&self, z: &State) -> Rates {
        let lambda = self.lambda(z);
        let mu = self.mu(z);
        Rates {
            lambda,
            mu,
            total: lambda + mu,
        }
    }

    #[inline]
    pub fn total(&self, z: &State) -> f64 {
        self.lambda(z) + self.mu(z)
    }

    /// True when neither family has discontinuities along the flow.
    pub fn is_smooth(&self) -> bool {
        self.lambda.is_smooth() && self.mu.is_smooth()
    }

    /// Sorted, deduplicated offsets `s ∈ (0, horizon)` at which
    /// `s ↦ Λ(Z + s)` may be discontinuous.
    pub fn breakpoints(&self, z: &State, horizon: f64) -> Vec<f64> {
        let mut out = Vec::new();
        self.lambda.push_breakpoints(Side::Lambda, z, horizon, &mut out);
        self.mu.push_breakpoints(Side::Mu, z, horizon, &mut out);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Grid spot-check of the rate bounds.
    pub fn verify_bounds(&self, grid: &[State]) -> Vec<BoundViolation> {
        let mut out = Vec::new();
        for z in grid {
            let r = self.evaluate(z);
            let checks = [
                (Inequality::LambdaLower, self.gamma / (1.0 + z.x()) - r.lambda),
                (Inequality::LambdaUpper, r.lambda - self.upper),
                (Inequality::MuLower, self.gamma / (1.0 + z.y()) - r.mu),
                (Inequality::MuUpper, r.mu - self.upper),
            ];
            for (inequality, excess) in checks {
                // relative slack of a few ulps for families that meet the bound with equality
                if excess > 4.0 * f64::EPSILON * self.upper {
                    out.push(BoundViolation {
                        state: *z,
                        inequality,
                        margin: excess,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    LambdaLower,
    LambdaUpper,
    MuLower,
    MuUpper,
}

/// One failed bound at one grid state; `margin` is how far past the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub state: State,
    pub inequality: Inequality,
    pub margin: f64,
}

/// Points per axis of [`default_grid`].
pub const GRID_POINTS_PER_AXIS: usize = 64;

/// `0` followed by 63 log-spaced values in `[1e-3, 1e3]`, for each axis and
/// all four regime pairs.
pub fn default_grid() -> Vec<State> {
    let axis = log_axis(GRID_POINTS_PER_AXIS, 1e-3, 1e3);
    let mut grid = Vec::with_capacity(4 * axis.len() * axis.len());
    for i in 0..2u8 {
        for j in 0..2u8 {
            for &x in &axis {
                for &y in &axis {
                    grid.push(State::new(i, x, j, y).expect("grid values are valid"));
                }
            }
        }
    }
    grid
}

/// `n` points: 0 and then `n-1` log-spaced values from `lo` to `hi`.
pub(crate) fn log_axis(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut v = vec![0.0];
    let k = n - 1;
    let (l0, l1) = (lo.ln(), hi.ln());
    for a in 0..k {
        let t = if k == 1 { 0.0 } else { a as f64 / (k - 1) as f64 };
        v.push((l0 + t * (l1 - l0)).exp());
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(i: u8, x: f64, j: u8, y: f64) -> State {
        State::new(i, x, j, y).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let m = IntensityModel::constant(2.0, 3.0).unwrap();
        let r = m.evaluate(&st(1, 8.0, 0, 0.1));
        assert_eq!((r.lambda, r.mu, r.total), (2.0, 3.0, 5.0));

        let m = IntensityModel::equality(3.0).unwrap();
        assert_eq!(m.lambda(&st(0, 2.0, 1, 9.0)), 1.0);

        let m = IntensityModel::new(
            Family::Constant { c: 3.0 },
            Family::CrossStep {
                g0: 3.0,
                beta: 1.0,
                x0: 5.0,
            },
            3.0,
            4.0,
        )
        .unwrap();
        assert_eq!(m.mu(&st(0, 6.0, 0, 0.0)), 4.0);
        assert_eq!(m.mu(&st(0, 5.0, 0, 0.0)), 3.0);
    }

    #[test]
    fn make_model_examples() {
        let err = IntensityModel::new(Family::Constant { c: 1.0 }, Family::Constant { c: 2.0 }, 2.0, 3.0).unwrap_err();
        match err {
            Error::BoundViolation { family, constraint } => {
                assert_eq!(family, "lambda.constant");
                assert!(constraint.contains("c >= gamma"), "{constraint}");
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(IntensityModel::new(
            Family::Reciprocal { a: 0.0, b: 3.0 },
            Family::Reciprocal { a: 0.0, b: 3.0 },
            3.0,
            3.0
        )
        .is_ok());

        let m = IntensityModel::new(Family::Aging { g0: 1.0 }, Family::Aging { g0: 1.0 }, 1.0, 6.0).unwrap();
        assert_eq!(m.lambda(&State::ORIGIN), 1.0);
        let far = m.lambda(&st(0, 1e9, 0, 0.0));
        assert!(far < 6.0 && far > 5.999_999);
    }

    #[test]
    fn rejects_bad_constants() {
        let c = Family::Constant { c: 1.0 };
        assert!(IntensityModel::new(c.clone(), c.clone(), 0.0, 1.0).is_err());
        assert!(IntensityModel::new(c.clone(), c.clone(), 1.0, 0.5).is_err());
        assert!(IntensityModel::new(
            Family::CrossStep {
                g0: 1.0,
                beta: -0.5,
                x0: 1.0
            },
            c,
            1.0,
            2.0
        )
        .is_err());
    }

    #[test]
    fn breakpoint_examples() {
        let m = IntensityModel::constant(1.0, 1.0).unwrap();
        assert!(m.breakpoints(&st(0, 3.0, 0, 1.0), 10.0).is_empty());

        let m = IntensityModel::new(
            Family::Constant { c: 3.0 },
            Family::CrossStep {
                g0: 3.0,
                beta: 1.0,
                x0: 5.0,
            },
            3.0,
            4.0,
        )
        .unwrap();
        assert_eq!(m.breakpoints(&st(0, 3.0, 0, 0.0), 10.0), vec![2.0]);
        assert!(m.breakpoints(&st(0, 6.0, 0, 0.0), 10.0).is_empty());

        let table = PiecewiseTable {
            x_edges: vec![1.0, 2.0],
            y_edges: vec![],
            values: vec![vec![1.0], vec![2.0], vec![1.5]],
            values_00: None,
            values_01: None,
            values_10: None,
            values_11: None,
        };
        let m = IntensityModel::new(Family::PiecewiseTable(table), Family::Constant { c: 1.0 }, 1.0, 2.0).unwrap();
        assert_eq!(m.breakpoints(&State::ORIGIN, 1.5), vec![1.0]);
        assert_eq!(m.breakpoints(&State::ORIGIN, 5.0), vec![1.0, 2.0]);
    }

    #[test]
    fn verify_bounds_examples() {
        let grid = default_grid();
        assert_eq!(grid.len(), 4 * 64 * 64);
        assert!(IntensityModel::equality(3.0).unwrap().verify_bounds(&grid).is_empty());
        let m = IntensityModel::constant(2.0, 2.0).unwrap();
        assert!(m.verify_bounds(&grid).is_empty());

        // one cell above Γ
        let table = PiecewiseTable {
            x_edges: vec![1.0, 10.0],
            y_edges: vec![5.0],
            values: vec![vec![2.0, 2.0], vec![2.0, 4.0], vec![2.0, 2.0]],
            values_00: None,
            values_01: None,
            values_10: None,
            values_11: None,
        };
        let bad = IntensityModel::uncertified(
            Family::PiecewiseTable(table.clone()),
            Family::Constant { c: 2.0 },
            1.0,
            3.0,
        )
        .unwrap();
        assert!(Family::PiecewiseTable(table).certify(Side::Lambda, 1.0, 3.0).is_err());
        let v = bad.verify_bounds(&grid);
        let expected = grid
            .iter()
            .filter(|z| z.x() >= 1.0 && z.x() < 10.0 && z.y() >= 5.0)
            .count();
        assert!(expected > 0);
        assert_eq!(v.len(), expected);
        assert!(v
            .iter()
            .all(|b| b.inequality == Inequality::LambdaUpper && (b.margin - 1.0).abs() < 1e-12));
    }

    #[test]
    fn regime_specific_table() {
        let table = PiecewiseTable {
            x_edges: vec![],
            y_edges: vec![],
            values: vec![vec![1.0]],
            values_00: None,
            values_01: None,
            values_10: None,
            values_11: Some(vec![vec![2.0]]),
        };
        let m = IntensityModel::new(Family::PiecewiseTable(table), Family::Constant { c: 1.0 }, 1.0, 2.0).unwrap();
        assert_eq!(m.lambda(&st(0, 1.0, 1, 1.0)), 1.0);
        assert_eq!(m.lambda(&st(1, 1.0, 1, 1.0)), 2.0);
    }

    #[test]
    fn family_json_shape() {
        let f: Family = serde_json::from_str(r#"{"kind":"cross_step","params":{"g0":3,"beta":1,"x0":5}}"#).unwrap();
        assert_eq!(
            f,
            Family::CrossStep {
                g0: 3.0,
                beta: 1.0,
                x0: 5.0
            }
        );
    }
}
