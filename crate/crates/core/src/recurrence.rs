//! Monte-Carlo side of the recurrence theory: hitting times of sublevel
//! sets and their moments, checks of the three moment bounds, Dynkin
//! residuals, long-run occupation statistics and the regeneration cycles
//! used to reach small sets.
//!
//! `V_m` grows along the deterministic flow and can only decrease at a
//! jump, so a sublevel set `{V_m ≤ K}` is entered only at jump instants
//! (or at time 0) and left only along the flow.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimate::{binomial_lower_bound, EstimateReport, Verdict};
use crate::intensity::IntensityModel;
use crate::lyapunov::{constant_c, constant_c_tilde, generator_apply, v, DriftParams, SublevelSet, TestFunction};
use crate::numerics::integrate_piecewise;
use crate::rng::{mix64, RngStream};
use crate::sampler::{sample_event, Method, HAZARD_TOL};
use crate::state::State;

/// Default simulated-time budget of one hitting-time replication.
pub const DEFAULT_TIME_CAP: f64 = 1e6;

/// One hitting-time replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HittingSample {
    /// Entered the set at `time`; `before` is the pre-jump state (`None`
    /// when the start was already inside) and `after` the state at entry.
    Hit {
        time: f64,
        before: Option<State>,
        after: State,
    },
    /// No entry before the time cap.
    CapExceeded,
}

impl HittingSample {
    pub fn time(&self) -> Option<f64> {
        match self {
            HittingSample::Hit { time, .. } => Some(*time),
            HittingSample::CapExceeded => None,
        }
    }
}

/// First time the path from `z0` lies in `set`.
pub fn hitting_time<R: Rng + ?Sized>(
    model: &IntensityModel,
    z0: &State,
    set: &SublevelSet,
    rng: &mut R,
    time_cap: f64,
    method: Method,
) -> HittingSample {
    if set.contains(z0) {
        return HittingSample::Hit {
            time: 0.0,
            before: None,
            after: *z0,
        };
    }
    let mut t = 0.0;
    let mut z = *z0;
    loop {
        let ev = sample_event(model, &z, rng, method);
        t += ev.time;
        if !(t <= time_cap) {
            return HittingSample::CapExceeded;
        }
        let before = z.advance(ev.time);
        z = before.jump(ev.component);
        if set.contains(&z) {
            return HittingSample::Hit {
                time: t,
                before: Some(before),
                after: z,
            };
        }
    }
}

/// Settings shared by the Monte-Carlo estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub method: Method,
    pub time_cap: f64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            method: Method::Thinning,
            time_cap: DEFAULT_TIME_CAP,
        }
    }
}

pub const MIN_MOMENT_REPS: u64 = 100;

/// `E τ^p` over `reps` replications, with an optional upper bound.
#[allow(clippy::too_many_arguments)]
pub fn estimate_tau_moment(
    model: &IntensityModel,
    z0: &State,
    set: &SublevelSet,
    p: f64,
    reps: u64,
    seed: u64,
    bound: Option<f64>,
    opts: &McOptions,
) -> Result<EstimateReport> {
    if reps < MIN_MOMENT_REPS {
        return Err(invalid(format!("reps must be >= {MIN_MOMENT_REPS}, got {reps}")));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(invalid(format!("moment power must be > 0, got {p}")));
    }
    let times: Vec<Option<f64>> = (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            hitting_time(model, z0, set, &mut rng, opts.time_cap, opts.method).time()
        })
        .collect();
    let excluded = times.iter().filter(|t| t.is_none()).count() as u64;
    let sample: Vec<f64> = times.into_iter().flatten().map(|t| t.powf(p)).collect();
    Ok(EstimateReport::upper_bound_check(
        format!("E tau^{p} (K = {}, power {})", set.level, set.power),
        &sample,
        excluded,
        bound,
        seed,
    ))
}

/// Which statement of the moment theorem to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TheoremPart {
    /// `E τ(K, m0) ≤ V_{m0}(Z0)`
    One,
    /// `E τ^{k+1}(K, m0) ≤ C(k, K) V_{m0}(Z0)`
    Two,
    /// `E τ^{k+1}(K1, m0) ≤ C̃(k1, K) (V_{m0}(Z0) ∨ (K+1))`
    Three,
}

impl TheoremPart {
    pub fn from_index(part: u8) -> Result<Self> {
        match part {
            1 => Ok(TheoremPart::One),
            2 => Ok(TheoremPart::Two),
            3 => Ok(TheoremPart::Three),
            _ => Err(invalid(format!("theorem part must be 1, 2 or 3, got {part}"))),
        }
    }
}

/// Parameters of a theorem check. Sublevel sets are `{(1+x+y)^set_power ≤ K}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub m0: f64,
    pub m: f64,
    pub k: f64,
    pub k1: f64,
    pub delta: f64,
    pub epsilon: f64,
    #[serde(rename = "K")]
    pub level: f64,
    #[serde(rename = "K1")]
    pub level1: f64,
    pub set_power: f64,
    /// Replications per grid state when estimating `q` (part 3).
    pub q_reps: u64,
    /// Grid divisions per axis when estimating `q` (part 3).
    pub q_grid: usize,
}

/// Result of a theorem check: the Monte-Carlo estimate and the constants
/// that made up the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub part: TheoremPart,
    pub estimate: EstimateReport,
    pub v_m0: f64,
    /// `(1−δ)γ − 2m0` for part 1.
    pub drift_coefficient: Option<f64>,
    /// The bound exactly as displayed (part 1 without the `1/min(1, C)` factor).
    pub literal_bound: Option<f64>,
    pub c: Option<f64>,
    pub c_tilde: Option<f64>,
    pub q_low: Option<f64>,
}

fn hyp(msg: impl Into<String>) -> Error {
    Error::Hypothesis(msg.into())
}

/// Checks the theorem's hypotheses for `part`; the error names the first
/// failed inequality.
pub fn check_hypotheses(part: TheoremPart, gamma: f64, p: &TheoremParams) -> Result<()> {
    if !(gamma > 2.0 * p.m0) {
        return Err(hyp("γ > 2m0 fails"));
    }
    if !(p.delta > 0.0 && p.delta < 1.0) {
        return Err(hyp("0 < δ < 1 fails"));
    }
    let threshold = crate::lyapunov::k_of_delta(p.delta, p.set_power)?;
    match part {
        TheoremPart::One => {
            if !(p.m0 >= 1.0) {
                return Err(hyp("2m0 ≥ 2 fails"));
            }
            if !((1.0 - p.delta) * gamma > 2.0 * p.m0) {
                return Err(hyp("(1−δ)γ > 2m0 fails"));
            }
            if !(p.level >= threshold) {
                return Err(hyp(format!("K ≥ K(δ) fails (K = {}, K(δ) = {threshold})", p.level)));
            }
        }
        TheoremPart::Two => {
            if !(p.k > 0.0) {
                return Err(hyp("k > 0 fails"));
            }
            if !(p.m0 > 1.0 + 2.0 * p.k) {
                return Err(hyp("2m0 > 2(1+2k) fails"));
            }
        }
        TheoremPart::Three => {
            if !(p.k > 0.0) {
                return Err(hyp("k > 0 fails"));
            }
            if !(p.m0 > 1.0 + p.k) {
                return Err(hyp("2m0 > 2(1+k) fails"));
            }
            if !(p.k < p.k1) {
                return Err(hyp("k < k1 fails"));
            }
            if !(p.m0 > 1.0 + p.k1) {
                return Err(hyp("2m0 > 2(1+k1) fails"));
            }
            if !(p.level1 > 0.0 && p.level1 < p.level) {
                return Err(hyp("0 < K1 < K fails"));
            }
            if p.q_reps < MIN_Q_REPS {
                return Err(invalid(format!("q_reps must be >= {MIN_Q_REPS}")));
            }
        }
    }
    Ok(())
}

/// Stream offset separating the `q` estimate from the moment estimate.
const Q_STREAM_SALT: u64 = 0x7173_7472_6561_6d31;

/// Estimates the left side of the chosen bound and evaluates its right side.
pub fn check_theorem_bound(
    part: TheoremPart,
    model: &IntensityModel,
    params: &TheoremParams,
    z0: &State,
    reps: u64,
    seed: u64,
    opts: &McOptions,
) -> Result<TheoremCheck> {
    let gamma = model.gamma();
    check_hypotheses(part, gamma, params)?;
    let set = SublevelSet::new(params.level, params.set_power)?;
    let v_m0 = v(params.m0, z0);
    let drift = |k: f64| DriftParams {
        gamma,
        delta: params.delta,
        epsilon: params.epsilon,
        m: params.m,
        m0: params.m0,
        k,
    };
    match part {
        TheoremPart::One => {
            let c = (1.0 - params.delta) * gamma - 2.0 * params.m0;
            let bound = v_m0 / c.min(1.0);
            let estimate = estimate_tau_moment(model, z0, &set, 1.0, reps, seed, Some(bound), opts)?;
            Ok(TheoremCheck {
                part,
                estimate,
                v_m0,
                drift_coefficient: Some(c),
                literal_bound: (c >= 1.0).then_some(v_m0),
                c: None,
                c_tilde: None,
                q_low: None,
            })
        }
        TheoremPart::Two => {
            let c = constant_c(&set, &drift(params.k))?;
            let bound = c * v_m0;
            let estimate = estimate_tau_moment(model, z0, &set, params.k + 1.0, reps, seed, Some(bound), opts)?;
            Ok(TheoremCheck {
                part,
                estimate,
                v_m0,
                drift_coefficient: None,
                literal_bound: Some(bound),
                c: Some(c),
                c_tilde: None,
                q_low: None,
            })
        }
        TheoremPart::Three => {
            let c1 = constant_c(&set, &drift(params.k1))?;
            let small = set.with_level(params.level1)?;
            let q = estimate_q(
                model,
                &set,
                &small,
                params.q_grid,
                params.q_reps,
                mix64(seed, Q_STREAM_SALT),
                opts.method,
            )?;
            let c_tilde = constant_c_tilde(params.k, params.k1, c1, q.q_low)?;
            let bound = c_tilde * v_m0.max(params.level + 1.0);
            let estimate = estimate_tau_moment(model, z0, &small, params.k + 1.0, reps, seed, Some(bound), opts)?;
            Ok(TheoremCheck {
                part,
                estimate,
                v_m0,
                drift_coefficient: None,
                literal_bound: Some(bound),
                c: Some(c1),
                c_tilde: Some(c_tilde),
                q_low: Some(q.q_low),
            })
        }
    }
}

/// `h(Z_t) − h(Z_0) − ∫₀^t Lh(Z_s) ds` along one path, integrating `Lh`
/// exactly on each deterministic piece.
pub fn dynkin_path_residual<H: TestFunction + ?Sized>(
    model: &IntensityModel,
    h: &H,
    path: &crate::sampler::Path,
) -> f64 {
    let mut integral = 0.0;
    for (a, b, z) in path.segments() {
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        let f = |s: f64| generator_apply(model, h, &z.advance(s));
        let breaks = model.breakpoints(&z, len);
        integral += integrate_piecewise(&f, 0.0, len, &breaks, HAZARD_TOL).value;
    }
    h.value(&path.final_state()) - h.value(&path.initial) - integral
}

/// `|mean residual| ≤ DYNKIN_Z_LIMIT · SE` for consistency.
pub const DYNKIN_Z_LIMIT: f64 = 4.0;

/// Mean Dynkin residual over `reps` independent paths on `[0, t]`.
pub fn dynkin_residual<H: TestFunction + ?Sized>(
    model: &IntensityModel,
    h: &H,
    z0: &State,
    t: f64,
    reps: u64,
    seed: u64,
    method: Method,
) -> Result<EstimateReport> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("horizon must be > 0, got {t}")));
    }
    if reps < 2 {
        return Err(invalid("reps must be >= 2"));
    }
    let residuals: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|k| {
            let path = crate::sampler::simulate_path(model, *z0, t, RngStream::new(seed, k), method)?;
            Ok(dynkin_path_residual(model, h, &path))
        })
        .collect::<Result<_>>()?;
    Ok(EstimateReport::zero_mean_check(
        format!("dynkin residual (t = {t})"),
        &residuals,
        seed,
        DYNKIN_Z_LIMIT,
    ))
}

/// Settings of a long-run occupation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupationSpec {
    pub horizon: f64,
    pub burn_in: f64,
    pub bins: usize,
    /// Upper end of the histogram range; defaults to the largest clock
    /// value observed after burn-in.
    pub range: Option<f64>,
}

/// Time-weighted statistics after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    pub spec: OccupationSpec,
    pub seed: u64,
    pub total_time: f64,
    pub jumps: usize,
    /// Bin edges for both clocks (`bins + 1` values from 0).
    pub edges: Vec<f64>,
    /// Fraction of time with `x` in each bin.
    pub x_mass: Vec<f64>,
    pub y_mass: Vec<f64>,
    /// Fraction of time beyond the last edge.
    pub x_overflow: f64,
    pub y_overflow: f64,
    /// Fraction of time in regime pairs `(0,0), (0,1), (1,0), (1,1)`.
    pub regime_fraction: [f64; 4],
}

impl OccupationReport {
    pub fn fraction_i0(&self) -> f64 {
        self.regime_fraction[0] + self.regime_fraction[1]
    }

    pub fn fraction_j0(&self) -> f64 {
        self.regime_fraction[0] + self.regime_fraction[2]
    }

    /// Time-weighted CDF of `x` at each edge.
    pub fn x_cdf(&self) -> Vec<f64> {
        cumulative(&self.x_mass)
    }

    pub fn y_cdf(&self) -> Vec<f64> {
        cumulative(&self.y_mass)
    }

    /// `sup |F_emp − F|` over the edges, where the time-weighted CDF is exact.
    pub fn ks_x<F: Fn(f64) -> f64>(&self, cdf: F) -> f64 {
        ks(&self.edges, &self.x_cdf(), cdf)
    }

    pub fn ks_y<F: Fn(f64) -> f64>(&self, cdf: F) -> f64 {
        ks(&self.edges, &self.y_cdf(), cdf)
    }

    pub const CSV_HEADER: &'static str = "bin_low,bin_high,x_mass,y_mass";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for b in 0..self.x_mass.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[b],
                self.edges[b + 1],
                self.x_mass[b],
                self.y_mass[b]
            ));
        }
        out.push_str(&format!(
            "{},inf,{},{}\n",
            self.edges[self.edges.len() - 1],
            self.x_overflow,
            self.y_overflow
        ));
        out
    }
}

fn cumulative(mass: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    std::iter::once(0.0)
        .chain(mass.iter().map(|m| {
            acc += m;
            acc
        }))
        .collect()
}

fn ks<F: Fn(f64) -> f64>(edges: &[f64], emp: &[f64], cdf: F) -> f64 {
    edges
        .iter()
        .zip(emp)
        .map(|(&e, &f)| (f - cdf(e)).abs())
        .fold(0.0, f64::max)
}

/// Adds the occupation of the clock range `[lo, lo+len)` to `hist`.
fn add_uniform(hist: &mut [f64], overflow: &mut f64, width: f64, lo: f64, len: f64) {
    let hi = lo + len;
    let top = width * hist.len() as f64;
    if hi > top {
        *overflow += hi - lo.max(top);
    }
    if lo >= top {
        return;
    }
    let first = (lo / width) as usize;
    let last = (((hi.min(top)) / width).ceil() as usize).min(hist.len());
    for (b, cell) in hist.iter_mut().enumerate().take(last).skip(first) {
        let a = b as f64 * width;
        let c = a + width;
        let ov = hi.min(c) - lo.max(a);
        if ov > 0.0 {
            *cell += ov;
        }
    }
}

/// Time-weighted histograms of both clocks and regime fractions over
/// `[burn_in, horizon]` of a single long path.
pub fn stationary_occupation(
    model: &IntensityModel,
    z0: &State,
    spec: &OccupationSpec,
    seed: u64,
    method: Method,
) -> Result<OccupationReport> {
    if !(spec.horizon > spec.burn_in && spec.burn_in >= 0.0 && spec.horizon.is_finite()) {
        return Err(invalid("need 0 <= burn_in < horizon"));
    }
    if spec.bins == 0 {
        return Err(invalid("bins must be >= 1"));
    }
    let path = crate::sampler::simulate_path(model, *z0, spec.horizon, RngStream::new(seed, 0), method)?;
    // clipped pieces (state at burn-in-clipped start, length)
    let pieces: Vec<(State, f64)> = path
        .segments()
        .filter(|&(_, b, _)| b > spec.burn_in)
        .map(|(a, b, z)| {
            let start = a.max(spec.burn_in);
            (z.advance(start - a), b - start)
        })
        .filter(|&(_, len)| len > 0.0)
        .collect();
    let range = match spec.range {
        Some(r) if r > 0.0 => r,
        Some(r) => return Err(invalid(format!("histogram range must be > 0, got {r}"))),
        None => pieces
            .iter()
            .map(|(z, len)| z.x().max(z.y()) + len)
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE),
    };
    let width = range / spec.bins as f64;
    let mut x_mass = vec![0.0; spec.bins];
    let mut y_mass = vec![0.0; spec.bins];
    let (mut x_over, mut y_over) = (0.0, 0.0);
    let mut regime = [0.0; 4];
    for (z, len) in &pieces {
        add_uniform(&mut x_mass, &mut x_over, width, z.x(), *len);
        add_uniform(&mut y_mass, &mut y_over, width, z.y(), *len);
        regime[z.regime()] += len;
    }
    let total = spec.horizon - spec.burn_in;
    for m in x_mass.iter_mut().chain(y_mass.iter_mut()).chain(regime.iter_mut()) {
        *m /= total;
    }
    Ok(OccupationReport {
        spec: *spec,
        seed,
        total_time: total,
        jumps: path.jumps.len(),
        edges: (0..=spec.bins).map(|b| b as f64 * width).collect(),
        x_mass,
        y_mass,
        x_overflow: x_over / total,
        y_overflow: y_over / total,
        regime_fraction: regime,
    })
}

/// Alternating returns `τⁿ` to `𝕂(K)` and capped exits `Tⁿ` from `𝕂(K+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenerationRecord {
    pub tau: Vec<f64>,
    pub exit: Vec<f64>,
    /// `Δⁿ = τⁿ − Tⁿ⁻¹`
    pub delta: Vec<f64>,
    /// State at each `Tⁿ`.
    pub exit_states: Vec<State>,
    /// State at each `τⁿ`.
    pub entry_states: Vec<State>,
    /// First time in the smaller set `𝕂(K1)`, if reached during the run.
    pub small_set_time: Option<f64>,
    /// 1-based cycle in which `𝕂(K1)` was first reached.
    pub small_set_cycle: Option<usize>,
}

/// Largest `s ≥ 0` with `Z + s` still in `set`.
fn exit_offset(set: &SublevelSet, z: &State) -> f64 {
    let mut s = ((set.radius() - z.seminorm()) / 2.0).max(0.0);
    while s > 0.0 && !set.contains(&z.advance(s)) {
        s = s.next_down();
    }
    s
}

/// Simulates `n_cycles` regeneration cycles from `z0`.
///
/// `τ¹` is the first time in `𝕂(K)`; `Tⁿ` is the first exit from `𝕂(K+1)`
/// after `τⁿ`, capped at `τⁿ + 1`; `τⁿ⁺¹` the first time after `Tⁿ` in
/// `𝕂(K)`. The run also notes the first visit to `𝕂(K1)`.
pub fn regeneration_sequence<R: Rng + ?Sized>(
    model: &IntensityModel,
    z0: &State,
    set: &SublevelSet,
    small: &SublevelSet,
    n_cycles: usize,
    rng: &mut R,
    opts: &McOptions,
) -> Result<RegenerationRecord> {
    if !(small.level < set.level) || small.power != set.power {
        return Err(invalid("need K1 < K with the same set power"));
    }
    if n_cycles == 0 {
        return Err(invalid("n_cycles must be >= 1"));
    }
    let outer = set.with_level(set.level + 1.0)?;
    let mut rec = RegenerationRecord {
        tau: Vec::with_capacity(n_cycles),
        exit: Vec::with_capacity(n_cycles),
        delta: Vec::with_capacity(n_cycles),
        exit_states: Vec::with_capacity(n_cycles),
        entry_states: Vec::with_capacity(n_cycles),
        small_set_time: None,
        small_set_cycle: None,
    };
    let mut t = 0.0;
    let mut z = *z0;
    let mut last_exit = 0.0;
    for cycle in 1..=n_cycles {
        // return to 𝕂(K)
        if !set.contains(&z) {
            match hitting_time(model, &z, set, rng, opts.time_cap, opts.method) {
                HittingSample::Hit { time, after, .. } => {
                    t += time;
                    z = after;
                }
                HittingSample::CapExceeded => {
                    return Err(invalid(format!("no return to K within time cap {}", opts.time_cap)))
                }
            }
        }
        let tau = t;
        rec.tau.push(tau);
        rec.delta.push(tau - last_exit);
        rec.entry_states.push(z);
        let note_small = |z: &State, time: f64, rec: &mut RegenerationRecord| {
            if rec.small_set_time.is_none() && small.contains(z) {
                rec.small_set_time = Some(time);
                rec.small_set_cycle = Some(cycle);
            }
        };
        note_small(&z, t, &mut rec);
        // sojourn until exit from 𝕂(K+1) or one time unit
        let mut cap = tau + 1.0;
        while cap - tau > 1.0 {
            cap = cap.next_down();
        }
        loop {
            let to_exit = exit_offset(&outer, &z);
            let to_cap = cap - t;
            let ev = sample_event(model, &z, rng, opts.method);
            if ev.time >= to_exit.min(to_cap) {
                if to_cap <= to_exit {
                    z = z.advance(to_cap.max(0.0));
                    t = cap;
                } else {
                    z = z.advance(to_exit);
                    t = (t + to_exit).min(cap);
                }
                break;
            }
            t += ev.time;
            z = z.advance(ev.time).jump(ev.component);
            note_small(&z, t, &mut rec);
        }
        rec.exit.push(t);
        rec.exit_states.push(z);
        last_exit = t;
    }
    Ok(rec)
}

pub const MIN_Q_REPS: u64 = 1_000;
/// Confidence level of the lower bound on `q`.
pub const Q_LEVEL: f64 = 0.99;

/// Per-grid-state estimate of the one-unit hitting probability of `𝕂(K1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QCell {
    pub state: State,
    pub hits: u64,
    pub reps: u64,
    pub lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEstimate {
    /// Minimum over the grid of the 99% lower bounds.
    pub q_low: f64,
    /// Minimum over the grid of the raw frequencies.
    pub q_hat: f64,
    pub cells: Vec<QCell>,
}

/// Grid covering `𝕂(K+1)`: `(x, y)` on a lattice with `divisions` steps
/// per axis inside `1+x+y ≤ radius`, all four regime pairs.
pub fn covering_grid(outer: &SublevelSet, divisions: usize) -> Vec<State> {
    let span = (outer.radius() - 1.0).max(0.0);
    let n = divisions.max(1);
    let h = span / n as f64;
    let mut out = Vec::new();
    for r in 0..4u8 {
        for a in 0..=n {
            for b in 0..=(n - a) {
                let (x, y) = (a as f64 * h, b as f64 * h);
                let z = State::new(r / 2, x, r % 2, y).expect("finite grid");
                // rounding may push the far corners just outside
                let z = if outer.contains(&z) {
                    z
                } else {
                    let scale = (span / (x + y)).min(1.0) * (1.0 - 1e-12);
                    State::new(r / 2, x * scale, r % 2, y * scale).expect("finite grid")
                };
                out.push(z);
            }
        }
    }
    out
}

/// Whether the path from `z` visits `small` within one time unit.
pub fn hits_within_unit<R: Rng + ?Sized>(
    model: &IntensityModel,
    z: &State,
    small: &SublevelSet,
    rng: &mut R,
    method: Method,
) -> bool {
    if small.contains(z) {
        return true;
    }
    let mut t = 0.0;
    let mut cur = *z;
    loop {
        let ev = sample_event(model, &cur, rng, method);
        t += ev.time;
        if t > 1.0 {
            return false;
        }
        cur = cur.advance(ev.time).jump(ev.component);
        if small.contains(&cur) {
            return true;
        }
    }
}

/// Conservative estimate of `q = inf_{Z ∈ 𝕂(K+1)} P_Z(visit 𝕂(K1) within 1)`:
/// the smallest one-sided 99% lower bound over a covering grid.
pub fn estimate_q(
    model: &IntensityModel,
    set: &SublevelSet,
    small: &SublevelSet,
    divisions: usize,
    reps: u64,
    seed: u64,
    method: Method,
) -> Result<QEstimate> {
    if reps < MIN_Q_REPS {
        return Err(invalid(format!("reps must be >= {MIN_Q_REPS}, got {reps}")));
    }
    if !(small.level <= set.level) {
        return Err(invalid("need K1 <= K"));
    }
    let outer = set.with_level(set.level + 1.0)?;
    let grid = covering_grid(&outer, divisions);
    let cells: Vec<QCell> = grid
        .iter()
        .enumerate()
        .map(|(g, z)| {
            let cell_seed = mix64(seed, g as u64);
            let hits: u64 = (0..reps)
                .into_par_iter()
                .map(|k| {
                    let mut rng = RngStream::new(cell_seed, k).rng();
                    u64::from(hits_within_unit(model, z, small, &mut rng, method))
                })
                .sum();
            QCell {
                state: *z,
                hits,
                reps,
                lower: binomial_lower_bound(hits, reps, Q_LEVEL),
            }
        })
        .collect();
    let q_low = cells.iter().map(|c| c.lower).fold(1.0, f64::min);
    let q_hat = cells.iter().map(|c| c.hits as f64 / c.reps as f64).fold(1.0, f64::min);
    Ok(QEstimate { q_low, q_hat, cells })
}

/// Frequency of "𝕂(K1) not reached by `Tˡ`" for each `ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionSurvival {
    pub reps: u64,
    /// `survival[ℓ−1]`: fraction of runs with `τ(K1) > Tˡ`.
    pub survival: Vec<f64>,
    /// Binomial standard errors of `survival`.
    pub std_err: Vec<f64>,
    /// `survival_before_return[ℓ−1]`: fraction of runs with `τ(K1) > τˡ`,
    /// i.e. without the `ℓ`-th sojourn. Diagnostic only.
    pub survival_before_return: Vec<f64>,
    /// Fraction of runs in which every `Tⁿ` state lay in `𝕂(K+1)`.
    pub exit_states_inside: f64,
    /// Largest `Tⁿ − τⁿ` over all runs.
    pub max_sojourn: f64,
    /// `Δⁿ` for `n ≥ 2` whose restart state `Z_{Tⁿ⁻¹}` lay outside `𝕂(K)`,
    /// pooled over runs. Restarts inside `𝕂(K)` give `Δⁿ = 0` and are left out.
    pub restart_deltas: Vec<f64>,
    /// Correlation of `η_ℓ = Σ_{j≤ℓ} Δʲ` with `1(τ^{ℓ−1} < τ(K1))`, `ℓ = 2..`.
    pub eta_indicator_correlation: Vec<f64>,
}

/// Runs [`regeneration_sequence`] `reps` times and tabulates survival of
/// the small set over the first `cycles` cycles.
#[allow(clippy::too_many_arguments)]
pub fn excursion_survival(
    model: &IntensityModel,
    z0: &State,
    set: &SublevelSet,
    small: &SublevelSet,
    cycles: usize,
    reps: u64,
    seed: u64,
    opts: &McOptions,
) -> Result<ExcursionSurvival> {
    let records: Vec<RegenerationRecord> = (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            regeneration_sequence(model, z0, set, small, cycles, &mut rng, opts)
        })
        .collect::<Result<_>>()?;
    let outer = set.with_level(set.level + 1.0)?;
    let n = reps as f64;
    let mut survival = Vec::with_capacity(cycles);
    let mut std_err = Vec::with_capacity(cycles);
    for l in 1..=cycles {
        let alive = records
            .iter()
            .filter(|r| r.small_set_cycle.is_none_or(|c| c > l))
            .count() as f64;
        let p = alive / n;
        survival.push(p);
        std_err.push((p * (1.0 - p) / n).sqrt());
    }
    let survival_before_return = (1..=cycles)
        .map(|l| {
            records
                .iter()
                .filter(|r| r.small_set_time.is_none_or(|ts| ts > r.tau[l - 1]))
                .count() as f64
                / n
        })
        .collect();
    let inside = records
        .iter()
        .filter(|r| r.exit_states.iter().all(|z| outer.contains(z)))
        .count() as f64
        / n;
    let max_sojourn = records
        .iter()
        .flat_map(|r| r.tau.iter().zip(&r.exit).map(|(a, b)| b - a))
        .fold(0.0, f64::max);
    let restart_deltas = records
        .iter()
        .flat_map(|r| {
            r.delta
                .iter()
                .skip(1)
                .zip(&r.exit_states)
                .filter(|(_, z)| !set.contains(z))
                .map(|(d, _)| *d)
        })
        .collect();
    let eta_indicator_correlation = (2..=cycles)
        .map(|l| {
            let pairs: Vec<(f64, f64)> = records
                .iter()
                .map(|r| {
                    let eta: f64 = r.delta[..l].iter().sum();
                    // τ^{ℓ−1} < τ(K1): small set not reached by cycle ℓ−1's entry
                    let ind = match r.small_set_time {
                        Some(ts) => f64::from(u8::from(r.tau[l - 2] < ts)),
                        None => 1.0,
                    };
                    (eta, ind)
                })
                .collect();
            correlation(&pairs)
        })
        .collect();
    Ok(ExcursionSurvival {
        reps,
        survival,
        std_err,
        survival_before_return,
        exit_states_inside: inside,
        max_sojourn,
        restart_deltas,
        eta_indicator_correlation,
    })
}

fn correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Hitting times of `set` from grid states in the shell `𝕂(K+1) \ 𝕂(K)`,
/// `reps_per` replications each. Capped replications are returned as
/// `None`.
pub fn shell_hitting_times(
    model: &IntensityModel,
    set: &SublevelSet,
    divisions: usize,
    reps_per: u64,
    seed: u64,
    opts: &McOptions,
) -> Result<Vec<Option<f64>>> {
    let outer = set.with_level(set.level + 1.0)?;
    let starts: Vec<State> = covering_grid(&outer, divisions)
        .into_iter()
        .filter(|z| !set.contains(z))
        .collect();
    Ok(starts
        .iter()
        .enumerate()
        .flat_map(|(g, z)| {
            let cell_seed = mix64(seed, g as u64);
            (0..reps_per)
                .into_par_iter()
                .map(move |k| {
                    let mut rng = RngStream::new(cell_seed, k).rng();
                    hitting_time(model, z, set, &mut rng, opts.time_cap, opts.method).time()
                })
                .collect::<Vec<_>>()
        })
        .collect())
}

/// Compares `E (Δⁿ)^{k+1}` from restarts in `𝕂(K+1)` with `(K+1) C(k, K+1)`.
pub fn delta_moment_check(
    deltas: &[f64],
    excluded: u64,
    k: f64,
    set: &SublevelSet,
    params: &DriftParams,
    seed: u64,
) -> Result<EstimateReport> {
    let outer = set.with_level(set.level + 1.0)?;
    let c = constant_c(&outer, &DriftParams { k, ..*params })?;
    let sample: Vec<f64> = deltas.iter().map(|d| d.powf(k + 1.0)).collect();
    Ok(EstimateReport::upper_bound_check(
        format!("E Delta^{}", k + 1.0),
        &sample,
        excluded,
        Some((set.level + 1.0) * c),
        seed,
    ))
}

impl From<&TheoremCheck> for Verdict {
    fn from(c: &TheoremCheck) -> Self {
        c.estimate.verdict
    }
}
