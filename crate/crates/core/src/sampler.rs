//! Exact event-driven simulation.
//!
//! From a state `Z` the next jump happens at the first `T` with
//! `∫₀^T Λ(Z+s) ds = E`, `E ~ Exp(1)`, and the jumping element is the first
//! one with probability `λ/Λ` evaluated just before the jump. Two exact
//! samplers are provided: hazard inversion (quadrature plus root finding)
//! and thinning of a homogeneous rate-`2Γ` stream, which needs only
//! pointwise evaluation and so stays exact across discontinuities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::intensity::IntensityModel;
use crate::numerics::{adaptive_simpson, integrate_piecewise, solve_increasing};
use crate::rng::{standard_exponential, uniform, RngStream};
use crate::state::{Component, State};

/// Absolute tolerance of the integrated-hazard quadrature.
pub const HAZARD_TOL: f64 = 1e-10;
/// Time tolerance of hazard inversion.
pub const TIME_TOL: f64 = 1e-10;
/// Event budget of one path.
pub const MAX_EVENTS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Inversion,
    #[default]
    Thinning,
}

/// Time until the next jump and which element jumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub component: Component,
}

/// `∫₀^t Λ(Z+s) ds`, split at the model's breakpoints.
///
/// # Panics
/// If `t` is negative or NaN.
pub fn integrated_hazard(model: &IntensityModel, z: &State, t: f64) -> f64 {
    assert!(t >= 0.0, "integration horizon must be >= 0, got {t}");
    if t == 0.0 {
        return 0.0;
    }
    let breaks = model.breakpoints(z, t);
    let f = |s: f64| model.total(&z.advance(s));
    integrate_piecewise(&f, 0.0, t, &breaks, HAZARD_TOL).value
}

/// The `T` at which the integrated hazard from `z` reaches `e`.
///
/// Returns `f64::INFINITY` only for uncertified models whose hazard
/// integral stays bounded.
pub fn invert_hazard(model: &IntensityModel, z: &State, e: f64) -> f64 {
    if !(e > 0.0) {
        return 0.0;
    }
    let rate = |s: f64| model.total(&z.advance(s));
    let mut cur = 0.0;
    let mut acc = 0.0;
    let r0 = rate(0.0);
    let mut step = if r0 > 0.0 { e / r0 } else { 1.0 };
    for _ in 0..4096 {
        let end = cur + step;
        let seg_end = model.breakpoints(z, end).into_iter().find(|&b| b > cur).unwrap_or(end);
        let inc = adaptive_simpson(&rate, cur, seg_end, HAZARD_TOL).value;
        if acc + inc >= e {
            let base = acc - e;
            let g = |t: f64| base + adaptive_simpson(&rate, cur, t, HAZARD_TOL).value;
            return solve_increasing(g, cur, seg_end, base, acc + inc - e, TIME_TOL);
        }
        acc += inc;
        cur = seg_end;
        let r = rate(cur);
        let guess = if r > 0.0 { (e - acc) / r } else { step };
        step = (2.0 * step).max(guess).max(f64::EPSILON * (1.0 + cur));
    }
    f64::INFINITY
}

#[inline]
fn choose_component<R: Rng + ?Sized>(model: &IntensityModel, at: &State, rng: &mut R) -> Component {
    let r = model.evaluate(at);
    if uniform(rng) * r.total < r.lambda {
        Component::First
    } else {
        Component::Second
    }
}

/// Next event by inverting the integrated hazard at a standard exponential.
pub fn sample_event_inversion<R: Rng + ?Sized>(model: &IntensityModel, z: &State, rng: &mut R) -> Event {
    let e = standard_exponential(rng);
    let time = invert_hazard(model, z, e);
    let component = choose_component(model, &z.advance(time), rng);
    Event { time, component }
}

/// Probability that a rate-`2Γ` candidate at state `z` is accepted.
pub fn thinning_acceptance(model: &IntensityModel, z: &State) -> f64 {
    model.total(z) / (2.0 * model.upper())
}

/// Next event by thinning a homogeneous stream of rate `2Γ`.
pub fn sample_event_thinning<R: Rng + ?Sized>(model: &IntensityModel, z: &State, rng: &mut R) -> Event {
    let bound = 2.0 * model.upper();
    let mut t = 0.0;
    loop {
        t += standard_exponential(rng) / bound;
        let at = z.advance(t);
        let r = model.evaluate(&at);
        if uniform(rng) * bound < r.total {
            let component = if uniform(rng) * r.total < r.lambda {
                Component::First
            } else {
                Component::Second
            };
            return Event { time: t, component };
        }
    }
}

#[inline]
pub fn sample_event<R: Rng + ?Sized>(model: &IntensityModel, z: &State, rng: &mut R, method: Method) -> Event {
    match method {
        Method::Inversion => sample_event_inversion(model, z, rng),
        Method::Thinning => sample_event_thinning(model, z, rng),
    }
}

/// One recorded jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub component: Component,
    pub before: State,
    pub after: State,
}

/// A simulated trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub initial: State,
    pub jumps: Vec<Jump>,
    pub horizon: f64,
    pub rng_seed: u64,
    pub stream_index: u64,
    pub method: Method,
}

impl Path {
    /// Right-continuous state at time `t ∈ [0, horizon]`.
    pub fn state_at(&self, t: f64) -> State {
        let k = self.jumps.partition_point(|j| j.time <= t);
        let (t0, z0) = if k == 0 {
            (0.0, self.initial)
        } else {
            let j = &self.jumps[k - 1];
            (j.time, j.after)
        };
        z0.advance((t - t0).max(0.0))
    }

    pub fn final_state(&self) -> State {
        self.state_at(self.horizon)
    }

    /// Deterministic pieces `(start, end, state at start)` covering `[0, horizon]`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, State)> + '_ {
        let starts = std::iter::once((0.0, self.initial)).chain(self.jumps.iter().map(|j| (j.time, j.after)));
        let ends = self.jumps.iter().map(|j| j.time).chain(std::iter::once(self.horizon));
        starts.zip(ends).map(|((a, z), b)| (a, b, z))
    }

    pub const CSV_HEADER: &'static str =
        "event_index,time,component,i_before,x_before,j_before,y_before,i_after,x_after,j_after,y_after";

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.jumps.len() + 1));
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for (k, j) in self.jumps.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                k,
                j.time,
                j.component.index(),
                j.before.csv_fields(),
                j.after.csv_fields()
            ));
        }
        out
    }
}

/// Simulates from `z0` until the next event would fall beyond `horizon`.
pub fn simulate_path(
    model: &IntensityModel,
    z0: State,
    horizon: f64,
    stream: RngStream,
    method: Method,
) -> Result<Path> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid(format!("horizon must be finite and > 0, got {horizon}")));
    }
    let mut rng = stream.rng();
    let mut jumps = Vec::new();
    let mut t = 0.0;
    let mut z = z0;
    loop {
        let ev = sample_event(model, &z, &mut rng, method);
        let next = t + ev.time;
        if !(next <= horizon) {
            break;
        }
        if jumps.len() as u64 >= MAX_EVENTS {
            return Err(Error::RunawayEvents {
                limit: MAX_EVENTS,
                time: t,
            });
        }
        let before = z.advance(ev.time);
        let after = before.jump(ev.component);
        jumps.push(Jump {
            time: next,
            component: ev.component,
            before,
            after,
        });
        t = next;
        z = after;
    }
    Ok(Path {
        initial: z0,
        jumps,
        horizon,
        rng_seed: stream.seed,
        stream_index: stream.stream_index,
        method,
    })
}
