//! Transition probabilities evaluated by quadrature, and Monte-Carlo
//! cross-checks against the sampler.
//!
//! The no-jump probability over `[0, Δ]` from `Z` is exactly
//! `exp(−∫₀^Δ Λ(Z+s) ds)`, continuous intensities or not. For a single
//! designated jump window the probability of "exactly one jump, of the given
//! element, inside `(s1, t1)`, and no other jump on `[0, t]`" is
//!
//! ```text
//! ∫_{s1}^{t1} exp(−∫₀^r Λ(Z+u) du) · λ_c(Z+r) · exp(−∫₀^{t−r} Λ(J_c(Z+r)+u) du) dr
//! ```
//!
//! where `J_c` is the jump map of element `c` and `λ_c` its rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::intensity::IntensityModel;
use crate::numerics::{integrate_piecewise, Integral};
use crate::rng::RngStream;
use crate::sampler::{integrated_hazard, sample_event, Method};
use crate::state::{Component, State};

/// Absolute tolerance of the outer quadrature over the jump instant.
pub const WINDOW_TOL: f64 = 1e-8;
const WINDOW_INNER_TOL: f64 = 1e-12;

fn check_delta(delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(invalid(format!("delta must be finite and >= 0, got {delta}")));
    }
    Ok(())
}

/// Probability of no jump on `[0, delta]` starting from `z`.
pub fn prob_no_jump(model: &IntensityModel, z: &State, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok((-integrated_hazard(model, z, delta)).exp())
}

/// Probability of at least one jump on `[0, delta]`.
pub fn prob_some_jump(model: &IntensityModel, z: &State, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    // -expm1 keeps precision for small hazards
    Ok(-(-integrated_hazard(model, z, delta)).exp_m1())
}

/// One designated jump window on `[0, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub s1: f64,
    pub t1: f64,
    pub t: f64,
    pub component: Component,
}

impl WindowSpec {
    pub fn new(s1: f64, t1: f64, t: f64, component: Component) -> Result<Self> {
        let w = WindowSpec { s1, t1, t, component };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s1 >= 0.0 && self.s1 < self.t1 && self.t1 <= self.t && self.t.is_finite()) {
            return Err(invalid(format!(
                "window needs 0 <= s1 < t1 <= t, got s1={}, t1={}, t={}",
                self.s1, self.t1, self.t
            )));
        }
        Ok(())
    }
}

fn hazard_tight(model: &IntensityModel, z: &State, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let breaks = model.breakpoints(z, t);
    let f = |s: f64| model.total(&z.advance(s));
    integrate_piecewise(&f, 0.0, t, &breaks, WINDOW_INNER_TOL).value
}

/// Quadrature value of the single-window probability, with its error estimate.
pub fn single_jump_window_integral(model: &IntensityModel, z0: &State, w: &WindowSpec) -> Result<Integral> {
    w.validate()?;
    let integrand = |r: f64| {
        let pre = z0.advance(r);
        let rate = match w.component {
            Component::First => model.lambda(&pre),
            Component::Second => model.mu(&pre),
        };
        let post = pre.jump(w.component);
        (-hazard_tight(model, z0, r) - hazard_tight(model, &post, w.t - r)).exp() * rate
    };
    // the jump rate itself is discontinuous only where the unjumped flow crosses a breakpoint
    let breaks = model.breakpoints(z0, w.t1);
    Ok(integrate_piecewise(&integrand, w.s1, w.t1, &breaks, WINDOW_TOL))
}

/// Probability of exactly one jump, of `w.component`, inside `(s1, t1)` and
/// no other jump on `[0, t]`.
pub fn prob_single_jump_window(model: &IntensityModel, z0: &State, w: &WindowSpec) -> Result<f64> {
    let r = single_jump_window_integral(model, z0, w)?;
    if !r.converged || r.error > WINDOW_TOL {
        return Err(Error::QuadratureNonconvergence {
            achieved: r.error,
            requested: WINDOW_TOL,
        });
    }
    Ok(r.value.clamp(0.0, 1.0))
}

/// Monte-Carlo frequency of a binary event with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub n: u64,
    pub hits: u64,
    pub value: f64,
    pub std_err: f64,
}

impl Frequency {
    pub fn from_hits(hits: u64, n: u64) -> Self {
        let p = hits as f64 / n as f64;
        Frequency {
            n,
            hits,
            value: p,
            std_err: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }

    /// Standardized distance to `p` using the binomial sd under `p`.
    pub fn z_score(&self, p: f64) -> f64 {
        let se = (p * (1.0 - p) / self.n as f64).sqrt();
        let d = self.value - p;
        if d == 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY * d.signum()
        } else {
            d / se
        }
    }
}

/// First-event samples from `z`, one independent stream per replication.
pub fn first_events(
    model: &IntensityModel,
    z: &State,
    reps: u64,
    seed: u64,
    method: Method,
) -> Vec<crate::sampler::Event> {
    (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            sample_event(model, z, &mut rng, method)
        })
        .collect()
}

/// Simulated frequency of the single-window event.
pub fn simulate_single_jump_window(
    model: &IntensityModel,
    z0: &State,
    w: &WindowSpec,
    reps: u64,
    seed: u64,
    method: Method,
) -> Result<Frequency> {
    w.validate()?;
    let hits: u64 = (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            let first = sample_event(model, z0, &mut rng, method);
            if first.time > w.t || first.component != w.component || first.time <= w.s1 || first.time >= w.t1 {
                return 0;
            }
            let post = z0.advance(first.time).jump(first.component);
            let second = sample_event(model, &post, &mut rng, method);
            u64::from(first.time + second.time > w.t)
        })
        .sum();
    Ok(Frequency::from_hits(hits, reps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub delta: f64,
    pub analytic: f64,
    pub empirical: f64,
    pub std_err: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub state: State,
    pub reps: u64,
    pub seed: u64,
    pub method: Method,
    pub rows: Vec<IdentityRow>,
    pub max_abs_z: f64,
    pub pass: bool,
}

/// Pass threshold on `|z|` for [`validate_identities`].
pub const IDENTITY_Z_LIMIT: f64 = 4.0;
pub const MIN_IDENTITY_REPS: u64 = 10_000;

/// Compares the empirical no-jump frequency with [`prob_no_jump`] on each delta.
pub fn validate_identities(
    model: &IntensityModel,
    z: &State,
    deltas: &[f64],
    reps: u64,
    seed: u64,
) -> Result<IdentityReport> {
    validate_identities_against(model, z, deltas, reps, seed, Method::Thinning, |d| {
        prob_no_jump(model, z, d)
    })
}

/// As [`validate_identities`] but with a caller-supplied formula and sampler.
pub fn validate_identities_against<F>(
    model: &IntensityModel,
    z: &State,
    deltas: &[f64],
    reps: u64,
    seed: u64,
    method: Method,
    analytic: F,
) -> Result<IdentityReport>
where
    F: Fn(f64) -> Result<f64>,
{
    if reps < MIN_IDENTITY_REPS {
        return Err(invalid(format!("reps must be >= {MIN_IDENTITY_REPS}, got {reps}")));
    }
    for &d in deltas {
        check_delta(d)?;
    }
    let times: Vec<f64> = first_events(model, z, reps, seed, method)
        .into_iter()
        .map(|e| e.time)
        .collect();
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let p = analytic(delta)?;
        let hits = times.iter().filter(|&&t| t > delta).count() as u64;
        let freq = Frequency::from_hits(hits, reps);
        rows.push(IdentityRow {
            delta,
            analytic: p,
            empirical: freq.value,
            std_err: (p * (1.0 - p) / reps as f64).sqrt(),
            z_score: freq.z_score(p),
        });
    }
    let max_abs_z = rows.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
    Ok(IdentityReport {
        state: *z,
        reps,
        seed,
        method,
        rows,
        max_abs_z,
        pass: max_abs_z <= IDENTITY_Z_LIMIT,
    })
}
