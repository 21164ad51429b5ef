//! Batch experiments: TOML configuration, dispatch to the library and
//! deterministic report files.
//!
//! A configuration has three parts: top-level keys (`experiment`, `seed`,
//! `output_dir`), the `[intensity]` block and an optional `[params]` block.
//!
//! ```toml
//! experiment = "theorem-check"
//! seed = 7
//! output_dir = "out"
//!
//! [intensity]
//! gamma = 6.0
//! Gamma = 6.0
//! lambda = { kind = "reciprocal", params = { a = 0.0, b = 6.0 } }
//! mu = { kind = "reciprocal", params = { a = 0.0, b = 6.0 } }
//!
//! [params]
//! part = 1
//! m0 = 1.0
//! z0 = { i = 0, x = 20.0, j = 0, y = 20.0 }
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimate::{ks_two_sample, EstimateReport, Verdict};
use crate::intensity::{default_grid, Family, IntensityModel};
use crate::lyapunov::{constant_c, drift_check, k_of_delta, outside_grid, DriftParams, PowerFn, SublevelSet};
use crate::recurrence::{
    check_hypotheses, check_theorem_bound, delta_moment_check, dynkin_residual, estimate_q, estimate_tau_moment,
    excursion_survival, shell_hitting_times, stationary_occupation, McOptions, OccupationSpec, TheoremParams,
    TheoremPart, DEFAULT_TIME_CAP, MIN_MOMENT_REPS, MIN_Q_REPS,
};
use crate::rng::{mix64, RngStream, GENERATOR_VERSION};
use crate::sampler::{simulate_path, Method};
use crate::state::{Component, State};
use crate::transition::{first_events, prob_no_jump, validate_identities_against, Frequency, MIN_IDENTITY_REPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    ValidateSampler,
    DriftCheck,
    HittingMoments,
    TheoremCheck,
    DynkinCheck,
    Stationary,
    Regeneration,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::ValidateSampler => "validate-sampler",
            ExperimentKind::DriftCheck => "drift-check",
            ExperimentKind::HittingMoments => "hitting-moments",
            ExperimentKind::TheoremCheck => "theorem-check",
            ExperimentKind::DynkinCheck => "dynkin-check",
            ExperimentKind::Stationary => "stationary",
            ExperimentKind::Regeneration => "regeneration",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_true() -> bool {
    true
}

/// The `[intensity]` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityConfig {
    pub gamma: f64,
    #[serde(rename = "Gamma")]
    pub upper: f64,
    /// `false` skips the rate-bound certificate (fault injection).
    #[serde(default = "default_true")]
    pub certify: bool,
    pub lambda: Family,
    pub mu: Family,
}

impl IntensityConfig {
    pub fn build(&self) -> Result<IntensityModel> {
        if self.certify {
            IntensityModel::new(self.lambda.clone(), self.mu.clone(), self.gamma, self.upper)
        } else {
            IntensityModel::uncertified(self.lambda.clone(), self.mu.clone(), self.gamma, self.upper)
        }
    }
}

/// The `[params]` block. Every field has a default; experiments read only
/// the fields they need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Starting state.
    pub z0: State,
    /// Sublevel threshold; defaults to `K(δ) = δ^{−set_power}`.
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    /// Smaller threshold (theorem part 3, regeneration).
    #[serde(rename = "K1")]
    pub level1: f64,
    /// Power of `1+x+y` defining the sublevel sets.
    pub set_power: f64,
    pub m: f64,
    pub m0: f64,
    pub k: f64,
    pub k1: f64,
    pub delta: f64,
    pub epsilon: f64,
    /// Moment power for `hitting-moments`.
    pub power: f64,
    /// Optional upper bound for `hitting-moments`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    /// Theorem part (1, 2 or 3).
    pub part: u8,
    pub horizon: f64,
    pub burn_in: f64,
    pub reps: u64,
    pub bins: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<f64>,
    pub method: Method,
    /// Power of the Dynkin test function `h = V_h`.
    pub h: f64,
    pub time_cap: f64,
    pub q_reps: u64,
    pub q_grid: usize,
    pub cycles: usize,
    /// Interval lengths checked by `validate-sampler`.
    pub deltas: Vec<f64>,
    /// Drift grid: number of `x+y` levels, splits per level, largest `x+y`.
    pub grid_levels: usize,
    pub grid_splits: usize,
    pub grid_max: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            z0: State::ORIGIN,
            level: None,
            level1: 2.0,
            set_power: 1.0,
            m: 1.0,
            m0: 1.0,
            k: 0.5,
            k1: 0.5,
            delta: 0.2,
            epsilon: 1.0,
            power: 1.0,
            bound: None,
            part: 1,
            horizon: 10.0,
            burn_in: 0.0,
            reps: 10_000,
            bins: 100,
            range: None,
            method: Method::Thinning,
            h: 1.0,
            time_cap: DEFAULT_TIME_CAP,
            q_reps: 10_000,
            q_grid: 5,
            cycles: 5,
            deltas: vec![0.25, 0.5, 1.0, 2.0],
            grid_levels: 100,
            grid_splits: 100,
            grid_max: 1e4,
        }
    }
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub intensity: IntensityConfig,
    #[serde(default)]
    pub params: Params,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// Seeds are stored as TOML integers, which are signed 64-bit.
pub const MAX_SEED: u64 = i64::MAX as u64;

pub fn parse_config(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(r) = overrides.reps {
        cfg.params.reps = r;
    }
    if let Some(d) = &overrides.output_dir {
        cfg.output_dir = d.clone();
    }
    resolve(&mut cfg)?;
    Ok(cfg)
}

/// Reads, resolves and validates a configuration file.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn require(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_err(msg))
    }
}

/// Fills defaults that depend on other fields, then checks every
/// cross-parameter constraint the chosen experiment relies on.
fn resolve(cfg: &mut ExperimentConfig) -> Result<()> {
    require(cfg.seed <= MAX_SEED, "seed must be < 2^63")?;
    let model = cfg.intensity.build()?;
    let p = &mut cfg.params;
    require(p.set_power > 0.0 && p.set_power.is_finite(), "set_power must be > 0")?;
    require(p.delta > 0.0 && p.delta < 1.0, "delta must lie in (0, 1)")?;
    if p.level.is_none() {
        p.level = Some(k_of_delta(p.delta, p.set_power)?);
    }
    let level = p.level.unwrap_or_default();
    require(level > 0.0 && level.is_finite(), "K must be finite and > 0")?;
    require(p.time_cap > 0.0, "time_cap must be > 0")?;
    let p = &cfg.params;
    let gamma = model.gamma();
    match cfg.experiment {
        ExperimentKind::Simulate => {
            require(
                p.horizon > 0.0 && p.horizon.is_finite(),
                "horizon must be finite and > 0",
            )?;
        }
        ExperimentKind::ValidateSampler => {
            require(
                p.reps >= MIN_IDENTITY_REPS,
                "reps must be >= 10000 for validate-sampler",
            )?;
            require(!p.deltas.is_empty(), "deltas must not be empty")?;
            require(
                p.deltas.iter().all(|d| *d >= 0.0 && d.is_finite()),
                "deltas must be finite and >= 0",
            )?;
        }
        ExperimentKind::DriftCheck => {
            require(
                p.grid_levels >= 2 && p.grid_splits >= 2,
                "grid_levels and grid_splits must be >= 2",
            )?;
            let inner = k_of_delta(p.delta, p.m)?.powf(1.0 / p.m) - 1.0;
            require(p.grid_max > inner, "grid_max must exceed the sublevel boundary")?;
        }
        ExperimentKind::HittingMoments => {
            require(p.reps >= MIN_MOMENT_REPS, "reps must be >= 100")?;
            require(p.power > 0.0, "power must be > 0")?;
        }
        ExperimentKind::TheoremCheck => {
            require(p.reps >= MIN_MOMENT_REPS, "reps must be >= 100")?;
            let part = TheoremPart::from_index(p.part)?;
            let tp = theorem_params(p);
            check_hypotheses(part, gamma, &tp)?;
            let set = SublevelSet::new(level, p.set_power)?;
            match part {
                TheoremPart::One => {}
                TheoremPart::Two => {
                    constant_c(&set, &drift_params(gamma, p, p.k))?;
                }
                TheoremPart::Three => {
                    constant_c(&set, &drift_params(gamma, p, p.k1))?;
                }
            }
        }
        ExperimentKind::DynkinCheck => {
            require(
                p.horizon > 0.0 && p.horizon.is_finite(),
                "horizon must be finite and > 0",
            )?;
            require(p.reps >= 2, "reps must be >= 2")?;
            require(p.h >= 0.0, "h must be >= 0")?;
        }
        ExperimentKind::Stationary => {
            require(p.horizon > p.burn_in && p.burn_in >= 0.0, "need 0 <= burn_in < horizon")?;
            require(p.bins >= 1, "bins must be >= 1")?;
        }
        ExperimentKind::Regeneration => {
            require(p.reps >= 2, "reps must be >= 2")?;
            require(p.cycles >= 1, "cycles must be >= 1")?;
            require(p.q_reps >= MIN_Q_REPS, "q_reps must be >= 1000")?;
            if !(p.level1 > 0.0 && p.level1 < level) {
                return Err(Error::Hypothesis("0 < K1 < K fails".into()));
            }
            let outer = SublevelSet::new(level + 1.0, p.set_power)?;
            constant_c(&outer, &drift_params(gamma, p, p.k))?;
        }
    }
    Ok(())
}

fn theorem_params(p: &Params) -> TheoremParams {
    TheoremParams {
        m0: p.m0,
        m: p.m,
        k: p.k,
        k1: p.k1,
        delta: p.delta,
        epsilon: p.epsilon,
        level: p.level.unwrap_or_default(),
        level1: p.level1,
        set_power: p.set_power,
        q_reps: p.q_reps,
        q_grid: p.q_grid,
    }
}

fn drift_params(gamma: f64, p: &Params, k: f64) -> DriftParams {
    DriftParams {
        gamma,
        delta: p.delta,
        epsilon: p.epsilon,
        m: p.m,
        m0: p.m0,
        k,
    }
}

/// Result of one experiment, ready to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub verdict: Verdict,
    /// Experiment-specific JSON body.
    pub result: serde_json::Value,
    /// CSV tables as `(suffix, contents)`; an empty suffix is the main table.
    pub tables: Vec<(String, String)>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        exit_code(self.verdict)
    }
}

pub fn exit_code(verdict: Verdict) -> i32 {
    match verdict {
        Verdict::Consistent => 0,
        Verdict::Violated => 2,
        Verdict::Inconclusive => 3,
    }
}

/// Exit status for usage and configuration errors.
pub const USAGE_EXIT: i32 = 1;

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn estimate_table(reports: &[&EstimateReport]) -> String {
    let mut out = String::from(EstimateReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn pass_verdict(pass: bool) -> Verdict {
    if pass {
        Verdict::Consistent
    } else {
        Verdict::Violated
    }
}

/// Runs the configured experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = cfg.intensity.build()?;
    let p = &cfg.params;
    let seed = cfg.seed;
    let level = p.level.unwrap_or_default();
    let opts = McOptions {
        method: p.method,
        time_cap: p.time_cap,
    };
    match cfg.experiment {
        ExperimentKind::Simulate => {
            let path = simulate_path(&model, p.z0, p.horizon, RngStream::new(seed, 0), p.method)?;
            Ok(Outcome {
                verdict: Verdict::Consistent,
                result: json!({
                    "jumps": path.jumps.len(),
                    "final_state": path.final_state(),
                    "path": to_json(&path),
                }),
                tables: vec![(String::new(), path.to_csv())],
            })
        }
        ExperimentKind::ValidateSampler => {
            let identity = validate_identities_against(&model, &p.z0, &p.deltas, p.reps, seed, p.method, |d| {
                prob_no_jump(&model, &p.z0, d)
            })?;
            // inversion and thinning on disjoint streams
            let inv = first_events(&model, &p.z0, p.reps, mix64(seed, 1), Method::Inversion);
            let thin = first_events(&model, &p.z0, p.reps, mix64(seed, 2), Method::Thinning);
            let times = |ev: &[crate::sampler::Event]| ev.iter().map(|e| e.time).collect::<Vec<_>>();
            let ks = ks_two_sample(&times(&inv), &times(&thin));
            let first =
                |ev: &[crate::sampler::Event]| ev.iter().filter(|e| e.component == Component::First).count() as u64;
            let (f_inv, f_thin) = (
                Frequency::from_hits(first(&inv), p.reps),
                Frequency::from_hits(first(&thin), p.reps),
            );
            let pooled = 0.5 * (f_inv.value + f_thin.value);
            let sigma = (pooled * (1.0 - pooled) * 2.0 / p.reps as f64).sqrt();
            let component_z = if sigma > 0.0 {
                (f_inv.value - f_thin.value) / sigma
            } else {
                0.0
            };
            let pass = identity.pass && ks.p_value > KS_ALPHA && component_z.abs() <= COMPONENT_Z_LIMIT;
            let mut table = String::from("delta,analytic,empirical,std_err,z_score\n");
            for r in &identity.rows {
                table.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.delta, r.analytic, r.empirical, r.std_err, r.z_score
                ));
            }
            Ok(Outcome {
                verdict: pass_verdict(pass),
                result: json!({
                    "identity": to_json(&identity),
                    "ks": to_json(&ks),
                    "first_component_inversion": f_inv.value,
                    "first_component_thinning": f_thin.value,
                    "component_z": component_z,
                }),
                tables: vec![(String::new(), table)],
            })
        }
        ExperimentKind::DriftCheck => {
            let params = drift_params(model.gamma(), p, p.k);
            let grid = outside_grid(p.m, k_of_delta(p.delta, p.m)?, p.grid_levels, p.grid_splits, p.grid_max);
            let report = drift_check(&model, &params, &grid)?;
            let bound_violations = model.verify_bounds(&default_grid());
            Ok(Outcome {
                verdict: pass_verdict(report.passed()),
                result: json!({
                    "params": to_json(&params),
                    "threshold": report.threshold,
                    "grid_points": grid.len(),
                    "violations": report.violations,
                    "min_margin": report.min_margin,
                    "rate_bound_violations": bound_violations.len(),
                }),
                tables: vec![
                    (String::new(), report.to_csv()),
                    ("violations".into(), report.violations_csv()),
                ],
            })
        }
        ExperimentKind::HittingMoments => {
            let set = SublevelSet::new(level, p.set_power)?;
            let report = estimate_tau_moment(&model, &p.z0, &set, p.power, p.reps, seed, p.bound, &opts)?;
            Ok(Outcome {
                verdict: report.verdict,
                tables: vec![(String::new(), estimate_table(&[&report]))],
                result: to_json(&report),
            })
        }
        ExperimentKind::TheoremCheck => {
            let part = TheoremPart::from_index(p.part)?;
            let check = check_theorem_bound(part, &model, &theorem_params(p), &p.z0, p.reps, seed, &opts)?;
            Ok(Outcome {
                verdict: check.estimate.verdict,
                tables: vec![(String::new(), estimate_table(&[&check.estimate]))],
                result: to_json(&check),
            })
        }
        ExperimentKind::DynkinCheck => {
            let report = dynkin_residual(&model, &PowerFn { m: p.h }, &p.z0, p.horizon, p.reps, seed, p.method)?;
            Ok(Outcome {
                verdict: report.verdict,
                tables: vec![(String::new(), estimate_table(&[&report]))],
                result: to_json(&report),
            })
        }
        ExperimentKind::Stationary => {
            let spec = OccupationSpec {
                horizon: p.horizon,
                burn_in: p.burn_in,
                bins: p.bins,
                range: p.range,
            };
            let report = stationary_occupation(&model, &p.z0, &spec, seed, p.method)?;
            Ok(Outcome {
                verdict: Verdict::Consistent,
                result: json!({
                    "occupation": to_json(&report),
                    "fraction_i0": report.fraction_i0(),
                    "fraction_j0": report.fraction_j0(),
                }),
                tables: vec![(String::new(), report.to_csv())],
            })
        }
        ExperimentKind::Regeneration => {
            let set = SublevelSet::new(level, p.set_power)?;
            let small = set.with_level(p.level1)?;
            let q = estimate_q(&model, &set, &small, p.q_grid, p.q_reps, mix64(seed, 1), p.method)?;
            let surv = excursion_survival(&model, &p.z0, &set, &small, p.cycles, p.reps, seed, &opts)?;
            let mut table = String::from("cycle,survival,std_err,limit,pass\n");
            let mut survival_pass = true;
            for (l, (s, se)) in surv.survival.iter().zip(&surv.std_err).enumerate() {
                let limit = (1.0 - q.q_low).powi(l as i32 + 1) + 4.0 * se;
                let ok = *s <= limit;
                survival_pass &= ok;
                table.push_str(&format!("{},{s},{se},{limit},{ok}\n", l + 1));
            }
            let structure = surv.exit_states_inside == 1.0 && surv.max_sojourn <= 1.0;
            // restarts observed in the cycles plus restarts from a grid over the shell
            let shell = shell_hitting_times(&model, &set, 4 * p.q_grid, SHELL_REPS, mix64(seed, 2), &opts)?;
            let excluded = shell.iter().filter(|t| t.is_none()).count() as u64;
            let mut deltas = surv.restart_deltas.clone();
            deltas.extend(shell.into_iter().flatten());
            let delta_check =
                delta_moment_check(&deltas, excluded, p.k, &set, &drift_params(model.gamma(), p, p.k), seed)?;
            // the Δ report keeps its own verdict; only a violation changes the exit status
            let verdict = match delta_check.verdict {
                Verdict::Violated => Verdict::Violated,
                _ => pass_verdict(survival_pass && structure),
            };
            Ok(Outcome {
                verdict,
                result: json!({
                    "q_low": q.q_low,
                    "q_hat": q.q_hat,
                    "survival": surv.survival,
                    "survival_std_err": surv.std_err,
                    "survival_before_return": surv.survival_before_return,
                    "exit_states_inside": surv.exit_states_inside,
                    "max_sojourn": surv.max_sojourn,
                    "delta_moment": to_json(&delta_check),
                    "eta_indicator_correlation": surv.eta_indicator_correlation,
                }),
                tables: vec![
                    (String::new(), table),
                    ("delta".into(), estimate_table(&[&delta_check])),
                ],
            })
        }
    }
}

/// Replications per shell grid state in the `regeneration` experiment.
pub const SHELL_REPS: u64 = 200;

/// Significance level of the inversion-vs-thinning KS test.
pub const KS_ALPHA: f64 = 0.001;
/// Limit on `|z|` for the jump-component frequency comparison.
pub const COMPONENT_Z_LIMIT: f64 = 3.0;

/// Top-level JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub generator: String,
    pub verdict: Verdict,
    pub exit_code: i32,
    pub config: ExperimentConfig,
    pub result: serde_json::Value,
}

pub fn resolved_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("resolved config serializes")
}

/// Writes `{experiment}-{seed}.json`, one CSV per table and
/// `{experiment}-{seed}.config.toml` into `dir`, creating it if needed.
pub fn write_report(cfg: &ExperimentConfig, outcome: &Outcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let stem = format!("{}-{}", cfg.experiment, cfg.seed);
    let config_text = resolved_toml(cfg);
    let report = Report {
        experiment: cfg.experiment,
        seed: cfg.seed,
        generator: GENERATOR_VERSION.to_string(),
        verdict: outcome.verdict,
        exit_code: outcome.exit_code(),
        config: cfg.clone(),
        result: outcome.result.clone(),
    };
    let mut files = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        files.push(path);
        Ok(())
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    put(format!("{stem}.json"), json)?;
    let header: String = std::iter::once(format!("# experiment = {}, seed = {}\n", cfg.experiment, cfg.seed))
        .chain(config_text.lines().map(|l| format!("# {l}\n")))
        .collect();
    for (suffix, body) in &outcome.tables {
        let name = if suffix.is_empty() {
            format!("{stem}.csv")
        } else {
            format!("{stem}-{suffix}.csv")
        };
        put(name, format!("{header}{body}"))?;
    }
    put(format!("{stem}.config.toml"), config_text)?;
    Ok(files)
}

/// Reads a JSON report written by [`write_report`].
pub fn read_report(path: &Path) -> Result<Report> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
}
