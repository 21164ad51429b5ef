use proptest::prelude::*;

use relyap::intensity::PiecewiseTable;
use relyap::lyapunov::{generator_apply, generator_on_v, v, PowerFn, TestFunction};
use relyap::sampler::{simulate_path, Method};
use relyap::transition::{prob_no_jump, prob_single_jump_window, prob_some_jump, WindowSpec};
use relyap::{Component, Family, IntensityModel, RngStream, State};

fn state() -> impl Strategy<Value = State> {
    (0u8..2, 0.0..50.0f64, 0u8..2, 0.0..50.0f64).prop_map(|(i, x, j, y)| State::new(i, x, j, y).unwrap())
}

/// Certified models from every analytic family, with `γ ∈ [0.5, 4]`.
fn model() -> impl Strategy<Value = IntensityModel> {
    (0.5..4.0f64, 0.0..3.0f64, 0usize..4, 0usize..4, 0.1..5.0f64).prop_map(|(gamma, extra, a, b, x0)| {
        let upper = gamma + extra;
        let pick = |k: usize| match k {
            0 => Family::Constant { c: gamma },
            1 => Family::Reciprocal { a: extra, b: gamma },
            2 => Family::Aging { g0: gamma },
            _ => Family::CrossStep {
                g0: gamma,
                beta: extra,
                x0,
            },
        };
        IntensityModel::new(pick(a), pick(b), gamma, upper).unwrap()
    })
}

fn table_model() -> impl Strategy<Value = IntensityModel> {
    (
        prop::collection::vec(0.1..3.0f64, 1..4),
        prop::collection::vec(0.1..3.0f64, 1..4),
        0u64..1000,
    )
        .prop_map(|(dx, dy, salt)| {
            let edges = |d: &[f64]| {
                d.iter()
                    .scan(0.0, |acc, s| {
                        *acc += s;
                        Some(*acc)
                    })
                    .collect::<Vec<_>>()
            };
            let (xe, ye) = (edges(&dx), edges(&dy));
            let values: Vec<Vec<f64>> = (0..=xe.len())
                .map(|a| {
                    (0..=ye.len())
                        .map(|b| 1.0 + ((salt + 7 * a as u64 + 3 * b as u64) % 5) as f64)
                        .collect()
                })
                .collect();
            let t = Family::PiecewiseTable(PiecewiseTable {
                x_edges: xe,
                y_edges: ye,
                values,
                values_00: None,
                values_01: None,
                values_10: None,
                values_11: None,
            });
            IntensityModel::new(t.clone(), t, 1.0, 5.0).unwrap()
        })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn flow_is_a_semigroup(z in state(), s in 0.0..20.0f64, t in 0.0..20.0f64) {
        let a = z.flow(s).unwrap().flow(t).unwrap();
        let b = z.flow(s + t).unwrap();
        prop_assert_eq!((a.i(), a.j()), (b.i(), b.j()));
        prop_assert!(close(a.x(), b.x(), 1e-14) && close(a.y(), b.y(), 1e-14));
        prop_assert_eq!(z.flow(0.0).unwrap(), z);
    }

    #[test]
    fn jumps_never_increase_v(z in state(), m in 0.0..4.0f64) {
        prop_assert!(v(m, &z.jump_cn()) <= v(m, &z));
        prop_assert!(v(m, &z.jump_nc()) <= v(m, &z));
        prop_assert_eq!(z.jump_cn().jump_cn().i(), z.i());
    }

    #[test]
    fn clock_times_v_is_dominated(z in state(), m in 1.0..4.0f64) {
        prop_assert!(z.x() * v(m - 1.0, &z) <= v(m, &z) * (1.0 + 1e-15));
        prop_assert!(z.y() * v(m - 1.0, &z) <= v(m, &z) * (1.0 + 1e-15));
    }

    #[test]
    fn certified_rates_respect_bounds(model in model(), z in state()) {
        let (g, up) = (model.gamma(), model.upper());
        let r = model.evaluate(&z);
        let slack = 1e-12 * up;
        prop_assert!(r.lambda >= g / (1.0 + z.x()) - slack && r.lambda <= up + slack);
        prop_assert!(r.mu >= g / (1.0 + z.y()) - slack && r.mu <= up + slack);
        prop_assert!(r.total >= g / (1.0 + z.x()) + g / (1.0 + z.y()) - 2.0 * slack);
        prop_assert!(model.verify_bounds(&[z]).is_empty());
    }

    #[test]
    fn rates_are_constant_between_breakpoints(model in table_model(), z in state(), horizon in 0.1..10.0f64, u in 0.0..1.0f64, w in 0.0..1.0f64) {
        let mut cuts = vec![0.0];
        cuts.extend(model.breakpoints(&z, horizon));
        cuts.push(horizon);
        for pair in cuts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let len = b - a;
            if len < 1e-9 {
                continue;
            }
            // interior points of the same piece
            let s1 = a + len * (1e-6 + u * (1.0 - 2e-6));
            let s2 = a + len * (1e-6 + w * (1.0 - 2e-6));
            let (r1, r2) = (model.evaluate(&z.flow(s1).unwrap()), model.evaluate(&z.flow(s2).unwrap()));
            prop_assert_eq!(r1.lambda, r2.lambda);
            prop_assert_eq!(r1.mu, r2.mu);
        }
    }

    #[test]
    fn generator_on_v_matches_general_form(model in model(), z in state(), m in 0.0..3.0f64) {
        let a = generator_on_v(&model, m, &z);
        let b = generator_apply(&model, &PowerFn { m }, &z);
        prop_assert!(close(a, b, 1e-12), "{} vs {}", a, b);
    }

    #[test]
    fn transport_term_is_the_flow_derivative(z in state(), m in 0.5..3.0f64) {
        let h = PowerFn { m };
        let eps = 1e-6;
        let fd = (h.value(&z.flow(eps).unwrap()) - h.value(&z)) / eps;
        let exact = h.dx(&z) + h.dy(&z);
        prop_assert!(close(fd, exact, 1e-4), "{} vs {}", fd, exact);
    }

    #[test]
    fn no_jump_probability_is_multiplicative(model in model(), z in state(), s in 0.0..3.0f64, t in 0.0..3.0f64) {
        let whole = prob_no_jump(&model, &z, s + t).unwrap();
        let split = prob_no_jump(&model, &z, s).unwrap() * prob_no_jump(&model, &z.flow(s).unwrap(), t).unwrap();
        prop_assert!((whole - split).abs() <= 1e-8, "{} vs {}", whole, split);
        let some = prob_some_jump(&model, &z, s + t).unwrap();
        prop_assert!((some + whole - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn single_jump_window_below_some_jump(model in model(), z in state(), s1 in 0.0..1.0f64, w in 0.0..1.0f64, extra in 0.0..1.0f64, first in any::<bool>()) {
        let t1 = s1 + w;
        let t = t1 + extra;
        let c = if first { Component::First } else { Component::Second };
        let spec = WindowSpec::new(s1, t1, t, c).unwrap();
        let p = prob_single_jump_window(&model, &z, &spec).unwrap();
        prop_assert!(p >= -1e-12);
        prop_assert!(p <= prob_some_jump(&model, &z, t).unwrap() + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulated_paths_are_well_formed(model in model(), z in state(), horizon in 0.1..20.0f64, seed in any::<u64>(), inversion in any::<bool>()) {
        let method = if inversion { Method::Inversion } else { Method::Thinning };
        let path = simulate_path(&model, z, horizon, RngStream::new(seed, 0), method).unwrap();
        let mut prev_t = 0.0;
        let mut prev = z;
        for j in &path.jumps {
            prop_assert!(j.time > prev_t && j.time <= horizon);
            let flowed = prev.flow(j.time - prev_t).unwrap();
            prop_assert_eq!((flowed.i(), flowed.j()), (j.before.i(), j.before.j()));
            prop_assert!(close(flowed.x(), j.before.x(), 1e-9) && close(flowed.y(), j.before.y(), 1e-9));
            prop_assert_eq!(j.after, j.before.jump(j.component));
            prev_t = j.time;
            prev = j.after;
        }
        let again = simulate_path(&model, z, horizon, RngStream::new(seed, 0), method).unwrap();
        prop_assert_eq!(again, path);
    }
}
