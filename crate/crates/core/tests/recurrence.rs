use relyap::estimate::Verdict;
use relyap::lyapunov::{PowerFn, SublevelSet};
use relyap::recurrence::{
    dynkin_residual, estimate_tau_moment, hitting_time, stationary_occupation, HittingSample, McOptions, OccupationSpec,
};
use relyap::sampler::Method;
use relyap::{IntensityModel, RngStream, State};

fn far() -> State {
    State::new(0, 20.0, 0, 20.0).unwrap()
}

#[test]
fn hitting_mean_agrees_across_disjoint_seeds() {
    let model = IntensityModel::equality(6.0).unwrap();
    let set = SublevelSet::new(5.0, 1.0).unwrap();
    let opts = McOptions::default();
    let a = estimate_tau_moment(&model, &far(), &set, 1.0, 10_000, 1, None, &opts).unwrap();
    let b = estimate_tau_moment(&model, &far(), &set, 1.0, 10_000, 2, None, &opts).unwrap();
    assert!(b.point >= a.ci_low && b.point <= a.ci_high, "{a:?} {b:?}");
    assert_eq!(a.verdict, Verdict::Consistent);
}

#[test]
fn hitting_entries_cross_the_boundary_by_a_jump() {
    let model = IntensityModel::equality(6.0).unwrap();
    let set = SublevelSet::new(2.5_f64.powf(1.75), 1.75).unwrap();
    for k in 0..500 {
        let mut rng = RngStream::new(3, k).rng();
        let method = if k % 2 == 0 {
            Method::Inversion
        } else {
            Method::Thinning
        };
        match hitting_time(&model, &far(), &set, &mut rng, 1e6, method) {
            HittingSample::Hit { time, before, after } => {
                assert!(time > 0.0);
                assert!(!set.contains(&before.unwrap()));
                assert!(set.contains(&after));
            }
            HittingSample::CapExceeded => panic!("capped"),
        }
    }
}

#[test]
fn dynkin_residual_for_v2_under_equality_rates() {
    let model = IntensityModel::equality(3.0).unwrap();
    let z = State::new(1, 0.5, 0, 2.0).unwrap();
    let r = dynkin_residual(&model, &PowerFn { m: 2.0 }, &z, 2.0, 20_000, 9, Method::Inversion).unwrap();
    assert_eq!(r.verdict, Verdict::Consistent, "{r:?}");
}

#[test]
fn stationary_marginal_of_faster_clock() {
    let model = IntensityModel::constant(1.0, 2.0).unwrap();
    let spec = OccupationSpec {
        horizon: 1e5 + 1e2,
        burn_in: 1e2,
        bins: 400,
        range: Some(10.0),
    };
    let rep = stationary_occupation(&model, &State::ORIGIN, &spec, 4, Method::Thinning).unwrap();
    let ks = rep.ks_y(|y| 1.0 - (-2.0 * y).exp());
    assert!(ks < 0.01, "{ks}");
    let ks_x = rep.ks_x(|x| 1.0 - (-x).exp());
    assert!(ks_x < 0.01, "{ks_x}");
}

#[test]
fn occupation_histograms_agree_across_seeds() {
    let model = IntensityModel::constant(1.0, 1.0).unwrap();
    let spec = OccupationSpec {
        horizon: 1e5 + 1e2,
        burn_in: 1e2,
        bins: 50,
        range: Some(10.0),
    };
    let a = stationary_occupation(&model, &State::ORIGIN, &spec, 11, Method::Thinning).unwrap();
    let b = stationary_occupation(&model, &State::ORIGIN, &spec, 12, Method::Inversion).unwrap();
    let tv = 0.5
        * (a.x_mass.iter().zip(&b.x_mass).map(|(p, q)| (p - q).abs()).sum::<f64>()
            + (a.x_overflow - b.x_overflow).abs());
    assert!(tv < 0.02, "{tv}");
    let total: f64 = a.x_mass.iter().sum::<f64>() + a.x_overflow;
    assert!((total - 1.0).abs() < 1e-9);
}
