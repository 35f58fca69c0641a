use agingpop::config_space::{Basis, MarkedConfiguration, MarkedParticle};
use agingpop::habitat::{DepartureModel, Dynamics, Habitat, SpatialProfile, Tolerances};
use agingpop::mark_space::SigmaLadder;
use agingpop::test_functions::{TestFunction, Theta};
use agingpop::verify::suites::{Suite, SuiteSetup};
use agingpop::verify::{count_law_oracle, ergodicity_check, fokker_planck_residual, martingale_residual, InitialLaw};

fn constant() -> Dynamics {
    Dynamics::new(Habitat::interval(5.0, 1.0).unwrap(), DepartureModel::constant(1.0).unwrap())
        .with_tolerances(Tolerances::tight())
}

fn theta(d: &Dynamics, triples: &[[usize; 3]]) -> Theta {
    Theta::new(&Basis::new(d.habitat.window().clone()).unwrap(), &SigmaLadder::default(), triples).unwrap()
}

/// `μ_t(F^θ)` from `δ_∅` with `m ≡ 1`: `exp(∫₀^t ∫_Λ θ(x, α) e^{−α} dx dα)`, by a
/// tensor midpoint rule.
fn empty_start_oracle(th: &Theta, t: f64) -> f64 {
    let (nx, na) = (2000, 4000);
    let (hx, ha) = (5.0 / nx as f64, t / na as f64);
    let mut sum = 0.0;
    for i in 0..nx {
        let x = [(i as f64 + 0.5) * hx];
        for j in 0..na {
            let a = (j as f64 + 0.5) * ha;
            sum += th.value(&x, a) * (-a).exp();
        }
    }
    (sum * hx * ha).exp()
}

#[test]
fn ergodicity_gap_matches_closed_form() {
    let d = constant();
    let th = theta(&d, &[[1, 1, 1], [3, 1, 2]]);
    let times: Vec<f64> = (0..=20).map(|i| 0.5 * i as f64).collect();
    let out = ergodicity_check(&th, &InitialLaw::empty(), &times, &d).unwrap();
    let limit = empty_start_oracle(&th, 40.0);
    assert!((out.stationary_value - limit).abs() < 1e-5);
    let last = out.gaps.last().copied().unwrap();
    assert!(last < 1e-3, "gap at t = 10: {last}");
    let t2 = (empty_start_oracle(&th, 2.0) - limit).abs();
    assert!((out.gaps[4] - t2).abs() < 1e-5, "{} vs {t2}", out.gaps[4]);
    let slope = out.log_slope.unwrap();
    assert!((slope + 1.0).abs() < 0.1, "{slope}");

    let stationary = InitialLaw::stationary(&d).unwrap();
    let out = ergodicity_check(&th, &stationary, &times, &d).unwrap();
    assert!(out.gaps.iter().all(|g| *g < 1e-8));
}

#[test]
fn count_law_transient_mean() {
    let d = constant();
    let n = 20_000;
    let out = count_law_oracle(&d, 10.0, n, 17).unwrap();
    let exact = 5.0 * (1.0 - (-10.0f64).exp());
    assert!((out.expected_mean - exact).abs() < 1e-12);
    assert!((out.mean.mean - exact).abs() < 3.0 * (5.0 / n as f64).sqrt());
    assert!(out.chi_square.unwrap().p_value > 1e-3);
}

#[test]
fn martingale_special_cases() {
    let d = constant();
    let zero = Theta::zero(&Basis::new(d.habitat.window().clone()).unwrap(), &SigmaLadder::default());
    let th = theta(&d, &[[2, 1, 1]]);
    let law = InitialLaw::empty();
    let out = martingale_residual(&zero, &th, &law, 0.0, 1.0, 500, 1, &d).unwrap();
    assert_eq!(out.estimate.mean, 0.0);
    assert_eq!(out.bias, 0.0);
    // empty witness: the plain increment
    let out = martingale_residual(&th, &zero, &law, 0.5, 1.5, 20_000, 2, &d).unwrap();
    assert!(out.estimate.mean.abs() < 4.0 * out.estimate.se, "{:?}", out.estimate);
    assert!(out.bias.abs() < 0.25 * out.estimate.se);
}

#[test]
fn fokker_planck_residual_vanishes_for_a_fixture_start() {
    let d = Dynamics::new(
        Habitat::interval(5.0, 1.0).unwrap(),
        DepartureModel::separable(0.5, 1.5, 2.0, SpatialProfile::Cosine { period: 5.0 }).unwrap(),
    )
    .with_tolerances(Tolerances::tight());
    let th = theta(&d, &[[1, 2, 1], [2, 3, 2]]);
    let start = MarkedConfiguration::new(vec![
        MarkedParticle { x: vec![0.5], alpha: 0.0 },
        MarkedParticle { x: vec![2.0], alpha: 3.0 },
    ])
    .unwrap();
    let law = InitialLaw::Convolution { parts: vec![InitialLaw::dirac(start), InitialLaw::stationary(&d).unwrap()] };
    let r32 = fokker_planck_residual(&th, &law, 0.25, 32, &d).unwrap();
    let r64 = fokker_planck_residual(&th, &law, 0.25, 64, &d).unwrap();
    assert!(r64.abs() < 1e-8 && r64.abs() <= r32.abs(), "{r32} {r64}");
}

#[test]
fn reports_are_reproducible() {
    let setup = SuiteSetup::standard(5).with_scale(0.05);
    let a = setup.criterion(9).unwrap();
    let b = setup.criterion(9).unwrap();
    let key = |r: &agingpop::verify::VerificationReport| (r.test.clone(), r.value.to_bits(), r.pass);
    assert_eq!(a.iter().map(key).collect::<Vec<_>>(), b.iter().map(key).collect::<Vec<_>>());
    assert!("metrics".parse::<Suite>().unwrap().criteria() == vec![1, 2]);
    assert!("bogus".parse::<Suite>().is_err());
}
