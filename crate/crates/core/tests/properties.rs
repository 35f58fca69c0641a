//! Property tests of the metric, test-function and flow invariants.

use agingpop::age_metric::{age_distance, omega, AgeValue};
use agingpop::config_space::{
    ground_distance, kappa_component, kappa_distance, kappa_tail, Basis, MarkedConfiguration, MarkedParticle,
};
use agingpop::generator::{flow, flowed_g};
use agingpop::habitat::{DepartureModel, Habitat, SpatialProfile, Window, HAZARD_TOL};
use agingpop::mark_space::SigmaLadder;
use agingpop::test_functions::{TestFunction, Theta};
use proptest::prelude::*;

fn age() -> impl Strategy<Value = f64> {
    prop_oneof![0.0f64..1.0, 1.0f64..10.0, (0.0f64..12.0).prop_map(|e| 10f64.powf(e)), Just(0.0), Just(1.0)]
}

fn particle() -> impl Strategy<Value = MarkedParticle> {
    (0.0f64..5.0, age()).prop_map(|(x, alpha)| MarkedParticle { x: vec![x], alpha })
}

fn configuration() -> impl Strategy<Value = MarkedConfiguration> {
    prop::collection::vec(particle(), 0..6).prop_map(|ps| MarkedConfiguration::new(ps).unwrap())
}

fn triple() -> impl Strategy<Value = [usize; 3]> {
    (1usize..40, 1usize..12, 1usize..12).prop_map(|(s, k, n)| [s, k, n])
}

fn basis() -> Basis {
    Basis::new(Window::new(vec![0.0], vec![5.0]).unwrap()).unwrap()
}

fn separable() -> DepartureModel {
    DepartureModel::separable(0.5, 1.5, 2.0, SpatialProfile::Cosine { period: 5.0 }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn age_metric_is_bounded_by_omegas(a in age(), b in age(), c in age()) {
        let (a, b, c) = (AgeValue::new(a).unwrap(), AgeValue::new(b).unwrap(), AgeValue::new(c).unwrap());
        let r = age_distance(a, b);
        prop_assert!(r <= omega(a) + omega(b));
        prop_assert!(r <= 2.0);
        prop_assert_eq!(r, age_distance(b, a));
        prop_assert!(r <= age_distance(a, c) + age_distance(c, b) + 1e-15);
    }

    #[test]
    fn configuration_metrics_are_pseudo_metrics_within_tail(
        a in configuration(), b in configuration(), c in configuration()
    ) {
        let basis = basis();
        let ladder = SigmaLadder::default();
        for budget in [8, 20] {
            let tail = kappa_tail(budget);
            let d = |x: &MarkedConfiguration, y: &MarkedConfiguration| kappa_distance(&basis, &ladder, x, y, budget).value;
            prop_assert_eq!(d(&a, &a), 0.0);
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &b) <= d(&a, &c) + d(&c, &b) + 2.0 * tail);
            let g = |x: &MarkedConfiguration, y: &MarkedConfiguration| ground_distance(&basis, x, y, budget);
            let t = g(&a, &b).tail;
            prop_assert!(g(&a, &b).value <= g(&a, &c).value + g(&c, &b).value + 2.0 * t);
        }
    }

    #[test]
    fn single_particle_components_are_at_most_one(p in particle(), t in triple()) {
        let c = MarkedConfiguration::new(vec![p]).unwrap();
        let v = kappa_component(&basis(), &SigmaLadder::default(), (t[0], t[1], t[2]), &c, &MarkedConfiguration::empty());
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn g_is_sandwiched_between_its_newborn_values(
        triples in prop::collection::vec(triple(), 1..5), x in 0.0f64..5.0, a in age()
    ) {
        let ladder = SigmaLadder::default();
        let theta = Theta::new(&basis(), &ladder, &triples).unwrap();
        let (g0, g) = (theta.g(&[x], 0.0), theta.g(&[x], a));
        prop_assert!(g <= g0 * (1.0 + 1e-12));
        prop_assert!(ladder.c_bar() * g0 <= g * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn single_term_functionals_separate_at_kappa_rate(
        a in configuration(), b in configuration(), t in triple()
    ) {
        let (basis, ladder) = (basis(), SigmaLadder::default());
        let theta = Theta::new(&basis, &ladder, &[t]).unwrap();
        let (fa, fb) = (theta.functional(&a), theta.functional(&b));
        let k = kappa_component(&basis, &ladder, (t[0], t[1], t[2]), &a, &b);
        // e^{−A} − e^{−B} by the mean value theorem
        prop_assert!((fa - fb).abs() >= fa.min(fb) * k * (1.0 - 1e-12) - 1e-15);
    }

    #[test]
    fn flowed_g_is_dominated(
        triples in prop::collection::vec(triple(), 1..5), x in 0.0f64..5.0, a in 0.0f64..20.0, t in 0.0f64..20.0
    ) {
        let theta = Theta::new(&basis(), &SigmaLadder::default(), &triples).unwrap();
        let model = separable();
        let f = flow(&theta, t, &model).unwrap();
        let gt = flowed_g(&f, &[x], a);
        prop_assert!(gt <= theta.j_count() as f64 + 1e-12);
        prop_assert!(gt <= theta.g(&[x], a + t) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn survival_lies_between_rate_bounds(x in 0.0f64..5.0, a in 0.0f64..30.0, t in 0.0f64..10.0) {
        let model = separable();
        let q = model.survival(&[x], a, t);
        prop_assert!((-model.m_star() * t).exp() * (1.0 - 1e-12) <= q);
        prop_assert!(q <= (-model.m_zero() * t).exp() * (1.0 + 1e-12));
    }

    #[test]
    fn flow_composes(
        triples in prop::collection::vec(triple(), 1..4), x in 0.0f64..5.0, a in 0.0f64..10.0,
        s in 0.0f64..5.0, t in 0.0f64..5.0
    ) {
        let theta = Theta::new(&basis(), &SigmaLadder::default(), &triples).unwrap();
        let model = separable();
        let inner = flow(&theta, s, &model).unwrap();
        let twice = flow(&inner, t, &model).unwrap();
        let once = flow(&theta, s + t, &model).unwrap();
        prop_assert!((twice.value(&[x], a) - once.value(&[x], a)).abs() < 1e-12);
    }

    #[test]
    fn hazard_closed_form_matches_quadrature(x in 0.0f64..5.0, a in 0.0f64..25.0) {
        let model = separable();
        let closed = model.cumulative_hazard(&[x], a).unwrap();
        let quad = model.cumulative_hazard_by_quadrature(&[x], a, HAZARD_TOL).unwrap();
        prop_assert!((closed - quad).abs() < 1e-8, "{} vs {}", closed, quad);
    }

    #[test]
    fn configuration_json_round_trips(c in configuration()) {
        let back = MarkedConfiguration::from_json_str(&c.to_json_string()).unwrap();
        prop_assert_eq!(back, c);
    }
}

/// Shifting a particle at the window faces must register in `κ`.
#[test]
fn location_changes_at_the_faces_are_resolved() {
    let (basis, ladder) = (basis(), SigmaLadder::default());
    for (from, to) in [(0.0, 0.01), (5.0, 4.99), (0.02, 0.0), (4.97, 4.99)] {
        for alpha in [0.0, 1.5, 40.0] {
            let a = MarkedConfiguration::new(vec![MarkedParticle { x: vec![from], alpha }]).unwrap();
            let b = MarkedConfiguration::new(vec![MarkedParticle { x: vec![to], alpha }]).unwrap();
            let d = kappa_distance(&basis, &ladder, &a, &b, 30);
            assert!(d.value > d.tail, "{from} -> {to} at age {alpha}: {} <= {}", d.value, d.tail);
        }
    }
}

/// The hazard check also holds in two dimensions and for a linear density window.
#[test]
fn separable_hazard_in_the_plane() {
    let h = Habitat::new(
        Window::new(vec![0.0, 0.0], vec![2.0, 3.0]).unwrap(),
        agingpop::habitat::DensityFamily::Linear { intercept: 1.0, slope: vec![0.5, 0.25] },
    )
    .unwrap();
    let model = DepartureModel::separable(0.2, 1.0, 3.0, SpatialProfile::Cosine { period: 2.0 }).unwrap();
    for (i, x) in h.window().corners().into_iter().chain([h.window().midpoint()]).enumerate() {
        let a = 0.7 * i as f64 + 0.1;
        let closed = model.cumulative_hazard(&x, a).unwrap();
        let quad = model.cumulative_hazard_by_quadrature(&x, a, HAZARD_TOL).unwrap();
        assert!((closed - quad).abs() < 1e-8);
    }
}
