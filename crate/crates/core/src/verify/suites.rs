//! The shipped verification suites, one function per acceptance criterion.
//!
//! Both the command line tool and the `acceptance` test target run these.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::age_metric::age_distance_raw;
use crate::config_space::{kappa_tail, Basis, KappaSums, MarkedParticle, KAPPA_BUDGET};
use crate::generator::{
    compute_bounds, explicit_solution, explicit_solution_with, flow_pde_residual, generator_of_solution,
    kolmogorov_residual, resolvent_identity_residual,
};
use crate::habitat::{Habitat, SpatialProfile, Tolerances};
use crate::mark_space::{rho_tail, MarkSet, RhoSums, SigmaLadder, RHO_BUDGET};
use crate::rng::path_rng;
use crate::sampler::{event_driven_simulate, sample_trajectory_marginals};

/// Groups of criteria selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Metrics,
    Generator,
    Sampler,
    Laws,
    Ergodicity,
    All,
}

impl Suite {
    pub fn criteria(self) -> Vec<usize> {
        match self {
            Suite::Metrics => vec![1, 2],
            Suite::Generator => vec![3, 4, 5, 6],
            Suite::Sampler => vec![7, 8, 9, 10],
            Suite::Laws => vec![11, 12],
            Suite::Ergodicity => vec![13],
            Suite::All => (1..=13).collect(),
        }
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "metrics" => Suite::Metrics,
            "generator" => Suite::Generator,
            "sampler" => Suite::Sampler,
            "laws" => Suite::Laws,
            "ergodicity" => Suite::Ergodicity,
            "all" => Suite::All,
            other => {
                return Err(Error::Config(format!(
                    "unknown suite {other:?}; expected metrics, generator, sampler, laws, ergodicity or all"
                )))
            }
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::Metrics => "metrics",
            Suite::Generator => "generator",
            Suite::Sampler => "sampler",
            Suite::Laws => "laws",
            Suite::Ergodicity => "ergodicity",
            Suite::All => "all",
        };
        f.write_str(s)
    }
}

pub const CRITERIA: [&str; 13] = [
    "metric axioms",
    "separation",
    "flow and PDE",
    "Kolmogorov equation",
    "resolvent identity",
    "uniform generator bounds",
    "transition-law oracle",
    "Chapman-Kolmogorov",
    "cross-sampler",
    "immigration-death oracle",
    "Fokker-Planck and Laplace",
    "martingale residual",
    "ergodicity",
];

/// Models, seed and Monte Carlo budget shared by all suites.
#[derive(Debug, Clone)]
pub struct SuiteSetup {
    /// A model with constant departure rate, used where closed forms need one.
    pub primary: Dynamics,
    /// An age- and location-dependent model for the model-generic checks.
    pub secondary: Option<Dynamics>,
    pub ladder: SigmaLadder,
    pub seed: u64,
    /// Multiplies every Monte Carlo and fuzzing budget.
    pub scale: f64,
}

impl SuiteSetup {
    /// `Λ = [0, 5]` with unit density, `m ≡ 1`, and a separable secondary model.
    pub fn standard(seed: u64) -> Self {
        let habitat = Habitat::interval(5.0, 1.0).expect("valid habitat");
        let primary = Dynamics::new(habitat.clone(), DepartureModel::constant(1.0).expect("valid rate"))
            .with_tolerances(Tolerances::tight());
        let separable = DepartureModel::separable(0.5, 1.5, 2.0, SpatialProfile::Cosine { period: 5.0 })
            .expect("valid model");
        let secondary = Dynamics::new(habitat, separable).with_tolerances(Tolerances::tight());
        SuiteSetup { primary, secondary: Some(secondary), ladder: SigmaLadder::default(), seed, scale: 1.0 }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    fn budget(&self, n: usize) -> usize {
        ((n as f64 * self.scale).ceil() as usize).max(50)
    }

    fn models(&self) -> Vec<(&'static str, &Dynamics)> {
        let mut out = vec![("primary", &self.primary)];
        if let Some(s) = &self.secondary {
            out.push(("secondary", s));
        }
        out
    }

    fn basis(&self) -> Basis {
        Basis::new(self.primary.habitat.window().clone()).expect("validated window")
    }

    fn theta(&self, triples: &[[usize; 3]]) -> Theta {
        Theta::new(&self.basis(), &self.ladder, triples).expect("valid triples")
    }

    /// One age-independent `θ` and two with age dependence.
    pub fn theta_menu(&self) -> Vec<Theta> {
        vec![
            self.theta(&[[1, 1, 1], [3, 1, 2]]),
            self.theta(&[[1, 2, 1], [2, 3, 2]]),
            self.theta(&[[1, 1, 1], [4, 2, 1], [5, 3, 3], [2, 4, 1]]),
        ]
    }

    /// A fixed starting configuration inside the window.
    pub fn fixture(&self) -> MarkedConfiguration {
        let w = self.primary.habitat.window();
        let at = |f: f64| w.lower.iter().zip(&w.upper).map(|(l, u)| l + f * (u - l)).collect::<Vec<_>>();
        MarkedConfiguration::new(vec![
            MarkedParticle { x: at(0.1), alpha: 0.0 },
            MarkedParticle { x: at(0.35), alpha: 0.4 },
            MarkedParticle { x: at(0.5), alpha: 1.3 },
            MarkedParticle { x: at(0.8), alpha: 3.0 },
        ])
        .expect("valid fixture")
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        path_rng(self.seed, stream)
    }

    fn stream_seed(&self, stream: u64) -> u64 {
        self.seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    /// Runs one criterion.
    pub fn criterion(&self, n: usize) -> Result<Vec<VerificationReport>> {
        match n {
            1 => self.metric_axioms(),
            2 => self.separation(),
            3 => self.flow_and_pde(),
            4 => self.kolmogorov(),
            5 => self.resolvent(),
            6 => self.generator_bounds(),
            7 => self.transition_oracle(),
            8 => self.chapman_kolmogorov(),
            9 => self.cross_sampler(),
            10 => self.immigration_death(),
            11 => self.fokker_planck_laplace(),
            12 => self.martingale(),
            13 => self.ergodicity(),
            _ => Err(Error::Config(format!("no criterion {n}"))),
        }
    }

    pub fn run(&self, suite: Suite) -> Result<Vec<VerificationReport>> {
        let mut out = Vec::new();
        for n in suite.criteria() {
            out.extend(self.criterion(n)?);
        }
        Ok(out)
    }
}

/// A random `θ` with up to `max_terms` triples.
pub fn random_theta<R: Rng + ?Sized>(rng: &mut R, basis: &Basis, ladder: &SigmaLadder, max_terms: usize) -> Theta {
    let count = rng.random_range(1..=max_terms);
    let triples: Vec<[usize; 3]> = (0..count)
        .map(|_| [rng.random_range(1..=14), rng.random_range(1..=5), rng.random_range(1..=4)])
        .collect();
    Theta::new(basis, ladder, &triples).expect("valid triples")
}

/// Random configuration with up to `max_len` particles in `window`, ages
/// drawn from a mixture that reaches the extremes of the age metric.
pub fn random_configuration<R: Rng + ?Sized>(rng: &mut R, habitat: &Habitat, max_len: usize) -> MarkedConfiguration {
    let len = rng.random_range(0..=max_len);
    let w = habitat.window();
    let particles = (0..len)
        .map(|_| {
            let x = w.lower.iter().zip(&w.upper).map(|(l, u)| rng.random_range(*l..*u)).collect();
            MarkedParticle { x, alpha: adversarial_age(rng) }
        })
        .collect();
    MarkedConfiguration::new(particles).expect("valid particles")
}

fn adversarial_age<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    match rng.random_range(0..8) {
        0 => 0.0,
        1 => 1.0,
        2 => 10f64.powf(rng.random_range(-9.0..-2.0)),
        3 => rng.random_range(0.0..1.0),
        4 => rng.random_range(1.0..10.0),
        5 => 10f64.powf(rng.random_range(1.0..6.0)),
        6 => {
            // near the maximiser of |u_1′| and of u_1
            let base: f64 = *[0.5f64, 0.8, 1.26].choose(rng).expect("non-empty");
            base + rng.random_range(-1e-3..1e-3)
        }
        _ => rng.random_range(0.0..4.0),
    }
}

fn fuzz_ages<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let a = adversarial_age(rng);
    let related = |rng: &mut R, a: f64| match rng.random_range(0..5) {
        0 => a,
        1 => a * (1.0 + rng.random_range(-1e-9..1e-9)),
        2 if a > 0.0 => 1.0 / a,
        3 => (a + rng.random_range(-0.5..0.5)).abs(),
        _ => adversarial_age(rng),
    };
    let b = related(rng, a);
    let c = related(rng, b);
    [a, b, c]
}

/// Which term attains the minimum in `r`, and whether each age lies above 1.
fn age_branch(a: f64, b: f64) -> u8 {
    let diff = (a - b).abs();
    let sum = crate::age_metric::omega_raw(a) + crate::age_metric::omega_raw(b);
    (diff <= sum) as u8 | ((a > 1.0) as u8) << 1 | ((b > 1.0) as u8) << 2
}

fn random_marks<R: Rng + ?Sized>(rng: &mut R) -> MarkSet {
    let len = rng.random_range(0..=6);
    let mut ages: Vec<f64> = (0..len).map(|_| adversarial_age(rng).min(50.0)).collect();
    if len > 0 && rng.random_bool(0.3) {
        // repeated ages exercise multiplicities
        ages.push(ages[0]);
    }
    MarkSet::new(ages).expect("valid ages")
}

fn perturb_marks<R: Rng + ?Sized>(rng: &mut R, a: &MarkSet) -> MarkSet {
    let mut ages = a.ages().to_vec();
    match rng.random_range(0..5) {
        0 => ages.push(rng.random_range(0.0..8.0)),
        1 if !ages.is_empty() => {
            ages.remove(rng.random_range(0..ages.len()));
        }
        2 if !ages.is_empty() => ages.push(ages[rng.random_range(0..ages.len())]),
        3 if !ages.is_empty() => {
            let i = rng.random_range(0..ages.len());
            ages[i] = (ages[i] + rng.random_range(0.01..1.0)).min(60.0);
        }
        _ => return fresh_distinct(rng, a),
    }
    MarkSet::new(ages).expect("valid ages")
}

fn fresh_distinct<R: Rng + ?Sized>(rng: &mut R, a: &MarkSet) -> MarkSet {
    loop {
        let b = MarkSet::new((0..rng.random_range(0..=6)).map(|_| rng.random_range(0.0..8.0)).collect())
            .expect("valid ages");
        if !b.equals(a, 0.0) {
            return b;
        }
    }
}

/// A configuration distinct from `c`: one particle added, removed,
/// duplicated or moved, one age below 10 changed, or an independent draw.
///
/// Very old ages are not shifted: `r` already puts `α` and `α + δ` within
/// `2/α` of each other, below the truncation tail for large `α`.
pub fn perturb_configuration<R: Rng + ?Sized>(rng: &mut R, c: &MarkedConfiguration, habitat: &Habitat) -> MarkedConfiguration {
    let w = habitat.window();
    let mut ps = c.particles().to_vec();
    let moderate: Vec<usize> = (0..ps.len()).filter(|&i| ps[i].alpha <= 10.0).collect();
    match rng.random_range(0..6) {
        0 => {
            let x = w.lower.iter().zip(&w.upper).map(|(l, u)| rng.random_range(*l..*u)).collect();
            ps.push(MarkedParticle { x, alpha: rng.random_range(0.0..8.0) });
        }
        1 if !ps.is_empty() => {
            ps.remove(rng.random_range(0..ps.len()));
        }
        2 if !ps.is_empty() => ps.push(ps[rng.random_range(0..ps.len())].clone()),
        3 if !moderate.is_empty() => {
            let i = moderate[rng.random_range(0..moderate.len())];
            ps[i].alpha += rng.random_range(0.05..2.0);
        }
        4 if !ps.is_empty() => {
            let i = rng.random_range(0..ps.len());
            for (axis, xi) in ps[i].x.iter_mut().enumerate() {
                let (l, u) = (w.lower[axis], w.upper[axis]);
                let shifted = *xi + rng.random_range(0.01..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                // reflect at the window faces
                *xi = if shifted > u { 2.0 * u - shifted } else if shifted < l { 2.0 * l - shifted } else { shifted };
            }
        }
        _ => return random_configuration(rng, habitat, 12),
    }
    MarkedConfiguration::new(ps).expect("valid particles")
}

/// Distinct as multisets of particles.
fn same_configuration(a: &MarkedConfiguration, b: &MarkedConfiguration) -> bool {
    let key = |c: &MarkedConfiguration| {
        let mut v: Vec<(Vec<u64>, u64)> =
            c.particles().iter().map(|p| (p.x.iter().map(|x| x.to_bits()).collect(), p.alpha.to_bits())).collect();
        v.sort();
        v
    };
    key(a) == key(b)
}

fn bonferroni(family: usize) -> String {
    format!("|z| < {SE_THRESHOLD} per test, family of {family}")
}

/// `(value − exact)/se`, reported against the 4 SE threshold.
fn z_report(test: &str, estimate: MeanSe, exact: f64, seed: u64) -> VerificationReport {
    let z = (estimate.mean - exact) / estimate.se;
    VerificationReport::within(test, "z", z, SE_THRESHOLD)
        .with_seed(seed, estimate.n)
        .with_note(format!("mean {:.6}, exact {:.6}, se {:.2e}", estimate.mean, exact, estimate.se))
}

fn two_sample_z(test: &str, a: MeanSe, b: MeanSe, seed: u64) -> VerificationReport {
    let se = (a.se * a.se + b.se * b.se).sqrt();
    let z = (a.mean - b.mean) / se;
    VerificationReport::within(test, "z", z, SE_THRESHOLD)
        .with_seed(seed, a.n + b.n)
        .with_note(format!("means {:.6} vs {:.6}, combined se {:.2e}", a.mean, b.mean, se))
}

impl SuiteSetup {
    fn metric_axioms(&self) -> Result<Vec<VerificationReport>> {
        let mut out = Vec::new();

        let n_age = self.budget(1_000_000);
        let mut rng = self.rng(101);
        let mut violations = 0usize;
        let mut worst = f64::NEG_INFINITY;
        let mut branches = std::collections::BTreeSet::new();
        for _ in 0..n_age {
            let [a, b, c] = fuzz_ages(&mut rng);
            for (x, y, z) in [(a, b, c), (b, c, a), (c, a, b)] {
                let excess = age_distance_raw(x, z) - age_distance_raw(x, y) - age_distance_raw(y, z);
                worst = worst.max(excess);
                if excess > 1e-12 {
                    violations += 1;
                }
                branches.insert((age_branch(x, z), age_branch(x, y), age_branch(y, z)));
            }
        }
        out.push(
            VerificationReport::within("age_triangle", "violations", violations as f64, 0.0)
                .with_seed(self.seed, n_age)
                .with_note(format!("max excess {worst:.2e}, slack 1e-12, {} branch patterns", branches.len())),
        );

        let n_triples = self.budget(100_000);
        let pool_size = 3000;
        let mut rng = self.rng(102);
        let pool: Vec<RhoSums> =
            (0..pool_size).map(|_| RhoSums::new(&self.ladder, &random_marks(&mut rng), RHO_BUDGET)).collect();
        let slack = 2.0 * rho_tail(RHO_BUDGET);
        let (mut violations, mut worst) = (0usize, f64::NEG_INFINITY);
        for _ in 0..n_triples {
            let [a, b, c] = [0; 3].map(|_| &pool[rng.random_range(0..pool_size)]);
            let excess = a.distance(c) - a.distance(b) - b.distance(c);
            worst = worst.max(excess);
            violations += (excess > slack) as usize;
        }
        out.push(
            VerificationReport::within("rho_triangle", "violations", violations as f64, 0.0)
                .with_seed(self.seed, n_triples)
                .with_note(format!("max excess {worst:.2e}, slack {slack:.2e}")),
        );

        let basis = self.basis();
        let mut rng = self.rng(103);
        let habitat = &self.primary.habitat;
        let pool: Vec<KappaSums> = (0..pool_size)
            .map(|_| KappaSums::new(&basis, &self.ladder, &random_configuration(&mut rng, habitat, 12), KAPPA_BUDGET))
            .collect();
        let slack = 2.0 * kappa_tail(KAPPA_BUDGET);
        let (mut violations, mut worst) = (0usize, f64::NEG_INFINITY);
        for _ in 0..n_triples {
            let [a, b, c] = [0; 3].map(|_| &pool[rng.random_range(0..pool_size)]);
            let excess = a.distance(c) - a.distance(b) - b.distance(c);
            worst = worst.max(excess);
            violations += (excess > slack) as usize;
        }
        out.push(
            VerificationReport::within("kappa_triangle", "violations", violations as f64, 0.0)
                .with_seed(self.seed, n_triples)
                .with_note(format!("max excess {worst:.2e}, slack {slack:.2e}")),
        );
        Ok(out)
    }

    fn separation(&self) -> Result<Vec<VerificationReport>> {
        let n = self.budget(10_000);
        let mut out = Vec::new();

        let mut rng = self.rng(201);
        let tail = rho_tail(RHO_BUDGET);
        let (mut failures, mut smallest) = (0usize, f64::INFINITY);
        for _ in 0..n {
            let a = random_marks(&mut rng);
            let b = perturb_marks(&mut rng, &a);
            if a.equals(&b, 0.0) {
                continue;
            }
            let d = RhoSums::new(&self.ladder, &a, RHO_BUDGET).distance(&RhoSums::new(&self.ladder, &b, RHO_BUDGET));
            smallest = smallest.min(d);
            failures += (d <= tail) as usize;
        }
        out.push(
            VerificationReport::within("rho_separation", "pairs_below_tail", failures as f64, 0.0)
                .with_seed(self.seed, n)
                .with_note(format!("smallest distance {smallest:.3e}, tail {tail:.2e}")),
        );

        let mut rng = self.rng(202);
        let basis = self.basis();
        let habitat = &self.primary.habitat;
        let tail = kappa_tail(KAPPA_BUDGET);
        let (mut failures, mut smallest) = (0usize, f64::INFINITY);
        for _ in 0..n {
            let a = random_configuration(&mut rng, habitat, 12);
            let b = perturb_configuration(&mut rng, &a, habitat);
            if same_configuration(&a, &b) {
                continue;
            }
            let d = KappaSums::new(&basis, &self.ladder, &a, KAPPA_BUDGET)
                .distance(&KappaSums::new(&basis, &self.ladder, &b, KAPPA_BUDGET));
            smallest = smallest.min(d);
            failures += (d <= tail) as usize;
        }
        out.push(
            VerificationReport::within("kappa_separation", "pairs_below_tail", failures as f64, 0.0)
                .with_seed(self.seed, n)
                .with_note(format!("smallest distance {smallest:.3e}, tail {tail:.2e}")),
        );
        Ok(out)
    }

    fn flow_and_pde(&self) -> Result<Vec<VerificationReport>> {
        let mut out = Vec::new();
        let thetas = self.theta_menu();
        let n = self.budget(10_000);
        for (name, dynamics) in self.models() {
            let mut rng = self.rng(301);
            let model = &dynamics.model;
            let mut worst = 0f64;
            for i in 0..n {
                let theta = &thetas[i % thetas.len()];
                let (t, s) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
                let x = dynamics.habitat.chi_sample(&mut rng)?;
                let age = rng.random_range(0.0..10.0);
                let inner = flow(theta, t, model)?;
                let twice = flow(&inner, s, model)?;
                let once = flow(theta, t + s, model)?;
                worst = worst.max((twice.value(&x, age) - once.value(&x, age)).abs());
            }
            out.push(
                VerificationReport::within(&format!("flow_semigroup_{name}"), "max_abs_diff", worst, 1e-12)
                    .with_seed(self.seed, n),
            );

            // Richardson ratios of the central-difference residual.
            let hs = [1e-2, 5e-3, 2.5e-3];
            let mut rng = self.rng(302);
            let (mut lo, mut hi, mut used) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
            let mut attempts = 0;
            while used < 50 && attempts < 5000 {
                attempts += 1;
                let theta = &thetas[1 + attempts % 2];
                let t = rng.random_range(0.2..3.0);
                let x = dynamics.habitat.chi_sample(&mut rng)?;
                let age = rng.random_range(0.0..4.0);
                let r: Vec<f64> = hs
                    .iter()
                    .map(|&h| flow_pde_residual(theta, model, t, &x, age, h))
                    .collect::<Result<_>>()?;
                if r[2].abs() < 1e-9 {
                    continue;
                }
                used += 1;
                for w in r.windows(2) {
                    let ratio = w[0] / w[1];
                    lo = lo.min(ratio);
                    hi = hi.max(ratio);
                }
            }
            let mut report = VerificationReport::in_range(&format!("flow_pde_richardson_{name}"), "min_ratio", lo, 3.5, 4.5)
                .with_seed(self.seed, used)
                .with_note(format!("ratios in [{lo:.4}, {hi:.4}] at h = 1e-2, 5e-3, 2.5e-3"));
            report.pass &= (3.5..=4.5).contains(&hi) && used > 0;
            out.push(report);
        }
        Ok(out)
    }

    fn kolmogorov(&self) -> Result<Vec<VerificationReport>> {
        let mut out = Vec::new();
        let basis = self.basis();
        let models = self.models();
        let mut rng = self.rng(401);
        let cases = 100;
        let (mut worst, mut lo, mut hi, mut ratios) = (0f64, f64::INFINITY, f64::NEG_INFINITY, 0usize);
        for i in 0..cases {
            let dynamics = models[i % models.len()].1;
            let theta = random_theta(&mut rng, &basis, &self.ladder, 4);
            let c = random_configuration(&mut rng, &dynamics.habitat, 30);
            let t = rng.random_range(0.1..4.0);
            worst = worst.max(kolmogorov_residual(&theta, t, &c, 1e-3, dynamics)?.residual);
            if i % 5 == 0 {
                let coarse = kolmogorov_residual(&theta, t, &c, 2e-2, dynamics)?.residual;
                let fine = kolmogorov_residual(&theta, t, &c, 1e-2, dynamics)?.residual;
                if fine > 1e-8 {
                    ratios += 1;
                    lo = lo.min(coarse / fine);
                    hi = hi.max(coarse / fine);
                }
            }
        }
        out.push(
            VerificationReport::within("kolmogorov_residual", "max_residual", worst, 1e-5)
                .with_seed(self.seed, cases)
                .with_note("h = 1e-3, |γ̂| ≤ 30"),
        );
        let mut r = VerificationReport::in_range("kolmogorov_richardson", "min_ratio", lo, 3.5, 4.5)
            .with_seed(self.seed, ratios)
            .with_note(format!("ratios in [{lo:.4}, {hi:.4}] at h = 2e-2, 1e-2"));
        r.pass &= (3.5..=4.5).contains(&hi) && ratios > 0;
        out.push(r);
        Ok(out)
    }

    fn resolvent(&self) -> Result<Vec<VerificationReport>> {
        let mut out = Vec::new();
        let basis = self.basis();
        let models = self.models();
        let mut rng = self.rng(501);
        let cases = 20;
        let (mut worst, mut worst_margin) = (0f64, f64::NEG_INFINITY);
        for i in 0..cases {
            let dynamics = models[i % models.len()].1;
            let theta = random_theta(&mut rng, &basis, &self.ladder, 3);
            let c = random_configuration(&mut rng, &dynamics.habitat, 10);
            for lambda in [0.5, 1.0, 2.0] {
                worst = worst.max(resolvent_identity_residual(&theta, lambda, &c, dynamics)?.residual);
            }
            let ell = compute_bounds(&theta, dynamics)?.ell_theta;
            let f = theta.functional(&c);
            for lambda in [10.0, 100.0] {
                let value = resolvent(&theta, lambda, &c, dynamics)?.value;
                worst_margin = worst_margin.max((lambda * value - f).abs() - ell / lambda);
            }
        }
        out.push(
            VerificationReport::within("resolvent_identity", "max_residual", worst, 1e-6)
                .with_seed(self.seed, cases)
                .with_note("λ ∈ {0.5, 1, 2}"),
        );
        let mut r = VerificationReport::within("resolvent_scaling", "max(|λF_λ − F| − ℓ/λ)", worst_margin, 0.0)
            .with_seed(self.seed, cases)
            .with_note("λ ∈ {10, 100}");
        r.pass = worst_margin <= 0.0;
        out.push(r);
        Ok(out)
    }

    fn generator_bounds(&self) -> Result<Vec<VerificationReport>> {
        let basis = self.basis();
        let models = self.models();
        let mut rng = self.rng(601);
        let thetas: Vec<Theta> = (0..20).map(|_| random_theta(&mut rng, &basis, &self.ladder, 5)).collect();
        let n = self.budget(10_000);
        let times = [0.0, 0.1, 0.3, 0.6, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        let mut out = Vec::new();
        for (name, dynamics) in &models {
            let exponents: Vec<ArrivalExponent> = thetas.iter().map(|t| ArrivalExponent::new(t, dynamics)).collect();
            let bounds: Vec<_> = thetas.iter().map(|t| compute_bounds(t, dynamics)).collect::<Result<_>>()?;
            let arrivals: Vec<f64> =
                thetas.iter().map(|t| Ok(arrival_integral(t, dynamics)?.value)).collect::<Result<_>>()?;
            let (mut v0, mut vt, mut r0, mut rt) = (0usize, 0usize, 0f64, 0f64);
            for i in 0..n {
                let j = i % thetas.len();
                let c = random_configuration(&mut rng, &dynamics.habitat, 60);
                let lf = generator_terms(&thetas[j], &c, &dynamics.model, arrivals[j]).total();
                r0 = r0.max(lf.abs() / bounds[j].generator_bound);
                v0 += (lf.abs() > bounds[j].generator_bound) as usize;
                for &t in &times {
                    let lft = generator_of_solution(&thetas[j], &exponents[j], t, &c)?;
                    rt = rt.max(lft.abs() / bounds[j].ell_theta);
                    vt += (lft.abs() > bounds[j].ell_theta) as usize;
                }
            }
            out.push(
                VerificationReport::within(&format!("generator_bound_{name}"), "violations", v0 as f64, 0.0)
                    .with_seed(self.seed, n)
                    .with_note(format!("max |LF|/bound = {r0:.4}")),
            );
            out.push(
                VerificationReport::within(&format!("semigroup_generator_bound_{name}"), "violations", vt as f64, 0.0)
                    .with_seed(self.seed, n * times.len())
                    .with_note(format!("max |LF_t|/ℓ_θ = {rt:.4}")),
            );
        }
        Ok(out)
    }

    fn transition_oracle(&self) -> Result<Vec<VerificationReport>> {
        let d = &self.primary;
        let n = self.budget(100_000);
        let times = [0.5, 2.0, 10.0];
        let mut out = Vec::new();
        for (i, theta) in self.theta_menu().iter().enumerate() {
            let seed = self.stream_seed(700 + i as u64);
            let marginals =
                sample_trajectory_marginals(|_| MarkedConfiguration::empty(), &times, n, seed, theta, d)?;
            let exponent = ArrivalExponent::new(theta, d);
            for m in &marginals {
                let exact = exponent.at(m.time)?.exp();
                let est = MeanSe { mean: m.f_theta.value, se: m.f_theta.stderr, n };
                out.push(
                    z_report(&format!("transition_law_theta{}_t{}", i + 1, m.time), est, exact, seed)
                        .with_note(bonferroni(9)),
                );
            }
        }
        Ok(out)
    }

    fn chapman_kolmogorov(&self) -> Result<Vec<VerificationReport>> {
        let mut out = Vec::new();
        let c = self.fixture();
        let mut worst = 0f64;
        let mut cases = 0;
        for (_, dynamics) in self.models() {
            for theta in self.theta_menu() {
                let exponent = ArrivalExponent::new(&theta, dynamics);
                for (t, s) in [(0.5, 1.0), (1.0, 2.0), (2.0, 3.0)] {
                    let one_stage = explicit_solution_with(&theta, &exponent, t + s, &c)?;
                    // p_t applied to F_s: exp(P_θ(t)) exp(P_{θ_t}(s)) F^{θ_{t+s}}
                    let flowed = flow(&theta, t, &dynamics.model)?;
                    let two_stage = exponent.at(t)?.exp() * explicit_solution(&flowed, s, &c, dynamics)?;
                    worst = worst.max((one_stage - two_stage).abs());
                    cases += 1;
                }
            }
        }
        out.push(
            VerificationReport::within("chapman_kolmogorov_analytic", "max_abs_diff", worst, 1e-8).with_note(format!("{cases} cases")),
        );

        let n = self.budget(100_000);
        let theta = &self.theta_menu()[2];
        for (name, dynamics) in self.models() {
            let (t, s) = (1.0, 1.5);
            let seed = self.stream_seed(800);
            let one: Vec<f64> = par_paths(seed, n, |rng| {
                theta.functional(&transition_step(&c, t + s, dynamics, rng).expect("valid time"))
            });
            let seed2 = self.stream_seed(801);
            let two: Vec<f64> = par_paths(seed2, n, |rng| {
                let mid = transition_step(&c, t, dynamics, rng).expect("valid time");
                theta.functional(&transition_step(&mid, s, dynamics, rng).expect("valid time"))
            });
            let (a, b) = (MeanSe::of(&one), MeanSe::of(&two));
            out.push(two_sample_z(&format!("chapman_kolmogorov_sampler_{name}"), a, b, seed).with_note(bonferroni(2)));
            let exact = explicit_solution(theta, t + s, &c, dynamics)?;
            out.push(z_report(&format!("chapman_kolmogorov_two_stage_exact_{name}"), b, exact, seed2));
        }
        Ok(out)
    }

    fn cross_sampler(&self) -> Result<Vec<VerificationReport>> {
        let mut out = Vec::new();
        let n = self.budget(20_000);
        let c = self.fixture();
        let theta = &self.theta_menu()[2];
        for (name, dynamics) in self.models() {
            for (i, horizon) in [0.5, 2.0, 5.0].into_iter().enumerate() {
                let seed_a = self.stream_seed(900 + 2 * i as u64);
                let seed_b = seed_a.wrapping_add(1);
                let events: Vec<(f64, usize)> = par_paths(seed_a, n, |rng| {
                    let terminal = event_driven_simulate(&c, horizon, dynamics, rng).expect("valid horizon").terminal;
                    (theta.functional(&terminal), terminal.len())
                });
                let steps: Vec<(f64, usize)> = par_paths(seed_b, n, |rng| {
                    let terminal = transition_step(&c, horizon, dynamics, rng).expect("valid time");
                    (theta.functional(&terminal), terminal.len())
                });
                let fa: Vec<f64> = events.iter().map(|e| e.0).collect();
                let fb: Vec<f64> = steps.iter().map(|e| e.0).collect();
                out.push(
                    two_sample_z(&format!("cross_sampler_mean_{name}_t{horizon}"), MeanSe::of(&fa), MeanSe::of(&fb), seed_a)
                        .with_note(bonferroni(6)),
                );
                let ca: Vec<usize> = events.iter().map(|e| e.1).collect();
                let cb: Vec<usize> = steps.iter().map(|e| e.1).collect();
                let chi = chi_square_two_sample(&ca, &cb);
                out.push(
                    VerificationReport::at_least(&format!("cross_sampler_counts_{name}_t{horizon}"), "p_value", chi.p_value, 0.01)
                        .with_seed(seed_a, 2 * n)
                        .with_note(format!("chi2 = {:.3}, df = {}", chi.statistic, chi.df)),
                );
            }
        }
        Ok(out)
    }

    fn immigration_death(&self) -> Result<Vec<VerificationReport>> {
        let d = &self.primary;
        let rate = match d.model {
            DepartureModel::Constant { rate } => rate,
            _ => return Err(Error::Config("immigration-death oracle needs a constant primary model".into())),
        };
        let mut out = Vec::new();
        let n = self.budget(10_000);
        for (i, t) in [0.5, 2.0, 10.0].into_iter().enumerate() {
            let seed = self.stream_seed(1000 + i as u64);
            let law = count_law_oracle(d, t, n, seed)?;
            let bound = 3.0 * (law.expected_mean / n as f64).sqrt();
            out.push(
                VerificationReport::within(&format!("transient_count_mean_t{t}"), "mean − exact", law.mean.mean - law.expected_mean, bound)
                    .with_seed(seed, n)
                    .with_note(format!("exact {:.5}", law.expected_mean)),
            );
            if let Some(chi) = law.chi_square {
                out.push(
                    VerificationReport::at_least(&format!("transient_count_law_t{t}"), "p_value", chi.p_value, 0.01)
                        .with_seed(seed, n)
                        .with_note(format!("chi2 = {:.3}, df = {}", chi.statistic, chi.df)),
                );
            }
        }

        let stationary = IntensityMeasure::stationary(d)?;
        let seed = self.stream_seed(1010);
        let draws: Vec<MarkedConfiguration> = par_paths(seed, n, |rng| stationary.sample_poisson(rng));
        let mean = d.habitat.chi_mass() / rate;
        let counts: Vec<usize> = draws.iter().map(|c| c.len()).collect();
        let chi = chi_square_poisson(&counts, mean);
        out.push(
            VerificationReport::at_least("stationary_count_law", "p_value", chi.p_value, 0.01)
                .with_seed(seed, n)
                .with_note(format!("Poisson({mean}), chi2 = {:.3}, df = {}", chi.statistic, chi.df)),
        );

        let n_ages = self.budget(100_000);
        let seed = self.stream_seed(1011);
        let per_path = mean.max(1.0);
        let paths = (n_ages as f64 / per_path).ceil() as usize + 1;
        let mut ages: Vec<f64> = par_paths(seed, paths, |rng| {
            stationary.sample_poisson(rng).particles().iter().map(|p| p.alpha).collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
        ages.truncate(n_ages);
        let a_max = stationary.age_upper;
        let cdf = |a: f64| -(-rate * a).exp_m1() / -(-rate * a_max).exp_m1();
        let ks = ks_statistic(&ages, cdf);
        out.push(
            VerificationReport::within("stationary_age_ks", "D", ks, ks_critical(ages.len())).with_seed(seed, ages.len()),
        );

        // ages produced by the dynamics themselves, ϱ_t restricted to [0, t)
        let t = 10.0;
        let seed = self.stream_seed(1012);
        let expected = d.habitat.chi_mass() * -(-rate * t).exp_m1() / rate;
        let paths = (n_ages as f64 / expected.max(1.0)).ceil() as usize + 1;
        let mut ages: Vec<f64> = par_paths(seed, paths, |rng| {
            transition_step(&MarkedConfiguration::empty(), t, d, rng)
                .expect("valid time")
                .particles()
                .iter()
                .map(|p| p.alpha)
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
        ages.truncate(n_ages);
        let cdf = |a: f64| -(-rate * a).exp_m1() / -(-rate * t).exp_m1();
        let ks = ks_statistic(&ages, cdf);
        out.push(
            VerificationReport::within("transient_age_ks_t10", "D", ks, ks_critical(ages.len())).with_seed(seed, ages.len()),
        );
        Ok(out)
    }

    fn initial_menu(&self) -> Result<Vec<(&'static str, InitialLaw)>> {
        let fixture = InitialLaw::dirac(self.fixture());
        Ok(vec![
            ("empty", InitialLaw::empty()),
            ("fixture", fixture.clone()),
            ("stationary", InitialLaw::stationary(&self.primary)?),
            (
                "convolution",
                InitialLaw::Convolution { parts: vec![fixture, InitialLaw::Poisson { age_lower: 0.0, age_upper: 2.0 }] },
            ),
        ])
    }

    fn fokker_planck_laplace(&self) -> Result<Vec<VerificationReport>> {
        let mut out = Vec::new();
        let thetas = self.theta_menu();
        let theta = &thetas[2];
        // Simpson's error is (t/180) h⁴ sup|f⁗|; from δ_∅ the integrand
        // behaves like e^{−3s}, so the 1e-8 budget at n = 64 holds for short
        // horizons only. The convergence order is read off at t = 1, where
        // residuals stand well clear of the quadrature noise.
        let (t, t_order) = (0.25, 1.0);
        for (name, law) in self.initial_menu()? {
            for (label, dynamics) in self.models() {
                let fine = fokker_planck_residual(theta, &law, t, 64, dynamics)?;
                out.push(
                    VerificationReport::within(&format!("fokker_planck_{name}_{label}"), "residual", fine, 1e-8)
                        .with_note(format!("n_grid = 64, t = {t}")),
                );
                let coarse = fokker_planck_residual(theta, &law, t_order, 32, dynamics)?;
                let fine = fokker_planck_residual(theta, &law, t_order, 64, dynamics)?;
                if fine.abs() > 1e-9 {
                    out.push(
                        VerificationReport::in_range(
                            &format!("fokker_planck_halving_{name}_{label}"),
                            "ratio",
                            coarse / fine,
                            14.0,
                            18.0,
                        )
                        .with_note(format!("n_grid 32 → 64, t = {t_order}")),
                    );
                }
            }
            for lambda in [0.5, 1.0, 2.0] {
                out.push(laplace_uniqueness_check(theta, &law, lambda, 1e-6, &self.primary)?.with_note(format!("μ₀ = {name}")));
            }
        }
        Ok(out)
    }

    fn martingale(&self) -> Result<Vec<VerificationReport>> {
        let thetas = self.theta_menu();
        let empty_witness = Theta::zero(&self.basis(), &self.ladder);
        let n = self.budget(100_000);
        let cases: [(&str, f64, f64, &Theta, &Theta, InitialLaw); 3] = [
            ("empty_start", 0.5, 1.5, &thetas[1], &empty_witness, InitialLaw::empty()),
            ("fixture_start", 1.0, 2.0, &thetas[2], &thetas[0], InitialLaw::dirac(self.fixture())),
            ("stationary_start", 0.0, 1.0, &thetas[1], &thetas[2], InitialLaw::stationary(&self.primary)?),
        ];
        let mut out = Vec::new();
        for (i, (name, t1, t2, theta, witness, law)) in cases.iter().enumerate() {
            let seed = self.stream_seed(1200 + i as u64);
            let r = martingale_residual(theta, witness, law, *t1, *t2, n, seed, &self.primary)?;
            out.push(
                VerificationReport::within(&format!("martingale_{name}"), "z", r.estimate.mean / r.estimate.se, SE_THRESHOLD)
                    .with_seed(seed, n)
                    .with_note(format!(
                        "estimate {:.3e}, se {:.2e}, midpoint cells {}, exact bias {:.2e}; {}",
                        r.estimate.mean,
                        r.estimate.se,
                        r.cells,
                        r.bias,
                        bonferroni(3)
                    )),
            );
            let mut bias = VerificationReport::within(&format!("martingale_bias_{name}"), "bias/se", r.bias / r.estimate.se, 0.25);
            bias.pass = r.bias.abs() < 0.25 * r.estimate.se;
            out.push(bias);
        }
        Ok(out)
    }

    fn ergodicity(&self) -> Result<Vec<VerificationReport>> {
        let d = &self.primary;
        let m0 = d.model.m_zero();
        let times: Vec<f64> = (0..=24).map(|i| 0.5 * i as f64).collect();
        let mut out = Vec::new();
        for (i, theta) in self.theta_menu().iter().enumerate() {
            let e = ergodicity_check(theta, &InitialLaw::empty(), &times, d)?;
            let slope = e.log_slope.unwrap_or(f64::NAN);
            out.push(
                VerificationReport::in_range(&format!("ergodicity_slope_theta{}", i + 1), "log_slope", slope, -m0 - 0.1, -m0 + 0.1)
                    .with_note(format!("gap at t = 10: {:.3e}", e.gaps[20])),
            );
            let over = e.gaps.iter().zip(&e.bounds).filter(|(g, b)| g > b).count();
            let increasing = e.gaps.windows(2).filter(|w| w[1] > w[0]).count();
            let mut r = VerificationReport::within(&format!("ergodicity_bound_theta{}", i + 1), "points_above_bound", over as f64, 0.0)
                .with_note(format!("final gap {:.3e} vs bound {:.3e}; {increasing} increases", e.gaps[e.gaps.len() - 1], e.bounds[e.bounds.len() - 1]));
            r.pass &= increasing == 0;
            out.push(r);

            let s = ergodicity_check(theta, &InitialLaw::stationary(d)?, &times, d)?;
            let worst = s.gaps.iter().copied().fold(0.0, f64::max);
            out.push(VerificationReport::within(&format!("stationarity_theta{}", i + 1), "max_gap", worst, 1e-6));
        }
        Ok(out)
    }
}
