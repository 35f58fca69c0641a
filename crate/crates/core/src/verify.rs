//! Verification harness: closed-form laws of the process against samplers
//! and against each other.
//!
//! For an initial law `μ₀` the law at time `t` is `μ_t = π_t ⋆ μ₀^t`, where
//! `μ₀^t` thins and ages `μ₀` and `π_t` is Poisson with intensity `ϱ_t`.
//! Hence `μ_t(F^φ) = exp(ϱ_{[0,t)}(φ)) μ₀^t(F^φ)`, and with
//! `ψ = (∂_α φ − m φ)/(1 + φ)` the generator moments follow from
//! `E[F^φ Σ ψ] = π(F^φ) ∫ (1 + φ) ψ dϱ` for Poisson laws and from the
//! product rule for convolutions.

pub mod suites;

use std::cell::RefCell;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson as PoissonLaw};

use crate::config_space::MarkedConfiguration;
use crate::error::{Error, Result};
use crate::generator::{arrival_integral, flow, generator_terms, laplace, resolvent, ArrivalExponent, RESOLVENT_HORIZON};
use crate::habitat::{DepartureModel, Dynamics};
use crate::quadrature::{composite_simpson, gauss_kronrod, Estimate, NestedErrors};
use crate::rng::{par_paths, MeanSe};
use crate::sampler::{transition_step, IntensityMeasure, STATIONARY_HORIZON};
use crate::test_functions::{Product, TestFunction, Theta};

/// Statistical pass threshold in standard errors.
pub const SE_THRESHOLD: f64 = 4.0;

/// Initial distributions with closed-form `F^φ` expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Dirac { configuration: MarkedConfiguration },
    /// Poisson with intensity `e^{−M} χ dα` on ages `[age_lower, age_upper)`.
    Poisson { age_lower: f64, age_upper: f64 },
    Convolution { parts: Vec<InitialLaw> },
}

impl InitialLaw {
    pub fn empty() -> Self {
        InitialLaw::Dirac { configuration: MarkedConfiguration::empty() }
    }

    pub fn dirac(c: MarkedConfiguration) -> Self {
        InitialLaw::Dirac { configuration: c }
    }

    /// The stationary law `π_ϱ`.
    pub fn stationary(dynamics: &Dynamics) -> Result<Self> {
        let s = IntensityMeasure::stationary(dynamics)?;
        Ok(InitialLaw::Poisson { age_lower: s.age_lower, age_upper: s.age_upper })
    }

    fn intensity<'a>(&self, dynamics: &'a Dynamics, a: f64, b: f64) -> Result<IntensityMeasure<'a>> {
        IntensityMeasure::window(dynamics, a, b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, dynamics: &Dynamics, rng: &mut R) -> Result<MarkedConfiguration> {
        match self {
            InitialLaw::Dirac { configuration } => Ok(configuration.clone()),
            InitialLaw::Poisson { age_lower, age_upper } => {
                Ok(self.intensity(dynamics, *age_lower, *age_upper)?.sample_poisson(rng))
            }
            InitialLaw::Convolution { parts } => {
                let mut out = MarkedConfiguration::empty();
                for p in parts {
                    out = out.union(&p.sample(dynamics, rng)?);
                }
                Ok(out)
            }
        }
    }

    /// `E|γ̂|`.
    pub fn expected_size(&self, dynamics: &Dynamics) -> Result<f64> {
        match self {
            InitialLaw::Dirac { configuration } => Ok(configuration.len() as f64),
            InitialLaw::Poisson { age_lower, age_upper } => {
                self.intensity(dynamics, *age_lower, *age_upper)?.total_mass(dynamics.tol.chi)
            }
            InitialLaw::Convolution { parts } => parts.iter().map(|p| p.expected_size(dynamics)).sum(),
        }
    }

    /// `ln μ₀^s(F^φ)`.
    pub fn aged_log_expectation<T: TestFunction + ?Sized>(&self, phi: &T, s: f64, dynamics: &Dynamics) -> Result<f64> {
        match self {
            InitialLaw::Dirac { configuration } => Ok(configuration
                .particles()
                .iter()
                .map(|p| (dynamics.model.survival(&p.x, p.alpha, s) * phi.value(&p.x, p.alpha + s)).ln_1p())
                .sum()),
            InitialLaw::Poisson { age_lower, age_upper } => {
                let aged = self.intensity(dynamics, *age_lower, *age_upper)?.aged(s);
                Ok(aged.integrate(phi, |x, a| phi.value(x, a), dynamics.tol.chi)?.value)
            }
            InitialLaw::Convolution { parts } => parts.iter().map(|p| p.aged_log_expectation(phi, s, dynamics)).sum(),
        }
    }

    /// `(μ₀^s(F^φ), μ₀^s(F^φ Σ ψ))` where `drift = (1 + φ) ψ`.
    pub fn aged_moments<T, D>(&self, phi: &T, drift: &D, s: f64, dynamics: &Dynamics) -> Result<(f64, f64)>
    where
        T: TestFunction + ?Sized,
        D: Fn(&[f64], f64) -> f64,
    {
        match self {
            InitialLaw::Dirac { configuration } => {
                let ps = configuration.particles();
                let q: Vec<f64> = ps.iter().map(|p| dynamics.model.survival(&p.x, p.alpha, s)).collect();
                let factors: Vec<f64> =
                    ps.iter().zip(&q).map(|(p, q)| 1.0 + q * phi.value(&p.x, p.alpha + s)).collect();
                let e = factors.iter().product();
                let mut g = 0.0;
                for i in 0..ps.len() {
                    let others: f64 = factors.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, f)| f).product();
                    g += q[i] * drift(&ps[i].x, ps[i].alpha + s) * others;
                }
                Ok((e, g))
            }
            InitialLaw::Poisson { age_lower, age_upper } => {
                let aged = self.intensity(dynamics, *age_lower, *age_upper)?.aged(s);
                let e = aged.integrate(phi, |x, a| phi.value(x, a), dynamics.tol.chi)?.value.exp();
                let g = aged.integrate(phi, drift, dynamics.tol.chi)?.value;
                Ok((e, e * g))
            }
            InitialLaw::Convolution { parts } => {
                let mut acc = (1.0, 0.0);
                for p in parts {
                    let (e, g) = p.aged_moments(phi, drift, s, dynamics)?;
                    acc = (acc.0 * e, acc.1 * e + acc.0 * g);
                }
                Ok(acc)
            }
        }
    }
}

/// `(1 + φ) ψ = ∂_α φ − m φ`.
fn drift_of<'a, T: TestFunction + ?Sized>(phi: &'a T, model: &'a DepartureModel) -> impl Fn(&[f64], f64) -> f64 + 'a {
    move |x, a| phi.age_derivative(x, a) - model.rate(x, a) * phi.value(x, a)
}

/// `μ_t = π_t ⋆ μ₀^t` evaluated on exponential functionals.
pub struct ExplicitLaw<'a, T: ?Sized> {
    pub initial: &'a InitialLaw,
    pub phi: &'a T,
    pub dynamics: &'a Dynamics,
    exponent: ArrivalExponent<'a>,
    drift_exponent: ArrivalExponent<'a>,
    arrival: f64,
}

impl<'a, T: TestFunction + ?Sized> ExplicitLaw<'a, T> {
    pub fn new(initial: &'a InitialLaw, phi: &'a T, dynamics: &'a Dynamics) -> Result<Self> {
        Ok(ExplicitLaw {
            initial,
            phi,
            dynamics,
            exponent: ArrivalExponent::new(phi, dynamics),
            drift_exponent: ArrivalExponent::from_fn(drift_of(phi, &dynamics.model), phi.breakpoints(), dynamics),
            arrival: arrival_integral(phi, dynamics)?.value,
        })
    }

    /// `exp(ϱ_{[0,t)}(φ))`, the Poisson part.
    pub fn prefactor(&self, t: f64) -> Result<f64> {
        Ok(self.exponent.at(t)?.exp())
    }

    /// `μ_t(F^φ)`.
    pub fn expectation(&self, t: f64) -> Result<f64> {
        Ok((self.exponent.at(t)? + self.initial.aged_log_expectation(self.phi, t, self.dynamics)?).exp())
    }

    /// `μ_t(L F^φ)`.
    pub fn generator_expectation(&self, t: f64) -> Result<f64> {
        let drift = drift_of(self.phi, &self.dynamics.model);
        let (e, g) = self.initial.aged_moments(self.phi, &drift, t, self.dynamics)?;
        let r = self.drift_exponent.at(t)?;
        Ok(self.prefactor(t)? * ((r + self.arrival) * e + g))
    }
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub test: String,
    pub statistic: String,
    pub value: f64,
    /// Tolerance, or the standard-error threshold for statistical tests.
    pub bound: f64,
    pub pass: bool,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub note: String,
}

impl VerificationReport {
    /// Passes when `|value| ≤ bound`.
    pub fn within(test: &str, statistic: &str, value: f64, bound: f64) -> Self {
        VerificationReport {
            test: test.into(),
            statistic: statistic.into(),
            value,
            bound,
            pass: value.abs() <= bound,
            seed: None,
            samples: None,
            note: String::new(),
        }
    }

    /// Passes when `lo ≤ value ≤ hi`; `bound` records the half-width.
    pub fn in_range(test: &str, statistic: &str, value: f64, lo: f64, hi: f64) -> Self {
        let mut r = Self::within(test, statistic, value, 0.5 * (hi - lo));
        r.pass = (lo..=hi).contains(&value);
        r.note = format!("range [{lo}, {hi}]");
        r
    }

    /// Passes when `value ≥ bound` (p-values, separation margins).
    pub fn at_least(test: &str, statistic: &str, value: f64, bound: f64) -> Self {
        let mut r = Self::within(test, statistic, value, bound);
        r.pass = value >= bound;
        r
    }

    pub fn with_seed(mut self, seed: u64, samples: usize) -> Self {
        self.seed = Some(seed);
        self.samples = Some(samples);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        let note = note.into();
        self.note = if self.note.is_empty() { note } else { format!("{}; {note}", self.note) };
        self
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} = {:.6e} (bound {:.3e}){}",
            if self.pass { "PASS" } else { "FAIL" },
            self.test,
            self.statistic,
            self.value,
            self.bound,
            if self.note.is_empty() { String::new() } else { format!(" [{}]", self.note) }
        )
    }
}

pub fn write_reports_csv<W: Write>(reports: &[VerificationReport], mut out: W) -> Result<()> {
    writeln!(out, "test,statistic,value,bound,pass,seed,samples,note")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},\"{}\"",
            r.test,
            r.statistic,
            r.value,
            r.bound,
            r.pass,
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.samples.map(|s| s.to_string()).unwrap_or_default(),
            r.note.replace('"', "'")
        )?;
    }
    Ok(())
}

/// `μ_t(F^φ) − μ₀(F^φ) − ∫₀^t μ_s(L F^φ) ds`, the time integral by composite
/// Simpson on `n_grid` intervals.
pub fn fokker_planck_residual<T: TestFunction + ?Sized>(
    phi: &T,
    initial: &InitialLaw,
    t: f64,
    n_grid: usize,
    dynamics: &Dynamics,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be > 0, got {t}")));
    }
    let law = ExplicitLaw::new(initial, phi, dynamics)?;
    let failure = RefCell::new(None);
    let integral = composite_simpson(
        |s| match law.generator_expectation(s) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        t,
        n_grid,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(law.expectation(t)? - law.expectation(0.0)? - integral)
}

pub fn fokker_planck_check<T: TestFunction + ?Sized>(
    phi: &T,
    initial: &InitialLaw,
    t: f64,
    n_grid: usize,
    tolerance: f64,
    dynamics: &Dynamics,
) -> Result<VerificationReport> {
    let r = fokker_planck_residual(phi, initial, t, n_grid, dynamics)?;
    Ok(VerificationReport::within("fokker_planck", "residual", r, tolerance).with_note(format!("t = {t}, n_grid = {n_grid}")))
}

/// Both sides of `μ₀(F_{λ,φ}) = ∫₀^∞ e^{−λs} μ_s(F^φ) ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceSides {
    /// Resolvent route: `∫₀^{40/λ} e^{−λs} μ₀(F^φ_s) ds` by adaptive quadrature.
    pub resolvent: f64,
    /// Law route: `λ^{−1} ∫₀¹ μ_{s(u)}(F^φ) du` with `s(u) = −ln(1 − u)/λ`.
    pub law: f64,
}

pub fn laplace_sides<T: TestFunction + ?Sized>(
    phi: &T,
    initial: &InitialLaw,
    lambda: f64,
    dynamics: &Dynamics,
) -> Result<LaplaceSides> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("λ must be > 0, got {lambda}")));
    }
    let resolvent_side = match initial {
        InitialLaw::Dirac { configuration } => resolvent(phi, lambda, configuration, dynamics)?.value,
        _ => {
            // μ₀(F^φ_s) = exp(ϱ_{[0,s)}(φ)) μ₀(F^{φ_s}) by Fubini.
            let exponent = ArrivalExponent::new(phi, dynamics);
            laplace(
                |s| Ok((exponent.at(s)? + initial.aged_log_expectation(&flow(phi, s, &dynamics.model)?, 0.0, dynamics)?).exp()),
                lambda,
                dynamics.tol.time,
            )?
            .value
        }
    };
    let law = ExplicitLaw::new(initial, phi, dynamics)?;
    let cap = 2.0 * RESOLVENT_HORIZON / lambda;
    let nested = NestedErrors::default();
    let est = gauss_kronrod(
        |u| {
            let s = (-(-u).ln_1p() / lambda).min(cap);
            nested.absorb(law.expectation(s).map(|v| Estimate { value: v, error: 0.0 }))
        },
        0.0,
        1.0,
        lambda * dynamics.tol.time,
        0.0,
    );
    let law_side = nested.check(est)?.value / lambda;
    Ok(LaplaceSides { resolvent: resolvent_side, law: law_side })
}

pub fn laplace_uniqueness_check<T: TestFunction + ?Sized>(
    phi: &T,
    initial: &InitialLaw,
    lambda: f64,
    tolerance: f64,
    dynamics: &Dynamics,
) -> Result<VerificationReport> {
    let sides = laplace_sides(phi, initial, lambda, dynamics)?;
    Ok(VerificationReport::within("laplace_uniqueness", "difference", sides.resolvent - sides.law, tolerance)
        .with_note(format!("λ = {lambda}, value = {:.10}", sides.resolvent)))
}

/// Outcome of a martingale increment test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleOutcome {
    pub estimate: MeanSe,
    /// Exact expected error of the midpoint rule on the chosen grid.
    pub bias: f64,
    pub cells: usize,
}

const MAX_MIDPOINT_CELLS: usize = 512;
const PILOT_PATHS: usize = 2000;

/// Monte Carlo estimate of
/// `E[(F^θ(X_{t₂}) − F^θ(X_{t₁}) − ∫_{t₁}^{t₂} L F^θ(X_u) du) F^{θ′}(X_{t₁})]`.
///
/// The time integral is a midpoint sum along exactly sampled paths. Its
/// expected error is known in closed form through
/// `H(u) = E[F^{θ′}(X_{t₁}) F^θ(X_u)]` and `h = H′`, and the grid is doubled
/// until that bias is below a quarter of the standard error.
#[allow(clippy::too_many_arguments)]
pub fn martingale_residual(
    theta: &Theta,
    witness: &Theta,
    initial: &InitialLaw,
    t1: f64,
    t2: f64,
    n_paths: usize,
    seed: u64,
    dynamics: &Dynamics,
) -> Result<MartingaleOutcome> {
    if !(0.0 <= t1 && t1 < t2 && t2.is_finite()) {
        return Err(Error::Domain(format!("need 0 <= t1 < t2, got {t1}, {t2}")));
    }
    let c0 = arrival_integral(theta, dynamics)?.value;
    let model = &dynamics.model;
    let simulate = |cells: usize, paths: usize, seed: u64| -> Vec<f64> {
        par_paths(seed, paths, |rng| {
            let mut x = initial.sample(dynamics, rng).expect("validated law");
            x = transition_step(&x, t1, dynamics, rng).expect("validated time");
            let w = witness.functional(&x);
            let f1 = theta.functional(&x);
            let delta = (t2 - t1) / cells as f64;
            let mut now = t1;
            let mut integral = 0.0;
            for i in 0..cells {
                let u = t1 + (i as f64 + 0.5) * delta;
                x = transition_step(&x, u - now, dynamics, rng).expect("validated time");
                now = u;
                integral += delta * generator_terms(theta, &x, model, c0).total();
            }
            x = transition_step(&x, t2 - now, dynamics, rng).expect("validated time");
            (theta.functional(&x) - f1 - integral) * w
        })
    };

    let bias = MidpointBias::new(theta, witness, initial, t1, t2, dynamics)?;
    let pilot = MeanSe::of(&simulate(4, PILOT_PATHS.min(n_paths), seed ^ 0x9e37_79b9));
    let mut target_se = pilot.variance().sqrt() / (n_paths as f64).sqrt();
    let mut cells = 4;
    loop {
        let mut b = bias.at(cells)?;
        while b.abs() >= 0.25 * target_se && cells < MAX_MIDPOINT_CELLS {
            cells *= 2;
            b = bias.at(cells)?;
        }
        let estimate = MeanSe::of(&simulate(cells, n_paths, seed));
        // the pilot only estimates the spread; refine if the run came out sharper
        if b.abs() < 0.25 * estimate.se || cells >= MAX_MIDPOINT_CELLS {
            return Ok(MartingaleOutcome { estimate, bias: b, cells });
        }
        target_se = estimate.se;
    }
}

/// Exact expected error of the midpoint sum for `∫_{t₁}^{t₂} L F^θ(X_u) du`
/// inside the martingale increment, weighted by `F^{θ′}(X_{t₁})`.
///
/// With `H(u) = E[F^{θ′}(X_{t₁}) F^θ(X_u)] = μ_{t₁}(F^{θ′} F^θ_{u−t₁})` and
/// `h(u) = E[F^{θ′}(X_{t₁}) L F^θ(X_u)]`, the error on `n` cells is
/// `δ Σ h(u_i) − (H(t₂) − H(t₁))`, computed from the explicit law.
pub struct MidpointBias<'a> {
    theta: &'a Theta,
    witness: &'a Theta,
    initial: &'a InitialLaw,
    t1: f64,
    t2: f64,
    dynamics: &'a Dynamics,
    theta_exponent: ArrivalExponent<'a>,
    exact_increment: f64,
}

impl<'a> MidpointBias<'a> {
    pub fn new(
        theta: &'a Theta,
        witness: &'a Theta,
        initial: &'a InitialLaw,
        t1: f64,
        t2: f64,
        dynamics: &'a Dynamics,
    ) -> Result<Self> {
        let mut out = MidpointBias {
            theta,
            witness,
            initial,
            t1,
            t2,
            dynamics,
            theta_exponent: ArrivalExponent::new(theta, dynamics),
            exact_increment: 0.0,
        };
        out.exact_increment = out.big_h(t2)? - out.big_h(t1)?;
        Ok(out)
    }

    /// `H(u)`.
    pub fn big_h(&self, u: f64) -> Result<f64> {
        let tau = u - self.t1;
        let flowed = flow(self.theta, tau, &self.dynamics.model)?;
        let phi = Product { a: self.witness, b: &flowed };
        let head = ArrivalExponent::new(&phi, self.dynamics).at(self.t1)?;
        Ok((self.theta_exponent.at(tau)? + head + self.initial.aged_log_expectation(&phi, self.t1, self.dynamics)?).exp())
    }

    /// `h(u) = H′(u)`.
    pub fn small_h(&self, u: f64) -> Result<f64> {
        let (model, dynamics) = (&self.dynamics.model, self.dynamics);
        let tau = u - self.t1;
        let flowed = flow(self.theta, tau, model)?;
        let phi = Product { a: self.witness, b: &flowed };
        let witness = self.witness;
        let drift = |x: &[f64], a: f64| {
            witness.one_plus(x, a) * (flowed.age_derivative(x, a) - model.rate(x, a) * flowed.value(x, a))
        };
        let phi_exponent = ArrivalExponent::new(&phi, dynamics).at(self.t1)?;
        let drift_exponent = ArrivalExponent::from_fn(drift, phi.breakpoints(), dynamics).at(self.t1)?;
        let (e, g) = self.initial.aged_moments(&phi, &drift, self.t1, dynamics)?;
        let c_tau = self.theta_exponent.rate(tau)?;
        Ok((self.theta_exponent.at(tau)? + phi_exponent).exp() * ((drift_exponent + c_tau) * e + g))
    }

    /// The bias on `cells` equal cells.
    pub fn at(&self, cells: usize) -> Result<f64> {
        let delta = (self.t2 - self.t1) / cells as f64;
        let mut sum = 0.0;
        for i in 0..cells {
            sum += delta * self.small_h(self.t1 + (i as f64 + 0.5) * delta)?;
        }
        Ok(sum - self.exact_increment)
    }
}

/// Gap `|μ_t(F^θ) − π_ϱ(F^θ)|` along a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicityOutcome {
    pub times: Vec<f64>,
    pub gaps: Vec<f64>,
    /// `e^{−m₀ t}(χ(Λ)/m₀ + E|γ̂₀|)` at each time.
    pub bounds: Vec<f64>,
    /// Least-squares slope of `ln gap` over grid points in `[1, 10]`.
    pub log_slope: Option<f64>,
    pub stationary_value: f64,
}

pub fn ergodicity_check<T: TestFunction + ?Sized>(
    phi: &T,
    initial: &InitialLaw,
    times: &[f64],
    dynamics: &Dynamics,
) -> Result<ErgodicityOutcome> {
    let m0 = dynamics.model.m_zero();
    if m0 <= 0.0 {
        return Err(Error::Domain("ergodicity requires departure rate bounded below".into()));
    }
    let horizon = STATIONARY_HORIZON / m0;
    let exponent = ArrivalExponent::new(phi, dynamics);
    let stationary_exponent = exponent.between(0.0, horizon)?.value;
    let size = initial.expected_size(dynamics)?;
    let chi = dynamics.habitat.chi_mass();
    let mut gaps = Vec::with_capacity(times.len());
    let mut bounds = Vec::with_capacity(times.len());
    for &t in times {
        // ln μ_t(F) − ln π(F) = ln μ₀^t(F) − ϱ_{[t,∞)}(φ), the tail integrated directly.
        let tail = if t < horizon { exponent.between(t, horizon)?.value } else { 0.0 };
        let log_ratio = initial.aged_log_expectation(phi, t, dynamics)? - tail;
        gaps.push(stationary_exponent.exp() * log_ratio.exp_m1().abs());
        bounds.push((-m0 * t).exp() * (chi / m0 + size));
    }
    let fit: Vec<(f64, f64)> = times
        .iter()
        .zip(&gaps)
        .filter(|(t, g)| (1.0..=10.0).contains(*t) && **g > 0.0)
        .map(|(t, g)| (*t, g.ln()))
        .collect();
    let log_slope = (fit.len() >= 2).then(|| least_squares_slope(&fit));
    Ok(ErgodicityOutcome { times: times.to_vec(), gaps, bounds, log_slope, stationary_value: stationary_exponent.exp() })
}

pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// A chi-squared statistic with its degrees of freedom and p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

fn chi_square_p(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(df as f64).expect("df > 0").cdf(statistic)
}

/// Goodness of fit of counts to `Poisson(mean)`; bins are merged until each
/// expects at least five observations.
pub fn chi_square_poisson(counts: &[usize], mean: f64) -> ChiSquare {
    let n = counts.len() as f64;
    let max = counts.iter().copied().max().unwrap_or(0);
    let law = PoissonLaw::new(mean).expect("positive mean");
    let mut observed = vec![0usize; max + 1];
    for &c in counts {
        observed[c] += 1;
    }
    // bins as [lo, hi] inclusive; the last one is open-ended
    let mut bins: Vec<(usize, f64, usize)> = Vec::new();
    let (mut expected, mut obs, mut k) = (0.0, 0usize, 0usize);
    let mut cumulative = 0.0;
    loop {
        let p = law.pmf(k as u64);
        cumulative += p;
        expected += n * p;
        obs += observed.get(k).copied().unwrap_or(0);
        k += 1;
        let tail = n * (1.0 - cumulative).max(0.0);
        if expected >= 5.0 && tail >= 5.0 {
            bins.push((k, expected, obs));
            expected = 0.0;
            obs = 0;
        } else if tail < 5.0 {
            break;
        }
    }
    let rest_expected = expected + n * (1.0 - cumulative).max(0.0);
    let rest_observed = obs + observed.iter().skip(k).sum::<usize>();
    match bins.last_mut() {
        Some(last) if rest_expected < 5.0 => {
            last.1 += rest_expected;
            last.2 += rest_observed;
        }
        _ => bins.push((k, rest_expected, rest_observed)),
    }
    let statistic: f64 = bins.iter().map(|(_, e, o)| (*o as f64 - e).powi(2) / e).sum();
    let df = bins.len().saturating_sub(1);
    ChiSquare { statistic, df, p_value: chi_square_p(statistic, df) }
}

/// Two-sample chi-squared test of homogeneity for count distributions.
pub fn chi_square_two_sample(a: &[usize], b: &[usize]) -> ChiSquare {
    let max = a.iter().chain(b).copied().max().unwrap_or(0);
    let hist = |xs: &[usize]| {
        let mut h = vec![0f64; max + 1];
        for &x in xs {
            h[x] += 1.0;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let total = na + nb;
    // merge adjacent values until both expected cells reach five
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut cur = (0.0, 0.0);
    for k in 0..=max {
        cur.0 += ha[k];
        cur.1 += hb[k];
        let pooled = cur.0 + cur.1;
        if pooled * na.min(nb) / total >= 5.0 {
            bins.push(cur);
            cur = (0.0, 0.0);
        }
    }
    if cur.0 + cur.1 > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += cur.0;
                last.1 += cur.1;
            }
            None => bins.push(cur),
        }
    }
    let mut statistic = 0.0;
    for (oa, ob) in &bins {
        let pooled = oa + ob;
        let (ea, eb) = (pooled * na / total, pooled * nb / total);
        statistic += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let df = bins.len().saturating_sub(1);
    ChiSquare { statistic, df, p_value: chi_square_p(statistic, df) }
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// KS critical value at the 1% level.
pub fn ks_critical(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Particle counts at time `t` started from `∅`, against the
/// immigration–death law `Poisson(χ(Λ)(1 − e^{−mt})/m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountLawOutcome {
    pub expected_mean: f64,
    pub mean: MeanSe,
    pub chi_square: Option<ChiSquare>,
    pub all_empty: bool,
}

pub fn count_law_oracle(dynamics: &Dynamics, t: f64, n_paths: usize, seed: u64) -> Result<CountLawOutcome> {
    let m = match dynamics.model {
        DepartureModel::Constant { rate } if rate > 0.0 => rate,
        _ => return Err(Error::Config("count law oracle needs a constant departure rate > 0".into())),
    };
    let expected_mean = dynamics.habitat.chi_mass() * -(-m * t).exp_m1() / m;
    let counts: Vec<usize> = par_paths(seed, n_paths, |rng| {
        transition_step(&MarkedConfiguration::empty(), t, dynamics, rng).expect("validated time").len()
    });
    let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let all_empty = counts.iter().all(|&c| c == 0);
    let chi_square = (expected_mean > 0.0).then(|| chi_square_poisson(&counts, expected_mean));
    Ok(CountLawOutcome { expected_mean, mean: MeanSe::of(&as_f), chi_square, all_empty })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_space::{Basis, MarkedParticle};
    use crate::habitat::{Habitat, Tolerances};
    use crate::mark_space::SigmaLadder;
    use crate::rng::path_rng;
    use rand_distr::{Distribution, Poisson};

    fn demo() -> Dynamics {
        Dynamics::new(Habitat::interval(5.0, 1.0).unwrap(), DepartureModel::constant(1.0).unwrap())
            .with_tolerances(Tolerances::tight())
    }

    fn theta(d: &Dynamics, triples: &[[usize; 3]]) -> Theta {
        Theta::new(&Basis::new(d.habitat.window().clone()).unwrap(), &SigmaLadder::default(), triples).unwrap()
    }

    #[test]
    fn chi_square_accepts_poisson_and_rejects_shift() {
        let mut rng = path_rng(1, 0);
        let law = Poisson::new(5.0).unwrap();
        let counts: Vec<usize> = (0..10_000).map(|_| law.sample(&mut rng) as usize).collect();
        assert!(chi_square_poisson(&counts, 5.0).p_value > 0.01);
        assert!(chi_square_poisson(&counts, 5.3).p_value < 0.01);
        let other: Vec<usize> = (0..10_000).map(|_| law.sample(&mut rng) as usize).collect();
        assert!(chi_square_two_sample(&counts, &other).p_value > 0.01);
        let shifted: Vec<usize> = other.iter().map(|c| c + 1).collect();
        assert!(chi_square_two_sample(&counts, &shifted).p_value < 0.01);
    }

    #[test]
    fn ks_detects_wrong_rate() {
        let mut rng = path_rng(2, 0);
        let xs: Vec<f64> = (0..20_000).map(|_| -rng.random::<f64>().ln()).collect();
        assert!(ks_statistic(&xs, |x| 1.0 - (-x).exp()) < ks_critical(xs.len()));
        assert!(ks_statistic(&xs, |x| 1.0 - (-1.1 * x).exp()) > ks_critical(xs.len()));
    }

    #[test]
    fn trivial_theta_gives_zero_residuals() {
        let d = demo();
        let zero = theta(&d, &[]);
        let law = InitialLaw::empty();
        assert_eq!(fokker_planck_residual(&zero, &law, 1.0, 16, &d).unwrap(), 0.0);
        let sides = laplace_sides(&zero, &law, 2.0, &d).unwrap();
        assert!((sides.resolvent - 0.5).abs() < 1e-12 && (sides.law - 0.5).abs() < 1e-10);
    }

    #[test]
    fn explicit_law_of_poisson_start() {
        let d = demo();
        let th = theta(&d, &[[1, 2, 1]]);
        let stationary = InitialLaw::stationary(&d).unwrap();
        let law = ExplicitLaw::new(&stationary, &th, &d).unwrap();
        let pi = law.expectation(0.0).unwrap();
        for t in [0.5, 2.0, 7.0] {
            assert!((law.expectation(t).unwrap() - pi).abs() < 1e-9);
        }
    }

    #[test]
    fn aged_moments_match_direct_sum_for_dirac() {
        let d = demo();
        let th = theta(&d, &[[1, 2, 1], [3, 3, 2]]);
        let c = MarkedConfiguration::new(vec![
            MarkedParticle { x: vec![1.0], alpha: 0.2 },
            MarkedParticle { x: vec![3.0], alpha: 1.2 },
        ])
        .unwrap();
        let law = InitialLaw::dirac(c.clone());
        let drift = drift_of(&th, &d.model);
        let (e, _) = law.aged_moments(&th, &drift, 0.0, &d).unwrap();
        assert!((e - th.functional(&c)).abs() < 1e-15);
        let conv = InitialLaw::Convolution { parts: vec![law.clone(), law.clone()] };
        let (e2, _) = conv.aged_moments(&th, &drift, 0.7, &d).unwrap();
        let (e1, _) = law.aged_moments(&th, &drift, 0.7, &d).unwrap();
        assert!((e2 - e1 * e1).abs() < 1e-15);
    }

    #[test]
    fn midpoint_bias_is_second_order_and_h_is_derivative() {
        let d = demo();
        let th = theta(&d, &[[1, 2, 1], [3, 3, 2]]);
        let witness = theta(&d, &[[2, 1, 1]]);
        let law = InitialLaw::dirac(
            MarkedConfiguration::new(vec![MarkedParticle { x: vec![1.5], alpha: 0.3 }]).unwrap(),
        );
        let b = MidpointBias::new(&th, &witness, &law, 0.5, 1.5, &d).unwrap();
        let (b4, b8, b16) = (b.at(4).unwrap(), b.at(8).unwrap(), b.at(16).unwrap());
        assert!((b4 / b8 - 4.0).abs() < 0.2 && (b8 / b16 - 4.0).abs() < 0.1, "{b4} {b8} {b16}");
        // h against a central difference of H
        let u = 0.9;
        let h = 1e-4;
        let fd = (b.big_h(u + h).unwrap() - b.big_h(u - h).unwrap()) / (2.0 * h);
        assert!((fd - b.small_h(u).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn ergodicity_requires_positive_floor() {
        let d = Dynamics::new(Habitat::interval(5.0, 1.0).unwrap(), DepartureModel::constant(0.0).unwrap());
        let th = theta(&d, &[[1, 2, 1]]);
        assert!(ergodicity_check(&th, &InitialLaw::empty(), &[1.0], &d).is_err());
    }

    #[test]
    fn count_law_at_time_zero_is_empty() {
        let out = count_law_oracle(&demo(), 0.0, 100, 3).unwrap();
        assert!(out.all_empty && out.expected_mean == 0.0);
    }

    #[test]
    fn report_csv() {
        let r = VerificationReport::within("x", "y", 0.5, 1.0).with_seed(3, 10).with_note("a \"b\"");
        let mut buf = Vec::new();
        write_reports_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "x,y,0.5,1,true,3,10,\"a 'b'\"");
        assert!(r.line().starts_with("PASS x"));
    }
}
