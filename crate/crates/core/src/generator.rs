//! The Kolmogorov operator, the flow `θ_t`, and the explicit semigroup and
//! resolvent.
//!
//! For a test function `φ` and `F^φ = Π (1 + φ)`,
//!
//! ```text
//! (L F^φ)(γ̂) = F^φ(γ̂) [ Σ_{x̂ ∈ γ̂} (∂_α φ − m φ)(x̂) / (1 + φ(x̂)) + ∫ φ(x, 0) χ(dx) ]
//! ```
//!
//! which for `φ = θ = e^{−g} − 1` is the aging term `−(Σ g′) F`, the
//! departure term `Σ m [F(γ̂ ∖ x̂) − F(γ̂)]` and the arrival term
//! `F ∫ θ(x, 0) χ(dx)`. The semigroup acts by
//! `F^φ_t(γ̂) = exp(ϱ_{[0,t)}(φ)) F^{φ_t}(γ̂)` with
//! `ϱ_{[a,b)}(φ) = ∫_a^b ∫ φ(x, α) e^{−M(x, α)} χ(dx) dα`.

use std::cell::RefCell;

use serde::Serialize;

use crate::config_space::MarkedConfiguration;
use crate::error::{Error, Result};
use crate::habitat::{DepartureModel, Dynamics};
use crate::mark_space::derivative_constant;
use crate::quadrature::{gauss_kronrod, Estimate, NestedErrors};
use crate::sampler::integrate_window;
use crate::test_functions::{TestFunction, Theta};

/// `φ_t(x, α) = φ(x, α + t) q_t(x, α)` with `q_t = exp(M(x, α) − M(x, α + t))`.
#[derive(Debug, Clone, Copy)]
pub struct Flowed<'a, T: ?Sized> {
    pub base: &'a T,
    pub t: f64,
    pub model: &'a DepartureModel,
}

/// `θ ↦ θ_t`.
pub fn flow<'a, T: TestFunction + ?Sized>(base: &'a T, t: f64, model: &'a DepartureModel) -> Result<Flowed<'a, T>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("flow time must be finite and >= 0, got {t}")));
    }
    Ok(Flowed { base, t, model })
}

impl<T: TestFunction + ?Sized> Flowed<'_, T> {
    /// `q_t(x, α)`.
    pub fn survival(&self, x: &[f64], age: f64) -> f64 {
        self.model.survival(x, age, self.t)
    }
}

impl<T: TestFunction + ?Sized> TestFunction for Flowed<'_, T> {
    fn value(&self, x: &[f64], age: f64) -> f64 {
        if self.t == 0.0 {
            return self.base.value(x, age);
        }
        self.base.value(x, age + self.t) * self.survival(x, age)
    }

    fn age_derivative(&self, x: &[f64], age: f64) -> f64 {
        if self.t == 0.0 {
            return self.base.age_derivative(x, age);
        }
        let later = age + self.t;
        let dm = self.model.rate(x, later) - self.model.rate(x, age);
        (self.base.age_derivative(x, later) - self.base.value(x, later) * dm) * self.survival(x, age)
    }

    fn breakpoints(&self) -> Vec<Vec<f64>> {
        self.base.breakpoints()
    }
}

/// Residual of `∂_t φ_t = ∂_α φ_t − m φ_t` at `(x, α)`, with `∂_t` by a
/// central difference of step `h` and the right side analytic.
///
/// Falls back to a forward difference when `t < h`.
pub fn flow_pde_residual<T: TestFunction + ?Sized>(
    phi: &T,
    model: &DepartureModel,
    t: f64,
    x: &[f64],
    age: f64,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {h}")));
    }
    let at = |s: f64| flow(phi, s, model).map(|f| f.value(x, age));
    let dt = if t >= h { (at(t + h)? - at(t - h)?) / (2.0 * h) } else { (at(t + h)? - at(t)?) / h };
    let ft = flow(phi, t, model)?;
    let rhs = ft.age_derivative(x, age) - model.rate(x, age) * ft.value(x, age);
    Ok(dt - rhs)
}

/// `∫ φ(x, 0) χ(dx)`.
pub fn arrival_integral<T: TestFunction + ?Sized>(phi: &T, dynamics: &Dynamics) -> Result<Estimate> {
    dynamics.habitat.chi_integral(|x| phi.value(x, 0.0), &phi.breakpoints(), dynamics.tol.chi)
}

/// The three parts of `(L F^φ)(γ̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorTerms {
    pub aging: f64,
    pub departure: f64,
    pub arrival: f64,
}

impl GeneratorTerms {
    pub fn total(&self) -> f64 {
        self.aging + self.departure + self.arrival
    }
}

/// `(L F^φ)(γ̂)` given the arrival integral `∫ φ(x, 0) χ(dx)`.
pub fn generator_terms<T: TestFunction + ?Sized>(
    phi: &T,
    c: &MarkedConfiguration,
    model: &DepartureModel,
    arrival: f64,
) -> GeneratorTerms {
    let f = phi.functional(c);
    let (mut aging, mut departure) = (0.0, 0.0);
    for p in c.particles() {
        let one_plus = phi.one_plus(&p.x, p.alpha);
        aging += phi.age_derivative(&p.x, p.alpha) / one_plus;
        departure -= model.rate(&p.x, p.alpha) * phi.value(&p.x, p.alpha) / one_plus;
    }
    GeneratorTerms { aging: f * aging, departure: f * departure, arrival: f * arrival }
}

/// `(L F^φ)(γ̂)`.
pub fn apply_generator<T: TestFunction + ?Sized>(phi: &T, c: &MarkedConfiguration, dynamics: &Dynamics) -> Result<f64> {
    let arrival = arrival_integral(phi, dynamics)?.value;
    Ok(generator_terms(phi, c, &dynamics.model, arrival).total())
}

/// `P(t) = ϱ_{[0,t)}(f)`, cached on a grid of knots.
///
/// `P` at a knot is a sum of panel integrals; between knots one short
/// integral is added.
pub struct ArrivalExponent<'a> {
    f: Box<ExponentIntegrand<'a>>,
    dynamics: &'a Dynamics,
    breaks: Vec<Vec<f64>>,
    cumulative: RefCell<Vec<f64>>,
}

type ExponentIntegrand<'a> = dyn Fn(&[f64], f64) -> f64 + 'a;

const KNOT_SPACING: f64 = 0.25;

impl<'a> ArrivalExponent<'a> {
    /// `P` for `f = φ`.
    pub fn new<T: TestFunction + ?Sized>(phi: &'a T, dynamics: &'a Dynamics) -> Self {
        Self::from_fn(move |x, u| phi.value(x, u), phi.breakpoints(), dynamics)
    }

    pub fn from_fn<F>(f: F, breaks: Vec<Vec<f64>>, dynamics: &'a Dynamics) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + 'a,
    {
        ArrivalExponent { f: Box::new(f), dynamics, breaks, cumulative: RefCell::new(vec![0.0]) }
    }

    pub fn dynamics(&self) -> &'a Dynamics {
        self.dynamics
    }

    /// `ϱ_{[a,b)}(f)` directly.
    pub fn between(&self, a: f64, b: f64) -> Result<Estimate> {
        integrate_window(
            &self.dynamics.habitat,
            &self.dynamics.model,
            &self.breaks,
            &*self.f,
            a,
            b,
            0.1 * self.dynamics.tol.chi * (b - a).max(1.0),
        )
    }

    /// `P(t)`.
    pub fn at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
        }
        let i = (t / KNOT_SPACING).floor() as usize;
        let mut cum = self.cumulative.borrow_mut();
        while cum.len() <= i {
            let j = cum.len() - 1;
            let next = cum[j] + self.between(j as f64 * KNOT_SPACING, (j + 1) as f64 * KNOT_SPACING)?.value;
            cum.push(next);
        }
        let head = cum[i];
        drop(cum);
        Ok(head + self.between(i as f64 * KNOT_SPACING, t)?.value)
    }

    /// `P′(t) = ∫ f(x, t) e^{−M(x, t)} χ(dx)`; for `f = φ` this is `∫ φ_t(x, 0) χ(dx)`.
    pub fn rate(&self, t: f64) -> Result<f64> {
        let model = &self.dynamics.model;
        Ok(self
            .dynamics
            .habitat
            .chi_integral(|x| (self.f)(x, t) * (-model.hazard(x, t)).exp(), &self.breaks, self.dynamics.tol.chi)?
            .value)
    }
}

/// `F^φ_t(γ̂) = exp(ϱ_{[0,t)}(φ)) F^{φ_t}(γ̂)`.
///
/// For an offset `s` pass `φ = θ_s`.
pub fn explicit_solution<T: TestFunction + ?Sized>(
    phi: &T,
    t: f64,
    c: &MarkedConfiguration,
    dynamics: &Dynamics,
) -> Result<f64> {
    explicit_solution_with(phi, &ArrivalExponent::new(phi, dynamics), t, c)
}

/// [`explicit_solution`] reusing a cached exponent built for `phi`.
pub fn explicit_solution_with<T: TestFunction + ?Sized>(
    phi: &T,
    exponent: &ArrivalExponent<'_>,
    t: f64,
    c: &MarkedConfiguration,
) -> Result<f64> {
    let flowed = flow(phi, t, &exponent.dynamics.model)?;
    Ok(exponent.at(t)?.exp() * flowed.functional(c))
}

/// `(L F^φ_t)(γ̂) = exp(ϱ_{[0,t)}(φ)) (L F^{φ_t})(γ̂)`.
pub fn generator_of_solution<T: TestFunction + ?Sized>(
    phi: &T,
    exponent: &ArrivalExponent<'_>,
    t: f64,
    c: &MarkedConfiguration,
) -> Result<f64> {
    let flowed = flow(phi, t, &exponent.dynamics.model)?;
    let arrival = exponent.rate(t)?;
    Ok(exponent.at(t)?.exp() * generator_terms(&flowed, c, &exponent.dynamics.model, arrival).total())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KolmogorovResidual {
    pub residual: f64,
    /// Forward difference used because `t < h`; the contract is then `O(h)`.
    pub forward: bool,
}

/// `|(F^φ_{t+h} − F^φ_{t−h}) / 2h − (L F^φ_t)|` at `γ̂`.
pub fn kolmogorov_residual<T: TestFunction + ?Sized>(
    phi: &T,
    t: f64,
    c: &MarkedConfiguration,
    h: f64,
    dynamics: &Dynamics,
) -> Result<KolmogorovResidual> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {h}")));
    }
    let exponent = ArrivalExponent::new(phi, dynamics);
    let model = &dynamics.model;
    let base = exponent.at(t)?;
    let f_at = |s: f64| flow(phi, s, model).map(|f| f.functional(c));
    // Differences of the exponent are integrated directly to avoid cancellation.
    let forward = t < h;
    let derivative = if forward {
        let up = exponent.between(t, t + h)?.value;
        base.exp() * (up.exp() * f_at(t + h)? - f_at(t)?) / h
    } else {
        let up = exponent.between(t, t + h)?.value;
        let down = exponent.between(t - h, t)?.value;
        base.exp() * (up.exp() * f_at(t + h)? - (-down).exp() * f_at(t - h)?) / (2.0 * h)
    };
    let lf = generator_of_solution(phi, &exponent, t, c)?;
    Ok(KolmogorovResidual { residual: (derivative - lf).abs(), forward })
}

/// Resolvent horizon `T = 40/λ`.
pub const RESOLVENT_HORIZON: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventValue {
    pub value: f64,
    pub error: f64,
    /// `e^{−λT}/λ`, the mass of the discarded tail.
    pub truncation: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("resolvent parameter must be > 0, got {lambda}")));
    }
    Ok(())
}

pub(crate) fn laplace<F: Fn(f64) -> Result<f64>>(f: F, lambda: f64, abs_tol: f64) -> Result<ResolventValue> {
    let horizon = RESOLVENT_HORIZON / lambda;
    let nested = NestedErrors::default();
    let est = gauss_kronrod(|t| nested.absorb(f(t).map(|v| Estimate { value: (-lambda * t).exp() * v, error: 0.0 })), 0.0, horizon, abs_tol, 0.0);
    let est = nested.check(est)?;
    Ok(ResolventValue { value: est.value, error: est.error, truncation: (-lambda * horizon).exp() / lambda })
}

/// `F_{λ,φ}(γ̂) = ∫₀^∞ e^{−λt} F^φ_t(γ̂) dt`, for an offset pass `φ = θ_s`.
pub fn resolvent<T: TestFunction + ?Sized>(
    phi: &T,
    lambda: f64,
    c: &MarkedConfiguration,
    dynamics: &Dynamics,
) -> Result<ResolventValue> {
    check_lambda(lambda)?;
    let exponent = ArrivalExponent::new(phi, dynamics);
    laplace(|t| explicit_solution_with(phi, &exponent, t, c), lambda, dynamics.tol.time)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventIdentity {
    pub resolvent: ResolventValue,
    /// `L F_{λ,φ}`, with `L` taken under the integral.
    pub generator: ResolventValue,
    pub functional: f64,
    pub residual: f64,
    /// Combined quadrature error estimate of the three terms.
    pub quadrature_error: f64,
}

/// `|L F_{λ,φ} − λ F_{λ,φ} + F^φ|` at `γ̂`.
pub fn resolvent_identity_residual<T: TestFunction + ?Sized>(
    phi: &T,
    lambda: f64,
    c: &MarkedConfiguration,
    dynamics: &Dynamics,
) -> Result<ResolventIdentity> {
    check_lambda(lambda)?;
    let exponent = ArrivalExponent::new(phi, dynamics);
    let resolvent = laplace(|t| explicit_solution_with(phi, &exponent, t, c), lambda, dynamics.tol.time)?;
    let generator = laplace(|t| generator_of_solution(phi, &exponent, t, c), lambda, dynamics.tol.time)?;
    let functional = phi.functional(c);
    let residual = (generator.value - lambda * resolvent.value + functional).abs();
    let quadrature_error =
        generator.error + lambda * resolvent.error + generator.truncation * 2.0 + lambda * resolvent.truncation;
    Ok(ResolventIdentity { resolvent, generator, functional, residual, quadrature_error })
}

/// Quantitative constants attached to `θ` and the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorBounds {
    /// `J_θ`.
    pub j_count: usize,
    /// `χ(g(·, 0))`.
    pub chi_g0: f64,
    /// `χ(|θ(·, 0)|)`.
    pub chi_abs_theta0: f64,
    /// `ℓ_θ = χ(g(·,0)) + m_* e^{J−1} + (σ̄c + 2m_*) e^{J}`, bounding `|L F^θ_t|` uniformly in `t`.
    pub ell_theta: f64,
    /// `χ(|θ(·,0)|) + m_* e^{J−1} + σ̄c/e`, bounding `|L F^θ|`.
    pub generator_bound: f64,
    /// `c̄ = exp(−σ̄ 2^{2/3}/3)`.
    pub c_bar: f64,
    /// `c̄_θ = c̄ / 2J_θ`.
    pub c_bar_theta: f64,
    /// `τ_* = 1/(m_* e^{J_θ})`.
    pub tau_star: f64,
    /// `c = sup |u_1′|`.
    pub c_const: f64,
    pub sigma_bar: f64,
}

pub fn compute_bounds(theta: &Theta, dynamics: &Dynamics) -> Result<GeneratorBounds> {
    let j = theta.j_count() as f64;
    let m_star = dynamics.model.m_star();
    let breaks = theta.breakpoints();
    let chi_g0 = dynamics.habitat.chi_integral(|x| theta.g(x, 0.0), &breaks, dynamics.tol.chi)?.value;
    let chi_abs_theta0 =
        dynamics.habitat.chi_integral(|x| theta.value(x, 0.0).abs(), &breaks, dynamics.tol.chi)?.value;
    let sigma_bar = theta.ladder().sigma_bar();
    let c_const = derivative_constant();
    let c_bar = theta.ladder().c_bar();
    let ell_theta = chi_g0 + m_star * (j - 1.0).exp() + (sigma_bar * c_const + 2.0 * m_star) * j.exp();
    let generator_bound = chi_abs_theta0 + m_star * (j - 1.0).exp() + sigma_bar * c_const / std::f64::consts::E;
    Ok(GeneratorBounds {
        j_count: theta.j_count(),
        chi_g0,
        chi_abs_theta0,
        ell_theta,
        generator_bound,
        c_bar,
        c_bar_theta: if j > 0.0 { c_bar / (2.0 * j) } else { f64::INFINITY },
        tau_star: if m_star > 0.0 { 1.0 / (m_star * j.exp()) } else { f64::INFINITY },
        c_const,
        sigma_bar,
    })
}

/// `g_t = −ln(1 + θ_t)`.
pub fn flowed_g<T: TestFunction + ?Sized>(flowed: &Flowed<'_, T>, x: &[f64], age: f64) -> f64 {
    -(flowed.value(x, age)).ln_1p()
}
