//! Exponential test functions and their functionals.
//!
//! A [`Theta`] is a finite list of index triples `(s, k, n)`; it defines
//! `g(x, α) = Σ v_s(x) w_{k,n}(α)`, `θ = e^{−g} − 1` and the functional
//! `F^θ(γ̂) = Π_{x̂ ∈ γ̂} (1 + θ(x̂)) = exp(−Σ g(x̂))`.

use serde::{Deserialize, Serialize};

use crate::config_space::{Basis, BasisFunction, MarkedConfiguration, MarkedParticle};
use crate::error::{Error, Result};
use crate::mark_space::{u_basis, u_basis_derivative, SigmaLadder};
use crate::sampler::IntensityMeasure;

/// A function `φ(x, α) ∈ (−1, 0]` with an age derivative, used as the
/// exponent of `F^φ = Π (1 + φ)`.
pub trait TestFunction: Sync {
    fn value(&self, x: &[f64], age: f64) -> f64;

    /// `∂_α φ(x, α)`.
    fn age_derivative(&self, x: &[f64], age: f64) -> f64;

    /// `1 + φ(x, α)`; override when it can be formed without cancellation.
    fn one_plus(&self, x: &[f64], age: f64) -> f64 {
        1.0 + self.value(x, age)
    }

    /// Per-axis locations where `φ` fails to be smooth in `x`.
    fn breakpoints(&self) -> Vec<Vec<f64>>;

    /// `F^φ(γ̂)`.
    fn functional(&self, c: &MarkedConfiguration) -> f64 {
        c.particles().iter().map(|p| self.one_plus(&p.x, p.alpha)).product()
    }
}

/// One summand `v_s(x) w_{k,n}(α)` of `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub s: usize,
    pub k: usize,
    pub n: usize,
    pub v: BasisFunction,
    sigma: f64,
}

impl Term {
    #[inline]
    fn eval(&self, x: &[f64], age: f64) -> f64 {
        let v = self.v.eval(x);
        if v == 0.0 || self.sigma == 0.0 {
            return v;
        }
        v * (-self.sigma * u_basis(self.n, age)).exp()
    }

    /// `v_s(x) w′_{k,n}(α)`.
    #[inline]
    fn eval_derivative(&self, x: &[f64], age: f64) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        let v = self.v.eval(x);
        if v == 0.0 {
            return 0.0;
        }
        -self.sigma * u_basis_derivative(self.n, age) * v * (-self.sigma * u_basis(self.n, age)).exp()
    }
}

/// `θ = e^{−g} − 1` for `g = Σ_j v_{s_j} w_{k_j, n_j}`.
#[derive(Debug, Clone)]
pub struct Theta {
    basis: Basis,
    ladder: SigmaLadder,
    terms: Vec<Term>,
}

impl Theta {
    pub fn new(basis: &Basis, ladder: &SigmaLadder, triples: &[[usize; 3]]) -> Result<Self> {
        let mut terms = Vec::with_capacity(triples.len());
        for &[s, k, n] in triples {
            if s == 0 || k == 0 || n == 0 {
                return Err(Error::Config(format!("theta indices start at 1, got [{s}, {k}, {n}]")));
            }
            terms.push(Term { s, k, n, v: basis.v_enumerate(s), sigma: ladder.sigma(k) });
        }
        Ok(Theta { basis: basis.clone(), ladder: *ladder, terms })
    }

    /// `θ ≡ 0`.
    pub fn zero(basis: &Basis, ladder: &SigmaLadder) -> Self {
        Theta { basis: basis.clone(), ladder: *ladder, terms: Vec::new() }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn triples(&self) -> Vec<[usize; 3]> {
        self.terms.iter().map(|t| [t.s, t.k, t.n]).collect()
    }

    /// `J_θ`.
    pub fn j_count(&self) -> usize {
        self.terms.len()
    }

    pub fn ladder(&self) -> &SigmaLadder {
        &self.ladder
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    /// `g(x, α)`.
    pub fn g(&self, x: &[f64], age: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(x, age)).sum()
    }

    /// `g′(x, α) = ∂_α g`.
    pub fn g_derivative(&self, x: &[f64], age: f64) -> f64 {
        self.terms.iter().map(|t| t.eval_derivative(x, age)).sum()
    }

    /// `θ ⋆ θ′`: concatenated terms, so `1 + θ⋆θ′ = (1 + θ)(1 + θ′)`.
    pub fn star(&self, other: &Theta) -> Result<Theta> {
        if self.basis != other.basis || self.ladder != other.ladder {
            return Err(Error::Config("star product needs a shared basis and sigma ladder".into()));
        }
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Ok(Theta { basis: self.basis.clone(), ladder: self.ladder, terms })
    }

    pub fn from_json_str(basis: &Basis, ladder: &SigmaLadder, s: &str) -> Result<Self> {
        let triples: Vec<[usize; 3]> = serde_json::from_str(s)?;
        Theta::new(basis, ladder, &triples)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.triples()).expect("triples serialize")
    }
}

impl TestFunction for Theta {
    fn value(&self, x: &[f64], age: f64) -> f64 {
        (-self.g(x, age)).exp_m1()
    }

    fn age_derivative(&self, x: &[f64], age: f64) -> f64 {
        let mut g = 0.0;
        let mut dg = 0.0;
        for t in &self.terms {
            g += t.eval(x, age);
            dg += t.eval_derivative(x, age);
        }
        -dg * (-g).exp()
    }

    fn one_plus(&self, x: &[f64], age: f64) -> f64 {
        (-self.g(x, age)).exp()
    }

    fn breakpoints(&self) -> Vec<Vec<f64>> {
        let d = self.basis.dim();
        let mut out = vec![Vec::new(); d];
        for t in &self.terms {
            for (axis, b) in out.iter_mut().enumerate() {
                b.extend_from_slice(&t.v.breakpoints(axis));
            }
        }
        for b in &mut out {
            b.sort_by(f64::total_cmp);
            b.dedup();
        }
        out
    }

    fn functional(&self, c: &MarkedConfiguration) -> f64 {
        f_theta(self, c)
    }
}

/// Serialized form of a [`Theta`]: its `[s, k, n]` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThetaSpec(pub Vec<[usize; 3]>);

/// `g(x̂)`.
pub fn g_eval(theta: &Theta, p: &MarkedParticle) -> f64 {
    theta.g(&p.x, p.alpha)
}

/// `θ(x̂)`.
pub fn theta_eval(theta: &Theta, p: &MarkedParticle) -> f64 {
    theta.value(&p.x, p.alpha)
}

/// `θ ⋆ θ′`.
pub fn star_product(a: &Theta, b: &Theta) -> Result<Theta> {
    a.star(b)
}

/// `F^θ(γ̂) = exp(−Σ g(x̂))`.
pub fn f_theta(theta: &Theta, c: &MarkedConfiguration) -> f64 {
    (-c.particles().iter().map(|p| theta.g(&p.x, p.alpha)).sum::<f64>()).exp()
}

/// `π_ϱ(F^φ) = exp(∫ φ dϱ)` for a Poisson law.
pub fn poisson_expectation<T: TestFunction>(phi: &T, intensity: &IntensityMeasure, abs_tol: f64) -> Result<f64> {
    Ok(intensity.integrate(phi, |x, a| phi.value(x, a), abs_tol)?.value.exp())
}

/// `(μ₁ ⋆ μ₂)(F^θ) = μ₁(F^θ) μ₂(F^θ)`.
pub fn convolution_expectation(mu1: f64, mu2: f64) -> f64 {
    mu1 * mu2
}

/// `1 + φ = (1 + a)(1 + b)` for arbitrary test functions.
pub struct Product<'a, A: ?Sized, B: ?Sized> {
    pub a: &'a A,
    pub b: &'a B,
}

impl<A: TestFunction + ?Sized, B: TestFunction + ?Sized> TestFunction for Product<'_, A, B> {
    fn value(&self, x: &[f64], age: f64) -> f64 {
        let (a, b) = (self.a.value(x, age), self.b.value(x, age));
        a + b + a * b
    }

    fn age_derivative(&self, x: &[f64], age: f64) -> f64 {
        self.a.age_derivative(x, age) * self.b.one_plus(x, age)
            + self.b.age_derivative(x, age) * self.a.one_plus(x, age)
    }

    fn one_plus(&self, x: &[f64], age: f64) -> f64 {
        self.a.one_plus(x, age) * self.b.one_plus(x, age)
    }

    fn breakpoints(&self) -> Vec<Vec<f64>> {
        let mut out = self.a.breakpoints();
        for (axis, extra) in self.b.breakpoints().into_iter().enumerate() {
            if axis >= out.len() {
                out.push(Vec::new());
            }
            out[axis].extend(extra);
            out[axis].sort_by(f64::total_cmp);
            out[axis].dedup();
        }
        out
    }
}
