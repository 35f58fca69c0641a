//! Habitat window, arrival measure and departure models.
//!
//! The habitat is a box `Λ ⊂ ℝ^d` carrying an absolutely continuous arrival
//! measure `χ(dx) = density(x) dx`. Particles depart at rate `m(x, α)`
//! depending on location and age; `M(x, α) = ∫₀^α m(x, β) dβ` is the
//! cumulative hazard.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, gauss_kronrod_pieces, Estimate, NestedErrors};

/// Axis-aligned box `Π [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Window {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let w = Window { lower, upper };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() {
            return Err(Error::Config("window must have at least one axis".into()));
        }
        if self.lower.len() != self.upper.len() {
            return Err(Error::DimensionMismatch { expected: self.lower.len(), found: self.upper.len() });
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::Config(format!("window axis {i}: need finite lower < upper, got [{l}, {u}]")));
            }
        }
        Ok(())
    }

    pub fn unit(dim: usize) -> Self {
        Window { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    /// Whether `other` lies inside this box.
    pub fn covers(&self, other: &Window) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| other.lower[i] >= self.lower[i] && other.upper[i] <= self.upper[i])
    }

    /// The `2^d` corners of the box.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| (0..d).map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] }).collect())
            .collect()
    }
}

/// Parametric families for the arrival density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityFamily {
    /// Constant density.
    Uniform { value: f64 },
    /// `intercept + Σ slope_i x_i`, required nonnegative on the window.
    Linear { intercept: f64, slope: Vec<f64> },
}

impl DensityFamily {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            DensityFamily::Uniform { value } => *value,
            DensityFamily::Linear { intercept, slope } => {
                intercept + slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>()
            }
        }
    }
}

/// Box window plus arrival measure `χ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Habitat {
    window: Window,
    density: DensityFamily,
    chi_mass: f64,
    density_sup: f64,
}

impl Habitat {
    pub fn new(window: Window, density: DensityFamily) -> Result<Self> {
        window.validate()?;
        let corners = window.corners();
        let (chi_mass, density_sup) = match &density {
            DensityFamily::Uniform { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(Error::Config(format!("uniform density must be finite and >= 0, got {value}")));
                }
                (value * window.volume(), *value)
            }
            DensityFamily::Linear { intercept, slope } => {
                if slope.len() != window.dim() {
                    return Err(Error::DimensionMismatch { expected: window.dim(), found: slope.len() });
                }
                if !intercept.is_finite() || slope.iter().any(|s| !s.is_finite()) {
                    return Err(Error::Config("linear density parameters must be finite".into()));
                }
                // Affine: extremes are attained at corners.
                let values: Vec<f64> = corners.iter().map(|c| density.eval(c)).collect();
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                if min < 0.0 {
                    return Err(Error::Config(format!("linear density is negative on the window (min {min})")));
                }
                let sup = values.iter().copied().fold(0.0, f64::max);
                (window.volume() * density.eval(&window.midpoint()), sup)
            }
        };
        Ok(Habitat { window, density, chi_mass, density_sup })
    }

    /// Uniform density `value` on `[0, length]`.
    pub fn interval(length: f64, value: f64) -> Result<Self> {
        Habitat::new(Window::new(vec![0.0], vec![length])?, DensityFamily::Uniform { value })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn density_family(&self) -> &DensityFamily {
        &self.density
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    pub fn chi_mass(&self) -> f64 {
        self.chi_mass
    }

    pub fn density_sup(&self) -> f64 {
        self.density_sup
    }

    /// Density of `χ` at `x` (zero outside the window).
    pub fn chi_density(&self, x: &[f64]) -> f64 {
        if self.window.contains(x) {
            self.density.eval(x)
        } else {
            0.0
        }
    }

    /// Draws a location from `χ|Λ / χ(Λ)` by rejection from the uniform law.
    pub fn chi_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        if self.chi_mass <= 0.0 {
            return Err(Error::DegenerateArrival("χ(Λ) = 0".into()));
        }
        Ok(self.chi_sample_unchecked(rng))
    }

    pub(crate) fn chi_sample_unchecked<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let mut x = vec![0.0; d];
        loop {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = self.window.lower[i] + self.window.side(i) * rng.random::<f64>();
            }
            if matches!(self.density, DensityFamily::Uniform { .. }) {
                return x;
            }
            if rng.random::<f64>() * self.density_sup < self.density.eval(&x) {
                return x;
            }
        }
    }

    /// `∫_Λ f(x) χ(dx)`.
    ///
    /// For `d ≤ 2` this is nested adaptive Gauss–Kronrod split at the given
    /// per-axis breakpoints; for `d ≥ 3` it is a seeded Monte Carlo estimate
    /// whose `error` is the standard error.
    pub fn chi_integral<F: Fn(&[f64]) -> f64>(&self, f: F, breaks: &[Vec<f64>], abs_tol: f64) -> Result<Estimate> {
        let no_breaks: Vec<f64> = Vec::new();
        let axis_breaks = |i: usize| breaks.get(i).unwrap_or(&no_breaks);
        let w = &self.window;
        let est = match self.dim() {
            1 => gauss_kronrod_pieces(
                |x0| {
                    let p = [x0];
                    f(&p) * self.density.eval(&p)
                },
                w.lower[0],
                w.upper[0],
                axis_breaks(0),
                abs_tol,
                0.0,
            )?,
            2 => {
                let nested = NestedErrors::default();
                let inner_tol = abs_tol / (2.0 * w.side(0));
                let outer = gauss_kronrod_pieces(
                    |x0| {
                        nested.absorb(gauss_kronrod_pieces(
                            |x1| {
                                let p = [x0, x1];
                                f(&p) * self.density.eval(&p)
                            },
                            w.lower[1],
                            w.upper[1],
                            axis_breaks(1),
                            inner_tol,
                            0.0,
                        ))
                    },
                    w.lower[0],
                    w.upper[0],
                    axis_breaks(0),
                    0.5 * abs_tol,
                    0.0,
                );
                let mut est = nested.check(outer)?;
                est.error += nested.max_inner_error() * w.side(0);
                est
            }
            _ => self.chi_integral_monte_carlo(&f, MC_CHI_SAMPLES, MC_CHI_SEED),
        };
        if !est.value.is_finite() {
            return Err(Error::NonFinite("χ-integral"));
        }
        Ok(est)
    }

    fn chi_integral_monte_carlo<F: Fn(&[f64]) -> f64>(&self, f: &F, n: usize, seed: u64) -> Estimate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vol = self.window.volume();
        let d = self.dim();
        let mut x = vec![0.0; d];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = self.window.lower[i] + self.window.side(i) * rng.random::<f64>();
            }
            let v = f(&x) * self.density.eval(&x) * vol;
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        Estimate { value: mean, error: (var / n as f64).sqrt() }
    }
}

const MC_CHI_SAMPLES: usize = 200_000;
const MC_CHI_SEED: u64 = 0x05ee_dc41;

/// Spatial modulation `s(x) ∈ [0, 1]` of the separable departure family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialProfile {
    /// `s ≡ 1`.
    Unit,
    /// `s(x) = Π_i (1 + cos(2π x_i / period)) / 2`.
    Cosine { period: f64 },
}

impl SpatialProfile {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SpatialProfile::Unit => 1.0,
            SpatialProfile::Cosine { period } => {
                x.iter().map(|v| 0.5 * (1.0 + (2.0 * PI * v / period).cos())).product()
            }
        }
    }
}

type RateFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// User-supplied departure rate without a closed-form cumulative hazard.
#[derive(Clone)]
pub struct CustomRate {
    rate: Arc<RateFn>,
    m_star: f64,
    m_zero: f64,
    lipschitz: f64,
    hazard_tol: f64,
}

impl fmt::Debug for CustomRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRate")
            .field("m_star", &self.m_star)
            .field("m_zero", &self.m_zero)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

/// Departure rate `m(x, α)` with its cumulative hazard and bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DepartureModel {
    /// `m ≡ rate`.
    Constant { rate: f64 },
    /// `m(x, α) = base + amplitude · s(x) · (1 + sin(frequency · α)) / 2`.
    Separable {
        base: f64,
        amplitude: f64,
        frequency: f64,
        profile: SpatialProfile,
    },
    #[serde(skip)]
    Custom(CustomRate),
}

/// Default absolute tolerance for cumulative hazards computed by quadrature.
pub const HAZARD_TOL: f64 = 1e-10;

impl DepartureModel {
    pub fn constant(rate: f64) -> Result<Self> {
        let m = DepartureModel::Constant { rate };
        m.validate()?;
        Ok(m)
    }

    pub fn separable(base: f64, amplitude: f64, frequency: f64, profile: SpatialProfile) -> Result<Self> {
        let m = DepartureModel::Separable { base, amplitude, frequency, profile };
        m.validate()?;
        Ok(m)
    }

    /// A model given only through its rate; `M` is computed by adaptive Simpson.
    pub fn custom<F>(rate: F, m_star: f64, m_zero: f64, lipschitz: f64) -> Result<Self>
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        let m = DepartureModel::Custom(CustomRate {
            rate: Arc::new(rate),
            m_star,
            m_zero,
            lipschitz,
            hazard_tol: HAZARD_TOL,
        });
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        match self {
            DepartureModel::Constant { rate } if !ok(*rate) => {
                Err(Error::Config(format!("constant departure rate must be finite and >= 0, got {rate}")))
            }
            DepartureModel::Separable { base, amplitude, frequency, profile } => {
                if !ok(*base) || !ok(*amplitude) || !ok(*frequency) {
                    return Err(Error::Config(format!(
                        "separable departure needs base, amplitude, frequency >= 0 (got {base}, {amplitude}, {frequency})"
                    )));
                }
                if let SpatialProfile::Cosine { period } = profile {
                    if !(period.is_finite() && *period > 0.0) {
                        return Err(Error::Config(format!("cosine profile period must be > 0, got {period}")));
                    }
                }
                Ok(())
            }
            DepartureModel::Custom(c) if !(ok(c.m_star) && ok(c.m_zero) && c.m_zero <= c.m_star && ok(c.lipschitz)) => {
                Err(Error::Config("custom departure bounds must satisfy 0 <= m0 <= m*".into()))
            }
            _ => Ok(()),
        }
    }

    /// `m(x, α)`.
    pub fn rate(&self, x: &[f64], age: f64) -> f64 {
        match self {
            DepartureModel::Constant { rate } => *rate,
            DepartureModel::Separable { base, amplitude, frequency, profile } => {
                base + amplitude * profile.eval(x) * 0.5 * (1.0 + (frequency * age).sin())
            }
            DepartureModel::Custom(c) => (c.rate)(x, age),
        }
    }

    /// Upper bound `m_*`.
    pub fn m_star(&self) -> f64 {
        match self {
            DepartureModel::Constant { rate } => *rate,
            DepartureModel::Separable { base, amplitude, .. } => base + amplitude,
            DepartureModel::Custom(c) => c.m_star,
        }
    }

    /// Lower bound `m₀` (possibly zero).
    pub fn m_zero(&self) -> f64 {
        match self {
            DepartureModel::Constant { rate } => *rate,
            DepartureModel::Separable { base, .. } => *base,
            DepartureModel::Custom(c) => c.m_zero,
        }
    }

    /// Continuity modulus `ϰ(ε)` in age.
    pub fn modulus(&self, eps: f64) -> f64 {
        match self {
            DepartureModel::Constant { .. } => 0.0,
            DepartureModel::Separable { amplitude, frequency, .. } => 0.5 * amplitude * frequency * eps,
            DepartureModel::Custom(c) => c.lipschitz * eps,
        }
    }

    /// Whether `M` has a closed form for this family.
    pub fn has_closed_form(&self) -> bool {
        !matches!(self, DepartureModel::Custom(_))
    }

    /// `M(x, α)`; closed form for the parametric families.
    pub fn cumulative_hazard(&self, x: &[f64], age: f64) -> Result<f64> {
        if !(age >= 0.0) || !age.is_finite() {
            return Err(Error::Domain(format!("age must be finite and >= 0, got {age}")));
        }
        match self {
            DepartureModel::Custom(c) => self.cumulative_hazard_by_quadrature(x, age, c.hazard_tol),
            _ => Ok(self.hazard_increment(x, 0.0, age)),
        }
    }

    /// `M(x, α)` by adaptive Simpson for any family.
    pub fn cumulative_hazard_by_quadrature(&self, x: &[f64], age: f64, abs_tol: f64) -> Result<f64> {
        if !(age >= 0.0) || !age.is_finite() {
            return Err(Error::Domain(format!("age must be finite and >= 0, got {age}")));
        }
        Ok(adaptive_simpson(|b| self.rate(x, b), 0.0, age, abs_tol)?.value)
    }

    /// `M(x, α + t) − M(x, α)`, computed without cancellation for the
    /// parametric families.
    pub fn hazard_increment(&self, x: &[f64], age: f64, t: f64) -> f64 {
        match self {
            DepartureModel::Constant { rate } => rate * t,
            DepartureModel::Separable { base, amplitude, frequency, profile } => {
                let ramp = if *frequency > 0.0 {
                    // ∫ sin(ωβ) dβ over [α, α+t]
                    t + ((frequency * age).cos() - (frequency * (age + t)).cos()) / frequency
                } else {
                    t
                };
                base * t + 0.5 * amplitude * profile.eval(x) * ramp
            }
            DepartureModel::Custom(c) => adaptive_simpson(|b| (c.rate)(x, b), age, age + t, c.hazard_tol)
                .map(|e| e.value)
                .unwrap_or(f64::NAN),
        }
    }

    /// `M(x, α)` without domain checks; NaN if a custom quadrature fails.
    pub(crate) fn hazard(&self, x: &[f64], age: f64) -> f64 {
        self.hazard_increment(x, 0.0, age)
    }

    /// Survival factor `q_t(x, α) = exp(M(x, α) − M(x, α + t))`.
    pub fn survival(&self, x: &[f64], age: f64, t: f64) -> f64 {
        (-self.hazard_increment(x, age, t)).exp()
    }
}

/// Absolute tolerances for the deterministic integrals of the calculus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Integrals over `χ` and over `ϱ` (location × age).
    pub chi: f64,
    /// Integrals over time (resolvents, Laplace transforms).
    pub time: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { chi: 1e-8, time: 1e-10 }
    }
}

impl Tolerances {
    /// Budget for residual checks whose contracts sit far below the defaults.
    pub fn tight() -> Self {
        Tolerances { chi: 1e-11, time: 1e-12 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi > 0.0 && self.time > 0.0 && self.chi.is_finite() && self.time.is_finite()) {
            return Err(Error::Config("tolerances must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Habitat, departure model and quadrature budget: everything the dynamics depend on.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub habitat: Habitat,
    pub model: DepartureModel,
    pub tol: Tolerances,
}

impl Dynamics {
    pub fn new(habitat: Habitat, model: DepartureModel) -> Self {
        Dynamics { habitat, model, tol: Tolerances::default() }
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval(value: f64) -> Habitat {
        Habitat::interval(1.0, value).unwrap()
    }

    #[test]
    fn uniform_sample_mean() {
        let h = unit_interval(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| h.chi_sample(&mut rng).unwrap()[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn linear_sample_mean() {
        let h = Habitat::new(Window::unit(1), DensityFamily::Linear { intercept: 0.0, slope: vec![2.0] }).unwrap();
        assert!((h.chi_mass() - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| h.chi_sample(&mut rng).unwrap()[0]).sum::<f64>() / n as f64;
        assert!((mean - 2.0 / 3.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn zero_density_is_degenerate() {
        let h = unit_interval(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(h.chi_sample(&mut rng), Err(Error::DegenerateArrival(_))));
    }

    #[test]
    fn negative_linear_density_rejected() {
        let r = Habitat::new(Window::unit(1), DensityFamily::Linear { intercept: -0.5, slope: vec![1.0] });
        assert!(r.is_err());
    }

    #[test]
    fn chi_integral_examples() {
        let h = unit_interval(5.0);
        let one = h.chi_integral(|_| 1.0, &[], 1e-12).unwrap().value;
        assert!((one - h.chi_mass()).abs() < 1e-12);
        let lin = h.chi_integral(|x| x[0], &[], 1e-12).unwrap().value;
        assert!((lin - 2.5).abs() < 1e-12);
        assert_eq!(h.chi_integral(|_| 0.0, &[], 1e-12).unwrap().value, 0.0);
    }

    #[test]
    fn chi_integral_two_dimensional_mass() {
        let h = Habitat::new(
            Window::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap(),
            DensityFamily::Linear { intercept: 1.0, slope: vec![0.5, 0.25] },
        )
        .unwrap();
        let mass = h.chi_integral(|_| 1.0, &[], 1e-10).unwrap().value;
        assert!((mass - h.chi_mass()).abs() < 1e-9, "{mass} vs {}", h.chi_mass());
    }

    #[test]
    fn chi_integral_monte_carlo_in_three_dimensions() {
        let h = Habitat::new(Window::unit(3), DensityFamily::Uniform { value: 2.0 }).unwrap();
        let est = h.chi_integral(|x| x[0] + x[1] + x[2], &[], 1e-8).unwrap();
        assert!((est.value - 3.0).abs() < 5.0 * est.error, "{est:?}");
    }

    #[test]
    fn non_finite_integrand_is_error() {
        let h = unit_interval(1.0);
        assert!(h.chi_integral(|_| f64::NAN, &[], 1e-8).is_err());
    }

    #[test]
    fn hazard_examples() {
        let m = DepartureModel::constant(1.0).unwrap();
        assert_eq!(m.cumulative_hazard(&[0.0], 2.0).unwrap(), 2.0);
        let sep = DepartureModel::custom(|_, a: f64| 1.0 + (-a).exp(), 2.0, 1.0, 1.0).unwrap();
        let v = sep.cumulative_hazard(&[0.3], 1.0).unwrap();
        let exact = 1.0 + (1.0 - (-1.0f64).exp());
        assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
        assert!((v - 1.6321).abs() < 1e-4);
        assert_eq!(sep.cumulative_hazard(&[0.3], 0.0).unwrap(), 0.0);
        assert!(matches!(m.cumulative_hazard(&[0.0], -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(DepartureModel::constant(-1.0).is_err());
        assert!(DepartureModel::separable(1.0, -0.5, 1.0, SpatialProfile::Unit).is_err());
        assert!(DepartureModel::separable(1.0, 0.5, 1.0, SpatialProfile::Cosine { period: 0.0 }).is_err());
    }

    #[test]
    fn separable_bounds_hold_on_grid() {
        let m = DepartureModel::separable(0.5, 1.5, 2.0, SpatialProfile::Cosine { period: 3.0 }).unwrap();
        for i in 0..50 {
            let x = [i as f64 * 0.1];
            for j in 0..80 {
                let a = j as f64 * 0.25;
                let r = m.rate(&x, a);
                assert!(r >= m.m_zero() - 1e-15 && r <= m.m_star() + 1e-15);
                let t = 0.7;
                let inc = m.hazard_increment(&x, a, t);
                assert!(inc >= m.m_zero() * t - 1e-12 && inc <= m.m_star() * t + 1e-12);
                let a2 = a + 0.37;
                assert!((m.rate(&x, a) - m.rate(&x, a2)).abs() <= m.modulus(0.37) + 1e-12);
            }
        }
    }
}
