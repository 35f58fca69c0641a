//! Exact simulation of the arrival–departure–aging process on the window.
//!
//! The law at time `t` started from `γ̂` is the union of two independent
//! pieces: every particle of `γ̂` survives with probability
//! `q_t(x, α) = exp(M(x, α) − M(x, α + t))` and ages by `t`, and newcomers
//! form a Poisson field with intensity `𝟙_{[0,t)}(α) e^{−M(x,α)} χ(dx) dα`.
//! Conditional independence of departures given locations and ages gives
//! `E Π (1 + θ(aged survivors)) = Π (1 − q_t + q_t (1 + θ(x, α + t))) = F^{θ_t}`.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::config_space::{MarkedConfiguration, MarkedParticle};
use crate::error::{Error, Result};
use crate::habitat::{DepartureModel, Dynamics, Habitat};
use crate::quadrature::{gauss_kronrod, Estimate, NestedErrors};
use crate::rng::{par_paths, MeanSe};
use crate::test_functions::TestFunction;

/// Horizon of the stationary age window in units of `1/m₀`.
pub const STATIONARY_HORIZON: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityKind {
    /// `ϱ_t`, ages in `[0, t)`.
    Transient,
    /// `ϱ`, ages in `[0, A_max]`.
    Stationary,
    /// Any other age window, e.g. an aged `ϱ_t`.
    Window,
}

/// `e^{−M(x,α)} χ(dx) dα` restricted to ages in `[age_lower, age_upper)`.
#[derive(Debug, Clone, Copy)]
pub struct IntensityMeasure<'a> {
    pub kind: IntensityKind,
    pub habitat: &'a Habitat,
    pub model: &'a DepartureModel,
    pub age_lower: f64,
    pub age_upper: f64,
}

impl<'a> IntensityMeasure<'a> {
    /// `ϱ_t`.
    pub fn transient(dynamics: &'a Dynamics, t: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
        }
        Ok(IntensityMeasure {
            kind: IntensityKind::Transient,
            habitat: &dynamics.habitat,
            model: &dynamics.model,
            age_lower: 0.0,
            age_upper: t,
        })
    }

    /// `ϱ` truncated at `A_max = 40/m₀`.
    pub fn stationary(dynamics: &'a Dynamics) -> Result<Self> {
        let m0 = dynamics.model.m_zero();
        if m0 <= 0.0 {
            return Err(Error::Domain("stationary intensity requires departure rate bounded below".into()));
        }
        Ok(IntensityMeasure {
            kind: IntensityKind::Stationary,
            habitat: &dynamics.habitat,
            model: &dynamics.model,
            age_lower: 0.0,
            age_upper: STATIONARY_HORIZON / m0,
        })
    }

    /// The same density on an arbitrary age window.
    pub fn window(dynamics: &'a Dynamics, age_lower: f64, age_upper: f64) -> Result<Self> {
        if !(0.0 <= age_lower && age_lower <= age_upper && age_upper.is_finite()) {
            return Err(Error::Domain(format!("bad age window [{age_lower}, {age_upper})")));
        }
        Ok(IntensityMeasure {
            kind: IntensityKind::Window,
            habitat: &dynamics.habitat,
            model: &dynamics.model,
            age_lower,
            age_upper,
        })
    }

    /// Law of the Poisson field after thinning and aging by `s`: the age
    /// window shifts to `[a + s, b + s)` with the density unchanged.
    pub fn aged(&self, s: f64) -> Self {
        IntensityMeasure {
            kind: IntensityKind::Window,
            age_lower: self.age_lower + s,
            age_upper: self.age_upper + s,
            ..*self
        }
    }

    /// Upper bound on the mass cut off by the finite age window.
    pub fn truncation_error(&self) -> f64 {
        match self.kind {
            IntensityKind::Stationary => {
                let m0 = self.model.m_zero();
                self.habitat.chi_mass() * (-m0 * self.age_upper).exp() / m0
            }
            _ => 0.0,
        }
    }

    /// `∫_Λ e^{−M(x,u)} f(x, u) χ(dx)` at a fixed age `u`.
    pub fn age_slice<F>(&self, f: &F, breaks: &[Vec<f64>], u: f64, abs_tol: f64) -> Result<Estimate>
    where
        F: Fn(&[f64], f64) -> f64,
    {
        self.habitat.chi_integral(|x| f(x, u) * (-self.model.hazard(x, u)).exp(), breaks, abs_tol)
    }

    /// `∫∫ f dϱ` over the age window, ages outermost.
    pub fn integrate<T, F>(&self, phi: &T, f: F, abs_tol: f64) -> Result<Estimate>
    where
        T: TestFunction + ?Sized,
        F: Fn(&[f64], f64) -> f64,
    {
        integrate_window(self.habitat, self.model, &phi.breakpoints(), &f, self.age_lower, self.age_upper, abs_tol)
    }

    /// `ϱ(Λ × window)`.
    pub fn total_mass(&self, abs_tol: f64) -> Result<f64> {
        Ok(integrate_window(self.habitat, self.model, &[], &|_, _| 1.0, self.age_lower, self.age_upper, abs_tol)?.value)
    }

    /// A Poisson configuration with this intensity, by thinning.
    ///
    /// Proposals arrive at `χ(dx) e^{−m₀α} dα` (a product law that is exact to
    /// sample) and are kept with probability `exp(−(M(x,α) − m₀α)) ≤ 1`.
    pub fn sample_poisson<R: Rng + ?Sized>(&self, rng: &mut R) -> MarkedConfiguration {
        let (a, b) = (self.age_lower, self.age_upper);
        let chi = self.habitat.chi_mass();
        if chi <= 0.0 || b <= a {
            return MarkedConfiguration::empty();
        }
        let m0 = self.model.m_zero();
        let envelope = if m0 > 0.0 { (-m0 * a).exp() * -(-m0 * (b - a)).exp_m1() / m0 } else { b - a };
        let mean = chi * envelope;
        if !(mean > 0.0) {
            return MarkedConfiguration::empty();
        }
        let proposals = Poisson::new(mean).expect("finite positive mean").sample(rng) as usize;
        let mut out = Vec::with_capacity(proposals);
        for _ in 0..proposals {
            let x = self.habitat.chi_sample_unchecked(rng);
            let alpha = if m0 > 0.0 {
                // truncated exponential on [a, b) by inversion
                let u: f64 = rng.random();
                a - (u * (-m0 * (b - a)).exp_m1()).ln_1p() / m0
            } else {
                a + (b - a) * rng.random::<f64>()
            };
            let alpha = alpha.clamp(a, b);
            let excess = self.model.hazard(&x, alpha) - m0 * alpha;
            if excess <= 0.0 || rng.random::<f64>() < (-excess).exp() {
                out.push(MarkedParticle { x, alpha });
            }
        }
        MarkedConfiguration::from_vec_unchecked(out)
    }
}

/// `∫_a^b ∫_Λ f(x, u) e^{−M(x,u)} χ(dx) du`.
pub(crate) fn integrate_window<F>(
    habitat: &Habitat,
    model: &DepartureModel,
    breaks: &[Vec<f64>],
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
) -> Result<Estimate>
where
    F: Fn(&[f64], f64) -> f64 + ?Sized,
{
    if b <= a || habitat.chi_mass() == 0.0 {
        return Ok(Estimate::zero());
    }
    let nested = NestedErrors::default();
    let inner_tol = abs_tol / (2.0 * (b - a));
    let outer = gauss_kronrod(
        |u| nested.absorb(habitat.chi_integral(|x| f(x, u) * (-model.hazard(x, u)).exp(), breaks, inner_tol)),
        a,
        b,
        0.5 * abs_tol,
        0.0,
    );
    let mut est = nested.check(outer)?;
    est.error += nested.max_inner_error() * (b - a);
    Ok(est)
}

/// Independent thinning with `q_t` and aging by `t`.
pub fn thin_and_age<R: Rng + ?Sized>(
    c: &MarkedConfiguration,
    t: f64,
    model: &DepartureModel,
    rng: &mut R,
) -> MarkedConfiguration {
    if t == 0.0 {
        return c.clone();
    }
    let survivors = c
        .particles()
        .iter()
        .filter(|p| rng.random::<f64>() < model.survival(&p.x, p.alpha, t))
        .map(|p| MarkedParticle { x: p.x.clone(), alpha: p.alpha + t })
        .collect();
    MarkedConfiguration::from_vec_unchecked(survivors)
}

/// Longest sub-step keeping the newcomer acceptance rate at least `e^{−2}`.
pub fn max_substep(model: &DepartureModel) -> f64 {
    let spread = model.m_star() - model.m_zero();
    if spread > 0.0 {
        2.0 / spread
    } else {
        f64::INFINITY
    }
}

/// One draw from `p_t^γ̂ = π_t ⋆ δ_γ̂^t`, exact for every `t`.
///
/// Long steps are split so that newcomer proposals are accepted with
/// probability at least `e^{−2}`; by the Markov property the split does not
/// change the law.
pub fn transition_step<R: Rng + ?Sized>(
    c: &MarkedConfiguration,
    t: f64,
    dynamics: &Dynamics,
    rng: &mut R,
) -> Result<MarkedConfiguration> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    let pieces = (t / max_substep(&dynamics.model)).ceil().max(1.0) as usize;
    let dt = t / pieces as f64;
    let mut state = c.clone();
    for _ in 0..pieces {
        state = single_step(&state, dt, dynamics, rng);
    }
    Ok(state)
}

fn single_step<R: Rng + ?Sized>(c: &MarkedConfiguration, t: f64, dynamics: &Dynamics, rng: &mut R) -> MarkedConfiguration {
    let survivors = thin_and_age(c, t, &dynamics.model, rng);
    let newcomers = IntensityMeasure::transient(dynamics, t).expect("validated time").sample_poisson(rng);
    let mut particles = survivors.into_particles();
    particles.extend(newcomers.into_particles());
    MarkedConfiguration::from_vec_unchecked(particles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Departure,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub id: u64,
    pub x: Vec<f64>,
    /// Age at the event.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub events: Vec<Event>,
    pub terminal: MarkedConfiguration,
}

impl Trajectory {
    /// Writes one JSON event per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct Live {
    id: u64,
    x: Vec<f64>,
    /// Age when the particle entered the simulation, and the time it did.
    entry_age: f64,
    entry_time: f64,
}

impl Live {
    fn age(&self, now: f64) -> f64 {
        self.entry_age + (now - self.entry_time)
    }
}

/// Event-by-event simulation to `horizon`.
///
/// Arrivals form a Poisson process of rate `χ(Λ)`. Departures use a common
/// envelope: candidate events occur at rate `χ(Λ) + N m_*`, a candidate
/// departure picks a particle uniformly and is accepted with probability
/// `m(x, α_now) / m_*`.
pub fn event_driven_simulate<R: Rng + ?Sized>(
    initial: &MarkedConfiguration,
    horizon: f64,
    dynamics: &Dynamics,
    rng: &mut R,
) -> Result<Trajectory> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    let chi = dynamics.habitat.chi_mass();
    let m_star = dynamics.model.m_star();
    let mut live: Vec<Live> = initial
        .particles()
        .iter()
        .enumerate()
        .map(|(i, p)| Live { id: i as u64, x: p.x.clone(), entry_age: p.alpha, entry_time: 0.0 })
        .collect();
    let mut next_id = live.len() as u64;
    let mut events = Vec::new();
    let mut now = 0.0;
    loop {
        let rate = chi + live.len() as f64 * m_star;
        if rate <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        now += wait / rate;
        if now >= horizon {
            break;
        }
        if rng.random::<f64>() * rate < chi {
            let x = dynamics.habitat.chi_sample_unchecked(rng);
            events.push(Event { time: now, kind: EventKind::Arrival, id: next_id, x: x.clone(), alpha: 0.0 });
            live.push(Live { id: next_id, x, entry_age: 0.0, entry_time: now });
            next_id += 1;
        } else {
            let i = rng.random_range(0..live.len());
            let age = live[i].age(now);
            if rng.random::<f64>() * m_star < dynamics.model.rate(&live[i].x, age) {
                let p = live.swap_remove(i);
                events.push(Event { time: now, kind: EventKind::Departure, id: p.id, x: p.x, alpha: age });
            }
        }
    }
    live.sort_by_key(|p| p.id);
    let terminal = live.into_iter().map(|p| MarkedParticle { alpha: p.age(horizon), x: p.x }).collect();
    Ok(Trajectory { events, terminal: MarkedConfiguration::from_vec_unchecked(terminal) })
}

/// Monte Carlo statistics of one time marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Marginal {
    pub time: f64,
    pub f_theta: MeanSeRow,
    pub count: MeanSeRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSeRow {
    pub value: f64,
    pub stderr: f64,
}

impl From<MeanSe> for MeanSeRow {
    fn from(m: MeanSe) -> Self {
        MeanSeRow { value: m.mean, stderr: m.se }
    }
}

/// Marginals of `F^φ` and the particle count at each of `times`.
///
/// Each path draws its start from `initial` and then steps through the
/// consecutive gaps with [`transition_step`].
pub fn sample_trajectory_marginals<T, I>(
    initial: I,
    times: &[f64],
    n_paths: usize,
    seed: u64,
    phi: &T,
    dynamics: &Dynamics,
) -> Result<Vec<Marginal>>
where
    T: TestFunction + ?Sized,
    I: Fn(&mut ChaCha8Rng) -> MarkedConfiguration + Sync + Send,
{
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("times must be finite, nonnegative and sorted".into()));
    }
    let rows: Vec<Vec<(f64, f64)>> = par_paths(seed, n_paths, |rng| {
        let mut state = initial(rng);
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            state = transition_step(&state, t - now, dynamics, rng).expect("validated times");
            now = t;
            out.push((phi.functional(&state), state.len() as f64));
        }
        out
    });
    Ok(times
        .iter()
        .enumerate()
        .map(|(i, &time)| {
            let f: Vec<f64> = rows.iter().map(|r| r[i].0).collect();
            let n: Vec<f64> = rows.iter().map(|r| r[i].1).collect();
            Marginal { time, f_theta: MeanSe::of(&f).into(), count: MeanSe::of(&n).into() }
        })
        .collect())
}

/// Writes marginals as CSV rows `time,statistic,value,stderr`.
pub fn write_marginals_csv<W: Write>(marginals: &[Marginal], mut out: W) -> Result<()> {
    writeln!(out, "time,statistic,value,stderr")?;
    for m in marginals {
        writeln!(out, "{},f_theta,{},{}", m.time, m.f_theta.value, m.f_theta.stderr)?;
        writeln!(out, "{},count,{},{}", m.time, m.count.value, m.count.stderr)?;
    }
    Ok(())
}
