//! Marked configurations, the plateau basis `v_s`, and the metrics `d` and `κ`.
//!
//! Basis functions are indexed block by block. Block `j = 1, 2, …` holds the
//! dyadic lattice of `2^j + 1` centers per axis, window faces included, each
//! paired with the two heights `ς ∈ {1/2, 3/4}`; inside a block the height
//! index varies fastest, then the lattice index in row-major order. `s = 1`
//! is the window midpoint at scale `j = 1` with height `1/2`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::habitat::Window;
use crate::mark_space::{w_basis, MarkSet, SigmaLadder, Truncated};

const HEIGHTS: [f64; 2] = [0.5, 0.75];

/// A trapezoid plateau function on a box.
///
/// `v(x) = ς Π_i clamp(2 − |x_i − c_i| / q_i, 0, 1)`: equal to `ς` on the
/// inner box of half-widths `q`, zero outside the outer box of half-widths
/// `2q`, linear along each axis in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFunction {
    pub center: Vec<f64>,
    pub inner_radius: Vec<f64>,
    pub height: f64,
    /// Scale `j`.
    pub scale: u32,
}

impl BasisFunction {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.height;
        for ((xi, ci), qi) in x.iter().zip(&self.center).zip(&self.inner_radius) {
            let t = (2.0 - (xi - ci).abs() / qi).clamp(0.0, 1.0);
            if t == 0.0 {
                return 0.0;
            }
            v *= t;
        }
        v
    }

    pub fn outer_radius(&self) -> Vec<f64> {
        self.inner_radius.iter().map(|q| 2.0 * q).collect()
    }

    /// Closed outer box; `v` vanishes on and outside its boundary.
    pub fn support(&self) -> Window {
        let lower = self.center.iter().zip(&self.inner_radius).map(|(c, q)| c - 2.0 * q).collect();
        let upper = self.center.iter().zip(&self.inner_radius).map(|(c, q)| c + 2.0 * q).collect();
        Window { lower, upper }
    }

    /// Kinks of the profile along `axis`.
    pub fn breakpoints(&self, axis: usize) -> [f64; 4] {
        let (c, q) = (self.center[axis], self.inner_radius[axis]);
        [c - 2.0 * q, c - q, c + q, c + 2.0 * q]
    }
}

/// The enumerated family `{v_s}` anchored to a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    window: Window,
}

impl Basis {
    pub fn new(window: Window) -> Result<Self> {
        window.validate()?;
        Ok(Basis { window })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    /// Number of basis functions at scale `j`: two heights on `(2^j + 1)^d` centers.
    fn block_len(&self, j: u32) -> u128 {
        let per_axis = (1u128 << j) + 1;
        2 * per_axis.pow(self.dim() as u32)
    }

    /// `v_s` for `s ≥ 1`.
    ///
    /// Scale `j` has half-widths `q_i = side_i 2^{−j}` and centers on the
    /// lattice `lower + k q` with `k = 0, …, 2^j` per axis, faces included.
    /// Per axis the odd `k` come first, then the even ones; axes are combined
    /// row-major and the height alternates fastest. Hence `v_1` sits at the
    /// midpoint with `ς = 1/2`.
    pub fn v_enumerate(&self, s: usize) -> BasisFunction {
        assert!(s >= 1, "basis index starts at 1");
        let mut r = (s - 1) as u128;
        let mut j = 1u32;
        while r >= self.block_len(j) {
            r -= self.block_len(j);
            j += 1;
        }
        let height = HEIGHTS[(r % 2) as usize];
        let mut lattice = r / 2;
        let per_axis = (1u128 << j) + 1;
        let odd = 1u128 << (j - 1);
        let d = self.dim();
        let mut k = vec![0u128; d];
        for axis in (0..d).rev() {
            let i = lattice % per_axis;
            lattice /= per_axis;
            k[axis] = if i < odd { 2 * i + 1 } else { 2 * (i - odd) };
        }
        let scale = 2f64.powi(-(j as i32));
        let center = (0..d).map(|i| self.window.lower[i] + self.window.side(i) * k[i] as f64 * scale).collect();
        let inner_radius = (0..d).map(|i| self.window.side(i) * scale).collect();
        BasisFunction { center, inner_radius, height, scale: j }
    }

    /// `v_1, …, v_count`.
    pub fn first(&self, count: usize) -> Vec<BasisFunction> {
        (1..=count).map(|s| self.v_enumerate(s)).collect()
    }
}

/// A particle `x̂ = (x, α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkedParticle {
    pub x: Vec<f64>,
    pub alpha: f64,
}

impl MarkedParticle {
    pub fn new(x: Vec<f64>, alpha: f64) -> Result<Self> {
        let p = MarkedParticle { x, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Domain(format!("particle age must be finite and >= 0, got {}", self.alpha)));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("particle location must be finite".into()));
        }
        Ok(())
    }
}

/// A finite multiset of marked particles.
///
/// Particles are allowed anywhere in `ℝ^d`; the habitat window only anchors
/// the basis and the samplers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkedConfiguration {
    particles: Vec<MarkedParticle>,
}

impl MarkedConfiguration {
    pub fn new(particles: Vec<MarkedParticle>) -> Result<Self> {
        let c = MarkedConfiguration { particles };
        c.validate()?;
        Ok(c)
    }

    pub fn empty() -> Self {
        MarkedConfiguration::default()
    }

    pub fn validate(&self) -> Result<()> {
        let mut dim = None;
        for p in &self.particles {
            p.validate()?;
            match dim {
                None => dim = Some(p.x.len()),
                Some(d) if d != p.x.len() => {
                    return Err(Error::DimensionMismatch { expected: d, found: p.x.len() });
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub(crate) fn from_vec_unchecked(particles: Vec<MarkedParticle>) -> Self {
        MarkedConfiguration { particles }
    }

    pub fn particles(&self) -> &[MarkedParticle] {
        &self.particles
    }

    pub fn into_particles(self) -> Vec<MarkedParticle> {
        self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Spatial dimension, if any particle is present.
    pub fn dim(&self) -> Option<usize> {
        self.particles.first().map(|p| p.x.len())
    }

    /// Checks every particle lives in `ℝ^d`.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        match self.dim() {
            Some(found) if found != d => Err(Error::DimensionMismatch { expected: d, found }),
            _ => Ok(()),
        }
    }

    pub fn push(&mut self, p: MarkedParticle) {
        self.particles.push(p);
    }

    /// Multiset union `γ̂ ∪ γ̂′`.
    pub fn union(&self, other: &MarkedConfiguration) -> MarkedConfiguration {
        let mut particles = self.particles.clone();
        particles.extend_from_slice(&other.particles);
        MarkedConfiguration { particles }
    }

    /// `γ̂ ∖ x̂_i`, removing one copy.
    pub fn without(&self, i: usize) -> MarkedConfiguration {
        let mut particles = self.particles.clone();
        particles.remove(i);
        MarkedConfiguration { particles }
    }

    /// `γ̂ ∩ (Λ′ × ℝ₊)`.
    pub fn restrict(&self, window: &Window) -> MarkedConfiguration {
        MarkedConfiguration {
            particles: self.particles.iter().filter(|p| window.contains(&p.x)).cloned().collect(),
        }
    }

    /// The ground configuration with multiplicities and the mark set at each
    /// distinct location.
    pub fn ground(&self) -> Vec<(Vec<f64>, MarkSet)> {
        let mut groups: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for p in &self.particles {
            match groups.iter_mut().find(|(x, _)| *x == p.x) {
                Some((_, ages)) => ages.push(p.alpha),
                None => groups.push((p.x.clone(), vec![p.alpha])),
            }
        }
        groups
            .into_iter()
            .map(|(x, ages)| (x, MarkSet::new(ages).expect("validated ages")))
            .collect()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: MarkedConfiguration = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("configurations serialize")
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

/// Default basis budget `s ≤ 30` for `d`.
pub const GROUND_BUDGET: usize = 30;
/// Default index budget `s + k + n ≤ 30` for `κ`.
pub const KAPPA_BUDGET: usize = 30;

/// `Σ_{x ∈ γ} v_s(x)` for `s ≤ budget`.
#[derive(Debug, Clone)]
pub struct GroundSums {
    sums: Vec<f64>,
}

impl GroundSums {
    pub fn new(functions: &[BasisFunction], c: &MarkedConfiguration) -> Self {
        let sums = functions.iter().map(|v| c.particles.iter().map(|p| v.eval(&p.x)).sum()).collect();
        GroundSums { sums }
    }

    pub fn distance(&self, other: &GroundSums) -> f64 {
        self.sums
            .iter()
            .zip(&other.sums)
            .enumerate()
            .map(|(i, (a, b))| {
                let d = (a - b).abs();
                2f64.powi(-(i as i32 + 1)) * d / (1.0 + d)
            })
            .sum()
    }
}

/// `d(p̆(γ̂), p̆(γ̂′))` over `s ≤ budget`, with tail bound `2^{−budget}`.
pub fn ground_distance(basis: &Basis, a: &MarkedConfiguration, b: &MarkedConfiguration, budget: usize) -> Truncated {
    let functions = basis.first(budget);
    let value = GroundSums::new(&functions, a).distance(&GroundSums::new(&functions, b));
    Truncated { value, tail: 2f64.powi(-(budget as i32)) }
}

/// `κ_{s,k,n}(γ̂, γ̂′) = |Σ_{γ̂} v_s w_{k,n} − Σ_{γ̂′} v_s w_{k,n}|`.
pub fn kappa_component(
    basis: &Basis,
    ladder: &SigmaLadder,
    (s, k, n): (usize, usize, usize),
    a: &MarkedConfiguration,
    b: &MarkedConfiguration,
) -> f64 {
    let v = basis.v_enumerate(s);
    let sum = |c: &MarkedConfiguration| -> f64 {
        c.particles.iter().map(|p| v.eval(&p.x) * w_basis(ladder, k, n, p.alpha)).sum()
    };
    (sum(a) - sum(b)).abs()
}

/// Triples `(s, k, n)` with `s + k + n ≤ budget`, ordered by total then lexicographically.
pub fn kappa_triples(budget: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (3..=budget).flat_map(|m| (1..=m - 2).flat_map(move |s| (1..=m - 1 - s).map(move |k| (s, k, m - s - k))))
}

/// Bound on `Σ_{s+k+n > budget} 2^{−(s+k+n)}`.
pub fn kappa_tail(budget: usize) -> f64 {
    // #{(s, k, n) : s + k + n = m} = (m−1)(m−2)/2
    (budget.max(2) + 1..budget + 1500)
        .map(|m| ((m - 1) * (m - 2) / 2) as f64 * 2f64.powi(-(m as i32)))
        .sum()
}

/// Precomputed `Σ_{x̂ ∈ γ̂} g_{s,k,n}(x̂)` for all triples within a budget.
#[derive(Debug, Clone)]
pub struct KappaSums {
    budget: usize,
    sums: Vec<f64>,
}

impl KappaSums {
    pub fn new(basis: &Basis, ladder: &SigmaLadder, c: &MarkedConfiguration, budget: usize) -> Self {
        let max_s = budget.saturating_sub(2);
        let max_kn = budget.saturating_sub(1);
        let functions = basis.first(max_s);
        // v[s-1][i] and w[(k, n)][i]
        let v: Vec<Vec<f64>> =
            functions.iter().map(|f| c.particles.iter().map(|p| f.eval(&p.x)).collect()).collect();
        let kn_index = |k: usize, n: usize| (k - 1) * max_kn + (n - 1);
        let mut w = vec![Vec::new(); max_kn * max_kn];
        for k in 1..max_kn {
            for n in 1..=max_kn - k {
                w[kn_index(k, n)] = c.particles.iter().map(|p| w_basis(ladder, k, n, p.alpha)).collect();
            }
        }
        let sums = kappa_triples(budget)
            .map(|(s, k, n)| v[s - 1].iter().zip(&w[kn_index(k, n)]).map(|(a, b)| a * b).sum())
            .collect();
        KappaSums { budget, sums }
    }

    pub fn distance(&self, other: &KappaSums) -> f64 {
        assert_eq!(self.budget, other.budget, "mismatched truncation budgets");
        kappa_triples(self.budget)
            .zip(self.sums.iter().zip(&other.sums))
            .map(|((s, k, n), (a, b))| {
                let d = (a - b).abs();
                2f64.powi(-((s + k + n) as i32)) * d / (1.0 + d)
            })
            .sum()
    }
}

/// `κ(γ̂, γ̂′)` over `s + k + n ≤ budget`, with the tail bound.
pub fn kappa_distance(
    basis: &Basis,
    ladder: &SigmaLadder,
    a: &MarkedConfiguration,
    b: &MarkedConfiguration,
    budget: usize,
) -> Truncated {
    let value = KappaSums::new(basis, ladder, a, budget).distance(&KappaSums::new(basis, ladder, b, budget));
    Truncated { value, tail: kappa_tail(budget) }
}

/// `ε = 2^{−s_*}` such that restricting both configurations to `sub`
/// changes `κ` by less than `ε`.
///
/// Fails with the first `s ≤ s_*` whose support `sub` does not cover.
pub fn window_truncation_error(basis: &Basis, sub: &Window, s_star: usize) -> Result<f64> {
    if sub.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: sub.dim() });
    }
    for s in 1..=s_star {
        if !sub.covers(&basis.v_enumerate(s).support()) {
            return Err(Error::WindowCoverage { s });
        }
    }
    Ok(2f64.powi(-(s_star as i32)))
}
