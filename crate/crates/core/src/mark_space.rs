//! Finite mark sets and the mark metric `ρ`.
//!
//! Ages at a single location form a finite multiset `a`. The functions
//! `u_n(α) = α² / (1 + nα³)` and `w_{k,n}(α) = exp(−σ_k u_n(α))` separate
//! such multisets, and `ρ` combines the differences of their sums into a
//! metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The increasing sequence `σ_k = (1 − 2^{1−k}) σ̄`, with `σ₁ = 0` and limit `σ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaLadder {
    pub sigma_bar: f64,
}

impl Default for SigmaLadder {
    fn default() -> Self {
        SigmaLadder { sigma_bar: 1.0 }
    }
}

impl SigmaLadder {
    pub fn new(sigma_bar: f64) -> Result<Self> {
        if !(sigma_bar.is_finite() && sigma_bar > 0.0) {
            return Err(Error::Config(format!("sigma_bar must be finite and > 0, got {sigma_bar}")));
        }
        Ok(SigmaLadder { sigma_bar })
    }

    /// `σ_k` for `k ≥ 1`.
    pub fn sigma(&self, k: usize) -> f64 {
        debug_assert!(k >= 1);
        (1.0 - 2f64.powi(1 - k as i32)) * self.sigma_bar
    }

    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar
    }

    /// `c̄ = exp(−σ̄ 2^{2/3} / 3)`, the lower sandwich constant `c̄ w(0) ≤ w(α)`.
    pub fn c_bar(&self) -> f64 {
        (-self.sigma_bar * U1_MAX).exp()
    }
}

/// `max_α u_1(α) = 2^{2/3} / 3`.
pub const U1_MAX: f64 = 0.529_133_683_989_399_8;

/// `u_n(α) = α² / (1 + nα³)`.
#[inline]
pub fn u_basis(n: usize, age: f64) -> f64 {
    let a2 = age * age;
    a2 / (1.0 + n as f64 * a2 * age)
}

/// `u_n′(α) = (2α − nα⁴) / (1 + nα³)²`.
#[inline]
pub fn u_basis_derivative(n: usize, age: f64) -> f64 {
    let n = n as f64;
    let a3 = age * age * age;
    let den = 1.0 + n * a3;
    (2.0 * age - n * a3 * age) / (den * den)
}

/// `u_n″(α) = (2 − 14β + 2β²) / (1 + β)³` with `β = nα³`.
#[inline]
pub fn u_basis_second_derivative(n: usize, age: f64) -> f64 {
    let beta = n as f64 * age * age * age;
    (2.0 - 14.0 * beta + 2.0 * beta * beta) / (1.0 + beta).powi(3)
}

/// `c = sup_α |u_1′(α)|`, so that `|u_n′| ≤ c / n^{1/3}`.
///
/// `u_1″` vanishes where `β² − 7β + 1 = 0`; the maximum of `u_1′` is at the
/// smaller root `α³ = (7 − 3√5) / 2`.
pub fn derivative_constant() -> f64 {
    let beta = 0.5 * (7.0 - 3.0 * 5f64.sqrt());
    u_basis_derivative(1, beta.cbrt())
}

/// `w_{k,n}(α) = exp(−σ_k u_n(α))`.
#[inline]
pub fn w_basis(ladder: &SigmaLadder, k: usize, n: usize, age: f64) -> f64 {
    (-ladder.sigma(k) * u_basis(n, age)).exp()
}

/// `w′_{k,n}(α) = −σ_k u_n′(α) w_{k,n}(α)`.
#[inline]
pub fn w_basis_derivative(ladder: &SigmaLadder, k: usize, n: usize, age: f64) -> f64 {
    let sigma = ladder.sigma(k);
    -sigma * u_basis_derivative(n, age) * (-sigma * u_basis(n, age)).exp()
}

/// A finite multiset of ages, kept sorted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MarkSet {
    ages: Vec<f64>,
}

impl MarkSet {
    pub fn new(mut ages: Vec<f64>) -> Result<Self> {
        if let Some(bad) = ages.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::Domain(format!("mark ages must be finite and >= 0, got {bad}")));
        }
        ages.sort_by(f64::total_cmp);
        Ok(MarkSet { ages })
    }

    pub fn empty() -> Self {
        MarkSet::default()
    }

    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    /// `|a|`, counting multiplicity.
    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    /// `n_a(α)`: how many members equal `α`.
    pub fn multiplicity(&self, age: f64) -> usize {
        self.ages.iter().filter(|&&a| a == age).count()
    }

    /// Multiset equality, matching sorted ages to within `tol`.
    pub fn equals(&self, other: &MarkSet, tol: f64) -> bool {
        self.len() == other.len() && self.ages.iter().zip(&other.ages).all(|(a, b)| (a - b).abs() <= tol)
    }

    /// `Σ_{α ∈ a} w_{k,n}(α)`.
    pub fn w_sum(&self, ladder: &SigmaLadder, k: usize, n: usize) -> f64 {
        self.ages.iter().map(|&a| w_basis(ladder, k, n, a)).sum()
    }
}

impl TryFrom<Vec<f64>> for MarkSet {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        MarkSet::new(v)
    }
}

impl From<MarkSet> for Vec<f64> {
    fn from(m: MarkSet) -> Vec<f64> {
        m.ages
    }
}

/// A truncated metric series together with a bound on the omitted tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncated {
    pub value: f64,
    pub tail: f64,
}

/// Default index budget `k + n ≤ 40` for `ρ`.
pub const RHO_BUDGET: usize = 40;

/// `ρ_{k,n}(a, a′) = |Σ_a w_{k,n} − Σ_{a′} w_{k,n}|`.
pub fn rho_component(ladder: &SigmaLadder, k: usize, n: usize, a: &MarkSet, b: &MarkSet) -> f64 {
    (a.w_sum(ladder, k, n) - b.w_sum(ladder, k, n)).abs()
}

/// Bound on `Σ_{k+n > budget} 2^{−k−n}`.
pub fn rho_tail(budget: usize) -> f64 {
    // #{(k, n) : k + n = m} = m − 1
    (budget + 1..budget + 1200).map(|m| (m - 1) as f64 * 2f64.powi(-(m as i32))).sum()
}

/// Precomputed `Σ_a w_{k,n}` for all `k + n ≤ budget`.
#[derive(Debug, Clone)]
pub struct RhoSums {
    budget: usize,
    sums: Vec<f64>,
}

impl RhoSums {
    pub fn new(ladder: &SigmaLadder, a: &MarkSet, budget: usize) -> Self {
        let mut sums = Vec::new();
        for (k, n) in kn_pairs(budget) {
            sums.push(a.w_sum(ladder, k, n));
        }
        RhoSums { budget, sums }
    }

    pub fn distance(&self, other: &RhoSums) -> f64 {
        assert_eq!(self.budget, other.budget, "mismatched truncation budgets");
        kn_pairs(self.budget)
            .zip(self.sums.iter().zip(&other.sums))
            .map(|((k, n), (x, y))| {
                let d = (x - y).abs();
                2f64.powi(-((k + n) as i32)) * d / (1.0 + d)
            })
            .sum()
    }
}

fn kn_pairs(budget: usize) -> impl Iterator<Item = (usize, usize)> {
    (2..=budget).flat_map(|m| (1..m).map(move |k| (k, m - k)))
}

/// `ρ(a, a′)` truncated at `k + n ≤ budget`, with the tail bound.
pub fn rho_distance(ladder: &SigmaLadder, a: &MarkSet, b: &MarkSet, budget: usize) -> Truncated {
    let value = RhoSums::new(ladder, a, budget).distance(&RhoSums::new(ladder, b, budget));
    Truncated { value, tail: rho_tail(budget) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn marks(v: &[f64]) -> MarkSet {
        MarkSet::new(v.to_vec()).unwrap()
    }

    /// Brute-force maximization of `|u_1′|` on a fine grid.
    fn c_by_grid() -> f64 {
        (0..2_000_000).map(|i| u_basis_derivative(1, i as f64 * 5e-6).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn u_examples() {
        assert_eq!(u_basis(4, 0.0), 0.0);
        assert_eq!(u_basis(1, 1.0), 0.5);
        let peak = 2f64.cbrt();
        assert!((u_basis(1, peak) - U1_MAX).abs() < 1e-15);
        assert!((U1_MAX - 0.52913).abs() < 1e-5);
        assert!((U1_MAX - 4f64.cbrt() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn u_bound_scales_with_n() {
        for n in 1..50 {
            let bound = 4f64.cbrt() / (3.0 * (n as f64).powf(2.0 / 3.0));
            for i in 0..4000 {
                let a = i as f64 * 0.005;
                let u = u_basis(n, a);
                assert!(u >= 0.0 && u <= bound * (1.0 + 1e-14));
            }
        }
    }

    #[test]
    fn u_derivative_examples() {
        assert_eq!(u_basis_derivative(7, 0.0), 0.0);
        assert_eq!(u_basis_derivative(1, 1.0), 0.25);
    }

    #[test]
    fn derivative_constant_matches_grid_oracle() {
        let oracle = c_by_grid();
        let c = derivative_constant();
        assert!((c - oracle).abs() < 1e-9, "{c} vs {oracle}");
        assert!((c - 0.74335).abs() < 1e-5);
        let peak = (0.5 * (7.0 - 3.0 * 5f64.sqrt())).cbrt();
        assert!((peak - 0.52644).abs() < 1e-5);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for n in [1, 3, 17] {
            for i in 1..200 {
                let a = i as f64 * 0.03;
                let h = 1e-5;
                let fd = (u_basis(n, a + h) - u_basis(n, a - h)) / (2.0 * h);
                assert!((fd - u_basis_derivative(n, a)).abs() < 1e-8);
                let fd2 = (u_basis_derivative(n, a + h) - u_basis_derivative(n, a - h)) / (2.0 * h);
                assert!((fd2 - u_basis_second_derivative(n, a)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn w_examples() {
        let ladder = SigmaLadder::default();
        assert_eq!(w_basis(&ladder, 1, 5, 3.3), 1.0);
        assert_eq!(w_basis(&ladder, 6, 2, 0.0), 1.0);
        // σ_2 = 0.5 with σ̄ = 1, u_1(1) = 0.5
        assert!((w_basis(&ladder, 2, 1, 1.0) - (-0.25f64).exp()).abs() < 1e-15);
        assert!((w_basis(&ladder, 2, 1, 1.0) - 0.7788).abs() < 1e-4);
    }

    #[test]
    fn ladder_shape() {
        let ladder = SigmaLadder::default();
        assert_eq!(ladder.sigma(1), 0.0);
        // 1 − 2^{1−k} rounds to 1 in f64 once k > 53.
        for k in 1..=53 {
            assert!(ladder.sigma(k) < ladder.sigma(k + 1));
            assert!(ladder.sigma(k) < ladder.sigma_bar());
        }
        for k in 53..=64 {
            assert!(ladder.sigma(k) <= ladder.sigma(k + 1) && ladder.sigma(k) <= ladder.sigma_bar());
        }
        assert!((ladder.c_bar() - (-(4f64.cbrt()) / 3.0).exp()).abs() < 1e-15);
        assert!((ladder.c_bar() - 0.5891).abs() < 1e-4);
    }

    #[test]
    fn w_derivative_bound_on_grid() {
        let ladder = SigmaLadder::new(1.7).unwrap();
        let c = derivative_constant();
        for k in 1..=20 {
            for n in 1..=40 {
                let bound_factor = ladder.sigma_bar() * c / (n as f64).cbrt();
                for i in 0..600 {
                    let a = i as f64 * 0.01 + (i as f64 * 0.37).sin().abs() * 1e-3;
                    let w = w_basis(&ladder, k, n, a);
                    let dw = w_basis_derivative(&ladder, k, n, a);
                    assert!(dw.abs() <= bound_factor * w * (1.0 + 1e-12), "k={k} n={n} a={a}");
                }
            }
        }
    }

    /// The bound `|u_n″(α)| ≤ 2(1+β²)/(1+β)³` quoted for the second
    /// derivative does not hold: at `n = 1, α = 1` the left side is 1.25 and
    /// the right side is 0.5.
    #[test]
    fn quoted_second_derivative_bound_fails_at_unit_beta() {
        let lhs = u_basis_second_derivative(1, 1.0).abs();
        let quoted = 2.0 * (1.0 + 1.0) / 8.0;
        assert!((lhs - 1.25).abs() < 1e-15);
        assert!(lhs > quoted);
    }

    /// What does hold, and is all the uniform estimate needs:
    /// `|u_n″(α)| ≤ 2(1 + 7β + β²)/(1+β)³ ≤ 2`, uniformly in `n`.
    #[test]
    fn corrected_second_derivative_bound_on_grid() {
        for n in 1..=64 {
            for i in 0..5000 {
                let a = i as f64 * 0.002;
                let beta = n as f64 * a * a * a;
                let d2 = u_basis_second_derivative(n, a).abs();
                let bound = 2.0 * (1.0 + 7.0 * beta + beta * beta) / (1.0 + beta).powi(3);
                assert!(d2 <= bound * (1.0 + 1e-14));
                assert!(d2 <= 2.0 + 1e-14);
            }
        }
    }

    #[test]
    fn rho_component_examples() {
        let ladder = SigmaLadder::default();
        let a = marks(&[0.5, 1.0, 7.0]);
        assert_eq!(rho_component(&ladder, 3, 4, &a, &a), 0.0);
        let b = marks(&[2.0]);
        assert_eq!(rho_component(&ladder, 1, 9, &a, &b), 2.0);
        assert_eq!(rho_component(&ladder, 5, 2, &marks(&[0.0]), &MarkSet::empty()), 1.0);
    }

    #[test]
    fn rho_distance_examples() {
        let ladder = SigmaLadder::default();
        let a = marks(&[0.3, 2.0]);
        let d = rho_distance(&ladder, &a, &a, RHO_BUDGET);
        assert_eq!(d.value, 0.0);
        assert!(d.tail < 4e-10);
        let d = rho_distance(&ladder, &marks(&[1.0]), &marks(&[2.0]), RHO_BUDGET);
        assert!(d.value > d.tail);
        let d = rho_distance(&ladder, &marks(&[1.0, 1.0]), &marks(&[1.0]), RHO_BUDGET);
        // Every k = 1 term has ρ_{1,n} = 1.
        let k1: f64 = (2..=RHO_BUDGET).map(|m| 0.5 * 2f64.powi(-(m as i32))).sum();
        assert!(d.value >= k1);
    }

    #[test]
    fn mark_set_sorted_with_multiplicity() {
        let a = marks(&[3.0, 1.0, 3.0]);
        assert_eq!(a.ages(), &[1.0, 3.0, 3.0]);
        assert_eq!(a.multiplicity(3.0), 2);
        assert_eq!(a.multiplicity(2.0), 0);
        assert!(MarkSet::new(vec![-1.0]).is_err());
    }

    fn mark_set() -> impl Strategy<Value = MarkSet> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..3.0, 1.0f64..200.0], 0..6)
            .prop_map(|v| MarkSet::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn rho_metric_axioms(a in mark_set(), b in mark_set(), c in mark_set()) {
            let ladder = SigmaLadder::default();
            let ab = rho_distance(&ladder, &a, &b, RHO_BUDGET);
            let ba = rho_distance(&ladder, &b, &a, RHO_BUDGET);
            prop_assert_eq!(ab.value, ba.value);
            let ac = rho_distance(&ladder, &a, &c, RHO_BUDGET).value;
            let cb = rho_distance(&ladder, &c, &b, RHO_BUDGET).value;
            prop_assert!(ab.value <= ac + cb + 2.0 * ab.tail);
            if !a.equals(&b, 1e-12) {
                prop_assert!(ab.value > ab.tail);
            }
        }
    }
}
