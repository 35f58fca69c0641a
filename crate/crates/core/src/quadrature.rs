//! One-dimensional quadrature rules.
//!
//! Three rules are provided:
//!
//! * [`adaptive_simpson`]: recursive Simpson with Richardson correction,
//!   used for cumulative hazards of non-parametric departure models.
//! * [`gauss_kronrod`]: globally adaptive 7/15-point Gauss–Kronrod, used for
//!   all smooth nested integrals (arrival integrals, intensity integrals,
//!   time integrals of the semigroup).
//! * [`composite_simpson`]: fixed-grid Simpson, used where a known
//!   convergence order is part of the check.
//!
//! Integrands that are only piecewise smooth should be split at their kinks
//! with [`gauss_kronrod_pieces`].

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// A quadrature result with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn zero() -> Self {
        Estimate { value: 0.0, error: 0.0 }
    }
}

/// Maximum recursion depth for [`adaptive_simpson`].
const SIMPSON_MAX_DEPTH: u32 = 48;

/// Refinement levels taken before the error test may stop the recursion.
const SIMPSON_MIN_DEPTH: u32 = 3;

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
///
/// The interval is first cut into unit-length pieces, each refined at least
/// [`SIMPSON_MIN_DEPTH`] times, so that a periodic integrand cannot fool the
/// error test through the first few nodes.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate::zero());
    }
    let pieces = ((b - a).abs().ceil() as usize).clamp(1, 1 << 16);
    let h = (b - a) / pieces as f64;
    let mut total = Estimate::zero();
    for i in 0..pieces {
        let hi = if i + 1 == pieces { b } else { a + (i + 1) as f64 * h };
        let e = simpson_piece(&f, a + i as f64 * h, hi, tol / pieces as f64)?;
        total.value += e.value;
        total.error += e.error;
    }
    Ok(total)
}

fn simpson_piece<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<Estimate> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let failed = Cell::new(false);
    let mut error = 0.0;
    let value = simpson_step(f, a, b, fa, fm, fb, whole, tol, SIMPSON_MAX_DEPTH, &failed, &mut error);
    if !value.is_finite() {
        return Err(Error::NonFinite("adaptive Simpson"));
    }
    if failed.get() && error > tol {
        return Err(Error::Quadrature { requested: tol, achieved: error });
    }
    Ok(Estimate { value, error })
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    failed: &Cell<bool>,
    error: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || (m - a) <= f64::EPSILON * m.abs().max(1.0) {
        failed.set(true);
        *error += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    if depth <= SIMPSON_MAX_DEPTH - SIMPSON_MIN_DEPTH && delta.abs() <= 15.0 * tol {
        *error += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, failed, error)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, failed, error)
}

/// Composite Simpson rule with `intervals` (even) sub-intervals.
pub fn composite_simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, intervals: usize) -> f64 {
    assert!(intervals >= 2 && intervals.is_multiple_of(2), "Simpson needs an even interval count");
    let h = (b - a) / intervals as f64;
    let mut sum = f(a) + f(b);
    for i in 1..intervals {
        let x = a + h * i as f64;
        sum += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    sum * h / 3.0
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod rule with the QUADPACK error heuristic.
fn qk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Estimate {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resg = fc * WG[3];
    let mut resk = fc * WGK[7];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let reskh = resk * 0.5;
    let mut resasc = WGK[7] * (fc - reskh).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let result = resk * half;
    let resabs = resabs * half.abs();
    let resasc = resasc * half.abs();
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    let round = 50.0 * f64::EPSILON * resabs;
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(round);
    }
    Estimate { value: result, error: err }
}

struct Segment {
    a: f64,
    b: f64,
    est: Estimate,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.est.error == other.est.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.est.error.total_cmp(&other.est.error)
    }
}

/// Maximum number of bisections for [`gauss_kronrod`].
const GK_MAX_SEGMENTS: usize = 4000;

/// Globally adaptive Gauss–Kronrod quadrature of `f` on `[a, b]`.
///
/// Stops when the summed error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn gauss_kronrod<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate::zero());
    }
    let first = qk15(&f, a, b);
    let mut total = first;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, est: first });
    while total.error > abs_tol.max(rel_tol * total.value.abs()) {
        if heap.len() >= GK_MAX_SEGMENTS {
            return Err(Error::Quadrature { requested: abs_tol, achieved: total.error });
        }
        let worst = heap.pop().expect("heap never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            heap.push(worst);
            break;
        }
        let left = qk15(&f, worst.a, mid);
        let right = qk15(&f, mid, worst.b);
        total.value += left.value + right.value - worst.est.value;
        total.error += left.error + right.error - worst.est.error;
        heap.push(Segment { a: worst.a, b: mid, est: left });
        heap.push(Segment { a: mid, b: worst.b, est: right });
    }
    // Re-sum to avoid drift from incremental updates.
    let mut value = 0.0;
    let mut error = 0.0;
    for seg in heap.iter() {
        value += seg.est.value;
        error += seg.est.error;
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("Gauss–Kronrod"));
    }
    if error > abs_tol.max(rel_tol * value.abs()) * 10.0 {
        return Err(Error::Quadrature { requested: abs_tol, achieved: error });
    }
    Ok(Estimate { value, error })
}

/// Gauss–Kronrod over `[a, b]` split at every breakpoint strictly inside it.
pub fn gauss_kronrod_pieces<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Estimate> {
    let mut nodes: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
    nodes.push(a);
    nodes.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    nodes.push(b);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let pieces = (nodes.len() - 1).max(1) as f64;
    let mut total = Estimate::zero();
    for w in nodes.windows(2) {
        let est = gauss_kronrod(&f, w[0], w[1], abs_tol / pieces, rel_tol)?;
        total.value += est.value;
        total.error += est.error;
    }
    Ok(total)
}

/// Collects the first error raised inside a nested integrand.
///
/// Integrands must be infallible `Fn(f64) -> f64`; an inner quadrature that
/// fails records its error here and returns NaN.
#[derive(Default)]
pub(crate) struct NestedErrors {
    first: Cell<Option<(f64, f64)>>,
    non_finite: Cell<bool>,
    inner_error: Cell<f64>,
}

impl NestedErrors {
    pub fn absorb(&self, r: Result<Estimate>) -> f64 {
        match r {
            Ok(e) => {
                self.inner_error.set(self.inner_error.get().max(e.error));
                e.value
            }
            Err(Error::Quadrature { requested, achieved }) => {
                if self.first.get().is_none() {
                    self.first.set(Some((requested, achieved)));
                }
                f64::NAN
            }
            Err(_) => {
                self.non_finite.set(true);
                f64::NAN
            }
        }
    }

    /// Largest inner error estimate seen so far.
    pub fn max_inner_error(&self) -> f64 {
        self.inner_error.get()
    }

    pub fn check(&self, outer: Result<Estimate>) -> Result<Estimate> {
        if let Some((requested, achieved)) = self.first.get() {
            return Err(Error::Quadrature { requested, achieved });
        }
        if self.non_finite.get() {
            return Err(Error::NonFinite("nested quadrature"));
        }
        outer
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial_is_exact() {
        let est = adaptive_simpson(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((est.value - 0.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_exponential() {
        let est = adaptive_simpson(|x: f64| (-x).exp(), 0.0, 3.0, 1e-11).unwrap();
        assert!((est.value - (1.0 - (-3.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn gauss_kronrod_smooth_and_oscillatory() {
        let est = gauss_kronrod(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-13, 0.0).unwrap();
        assert!((est.value - 2.0).abs() < 1e-13);
        let est = gauss_kronrod(|x: f64| (20.0 * x).cos(), 0.0, 1.0, 1e-12, 0.0).unwrap();
        assert!((est.value - (20.0f64).sin() / 20.0).abs() < 1e-12);
    }

    #[test]
    fn pieces_handle_kinks() {
        let f = |x: f64| (x - 0.3).abs();
        let est = gauss_kronrod_pieces(f, 0.0, 1.0, &[0.3], 1e-14, 0.0).unwrap();
        let exact = 0.5 * 0.3 * 0.3 + 0.5 * 0.7 * 0.7;
        assert!((est.value - exact).abs() < 1e-14);
    }

    #[test]
    fn composite_simpson_order_four() {
        let f = |x: f64| x.exp();
        let exact = 1f64.exp() - 1.0;
        let e1 = (composite_simpson(f, 0.0, 1.0, 8) - exact).abs();
        let e2 = (composite_simpson(f, 0.0, 1.0, 16) - exact).abs();
        let ratio = e1 / e2;
        assert!((15.0..17.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn empty_interval() {
        assert_eq!(gauss_kronrod(|x| x, 1.0, 1.0, 1e-10, 0.0).unwrap().value, 0.0);
        assert_eq!(adaptive_simpson(|x| x, 1.0, 1.0, 1e-10).unwrap().value, 0.0);
    }

    #[test]
    fn simpson_is_not_fooled_by_aliased_oscillation() {
        // sin(2x) vanishes at the five initial nodes of [0, 2π]
        let b = 2.0 * std::f64::consts::PI;
        let est = adaptive_simpson(|x: f64| (2.0 * x).sin().powi(2), 0.0, b, 1e-12).unwrap();
        assert!((est.value - std::f64::consts::PI).abs() < 1e-10, "{}", est.value);
    }
}
