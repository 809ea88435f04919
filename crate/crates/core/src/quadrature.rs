//! Gauss-Legendre rules and a dyadic adaptive integrator built on them.
//!
//! The adaptive scheme compares a panel's rule against the sum over its two
//! halves and bisects until the difference drops under the tolerance. Panels
//! are addressed as `(segment, level, index)` so that callers evaluating an
//! expensive integrand can cache per-panel data (see `charfn`).

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

/// Values that can be integrated: reals and complex numbers.
pub trait QuadValue: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `n`-point rule by Newton iteration on the Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi's initial guess for the i-th root
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<T: QuadValue>(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> T) -> T {
        let mut acc = T::zero();
        for (x, w) in self.mapped(a, b) {
            acc = acc + f(x) * w;
        }
        acc
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[derive(Clone, Copy, Debug)]
pub struct AdaptiveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: u32,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 0.0,
            max_depth: 12,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Estimate<T> {
    pub value: T,
    /// Sum of the accepted panels' |halves - whole| differences.
    pub error: f64,
    pub converged: bool,
}

impl<T: QuadValue> Estimate<T> {
    /// Error relative to the magnitude of the estimate.
    pub fn relative_error(&self) -> f64 {
        let m = self.value.magnitude();
        if m > 0.0 {
            self.error / m
        } else {
            self.error
        }
    }
}

/// Dyadic adaptive driver. `panel(seg, level, index)` must return the basic
/// rule applied to sub-panel `index` of `2^level` equal pieces of segment `seg`.
pub fn adaptive_dyadic<T: QuadValue>(
    segments: usize,
    mut panel: impl FnMut(usize, u32, u64) -> T,
    opts: &AdaptiveOptions,
) -> Estimate<T> {
    let coarse: Vec<T> = (0..segments).map(|s| panel(s, 0, 0)).collect();
    let global = coarse.iter().fold(T::zero(), |acc, &v| acc + v);
    let tol = opts.abs_tol.max(opts.rel_tol * global.magnitude());

    let mut value = T::zero();
    let mut error = 0.0;
    let mut converged = true;
    // explicit stack keeps the recursion out of the call stack
    let mut stack: Vec<(usize, u32, u64, T)> = Vec::new();
    for (s, &whole) in coarse.iter().enumerate().rev() {
        stack.push((s, 0, 0, whole));
    }
    while let Some((s, level, idx, whole)) = stack.pop() {
        let left = panel(s, level + 1, 2 * idx);
        let right = panel(s, level + 1, 2 * idx + 1);
        let halves = left + right;
        let diff = (halves - whole).magnitude();
        if diff <= tol || !diff.is_finite() {
            value = value + halves;
            error += diff;
            if !diff.is_finite() {
                converged = false;
            }
        } else if level + 1 >= opts.max_depth {
            value = value + halves;
            error += diff;
            converged = false;
        } else {
            stack.push((s, level + 1, 2 * idx + 1, right));
            stack.push((s, level + 1, 2 * idx, left));
        }
    }
    Estimate {
        value,
        error,
        converged,
    }
}

/// Adaptive integral over `[breaks[0], breaks[last]]`, with the interior
/// break points used as initial panel boundaries (place them at
/// discontinuities of `f`).
pub fn integrate_adaptive<T: QuadValue>(
    rule: &GaussLegendre,
    breaks: &[f64],
    mut f: impl FnMut(f64) -> T,
    opts: &AdaptiveOptions,
) -> Estimate<T> {
    assert!(breaks.len() >= 2, "need at least one segment");
    adaptive_dyadic(
        breaks.len() - 1,
        |s, level, idx| {
            let (a, b) = (breaks[s], breaks[s + 1]);
            let w = (b - a) / (1u64 << level) as f64;
            let lo = a + w * idx as f64;
            rule.integrate(lo, lo + w, &mut f)
        },
        opts,
    )
}

/// Sorted, deduplicated break list for `[lo, hi]` including the interior
/// points of `extra` that fall strictly inside.
pub fn break_list(lo: f64, hi: f64, extra: &[f64]) -> Vec<f64> {
    let mut v = vec![lo, hi];
    v.extend(extra.iter().copied().filter(|&x| x > lo && x < hi));
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

/// Extra break points for one axis, given the coordinates already fixed on
/// the outer axes (`outer.len()` is the axis index).
pub type AxisBreaks<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

/// Iterated adaptive integration over the box `[lo_k, hi_k]`. `breaks` is
/// consulted once per inner integral with the outer coordinates fixed, so
/// curved discontinuities (sphere or slab boundaries) can be split exactly
/// along the innermost axes.
pub fn integrate_box<T: QuadValue>(
    rule: &GaussLegendre,
    lo: &[f64],
    hi: &[f64],
    breaks: AxisBreaks<'_>,
    f: &dyn Fn(&[f64]) -> T,
    opts: &AdaptiveOptions,
) -> Estimate<T> {
    let mut point = Vec::with_capacity(lo.len());
    box_rec(rule, lo, hi, breaks, f, opts, &mut point)
}

fn box_rec<T: QuadValue>(
    rule: &GaussLegendre,
    lo: &[f64],
    hi: &[f64],
    breaks: AxisBreaks<'_>,
    f: &dyn Fn(&[f64]) -> T,
    opts: &AdaptiveOptions,
    point: &mut Vec<f64>,
) -> Estimate<T> {
    let axis = point.len();
    let axis_breaks = break_list(lo[axis], hi[axis], &breaks(point));
    if axis + 1 == lo.len() {
        point.push(0.0);
        let est = integrate_adaptive(
            rule,
            &axis_breaks,
            |x| {
                point[axis] = x;
                f(point)
            },
            opts,
        );
        point.pop();
        return est;
    }
    let mut inner_ok = true;
    let mut inner_err = 0.0;
    let mut outer = integrate_adaptive(
        rule,
        &axis_breaks,
        |x| {
            point.push(x);
            let e = box_rec(rule, lo, hi, breaks, f, opts, point);
            point.pop();
            inner_ok &= e.converged;
            inner_err = f64::max(inner_err, e.error);
            e.value
        },
        opts,
    );
    outer.converged &= inner_ok;
    outer.error += inner_err * (hi[axis] - lo[axis]);
    outer
}
