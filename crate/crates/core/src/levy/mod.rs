//! Lévy triplets `(Q, a, nu)` and their characteristic exponents.
//!
//! Jump measures come from a small set of parametric families so that
//! structural questions (mass of a ring, directional small-ball moments) can
//! be answered in closed form or by targeted quadrature.

mod hypothesis;
mod truncation;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, Matrix};
use crate::quadrature::{integrate_box, AdaptiveOptions, GaussLegendre};

pub use hypothesis::{
    hypothesis_check, hypothesis_check_with, sphere_directions, HypothesisReport, HypothesisRow,
    RescaledRow, DEFAULT_C0,
};
pub use truncation::{sample_jump, truncate_measure, JumpSampler, TruncatedMeasure};

/// Relative tolerance for jump-integral quadrature.
pub const PSI_REL_TOL: f64 = 1e-8;
/// Dyadic refinement depth for jump-integral quadrature.
pub const PSI_MAX_REFINEMENTS: u32 = 12;
const PSI_RULE_NODES: usize = 16;
/// Allowed gap between a declared compound-Poisson mass and its quadrature.
const MASS_CHECK_TOL: f64 = 1e-6;

/// Rotation-invariant α-stable jump measure with exponent `scale * |s|^alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicStable {
    alpha: f64,
    scale: f64,
    dim: usize,
}

impl IsotropicStable {
    pub fn new(alpha: f64, scale: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::param(format!("stable index must lie in (0, 2), got {alpha}")));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::param(format!("stable scale must be positive, got {scale}")));
        }
        if dim == 0 {
            return Err(Error::dim("stable measure dimension must be at least 1"));
        }
        Ok(Self { alpha, scale, dim })
    }

    /// The measure `c |z|^{-d-alpha} dz`, specified by its density constant `c`.
    pub fn with_density_constant(alpha: f64, c: f64, dim: usize) -> Result<Self> {
        let unit = Self::new(alpha, 1.0, dim)?;
        if !(c > 0.0) {
            return Err(Error::param("density constant must be positive"));
        }
        Self::new(alpha, c / unit.density_constant(), dim)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `K` in `nu(dz) = K |z|^{-d-alpha} dz`.
    pub fn density_constant(&self) -> f64 {
        stable_density_constant(self.alpha, self.scale, self.dim)
    }

    /// Density constant of the one-dimensional projection `<z, h>`, |h| = 1.
    pub fn projected_density_constant(&self) -> f64 {
        stable_density_constant(self.alpha, self.scale, 1)
    }

    /// `nu({inner <= |z| <= outer})`; `outer` may be infinite.
    pub fn ring_mass(&self, inner: f64, outer: f64) -> f64 {
        let a = self.alpha;
        let outer_term = if outer.is_finite() { outer.powf(-a) } else { 0.0 };
        self.density_constant() * sphere_area(self.dim) * (inner.powf(-a) - outer_term) / a
    }

    /// `int_{|<z,h>| <= r} <z,h>^2 nu(dz)` for any nonzero `h`.
    pub fn directional_moment(&self, h: &[f64], r: f64) -> f64 {
        let rho = norm(h);
        if rho == 0.0 {
            return 0.0;
        }
        let a = self.alpha;
        rho * rho * 2.0 * self.projected_density_constant() * (r / rho).powf(2.0 - a) / (2.0 - a)
    }

    /// `int_{|z| <= eps} z z^T nu(dz)`, a multiple of the identity.
    pub fn small_jump_covariance(&self, eps: f64) -> Matrix {
        let a = self.alpha;
        let d = self.dim as f64;
        let v = self.density_constant() * sphere_area(self.dim) / d * eps.powf(2.0 - a) / (2.0 - a);
        Matrix::identity(self.dim, self.dim) * v
    }
}

/// `K(alpha, c_alpha, d) = c_alpha alpha 2^{alpha-1} Γ((d+alpha)/2) / (π^{d/2} Γ(1-alpha/2))`.
fn stable_density_constant(alpha: f64, scale: f64, dim: usize) -> f64 {
    let d = dim as f64;
    scale * alpha * 2f64.powf(alpha - 1.0) * gamma((d + alpha) / 2.0)
        / (PI.powf(d / 2.0) * gamma(1.0 - alpha / 2.0))
}

/// Surface area of the unit sphere in R^d (2 for d = 1).
pub fn sphere_area(dim: usize) -> f64 {
    let d = dim as f64;
    2.0 * PI.powf(d / 2.0) / gamma(d / 2.0)
}

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `s -> int (1 - e^{i<s,y>}) p(y) dy`, evaluated without quadrature.
pub type ExponentFn = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

/// Finite jump measure `p(z) dz` supported in the cube `[-R, R]^d`.
#[derive(Clone)]
pub struct CompoundPoisson {
    density: DensityFn,
    dim: usize,
    total_mass: f64,
    support_radius: f64,
    breakpoints: Vec<f64>,
    density_bound: f64,
    ball_mean: Vec<f64>,
    closed_form: Option<ExponentFn>,
}

impl fmt::Debug for CompoundPoisson {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompoundPoisson")
            .field("dim", &self.dim)
            .field("total_mass", &self.total_mass)
            .field("support_radius", &self.support_radius)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

impl CompoundPoisson {
    /// `breakpoints` are coordinates (applied on every axis) where the density
    /// may jump; they become panel boundaries in every quadrature.
    pub fn new(
        dim: usize,
        density: DensityFn,
        total_mass: f64,
        support_radius: f64,
        breakpoints: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::dim("compound Poisson dimension must be at least 1"));
        }
        if !(total_mass > 0.0) || !total_mass.is_finite() {
            return Err(Error::param("compound Poisson mass must be positive and finite"));
        }
        if !(support_radius > 0.0) || !support_radius.is_finite() {
            return Err(Error::param("support radius must be positive and finite"));
        }
        let mut cp = Self {
            density,
            dim,
            total_mass,
            support_radius,
            breakpoints,
            density_bound: 0.0,
            ball_mean: vec![0.0; dim],
            closed_form: None,
        };
        let integral = cp.integrate_real(&|_| 1.0, &|_| Vec::new()).value;
        if (integral - total_mass).abs() > MASS_CHECK_TOL * total_mass.max(1.0) {
            return Err(Error::param(format!(
                "density integrates to {integral}, declared mass is {total_mass}"
            )));
        }
        cp.ball_mean = (0..dim)
            .map(|k| {
                cp.integrate_real(
                    &|z: &[f64]| if norm(z) <= 1.0 { z[k] } else { 0.0 },
                    &|outer: &[f64]| cp.sphere_breaks(outer, 1.0),
                )
                .value
            })
            .collect();
        cp.density_bound = cp.scan_density_bound();
        Ok(cp)
    }

    /// Uniform density `intensity` on the box `[lo_k, hi_k]`.
    pub fn uniform_box(lo: &[f64], hi: &[f64], intensity: f64) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::dim("box corners must share a nonzero dimension"));
        }
        if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            return Err(Error::param("box must have lo < hi on every axis"));
        }
        if !(intensity > 0.0) {
            return Err(Error::param("intensity must be positive"));
        }
        let volume: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
        let radius = lo.iter().chain(hi).fold(0.0f64, |m, v| m.max(v.abs()));
        let (l, h) = (lo.to_vec(), hi.to_vec());
        let density: DensityFn = Arc::new(move |z: &[f64]| {
            if z.iter().zip(&l).zip(&h).all(|((v, a), b)| v >= a && v <= b) {
                intensity
            } else {
                0.0
            }
        });
        let mut breaks: Vec<f64> = lo.iter().chain(hi).copied().collect();
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        let mass = intensity * volume;
        let mut cp = Self::new(lo.len(), density, mass, radius, breaks)?;
        cp.density_bound = intensity;
        let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        cp.closed_form = Some(Arc::new(move |s: &[f64]| {
            // the transform is mass e^{i<s,mid>} prod sinc(s_k half_k)
            let mut one_minus_sinc = 0.0;
            let mut sinc = 1.0;
            for (sk, wk) in s.iter().zip(&half) {
                let a = one_minus_sinc_at(sk * wk);
                one_minus_sinc += a - one_minus_sinc * a;
                sinc *= 1.0 - a;
            }
            let x = dot(s, &mid);
            let h = (0.5 * x).sin();
            mass * (Complex64::new(one_minus_sinc, 0.0) + sinc * Complex64::new(2.0 * h * h, -x.sin()))
        }));
        Ok(cp)
    }

    /// Supplies `s -> int (1 - e^{i<s,y>}) p(y) dy` in closed form, replacing
    /// the quadrature in the exponent.
    pub fn with_closed_form(mut self, f: ExponentFn) -> Self {
        self.closed_form = Some(f);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        (self.density)(z)
    }

    pub fn density_bound(&self) -> f64 {
        self.density_bound
    }

    /// `int_{|y| <= 1} y nu(dy)`, the compensator drift.
    pub fn ball_mean(&self) -> &[f64] {
        &self.ball_mean
    }

    /// Kinks of the partial integrals over a sphere of radius `r`: the
    /// sphere itself and its intersections with the breakpoint planes of the
    /// inner axes.
    fn sphere_breaks(&self, outer: &[f64], r: f64) -> Vec<f64> {
        let rest = r * r - outer.iter().map(|v| v * v).sum::<f64>();
        if rest <= 0.0 {
            return Vec::new();
        }
        let inner_axes = self.dim - outer.len() - 1;
        let squares: Vec<f64> = self
            .breakpoints
            .iter()
            .map(|b| b * b)
            .filter(|&b2| b2 > 0.0 && b2 < rest)
            .collect();
        let mut offsets = vec![0.0];
        for _ in 0..inner_axes {
            let next: Vec<f64> = offsets
                .iter()
                .flat_map(|&o| squares.iter().map(move |b2| o + b2))
                .filter(|&o| o < rest)
                .collect();
            offsets.extend(next);
        }
        offsets.sort_by(f64::total_cmp);
        offsets.dedup();
        offsets
            .iter()
            .flat_map(|o| {
                let c = (rest - o).sqrt();
                [-c, c]
            })
            .collect()
    }

    fn breaks_with(&self, extra: Vec<f64>) -> Vec<f64> {
        let mut b = self.breakpoints.clone();
        b.extend(extra);
        b
    }

    fn integrate_real(
        &self,
        g: &dyn Fn(&[f64]) -> f64,
        extra_breaks: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> crate::quadrature::Estimate<f64> {
        let r = self.support_radius;
        let lo = vec![-r; self.dim];
        let hi = vec![r; self.dim];
        let rule = GaussLegendre::new(PSI_RULE_NODES);
        let opts = AdaptiveOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_depth: 40,
        };
        integrate_box(
            &rule,
            &lo,
            &hi,
            &|outer| self.breaks_with(extra_breaks(outer)),
            &|z| {
                let p = self.density(z);
                if p == 0.0 {
                    0.0
                } else {
                    p * g(z)
                }
            },
            &opts,
        )
    }

    fn scan_density_bound(&self) -> f64 {
        let per_axis = match self.dim {
            1 => 4096,
            2 => 256,
            3 => 48,
            _ => 12,
        };
        let r = self.support_radius;
        let total = (per_axis as u64).pow(self.dim as u32);
        let mut z = vec![0.0; self.dim];
        let mut max = 0.0f64;
        for flat in 0..total {
            let mut rem = flat;
            for zk in z.iter_mut() {
                let i = rem % per_axis as u64;
                rem /= per_axis as u64;
                *zk = -r + 2.0 * r * (i as f64 + 0.5) / per_axis as f64;
            }
            max = max.max(self.density(&z));
        }
        max * 1.25
    }

    fn exponent(&self, s: &[f64]) -> Result<Complex64> {
        if let Some(f) = &self.closed_form {
            return Ok(f(s) + Complex64::new(0.0, dot(s, &self.ball_mean)));
        }
        let r = self.support_radius;
        let lo = vec![-r; self.dim];
        let hi = vec![r; self.dim];
        let rule = GaussLegendre::new(PSI_RULE_NODES);
        let opts = AdaptiveOptions {
            rel_tol: PSI_REL_TOL,
            abs_tol: 0.0,
            max_depth: PSI_MAX_REFINEMENTS,
        };
        let est = integrate_box(
            &rule,
            &lo,
            &hi,
            &|_| self.breakpoints.clone(),
            &|z| {
                let p = self.density(z);
                if p == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let x = dot(s, z);
                let half = (0.5 * x).sin();
                // 1 - e^{ix}, with the real part in a cancellation-free form
                Complex64::new(2.0 * half * half, -x.sin()) * p
            },
            &opts,
        );
        if !est.converged && est.relative_error() > PSI_REL_TOL {
            return Err(Error::Accuracy {
                what: "compound Poisson exponent",
                estimate_re: est.value.re,
                estimate_im: est.value.im,
                achieved: est.relative_error(),
            });
        }
        Ok(est.value + Complex64::new(0.0, dot(s, &self.ball_mean)))
    }

    fn directional_moment(&self, h: &[f64], r: f64) -> f64 {
        let last = self.dim - 1;
        let est = self.integrate_real(
            &|z: &[f64]| {
                let u = dot(z, h);
                if u.abs() <= r {
                    u * u
                } else {
                    0.0
                }
            },
            &|outer: &[f64]| {
                if outer.len() == last && h[last] != 0.0 {
                    let partial: f64 = outer.iter().zip(h).map(|(a, b)| a * b).sum();
                    vec![(r - partial) / h[last], (-r - partial) / h[last]]
                } else {
                    Vec::new()
                }
            },
        );
        if !est.converged {
            log::warn!(
                "directional moment quadrature stopped at relative change {:.2e}",
                est.relative_error()
            );
        }
        est.value
    }

    fn ring_mass(&self, inner: f64, outer: f64) -> f64 {
        self.integrate_real(
            &|z: &[f64]| {
                let n = norm(z);
                if n >= inner && n <= outer {
                    1.0
                } else {
                    0.0
                }
            },
            &|o: &[f64]| {
                let mut b = self.sphere_breaks(o, inner);
                if outer.is_finite() {
                    b.extend(self.sphere_breaks(o, outer));
                }
                b
            },
        )
        .value
    }

    fn ring_moment(&self, inner: f64, outer: f64, g: &dyn Fn(&[f64]) -> f64) -> f64 {
        self.integrate_real(
            &|z: &[f64]| {
                let n = norm(z);
                if n > inner && n <= outer {
                    g(z)
                } else {
                    0.0
                }
            },
            &|o: &[f64]| {
                let mut b = if inner > 0.0 {
                    self.sphere_breaks(o, inner)
                } else {
                    Vec::new()
                };
                if outer.is_finite() {
                    b.extend(self.sphere_breaks(o, outer));
                }
                b
            },
        )
        .value
    }
}

/// Parametric Lévy measure.
#[derive(Clone, Debug)]
pub enum LevyMeasure {
    IsotropicStable(IsotropicStable),
    CompoundPoisson(CompoundPoisson),
    SumOf(Vec<LevyMeasure>),
}

impl LevyMeasure {
    pub fn sum(parts: Vec<LevyMeasure>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::param("sum of measures needs at least one part"))?
            .dim();
        if parts.iter().any(|p| p.dim() != first) {
            return Err(Error::dim("all summands must share one dimension"));
        }
        Ok(LevyMeasure::SumOf(parts))
    }

    pub fn dim(&self) -> usize {
        match self {
            LevyMeasure::IsotropicStable(s) => s.dim,
            LevyMeasure::CompoundPoisson(c) => c.dim,
            LevyMeasure::SumOf(parts) => parts.first().map_or(0, LevyMeasure::dim),
        }
    }

    /// Whether the total mass is finite.
    pub fn is_finite(&self) -> bool {
        match self {
            LevyMeasure::IsotropicStable(_) => false,
            LevyMeasure::CompoundPoisson(_) => true,
            LevyMeasure::SumOf(parts) => parts.iter().all(LevyMeasure::is_finite),
        }
    }

    /// Largest stable index among the components, if any.
    pub fn stable_index(&self) -> Option<f64> {
        match self {
            LevyMeasure::IsotropicStable(s) => Some(s.alpha),
            LevyMeasure::CompoundPoisson(_) => None,
            LevyMeasure::SumOf(parts) => parts
                .iter()
                .filter_map(LevyMeasure::stable_index)
                .fold(None, |m, a| Some(m.map_or(a, |m: f64| m.max(a)))),
        }
    }

    /// Jump part of the exponent:
    /// `-int (e^{i<s,y>} - 1 - i<s,y> 1_{|y|<=1}) nu(dy)`.
    pub fn exponent(&self, s: &[f64]) -> Result<Complex64> {
        match self {
            LevyMeasure::IsotropicStable(st) => {
                let r = norm(s);
                Ok(Complex64::new(
                    if r == 0.0 { 0.0 } else { st.scale * r.powf(st.alpha) },
                    0.0,
                ))
            }
            LevyMeasure::CompoundPoisson(cp) => cp.exponent(s),
            LevyMeasure::SumOf(parts) => parts
                .iter()
                .try_fold(Complex64::new(0.0, 0.0), |acc, p| Ok(acc + p.exponent(s)?)),
        }
    }

    /// `int_{|<z,h>| <= r} <z,h>^2 nu(dz)`.
    pub fn directional_moment(&self, h: &[f64], r: f64) -> f64 {
        match self {
            LevyMeasure::IsotropicStable(st) => st.directional_moment(h, r),
            LevyMeasure::CompoundPoisson(cp) => cp.directional_moment(h, r),
            LevyMeasure::SumOf(parts) => parts.iter().map(|p| p.directional_moment(h, r)).sum(),
        }
    }

    /// `nu({inner <= |z| <= outer})`.
    pub fn ring_mass(&self, inner: f64, outer: f64) -> f64 {
        match self {
            LevyMeasure::IsotropicStable(st) => st.ring_mass(inner, outer),
            LevyMeasure::CompoundPoisson(cp) => cp.ring_mass(inner, outer),
            LevyMeasure::SumOf(parts) => parts.iter().map(|p| p.ring_mass(inner, outer)).sum(),
        }
    }

    /// `int_{inner < |z| <= outer} z nu(dz)`.
    pub fn ring_mean(&self, inner: f64, outer: f64) -> Vec<f64> {
        match self {
            LevyMeasure::IsotropicStable(st) => vec![0.0; st.dim],
            LevyMeasure::CompoundPoisson(cp) => (0..cp.dim)
                .map(|k| cp.ring_moment(inner, outer, &|z| z[k]))
                .collect(),
            LevyMeasure::SumOf(parts) => {
                let mut acc = vec![0.0; self.dim()];
                for p in parts {
                    for (a, v) in acc.iter_mut().zip(p.ring_mean(inner, outer)) {
                        *a += v;
                    }
                }
                acc
            }
        }
    }

    /// `int_{|z| <= eps} z z^T nu(dz)`.
    pub fn small_jump_covariance(&self, eps: f64) -> Matrix {
        match self {
            LevyMeasure::IsotropicStable(st) => st.small_jump_covariance(eps),
            LevyMeasure::CompoundPoisson(cp) => {
                let d = cp.dim;
                let mut m = Matrix::zeros(d, d);
                for i in 0..d {
                    for j in i..d {
                        let v = cp.ring_moment(0.0, eps, &|z| z[i] * z[j]);
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                m
            }
            LevyMeasure::SumOf(parts) => {
                let d = self.dim();
                parts
                    .iter()
                    .fold(Matrix::zeros(d, d), |acc, p| acc + p.small_jump_covariance(eps))
            }
        }
    }
}

/// `(Q, a, nu)` with `psi(s) = <Qs,s>/2 - i<a,s> - int (e^{i<s,y>} - 1 - i<s,y> 1_D(y)) nu(dy)`.
#[derive(Clone, Debug)]
pub struct LevyTriplet {
    q: Matrix,
    drift: Vec<f64>,
    measure: Option<LevyMeasure>,
    has_gaussian: bool,
}

impl LevyTriplet {
    pub fn new(q: Matrix, drift: Vec<f64>, measure: Option<LevyMeasure>) -> Result<Self> {
        let d = drift.len();
        if d == 0 {
            return Err(Error::dim("triplet dimension must be at least 1"));
        }
        if q.nrows() != d || q.ncols() != d {
            return Err(Error::dim(format!(
                "Gaussian covariance must be {d}x{d}, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if let Some(m) = &measure {
            if m.dim() != d {
                return Err(Error::dim(format!(
                    "jump measure has dimension {}, triplet has {d}",
                    m.dim()
                )));
            }
        }
        if q.iter().chain(&drift).any(|v| !v.is_finite()) {
            return Err(Error::param("triplet entries must be finite"));
        }
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::param(format!("Q is not symmetric (max asymmetry {asym:.2e})")));
        }
        if min_eigenvalue(&q) < -1e-12 {
            return Err(Error::param("Q must be positive semidefinite"));
        }
        let has_gaussian = q.iter().any(|&v| v != 0.0);
        Ok(Self {
            q,
            drift,
            measure,
            has_gaussian,
        })
    }

    /// Pure Gaussian triplet `(Q, 0, none)`.
    pub fn gaussian(q: Matrix) -> Result<Self> {
        let d = q.nrows();
        Self::new(q, vec![0.0; d], None)
    }

    /// Pure jump triplet `(0, 0, nu)`.
    pub fn pure_jump(measure: LevyMeasure) -> Result<Self> {
        let d = measure.dim();
        Self::new(Matrix::zeros(d, d), vec![0.0; d], Some(measure))
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn measure(&self) -> Option<&LevyMeasure> {
        self.measure.as_ref()
    }

    /// Characteristic exponent, `E e^{i<u, Z_t>} = e^{-t psi(u)}`.
    pub fn psi(&self, s: &[f64]) -> Result<Complex64> {
        if s.len() != self.dim() {
            return Err(Error::dim(format!(
                "argument has dimension {}, triplet has {}",
                s.len(),
                self.dim()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("psi argument must be finite"));
        }
        let d = s.len();
        let mut gauss = 0.0;
        if self.has_gaussian {
            for i in 0..d {
                let row: f64 = (0..d).map(|j| self.q[(i, j)] * s[j]).sum();
                gauss += s[i] * row;
            }
            gauss *= 0.5;
        }
        let mut out = Complex64::new(gauss, -dot(&self.drift, s));
        if let Some(m) = &self.measure {
            out += m.exponent(s)?;
        }
        Ok(out)
    }
}

/// `1 - sin(x)/x` without cancellation near 0.
fn one_minus_sinc_at(x: f64) -> f64 {
    if x.abs() < 0.5 {
        let y = x * x;
        // alternating series y/3! - y^2/5! + ...
        let mut term = y / 6.0;
        let mut sum = 0.0;
        let mut k = 3.0;
        for _ in 0..8 {
            sum += term;
            term *= -y / ((2.0 * k - 2.0) * (2.0 * k - 1.0));
            k += 1.0;
        }
        sum
    } else {
        1.0 - x.sin() / x
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn box_closed_form_matches_quadrature() {
        for (lo, hi) in [(vec![1.0], vec![2.0]), (vec![-0.5, 0.2], vec![1.5, 0.9])] {
            let exact = CompoundPoisson::uniform_box(&lo, &hi, 0.7).unwrap();
            let (l, h) = (lo.clone(), hi.clone());
            let generic = CompoundPoisson::new(
                lo.len(),
                Arc::new(move |z: &[f64]| {
                    if z.iter().zip(&l).zip(&h).all(|((v, a), b)| v >= a && v <= b) {
                        0.7
                    } else {
                        0.0
                    }
                }),
                exact.total_mass(),
                exact.support_radius(),
                exact.breakpoints.clone(),
            )
            .unwrap();
            for s in [vec![1e-6; lo.len()], vec![0.3; lo.len()], vec![-4.0; lo.len()], vec![11.0; lo.len()]] {
                let a = exact.exponent(&s).unwrap();
                let b = generic.exponent(&s).unwrap();
                assert!((a - b).norm() <= 1e-8 * a.norm().max(1e-12), "{s:?}: {a} vs {b}");
            }
        }
        assert!((one_minus_sinc_at(0.49) - (1.0 - 0.49f64.sin() / 0.49)).abs() < 1e-16);
    }

    fn unit_interval_cp() -> LevyMeasure {
        LevyMeasure::CompoundPoisson(CompoundPoisson::uniform_box(&[1.0], &[2.0], 1.0).unwrap())
    }

    #[test]
    fn gaussian_exponent() {
        let t = LevyTriplet::gaussian(Matrix::identity(2, 2)).unwrap();
        assert_relative_eq!(t.psi(&[1.0, 1.0]).unwrap().re, 1.0, epsilon = 1e-15);
        assert_eq!(t.psi(&[1.0, 1.0]).unwrap().im, 0.0);
    }

    #[test]
    fn stable_exponent_closed_form() {
        let m = LevyMeasure::IsotropicStable(IsotropicStable::new(1.5, 1.0, 2).unwrap());
        let t = LevyTriplet::pure_jump(m).unwrap();
        let v = t.psi(&[2.0f64.sqrt(), 2.0f64.sqrt()]).unwrap();
        assert_relative_eq!(v.re, 2f64.powf(1.5), max_relative = 1e-14);
        assert_relative_eq!(v.re, 2.828_427_124_746_19, max_relative = 1e-12);
    }

    #[test]
    fn compound_poisson_exponent_matches_antiderivative() {
        let t = LevyTriplet::pure_jump(unit_interval_cp()).unwrap();
        assert_eq!(t.psi(&[0.0]).unwrap(), Complex64::new(0.0, 0.0));
        let v = t.psi(&[PI]).unwrap();
        // 1 - int_1^2 cos(pi y) dy - i int_1^2 sin(pi y) dy = 1 + 2i/pi
        assert_relative_eq!(v.re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(v.im, 2.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn compensator_applies_inside_the_unit_ball() {
        // uniform on [-0.5, 1.5]: compensator mean is int_{-0.5}^{1} y dy = 0.375
        let cp = CompoundPoisson::uniform_box(&[-0.5], &[1.5], 0.5).unwrap();
        assert_relative_eq!(cp.ball_mean()[0], 0.5 * 0.375, epsilon = 1e-12);
        let t = LevyTriplet::pure_jump(LevyMeasure::CompoundPoisson(cp)).unwrap();
        let s = 0.7;
        let v = t.psi(&[s]).unwrap();
        let re = 0.5 * (2.0 - ((1.5 * s).sin() - (-0.5 * s).sin()) / s);
        let im = 0.5 * ((1.5 * s).cos() - (-0.5 * s).cos()) / s + s * 0.5 * 0.375;
        assert_relative_eq!(v.re, re, epsilon = 1e-12);
        assert_relative_eq!(v.im, im, epsilon = 1e-12);
    }

    #[test]
    fn declared_mass_is_checked() {
        let density: DensityFn = Arc::new(|z: &[f64]| if z[0].abs() <= 1.0 { 1.0 } else { 0.0 });
        assert!(CompoundPoisson::new(1, density.clone(), 2.0, 1.0, vec![]).is_ok());
        assert!(CompoundPoisson::new(1, density, 2.5, 1.0, vec![]).is_err());
    }

    #[test]
    fn stable_constants_agree_in_one_dimension() {
        // K_1 = c Γ(1+α) sin(πα/2) / π
        for alpha in [0.5, 1.0, 1.5, 1.9] {
            let s = IsotropicStable::new(alpha, 1.3, 1).unwrap();
            let k = 1.3 * gamma(1.0 + alpha) * (PI * alpha / 2.0).sin() / PI;
            assert_relative_eq!(s.density_constant(), k, max_relative = 1e-12);
        }
    }

    #[test]
    fn stable_constant_matches_exponent_by_quadrature() {
        // int (1 - cos(s z)) K |z|^{-1-α} dz = c |s|^α for the 1-d stable measure
        let st = IsotropicStable::new(1.5, 1.0, 1).unwrap();
        let k = st.density_constant();
        let s: f64 = 1.7;
        // split [0, inf) into [0, 1] and [1, inf) via z = 1/u
        let rule = GaussLegendre::new(16);
        let opts = AdaptiveOptions {
            rel_tol: 1e-12,
            abs_tol: 0.0,
            max_depth: 40,
        };
        let near = crate::quadrature::integrate_adaptive(
            &rule,
            &[0.0, 1.0],
            |z: f64| {
                let h = (0.5 * s * z).sin();
                2.0 * h * h * z.powf(-2.5)
            },
            &opts,
        );
        let far = crate::quadrature::integrate_adaptive(
            &rule,
            &[0.0, 1.0],
            |u: f64| {
                if u == 0.0 {
                    return 0.0;
                }
                let z = 1.0 / u;
                (1.0 - (s * z).cos()) * z.powf(-2.5) / (u * u)
            },
            &AdaptiveOptions {
                max_depth: 60,
                rel_tol: 1e-9,
                ..opts
            },
        );
        let total = 2.0 * k * (near.value + far.value);
        assert_relative_eq!(total, s.powf(1.5), max_relative = 1e-6);
    }

    #[test]
    fn ring_mass_closed_form() {
        let st = IsotropicStable::with_density_constant(1.0, 1.0, 1).unwrap();
        assert_relative_eq!(st.density_constant(), 1.0, max_relative = 1e-13);
        assert_relative_eq!(st.ring_mass(0.1, 1.0), 18.0, max_relative = 1e-12);
        assert_relative_eq!(st.ring_mass(0.5, 1.0), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn two_dimensional_ring_mass_by_quadrature() {
        let cp = CompoundPoisson::uniform_box(&[-1.0, -1.0], &[1.0, 1.0], 0.25).unwrap();
        let m = LevyMeasure::CompoundPoisson(cp);
        // quarter-density times annulus area
        let expect = 0.25 * PI * (0.81 - 0.09);
        assert_relative_eq!(m.ring_mass(0.3, 0.9), expect, max_relative = 1e-8);
    }

    #[test]
    fn triplet_validation() {
        let q = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(LevyTriplet::gaussian(q).is_err());
        let q = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(LevyTriplet::gaussian(q).is_err());
        let m = LevyMeasure::IsotropicStable(IsotropicStable::new(1.0, 1.0, 3).unwrap());
        assert!(LevyTriplet::new(Matrix::zeros(2, 2), vec![0.0; 2], Some(m)).is_err());
        assert!(IsotropicStable::new(2.0, 1.0, 1).is_err());
    }

    #[test]
    fn sum_adds_exponents() {
        let st = LevyMeasure::IsotropicStable(IsotropicStable::new(1.2, 0.7, 1).unwrap());
        let sum = LevyMeasure::sum(vec![st.clone(), unit_interval_cp()]).unwrap();
        for s in [-3.0, 0.4, 2.5] {
            let a = sum.exponent(&[s]).unwrap();
            let b = st.exponent(&[s]).unwrap() + unit_interval_cp().exponent(&[s]).unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }
}
