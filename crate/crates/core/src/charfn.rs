//! Characteristic function of the OU process at time t,
//!
//! `E e^{i<h, X_t^x>} = e^{i<e^{tA*}h, x>} exp(-Phi(t, h))`,
//! `Phi(t, h) = int_0^t psi(B* e^{sA*} h) ds`,
//!
//! and an empirical check of the decay `|e^{-Phi(t, y)}| <= c e^{-a |y|^alpha}`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{sphere_directions, LevyTriplet};
use crate::linalg::{expm_unchecked, rank_condition, Matrix, OuSystem, DEFAULT_RANK_TOL};
use crate::quadrature::{adaptive_dyadic, AdaptiveOptions, GaussLegendre};

/// Panels at or below this level cache their node matrices.
const CACHE_LEVEL: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentQuadConfig {
    /// Gauss-Legendre nodes per panel.
    pub node_count: usize,
    /// Initial equal panels on `[0, t]`.
    pub panel_count: usize,
    /// Maximum dyadic bisection depth below the initial panels.
    pub refinement_limit: u32,
    pub rel_tol: f64,
}

impl Default for ExponentQuadConfig {
    fn default() -> Self {
        Self {
            node_count: 16,
            panel_count: 8,
            refinement_limit: 24,
            rel_tol: 1e-10,
        }
    }
}

impl ExponentQuadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_count < 2 {
            return Err(Error::param("node_count must be at least 2"));
        }
        if self.panel_count < 1 {
            return Err(Error::param("panel_count must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::param("rel_tol must be positive"));
        }
        Ok(())
    }
}

/// Evaluates `Phi(t, .)` for one system, triplet and horizon, caching the
/// matrices `B* e^{sA*}` at quadrature nodes across calls.
pub struct ExponentIntegrator<'a> {
    triplet: &'a LevyTriplet,
    a_adj: Matrix,
    b_adj: Matrix,
    exp_t_adj: Matrix,
    t: f64,
    cfg: ExponentQuadConfig,
    rule: GaussLegendre,
    n: usize,
    d: usize,
    cache: RwLock<HashMap<(u32, u32, u64), Arc<PanelNodes>>>,
}

/// Row-major `d x n` blocks `B* e^{s_j A*}` with the mapped weights.
struct PanelNodes {
    mats: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> ExponentIntegrator<'a> {
    pub fn new(sys: &OuSystem, triplet: &'a LevyTriplet, t: f64, cfg: ExponentQuadConfig) -> Result<Self> {
        cfg.validate()?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::param(format!("time must be finite and nonnegative, got {t}")));
        }
        if triplet.dim() != sys.noise_dim() {
            return Err(Error::dim(format!(
                "triplet dimension {} does not match noise dimension {}",
                triplet.dim(),
                sys.noise_dim()
            )));
        }
        let a_adj = sys.a().transpose();
        Ok(Self {
            triplet,
            exp_t_adj: expm_unchecked(&a_adj, t),
            a_adj,
            b_adj: sys.b().transpose(),
            t,
            cfg,
            rule: GaussLegendre::new(cfg.node_count),
            n: sys.state_dim(),
            d: sys.noise_dim(),
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// `e^{tA*} h`.
    pub fn propagate(&self, h: &[f64]) -> Vec<f64> {
        mat_vec(self.exp_t_adj.as_slice(), self.n, self.n, h, true)
    }

    fn panel_bounds(&self, seg: usize, level: u32, idx: u64) -> (f64, f64) {
        let seg_w = self.t / self.cfg.panel_count as f64;
        let w = seg_w / (1u64 << level) as f64;
        let lo = seg_w * seg as f64 + w * idx as f64;
        (lo, lo + w)
    }

    fn build_panel(&self, lo: f64, hi: f64) -> PanelNodes {
        let mut mats = Vec::with_capacity(self.rule.len() * self.d * self.n);
        let mut weights = Vec::with_capacity(self.rule.len());
        for (s, w) in self.rule.mapped(lo, hi) {
            let m = &self.b_adj * expm_unchecked(&self.a_adj, s);
            for i in 0..self.d {
                for j in 0..self.n {
                    mats.push(m[(i, j)]);
                }
            }
            weights.push(w);
        }
        PanelNodes { mats, weights }
    }

    fn panel(&self, seg: usize, level: u32, idx: u64) -> Arc<PanelNodes> {
        let (lo, hi) = self.panel_bounds(seg, level, idx);
        if level > CACHE_LEVEL {
            return Arc::new(self.build_panel(lo, hi));
        }
        let key = (seg as u32, level, idx);
        if let Some(p) = self.cache.read().expect("cache lock").get(&key) {
            return Arc::clone(p);
        }
        let p = Arc::new(self.build_panel(lo, hi));
        self.cache
            .write()
            .expect("cache lock")
            .insert(key, Arc::clone(&p));
        p
    }

    /// `Phi(t, h)` with its quadrature diagnostics.
    pub fn exponent_estimate(&self, h: &[f64]) -> Result<crate::quadrature::Estimate<Complex64>> {
        if h.len() != self.n {
            return Err(Error::dim(format!(
                "frequency has dimension {}, state has {}",
                h.len(),
                self.n
            )));
        }
        if self.t == 0.0 || h.iter().all(|&v| v == 0.0) {
            return Ok(crate::quadrature::Estimate {
                value: Complex64::new(0.0, 0.0),
                error: 0.0,
                converged: true,
            });
        }
        let mut first_err: Option<Error> = None;
        let mut u = vec![0.0; self.d];
        let opts = AdaptiveOptions {
            rel_tol: self.cfg.rel_tol,
            abs_tol: 0.0,
            max_depth: self.cfg.refinement_limit,
        };
        let est = adaptive_dyadic(
            self.cfg.panel_count,
            |seg, level, idx| {
                let p = self.panel(seg, level, idx);
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, &w) in p.weights.iter().enumerate() {
                    let m = &p.mats[k * self.d * self.n..(k + 1) * self.d * self.n];
                    for (i, ui) in u.iter_mut().enumerate() {
                        *ui = m[i * self.n..(i + 1) * self.n]
                            .iter()
                            .zip(h)
                            .map(|(a, b)| a * b)
                            .sum();
                    }
                    match self.triplet.psi(&u) {
                        Ok(v) => acc += v * w,
                        Err(e) => {
                            first_err.get_or_insert(e);
                        }
                    }
                }
                acc
            },
            &opts,
        );
        if let Some(e) = first_err {
            return Err(e);
        }
        Ok(est)
    }

    /// `Phi(t, h) = int_0^t psi(B* e^{sA*} h) ds`.
    pub fn exponent(&self, h: &[f64]) -> Result<Complex64> {
        let est = self.exponent_estimate(h)?;
        if !est.converged && est.relative_error() > self.cfg.rel_tol {
            return Err(Error::Accuracy {
                what: "OU exponent quadrature",
                estimate_re: est.value.re,
                estimate_im: est.value.im,
                achieved: est.relative_error(),
            });
        }
        Ok(est.value)
    }

    /// `E e^{i<h, X_t^x>}`.
    pub fn charfn(&self, x: &[f64], h: &[f64]) -> Result<Complex64> {
        if x.len() != self.n {
            return Err(Error::dim("starting point has the wrong dimension"));
        }
        let phi = self.exponent(h)?;
        let phase: f64 = self.propagate(h).iter().zip(x).map(|(a, b)| a * b).sum();
        Ok(Complex64::from_polar(1.0, phase) * (-phi).exp())
    }
}

pub(crate) fn mat_vec(m: &[f64], rows: usize, cols: usize, v: &[f64], col_major: bool) -> Vec<f64> {
    (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| {
                    let a = if col_major { m[j * rows + i] } else { m[i * cols + j] };
                    a * v[j]
                })
                .sum()
        })
        .collect()
}

/// `Phi(t, h) = int_0^t psi(B* e^{sA*} h) ds`.
pub fn ou_exponent(
    sys: &OuSystem,
    triplet: &LevyTriplet,
    t: f64,
    h: &[f64],
    cfg: &ExponentQuadConfig,
) -> Result<Complex64> {
    ExponentIntegrator::new(sys, triplet, t, *cfg)?.exponent(h)
}

/// `E e^{i<h, X_t^x>} = e^{i<e^{tA*}h, x>} e^{-Phi(t, h)}`.
pub fn ou_charfn(
    sys: &OuSystem,
    triplet: &LevyTriplet,
    t: f64,
    x: &[f64],
    h: &[f64],
    cfg: &ExponentQuadConfig,
) -> Result<Complex64> {
    ExponentIntegrator::new(sys, triplet, t, *cfg)?.charfn(x, h)
}

/// Per-ray least-squares fit of `log|mu_t(rho u)| = log c - a rho^alpha`.
#[derive(Clone, Debug, Serialize)]
pub struct RayFit {
    pub log_c: f64,
    pub a: f64,
    pub alpha: f64,
    pub rms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub directions: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    /// `|mu_t(rho u)|`, indexed `[direction][radius]`.
    pub envelope: Vec<Vec<f64>>,
    /// `-Re Phi(t, rho u)`, the same data in log scale (never underflows).
    pub log_envelope: Vec<Vec<f64>>,
    pub ray_fits: Vec<RayFit>,
    /// Slowest rate over the rays.
    pub fitted_a_t: f64,
    /// Largest prefactor over the rays.
    pub fitted_c_t: f64,
    /// Smallest exponent over the rays.
    pub fitted_alpha: f64,
    /// RMS log-scale residual of the per-ray fits, relative to the RMS of the data.
    pub fit_residual: f64,
    /// The envelope stops shrinking along at least one ray.
    pub non_decaying: bool,
    /// Every envelope value underflowed to zero.
    pub saturated: bool,
}

impl DecayReport {
    /// `c e^{-a rho^alpha}` with the pooled constants.
    pub fn bound(&self, rho: f64) -> f64 {
        self.fitted_c_t * (-self.fitted_a_t * rho.powf(self.fitted_alpha)).exp()
    }

    /// Radius beyond which the pooled bound drops below `level`.
    pub fn radius_for(&self, level: f64) -> Option<f64> {
        if self.non_decaying || !(self.fitted_a_t > 0.0) {
            return None;
        }
        let target = (self.fitted_c_t / level).ln();
        if target <= 0.0 {
            return Some(1.0);
        }
        Some((target / self.fitted_a_t).powf(1.0 / self.fitted_alpha).max(1.0))
    }

    /// `(2 pi)^{-n} int_{|h| > radius} |h|^power c e^{-a |h|^alpha} dh` for the pooled fit.
    pub fn tail_integral(&self, n: usize, radius: f64, power: u32) -> f64 {
        if self.non_decaying || !(self.fitted_a_t > 0.0) {
            return f64::INFINITY;
        }
        use statrs::function::gamma::{gamma, gamma_ur};
        let nf = n as f64;
        let (a, al) = (self.fitted_a_t, self.fitted_alpha);
        let s = (nf + power as f64) / al;
        let x = a * radius.powf(al);
        let area = crate::levy::sphere_area(n);
        let upper = gamma_ur(s, x) * gamma(s);
        self.fitted_c_t * area * upper / (al * a.powf(s)) / (2.0 * std::f64::consts::PI).powf(nf)
    }
}

/// `count` geometric radii from 1 to `r_max`.
pub fn geometric_radii(r_max: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![r_max.max(1.0)];
    }
    let ratio = r_max.max(1.0).ln() / (count - 1) as f64;
    (0..count).map(|i| (ratio * i as f64).exp()).collect()
}

/// Evaluates `|mu_t|` along `ray_count` rays at `radii` and fits the decay.
pub fn decay_probe(
    sys: &OuSystem,
    triplet: &LevyTriplet,
    t: f64,
    ray_count: usize,
    radii: &[f64],
    cfg: &ExponentQuadConfig,
) -> Result<DecayReport> {
    if radii.len() < 4 {
        return Err(Error::param("decay probe needs at least four radii"));
    }
    if radii.iter().any(|&r| r < 1.0) || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("radii must be increasing and at least 1"));
    }
    if ray_count == 0 {
        return Err(Error::param("need at least one ray"));
    }
    let rank = rank_condition(sys, DEFAULT_RANK_TOL)?;
    if !rank.satisfied {
        return Err(Error::Precondition(format!(
            "rank condition fails (rank {} of {})",
            rank.rank,
            sys.state_dim()
        )));
    }
    let integ = ExponentIntegrator::new(sys, triplet, t, *cfg)?;
    let n = sys.state_dim();
    let directions = sphere_directions(n, ray_count, 0x5eed);
    let mut envelope = Vec::with_capacity(directions.len());
    let mut log_envelope = Vec::with_capacity(directions.len());
    for u in &directions {
        let mut env = Vec::with_capacity(radii.len());
        let mut logs = Vec::with_capacity(radii.len());
        for &rho in radii {
            let h: Vec<f64> = u.iter().map(|v| v * rho).collect();
            let phi = integ.exponent(&h)?;
            logs.push(-phi.re);
            env.push((-phi.re).exp().min(1.0));
        }
        envelope.push(env);
        log_envelope.push(logs);
    }

    let ray_fits: Vec<RayFit> = log_envelope.iter().map(|y| fit_ray(radii, y)).collect();
    let fitted_alpha = ray_fits.iter().map(|f| f.alpha).fold(f64::INFINITY, f64::min);
    let fitted_a_t = ray_fits.iter().map(|f| f.a).fold(f64::INFINITY, f64::min);
    let fitted_c_t = ray_fits
        .iter()
        .map(|f| f.log_c.exp())
        .fold(0.0, f64::max)
        .max(1.0);
    let (mut sse, mut ss) = (0.0, 0.0);
    for (fit, y) in ray_fits.iter().zip(&log_envelope) {
        for (&rho, &v) in radii.iter().zip(y) {
            let model = fit.log_c - fit.a * rho.powf(fit.alpha);
            sse += (model - v).powi(2);
            ss += v * v;
        }
    }
    let fit_residual = if ss > 0.0 { (sse / ss).sqrt() } else { 0.0 };

    // growth of -log|mu| between R/2 and R: at least 2^0.1 for any power decay
    let last = radii.len() - 1;
    let half_idx = radii
        .iter()
        .rposition(|&r| r <= radii[last] / 2.0)
        .unwrap_or(0);
    let growth_floor = (radii[last] / radii[half_idx]).powf(0.1);
    let stalls = log_envelope.iter().any(|y| {
        let (far, mid) = (-y[last], -y[half_idx]);
        !(mid > 0.0 && far / mid >= growth_floor)
    });
    let non_decaying = stalls || !(fitted_alpha >= 0.1) || !(fitted_a_t > 0.0);
    let saturated = envelope.iter().flatten().all(|&v| v == 0.0);

    Ok(DecayReport {
        directions,
        radii: radii.to_vec(),
        envelope,
        log_envelope,
        ray_fits,
        fitted_a_t,
        fitted_c_t,
        fitted_alpha,
        fit_residual,
        non_decaying,
        saturated,
    })
}

fn fit_ray(radii: &[f64], y: &[f64]) -> RayFit {
    let eval = |alpha: f64| -> RayFit {
        // y = log_c - a x, x = rho^alpha
        let m = radii.len() as f64;
        let xs: Vec<f64> = radii.iter().map(|r| r.powf(alpha)).collect();
        let mx = xs.iter().sum::<f64>() / m;
        let my = y.iter().sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(y).map(|(x, v)| (x - mx) * (v - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let log_c = my - slope * mx;
        let rms = (xs
            .iter()
            .zip(y)
            .map(|(x, v)| (log_c + slope * x - v).powi(2))
            .sum::<f64>()
            / m)
            .sqrt();
        RayFit {
            log_c,
            a: -slope,
            alpha,
            rms,
        }
    };
    let (lo, hi) = (0.02, 4.0);
    let steps = 200;
    let mut best = eval(lo);
    let mut best_i = 0;
    for i in 1..=steps {
        let a = lo + (hi - lo) * i as f64 / steps as f64;
        let f = eval(a);
        if f.rms < best.rms {
            best = f;
            best_i = i;
        }
    }
    // golden-section refinement around the best grid point
    let h = (hi - lo) / steps as f64;
    let (mut a, mut b) = (
        (lo + h * (best_i as f64 - 1.0)).max(lo),
        (lo + h * (best_i as f64 + 1.0)).min(hi),
    );
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..80 {
        if fc.rms < fd.rms {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d);
        }
    }
    let refined = if fc.rms < fd.rms { fc } else { fd };
    if refined.rms <= best.rms {
        refined
    } else {
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{CompoundPoisson, IsotropicStable, LevyMeasure};
    use approx::assert_relative_eq;

    pub(crate) fn stable_ou_1d() -> (OuSystem, LevyTriplet) {
        let sys = OuSystem::new(Matrix::from_element(1, 1, -1.0), Matrix::from_element(1, 1, 1.0)).unwrap();
        let st = IsotropicStable::new(1.5, 1.0, 1).unwrap();
        (sys, LevyTriplet::pure_jump(LevyMeasure::IsotropicStable(st)).unwrap())
    }

    /// `|h|^alpha (1 - e^{-alpha lambda t}) / (alpha lambda)`
    fn stable_exponent_oracle(h: f64, t: f64) -> f64 {
        h.abs().powf(1.5) * (1.0 - (-1.5 * t).exp()) / 1.5
    }

    #[test]
    fn exponent_vanishes_at_time_zero() {
        let (sys, tr) = stable_ou_1d();
        let v = ou_exponent(&sys, &tr, 0.0, &[3.0], &ExponentQuadConfig::default()).unwrap();
        assert_eq!(v, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn constant_integrand_for_zero_drift() {
        let sys = OuSystem::new(Matrix::zeros(2, 2), Matrix::identity(2, 2)).unwrap();
        let tr = LevyTriplet::gaussian(Matrix::identity(2, 2)).unwrap();
        let v = ou_exponent(&sys, &tr, 2.0, &[1.0, 0.0], &ExponentQuadConfig::default()).unwrap();
        assert_relative_eq!(v.re, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn stable_ou_exponent_closed_form() {
        let (sys, tr) = stable_ou_1d();
        let cfg = ExponentQuadConfig::default();
        let v = ou_exponent(&sys, &tr, 1.0, &[2.0], &cfg).unwrap();
        assert_relative_eq!(v.re, stable_exponent_oracle(2.0, 1.0), max_relative = 1e-10);
        assert!((v.re - 1.46488).abs() < 1e-4);
        let c = ou_charfn(&sys, &tr, 1.0, &[0.0], &[2.0], &cfg).unwrap();
        assert_relative_eq!(c.re, (-stable_exponent_oracle(2.0, 1.0)).exp(), max_relative = 1e-10);
        assert!((c.re - 0.23110).abs() < 1e-4);
    }

    #[test]
    fn charfn_at_origin_and_phase() {
        let sys = OuSystem::kolmogorov();
        let st = IsotropicStable::new(1.5, 1.0, 1).unwrap();
        let tr = LevyTriplet::pure_jump(LevyMeasure::IsotropicStable(st)).unwrap();
        let cfg = ExponentQuadConfig::default();
        let one = ou_charfn(&sys, &tr, 1.0, &[0.3, -2.0], &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(one, Complex64::new(1.0, 0.0));
        let h = [0.7, -0.4];
        let x = [0.5, 1.0];
        let with_x = ou_charfn(&sys, &tr, 1.0, &x, &h, &cfg).unwrap();
        let without = ou_charfn(&sys, &tr, 1.0, &[0.0, 0.0], &h, &cfg).unwrap();
        // e^{tA} x = (x1, x1 t + x2)
        let phase = h[0] * x[0] + h[1] * (x[0] + x[1]);
        let expect = without * Complex64::from_polar(1.0, phase);
        assert!((with_x - expect).norm() < 1e-14);
        let conj = ou_charfn(&sys, &tr, 1.0, &x, &[-h[0], -h[1]], &cfg).unwrap();
        assert!((conj - with_x.conj()).norm() < 1e-12);
    }

    #[test]
    fn kolmogorov_stable_exponent_matches_direct_integral() {
        // B* e^{sA*} h = h1 + s h2; integrate |h1 + s h2|^1.5 in closed form
        let sys = OuSystem::kolmogorov();
        let st = IsotropicStable::new(1.5, 1.0, 1).unwrap();
        let tr = LevyTriplet::pure_jump(LevyMeasure::IsotropicStable(st)).unwrap();
        let (h1, h2) = (1.0f64, -2.5f64);
        let anti = |s: f64| {
            let v = h1 + s * h2;
            v.signum() * v.abs().powf(2.5) / (2.5 * h2)
        };
        let oracle = anti(1.0) - anti(0.0);
        let v = ou_exponent(&sys, &tr, 1.0, &[h1, h2], &ExponentQuadConfig::default()).unwrap();
        assert_relative_eq!(v.re, oracle, max_relative = 1e-9);
    }

    #[test]
    fn decay_fit_for_stable_ou() {
        let (sys, tr) = stable_ou_1d();
        let radii = geometric_radii(40.0, 32);
        let rep = decay_probe(&sys, &tr, 1.0, 2, &radii, &ExponentQuadConfig::default()).unwrap();
        assert!((rep.fitted_alpha - 1.5).abs() < 1e-3, "{}", rep.fitted_alpha);
        assert!((rep.fitted_a_t - (1.0 - (-1.5f64).exp()) / 1.5).abs() < 1e-3);
        assert!(!rep.non_decaying);
        assert!(rep.fit_residual < 1e-6);
    }

    #[test]
    fn decay_fit_for_gaussian() {
        let sys = OuSystem::new(Matrix::zeros(2, 2), Matrix::identity(2, 2)).unwrap();
        let tr = LevyTriplet::gaussian(Matrix::identity(2, 2)).unwrap();
        let rep = decay_probe(&sys, &tr, 1.0, 6, &geometric_radii(20.0, 32), &ExponentQuadConfig::default())
            .unwrap();
        assert!((rep.fitted_alpha - 2.0).abs() < 1e-2);
        assert!(!rep.saturated);
    }

    #[test]
    fn compound_poisson_alone_does_not_decay() {
        let sys = OuSystem::new(Matrix::from_element(1, 1, -1.0), Matrix::from_element(1, 1, 1.0)).unwrap();
        let cp = CompoundPoisson::uniform_box(&[1.0], &[2.0], 1.0).unwrap();
        let mass = cp.total_mass();
        let tr = LevyTriplet::pure_jump(LevyMeasure::CompoundPoisson(cp)).unwrap();
        let t = 1.0;
        let cfg = ExponentQuadConfig {
            rel_tol: 1e-8,
            ..Default::default()
        };
        let rep = decay_probe(&sys, &tr, t, 2, &geometric_radii(30.0, 16), &cfg).unwrap();
        assert!(rep.non_decaying);
        let floor = (-2.0 * t * mass).exp();
        assert!(rep.envelope.iter().flatten().all(|&v| v >= floor));
    }

    #[test]
    fn rank_deficient_system_is_refused() {
        let sys = OuSystem::new(Matrix::zeros(2, 2), Matrix::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        let tr = LevyTriplet::gaussian(Matrix::identity(1, 1)).unwrap();
        let r = decay_probe(&sys, &tr, 1.0, 3, &geometric_radii(10.0, 8), &ExponentQuadConfig::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn tail_integral_matches_quadrature() {
        let rep = DecayReport {
            directions: vec![],
            radii: vec![],
            envelope: vec![],
            log_envelope: vec![],
            ray_fits: vec![],
            fitted_a_t: 0.5,
            fitted_c_t: 1.5,
            fitted_alpha: 1.5,
            fit_residual: 0.0,
            non_decaying: false,
            saturated: false,
        };
        // n = 1: (2 pi)^{-1} * 2 * int_H^inf c e^{-a r^alpha} dr
        let rule = GaussLegendre::new(64);
        let tail: f64 = (0..200)
            .map(|k| {
                let lo = 3.0 + k as f64 * 0.5;
                rule.integrate(lo, lo + 0.5, |r| 1.5 * (-0.5 * r.powf(1.5)).exp())
            })
            .sum();
        let expect = 2.0 * tail / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(rep.tail_integral(1, 3.0, 0), expect, max_relative = 1e-9);
    }
}
