//! Fourier inversion of the OU characteristic function on a regular grid,
//! derivatives of the density, the transition operator and the density of a
//! linear image of an absolutely continuous law.

use std::io::Write;

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::charfn::{decay_probe, geometric_radii, DecayReport, ExponentIntegrator, ExponentQuadConfig};
use crate::error::{Error, Result};
use crate::levy::LevyTriplet;
use crate::linalg::{expm_unchecked, numerical_rank, Matrix, OuSystem, DEFAULT_RANK_TOL};
use crate::quadrature::{integrate_box, AdaptiveOptions, GaussLegendre};

pub const MAX_GRID_DIM: usize = 3;
pub const MAX_DERIVATIVE_ORDER: u32 = 4;
/// `Re Phi` beyond which `e^{-Phi}` is below `4e-18` and quadrature accuracy is moot.
const NEGLIGIBLE_EXPONENT: f64 = 40.0;
/// Fraction of each axis, per side, treated as the grid's edge band.
const EDGE_BAND: usize = 16;
pub const COVERAGE_TARGET: f64 = 0.999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub points_per_axis: usize,
    /// Frequency truncation `H`: the transform samples `[-H, H)^n`.
    pub freq_radius: f64,
    pub center: Vec<f64>,
}

impl GridSpec {
    pub fn new(dim: usize, points_per_axis: usize, freq_radius: f64) -> Result<Self> {
        let s = Self {
            dim,
            points_per_axis,
            freq_radius,
            center: vec![0.0; dim],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Result<Self> {
        self.center = center;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::param("grid dimension must be positive"));
        }
        if self.dim > MAX_GRID_DIM {
            return Err(Error::Unsupported(format!(
                "density grids are limited to dimension {MAX_GRID_DIM}, got {}",
                self.dim
            )));
        }
        if self.points_per_axis < 16 || !self.points_per_axis.is_power_of_two() {
            return Err(Error::param(format!(
                "points_per_axis must be a power of two and at least 16, got {}",
                self.points_per_axis
            )));
        }
        if !(self.freq_radius > 0.0) || !self.freq_radius.is_finite() {
            return Err(Error::param(format!(
                "freq_radius must be positive, got {}",
                self.freq_radius
            )));
        }
        if self.center.len() != self.dim {
            return Err(Error::dim(format!(
                "grid center has {} coordinates, grid has dimension {}",
                self.center.len(),
                self.dim
            )));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("grid center must be finite"));
        }
        Ok(())
    }

    /// Spatial spacing `pi / H`.
    pub fn spacing(&self) -> f64 {
        std::f64::consts::PI / self.freq_radius
    }

    /// Frequency spacing `2H / N`.
    pub fn freq_spacing(&self) -> f64 {
        2.0 * self.freq_radius / self.points_per_axis as f64
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinate `k` along `axis`: `center + (k - N/2) dy`.
    pub fn coord(&self, axis: usize, k: usize) -> f64 {
        self.center[axis] + (k as f64 - (self.points_per_axis / 2) as f64) * self.spacing()
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.points_per_axis).map(|k| self.coord(axis, k)).collect()
    }

    /// Per-axis indices of a flat index (axis 0 varies slowest).
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let n = self.points_per_axis;
        let mut idx = vec![0; self.dim];
        for i in (0..self.dim).rev() {
            idx[i] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &k| acc * self.points_per_axis + k)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat)
            .iter()
            .enumerate()
            .map(|(a, &k)| self.coord(a, k))
            .collect()
    }

    /// Lower and upper edges of the cells along `axis`.
    pub fn support(&self, axis: usize) -> (f64, f64) {
        let dy = self.spacing();
        (
            self.coord(axis, 0) - 0.5 * dy,
            self.coord(axis, self.points_per_axis - 1) + 0.5 * dy,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub quad: ExponentQuadConfig,
    /// Rays used by the decay fit.
    pub decay_rays: usize,
    /// Radii per ray, geometric on `[1, H sqrt(n)]`.
    pub decay_radii: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            quad: ExponentQuadConfig::default(),
            decay_rays: 64,
            decay_radii: 32,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityGrid {
    pub spec: GridSpec,
    pub t: f64,
    /// Row-major values, axis 0 slowest.
    pub values: Vec<f64>,
    pub beta: Vec<u32>,
    pub truncation_error_bound: f64,
    pub decay: DecaySummary,
}

/// The part of a `DecayReport` that travels with a grid.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecaySummary {
    pub fitted_alpha: f64,
    pub fitted_a_t: f64,
    pub fitted_c_t: f64,
    pub fit_residual: f64,
    /// Radius where the fitted envelope falls under `1e-7`.
    pub suggested_freq_radius: Option<f64>,
}

impl DecaySummary {
    pub fn from_report(rep: &DecayReport) -> Self {
        Self {
            fitted_alpha: rep.fitted_alpha,
            fitted_a_t: rep.fitted_a_t,
            fitted_c_t: rep.fitted_c_t,
            fit_residual: rep.fit_residual,
            suggested_freq_radius: rep.radius_for(1e-7),
        }
    }
}

impl DensityGrid {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn cell_volume(&self) -> f64 {
        self.spec.cell_volume()
    }

    /// Riemann sum of the values times the cell volume.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    /// Riemann sum of `|values|`; for derivatives, evidence of integrability.
    pub fn abs_integral(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.cell_volume()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Riemann mass of `|values|` in the outer `1/16` of the grid along any axis.
    /// Large values indicate that the grid clips or aliases the law.
    pub fn edge_mass(&self) -> f64 {
        let n = self.spec.points_per_axis;
        let band = n / EDGE_BAND;
        let mut sum = 0.0;
        for (flat, v) in self.values.iter().enumerate() {
            if self
                .spec
                .unflatten(flat)
                .iter()
                .any(|&k| k < band || k >= n - band)
            {
                sum += v.abs();
            }
        }
        sum * self.cell_volume()
    }

    /// Riemann marginal along `axis` (a density on the axis coordinates).
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let n = self.spec.points_per_axis;
        let mut out = vec![0.0; n];
        let other = self.spec.spacing().powi(self.spec.dim as i32 - 1);
        for (flat, v) in self.values.iter().enumerate() {
            out[self.spec.unflatten(flat)[axis]] += v;
        }
        out.iter_mut().for_each(|v| *v *= other);
        out
    }

    /// CDF of the marginal along `axis` at the upper cell edges.
    pub fn marginal_cdf(&self, axis: usize) -> Vec<f64> {
        let dy = self.spec.spacing();
        let mut acc = 0.0;
        self.marginal(axis)
            .iter()
            .map(|v| {
                acc += v * dy;
                acc
            })
            .collect()
    }

    /// Multilinear interpolation; zero outside the grid nodes.
    pub fn interpolate(&self, y: &[f64]) -> f64 {
        let n = self.spec.points_per_axis;
        let dy = self.spec.spacing();
        let dim = self.spec.dim;
        let mut base = vec![0usize; dim];
        let mut frac = vec![0.0; dim];
        for a in 0..dim {
            let u = (y[a] - self.spec.coord(a, 0)) / dy;
            if !(u >= 0.0) || u > (n - 1) as f64 {
                return 0.0;
            }
            let k = (u.floor() as usize).min(n - 2);
            base[a] = k;
            frac[a] = u - k as f64;
        }
        let mut sum = 0.0;
        let mut idx = vec![0usize; dim];
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            for a in 0..dim {
                let bit = (corner >> a) & 1;
                idx[a] = base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                sum += w * self.values[self.spec.flatten(&idx)];
            }
        }
        sum
    }

    /// `sum_j p_j e^{i<y_j, h>} dy^n`, the transform of the grid at `h`.
    pub fn fourier(&self, h: &[f64]) -> Complex64 {
        let vol = self.cell_volume();
        self.values
            .iter()
            .enumerate()
            .map(|(flat, &v)| {
                let y = self.spec.point(flat);
                let ph: f64 = y.iter().zip(h).map(|(a, b)| a * b).sum();
                Complex64::from_polar(v, ph)
            })
            .sum::<Complex64>()
            * vol
    }

    /// One row per grid point: `y1,...,yn,value`, values in `{:e}` format.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let head: Vec<String> = (1..=self.spec.dim).map(|i| format!("y{i}")).collect();
        writeln!(w, "{},value", head.join(","))?;
        for (flat, v) in self.values.iter().enumerate() {
            for c in self.spec.point(flat) {
                write!(w, "{c:e},")?;
            }
            writeln!(w, "{v:e}")?;
        }
        Ok(())
    }

    /// `key=value` lines describing the grid.
    pub fn write_meta<W: Write>(&self, mut w: W) -> Result<()> {
        let beta: Vec<String> = self.beta.iter().map(|b| b.to_string()).collect();
        let center: Vec<String> = self.spec.center.iter().map(|c| format!("{c:e}")).collect();
        writeln!(w, "t={:e}", self.t)?;
        writeln!(w, "H={:e}", self.spec.freq_radius)?;
        writeln!(w, "points_per_axis={}", self.spec.points_per_axis)?;
        writeln!(w, "dim={}", self.spec.dim)?;
        writeln!(w, "center={}", center.join(","))?;
        writeln!(w, "spacing={:e}", self.spec.spacing())?;
        writeln!(w, "beta={}", beta.join(","))?;
        writeln!(w, "truncation_error_bound={:e}", self.truncation_error_bound)?;
        Ok(())
    }
}

/// `p_t` on the grid described by `spec`.
pub fn invert_density(
    sys: &OuSystem,
    triplet: &LevyTriplet,
    t: f64,
    spec: &GridSpec,
    cfg: &DensityConfig,
) -> Result<DensityGrid> {
    derivative_grid(sys, triplet, t, spec, &vec![0; spec.dim], cfg)
}

/// `D^beta p_t`, obtained by inverting `(-ih)^beta mu_t(h)`.
pub fn derivative_grid(
    sys: &OuSystem,
    triplet: &LevyTriplet,
    t: f64,
    spec: &GridSpec,
    beta: &[u32],
    cfg: &DensityConfig,
) -> Result<DensityGrid> {
    spec.validate()?;
    let n = sys.state_dim();
    if n > MAX_GRID_DIM {
        return Err(Error::Unsupported(format!(
            "density grids are limited to dimension {MAX_GRID_DIM}, system has {n}"
        )));
    }
    if spec.dim != n {
        return Err(Error::dim(format!(
            "grid dimension {} does not match state dimension {n}",
            spec.dim
        )));
    }
    if beta.len() != n {
        return Err(Error::dim("multi-index length must equal the state dimension"));
    }
    let order: u32 = beta.iter().sum();
    if order > MAX_DERIVATIVE_ORDER {
        return Err(Error::param(format!(
            "derivative order {order} exceeds {MAX_DERIVATIVE_ORDER}"
        )));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param(format!("time must be positive, got {t}")));
    }
    let h_max = spec.freq_radius * (n as f64).sqrt();
    let rays = if n == 1 { 2 } else { cfg.decay_rays };
    let decay = decay_probe(
        sys,
        triplet,
        t,
        rays,
        &geometric_radii(h_max.max(4.0), cfg.decay_radii.max(4)),
        &cfg.quad,
    )?;
    if decay.non_decaying {
        return Err(Error::Precondition(format!(
            "characteristic function does not decay (fitted alpha {:.3}, rate {:.3e}); \
             a finite Levy measure without Gaussian part has no density",
            decay.fitted_alpha, decay.fitted_a_t
        )));
    }
    let truncation_error_bound = decay.tail_integral(n, spec.freq_radius, order);

    let integ = ExponentIntegrator::new(sys, triplet, t, cfg.quad)?;
    let big_n = spec.points_per_axis;
    let total = spec.len();
    let dh = spec.freq_spacing();
    let freq = |k: usize| (k as f64 - (big_n / 2) as f64) * dh;

    // mu(-h) = conj(mu(h)): the mirror of index k is N - k, absent for k = 0
    let mirror = |idx: &[usize]| -> Option<Vec<usize>> {
        if idx.contains(&0) {
            None
        } else {
            Some(idx.iter().map(|&k| big_n - k).collect())
        }
    };
    let to_eval: Vec<usize> = (0..total)
        .filter(|&flat| {
            let idx = spec.unflatten(flat);
            match mirror(&idx) {
                None => true,
                Some(m) => flat <= spec.flatten(&m),
            }
        })
        .collect();

    let evaluated: Vec<Complex64> = to_eval
        .par_iter()
        .map(|&flat| {
            let idx = spec.unflatten(flat);
            let h: Vec<f64> = idx.iter().map(|&k| freq(k)).collect();
            let est = integ.exponent_estimate(&h)?;
            if !est.converged
                && est.relative_error() > cfg.quad.rel_tol
                && est.value.re < NEGLIGIBLE_EXPONENT
            {
                return Err(Error::Accuracy {
                    what: "OU exponent quadrature on the frequency grid",
                    estimate_re: est.value.re,
                    estimate_im: est.value.im,
                    achieved: est.relative_error(),
                });
            }
            Ok((-est.value).exp())
        })
        .collect::<Result<_>>()?;

    let mut data = vec![Complex64::new(0.0, 0.0); total];
    for (&flat, &v) in to_eval.iter().zip(&evaluated) {
        data[flat] = v;
    }
    for flat in 0..total {
        let idx = spec.unflatten(flat);
        if let Some(m) = mirror(&idx) {
            let mf = spec.flatten(&m);
            if mf < flat {
                data[flat] = data[mf].conj();
            }
        }
    }

    // (-1)^k e^{-i<c, h_k>} (-i h)^beta weights, then a forward DFT per axis
    for (flat, v) in data.iter_mut().enumerate() {
        let idx = spec.unflatten(flat);
        let mut w = Complex64::new(1.0, 0.0);
        let mut phase = 0.0;
        let mut sign_sum = 0;
        for (a, &k) in idx.iter().enumerate() {
            let h = freq(k);
            phase -= spec.center[a] * h;
            sign_sum += k;
            for _ in 0..beta[a] {
                w *= Complex64::new(0.0, -h);
            }
        }
        if sign_sum % 2 == 1 {
            w = -w;
        }
        *v *= w * Complex64::from_polar(1.0, phase);
    }
    fft_nd(&mut data, n, big_n);
    let scale = (dh / (2.0 * std::f64::consts::PI)).powi(n as i32);
    let values: Vec<f64> = data
        .iter()
        .enumerate()
        .map(|(flat, v)| {
            let s: usize = spec.unflatten(flat).iter().sum();
            let re = v.re * scale;
            if s % 2 == 1 {
                -re
            } else {
                re
            }
        })
        .collect();

    Ok(DensityGrid {
        spec: spec.clone(),
        t,
        values,
        beta: beta.to_vec(),
        truncation_error_bound,
        decay: DecaySummary::from_report(&decay),
    })
}

/// In-place forward DFT along every axis of a row-major cube of side `n_side`.
fn fft_nd(data: &mut [Complex64], dim: usize, n_side: usize) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_side);
    let mut line = vec![Complex64::new(0.0, 0.0); n_side];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..dim {
        let stride = n_side.pow((dim - 1 - axis) as u32);
        let block = stride * n_side;
        for start in 0..data.len() / n_side {
            // line `start` enumerates (outer, inner) pairs around `axis`
            let outer = start / stride;
            let inner = start % stride;
            let base = outer * block + inner;
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = data[base + k * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (k, v) in line.iter().enumerate() {
                data[base + k * stride] = *v;
            }
        }
    }
}

/// `P_t f(x)` by Riemann sums over a fixed density grid.
pub struct TransitionOperator {
    grid: DensityGrid,
    exp_ta: Matrix,
}

impl TransitionOperator {
    pub fn new(
        sys: &OuSystem,
        triplet: &LevyTriplet,
        t: f64,
        spec: &GridSpec,
        cfg: &DensityConfig,
    ) -> Result<Self> {
        let grid = invert_density(sys, triplet, t, spec, cfg)?;
        let edge = grid.edge_mass();
        if edge > 1.0 - COVERAGE_TARGET {
            warn!(
                "density grid edge band carries mass {edge:.3e}; the grid may capture less than {:.1}% of the law",
                100.0 * COVERAGE_TARGET
            );
        }
        Ok(Self {
            exp_ta: expm_unchecked(sys.a(), t),
            grid,
        })
    }

    pub fn grid(&self) -> &DensityGrid {
        &self.grid
    }

    /// `e^{tA} x`.
    pub fn mean_shift(&self, x: &[f64]) -> Vec<f64> {
        crate::charfn::mat_vec(self.exp_ta.as_slice(), x.len(), x.len(), x, true)
    }

    /// `sum_j f(e^{tA}x + y_j) p_t(y_j) dy^n`.
    pub fn apply(&self, x: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
        if x.len() != self.grid.dim() {
            return Err(Error::dim("starting point has the wrong dimension"));
        }
        let m = self.mean_shift(x);
        let mut z = vec![0.0; x.len()];
        let mut sum = 0.0;
        for (flat, &p) in self.grid.values.iter().enumerate() {
            for (a, k) in self.grid.spec.unflatten(flat).into_iter().enumerate() {
                z[a] = m[a] + self.grid.spec.coord(a, k);
            }
            sum += f(&z) * p;
        }
        Ok(sum * self.grid.cell_volume())
    }

    /// `sum_j f(y_j) p_t(y_j - e^{tA}x) dy^n` with `p_t` interpolated: the same
    /// integral discretized on a fixed spatial grid, so that differences in `x`
    /// are controlled by the discrete L1 shift of `p_t`.
    pub fn apply_shifted(&self, x: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
        let m = self.mean_shift(x);
        let mut y = vec![0.0; x.len()];
        let mut sum = 0.0;
        for flat in 0..self.grid.values.len() {
            let pt = self.grid.spec.point(flat);
            let fv = f(&pt);
            if fv == 0.0 {
                continue;
            }
            for a in 0..x.len() {
                y[a] = pt[a] - m[a];
            }
            sum += fv * self.grid.interpolate(&y);
        }
        sum * self.grid.cell_volume()
    }

    /// `sum_j |p_t(y_j - shift) - p_t(y_j)| dy^n` with `p_t` interpolated.
    pub fn l1_shift(&self, shift: &[f64]) -> f64 {
        let mut y = vec![0.0; shift.len()];
        let mut sum = 0.0;
        for flat in 0..self.grid.values.len() {
            let pt = self.grid.spec.point(flat);
            for a in 0..shift.len() {
                y[a] = pt[a] - shift[a];
            }
            sum += (self.grid.interpolate(&y) - self.grid.interpolate(&pt)).abs();
        }
        sum * self.grid.cell_volume()
    }
}

/// `P_t f(x) = E f(X_t^x)`.
pub fn transition_apply(
    sys: &OuSystem,
    triplet: &LevyTriplet,
    t: f64,
    x: &[f64],
    f: &dyn Fn(&[f64]) -> f64,
    spec: &GridSpec,
    cfg: &DensityConfig,
) -> Result<f64> {
    TransitionOperator::new(sys, triplet, t, spec, cfg)?.apply(x, f)
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuityRow {
    pub delta: f64,
    /// `max |P_t f(x) - P_t f(x')|` over grid pairs with `|x - x'| <= delta`.
    pub omega: f64,
    /// `max ||p_t(. - e^{tA}(x - x')) - p_t||_1` over the same pairs.
    pub shift_bound: f64,
    pub within_bound: bool,
}

/// Modulus of continuity of `x -> P_t f(x)` on `x_grid` for each `delta`.
#[allow(clippy::too_many_arguments)]
pub fn strong_feller_probe(
    sys: &OuSystem,
    triplet: &LevyTriplet,
    t: f64,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x_grid: &[Vec<f64>],
    deltas: &[f64],
    spec: &GridSpec,
    cfg: &DensityConfig,
) -> Result<Vec<ContinuityRow>> {
    if x_grid.is_empty() {
        return Err(Error::param("x_grid is empty"));
    }
    if x_grid.iter().any(|x| x.len() != sys.state_dim()) {
        return Err(Error::dim("x_grid points must lie in the state space"));
    }
    let op = TransitionOperator::new(sys, triplet, t, spec, cfg)?;
    let bounded = op
        .grid
        .spec
        .axis_coords(0)
        .iter()
        .all(|&y| f(&vec![y; sys.state_dim()]).abs() <= 1.0 + 1e-12);
    if !bounded {
        return Err(Error::param("f must satisfy |f| <= 1"));
    }
    let values: Vec<f64> = x_grid
        .par_iter()
        .map(|x| op.apply_shifted(x, f))
        .collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..x_grid.len() {
        for j in i + 1..x_grid.len() {
            let d = crate::levy::norm(
                &x_grid[i]
                    .iter()
                    .zip(&x_grid[j])
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            pairs.push((d, i, j));
        }
    }
    let shifts: Vec<f64> = pairs
        .par_iter()
        .map(|&(_, i, j)| {
            let diff: Vec<f64> = x_grid[i].iter().zip(&x_grid[j]).map(|(a, b)| a - b).collect();
            op.l1_shift(&op.mean_shift(&diff))
        })
        .collect();
    Ok(deltas
        .iter()
        .map(|&delta| {
            let mut omega: f64 = 0.0;
            let mut bound: f64 = 0.0;
            for (&(d, i, j), &s) in pairs.iter().zip(&shifts) {
                if d <= delta {
                    omega = omega.max((values[i] - values[j]).abs());
                    bound = bound.max(s);
                }
            }
            ContinuityRow {
                delta,
                omega,
                shift_bound: bound,
                within_bound: omega <= bound * (1.0 + 1e-9) + 1e-12,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PushforwardConfig {
    /// The integrated-out coordinates range over `[-half_width, half_width]`.
    pub half_width: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: u32,
    pub nodes: usize,
    /// Initial equal panels per integrated axis; features narrower than a
    /// panel can be missed entirely.
    pub segments: usize,
    /// Largest admissible condition number of the completed matrix `S`.
    pub max_condition: f64,
    /// Coordinate values where `h` may jump, applied on every axis of `R^p`.
    /// They are mapped to panel boundaries of the integrated coordinates.
    pub breakpoints: Vec<f64>,
}

impl Default for PushforwardConfig {
    fn default() -> Self {
        Self {
            half_width: 10.0,
            rel_tol: 1e-10,
            abs_tol: 1e-13,
            max_depth: 50,
            nodes: 8,
            segments: 64,
            max_condition: 1e12,
            breakpoints: Vec::new(),
        }
    }
}

/// Completes the rows of `l` (q x p, rank q) to an invertible p x p matrix
/// with canonical vectors, each chosen with the largest residual against the
/// span of the rows so far. Returns the matrix and the chosen indices.
pub fn complete_basis(l: &Matrix) -> Result<(Matrix, Vec<usize>)> {
    let (q, p) = l.shape();
    if q > p {
        return Err(Error::dim(format!("L is {q}x{p}; need q <= p")));
    }
    let rank = numerical_rank(l, DEFAULT_RANK_TOL);
    if rank < q {
        return Err(Error::Precondition(format!(
            "L has rank {rank}, not onto R^{q}"
        )));
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let push_orth = |basis: &mut Vec<Vec<f64>>, v: Vec<f64>| {
        let r = residual(basis, &v);
        let nr = crate::levy::norm(&r);
        basis.push(r.into_iter().map(|x| x / nr).collect());
    };
    for i in 0..q {
        push_orth(&mut basis, l.row(i).iter().copied().collect());
    }
    let mut chosen = Vec::new();
    for _ in q..p {
        let (best, _) = (0..p)
            .filter(|i| !chosen.contains(i))
            .map(|i| {
                let mut e = vec![0.0; p];
                e[i] = 1.0;
                (i, crate::levy::norm(&residual(&basis, &e)))
            })
            .fold((usize::MAX, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        let mut e = vec![0.0; p];
        e[best] = 1.0;
        push_orth(&mut basis, e);
        chosen.push(best);
    }
    let mut s = Matrix::zeros(p, p);
    for i in 0..q {
        for j in 0..p {
            s[(i, j)] = l[(i, j)];
        }
    }
    for (r, &c) in chosen.iter().enumerate() {
        s[(q + r, c)] = 1.0;
    }
    Ok((s, chosen))
}

fn residual(basis: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut r = v.to_vec();
    for b in basis {
        let c: f64 = b.iter().zip(&r).map(|(x, y)| x * y).sum();
        r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
    r
}

/// Density of `L U` where `U` has density `h_density` on `R^p`, at each of
/// `eval_points`: `|det S|^{-1} int h(S^{-1}(y, w)) dw` with `S` from
/// `complete_basis`.
pub fn pushforward_density(
    l: &Matrix,
    h_density: &(dyn Fn(&[f64]) -> f64 + Sync),
    eval_points: &[Vec<f64>],
    cfg: &PushforwardConfig,
) -> Result<Vec<f64>> {
    let (q, p) = l.shape();
    let (s, _) = complete_basis(l)?;
    let proj_err = (0..q)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .map(|(i, j)| (s[(i, j)] - l[(i, j)]).abs())
        .fold(0.0, f64::max);
    if proj_err > 1e-10 {
        return Err(Error::Conditioning(format!(
            "projection of the completed basis differs from L by {proj_err:e}"
        )));
    }
    let svd = s.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > cfg.max_condition {
        return Err(Error::Conditioning(format!(
            "completed basis has condition number {:e}",
            smax / smin
        )));
    }
    let s_inv: DMatrix<f64> = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("completed basis is singular".into()))?;
    let det = s.determinant().abs();
    if eval_points.iter().any(|y| y.len() != q) {
        return Err(Error::dim(format!("evaluation points must lie in R^{q}")));
    }
    let rule = GaussLegendre::new(cfg.nodes);
    let opts = AdaptiveOptions {
        rel_tol: cfg.rel_tol,
        abs_tol: cfg.abs_tol,
        max_depth: cfg.max_depth,
    };
    let m = p - q;
    eval_points
        .par_iter()
        .map(|y| {
            let eval = |w: &[f64]| -> f64 {
                let mut yw = Vec::with_capacity(p);
                yw.extend_from_slice(y);
                yw.extend_from_slice(w);
                let z: Vec<f64> = (0..p)
                    .map(|i| (0..p).map(|j| s_inv[(i, j)] * yw[j]).sum())
                    .collect();
                h_density(&z)
            };
            if m == 0 {
                return Ok(eval(&[]) / det);
            }
            let lo = vec![-cfg.half_width; m];
            let hi = vec![cfg.half_width; m];
            let step = 2.0 * cfg.half_width / cfg.segments.max(1) as f64;
            let cuts: Vec<f64> = (1..cfg.segments)
                .map(|i| -cfg.half_width + step * i as f64)
                .collect();
            // z_i = base_i + c_i w_axis when z_i does not involve the inner axes
            let breaks = |outer: &[f64]| -> Vec<f64> {
                let axis = outer.len();
                let mut out = cuts.clone();
                for i in 0..p {
                    let c = s_inv[(i, q + axis)];
                    if c == 0.0 || (axis + 1..m).any(|k| s_inv[(i, q + k)] != 0.0) {
                        continue;
                    }
                    let base: f64 = (0..q).map(|j| s_inv[(i, j)] * y[j]).sum::<f64>()
                        + (0..axis).map(|k| s_inv[(i, q + k)] * outer[k]).sum::<f64>();
                    out.extend(cfg.breakpoints.iter().map(|b| (b - base) / c));
                }
                out
            };
            let est = integrate_box(&rule, &lo, &hi, &breaks, &eval, &opts);
            if !est.converged && est.error > cfg.abs_tol.max(1e-8 * est.value.abs()) {
                return Err(Error::Accuracy {
                    what: "pushforward marginal integral",
                    estimate_re: est.value,
                    estimate_im: 0.0,
                    achieved: est.relative_error(),
                });
            }
            Ok(est.value / det)
        })
        .collect()
}
