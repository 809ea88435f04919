//! Endpoint sampling of `X_t^x = e^{tA}x + int_0^t e^{(t-s)A} B dZ_s`.
//!
//! Randomness comes from counter-based streams: sample `i` draws from
//! `ChaCha8(seed)` on stream `4 i + component`, so results do not depend on
//! how samples are spread over threads.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{JumpSampler, LevyMeasure, LevyTriplet, TruncatedMeasure};
use crate::linalg::{expm_unchecked, psd_sqrt, Matrix, OuSystem};
use crate::quadrature::GaussLegendre;

/// Largest expected number of jumps per path accepted from a cutoff.
pub const MAX_EXPECTED_JUMPS: f64 = 1e6;

const STREAM_GAUSS: u64 = 0;
const STREAM_JUMPS: u64 = 1;
const STREAM_DRIVER: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmallJumpMode {
    /// Jumps with `|z| <= eps` are replaced by their compensated mean.
    CompensateDrift,
    /// Jumps with `|z| <= eps` are replaced by a Gaussian with their covariance.
    GaussianSubstitute,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub step_count: usize,
    pub small_jump_cutoff: f64,
    pub small_jump_mode: SmallJumpMode,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step_count: 100,
            small_jump_cutoff: 0.05,
            small_jump_mode: SmallJumpMode::CompensateDrift,
            sample_count: 10_000,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_count < 1 {
            return Err(Error::param("step_count must be at least 1"));
        }
        if !(self.small_jump_cutoff > 0.0 && self.small_jump_cutoff <= 1.0) {
            return Err(Error::param(format!(
                "small_jump_cutoff must lie in (0, 1], got {}",
                self.small_jump_cutoff
            )));
        }
        if self.sample_count < 1 {
            return Err(Error::param("sample_count must be at least 1"));
        }
        Ok(())
    }
}

/// Independent stream `component` of sample `index`.
pub fn sample_rng(seed: u64, index: u64, component: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(4).wrapping_add(component));
    rng
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndpointSample {
    pub values: Vec<Vec<f64>>,
    pub t: f64,
    pub x: Vec<f64>,
    pub scheme: String,
    pub seed: u64,
}

impl EndpointSample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Coordinate `axis` of every draw.
    pub fn component(&self, axis: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[axis]).collect()
    }

    /// Header lines start with `#`: seed, scheme, t, x and the caller's
    /// config tag. Then `x1,...,xn` and one row per draw in `{:e}` format.
    pub fn write_csv<W: Write>(&self, mut w: W, config_tag: &str) -> Result<()> {
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# scheme={}", self.scheme)?;
        writeln!(w, "# t={:e}", self.t)?;
        let x: Vec<String> = self.x.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "# x={}", x.join(","))?;
        writeln!(w, "# config={config_tag}")?;
        let head: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        writeln!(w, "{}", head.join(","))?;
        for v in &self.values {
            let row: Vec<String> = v.iter().map(|c| format!("{c:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Increment over `dt` of the symmetric stable process with
/// `E e^{ihZ} = e^{-dt scale |h|^alpha}` (Chambers-Mallows-Stuck).
pub fn sample_stable_increment<R: Rng + ?Sized>(
    alpha: f64,
    scale: f64,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::param(format!("alpha must lie in (0, 2), got {alpha}")));
    }
    if alpha == 1.0 {
        return Err(Error::Unsupported("the stable sampler excludes alpha = 1".into()));
    }
    if !(scale > 0.0) || !(dt > 0.0) {
        return Err(Error::param("scale and dt must be positive"));
    }
    Ok((dt * scale).powf(1.0 / alpha) * standard_stable(alpha, rng))
}

fn standard_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = (rng.random::<f64>() - 0.5) * 2.0 * FRAC_PI_2;
    let w: f64 = Exp1.sample(rng);
    (alpha * v).sin() / v.cos().powf(1.0 / alpha)
        * ((v * (1.0 - alpha)).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Compound-Poisson source of the big jumps: the measure restricted to
/// `|z| > eps` for stable components, the whole measure otherwise.
struct JumpSource {
    rate: f64,
    sampler: JumpSampler,
}

fn jump_source(nu: &LevyMeasure, eps: f64) -> (f64, JumpSampler) {
    match nu {
        LevyMeasure::IsotropicStable(st) => (
            st.ring_mass(eps, f64::INFINITY),
            JumpSampler::StableRadial {
                alpha: st.alpha(),
                dim: st.dim(),
                inner: eps,
                outer: f64::INFINITY,
            },
        ),
        LevyMeasure::CompoundPoisson(cp) => (
            cp.total_mass(),
            JumpSampler::Rejection {
                measure: cp.clone(),
                inner: 0.0,
                outer: f64::INFINITY,
            },
        ),
        LevyMeasure::SumOf(parts) => {
            let comps: Vec<(f64, JumpSampler)> = parts.iter().map(|p| jump_source(p, eps)).collect();
            (comps.iter().map(|c| c.0).sum(), JumpSampler::Mixture(comps))
        }
    }
}

/// Drift correction `-int_{eps < |z| <= 1} z nu(dz)` for the stable parts and
/// `-int_{|z| <= 1} z nu(dz)` for the compound-Poisson parts, plus the
/// small-jump covariance of the stable parts.
fn residual_parts(nu: &LevyMeasure, eps: f64) -> (Vec<f64>, Matrix) {
    let d = nu.dim();
    match nu {
        LevyMeasure::IsotropicStable(st) => {
            let mean = if eps < 1.0 { nu.ring_mean(eps, 1.0) } else { vec![0.0; d] };
            (mean.iter().map(|v| -v).collect(), st.small_jump_covariance(eps))
        }
        LevyMeasure::CompoundPoisson(cp) => (cp.ball_mean().iter().map(|v| -v).collect(), Matrix::zeros(d, d)),
        LevyMeasure::SumOf(parts) => {
            let mut m = vec![0.0; d];
            let mut c = Matrix::zeros(d, d);
            for p in parts {
                let (pm, pc) = residual_parts(p, eps);
                m.iter_mut().zip(pm).for_each(|(a, b)| *a += b);
                c += pc;
            }
            (m, c)
        }
    }
}

/// Exact one-step propagation: `X <- E X + m + L xi`.
struct StepKernel {
    n: usize,
    d: usize,
    a: Matrix,
    b: Matrix,
    step: Matrix,
    shift: Vec<f64>,
    chol: Option<Matrix>,
    a_is_zero: bool,
}

impl StepKernel {
    fn new(sys: &OuSystem, dt: f64, drift: &[f64], cov: &Matrix) -> Self {
        let n = sys.state_dim();
        let rule = GaussLegendre::new(24);
        // int_0^dt e^{uA} du B a and int_0^dt e^{uA} B C B* e^{uA*} du
        let mut int_exp = Matrix::zeros(n, n);
        let mut gram = Matrix::zeros(n, n);
        let bcb = sys.b() * cov * sys.b().transpose();
        for (u, w) in rule.mapped(0.0, dt) {
            let e = expm_unchecked(sys.a(), u);
            gram += (&e * &bcb * e.transpose()) * w;
            int_exp += e * w;
        }
        let ba = sys.b() * nalgebra::DVector::from_column_slice(drift);
        let shift = (&int_exp * ba).iter().copied().collect();
        let has_noise = cov.iter().any(|&v| v != 0.0);
        let gram = (&gram + gram.transpose()) * 0.5;
        Self {
            n,
            d: sys.noise_dim(),
            a: sys.a().clone(),
            b: sys.b().clone(),
            step: expm_unchecked(sys.a(), dt),
            shift,
            chol: has_noise.then(|| psd_sqrt(&gram)),
            a_is_zero: sys.a().iter().all(|&v| v == 0.0),
        }
    }

    fn advance<R: Rng + ?Sized>(&self, x: &mut Vec<f64>, rng: &mut R, buf: &mut Vec<f64>) {
        mat_vec_into(&self.step, x, buf);
        for (i, v) in buf.iter_mut().enumerate() {
            *v += self.shift[i];
        }
        if let Some(l) = &self.chol {
            let xi: Vec<f64> = (0..self.n).map(|_| StandardNormal.sample(rng)).collect();
            for i in 0..self.n {
                buf[i] += (0..self.n).map(|j| l[(i, j)] * xi[j]).sum::<f64>();
            }
        }
        std::mem::swap(x, buf);
    }

    /// `x += e^{sA} B u`.
    fn add_jump(&self, x: &mut [f64], s: f64, u: &[f64]) {
        let mut bu = vec![0.0; self.n];
        for (i, v) in bu.iter_mut().enumerate() {
            *v = (0..self.d).map(|j| self.b[(i, j)] * u[j]).sum();
        }
        if self.a_is_zero || s == 0.0 {
            x.iter_mut().zip(&bu).for_each(|(a, b)| *a += b);
            return;
        }
        let e = expm_unchecked(&self.a, s);
        for i in 0..self.n {
            x[i] += (0..self.n).map(|j| e[(i, j)] * bu[j]).sum::<f64>();
        }
    }
}

fn mat_vec_into(m: &Matrix, v: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum::<f64>()));
}

/// Poisson arrival times of rate `rate` on `[0, t]`.
fn arrivals<R: Rng + ?Sized>(rate: f64, t: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let mut s = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        s += e / rate;
        if s > t {
            return out;
        }
        out.push(s);
    }
}

/// `sample_count` draws of `X_t^x` built from the Lévy-Itô decomposition of
/// `Z`: drift and Gaussian part exact on each step of a uniform grid, jumps
/// larger than the cutoff at their exact arrival times, small jumps per
/// `cfg.small_jump_mode`. Compound-Poisson components are simulated in full.
pub fn sample_path_endpoint(
    sys: &OuSystem,
    triplet: &LevyTriplet,
    t: f64,
    x: &[f64],
    cfg: &SimConfig,
) -> Result<EndpointSample> {
    cfg.validate()?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param(format!("time must be positive, got {t}")));
    }
    let n = sys.state_dim();
    let d = sys.noise_dim();
    if x.len() != n {
        return Err(Error::dim("starting point has the wrong dimension"));
    }
    if triplet.dim() != d {
        return Err(Error::dim("triplet dimension does not match the noise dimension"));
    }
    let eps = cfg.small_jump_cutoff;
    let mut drift = triplet.drift().to_vec();
    let mut cov = triplet.q().clone();
    let source = match triplet.measure() {
        Some(nu) => {
            let (rate, sampler) = jump_source(nu, eps);
            if rate * t > MAX_EXPECTED_JUMPS {
                return Err(Error::param(format!(
                    "cutoff {eps} gives {:.3e} expected jumps per path; raise small_jump_cutoff",
                    rate * t
                )));
            }
            let (m, c) = residual_parts(nu, eps);
            drift.iter_mut().zip(m).for_each(|(a, b)| *a += b);
            if cfg.small_jump_mode == SmallJumpMode::GaussianSubstitute {
                cov += c;
            }
            Some(JumpSource { rate, sampler })
        }
        None => None,
    };
    let dt = t / cfg.step_count as f64;
    let kernel = StepKernel::new(sys, dt, &drift, &cov);
    let scheme = match (&source, cfg.small_jump_mode) {
        (None, _) => "levy-ito/exact-gaussian".to_string(),
        (Some(_), SmallJumpMode::CompensateDrift) => format!("levy-ito/eps={eps:e}/compensate-drift"),
        (Some(_), SmallJumpMode::GaussianSubstitute) => {
            format!("levy-ito/eps={eps:e}/gaussian-substitute")
        }
    };

    let values: Vec<Vec<f64>> = (0..cfg.sample_count as u64)
        .into_par_iter()
        .map(|i| {
            let mut g = sample_rng(cfg.seed, i, STREAM_GAUSS);
            let mut state = x.to_vec();
            let mut buf = Vec::with_capacity(n);
            for _ in 0..cfg.step_count {
                kernel.advance(&mut state, &mut g, &mut buf);
            }
            if let Some(src) = &source {
                let mut jr = sample_rng(cfg.seed, i, STREAM_JUMPS);
                for tau in arrivals(src.rate, t, &mut jr) {
                    let u = src.sampler.sample(&mut jr)?;
                    kernel.add_jump(&mut state, t - tau, &u);
                }
            }
            Ok(state)
        })
        .collect::<Result<_>>()?;

    Ok(EndpointSample {
        values,
        t,
        x: x.to_vec(),
        scheme,
        seed: cfg.seed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CompoundConvolution {
    pub sample: EndpointSample,
    /// Fraction of runs with no jump in `[0, t]`.
    pub zero_atom_frequency: f64,
    /// `e^{-c_N t}`.
    pub zero_atom_probability: f64,
}

/// Exact draws of `e^{xi_1 A} B U_1 + ... + e^{(xi_1 + ... + xi_k) A} B U_k`
/// on `{xi_1 + ... + xi_k <= t < xi_1 + ... + xi_{k+1}}`, with `xi_i`
/// exponential of rate `c_N` and `U_i ~ nu_N / c_N`.
pub fn sample_compound_convolution(
    sys: &OuSystem,
    tm: &TruncatedMeasure,
    t: f64,
    cfg: &SimConfig,
) -> Result<CompoundConvolution> {
    if cfg.sample_count < 1 {
        return Err(Error::param("sample_count must be at least 1"));
    }
    if !(tm.mass() > 0.0) {
        return Err(Error::param("truncated measure carries no mass"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::param(format!("time must be nonnegative, got {t}")));
    }
    if tm.dim() != sys.noise_dim() {
        return Err(Error::dim("truncated measure dimension does not match the noise dimension"));
    }
    let n = sys.state_dim();
    let kernel = StepKernel::new(sys, 1.0, &vec![0.0; sys.noise_dim()], &Matrix::zeros(sys.noise_dim(), sys.noise_dim()));
    let rate = tm.mass();
    let draws: Vec<(Vec<f64>, bool)> = (0..cfg.sample_count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, i, STREAM_JUMPS);
            let mut v = vec![0.0; n];
            let times = arrivals(rate, t, &mut rng);
            for &s in &times {
                let u = tm.sampler().sample(&mut rng)?;
                kernel.add_jump(&mut v, s, &u);
            }
            Ok((v, times.is_empty()))
        })
        .collect::<Result<_>>()?;
    let zeros = draws.iter().filter(|d| d.1).count();
    Ok(CompoundConvolution {
        zero_atom_frequency: zeros as f64 / draws.len() as f64,
        zero_atom_probability: (-rate * t).exp(),
        sample: EndpointSample {
            values: draws.into_iter().map(|d| d.0).collect(),
            t,
            x: vec![0.0; n],
            scheme: format!("compound-convolution/rate={rate:e}"),
            seed: cfg.seed,
        },
    })
}

/// Driving process of the Kolmogorov example: drift, Brownian and
/// symmetric stable parts, `Z_t = drift t + sigma W_t + L_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarDriver {
    pub drift: f64,
    pub sigma: f64,
    /// `(alpha, c_alpha)` of the stable part.
    pub stable: Option<(f64, f64)>,
}

impl Default for ScalarDriver {
    fn default() -> Self {
        Self {
            drift: 0.0,
            sigma: 0.0,
            stable: None,
        }
    }
}

impl ScalarDriver {
    /// The driver matching a one-dimensional triplet, if it has a stable or
    /// empty jump part.
    pub fn from_triplet(tr: &LevyTriplet) -> Result<Self> {
        if tr.dim() != 1 {
            return Err(Error::dim("the Kolmogorov example needs a one-dimensional driver"));
        }
        let stable = match tr.measure() {
            None => None,
            Some(LevyMeasure::IsotropicStable(st)) => Some((st.alpha(), st.scale())),
            Some(_) => {
                return Err(Error::Unsupported(
                    "the Kolmogorov path sampler supports stable or no jumps".into(),
                ))
            }
        };
        Ok(Self {
            drift: tr.drift()[0],
            sigma: tr.q()[(0, 0)].sqrt(),
            stable,
        })
    }
}

/// `X_t^1 = x_1 + Z_t`, `X_t^2 = x_2 + x_1 t + int_0^t Z_s ds`, with `Z` on a
/// uniform grid of `cfg.step_count` steps and the time integral accumulated by
/// the trapezoidal rule.
pub fn kolmogorov_example(x0: &[f64], t: f64, z: &ScalarDriver, cfg: &SimConfig) -> Result<EndpointSample> {
    cfg.validate()?;
    if x0.len() != 2 {
        return Err(Error::dim("the Kolmogorov example lives in R^2"));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param(format!("time must be positive, got {t}")));
    }
    if !(z.sigma >= 0.0) {
        return Err(Error::param("sigma must be nonnegative"));
    }
    if let Some((alpha, scale)) = z.stable {
        sample_stable_increment(alpha, scale, 1.0, &mut ChaCha8Rng::seed_from_u64(0))?;
    }
    let m = cfg.step_count;
    let dt = t / m as f64;
    let sq = dt.sqrt();
    let values: Vec<Vec<f64>> = (0..cfg.sample_count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, i, STREAM_DRIVER);
            let mut zv = 0.0;
            let mut integral = 0.0;
            for _ in 0..m {
                let mut dz = z.drift * dt;
                if z.sigma > 0.0 {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    dz += z.sigma * sq * g;
                }
                if let Some((alpha, scale)) = z.stable {
                    dz += (dt * scale).powf(1.0 / alpha) * standard_stable(alpha, &mut rng);
                }
                integral += (zv + 0.5 * dz) * dt;
                zv += dz;
            }
            vec![x0[0] + zv, x0[1] + x0[0] * t + integral]
        })
        .collect();
    Ok(EndpointSample {
        values,
        t,
        x: x0.to_vec(),
        scheme: format!("kolmogorov/trapezoid/steps={m}"),
        seed: cfg.seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Sample mean and standard error of `f` over the draws.
pub fn mc_estimate(samples: &EndpointSample, f: &dyn Fn(&[f64]) -> f64) -> Result<McEstimate> {
    if samples.is_empty() {
        return Err(Error::param("empty sample"));
    }
    let vals: Vec<f64> = samples.values.iter().map(|v| f(v)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("f is not finite on the sample"));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() == 1 {
        return Ok(McEstimate { mean, stderr: 0.0 });
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate {
        mean,
        stderr: (var / n).sqrt(),
    })
}

/// Empirical `E e^{i<h, X>}` with the standard errors of its real and
/// imaginary parts.
pub fn empirical_charfn(samples: &EndpointSample, h: &[f64]) -> Result<(Complex64, f64, f64)> {
    let phase = |v: &[f64]| v.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    let re = mc_estimate(samples, &|v| phase(v).cos())?;
    let im = mc_estimate(samples, &|v| phase(v).sin())?;
    Ok((Complex64::new(re.mean, im.mean), re.stderr, im.stderr))
}
