use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{norm, CompoundPoisson, IsotropicStable, LevyMeasure};
use crate::error::{Error, Result};

const MAX_REJECTION_ATTEMPTS: u64 = 1_000_000;

/// Sampler for the normalized restriction of a measure to a ring.
#[derive(Clone, Debug)]
pub enum JumpSampler {
    /// Radius by inverse CDF of `rho^{-1-alpha}` on `[inner, outer]`, uniform direction.
    StableRadial {
        alpha: f64,
        dim: usize,
        inner: f64,
        outer: f64,
    },
    /// Uniform proposals on the cube of half-width `outer`, accepted with
    /// probability `p(z) / bound` inside the ring.
    Rejection {
        measure: CompoundPoisson,
        inner: f64,
        outer: f64,
    },
    /// Pick a component with probability proportional to its ring mass.
    Mixture(Vec<(f64, JumpSampler)>),
    /// Component carries no mass in the ring.
    Empty,
}

/// `nu` restricted to `{inner <= |z| <= outer}`: a finite measure.
#[derive(Clone, Debug)]
pub struct TruncatedMeasure {
    base: LevyMeasure,
    inner_radius: f64,
    outer_radius: f64,
    mass: f64,
    sampler: JumpSampler,
}

impl TruncatedMeasure {
    pub fn base(&self) -> &LevyMeasure {
        &self.base
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn outer_radius(&self) -> f64 {
        self.outer_radius
    }

    /// Total mass `c_N`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn sampler(&self) -> &JumpSampler {
        &self.sampler
    }
}

/// Restricts `nu` to the ring `inner <= |z| <= outer`. `outer` may be
/// infinite for measures without bounded support.
pub fn truncate_measure(nu: &LevyMeasure, inner: f64, outer: f64) -> Result<TruncatedMeasure> {
    if !(inner > 0.0) || inner.is_nan() {
        return Err(Error::param(format!("inner radius must be positive, got {inner}")));
    }
    if !(inner < outer) {
        return Err(Error::param(format!(
            "inner radius {inner} must be below outer radius {outer}"
        )));
    }
    let (mass, sampler) = ring_sampler(nu, inner, outer);
    Ok(TruncatedMeasure {
        base: nu.clone(),
        inner_radius: inner,
        outer_radius: outer,
        mass,
        sampler,
    })
}

fn ring_sampler(nu: &LevyMeasure, inner: f64, outer: f64) -> (f64, JumpSampler) {
    match nu {
        LevyMeasure::IsotropicStable(st) => (
            st.ring_mass(inner, outer),
            JumpSampler::StableRadial {
                alpha: st.alpha,
                dim: st.dim,
                inner,
                outer,
            },
        ),
        LevyMeasure::CompoundPoisson(cp) => {
            let outer = outer.min(cp.support_radius * (cp.dim as f64).sqrt());
            if inner >= outer {
                return (0.0, JumpSampler::Empty);
            }
            let mass = nu.ring_mass(inner, outer);
            let sampler = if mass > 0.0 {
                JumpSampler::Rejection {
                    measure: cp.clone(),
                    inner,
                    outer,
                }
            } else {
                JumpSampler::Empty
            };
            (mass, sampler)
        }
        LevyMeasure::SumOf(parts) => {
            let comps: Vec<(f64, JumpSampler)> =
                parts.iter().map(|p| ring_sampler(p, inner, outer)).collect();
            let mass = comps.iter().map(|c| c.0).sum();
            (mass, JumpSampler::Mixture(comps))
        }
    }
}

/// One draw from `nu_N / c_N`.
pub fn sample_jump<R: Rng + ?Sized>(tm: &TruncatedMeasure, rng: &mut R) -> Result<Vec<f64>> {
    tm.sampler.sample(rng)
}

impl JumpSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            JumpSampler::StableRadial {
                alpha,
                dim,
                inner,
                outer,
            } => {
                let lo = inner.powf(-alpha);
                let hi = if outer.is_finite() { outer.powf(-alpha) } else { 0.0 };
                let u: f64 = rng.random();
                let rho = (lo - u * (lo - hi)).powf(-1.0 / alpha).clamp(*inner, *outer);
                let dir = unit_direction(*dim, rng);
                Ok(dir.into_iter().map(|v| v * rho).collect())
            }
            JumpSampler::Rejection {
                measure,
                inner,
                outer,
            } => {
                let half = outer.min(measure.support_radius);
                let bound = measure.density_bound;
                let mut z = vec![0.0; measure.dim];
                for _ in 0..MAX_REJECTION_ATTEMPTS {
                    for v in z.iter_mut() {
                        *v = rng.random_range(-half..=half);
                    }
                    let r = norm(&z);
                    if r < *inner || r > *outer {
                        continue;
                    }
                    let p = measure.density(&z);
                    if p > bound {
                        return Err(Error::Sampling(format!(
                            "density {p} exceeds rejection bound {bound}"
                        )));
                    }
                    if rng.random::<f64>() * bound < p {
                        return Ok(z);
                    }
                }
                Err(Error::Sampling(format!(
                    "rejection sampler exceeded {MAX_REJECTION_ATTEMPTS} attempts"
                )))
            }
            JumpSampler::Mixture(comps) => {
                let total: f64 = comps.iter().map(|c| c.0).sum();
                if !(total > 0.0) {
                    return Err(Error::Sampling("mixture carries no mass".into()));
                }
                let mut u = rng.random::<f64>() * total;
                for (w, s) in comps {
                    if u < *w {
                        return s.sample(rng);
                    }
                    u -= w;
                }
                // rounding fell off the end: take the last massive component
                comps
                    .iter()
                    .rev()
                    .find(|c| c.0 > 0.0)
                    .expect("positive total")
                    .1
                    .sample(rng)
            }
            JumpSampler::Empty => Err(Error::Sampling("sampler has no mass".into())),
        }
    }
}

pub(crate) fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    if dim == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl IsotropicStable {
    pub fn truncate(&self, inner: f64, outer: f64) -> Result<TruncatedMeasure> {
        truncate_measure(&LevyMeasure::IsotropicStable(*self), inner, outer)
    }
}
