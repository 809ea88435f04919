use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::charfn::ExponentQuadConfig;
use crate::density::{DensityConfig, GridSpec};
use crate::error::{Error, Result};
use crate::levy::{CompoundPoisson, IsotropicStable, LevyMeasure, LevyTriplet};
use crate::linalg::{matrix_from_rows, OuSystem};
use crate::simulate::SimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    RankCheck,
    Hypothesis,
    Charfn,
    Density,
    Simulate,
    Validate,
    Kolmogorov,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::RankCheck => "rank-check",
            Scenario::Hypothesis => "hypothesis",
            Scenario::Charfn => "charfn",
            Scenario::Density => "density",
            Scenario::Simulate => "simulate",
            Scenario::Validate => "validate",
            Scenario::Kolmogorov => "kolmogorov",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    /// Row-major n x n drift matrix.
    pub a: Vec<Vec<f64>>,
    /// Row-major n x d noise matrix.
    pub b: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// `scale |s|^alpha` exponent; give exactly one of `scale` and
    /// `density_constant` (the `c` in `c |z|^{-d-alpha} dz`).
    IsotropicStable {
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        density_constant: Option<f64>,
    },
    /// Constant density `intensity` on the box `[lo, hi]`.
    UniformBox { lo: Vec<f64>, hi: Vec<f64>, intensity: f64 },
    Sum { parts: Vec<MeasureSpec> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletSpec {
    /// Row-major d x d Gaussian covariance; zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    /// Drift `a`; zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points_per_axis: usize,
    pub freq_radius: f64,
    /// Defaults to the origin.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    /// Replace `freq_radius` by the radius where the fitted envelope of the
    /// characteristic function drops below `1e-7`, when the fit allows it.
    pub auto_freq_radius: bool,
    pub decay_rays: usize,
    pub decay_radii: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let d = DensityConfig::default();
        Self {
            points_per_axis: 256,
            freq_radius: 16.0,
            center: None,
            auto_freq_radius: false,
            decay_rays: d.decay_rays,
            decay_radii: d.decay_radii,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimScheme {
    /// `sample_path_endpoint`.
    LevyIto,
    /// `kolmogorov_example`; only for the Kolmogorov system.
    Kolmogorov,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisSection {
    pub alpha: f64,
    pub c: f64,
    /// Strictly decreasing radii.
    pub radii: Vec<f64>,
    pub directions: usize,
    pub seed: u64,
}

impl Default for HypothesisSection {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            c: 1.0,
            radii: vec![1.0, 0.5, 0.1, 0.05, 0.01, 1e-3, 1e-4],
            directions: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharfnSection {
    /// Frequencies at which the characteristic function is tabulated; unit
    /// vectors along each axis when empty.
    pub frequencies: Vec<Vec<f64>>,
    pub decay_rays: usize,
    pub decay_radii: usize,
    pub decay_max_radius: f64,
}

impl Default for CharfnSection {
    fn default() -> Self {
        Self {
            frequencies: Vec::new(),
            decay_rays: 16,
            decay_radii: 32,
            decay_max_radius: 32.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    /// Marginal KS threshold; the 0.1% asymptotic critical value
    /// `1.9495 / sqrt(samples)` when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks_threshold: Option<f64>,
    pub l1_threshold: f64,
    /// Histogram bins are `factor^n` grid cells.
    pub l1_bin_factor: usize,
    pub mass_tolerance: f64,
    pub decay_residual_threshold: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            ks_threshold: None,
            l1_threshold: 0.05,
            l1_bin_factor: 8,
            mass_tolerance: 5e-3,
            decay_residual_threshold: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub system: SystemSpec,
    pub triplet: TripletSpec,
    #[serde(default = "default_t")]
    pub t: f64,
    /// Starting point; the origin when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub sim: SimConfig,
    /// Endpoint sampler for the `simulate` and `validate` scenarios.
    #[serde(default = "default_sampler")]
    pub sampler: SimScheme,
    #[serde(default)]
    pub quad: ExponentQuadConfig,
    #[serde(default)]
    pub hypothesis: HypothesisSection,
    #[serde(default)]
    pub charfn: CharfnSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_sampler() -> SimScheme {
    SimScheme::LevyIto
}

fn default_t() -> f64 {
    1.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn config_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    /// Parses JSON text; errors name the offending field path.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Pretty JSON with every default filled in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// `sha256:` and the first 16 hex digits of the digest of `to_json`,
    /// with `output_dir` blanked so relocated runs share a digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let h = Sha256::digest(c.to_json().as_bytes());
        let hex: String = h.iter().take(8).map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }

    pub fn state_dim(&self) -> usize {
        self.system.a.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.system.b.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        if n == 0 {
            return Err(config_err("system.a", "drift matrix is empty"));
        }
        for (i, row) in self.system.a.iter().enumerate() {
            if row.len() != n {
                return Err(config_err(
                    &format!("system.a[{i}]"),
                    format!("expected {n} entries, found {}", row.len()),
                ));
            }
        }
        if self.system.b.len() != n {
            return Err(config_err(
                "system.b",
                format!("expected {n} rows, found {}", self.system.b.len()),
            ));
        }
        let d = self.noise_dim();
        if d == 0 {
            return Err(config_err("system.b", "noise matrix has no columns"));
        }
        for (i, row) in self.system.b.iter().enumerate() {
            if row.len() != d {
                return Err(config_err(
                    &format!("system.b[{i}]"),
                    format!("expected {d} entries, found {}", row.len()),
                ));
            }
        }
        if let Some(q) = &self.triplet.q {
            if q.len() != d || q.iter().any(|r| r.len() != d) {
                return Err(config_err("triplet.q", format!("expected a {d}x{d} matrix")));
            }
        }
        if let Some(a) = &self.triplet.drift {
            if a.len() != d {
                return Err(config_err("triplet.drift", format!("expected {d} entries")));
            }
        }
        if let Some(m) = &self.triplet.measure {
            validate_measure(m, d, "triplet.measure")?;
        }
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(config_err("t", "time must be positive and finite"));
        }
        if let Some(x) = &self.x {
            if x.len() != n {
                return Err(config_err("x", format!("expected {n} entries, found {}", x.len())));
            }
        }
        if let Some(c) = &self.grid.center {
            if c.len() != n {
                return Err(config_err("grid.center", format!("expected {n} entries")));
            }
        }
        if self.validate.l1_bin_factor == 0
            || !self.validate.l1_bin_factor.is_power_of_two()
            || self.validate.l1_bin_factor > self.grid.points_per_axis
        {
            return Err(config_err(
                "validate.l1_bin_factor",
                "must be a power of two no larger than points_per_axis",
            ));
        }
        for (i, h) in self.charfn.frequencies.iter().enumerate() {
            if h.len() != n {
                return Err(config_err(
                    &format!("charfn.frequencies[{i}]"),
                    format!("expected {n} entries"),
                ));
            }
        }
        self.sim
            .validate()
            .map_err(|e| config_err("sim", e.to_string()))?;
        self.quad
            .validate()
            .map_err(|e| config_err("quad", e.to_string()))?;
        match self.scenario {
            Scenario::Density | Scenario::Validate => {
                self.grid_spec(self.grid.freq_radius)
                    .map_err(|e| config_err("grid", e.to_string()))?;
            }
            Scenario::Hypothesis if self.triplet.measure.is_none() => {
                return Err(config_err("triplet.measure", "hypothesis scenario needs a jump measure"));
            }
            Scenario::Kolmogorov if (n, d) != (2, 1) => {
                return Err(config_err("system", "kolmogorov scenario needs n = 2, d = 1"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<OuSystem> {
        OuSystem::new(matrix_from_rows(&self.system.a)?, matrix_from_rows(&self.system.b)?)
    }

    pub fn build_triplet(&self) -> Result<LevyTriplet> {
        let d = self.noise_dim();
        let q = match &self.triplet.q {
            Some(rows) => matrix_from_rows(rows)?,
            None => crate::linalg::Matrix::zeros(d, d),
        };
        let drift = self.triplet.drift.clone().unwrap_or_else(|| vec![0.0; d]);
        let measure = self
            .triplet
            .measure
            .as_ref()
            .map(|m| build_measure(m, d))
            .transpose()?;
        LevyTriplet::new(q, drift, measure)
    }

    pub fn start(&self) -> Vec<f64> {
        self.x.clone().unwrap_or_else(|| vec![0.0; self.state_dim()])
    }

    pub fn grid_spec(&self, freq_radius: f64) -> Result<GridSpec> {
        let n = self.state_dim();
        GridSpec::new(n, self.grid.points_per_axis, freq_radius)?
            .with_center(self.grid.center.clone().unwrap_or_else(|| vec![0.0; n]))
    }

    pub fn density_config(&self) -> DensityConfig {
        DensityConfig {
            quad: self.quad,
            decay_rays: self.grid.decay_rays,
            decay_radii: self.grid.decay_radii,
        }
    }
}

fn validate_measure(m: &MeasureSpec, d: usize, path: &str) -> Result<()> {
    match m {
        MeasureSpec::IsotropicStable {
            scale,
            density_constant,
            ..
        } => {
            if scale.is_some() == density_constant.is_some() {
                return Err(config_err(path, "give exactly one of `scale` and `density_constant`"));
            }
        }
        MeasureSpec::UniformBox { lo, hi, .. } => {
            if lo.len() != d || hi.len() != d {
                return Err(config_err(path, format!("box corners need {d} entries")));
            }
        }
        MeasureSpec::Sum { parts } => {
            if parts.is_empty() {
                return Err(config_err(&format!("{path}.parts"), "sum needs at least one part"));
            }
            for (i, p) in parts.iter().enumerate() {
                validate_measure(p, d, &format!("{path}.parts[{i}]"))?;
            }
        }
    }
    Ok(())
}

fn build_measure(m: &MeasureSpec, d: usize) -> Result<LevyMeasure> {
    Ok(match m {
        MeasureSpec::IsotropicStable {
            alpha,
            scale,
            density_constant,
        } => LevyMeasure::IsotropicStable(match (scale, density_constant) {
            (Some(s), _) => IsotropicStable::new(*alpha, *s, d)?,
            (None, Some(c)) => IsotropicStable::with_density_constant(*alpha, *c, d)?,
            (None, None) => return Err(Error::param("stable measure needs a scale")),
        }),
        MeasureSpec::UniformBox { lo, hi, intensity } => {
            LevyMeasure::CompoundPoisson(CompoundPoisson::uniform_box(lo, hi, *intensity)?)
        }
        MeasureSpec::Sum { parts } => LevyMeasure::sum(
            parts
                .iter()
                .map(|p| build_measure(p, d))
                .collect::<Result<Vec<_>>>()?,
        )?,
    })
}
