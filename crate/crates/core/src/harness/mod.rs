//! Experiment configuration, scenario dispatch, Monte Carlo versus density
//! comparison and report emission.

mod config;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use serde::Serialize;

pub use config::{
    CharfnSection, ExperimentConfig, GridConfig, HypothesisSection, MeasureSpec, Scenario, SimScheme,
    SystemSpec, TripletSpec, ValidateSection,
};

use crate::charfn::{decay_probe, geometric_radii, DecayReport, ExponentIntegrator};
use crate::density::{invert_density, DecaySummary, DensityGrid, COVERAGE_TARGET};
use crate::error::{Error, Result};
use crate::levy::hypothesis_check;
use crate::linalg::{gramian_floor, rank_condition, OuSystem, DEFAULT_RANK_TOL};
use crate::simulate::{
    empirical_charfn, kolmogorov_example, mc_estimate, sample_path_endpoint, EndpointSample, ScalarDriver,
};

/// `sqrt(-ln(0.0005) / 2)`: the asymptotic two-sided 0.1% Kolmogorov-Smirnov constant.
pub const KS_CRITICAL_0_1_PERCENT: f64 = 1.949_466_7;

/// 0.1% critical value of the KS statistic for `n` samples.
pub fn ks_critical_value(n: usize) -> f64 {
    KS_CRITICAL_0_1_PERCENT / (n as f64).sqrt()
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    /// `<=` or `>=`.
    pub relation: &'static str,
    pub threshold: f64,
    pub pass: bool,
}

impl Criterion {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<=",
            threshold,
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: ">=",
            threshold,
            pass: value >= threshold,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub scenario: String,
    pub seed: u64,
    pub config_digest: String,
    pub ks_distances: Vec<f64>,
    pub l1_error: Option<f64>,
    pub mass_check: Option<f64>,
    pub decay: Option<DecaySummary>,
    pub criteria: Vec<Criterion>,
    /// Free-form `key: value` lines for the text report.
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_pass() {
            0
        } else {
            1
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario: {}", self.scenario);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "config: {}", self.config_digest);
        for n in &self.notes {
            let _ = writeln!(s, "{n}");
        }
        for c in &self.criteria {
            let _ = writeln!(
                s,
                "[{}] {}: {:e} {} {:e}",
                if c.pass { "pass" } else { "FAIL" },
                c.name,
                c.value,
                c.relation,
                c.threshold
            );
        }
        let _ = writeln!(s, "overall: {}", if self.all_pass() { "pass" } else { "FAIL" });
        s
    }
}

/// KS distances per marginal, L1 distance of aligned histograms, and the
/// fraction of samples outside the grid.
#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub ks_distances: Vec<f64>,
    pub l1_error: f64,
    pub outside_fraction: f64,
    pub bin_factor: usize,
}

/// Compares endpoint draws with a density grid. Histogram bins are blocks of
/// `bin_factor^n` grid cells, so bin edges coincide with cell edges.
pub fn compare_mc_density(samples: &EndpointSample, grid: &DensityGrid, bin_factor: usize) -> Result<Comparison> {
    let n = grid.dim();
    if samples.dim() != n {
        return Err(Error::dim(format!(
            "samples live in R^{}, grid in R^{n}",
            samples.dim()
        )));
    }
    if samples.is_empty() {
        return Err(Error::param("empty sample"));
    }
    let side = grid.spec.points_per_axis;
    if bin_factor == 0 || !side.is_multiple_of(bin_factor) {
        return Err(Error::param("bin factor must divide points_per_axis"));
    }
    let dy = grid.spec.spacing();
    let lows: Vec<f64> = (0..n).map(|a| grid.spec.support(a).0).collect();
    let count = samples.len() as f64;

    let cell_of = |v: &[f64]| -> Option<Vec<usize>> {
        let mut idx = Vec::with_capacity(n);
        for a in 0..n {
            let u = ((v[a] - lows[a]) / dy).floor();
            if !(u >= 0.0) || u >= side as f64 {
                return None;
            }
            idx.push(u as usize);
        }
        Some(idx)
    };
    let outside = samples.values.iter().filter(|v| cell_of(v).is_none()).count() as f64 / count;
    // binomial allowance of 3 sigma around the coverage target
    let p0 = 1.0 - COVERAGE_TARGET;
    let allowance = p0 + 3.0 * (p0 * (1.0 - p0) / count).sqrt();
    if outside > allowance {
        return Err(Error::Coverage(format!(
            "{:.3}% of the samples fall outside the density grid (target {:.1}% coverage)",
            100.0 * outside,
            100.0 * COVERAGE_TARGET
        )));
    }

    let ks_distances = (0..n)
        .map(|a| {
            let mut xs = samples.component(a);
            xs.sort_by(|p, q| p.total_cmp(q));
            ks_against_cdf(&xs, lows[a], dy, &grid.marginal_cdf(a))
        })
        .collect();

    let bins_side = side / bin_factor;
    let bin_flat = |idx: &[usize]| idx.iter().fold(0, |acc, &k| acc * bins_side + k / bin_factor);
    let total_bins = bins_side.pow(n as u32);
    let mut hist = vec![0.0; total_bins];
    for v in &samples.values {
        if let Some(idx) = cell_of(v) {
            hist[bin_flat(&idx)] += 1.0;
        }
    }
    let mut model = vec![0.0; total_bins];
    let vol = grid.cell_volume();
    for (flat, p) in grid.values.iter().enumerate() {
        model[bin_flat(&grid.spec.unflatten(flat))] += p * vol;
    }
    let l1_error = hist
        .iter()
        .zip(&model)
        .map(|(h, m)| (h / count - m).abs())
        .sum::<f64>()
        + outside;
    Ok(Comparison {
        ks_distances,
        l1_error,
        outside_fraction: outside,
        bin_factor,
    })
}

/// `sup |F_n - F|` for sorted `xs`, with `F` piecewise linear through the
/// values `cdf[k]` at the upper cell edges `low + (k + 1) dy` and `F(low) = 0`.
fn ks_against_cdf(xs: &[f64], low: f64, dy: f64, cdf: &[f64]) -> f64 {
    let top = *cdf.last().unwrap_or(&1.0);
    let f = |x: f64| -> f64 {
        let u = (x - low) / dy;
        if u <= 0.0 {
            return 0.0;
        }
        let k = u.floor() as usize;
        if k >= cdf.len() {
            return top;
        }
        let prev = if k == 0 { 0.0 } else { cdf[k - 1] };
        prev + (cdf[k] - prev) * (u - k as f64)
    };
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let fx = f(x);
            f64::max((i as f64 + 1.0) / n - fx, fx - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Runs `cfg.scenario`, writing its files into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out)?;
    let mut report = ValidationReport {
        scenario: cfg.scenario.name().to_string(),
        seed: cfg.sim.seed,
        config_digest: cfg.digest(),
        ..Default::default()
    };
    info!("running {} with config {}", report.scenario, report.config_digest);
    let sys = cfg.build_system()?;
    match cfg.scenario {
        Scenario::RankCheck => run_rank_check(cfg, &sys, &mut report)?,
        Scenario::Hypothesis => run_hypothesis(cfg, &mut report)?,
        Scenario::Charfn => run_charfn(cfg, &sys, &mut report)?,
        Scenario::Density => {
            run_density(cfg, &sys, &mut report)?;
        }
        Scenario::Simulate => {
            run_simulate(cfg, &sys, &mut report)?;
        }
        Scenario::Validate => run_validate(cfg, &sys, &mut report)?,
        Scenario::Kolmogorov => run_kolmogorov(cfg, &sys, &mut report)?,
    }
    fs::write(out.join("report.txt"), report.to_text())?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

fn run_rank_check(cfg: &ExperimentConfig, sys: &OuSystem, report: &mut ValidationReport) -> Result<()> {
    let rank = rank_condition(sys, DEFAULT_RANK_TOL)?;
    let n = sys.state_dim();
    report.notes.push(format!(
        "rank: {}/{}, {}",
        rank.rank,
        n,
        if rank.satisfied { "satisfied" } else { "not satisfied" }
    ));
    let floor = gramian_floor(sys, cfg.t)?;
    report.notes.push(format!("gramian_floor(t={:e}): {floor:e}", cfg.t));
    report
        .criteria
        .push(Criterion::at_least("kalman_rank", rank.rank as f64, n as f64));
    Ok(())
}

/// Rounding allowance when the stated constant is the exact infimum.
const HYPOTHESIS_RATIO_SLACK: f64 = 1e-9;

fn run_hypothesis(cfg: &ExperimentConfig, report: &mut ValidationReport) -> Result<()> {
    let tr = cfg.build_triplet()?;
    let nu = tr
        .measure()
        .ok_or_else(|| Error::Precondition("hypothesis scenario needs a jump measure".into()))?;
    let h = &cfg.hypothesis;
    let rep = hypothesis_check(nu, h.alpha, h.c, &h.radii, h.directions, h.seed)?;
    let mut w = BufWriter::new(File::create(cfg.output_dir.join("hypothesis.csv"))?);
    writeln!(w, "direction,r,moment,bound,ratio")?;
    for r in &rep.rows {
        writeln!(w, "{},{:e},{:e},{:e},{:e}", r.direction, r.r, r.moment, r.bound, r.ratio)?;
    }
    w.flush()?;
    report
        .notes
        .push(format!("alpha: {:e}, C: {:e}, directions: {}", h.alpha, h.c, rep.directions.len()));
    report
        .criteria
        .push(Criterion::at_least("worst_moment_ratio", rep.worst_ratio, 1.0 - HYPOTHESIS_RATIO_SLACK));
    Ok(())
}

fn write_decay(path: &Path, rep: &DecayReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = rep.directions.first().map_or(0, Vec::len);
    let head: Vec<String> = (1..=n).map(|i| format!("u{i}")).collect();
    writeln!(w, "ray,{},rho,abs_charfn,neg_re_exponent", head.join(","))?;
    for (i, u) in rep.directions.iter().enumerate() {
        let dir: Vec<String> = u.iter().map(|v| format!("{v:e}")).collect();
        for (j, rho) in rep.radii.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{rho:e},{:e},{:e}",
                dir.join(","),
                rep.envelope[i][j],
                rep.log_envelope[i][j]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_charfn(cfg: &ExperimentConfig, sys: &OuSystem, report: &mut ValidationReport) -> Result<()> {
    let tr = cfg.build_triplet()?;
    let n = sys.state_dim();
    let x = cfg.start();
    let integ = ExponentIntegrator::new(sys, &tr, cfg.t, cfg.quad)?;
    let freqs: Vec<Vec<f64>> = if cfg.charfn.frequencies.is_empty() {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        cfg.charfn.frequencies.clone()
    };
    let mut w = BufWriter::new(File::create(cfg.output_dir.join("charfn.csv"))?);
    let head: Vec<String> = (1..=n).map(|i| format!("h{i}")).collect();
    writeln!(w, "{},re,im,abs,re_exponent,im_exponent", head.join(","))?;
    let mut worst_modulus: f64 = 0.0;
    for h in &freqs {
        let phi = integ.exponent(h)?;
        let c = integ.charfn(&x, h)?;
        worst_modulus = worst_modulus.max(c.norm());
        let hs: Vec<String> = h.iter().map(|v| format!("{v:e}")).collect();
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e}",
            hs.join(","),
            c.re,
            c.im,
            c.norm(),
            phi.re,
            phi.im
        )?;
    }
    w.flush()?;
    report
        .criteria
        .push(Criterion::at_most("max_abs_charfn", worst_modulus, 1.0 + 1e-12));
    if rank_condition(sys, DEFAULT_RANK_TOL)?.satisfied {
        let c = &cfg.charfn;
        let rays = if n == 1 { 2 } else { c.decay_rays };
        let rep = decay_probe(
            sys,
            &tr,
            cfg.t,
            rays,
            &geometric_radii(c.decay_max_radius, c.decay_radii),
            &cfg.quad,
        )?;
        write_decay(&cfg.output_dir.join("decay.csv"), &rep)?;
        report.notes.push(format!(
            "decay fit: alpha {:e}, a_t {:e}, c_t {:e}, non_decaying {}",
            rep.fitted_alpha, rep.fitted_a_t, rep.fitted_c_t, rep.non_decaying
        ));
        report.decay = Some(DecaySummary::from_report(&rep));
    } else {
        report
            .notes
            .push("decay fit: skipped, rank condition fails".to_string());
    }
    Ok(())
}

/// Inverts the density per the config, adopting the suggested frequency
/// radius when `grid.auto_freq_radius` is set.
fn build_grid(cfg: &ExperimentConfig, sys: &OuSystem) -> Result<DensityGrid> {
    let rank = rank_condition(sys, DEFAULT_RANK_TOL)?;
    if !rank.satisfied {
        return Err(Error::Precondition(format!(
            "density requires the rank condition Rank[B, AB, ..., A^(n-1)B] = n; found rank {}/{}",
            rank.rank,
            sys.state_dim()
        )));
    }
    let tr = cfg.build_triplet()?;
    let dcfg = cfg.density_config();
    let spec = cfg.grid_spec(cfg.grid.freq_radius)?;
    let grid = invert_density(sys, &tr, cfg.t, &spec, &dcfg)?;
    if cfg.grid.auto_freq_radius {
        if let Some(h) = grid.decay.suggested_freq_radius {
            if (h - spec.freq_radius).abs() > 1e-12 {
                return invert_density(sys, &tr, cfg.t, &cfg.grid_spec(h)?, &dcfg);
            }
        }
    }
    Ok(grid)
}

fn write_grid(out: &Path, grid: &DensityGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(out.join("density.csv"))?);
    grid.write_csv(&mut w)?;
    w.flush()?;
    let mut m = BufWriter::new(File::create(out.join("density.meta"))?);
    grid.write_meta(&mut m)?;
    m.flush()?;
    Ok(())
}

fn grid_checks(cfg: &ExperimentConfig, grid: &DensityGrid, report: &mut ValidationReport) {
    let mass = grid.mass();
    report.mass_check = Some(mass);
    report.decay = Some(grid.decay);
    report.notes.push(format!(
        "grid: {} points per axis, H {:e}, spacing {:e}, truncation_error_bound {:e}",
        grid.spec.points_per_axis,
        grid.spec.freq_radius,
        grid.spec.spacing(),
        grid.truncation_error_bound
    ));
    report.notes.push(format!(
        "decay fit: alpha {:e}, a_t {:e}, c_t {:e}",
        grid.decay.fitted_alpha, grid.decay.fitted_a_t, grid.decay.fitted_c_t
    ));
    report.notes.push(format!(
        "density range: [{:e}, {:e}] (negative values kept in density.csv)",
        grid.min_value(),
        grid.max_value()
    ));
    report.criteria.push(Criterion::at_most(
        "mass_deviation",
        (mass - 1.0).abs(),
        cfg.validate.mass_tolerance,
    ));
    report.criteria.push(Criterion::at_most(
        "decay_fit_residual",
        grid.decay.fit_residual,
        cfg.validate.decay_residual_threshold,
    ));
}

fn run_density(cfg: &ExperimentConfig, sys: &OuSystem, report: &mut ValidationReport) -> Result<DensityGrid> {
    let grid = build_grid(cfg, sys)?;
    write_grid(&cfg.output_dir, &grid)?;
    grid_checks(cfg, &grid, report);
    Ok(grid)
}

fn draw_samples(cfg: &ExperimentConfig, sys: &OuSystem) -> Result<EndpointSample> {
    let tr = cfg.build_triplet()?;
    let x = cfg.start();
    match cfg.sampler {
        SimScheme::LevyIto => sample_path_endpoint(sys, &tr, cfg.t, &x, &cfg.sim),
        SimScheme::Kolmogorov => {
            if sys != &OuSystem::kolmogorov() {
                return Err(Error::Precondition(
                    "the kolmogorov sampler needs A = [[0,0],[1,0]], B = [[1],[0]]".into(),
                ));
            }
            kolmogorov_example(&x, cfg.t, &ScalarDriver::from_triplet(&tr)?, &cfg.sim)
        }
    }
}

fn write_samples(cfg: &ExperimentConfig, s: &EndpointSample) -> Result<()> {
    let mut w = BufWriter::new(File::create(cfg.output_dir.join("samples.csv"))?);
    s.write_csv(&mut w, &cfg.digest())?;
    w.flush()?;
    Ok(())
}

fn run_simulate(cfg: &ExperimentConfig, sys: &OuSystem, report: &mut ValidationReport) -> Result<EndpointSample> {
    let s = draw_samples(cfg, sys)?;
    write_samples(cfg, &s)?;
    report.notes.push(format!("scheme: {}", s.scheme));
    report.notes.push(format!("samples: {}", s.len()));
    for a in 0..s.dim() {
        let m = mc_estimate(&s, &|v| v[a])?;
        report
            .notes
            .push(format!("mean x{}: {:e} (stderr {:e})", a + 1, m.mean, m.stderr));
    }
    let finite = s.values.iter().flatten().all(|v| v.is_finite());
    report
        .criteria
        .push(Criterion::at_least("finite_samples", if finite { 1.0 } else { 0.0 }, 1.0));
    Ok(s)
}

fn run_validate(cfg: &ExperimentConfig, sys: &OuSystem, report: &mut ValidationReport) -> Result<()> {
    let grid = run_density(cfg, sys, report)?;
    let mut s = run_simulate(cfg, sys, report)?;
    // compare X_t^x - e^{tA}x with the law of Y_t
    let shift = crate::linalg::mat_exp(sys.a(), cfg.t)? * nalgebra::DVector::from_vec(cfg.start());
    for v in &mut s.values {
        v.iter_mut().zip(shift.iter()).for_each(|(a, b)| *a -= b);
    }
    let cmp = compare_mc_density(&s, &grid, cfg.validate.l1_bin_factor)?;
    let ks_threshold = cfg
        .validate
        .ks_threshold
        .unwrap_or_else(|| ks_critical_value(s.len()));
    report.notes.push(format!(
        "ks threshold: {ks_threshold:e} ({} at {} samples)",
        if cfg.validate.ks_threshold.is_some() {
            "configured"
        } else {
            "0.1% asymptotic critical value"
        },
        s.len()
    ));
    report.notes.push(format!(
        "l1 bins: {}^{} grid cells; samples outside grid: {:e}",
        cmp.bin_factor,
        grid.dim(),
        cmp.outside_fraction
    ));
    for (a, &ks) in cmp.ks_distances.iter().enumerate() {
        report
            .criteria
            .push(Criterion::at_most(format!("ks_marginal_{}", a + 1), ks, ks_threshold));
    }
    report
        .criteria
        .push(Criterion::at_most("l1_histogram", cmp.l1_error, cfg.validate.l1_threshold));
    report.ks_distances = cmp.ks_distances;
    report.l1_error = Some(cmp.l1_error);
    Ok(())
}

/// Frequencies used when the config lists none.
const KOLMOGOROV_TEST_FREQUENCIES: [[f64; 2]; 4] = [[0.5, 0.0], [0.0, 1.0], [1.0, -1.0], [0.7, 1.5]];

fn run_kolmogorov(cfg: &ExperimentConfig, sys: &OuSystem, report: &mut ValidationReport) -> Result<()> {
    if sys != &OuSystem::kolmogorov() {
        return Err(Error::Precondition(
            "kolmogorov scenario needs A = [[0,0],[1,0]], B = [[1],[0]]".into(),
        ));
    }
    let tr = cfg.build_triplet()?;
    let x = cfg.start();
    let path = kolmogorov_example(&x, cfg.t, &ScalarDriver::from_triplet(&tr)?, &cfg.sim)?;
    let levy_ito = sample_path_endpoint(sys, &tr, cfg.t, &x, &cfg.sim)?;
    write_samples(cfg, &path)?;
    let integ = ExponentIntegrator::new(sys, &tr, cfg.t, cfg.quad)?;
    let freqs: Vec<Vec<f64>> = if cfg.charfn.frequencies.is_empty() {
        KOLMOGOROV_TEST_FREQUENCIES.iter().map(|h| h.to_vec()).collect()
    } else {
        cfg.charfn.frequencies.clone()
    };
    let mut w = BufWriter::new(File::create(cfg.output_dir.join("charfn.csv"))?);
    writeln!(w, "h1,h2,re,im,kolmogorov_re,kolmogorov_im,levy_ito_re,levy_ito_im")?;
    for h in &freqs {
        let want = integ.charfn(&x, h)?;
        let (a, a_re, a_im) = empirical_charfn(&path, h)?;
        let (b, b_re, b_im) = empirical_charfn(&levy_ito, h)?;
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            h[0], h[1], want.re, want.im, a.re, a.im, b.re, b.im
        )?;
        let tag = format!("({:e},{:e})", h[0], h[1]);
        // deviations in units of the Monte Carlo standard error
        let z = |got: f64, want: f64, se: f64| (got - want).abs() / se.max(1e-12);
        report.criteria.push(Criterion::at_most(
            format!("kolmogorov_cf_sigma{tag}"),
            z(a.re, want.re, a_re).max(z(a.im, want.im, a_im)),
            3.0,
        ));
        report.criteria.push(Criterion::at_most(
            format!("levy_ito_cf_sigma{tag}"),
            z(b.re, want.re, b_re).max(z(b.im, want.im, b_im)),
            3.0,
        ));
    }
    w.flush()?;
    report.notes.push(format!("schemes: {} vs {}", path.scheme, levy_ito.scheme));
    Ok(())
}
