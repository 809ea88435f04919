use levy_ou::levy::{truncate_measure, IsotropicStable, LevyMeasure, LevyTriplet};
use levy_ou::linalg::{Matrix, OuSystem};
use levy_ou::simulate::{
    empirical_charfn, kolmogorov_example, mc_estimate, sample_compound_convolution, sample_path_endpoint,
    EndpointSample, ScalarDriver, SimConfig, SmallJumpMode,
};

fn stable_kolmogorov() -> (OuSystem, LevyTriplet) {
    let nu = LevyMeasure::IsotropicStable(IsotropicStable::new(1.5, 1.0, 1).unwrap());
    (OuSystem::kolmogorov(), LevyTriplet::pure_jump(nu).unwrap())
}

fn cfg(sample_count: usize, step_count: usize, seed: u64) -> SimConfig {
    SimConfig {
        sample_count,
        step_count,
        seed,
        small_jump_mode: SmallJumpMode::GaussianSubstitute,
        ..SimConfig::default()
    }
}

fn correlation(a: &EndpointSample, b: &EndpointSample, axis: usize) -> f64 {
    let x = a.component(axis);
    let y = b.component(axis);
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
    let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn samples_do_not_depend_on_thread_count() {
    let (sys, tr) = stable_kolmogorov();
    let c = cfg(2000, 20, 5);
    let draw = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_path_endpoint(&sys, &tr, 1.0, &[0.2, 0.1], &c).unwrap())
    };
    assert_eq!(draw(1).values, draw(3).values);
}

#[test]
fn big_jumps_are_independent_of_the_gaussian_part() {
    let sys = OuSystem::kolmogorov();
    let nu = LevyMeasure::IsotropicStable(IsotropicStable::new(1.5, 1.0, 1).unwrap());
    let big = truncate_measure(&nu, 0.5, f64::INFINITY).unwrap();
    let n = 50_000;
    let c = cfg(n, 10, 17);
    let jumps = sample_compound_convolution(&sys, &big, 1.0, &c).unwrap().sample;
    let gauss = LevyTriplet::gaussian(Matrix::from_element(1, 1, 1.0)).unwrap();
    let rest = sample_path_endpoint(&sys, &gauss, 1.0, &[0.0, 0.0], &c).unwrap();
    let band = 3.0 / (n as f64).sqrt();
    for axis in 0..2 {
        let r = correlation(&jumps, &rest, axis);
        assert!(r.abs() < band, "axis {axis}: correlation {r}");
    }
}

#[test]
fn halving_the_riemann_step_stays_within_noise() {
    let (_, tr) = stable_kolmogorov();
    let driver = ScalarDriver::from_triplet(&tr).unwrap();
    let coarse = kolmogorov_example(&[0.0, 0.0], 1.0, &driver, &cfg(20_000, 200, 3)).unwrap();
    let fine = kolmogorov_example(&[0.0, 0.0], 1.0, &driver, &cfg(20_000, 400, 4)).unwrap();
    for h in [[0.5, 0.0], [0.0, 1.0], [1.0, -1.0]] {
        let (a, ar, ai) = empirical_charfn(&coarse, &h).unwrap();
        let (b, br, bi) = empirical_charfn(&fine, &h).unwrap();
        assert!((a.re - b.re).abs() < 3.0 * ar.hypot(br), "{h:?}");
        assert!((a.im - b.im).abs() < 3.0 * ai.hypot(bi), "{h:?}");
    }
}

#[test]
fn gaussian_cosine_moment_and_clt_rate() {
    let sys = OuSystem::new(Matrix::zeros(1, 1), Matrix::identity(1, 1)).unwrap();
    let tr = LevyTriplet::gaussian(Matrix::identity(1, 1)).unwrap();
    let h = 1.3;
    let s = sample_path_endpoint(&sys, &tr, 1.0, &[0.0], &cfg(40_000, 1, 8)).unwrap();
    let m = mc_estimate(&s, &|z| (h * z[0]).cos()).unwrap();
    assert!((m.mean - (-h * h / 2.0).exp()).abs() < 3.0 * m.stderr);

    let small = sample_path_endpoint(&sys, &tr, 1.0, &[0.0], &cfg(2_500, 1, 8)).unwrap();
    let m0 = mc_estimate(&small, &|z| z[0]).unwrap();
    let m4 = mc_estimate(&s, &|z| z[0]).unwrap();
    let ratio = m0.stderr / m4.stderr;
    assert!((ratio - 4.0).abs() <= 1.0, "{ratio}");
}
