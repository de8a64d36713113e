use std::f64::consts::PI;
use std::path::Path;

use hcnet::error::ParseErrorKind;
use hcnet::pde::io::{encode_pgm, format_csv, parse_csv, read_csv, write_csv, write_pgm};
use hcnet::pde::{
    eval_fourier, fdm_solve, fdm_step, fit_fourier, harmonic_spectrum, superposition_check, FdmConfig, Nonlinearity,
    TemperatureField,
};
use hcnet::{Error, PaddingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(nx: usize, ny: usize, seed: u64) -> TemperatureField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TemperatureField::new(nx, ny, 1.0, 1.0, (0..nx * ny).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn stencil(w: [f64; 4], dt: f64, steps: usize, boundary: PaddingMode) -> FdmConfig {
    FdmConfig {
        alpha_x1: w[0],
        alpha_x2: w[1],
        alpha_y1: w[2],
        alpha_y2: w[3],
        dt,
        steps,
        boundary,
        allow_unstable: false,
    }
}

/// One explicit step written out point by point, with neighbours fetched
/// through the boundary rule.
fn hand_step(u: &TemperatureField, cfg: &FdmConfig) -> Vec<f64> {
    let (nx, ny) = (u.nx() as isize, u.ny() as isize);
    let at = |i: isize, j: isize| -> f64 {
        match cfg.boundary {
            PaddingMode::Zero if i < 0 || j < 0 || i >= nx || j >= ny => 0.0,
            PaddingMode::Periodic => u.get(i.rem_euclid(nx) as usize, j.rem_euclid(ny) as usize),
            _ => u.get(i.clamp(0, nx - 1) as usize, j.clamp(0, ny - 1) as usize),
        }
    };
    let (rx, ry) = (cfg.dt / (u.dx() * u.dx()), cfg.dt / (u.dy() * u.dy()));
    let mut out = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let c = at(i, j);
            out.push(
                c + rx * (cfg.alpha_x1 * (at(i + 1, j) - c) + cfg.alpha_x2 * (at(i - 1, j) - c))
                    + ry * (cfg.alpha_y1 * (at(i, j + 1) - c) + cfg.alpha_y2 * (at(i, j - 1) - c)),
            );
        }
    }
    out
}

#[test]
fn step_matches_pointwise_update_for_every_boundary() {
    for (s, boundary) in [PaddingMode::Zero, PaddingMode::Periodic, PaddingMode::Replicate].into_iter().enumerate() {
        let u = TemperatureField::new(5, 7, 0.5, 0.8, random_field(5, 7, s as u64).into_values()).unwrap();
        let cfg = stencil([0.02, 0.05, 0.07, 0.01], 0.5, 1, boundary);
        let got = fdm_step(&u, &cfg).unwrap();
        for (a, b) in got.values().iter().zip(hand_step(&u, &cfg)) {
            assert!((a - b).abs() <= 1e-14, "{boundary:?}: {a} vs {b}");
        }
    }
}

#[test]
fn impulse_spreads_to_von_neumann_neighbours() {
    let u = TemperatureField::from_fn(5, 5, 1.0, 1.0, |i, j| if (i, j) == (2, 2) { 1.0 } else { 0.0 }).unwrap();
    let out = fdm_step(&u, &FdmConfig::isotropic(1.0, 0.1, 1, PaddingMode::Periodic)).unwrap();
    assert!((out.get(2, 2) - 0.6).abs() < 1e-15);
    for (i, j) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
        assert!((out.get(i, j) - 0.1).abs() < 1e-15);
    }
    assert!((out.sum() - 1.0).abs() < 1e-15);
}

#[test]
fn anisotropic_stencil_is_direction_asymmetric() {
    let u = TemperatureField::from_fn(5, 5, 1.0, 1.0, |i, j| if (i, j) == (2, 2) { 1.0 } else { 0.0 }).unwrap();
    let out = fdm_step(&u, &stencil([0.3, 0.1, 0.0, 0.0], 1.0, 1, PaddingMode::Periodic)).unwrap();
    // alpha_x1 pulls from the +x neighbour, so mass flows toward -x.
    assert!((out.get(1, 2) - 0.3).abs() < 1e-15);
    assert!((out.get(3, 2) - 0.1).abs() < 1e-15);
    assert_eq!(out.get(2, 1), 0.0);
}

#[test]
fn solve_zero_steps_is_identity_and_steps_compose() {
    let u = random_field(6, 6, 4);
    let cfg = stencil([0.1, 0.2, 0.1, 0.05], 1.0, 0, PaddingMode::Replicate);
    assert_eq!(fdm_solve(&u, &cfg).unwrap(), u);
    let mut manual = u.clone();
    for _ in 0..7 {
        manual = fdm_step(&manual, &cfg).unwrap();
    }
    assert_eq!(fdm_solve(&u, &cfg.with_steps(7)).unwrap(), manual);
}

#[test]
fn stability_violation_reports_ratio_unless_unsafe() {
    let u = random_field(5, 5, 1);
    let mut cfg = FdmConfig::isotropic(1.0, 0.3, 1, PaddingMode::Periodic);
    match fdm_step(&u, &cfg).unwrap_err() {
        Error::Stability { ratio } => assert!((ratio - 1.2).abs() < 1e-12),
        e => panic!("unexpected {e}"),
    }
    cfg.allow_unstable = true;
    assert!(fdm_step(&u, &cfg).is_ok());
    let msg = FdmConfig::isotropic(1.0, 0.3, 1, PaddingMode::Periodic).validate(1.0, 1.0).unwrap_err().to_string();
    assert!(msg.contains("1.2"), "{msg}");
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(matches!(stencil([0.1, -0.1, 0.0, 0.0], 1.0, 1, PaddingMode::Zero).validate(1.0, 1.0), Err(Error::Config(_))));
    assert!(matches!(stencil([0.1; 4], 0.0, 1, PaddingMode::Zero).validate(1.0, 1.0), Err(Error::Config(_))));
    assert!(TemperatureField::new(2, 5, 1.0, 1.0, vec![0.0; 10]).is_err());
    assert!(TemperatureField::new(3, 3, 1.0, 1.0, vec![f64::NAN; 9]).is_err());
}

#[test]
fn maximum_principle_holds_for_stable_steps() {
    for boundary in [PaddingMode::Periodic, PaddingMode::Replicate] {
        let mut u = random_field(9, 8, 11);
        let cfg = stencil([0.2, 0.3, 0.1, 0.4], 1.0, 1, boundary);
        for _ in 0..50 {
            let next = fdm_step(&u, &cfg).unwrap();
            assert!(next.max() <= u.max() + 1e-15);
            assert!(next.min() >= u.min() - 1e-15);
            u = next;
        }
    }
}

#[test]
fn periodic_conservation_over_many_steps() {
    let u = TemperatureField::new(10, 12, 0.7, 0.4, random_field(10, 12, 2).values().iter().map(|v| v + 2.0).collect())
        .unwrap();
    let out = fdm_solve(&u, &stencil([0.05, 0.1, 0.02, 0.03], 0.5, 100, PaddingMode::Periodic)).unwrap();
    assert!((out.sum() - u.sum()).abs() / u.sum().abs() <= 1e-12);
}

#[test]
fn superposition_of_random_fields() {
    let (u1, u2) = (random_field(12, 9, 5), random_field(12, 9, 6));
    let cfg = stencil([0.1, 0.2, 0.15, 0.05], 1.0, 100, PaddingMode::Replicate);
    assert!(superposition_check(&u1, &u2, 2.5, -1.3, &cfg).unwrap() <= 1e-10);
    assert_eq!(superposition_check(&u1, &u2, 1.0, 0.0, &cfg).unwrap(), 0.0);
    let other = random_field(9, 12, 7);
    assert!(superposition_check(&u1, &other, 1.0, 1.0, &cfg).is_err());
}

#[test]
fn fourier_fit_recovers_orthogonal_modes() {
    let u = TemperatureField::sine_mode(24, 24, PI, 1, 1, 1.0).unwrap();
    let sol = fit_fourier(&u, PI, 6, 6, 1.0).unwrap();
    for m in 1..=6 {
        for n in 1..=6 {
            let want = if (m, n) == (1, 1) { 1.0 } else { 0.0 };
            assert!((sol.coefficient(m, n) - want).abs() <= 1e-10, "B{m}{n} = {}", sol.coefficient(m, n));
        }
    }
    let zero = TemperatureField::from_fn(24, 24, u.dx(), u.dy(), |_, _| 0.0).unwrap();
    assert!(fit_fourier(&zero, PI, 4, 4, 1.0).unwrap().coeffs().iter().all(|&b| b == 0.0));
}

#[test]
fn fourier_fit_of_two_mode_sum() {
    let a = TemperatureField::sine_mode(20, 16, 2.0, 1, 2, 2.0).unwrap();
    let b = TemperatureField::sine_mode(20, 16, 2.0, 3, 1, -0.5).unwrap();
    let sol = fit_fourier(&a.combine(1.0, &b, 1.0).unwrap(), 2.0, 4, 4, 0.3).unwrap();
    assert!((sol.coefficient(1, 2) - 2.0).abs() <= 1e-8);
    assert!((sol.coefficient(3, 1) + 0.5).abs() <= 1e-8);
    assert!(sol.coefficient(2, 2).abs() <= 1e-8);
}

#[test]
fn fourier_rejects_modes_above_nyquist() {
    let u = TemperatureField::sine_mode(8, 8, 1.0, 1, 1, 1.0).unwrap();
    assert!(matches!(fit_fourier(&u, 1.0, 9, 2, 1.0), Err(Error::Config(_))));
    assert!(matches!(fit_fourier(&u, 3.0, 2, 2, 1.0), Err(Error::Config(_))));
}

#[test]
fn fourier_eval_reproduces_and_decays() {
    let u = TemperatureField::sine_mode(16, 16, PI, 1, 1, 1.0)
        .unwrap()
        .combine(1.0, &TemperatureField::sine_mode(16, 16, PI, 2, 3, 0.4).unwrap(), 1.0)
        .unwrap();
    let sol = fit_fourier(&u, PI, 8, 8, 1.0).unwrap();
    assert!(eval_fourier(&sol, 0.0, 16, 16).unwrap().max_abs_diff(&u).unwrap() <= 1e-10);

    let single = fit_fourier(&TemperatureField::sine_mode(16, 16, PI, 1, 1, 1.0).unwrap(), PI, 1, 1, 1.0).unwrap();
    let at_half = eval_fourier(&single, 0.5, 16, 16).unwrap();
    let centreish = TemperatureField::sine_mode(16, 16, PI, 1, 1, (-1.0f64).exp()).unwrap();
    assert!(at_half.max_abs_diff(&centreish).unwrap() <= 1e-12);

    let direct = eval_fourier(&sol, 0.7, 16, 16).unwrap();
    let chained = eval_fourier(&sol.advanced(0.3), 0.4, 16, 16).unwrap();
    assert!(direct.max_abs_diff(&chained).unwrap() <= 1e-12);
    assert!(eval_fourier(&sol, -0.1, 16, 16).is_err());
}

#[test]
fn fdm_tracks_fourier_series_on_dirichlet_grid() {
    let n = 64;
    let u0 = TemperatureField::sine_mode(n, n, PI, 1, 1, 1.0).unwrap();
    let dx = u0.dx();
    let steps = (0.5 / (0.2 * dx * dx)).ceil() as usize;
    let u = fdm_solve(&u0, &FdmConfig::isotropic(1.0, 0.5 / steps as f64, steps, PaddingMode::Zero)).unwrap();
    let exact = TemperatureField::sine_mode(n, n, PI, 1, 1, (-1.0f64).exp()).unwrap();
    assert!(u.relative_l2(&exact).unwrap() <= 1e-2);
}

#[test]
fn square_spectrum_lands_on_doubled_pairs() {
    let s = harmonic_spectrum(1, 1, PI, Nonlinearity::Square, 32).unwrap();
    // sin^2 a sin^2 b = (1 - cos 2a)(1 - cos 2b) / 4
    assert!((s.dc() - 1.0 / 16.0).abs() < 1e-14);
    assert!((s.energy(0, 2) - 1.0 / 32.0).abs() < 1e-14);
    assert!((s.energy(2, 0) - 1.0 / 32.0).abs() < 1e-14);
    assert!((s.energy(2, 2) - 1.0 / 64.0).abs() < 1e-14);
    assert!(s.off_dc_fraction_on(&[(0, 2), (2, 0), (2, 2)]) >= 0.999);
    assert!(s.energy_outside(&[(0, 2), (2, 0), (2, 2)]) <= 1e-10 * s.peak());
}

#[test]
fn identity_spectrum_is_the_input_mode() {
    let s = harmonic_spectrum(2, 3, 1.0, Nonlinearity::Identity, 24).unwrap();
    assert_eq!(s.support(1e-10), vec![(2, 3)]);
}

#[test]
fn gelu_spectrum_has_new_harmonics() {
    let s = harmonic_spectrum(1, 1, PI, Nonlinearity::Gelu, 32).unwrap();
    assert!(s.energy(1, 1) > 0.0);
    assert!(s.energy_outside(&[(1, 1)]) / s.total() >= 1e-3);
    assert!(matches!(harmonic_spectrum(3, 1, PI, Nonlinearity::Gelu, 11), Err(Error::Config(_))));
}

#[test]
fn csv_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.csv");
    let values = [1.5, -2.0, 0.1, 1e-17, 3.0, 1.0 / 3.0];
    write_csv(&path, 3, &values).unwrap();
    let g = read_csv(&path).unwrap();
    assert_eq!((g.rows, g.cols), (2, 3));
    assert_eq!(g.values, values);
    assert_eq!(format_csv(3, &values).lines().count(), 2);

    let p = Path::new("x.csv");
    match parse_csv("1,2\n3,oops\n", p).unwrap_err() {
        Error::Parse { kind, offset, .. } => {
            assert_eq!(kind, ParseErrorKind::Malformed);
            assert_eq!(offset, 4);
        }
        e => panic!("{e}"),
    }
    assert!(parse_csv("1,2\n3\n", p).is_err());
    assert!(read_csv(dir.path().join("missing.csv")).is_err());
}

#[test]
fn pgm_is_min_max_normalized() {
    let bytes = encode_pgm(2, 2, &[0.0, 1.0, 0.5, 2.0]);
    let header = b"P5\n2 2\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(&bytes[header.len()..], &[0, 128, 64, 255]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.pgm");
    write_pgm(&path, 2, 2, &[3.0; 4]).unwrap();
    assert_eq!(std::fs::read(&path).unwrap()[header.len()..], [0, 0, 0, 0]);
}
