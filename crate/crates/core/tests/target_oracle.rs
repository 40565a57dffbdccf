use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbnn_core::io::{save_realisations, RealisationFile};
use sbnn_core::math::{cholesky, StreamCounter};
use sbnn_core::target::{
    build_covariance, center_realisations, matern32_covariogram, paciorek_cov, simulate_target,
    sqexp_covariogram, TargetSource, TargetSpec,
};
use sbnn_core::{Error, Grid};

/// Paciorek covariance with explicit 2x2 kernel matrices, determinants and
/// inverse, as written in the general form.
fn paciorek_general(s: [f64; 2], r: [f64; 2], kappa: f64, xi: [f64; 2], l: f64) -> f64 {
    let kernel = |p: [f64; 2]| {
        let a = (kappa * ((p[0] - xi[0]).powi(2) + (p[1] - xi[1]).powi(2)).sqrt()).exp();
        [[a, 0.0], [0.0, a]]
    };
    let det = |m: [[f64; 2]; 2]| m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let (ks, kr) = (kernel(s), kernel(r));
    let mut avg = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            avg[i][j] = 0.5 * (ks[i][j] + kr[i][j]);
        }
    }
    let d = det(avg);
    let inv = [[avg[1][1] / d, -avg[0][1] / d], [-avg[1][0] / d, avg[0][0] / d]];
    let diff = [s[0] - r[0], s[1] - r[1]];
    let mut q = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            q += diff[i] * inv[i][j] * diff[j];
        }
    }
    let base = (-(q.sqrt().powi(2)) / (2.0 * l * l)).exp();
    det(ks).powf(0.25) * det(kr).powf(0.25) * d.powf(-0.5) * base
}

fn random_point(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]
}

#[test]
fn paciorek_matches_general_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (s, r) = (random_point(&mut rng), random_point(&mut rng));
        let got = paciorek_cov(&s, &r, 1.0, &[0.5, 1.0], 1.0).unwrap();
        let want = paciorek_general(s, r, 1.0, [0.5, 1.0], 1.0);
        assert!((got - want).abs() <= 1e-13 * want.abs().max(1e-300) + 1e-300, "{got} vs {want}");
    }
}

#[test]
fn paciorek_symmetry_and_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let (s, r) = (random_point(&mut rng), random_point(&mut rng));
        let a = paciorek_cov(&s, &r, 1.0, &[0.5, 1.0], 1.0).unwrap();
        let b = paciorek_cov(&r, &s, 1.0, &[0.5, 1.0], 1.0).unwrap();
        assert!((a - b).abs() <= 1e-14);
        assert_eq!(paciorek_cov(&s, &s, 1.0, &[0.5, 1.0], 1.0).unwrap(), 1.0);
    }
}

#[test]
fn paciorek_collapses_to_sqexp_at_zero_kappa() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let (s, r) = (random_point(&mut rng), random_point(&mut rng));
        let h = ((s[0] - r[0]).powi(2) + (s[1] - r[1]).powi(2)).sqrt();
        let p = paciorek_cov(&s, &r, 0.0, &[0.5, 1.0], 1.3).unwrap();
        let e = (-h * h / (2.0 * 1.3 * 1.3)).exp();
        assert!((p - e).abs() <= 1e-12);
    }
}

#[test]
fn paciorek_matrix_matches_elementwise_calls() {
    let grid = Grid::square(-4.0, 4.0, 8, 2).unwrap();
    let spec = TargetSpec::Paciorek {
        length_scale: 1.0,
        kappa: 1.0,
        focus: vec![0.5, 1.0],
    };
    let sigma = build_covariance(&grid, &spec).unwrap();
    let sites = grid.sites();
    for i in 0..grid.len() {
        for j in 0..grid.len() {
            let e = paciorek_cov(sites.row(i).as_slice().unwrap(), sites.row(j).as_slice().unwrap(), 1.0, &[0.5, 1.0], 1.0)
                .unwrap();
            assert!((sigma[[i, j]] - e).abs() <= 1e-14);
        }
    }
    assert_eq!(sigma, sigma.t());
}

#[test]
fn matern_at_one_length_scale() {
    // (1 + sqrt 3) e^(-sqrt 3) evaluated by series-free scalar arithmetic
    let r3 = 1.732_050_807_568_877_2_f64;
    let want = (1.0 + r3) / r3.exp();
    let got = matern32_covariogram(2.5, 2.5).unwrap();
    assert!((got - want).abs() < 1e-15);
    assert!((got - 0.48335).abs() < 1e-5);
}

proptest! {
    #[test]
    fn covariograms_are_bounded_and_decreasing(h in 0.0f64..20.0, dh in 1e-6f64..5.0, l in 0.05f64..5.0) {
        for f in [sqexp_covariogram::<f64>, matern32_covariogram::<f64>] {
            let a = f(h, l).unwrap();
            let b = f(h + dh, l).unwrap();
            prop_assert!(a <= 1.0 && a >= 0.0);
            prop_assert!(b <= a);
            if h > 0.0 {
                prop_assert!(a < 1.0);
            }
        }
    }
}

#[test]
fn sqexp_factor_reconstructs_on_16x16() {
    let grid = Grid::square(-4.0, 4.0, 16, 2).unwrap();
    let sigma = build_covariance(&grid, &TargetSpec::SqExp { length_scale: 1.0 }).unwrap();
    let f = cholesky(&sigma, 1e-8).unwrap();
    let l = f.lower();
    let back = l.dot(&l.t());
    let err = (&back - &sigma).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err <= 1e-6, "{err}");
}

fn empirical_cov(fields: &Array2<f64>) -> Array2<f64> {
    let mean = fields.mean_axis(Axis(0)).unwrap();
    let c = fields - &mean;
    c.t().dot(&c) / (fields.nrows() as f64 - 1.0)
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn gaussian_draws_have_target_covariance() {
    let grid = Grid::square(-4.0, 4.0, 8, 2).unwrap();
    let spec = TargetSpec::SqExp { length_scale: 1.0 };
    let draws = simulate_target(&spec, &grid, 5000, &mut StreamCounter::new(21)).unwrap();
    let sigma = build_covariance(&grid, &spec).unwrap();
    let err = max_abs(&empirical_cov(&draws), &sigma);
    assert!(err <= 0.1, "{err}");
}

#[test]
fn lognormal_median_and_log_covariance() {
    let grid = Grid::square(-4.0, 4.0, 8, 2).unwrap();
    let spec = TargetSpec::LognormalMatern32 { length_scale: 1.0 };
    let draws = simulate_target(&spec, &grid, 5000, &mut StreamCounter::new(22)).unwrap();
    assert!(draws.iter().all(|&v| v > 0.0));
    for col in draws.axis_iter(Axis(1)) {
        let mut v = col.to_vec();
        v.sort_by(f64::total_cmp);
        let median = 0.5 * (v[2499] + v[2500]);
        assert!((median - 1.0).abs() <= 0.05, "median {median}");
    }
    let logs = draws.mapv(f64::ln);
    let sigma = build_covariance(&grid, &spec).unwrap();
    assert!(max_abs(&empirical_cov(&logs), &sigma) <= 0.1);
}

#[test]
fn simulation_is_seed_deterministic() {
    let grid = Grid::square(-4.0, 4.0, 6, 2).unwrap();
    let spec = TargetSpec::SqExp { length_scale: 1.0 };
    let a = simulate_target(&spec, &grid, 7, &mut StreamCounter::new(5)).unwrap();
    let b = simulate_target(&spec, &grid, 7, &mut StreamCounter::new(5)).unwrap();
    let c = simulate_target(&spec, &grid, 7, &mut StreamCounter::new(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn centered_lognormal_means_vanish() {
    let grid = Grid::square(-4.0, 4.0, 8, 2).unwrap();
    let spec = TargetSpec::LognormalMatern32 { length_scale: 1.0 };
    let draws = simulate_target(&spec, &grid, 100, &mut StreamCounter::new(23)).unwrap();
    let (centered, mean) = center_realisations(&draws).unwrap();
    for j in 0..grid.len() {
        let m: f64 = centered.column(j).iter().sum::<f64>() / 100.0;
        assert!(m.abs() <= 1e-12);
        let direct: f64 = draws.column(j).iter().sum::<f64>() / 100.0;
        assert!((mean[j] - direct).abs() <= 1e-12);
    }
}

#[test]
fn external_realisations_round_trip_and_run_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fields.bin");
    let grid = Grid::square(0.0, 1.0, 3, 2).unwrap();
    let fields = Array2::from_shape_fn((3, 9), |(r, j)| (r * 9 + j) as f64 * 0.1 - 1.3);
    save_realisations(&path, &RealisationFile::new(grid.clone(), fields.clone()).unwrap()).unwrap();
    let spec = TargetSpec::External { path: path.clone() };
    let got = simulate_target(&spec, &grid, 3, &mut StreamCounter::new(0)).unwrap();
    assert_eq!(got, fields);
    match simulate_target(&spec, &grid, 4, &mut StreamCounter::new(0)) {
        Err(Error::InsufficientData { requested, available }) => assert_eq!((requested, available), (4, 3)),
        other => panic!("unexpected {other:?}"),
    }
    let other_grid = Grid::square(0.0, 1.0, 4, 2).unwrap();
    assert!(matches!(
        simulate_target(&spec, &other_grid, 1, &mut StreamCounter::new(0)),
        Err(Error::Format { .. })
    ));
}

#[test]
fn lognormal_source_is_centered_with_stored_mean() {
    let grid = Grid::square(-4.0, 4.0, 6, 2).unwrap();
    let spec = TargetSpec::LognormalMatern32 { length_scale: 1.0 };
    let mut streams = StreamCounter::new(3);
    let (source, mean) = TargetSource::from_spec(&spec, &grid, 4000, &mut streams).unwrap();
    let mean = mean.unwrap();
    // pointwise mean of LN(0, 1) marginals is exp(1/2)
    assert!(mean.iter().all(|&m| (m - 0.5f64.exp()).abs() < 0.15));
    let batch = source.draw(4000, &mut streams).unwrap();
    let centered_mean = batch.mean_axis(Axis(0)).unwrap();
    assert!(centered_mean.iter().all(|&m| m.abs() < 0.15));
}
