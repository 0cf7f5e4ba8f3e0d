use gorl_core::analysis::*;
use gorl_core::mathcore::{Matrix, RngStream};
use proptest::prelude::*;

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut s = RngStream::new(seed, 0);
    (0..n).map(|_| s.normal()).collect()
}

#[test]
fn projected_variance_matches_eigen_oracle() {
    let mut s = RngStream::new(1, 0);
    let rows: Vec<Vec<f64>> = (0..500)
        .map(|_| {
            let (a, b, c) = (s.normal(), s.normal(), s.normal());
            vec![2.0 * a + 0.3 * b, -0.5 * a + b, 0.2 * c + 0.1 * a]
        })
        .collect();
    let p = pca_project_1d(&Matrix::from_rows(&rows).unwrap()).unwrap();
    let n = rows.len() as f64;
    let data = nalgebra::DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
    let mean = data.row_mean();
    let centered = nalgebra::DMatrix::from_fn(rows.len(), 3, |i, j| data[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let top = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((p.variance - top).abs() < 1e-8, "{} vs {top}", p.variance);
}

#[test]
fn standard_normal_density_at_zero() {
    let d = kde_density(&normals(10_000, 2), None, DEFAULT_BANDWIDTH_FACTOR).unwrap();
    let i = (0..d.grid.len())
        .min_by(|&a, &b| d.grid[a].abs().total_cmp(&d.grid[b].abs()))
        .unwrap();
    let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((d.density[i] - exact).abs() < 0.05);
    assert_eq!(count_modes(&d, DEFAULT_MIN_PROMINENCE).modes, 1);
}

#[test]
fn balanced_mixture_has_two_modes() {
    let mut s = RngStream::new(3, 0);
    let xs: Vec<f64> = (0..10_000)
        .map(|i| if i % 2 == 0 { 0.7 } else { -0.7 } + 0.05 * s.normal())
        .collect();
    let d = kde_density(&xs, None, DEFAULT_BANDWIDTH_FACTOR).unwrap();
    let m = count_modes(&d, DEFAULT_MIN_PROMINENCE);
    assert_eq!(m.modes, 2);
    assert!((m.locations[0] + 0.7).abs() < 0.05 && (m.locations[1] - 0.7).abs() < 0.05);
}

#[test]
fn pipeline_on_two_dimensional_mixture() {
    let mut s = RngStream::new(4, 0);
    let rows: Vec<Vec<f64>> = (0..4000)
        .map(|i| {
            let c = if i % 2 == 0 { 0.6 } else { -0.6 };
            vec![c + 0.05 * s.normal(), -c + 0.05 * s.normal()]
        })
        .collect();
    let (_, _, m) = action_modes(&Matrix::from_rows(&rows).unwrap(), 0.8).unwrap();
    assert_eq!(m.modes, 2);
}

#[test]
fn csv_has_fixed_header() {
    let xs = normals(100, 5);
    let d = kde_density(&xs, None, 0.8).unwrap();
    let csv = density_csv(&xs, &d);
    assert!(csv.starts_with("x,raw,smoothed\n"));
    assert_eq!(csv.lines().count(), DEFAULT_GRID_POINTS + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kde_integrates_to_one(seed in 0u64..10_000, n in 2usize..400, scale in 0.01f64..10.0) {
        let xs: Vec<f64> = normals(n, seed).into_iter().map(|x| x * scale).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min) - 6.0 * sd;
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 6.0 * sd;
        let d = kde_density(&xs, Some(&linspace(lo, hi, 2048)), 0.8).unwrap();
        prop_assert!((d.integral() - 1.0).abs() < 1e-2);
        prop_assert!(d.density.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn mode_count_ignores_rescaling(seed in 0u64..10_000, k in 1e-6f64..1e6) {
        let xs = normals(300, seed);
        let d = kde_density(&xs, None, 0.5).unwrap();
        let mut scaled = d.clone();
        scaled.density.iter_mut().for_each(|v| *v *= k);
        prop_assert_eq!(count_modes(&d, 0.1).modes, count_modes(&scaled, 0.1).modes);
    }

    #[test]
    fn smoothing_keeps_constant_series(c in -1e3f64..1e3, n in 1usize..300, sigma in 0.0f64..150.0) {
        let y = gaussian_filter(&vec![c; n], sigma);
        prop_assert!(y.iter().all(|v| (v - c).abs() <= 1e-12 * c.abs().max(1.0)));
    }
}
