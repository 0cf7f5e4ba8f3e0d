//! Action-density analysis: 1-D PCA projection, Gaussian KDE, mode counting
//! and learning-curve smoothing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::Matrix;
use crate::par;

pub const DEFAULT_BANDWIDTH_FACTOR: f64 = 0.8;
pub const DEFAULT_MIN_PROMINENCE: f64 = 0.1;
pub const DEFAULT_GRID_POINTS: usize = 512;
pub const DEFAULT_CURVE_SIGMA: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub values: Vec<f64>,
    pub direction: Vec<f64>,
    /// Variance along `direction` (population normalization).
    pub variance: f64,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi sweeps.
/// Returns eigenvalues and column eigenvectors (`vectors[i][k]` is
/// coordinate `i` of eigenvector `k`).
pub fn symmetric_eigen(a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("eigen-decomposition needs a square matrix".into()));
    }
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    Ok(((0..n).map(|i| m[i][i]).collect(), v))
}

/// Project rows onto the top principal component of the centered sample.
pub fn pca_project_1d(samples: &Matrix) -> Result<Projection> {
    let (n, d) = (samples.rows(), samples.cols());
    if n < 2 || d == 0 {
        return Err(Error::Empty("PCA needs at least two samples".into()));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| samples.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..n {
        let row = samples.row(i);
        for a in 0..d {
            let xa = row[a] - mean[a];
            for b in a..d {
                cov[a][b] += xa * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a][b] /= n as f64;
            cov[b][a] = cov[a][b];
        }
    }
    let total: f64 = (0..d).map(|a| cov[a][a]).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all samples identical".into()));
    }
    let (vals, vecs) = symmetric_eigen(&cov)?;
    let top = (0..d)
        .max_by(|&i, &j| vals[i].total_cmp(&vals[j]))
        .unwrap_or(0);
    let mut direction: Vec<f64> = (0..d).map(|i| vecs[i][top]).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    let lead = direction
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(1.0);
    let sign = if lead < 0.0 { -1.0 } else { 1.0 };
    for x in direction.iter_mut() {
        *x *= sign / norm;
    }
    let values: Vec<f64> = (0..n)
        .map(|i| {
            samples
                .row(i)
                .iter()
                .zip(&mean)
                .zip(&direction)
                .map(|((x, m), u)| (x - m) * u)
                .sum()
        })
        .collect();
    let variance = values.iter().map(|v| v * v).sum::<f64>() / n as f64;
    Ok(Projection {
        values,
        direction,
        variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub n_samples: usize,
}

impl DensityEstimate {
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `factor * n^(-1/5) * std`.
pub fn scott_bandwidth(samples: &[f64], factor: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Empty("bandwidth needs at least two samples".into()));
    }
    let s = sample_std(samples);
    if !(s > 0.0) {
        return Err(Error::Degenerate("zero sample spread".into()));
    }
    Ok(factor * (samples.len() as f64).powf(-0.2) * s)
}

/// `points` uniform values over `[min - 3h, max + 3h]`.
pub fn default_grid(samples: &[f64], bandwidth: f64, points: usize) -> Vec<f64> {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
    linspace(lo, hi, points)
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

pub fn kde_with_bandwidth(samples: &[f64], grid: &[f64], bandwidth: f64) -> Result<DensityEstimate> {
    if samples.len() < 2 {
        return Err(Error::Empty("KDE needs at least two samples".into()));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::Degenerate(format!("bandwidth {bandwidth}")));
    }
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density = par::map_chunks(grid.len(), 32, |r| {
        r.map(|g| {
            let x = grid[g];
            norm * samples
                .iter()
                .map(|s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
    })
    .concat();
    Ok(DensityEstimate {
        grid: grid.to_vec(),
        density,
        bandwidth,
        n_samples: samples.len(),
    })
}

/// Gaussian KDE with Scott's-rule bandwidth scaled by `bandwidth_factor`.
/// `grid = None` uses the default 512-point grid.
pub fn kde_density(
    samples: &[f64],
    grid: Option<&[f64]>,
    bandwidth_factor: f64,
) -> Result<DensityEstimate> {
    let h = scott_bandwidth(samples, bandwidth_factor)?;
    match grid {
        Some(g) => kde_with_bandwidth(samples, g, h),
        None => kde_with_bandwidth(samples, &default_grid(samples, h, DEFAULT_GRID_POINTS), h),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub modes: usize,
    pub locations: Vec<f64>,
    pub bandwidth: f64,
}

/// Local maxima whose height is at least `min_prominence` times the global
/// maximum. Plateaus count once, at their midpoint.
pub fn count_modes(density: &DensityEstimate, min_prominence: f64) -> ModeSummary {
    let y = &density.density;
    let peak = y.iter().copied().fold(0.0, f64::max);
    let mut locations = Vec::new();
    if peak > 0.0 {
        let n = y.len();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            let left_lower = i == 0 || y[i - 1] < y[i];
            let right_lower = j + 1 == n || y[j + 1] < y[i];
            if left_lower && right_lower && y[i] >= min_prominence * peak {
                locations.push(0.5 * (density.grid[i] + density.grid[j]));
            }
            i = j + 1;
        }
    }
    ModeSummary {
        modes: locations.len(),
        locations,
        bandwidth: density.bandwidth,
    }
}

/// PCA to 1-D, KDE at `bandwidth_factor`, then mode counting.
pub fn action_modes(actions: &Matrix, bandwidth_factor: f64) -> Result<(Projection, DensityEstimate, ModeSummary)> {
    let proj = pca_project_1d(actions)?;
    let kde = kde_density(&proj.values, None, bandwidth_factor)?;
    let modes = count_modes(&kde, DEFAULT_MIN_PROMINENCE);
    Ok((proj, kde, modes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub steps: Vec<f64>,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub sigma: f64,
}

/// Normalized Gaussian taps for offsets `-radius..=radius`, radius `round(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).round() as usize;
    let w: Vec<f64> = (0..=2 * radius)
        .map(|k| {
            let x = k as f64 - radius as f64;
            (-0.5 * (x / sigma).powi(2)).exp()
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

fn reflect(i: isize, n: isize) -> usize {
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Discrete Gaussian filter with half-sample reflection at the ends.
pub fn gaussian_filter(values: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || values.is_empty() {
        return values.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * values[reflect(i + k as isize - radius, n)])
                .sum()
        })
        .collect()
}

pub fn smooth_curve(steps: &[f64], values: &[f64], sigma: f64) -> Result<CurveSeries> {
    if steps.len() != values.len() {
        return Err(Error::Dimension(format!(
            "{} steps for {} values",
            steps.len(),
            values.len()
        )));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::Invalid(format!("smoothing sigma {sigma}")));
    }
    Ok(CurveSeries {
        steps: steps.to_vec(),
        raw: values.to_vec(),
        smoothed: gaussian_filter(values, sigma),
        sigma,
    })
}

/// Histogram density of `samples` at each grid point (cells centred on the grid).
pub fn histogram_on_grid(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; grid.len()];
    if grid.len() < 2 || samples.is_empty() {
        return counts;
    }
    let dx = grid[1] - grid[0];
    for s in samples {
        let k = ((s - grid[0]) / dx).round();
        if k >= 0.0 && (k as usize) < grid.len() {
            counts[k as usize] += 1.0;
        }
    }
    let z = samples.len() as f64 * dx;
    counts.into_iter().map(|c| c / z).collect()
}

/// Two-sample Kolmogorov-Smirnov statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS test needs two non-empty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok((d, kolmogorov_tail(lambda)))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = f64::from(k);
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

fn push_rows(out: &mut String, xs: &[f64], raw: &[f64], smooth: &[f64]) {
    out.push_str("x,raw,smoothed\n");
    for ((x, r), s) in xs.iter().zip(raw).zip(smooth) {
        let _ = writeln!(out, "{x:.16e},{r:.16e},{s:.16e}");
    }
}

/// Density CSV: histogram as `raw`, KDE as `smoothed`.
pub fn density_csv(samples: &[f64], density: &DensityEstimate) -> String {
    let mut out = String::new();
    let hist = histogram_on_grid(samples, &density.grid);
    push_rows(&mut out, &density.grid, &hist, &density.density);
    out
}

pub fn curve_csv(curve: &CurveSeries) -> String {
    let mut out = String::new();
    push_rows(&mut out, &curve.steps, &curve.raw, &curve.smoothed);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_projection_is_centered_input() {
        let m = Matrix::from_rows(&[vec![1.0], vec![3.0], vec![-1.0]]).unwrap();
        let p = pca_project_1d(&m).unwrap();
        assert_eq!(p.direction, vec![1.0]);
        for (v, w) in p.values.iter().zip([0.0, 2.0, -2.0]) {
            assert!((v - w).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_one_line_keeps_all_variance() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| {
            let x = i as f64 * 0.1 - 1.0;
            vec![x, 2.0 * x]
        }).collect();
        let p = pca_project_1d(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let total: f64 = {
            let mx = rows.iter().map(|r| r[0]).sum::<f64>() / 20.0;
            let my = rows.iter().map(|r| r[1]).sum::<f64>() / 20.0;
            rows.iter().map(|r| (r[0] - mx).powi(2) + (r[1] - my).powi(2)).sum::<f64>() / 20.0
        };
        assert!((p.variance - total).abs() < 1e-12);
        assert!(p.direction[1] > 0.0 && (p.direction[1] / p.direction[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let m = Matrix::filled(5, 2, 0.3);
        assert!(matches!(pca_project_1d(&m), Err(Error::Degenerate(_))));
        assert!(kde_density(&[0.5; 10], None, 0.8).is_err());
    }

    #[test]
    fn point_mass_peaks_nearest_grid_point() {
        let grid = linspace(0.0, 1.0, 101);
        let d = kde_with_bandwidth(&[0.5; 10], &grid, 0.01).unwrap();
        let arg = (0..101).max_by(|&i, &j| d.density[i].total_cmp(&d.density[j])).unwrap();
        assert_eq!(arg, 50);
    }

    #[test]
    fn flat_zero_has_no_modes() {
        let d = DensityEstimate { grid: linspace(0.0, 1.0, 10), density: vec![0.0; 10], bandwidth: 1.0, n_samples: 2 };
        assert_eq!(count_modes(&d, 0.1).modes, 0);
    }

    #[test]
    fn impulse_response_is_kernel() {
        let mut x = vec![0.0; 41];
        x[20] = 1.0;
        let y = gaussian_filter(&x, 2.0);
        let z: f64 = (-8..=8).map(|k: i32| (-0.5 * (f64::from(k) / 2.0).powi(2)).exp()).sum();
        for (i, yi) in y.iter().enumerate() {
            let k = i as f64 - 20.0;
            let want = if k.abs() <= 8.0 { (-0.5 * (k / 2.0).powi(2)).exp() / z } else { 0.0 };
            assert!((yi - want).abs() < 1e-10);
        }
    }

    #[test]
    fn ks_separates_shifted_samples() {
        let a: Vec<f64> = (0..500).map(|i| f64::from(i) / 500.0).collect();
        let (d, p) = ks_two_sample(&a, &a).unwrap();
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
        let b: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        let (d, p) = ks_two_sample(&a, &b).unwrap();
        assert!((d - 0.3).abs() < 1e-2 && p < 1e-10);
    }

    #[test]
    fn constant_and_zero_sigma_are_fixed_points() {
        let c = vec![2.5; 30];
        let s = smooth_curve(&linspace(0.0, 29.0, 30), &c, 100.0).unwrap();
        assert!(s.smoothed.iter().all(|v| (v - 2.5).abs() < 1e-14));
        let x: Vec<f64> = (0..7).map(|i| f64::from(i).sin()).collect();
        assert_eq!(gaussian_filter(&x, 0.0), x);
    }
}
