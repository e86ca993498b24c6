//! Independent oracles and generators shared by the integration tests.

#![allow(dead_code)]

use aniso::{CoordinateSet, KernelParams, SpatialSample};
use aniso::field_sim::{simulate, RngStream, SimulationConfig};
use faer::Mat;
use rand::Rng;

/// Gaussian log-density by Gaussian elimination with partial pivoting.
pub fn oracle_log_likelihood(z: &[f64], mean: f64, cov: &[Vec<f64>]) -> f64 {
    let n = z.len();
    let mut a: Vec<Vec<f64>> = cov.to_vec();
    let r: Vec<f64> = z.iter().map(|v| v - mean).collect();
    let mut b = r.clone();
    let mut logdet = 0.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        logdet += a[k][k].abs().ln();
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    let quad: f64 = r.iter().zip(&x).map(|(a, b)| a * b).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

/// `M Mᵀ + n·I` with standard-normal-ish entries.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let s: f64 = (0..n).map(|k| m[i][k] * m[j][k]).sum();
                    s + if i == j { n as f64 } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

pub fn to_mat(a: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(a.len(), a.len(), |i, j| a[i][j])
}

/// Exponential kernel written out from scratch for a 2-D lag.
pub fn brute_kernel(params: &KernelParams, h: [f64; 2]) -> f64 {
    use aniso::KernelShape;
    let d = match params.shape() {
        KernelShape::IsotropicExp { length_scale } => h[0].hypot(h[1]) / length_scale,
        KernelShape::EllipticExp { length_scales, angle } => {
            let (s, c) = angle.sin_cos();
            let u = (c * h[0] - s * h[1]) / length_scales[0];
            let v = (s * h[0] + c * h[1]) / length_scales[1];
            u.hypot(v)
        }
        KernelShape::MultiAxisExp {
            axes,
            groups,
            group_scales,
        } => axes
            .iter()
            .zip(groups)
            .map(|(a, &g)| ((a.cos() * h[0] + a.sin() * h[1]) / group_scales[g]).powi(2))
            .sum::<f64>()
            .sqrt(),
    };
    let nugget = if h == [0.0, 0.0] { params.noise_variance() } else { 0.0 };
    params.signal_variance() * (-d).exp() + nugget
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
}

/// Simulated elliptic field on the unit square.
pub fn simulated_sample(n: usize, l1: f64, l2: f64, eta: f64, noise: f64, stream: RngStream) -> SpatialSample {
    let kernel = KernelParams::elliptic(1.0, [l1, l2], eta, noise).unwrap();
    let (coords, z) = simulate(&SimulationConfig::unit_square(n, kernel), stream).unwrap();
    SpatialSample::new(coords, z).unwrap()
}

pub fn sample_from(points: &[[f64; 2]], z: Vec<f64>) -> SpatialSample {
    SpatialSample::new(CoordinateSet::from_xy(points).unwrap(), z).unwrap()
}

/// Brute-force `(γ̂, count)` over pairs `i < j` accepted by `keep(h)`.
pub fn brute_variogram(points: &[[f64; 2]], z: &[f64], keep: impl Fn([f64; 2]) -> bool) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            let h = [points[i][0] - points[j][0], points[i][1] - points[j][1]];
            if keep(h) {
                sum += (z[i] - z[j]) * (z[i] - z[j]);
                count += 1;
            }
        }
    }
    ((count > 0).then(|| sum / (2.0 * count as f64)), count)
}

/// Axial angle between two directions, computed without the library.
pub fn axial_difference(a: f64, b: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let d = (a - b).rem_euclid(pi);
    d.min(pi - d)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
