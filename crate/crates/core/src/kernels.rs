//! Exponential covariance kernels (isotropic, elliptic and multi-axis) and
//! covariance-matrix assembly.
//!
//! Every kernel has the form `σ_s²·exp(−d(h)) + σ_ε²·[h = 0]` where `d` is a
//! scaled distance:
//!
//! * isotropic: `d = ‖h‖ / λ`
//! * elliptic: `d = ‖A h‖` with `A = diag(1/λ₁, 1/λ₂)·R(η)`
//! * multi-axis: `d = ‖A h‖` with `A` the stacked `R × 2` matrix whose row `r`
//!   is `(cos η_r, sin η_r) / λ_{g(r)}`
//!
//! Anisotropic distances are evaluated through the quadratic form
//! `hᵀ AᵀA h`, so every kernel reduces to a 2×2 metric.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Reduces an angle to `[0, π)`.
pub fn reduce_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(PI) + 0.0;
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// A lag `h = s_i − s_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LagVector(Vec<f64>);

impl LagVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("lag vector must have at least one component"));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("lag vector"));
        }
        Ok(Self(components))
    }

    pub fn xy(x: f64, y: f64) -> Result<Self> {
        Self::new(vec![x, y])
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }
}

impl TryFrom<Vec<f64>> for LagVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LagVector> for Vec<f64> {
    fn from(h: LagVector) -> Self {
        h.0
    }
}

/// The shape-specific part of a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelShape {
    IsotropicExp {
        length_scale: f64,
    },
    EllipticExp {
        length_scales: [f64; 2],
        /// Rotation angle of `A`, reduced to `[0, π)`.
        angle: f64,
    },
    MultiAxisExp {
        /// Axis directions, each reduced to `[0, π)`.
        axes: Vec<f64>,
        /// `groups[r]` is the length-scale group of axis `r`.
        groups: Vec<usize>,
        group_scales: Vec<f64>,
    },
}

/// Kernel parameter vector `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    signal_variance: f64,
    noise_variance: f64,
    shape: KernelShape,
}

fn check_variances(signal: f64, noise: f64) -> Result<()> {
    if !(signal.is_finite() && signal > 0.0) {
        return Err(invalid(format!("signal variance must be positive, got {signal}")));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(invalid(format!("noise variance must be nonnegative, got {noise}")));
    }
    Ok(())
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

impl KernelParams {
    pub fn isotropic(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self> {
        check_variances(signal_variance, noise_variance)?;
        check_scale("length scale", length_scale)?;
        Ok(Self {
            signal_variance,
            noise_variance,
            shape: KernelShape::IsotropicExp { length_scale },
        })
    }

    pub fn elliptic(
        signal_variance: f64,
        length_scales: [f64; 2],
        angle: f64,
        noise_variance: f64,
    ) -> Result<Self> {
        check_variances(signal_variance, noise_variance)?;
        check_scale("length scale", length_scales[0])?;
        check_scale("length scale", length_scales[1])?;
        if !angle.is_finite() {
            return Err(Error::NonFinite("angle"));
        }
        Ok(Self {
            signal_variance,
            noise_variance,
            shape: KernelShape::EllipticExp {
                length_scales,
                angle: reduce_angle(angle),
            },
        })
    }

    pub fn multi_axis(
        signal_variance: f64,
        axes: Vec<f64>,
        groups: Vec<usize>,
        group_scales: Vec<f64>,
        noise_variance: f64,
    ) -> Result<Self> {
        check_variances(signal_variance, noise_variance)?;
        validate_multi_axis(&axes, &groups, group_scales.len())?;
        for &s in &group_scales {
            check_scale("group length scale", s)?;
        }
        Ok(Self {
            signal_variance,
            noise_variance,
            shape: KernelShape::MultiAxisExp {
                axes: axes.into_iter().map(reduce_angle).collect(),
                groups,
                group_scales,
            },
        })
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    /// Value at zero lag, `σ_s² + σ_ε²`.
    pub fn zero_lag_value(&self) -> f64 {
        self.signal_variance + self.noise_variance
    }

    /// Required lag dimension, or `None` for the isotropic kernel which
    /// accepts any dimension.
    pub fn required_dim(&self) -> Option<usize> {
        match self.shape {
            KernelShape::IsotropicExp { .. } => None,
            _ => Some(2),
        }
    }

    pub(crate) fn metric(&self) -> Metric {
        match &self.shape {
            KernelShape::IsotropicExp { length_scale } => Metric::Euclid {
                length_scale: *length_scale,
            },
            KernelShape::EllipticExp {
                length_scales: [l1, l2],
                angle,
            } => {
                if l1 == l2 {
                    Metric::Euclid { length_scale: *l1 }
                } else {
                    let a = rotation_scaled(*l1, *l2, *angle);
                    Metric::from_rows(&a)
                }
            }
            KernelShape::MultiAxisExp {
                axes,
                groups,
                group_scales,
            } => {
                let rows: Vec<[f64; 2]> = axes
                    .iter()
                    .zip(groups)
                    .map(|(&eta, &g)| axis_row(eta, group_scales[g]))
                    .collect();
                Metric::from_rows(&rows)
            }
        }
    }
}

pub(crate) fn validate_multi_axis(axes: &[f64], groups: &[usize], n_groups: usize) -> Result<()> {
    if axes.len() < 2 {
        return Err(invalid(format!("multi-axis kernel needs at least 2 axes, got {}", axes.len())));
    }
    if groups.len() != axes.len() {
        return Err(Error::DimensionMismatch {
            expected: axes.len(),
            got: groups.len(),
        });
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= n_groups) {
        return Err(invalid(format!("axis group {g} has no length scale ({n_groups} groups)")));
    }
    if axes.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("axis angle"));
    }
    Ok(())
}

fn axis_row(eta: f64, scale: f64) -> [f64; 2] {
    [eta.cos() / scale, eta.sin() / scale]
}

fn rotation_scaled(l1: f64, l2: f64, eta: f64) -> [[f64; 2]; 2] {
    let (s, c) = eta.sin_cos();
    [[c / l1, -s / l1], [s / l2, c / l2]]
}

/// `A(λ₁, λ₂, η) = diag(1/λ₁, 1/λ₂) · [[cos η, −sin η], [sin η, cos η]]`.
pub fn anisotropy_matrix(l1: f64, l2: f64, eta: f64) -> Result<[[f64; 2]; 2]> {
    check_scale("λ1", l1)?;
    check_scale("λ2", l2)?;
    if !eta.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(rotation_scaled(l1, l2, eta))
}

/// Stacked multi-axis matrix: row `r` is `(cos η_r, sin η_r) / scales[r]`.
pub fn multi_axis_matrix(axes: &[f64], scales: &[f64]) -> Result<Vec<[f64; 2]>> {
    if axes.is_empty() {
        return Err(invalid("axis list is empty"));
    }
    if scales.len() != axes.len() {
        return Err(Error::DimensionMismatch {
            expected: axes.len(),
            got: scales.len(),
        });
    }
    for &s in scales {
        check_scale("axis length scale", s)?;
    }
    if axes.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("axis angle"));
    }
    Ok(axes.iter().zip(scales).map(|(&e, &s)| axis_row(e, s)).collect())
}

/// Scaled-distance rule shared by every evaluation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Metric {
    /// `d = ‖h‖ / λ`, any dimension.
    Euclid { length_scale: f64 },
    /// `d = sqrt(m0 x² + 2 m1 x y + m2 y²)`, 2-D only.
    Quadratic { m: [f64; 3] },
}

impl Metric {
    pub(crate) fn from_rows(rows: &[[f64; 2]]) -> Self {
        let mut m = [0.0; 3];
        for r in rows {
            m[0] += r[0] * r[0];
            m[1] += r[0] * r[1];
            m[2] += r[1] * r[1];
        }
        Metric::Quadratic { m }
    }

    /// Scaled distance from the precomputed lag moments
    /// `(x², x·y, y², ‖h‖²)`.
    #[inline]
    pub(crate) fn distance(&self, xx: f64, xy: f64, yy: f64, rr: f64) -> f64 {
        match *self {
            Metric::Euclid { length_scale } => rr.sqrt() / length_scale,
            Metric::Quadratic { m } => (m[0] * xx + 2.0 * m[1] * xy + m[2] * yy).max(0.0).sqrt(),
        }
    }

    pub(crate) fn distance_lag(&self, h: &[f64]) -> f64 {
        let rr: f64 = h.iter().map(|c| c * c).sum();
        match self {
            Metric::Euclid { .. } => self.distance(0.0, 0.0, 0.0, rr),
            Metric::Quadratic { .. } => self.distance(h[0] * h[0], h[0] * h[1], h[1] * h[1], rr),
        }
    }
}

/// Kernel value at lag `h`.
pub fn eval_kernel(params: &KernelParams, lag: &LagVector) -> Result<f64> {
    if let Some(q) = params.required_dim() {
        if lag.dim() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: lag.dim(),
            });
        }
    }
    let h = lag.components();
    if h.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("lag vector"));
    }
    if lag.is_zero() {
        return Ok(params.zero_lag_value());
    }
    let d = params.metric().distance_lag(h);
    Ok(params.signal_variance * (-d).exp())
}

/// Locations `s_1..s_n` as an `n × q` row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSet {
    dim: usize,
    data: Vec<f64>,
}

impl CoordinateSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("coordinate dimension must be at least 1"));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(invalid(format!(
                "coordinate buffer of length {} is not a nonempty multiple of {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coordinates"));
        }
        Ok(Self { dim, data })
    }

    pub fn from_xy(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(2, points.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn lag(&self, i: usize, j: usize) -> Vec<f64> {
        self.point(i).iter().zip(self.point(j)).map(|(a, b)| a - b).collect()
    }

    pub fn axis(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(k).step_by(self.dim).copied()
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Keeps only the rows for which `keep` is true.
    pub(crate) fn retain_rows(&self, keep: &[bool]) -> Self {
        let data = self
            .points()
            .zip(keep)
            .filter(|(_, &k)| k)
            .flat_map(|(p, _)| p.iter().copied())
            .collect();
        Self { dim: self.dim, data }
    }

    /// Number of points that coincide exactly with an earlier point.
    pub fn duplicate_count(&self) -> usize {
        let mut rows: Vec<&[f64]> = self.points().collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        rows.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Largest pairwise Euclidean distance.
    pub fn max_distance(&self) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let d: f64 = self.lag(i, j).iter().map(|c| c * c).sum();
                best = best.max(d);
            }
        }
        best.sqrt()
    }
}

fn check_dims(coords: &CoordinateSet, params: &KernelParams) -> Result<()> {
    if let Some(q) = params.required_dim() {
        if coords.dim() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: coords.dim(),
            });
        }
    }
    Ok(())
}

/// Covariance matrix `Σ_ij = K_θ(s_i − s_j)`. The nugget sits on the diagonal
/// only, so duplicated locations share `σ_s²` off the diagonal.
pub fn covariance_matrix(coords: &CoordinateSet, params: &KernelParams) -> Result<Mat<f64>> {
    check_dims(coords, params)?;
    let pairs = PairGeometry::new(coords);
    let metric = params.metric();
    let n = coords.len();
    let mut m = Mat::<f64>::zeros(n, n);
    pairs.fill_lower(&mut m, metric, params.signal_variance, params.zero_lag_value());
    for j in 0..n {
        for i in 0..j {
            m[(i, j)] = m[(j, i)];
        }
    }
    Ok(m)
}

/// Lag moments of all pairs `i > j`, stored column by column to match the
/// lower triangle of a column-major matrix.
#[derive(Debug, Clone)]
pub(crate) struct PairGeometry {
    n: usize,
    xx: Vec<f64>,
    xy: Vec<f64>,
    yy: Vec<f64>,
    rr: Vec<f64>,
}

impl PairGeometry {
    pub(crate) fn new(coords: &CoordinateSet) -> Self {
        let n = coords.len();
        let m = n * n.saturating_sub(1) / 2;
        let two_d = coords.dim() == 2;
        let mut g = Self {
            n,
            xx: Vec::with_capacity(if two_d { m } else { 0 }),
            xy: Vec::with_capacity(if two_d { m } else { 0 }),
            yy: Vec::with_capacity(if two_d { m } else { 0 }),
            rr: Vec::with_capacity(m),
        };
        for j in 0..n {
            let pj = coords.point(j);
            for i in j + 1..n {
                let pi = coords.point(i);
                let rr: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
                g.rr.push(rr);
                if two_d {
                    let (x, y) = (pi[0] - pj[0], pi[1] - pj[1]);
                    g.xx.push(x * x);
                    g.xy.push(x * y);
                    g.yy.push(y * y);
                }
            }
        }
        g
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    pub(crate) fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.rr.iter().map(|r| r.sqrt())
    }

    /// Writes `signal·exp(−d)` below the diagonal and `diag` on it.
    pub(crate) fn fill_lower(&self, m: &mut Mat<f64>, metric: Metric, signal: f64, diag: f64) {
        let n = self.n;
        let mut k = 0;
        for j in 0..n {
            let col = m.col_as_slice_mut(j);
            col[j] = diag;
            let len = n - j - 1;
            let out = &mut col[j + 1..];
            match metric {
                Metric::Euclid { length_scale } => {
                    for (o, rr) in out.iter_mut().zip(&self.rr[k..k + len]) {
                        *o = signal * (-(rr.sqrt() / length_scale)).exp();
                    }
                }
                Metric::Quadratic { .. } => {
                    let it = self.xx[k..k + len]
                        .iter()
                        .zip(&self.xy[k..k + len])
                        .zip(&self.yy[k..k + len]);
                    for (o, ((xx, xy), yy)) in out.iter_mut().zip(it) {
                        *o = signal * (-metric.distance(*xx, *xy, *yy, 0.0)).exp();
                    }
                }
            }
            k += len;
        }
    }
}
