//! Rotational sampling test for anisotropy.
//!
//! Kernels are fit by least squares to the pair products
//! `y_ij = (z_i − μ)(z_j − μ)`. The improvement of an anisotropic fit with the
//! suspected axes over the isotropic fit is compared against the improvements
//! obtained with randomly rotated axes.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8};
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialSample;
use crate::error::{invalid, Error, Result};
use crate::field_sim::RngStream;
use crate::inference::{
    median, multistart, scale_bounds, scale_coding, AxisMode, FitPoint, KernelFamily, OptimizerConfig, ShapeSpace,
    StartKind, StartTrace,
};
use crate::kernels::{KernelParams, LagVector, Metric};
use crate::test_parametric::{collect_replicates, p_value, ObservedFits, Provenance, TestResult};

/// Pair lags and centered products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairData {
    dim: usize,
    /// Row-major, `dim` components per pair.
    lags: Vec<f64>,
    products: Vec<f64>,
    source_indices: Option<Vec<(usize, usize)>>,
}

impl PairData {
    pub fn new(lags: Vec<LagVector>, products: Vec<f64>) -> Result<Self> {
        if lags.len() != products.len() {
            return Err(Error::DimensionMismatch {
                expected: lags.len(),
                got: products.len(),
            });
        }
        let dim = lags.first().map_or(2, LagVector::dim);
        if lags.iter().any(|l| l.dim() != dim) {
            return Err(invalid("lags have mixed dimensions"));
        }
        if products.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("products"));
        }
        Ok(Self {
            dim,
            lags: lags.iter().flat_map(|l| l.components().iter().copied()).collect(),
            products,
            source_indices: None,
        })
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lag(&self, k: usize) -> &[f64] {
        &self.lags[k * self.dim..(k + 1) * self.dim]
    }

    pub fn products(&self) -> &[f64] {
        &self.products
    }

    pub fn source_indices(&self) -> Option<&[(usize, usize)]> {
        self.source_indices.as_deref()
    }

    fn is_self(&self, k: usize) -> bool {
        self.lag(k).iter().all(|&c| c == 0.0)
    }

    fn select(&self, keep: &[usize]) -> Self {
        Self {
            dim: self.dim,
            lags: keep.iter().flat_map(|&k| self.lag(k).iter().copied()).collect(),
            products: keep.iter().map(|&k| self.products[k]).collect(),
            source_indices: self.source_indices.as_ref().map(|s| keep.iter().map(|&k| s[k]).collect()),
        }
    }
}

/// All pairs `(i, j)` with `j ≥ i`: `h = s_i − s_j`, `y = (z_i − μ)(z_j − μ)`.
pub fn build_pair_data(sample: &SpatialSample, mean: f64) -> PairData {
    build_pair_data_with(sample, mean, true)
}

pub fn build_pair_data_with(sample: &SpatialSample, mean: f64, include_self: bool) -> PairData {
    let coords = sample.coords();
    let z = sample.values();
    let n = z.len();
    let dim = coords.dim();
    let cap = n * (n + 1) / 2;
    let mut lags = Vec::with_capacity(cap * dim);
    let mut products = Vec::with_capacity(cap);
    let mut idx = Vec::with_capacity(cap);
    for i in 0..n {
        let first = if include_self { i } else { i + 1 };
        for j in first..n {
            lags.extend(coords.point(i).iter().zip(coords.point(j)).map(|(a, b)| a - b));
            products.push((z[i] - mean) * (z[j] - mean));
            idx.push((i, j));
        }
    }
    PairData {
        dim,
        lags,
        products,
        source_indices: Some(idx),
    }
}

/// Uniform subsample of `cap` pairs without replacement, kept in original
/// order. Identity when there are at most `cap` pairs.
pub fn subsample_pairs(pairs: &PairData, cap: usize, stream: RngStream) -> Result<PairData> {
    if cap == 0 {
        return Err(invalid("pair subsample cap must be at least 1"));
    }
    if pairs.len() <= cap {
        return Ok(pairs.clone());
    }
    let mut keep = index::sample(&mut stream.rng(), pairs.len(), cap).into_vec();
    keep.sort_unstable();
    Ok(pairs.select(&keep))
}

/// Least-squares fit of a kernel to pair products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsFit {
    pub params: KernelParams,
    pub sse: f64,
    pub converged: bool,
    pub n_restarts_used: usize,
    pub optimizer_trace: Vec<StartTrace>,
    #[serde(skip)]
    pub(crate) point: FitPoint,
}

#[derive(Debug, Clone, Copy)]
pub enum LsWarmStart<'a> {
    Params(&'a KernelParams),
    Fit(&'a LsFit),
}

/// Pair products prepared for repeated least-squares fits.
///
/// For fixed shape the loss is quadratic in `(σ_s², σ_ε²)` and is minimized
/// in closed form, so the simplex only searches length scales and rotation.
#[derive(Debug, Clone)]
pub struct LsProblem {
    two_d: bool,
    xx: Vec<f64>,
    xy: Vec<f64>,
    yy: Vec<f64>,
    rr: Vec<f64>,
    y_off: Vec<f64>,
    y_self: Vec<f64>,
    max_distance: f64,
    median_distance: f64,
}

impl LsProblem {
    pub fn new(pairs: &PairData) -> Result<Self> {
        if pairs.is_empty() {
            return Err(invalid("no pairs to fit"));
        }
        let two_d = pairs.dim() == 2;
        let mut p = Self {
            two_d,
            xx: Vec::new(),
            xy: Vec::new(),
            yy: Vec::new(),
            rr: Vec::new(),
            y_off: Vec::new(),
            y_self: Vec::new(),
            max_distance: 0.0,
            median_distance: 1.0,
        };
        for k in 0..pairs.len() {
            let y = pairs.products[k];
            if pairs.is_self(k) {
                p.y_self.push(y);
                continue;
            }
            let h = pairs.lag(k);
            p.rr.push(h.iter().map(|c| c * c).sum());
            if two_d {
                p.xx.push(h[0] * h[0]);
                p.xy.push(h[0] * h[1]);
                p.yy.push(h[1] * h[1]);
            }
            p.y_off.push(y);
        }
        let dists: Vec<f64> = p.rr.iter().map(|r| r.sqrt()).collect();
        p.max_distance = dists.iter().copied().fold(0.0, f64::max);
        p.median_distance = median(dists).unwrap_or(1.0);
        Ok(p)
    }

    fn kernel_values(&self, metric: Metric, out: &mut Vec<f64>) {
        out.clear();
        match metric {
            Metric::Euclid { length_scale } => out.extend(self.rr.iter().map(|rr| (-(rr.sqrt() / length_scale)).exp())),
            Metric::Quadratic { .. } => out.extend(
                self.xx
                    .iter()
                    .zip(&self.xy)
                    .zip(&self.yy)
                    .map(|((xx, xy), yy)| (-metric.distance(*xx, *xy, *yy, 0.0)).exp()),
            ),
        }
    }

    /// Optimal variances and residual sum of squares for unit-signal kernel
    /// values `k` at the off-diagonal pairs.
    fn profile(&self, k: &[f64]) -> (f64, f64, f64) {
        let syk: f64 = self.y_off.iter().zip(k).map(|(y, k)| y * k).sum();
        let skk: f64 = k.iter().map(|k| k * k).sum();
        let n_self = self.y_self.len() as f64;
        let sum_self: f64 = self.y_self.iter().sum();
        let tiny = f64::MIN_POSITIVE.sqrt();
        let (mut s, mut e) = if skk > 0.0 { (syk / skk, 0.0) } else { (tiny, 0.0) };
        if n_self > 0.0 {
            let mean_self = sum_self / n_self;
            if mean_self - s >= 0.0 {
                e = mean_self - s;
            } else {
                s = (syk + sum_self) / (skk + n_self);
            }
        }
        if !(s > tiny) {
            s = tiny;
            if n_self > 0.0 {
                e = (sum_self / n_self - s).max(0.0);
            }
        }
        let off: f64 = self.y_off.iter().zip(k).map(|(y, k)| (y - s * k).powi(2)).sum();
        let on: f64 = self.y_self.iter().map(|y| (y - s - e).powi(2)).sum();
        (off + on, s, e)
    }

    fn space(&self, family: &KernelFamily, mode: &AxisMode, cfg: &OptimizerConfig) -> Result<ShapeSpace> {
        if family != &KernelFamily::Isotropic && !self.two_d {
            return Err(Error::DimensionMismatch { expected: 2, got: 1 });
        }
        ShapeSpace::resolve(family, mode, scale_coding(cfg.parameterization), scale_bounds(self.max_distance))
    }

    fn embed(&self, space: &ShapeSpace, warm: LsWarmStart<'_>, cfg: &OptimizerConfig) -> Result<Vec<f64>> {
        let coding = scale_coding(cfg.parameterization);
        match warm {
            LsWarmStart::Fit(f) if f.point.coding.map(scale_coding) == Some(coding) => {
                match space.embed_point(&f.point, coding) {
                    Some(x) => Ok(x),
                    None => space.embed_params(&f.params),
                }
            }
            LsWarmStart::Fit(f) => space.embed_params(&f.params),
            LsWarmStart::Params(p) => space.embed_params(p),
        }
    }

    /// Minimizes the squared error of `family` against the products.
    pub fn fit(
        &self,
        family: &KernelFamily,
        mode: &AxisMode,
        cfg: &OptimizerConfig,
        warm: &[LsWarmStart<'_>],
        stream: RngStream,
    ) -> Result<LsFit> {
        let space = self.space(family, mode, cfg)?;
        let (lower, upper) = space.bounds();
        let mut starts: Vec<(StartKind, Vec<f64>)> = Vec::new();
        for w in warm {
            starts.push((StartKind::Warm, self.embed(&space, *w, cfg)?));
        }
        let moment = space.moment_start(self.median_distance);
        let mut rng = stream.rng();
        starts.push((StartKind::Moment, moment.clone()));
        for _ in 0..cfg.random_starts {
            starts.push((StartKind::Random, space.perturb(&moment, &mut rng)));
        }
        let mut k = Vec::with_capacity(self.y_off.len());
        let objective = |x: &[f64]| match space.metric(x) {
            Ok(metric) => {
                self.kernel_values(metric, &mut k);
                self.profile(&k).0
            }
            Err(_) => f64::INFINITY,
        };
        let (best, traces) = multistart(objective, &starts, |x| space.steps(x), &lower, &upper, &cfg.nelder_mead);
        let best = best.ok_or(Error::OptimizationFailed { starts: starts.len() })?;
        let mut k = Vec::with_capacity(self.y_off.len());
        self.kernel_values(space.metric(&best.x)?, &mut k);
        let (sse, s, e) = self.profile(&k);
        Ok(LsFit {
            params: space.params(&best.x, s, e)?,
            sse,
            converged: best.converged || traces.iter().any(|t| t.converged && t.objective == best.f),
            n_restarts_used: starts.len(),
            optimizer_trace: traces,
            point: FitPoint {
                isotropic: space.is_isotropic(),
                coding: Some(cfg.parameterization),
                shape: best.x,
                variance: Vec::new(),
            },
        })
    }

    /// Squared error at fixed parameters.
    pub fn sse_at(&self, params: &KernelParams) -> f64 {
        let mut k = Vec::with_capacity(self.y_off.len());
        self.kernel_values(params.metric(), &mut k);
        let s = params.signal_variance();
        let z = params.zero_lag_value();
        let off: f64 = self.y_off.iter().zip(&k).map(|(y, k)| (y - s * k).powi(2)).sum();
        let on: f64 = self.y_self.iter().map(|y| (y - z).powi(2)).sum();
        off + on
    }
}

pub fn ls_fit(
    pairs: &PairData,
    family: &KernelFamily,
    mode: &AxisMode,
    cfg: &OptimizerConfig,
    warm_start: Option<&KernelParams>,
    stream: RngStream,
) -> Result<LsFit> {
    let warm: Vec<LsWarmStart<'_>> = warm_start.map(LsWarmStart::Params).into_iter().collect();
    LsProblem::new(pairs)?.fit(family, mode, cfg, &warm, stream)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationalConfig {
    /// Suspected axis direction; the alternative uses the family axes
    /// rotated by `eta` (`{η, η + π/2}` for the elliptic family).
    pub eta: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub pair_subsample: Option<usize>,
    /// Lets the axes move within `±range_halfwidth` of their specified
    /// directions.
    pub range_halfwidth: Option<f64>,
    pub include_self_pairs: bool,
    pub family: KernelFamily,
}

impl Default for RotationalConfig {
    fn default() -> Self {
        Self {
            eta: 0.0,
            alpha: std::f64::consts::PI / 36.0,
            b: 200,
            pair_subsample: Some(10_000),
            range_halfwidth: None,
            include_self_pairs: true,
            family: KernelFamily::Elliptic,
        }
    }
}

impl RotationalConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() {
            return Err(Error::NonFinite("eta"));
        }
        if !(0.0..FRAC_PI_4).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0, π/4), got {}", self.alpha)));
        }
        if self.b == 0 {
            return Err(invalid("B must be at least 1"));
        }
        if self.pair_subsample == Some(0) {
            return Err(invalid("pair subsample cap must be at least 1"));
        }
        if self.family == KernelFamily::Isotropic {
            return Err(invalid("the alternative family must be anisotropic"));
        }
        if let Some(hw) = self.range_halfwidth {
            if self.alpha >= FRAC_PI_8 {
                return Err(invalid(format!("range mode needs alpha < π/8, got {}", self.alpha)));
            }
            ShapeSpace::resolve(
                &self.family,
                &self.alt_mode_at(self.eta, hw),
                crate::inference::ScaleCoding::Log,
                (1.0, 2.0),
            )?;
        }
        self.resolve_axes(self.eta).map(|_| ())
    }

    fn base_axes(&self) -> Vec<f64> {
        match &self.family {
            KernelFamily::MultiAxis { axes, .. } => axes.clone(),
            _ => vec![0.0, FRAC_PI_2],
        }
    }

    fn resolve_axes(&self, eta: f64) -> Result<Vec<f64>> {
        let axes: Vec<f64> = self.base_axes().iter().map(|a| a + eta).collect();
        ShapeSpace::resolve(
            &self.family,
            &AxisMode::Fixed(axes.clone()),
            crate::inference::ScaleCoding::Log,
            (1.0, 2.0),
        )?;
        Ok(axes)
    }

    fn alt_mode_at(&self, eta: f64, half_width: f64) -> AxisMode {
        let centers: Vec<f64> = self.base_axes().iter().map(|a| a + eta).collect();
        if half_width > 0.0 {
            AxisMode::Range { centers, half_width }
        } else {
            AxisMode::Fixed(centers)
        }
    }

    /// Interval from which rotated axis directions are drawn.
    pub fn sampling_interval(&self) -> (f64, f64) {
        let a = if self.range_halfwidth.is_some() {
            2.0 * self.alpha
        } else {
            self.alpha
        };
        (self.eta + a, self.eta + FRAC_PI_2 - a)
    }

    pub fn sample_axis<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.sampling_interval();
        lo + (hi - lo) * rng.random::<f64>()
    }
}

/// Observed streams are children of child stream 0: the pair subsample uses
/// child 0, the isotropic fit child 1 and the anisotropic fit child 2.
/// Replicate `b` uses child stream `b`.
pub fn rotational_test(
    sample: &SpatialSample,
    cfg: &RotationalConfig,
    opt: &OptimizerConfig,
    stream: RngStream,
) -> Result<TestResult> {
    cfg.validate()?;
    let start = Instant::now();
    let obs = stream.substream(0);
    let all = build_pair_data_with(sample, sample.working_mean(), cfg.include_self_pairs);
    let pairs = match cfg.pair_subsample {
        Some(cap) => subsample_pairs(&all, cap, obs.substream(0))?,
        None => all,
    };
    let problem = LsProblem::new(&pairs)?;

    let iso = problem.fit(&KernelFamily::Isotropic, &AxisMode::Free(0), opt, &[], obs.substream(1))?;
    let hw = cfg.range_halfwidth.unwrap_or(0.0);
    let alt = problem.fit(
        &cfg.family,
        &cfg.alt_mode_at(cfg.eta, hw),
        opt,
        &[LsWarmStart::Fit(&iso)],
        obs.substream(2),
    )?;
    let phi = iso.sse - alt.sse;
    let rotated_hw = if cfg.range_halfwidth.is_some() { cfg.alpha } else { 0.0 };

    let results: Vec<Result<f64>> = (1..=cfg.b as u64)
        .into_par_iter()
        .map(|id| {
            let rep = stream.substream(id);
            let eta_b = cfg.sample_axis(&mut rep.substream(0).rng());
            let fit = problem.fit(
                &cfg.family,
                &cfg.alt_mode_at(eta_b, rotated_hw),
                opt,
                &[LsWarmStart::Fit(&iso), LsWarmStart::Fit(&alt)],
                rep.substream(1),
            )?;
            Ok(iso.sse - fit.sse)
        })
        .collect();
    let (phis, failed) = collect_replicates(results)?;
    let p = p_value(phi, &phis)?;
    Ok(TestResult {
        algorithm: "rotational_sampling".into(),
        statistic: "sse_reduction".into(),
        phi_observed: phi,
        b: phis.len(),
        phi_resampled: phis,
        p_value: p,
        fits: ObservedFits::LeastSquares { null: iso, alt },
        provenance: Provenance {
            seed: stream.seed,
            stream_id: stream.stream_id,
            requested_b: cfg.b,
            failed_replicates: failed,
            null_jitter: 0.0,
            runtime: start.elapsed(),
        },
    })
}
