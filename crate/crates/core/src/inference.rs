//! Gaussian log-likelihood and maximum-likelihood fitting of exponential
//! kernels under a kernel family and an axis constraint.
//!
//! Fits run a multi-start box-constrained Nelder–Mead over log length scales,
//! an optional axis rotation, and variance coordinates. In the default
//! [`Parameterization::Profiled`] mode the signal variance is profiled out
//! analytically: with `Σ = σ_s²(C + g·I)` the maximizing `σ_s²` is
//! `rᵀ(C + gI)⁻¹r / n`, so the simplex only searches shape and the
//! noise-to-signal ratio `g`.

use std::f64::consts::{FRAC_PI_2, PI};

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialSample;
use crate::error::{invalid, Error, Result};
use crate::field_sim::RngStream;
use crate::kernels::{reduce_angle, validate_multi_axis, CoordinateSet, KernelParams, KernelShape, Metric, PairGeometry};
use crate::linalg::CholeskyFactor;
use crate::optimize::{nelder_mead, NelderMeadConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Kernel family of one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelFamily {
    Isotropic,
    /// Two perpendicular axes with one length scale each.
    Elliptic,
    /// Arbitrary axes; `groups[r]` names the length-scale group of axis `r`.
    MultiAxis {
        axes: Vec<f64>,
        groups: Vec<usize>,
        n_groups: usize,
    },
}

impl KernelFamily {
    /// The four-axis layout with `{0, π/2}` sharing one scale and
    /// `{π/4, 3π/4}` sharing another.
    pub fn diagonal_vs_cardinal() -> Self {
        KernelFamily::MultiAxis {
            axes: vec![0.0, FRAC_PI_2, PI / 4.0, 3.0 * PI / 4.0],
            groups: vec![0, 0, 1, 1],
            n_groups: 2,
        }
    }

    pub fn n_axes(&self) -> usize {
        match self {
            KernelFamily::Isotropic => 0,
            KernelFamily::Elliptic => 2,
            KernelFamily::MultiAxis { axes, .. } => axes.len(),
        }
    }
}

/// How the anisotropy axes of the alternative are constrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisMode {
    /// Axes held at the given direction angles.
    Fixed(Vec<f64>),
    /// `R` axes whose common orientation is estimated over `[0, π)`.
    Free(usize),
    /// Axes may rotate rigidly within `±half_width` of `centers`.
    Range { centers: Vec<f64>, half_width: f64 },
}

/// Null and alternative kernel families with the alternative's axis
/// constraint. The null is always the isotropic family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisPair {
    pub null_family: KernelFamily,
    pub alt_family: KernelFamily,
    pub axis_mode: AxisMode,
}

impl HypothesisPair {
    pub fn new(alt_family: KernelFamily, axis_mode: AxisMode) -> Result<Self> {
        let pair = Self {
            null_family: KernelFamily::Isotropic,
            alt_family,
            axis_mode,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Elliptic alternative with axes fixed at `{η, η + π/2}`.
    pub fn elliptic_fixed(eta: f64) -> Self {
        Self {
            null_family: KernelFamily::Isotropic,
            alt_family: KernelFamily::Elliptic,
            axis_mode: AxisMode::Fixed(vec![eta, eta + FRAC_PI_2]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.null_family != KernelFamily::Isotropic {
            return Err(invalid("the null family must be isotropic"));
        }
        if self.alt_family == KernelFamily::Isotropic {
            return Err(invalid("the alternative family must be anisotropic"));
        }
        ShapeSpace::resolve(&self.alt_family, &self.axis_mode, ScaleCoding::Log, (1e-3, 1e3)).map(|_| ())
    }
}

/// Coordinates the simplex works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `(ln λ.., ω, ln g)` with `σ_s²` profiled out.
    Profiled,
    /// `(ln λ.., ω, ln σ_s², ln σ_ε²)`.
    LogScale,
    /// `(λ.., ω, σ_s², σ_ε²)` with positivity bounds.
    RawScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Randomized perturbations of the moment-based start.
    pub random_starts: usize,
    pub nelder_mead: NelderMeadConfig,
    pub parameterization: Parameterization,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            random_starts: 3,
            nelder_mead: NelderMeadConfig::default(),
            parameterization: Parameterization::Profiled,
        }
    }
}

impl OptimizerConfig {
    /// Warm and moment-based starts only.
    pub fn deterministic_starts() -> Self {
        Self {
            random_starts: 0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Warm,
    Moment,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub kind: StartKind,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Optimizer coordinates of a fit, kept so a nested fit can start from the
/// exact same point.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct FitPoint {
    pub(crate) isotropic: bool,
    pub(crate) coding: Option<Parameterization>,
    pub(crate) shape: Vec<f64>,
    pub(crate) variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: KernelParams,
    pub log_likelihood: f64,
    pub mean: f64,
    pub converged: bool,
    pub n_restarts_used: usize,
    pub optimizer_trace: Vec<StartTrace>,
    #[serde(skip)]
    pub(crate) point: FitPoint,
}

/// A warm start: either bare parameters or a previous fit.
#[derive(Debug, Clone, Copy)]
pub enum WarmStart<'a> {
    Params(&'a KernelParams),
    Fit(&'a FitResult),
}

/// `−(n/2)ln 2π − ½ ln det Σ − ½ (z − μ𝟙)ᵀ Σ⁻¹ (z − μ𝟙)` through a
/// Cholesky factor.
pub fn log_likelihood(z: &[f64], mean: f64, cov: &Mat<f64>) -> Result<f64> {
    if cov.nrows() != z.len() || cov.ncols() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: cov.nrows(),
        });
    }
    let factor = CholeskyFactor::new(cov)?;
    let r: Vec<f64> = z.iter().map(|v| v - mean).collect();
    Ok(gaussian_ll(&factor, &r))
}

fn gaussian_ll(factor: &CholeskyFactor, r: &[f64]) -> f64 {
    let n = r.len() as f64;
    -0.5 * (n * LN_2PI + factor.log_det() + factor.quad_form(r))
}

pub fn estimate_mean(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(invalid("cannot estimate the mean of an empty vector"));
    }
    Ok(z.iter().sum::<f64>() / z.len() as f64)
}

/// Population variance; zero for constant data.
pub(crate) fn variance(z: &[f64], mean: f64) -> f64 {
    z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / z.len() as f64
}

pub(crate) fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ScaleCoding {
    Log,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Rotation {
    None,
    Free,
    Bounded(f64, f64),
}

/// Kernel-shape search space: length scales and optional rigid axis
/// rotation `ω` applied to `base` axis directions.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ShapeSpace {
    kind: ShapeKind,
    coding: ScaleCoding,
    scale_bounds: (f64, f64),
    rotation: Rotation,
}

#[derive(Debug, Clone, PartialEq)]
enum ShapeKind {
    Isotropic,
    Axes {
        elliptic: bool,
        base: Vec<f64>,
        groups: Vec<usize>,
        n_groups: usize,
    },
}

/// Largest rotation half-width that keeps the ranges of neighboring axes
/// disjoint.
fn max_half_width(axes: &[f64]) -> f64 {
    let mut a: Vec<f64> = axes.iter().map(|&x| reduce_angle(x)).collect();
    a.sort_by(f64::total_cmp);
    let mut gap = PI - (a[a.len() - 1] - a[0]);
    for w in a.windows(2) {
        gap = gap.min(w[1] - w[0]);
    }
    gap / 2.0
}

fn same_direction(a: f64, b: f64) -> bool {
    let d = reduce_angle(a - b);
    d < 1e-9 || PI - d < 1e-9
}

impl ShapeSpace {
    pub(crate) fn resolve(
        family: &KernelFamily,
        mode: &AxisMode,
        coding: ScaleCoding,
        scale_bounds: (f64, f64),
    ) -> Result<Self> {
        let (elliptic, family_axes, groups, n_groups) = match family {
            KernelFamily::Isotropic => {
                return Ok(Self {
                    kind: ShapeKind::Isotropic,
                    coding,
                    scale_bounds,
                    rotation: Rotation::None,
                })
            }
            KernelFamily::Elliptic => (true, vec![0.0, FRAC_PI_2], vec![0, 1], 2),
            KernelFamily::MultiAxis { axes, groups, n_groups } => {
                validate_multi_axis(axes, groups, *n_groups)?;
                (false, axes.clone(), groups.clone(), *n_groups)
            }
        };
        let r = family_axes.len();
        let check_len = |len: usize| {
            if len == r {
                Ok(())
            } else {
                Err(invalid(format!("axis mode lists {len} axes but the family has {r}")))
            }
        };
        let check_perpendicular = |angles: &[f64]| {
            if elliptic && !same_direction(angles[1], angles[0] + FRAC_PI_2) {
                Err(invalid("elliptic axes must be perpendicular"))
            } else {
                Ok(())
            }
        };
        let (base, rotation) = match mode {
            AxisMode::Fixed(angles) => {
                check_len(angles.len())?;
                check_perpendicular(angles)?;
                let base = if elliptic {
                    vec![angles[0], angles[0] + FRAC_PI_2]
                } else {
                    angles.clone()
                };
                (base, Rotation::None)
            }
            AxisMode::Free(count) => {
                check_len(*count)?;
                (family_axes, Rotation::Free)
            }
            AxisMode::Range { centers, half_width } => {
                check_len(centers.len())?;
                check_perpendicular(centers)?;
                let hw = *half_width;
                if !(hw.is_finite() && hw >= 0.0) {
                    return Err(invalid(format!("range half-width must be nonnegative, got {hw}")));
                }
                let base = if elliptic {
                    vec![centers[0], centers[0] + FRAC_PI_2]
                } else {
                    centers.clone()
                };
                if hw >= max_half_width(&base) {
                    return Err(invalid(format!(
                        "range half-width {hw} lets neighboring axis ranges overlap (limit {})",
                        max_half_width(&base)
                    )));
                }
                let rot = if hw == 0.0 {
                    Rotation::None
                } else {
                    Rotation::Bounded(-hw, hw)
                };
                (base, rot)
            }
        };
        if base.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("axis angle"));
        }
        Ok(Self {
            kind: ShapeKind::Axes {
                elliptic,
                base,
                groups,
                n_groups,
            },
            coding,
            scale_bounds,
            rotation,
        })
    }

    pub(crate) fn is_isotropic(&self) -> bool {
        self.kind == ShapeKind::Isotropic
    }

    fn n_scales(&self) -> usize {
        match &self.kind {
            ShapeKind::Isotropic => 1,
            ShapeKind::Axes { n_groups, .. } => *n_groups,
        }
    }

    fn has_rotation(&self) -> bool {
        self.rotation != Rotation::None
    }

    pub(crate) fn dim(&self) -> usize {
        self.n_scales() + usize::from(self.has_rotation())
    }

    fn encode_scale(&self, lambda: f64) -> f64 {
        match self.coding {
            ScaleCoding::Log => lambda.ln(),
            ScaleCoding::Raw => lambda,
        }
    }

    fn decode_scale(&self, x: f64) -> f64 {
        match self.coding {
            ScaleCoding::Log => x.exp(),
            ScaleCoding::Raw => x,
        }
    }

    pub(crate) fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.scale_bounds;
        let mut lower = vec![self.encode_scale(lo); self.n_scales()];
        let mut upper = vec![self.encode_scale(hi); self.n_scales()];
        match self.rotation {
            Rotation::None => {}
            Rotation::Free => {
                lower.push(f64::NEG_INFINITY);
                upper.push(f64::INFINITY);
            }
            Rotation::Bounded(a, b) => {
                lower.push(a);
                upper.push(b);
            }
        }
        (lower, upper)
    }

    pub(crate) fn steps(&self, x0: &[f64]) -> Vec<f64> {
        let mut steps: Vec<f64> = x0[..self.n_scales()]
            .iter()
            .map(|&v| match self.coding {
                ScaleCoding::Log => 0.5,
                ScaleCoding::Raw => 0.5 * v.abs().max(1e-12),
            })
            .collect();
        match self.rotation {
            Rotation::None => {}
            Rotation::Free => steps.push(PI / 8.0),
            Rotation::Bounded(a, b) => steps.push((b - a) / 4.0),
        }
        steps
    }

    pub(crate) fn moment_start(&self, length_scale: f64) -> Vec<f64> {
        let mut x = vec![self.encode_scale(length_scale.clamp(self.scale_bounds.0, self.scale_bounds.1)); self.n_scales()];
        if self.has_rotation() {
            x.push(0.0);
        }
        x
    }

    pub(crate) fn perturb<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out = x.to_vec();
        for v in out[..self.n_scales()].iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v = match self.coding {
                ScaleCoding::Log => *v + 0.5 * e,
                ScaleCoding::Raw => *v * (0.5 * e).exp(),
            };
        }
        match self.rotation {
            Rotation::None => {}
            Rotation::Free => *out.last_mut().unwrap() = rng.random::<f64>() * PI,
            Rotation::Bounded(a, b) => *out.last_mut().unwrap() = a + (b - a) * rng.random::<f64>(),
        }
        out
    }

    fn rotation_of(&self, x: &[f64]) -> f64 {
        if self.has_rotation() {
            x[self.n_scales()]
        } else {
            0.0
        }
    }

    /// Kernel parameters for shape point `x` with the given variances.
    pub(crate) fn params(&self, x: &[f64], signal: f64, noise: f64) -> Result<KernelParams> {
        match &self.kind {
            ShapeKind::Isotropic => KernelParams::isotropic(signal, self.decode_scale(x[0]), noise),
            ShapeKind::Axes {
                elliptic,
                base,
                groups,
                n_groups,
            } => {
                let omega = self.rotation_of(x);
                let scales: Vec<f64> = x[..*n_groups].iter().map(|&v| self.decode_scale(v)).collect();
                if *elliptic {
                    // The λ₁ axis of diag(1/λ₁, 1/λ₂)·R(η) points along −η.
                    let direction = base[0] + omega;
                    KernelParams::elliptic(signal, [scales[0], scales[1]], -direction, noise)
                } else {
                    let axes = base.iter().map(|b| b + omega).collect();
                    KernelParams::multi_axis(signal, axes, groups.clone(), scales, noise)
                }
            }
        }
    }

    pub(crate) fn metric(&self, x: &[f64]) -> Result<Metric> {
        Ok(self.params(x, 1.0, 0.0)?.metric())
    }

    /// Ratio `c` such that equal group scales `c·λ` reproduce the isotropic
    /// metric `‖h‖/λ` (exact when the axis layout is balanced).
    fn isotropic_scale_ratio(&self) -> f64 {
        match &self.kind {
            ShapeKind::Isotropic => 1.0,
            ShapeKind::Axes { elliptic: true, .. } => 1.0,
            ShapeKind::Axes { base, .. } => (base.len() as f64 / 2.0).sqrt(),
        }
    }

    fn rotation_start(&self, omega: f64) -> f64 {
        match self.rotation {
            Rotation::None => 0.0,
            Rotation::Free => reduce_angle(omega),
            Rotation::Bounded(a, b) => {
                let mut w = reduce_angle(omega);
                if w > FRAC_PI_2 {
                    w -= PI;
                }
                w.clamp(a, b)
            }
        }
    }

    /// Shape coordinates reproducing a fitted point from another space.
    pub(crate) fn embed_point(&self, src: &FitPoint, src_coding: ScaleCoding) -> Option<Vec<f64>> {
        if src_coding != self.coding {
            return None;
        }
        if src.isotropic {
            let c = self.isotropic_scale_ratio();
            let s = src.shape[0];
            let scale = if c == 1.0 {
                s
            } else {
                self.encode_scale(self.decode_scale(s) * c)
            };
            let mut x = vec![scale; self.n_scales()];
            if self.has_rotation() {
                x.push(self.rotation_start(0.0));
            }
            Some(x)
        } else if !self.is_isotropic() && src.shape.len() >= self.n_scales() {
            let mut x = src.shape[..self.n_scales()].to_vec();
            if self.has_rotation() {
                let omega = src.shape.get(self.n_scales()).copied().unwrap_or(0.0);
                x.push(self.rotation_start(omega));
            }
            Some(x)
        } else {
            None
        }
    }

    /// Shape coordinates of arbitrary parameters.
    pub(crate) fn embed_params(&self, p: &KernelParams) -> Result<Vec<f64>> {
        let mismatch = || invalid("warm start is not nested in the fitted family");
        match (&self.kind, p.shape()) {
            (ShapeKind::Isotropic, KernelShape::IsotropicExp { length_scale }) => Ok(vec![self.encode_scale(*length_scale)]),
            (ShapeKind::Isotropic, KernelShape::EllipticExp { length_scales: [a, b], .. }) if a == b => {
                Ok(vec![self.encode_scale(*a)])
            }
            (ShapeKind::Isotropic, _) => Err(mismatch()),
            (ShapeKind::Axes { .. }, KernelShape::IsotropicExp { length_scale }) => {
                let s = self.encode_scale(length_scale * self.isotropic_scale_ratio());
                let mut x = vec![s; self.n_scales()];
                if self.has_rotation() {
                    x.push(self.rotation_start(0.0));
                }
                Ok(x)
            }
            (ShapeKind::Axes { elliptic: true, base, .. }, KernelShape::EllipticExp { length_scales, angle }) => {
                let mut x = vec![self.encode_scale(length_scales[0]), self.encode_scale(length_scales[1])];
                if self.has_rotation() {
                    x.push(self.rotation_start(-angle - base[0]));
                }
                Ok(x)
            }
            (
                ShapeKind::Axes {
                    elliptic: false,
                    base,
                    n_groups,
                    ..
                },
                KernelShape::MultiAxisExp { axes, group_scales, .. },
            ) if group_scales.len() == *n_groups => {
                let mut x: Vec<f64> = group_scales.iter().map(|&s| self.encode_scale(s)).collect();
                if self.has_rotation() {
                    x.push(self.rotation_start(axes[0] - base[0]));
                }
                Ok(x)
            }
            _ => Err(mismatch()),
        }
    }
}

/// Bounds on length scales relative to the spatial extent of the data.
pub(crate) fn scale_coding(p: Parameterization) -> ScaleCoding {
    if p == Parameterization::RawScale {
        ScaleCoding::Raw
    } else {
        ScaleCoding::Log
    }
}

pub(crate) fn scale_bounds(max_distance: f64) -> (f64, f64) {
    let d = if max_distance > 0.0 && max_distance.is_finite() {
        max_distance
    } else {
        1.0
    };
    (1e-4 * d, 1e4 * d)
}

pub(crate) struct Candidate {
    pub(crate) x: Vec<f64>,
    pub(crate) f: f64,
    pub(crate) converged: bool,
}

/// Runs Nelder–Mead from every start and keeps the best point. A warm start
/// is also kept as a candidate exactly as given.
pub(crate) fn multistart<F>(
    mut objective: F,
    starts: &[(StartKind, Vec<f64>)],
    steps: impl Fn(&[f64]) -> Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    nm: &NelderMeadConfig,
) -> (Option<Candidate>, Vec<StartTrace>)
where
    F: FnMut(&[f64]) -> f64,
{
    let mut best: Option<Candidate> = None;
    let mut traces = Vec::with_capacity(starts.len());
    let consider = |c: Candidate, best: &mut Option<Candidate>| {
        if c.f.is_finite() && best.as_ref().is_none_or(|b| c.f < b.f) {
            *best = Some(c);
        }
    };
    for (kind, x0) in starts {
        if *kind == StartKind::Warm {
            let f = objective(x0);
            consider(
                Candidate {
                    x: x0.clone(),
                    f,
                    converged: false,
                },
                &mut best,
            );
        }
        let m = nelder_mead(&mut objective, x0, &steps(x0), lower, upper, nm);
        traces.push(StartTrace {
            kind: *kind,
            objective: m.f,
            iterations: m.iterations,
            evaluations: m.evaluations,
            converged: m.converged,
        });
        consider(
            Candidate {
                x: m.x,
                f: m.f,
                converged: m.converged,
            },
            &mut best,
        );
    }
    (best, traces)
}

/// Precomputed geometry of one coordinate set, reusable across fits of
/// different value vectors (e.g. bootstrap replicates).
#[derive(Debug, Clone)]
pub struct MleProblem {
    coords: CoordinateSet,
    geometry: PairGeometry,
    max_distance: f64,
    median_distance: f64,
}

impl MleProblem {
    pub fn new(coords: &CoordinateSet) -> Self {
        let geometry = PairGeometry::new(coords);
        let dists: Vec<f64> = geometry.distances().collect();
        let max_distance = dists.iter().copied().fold(0.0, f64::max);
        let median_distance = median(dists.into_iter().filter(|&d| d > 0.0).collect()).unwrap_or(1.0);
        Self {
            coords: coords.clone(),
            geometry,
            max_distance,
            median_distance,
        }
    }

    pub fn coords(&self) -> &CoordinateSet {
        &self.coords
    }

    pub fn n(&self) -> usize {
        self.geometry.n()
    }

    fn space(&self, family: &KernelFamily, mode: &AxisMode, param: Parameterization) -> Result<ShapeSpace> {
        if family != &KernelFamily::Isotropic && self.coords.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: self.coords.dim(),
            });
        }
        ShapeSpace::resolve(family, mode, scale_coding(param), scale_bounds(self.max_distance))
    }

    /// Log-likelihood and variances at optimizer point `x`.
    fn evaluate(
        &self,
        space: &ShapeSpace,
        param: Parameterization,
        resid: &[f64],
        x: &[f64],
    ) -> Option<(f64, f64, f64)> {
        let (shape, var) = x.split_at(space.dim());
        let metric = space.metric(shape).ok()?;
        let n = self.n();
        match param {
            Parameterization::Profiled => {
                let g = var[0].exp();
                let factor = CholeskyFactor::from_fill(n, |m| self.geometry.fill_lower(m, metric, 1.0, 1.0 + g)).ok()?;
                let q = factor.quad_form(resid);
                let s2 = q / n as f64;
                if !(s2 > 0.0 && s2.is_finite()) {
                    return None;
                }
                let nf = n as f64;
                let ll = -0.5 * (nf * (LN_2PI + 1.0 + s2.ln()) + factor.log_det());
                ll.is_finite().then_some((ll, s2, s2 * g))
            }
            Parameterization::LogScale | Parameterization::RawScale => {
                let (s2, e2) = if param == Parameterization::LogScale {
                    (var[0].exp(), var[1].exp())
                } else {
                    (var[0], var[1])
                };
                if !(s2 > 0.0 && e2 >= 0.0) {
                    return None;
                }
                let factor = CholeskyFactor::from_fill(n, |m| self.geometry.fill_lower(m, metric, s2, s2 + e2)).ok()?;
                let ll = gaussian_ll(&factor, resid);
                ll.is_finite().then_some((ll, s2, e2))
            }
        }
    }

    fn variance_bounds(param: Parameterization, var_z: f64) -> (Vec<f64>, Vec<f64>) {
        match param {
            Parameterization::Profiled => (vec![1e-8f64.ln()], vec![1e8f64.ln()]),
            Parameterization::LogScale => (vec![(1e-8 * var_z).ln(); 2], vec![(1e8 * var_z).ln(); 2]),
            Parameterization::RawScale => (vec![1e-8 * var_z; 2], vec![1e8 * var_z; 2]),
        }
    }

    fn encode_variances(param: Parameterization, signal: f64, noise: f64, var_z: f64) -> Vec<f64> {
        let floor = 1e-8 * var_z;
        match param {
            Parameterization::Profiled => vec![(noise.max(floor) / signal).max(1e-8).ln()],
            Parameterization::LogScale => vec![signal.ln(), noise.max(floor).ln()],
            Parameterization::RawScale => vec![signal, noise.max(floor)],
        }
    }

    fn variance_steps(param: Parameterization, var_x: &[f64]) -> Vec<f64> {
        match param {
            Parameterization::RawScale => var_x.iter().map(|v| 0.5 * v.abs().max(1e-12)).collect(),
            _ => vec![0.5; var_x.len()],
        }
    }

    /// Log-likelihood of `z` at `params`, computed along the same path the
    /// optimizer uses.
    pub fn log_likelihood_at(&self, z: &[f64], mean: f64, params: &KernelParams) -> Result<f64> {
        let cov = crate::kernels::covariance_matrix(&self.coords, params)?;
        log_likelihood(z, mean, &cov)
    }

    /// Maximum-likelihood fit of `family` to values `z` with the mean held
    /// at `mean`.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        &self,
        z: &[f64],
        mean: f64,
        family: &KernelFamily,
        mode: &AxisMode,
        cfg: &OptimizerConfig,
        warm: Option<WarmStart<'_>>,
        stream: RngStream,
    ) -> Result<FitResult> {
        let n = self.n();
        if z.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: z.len() });
        }
        if z.iter().any(|v| !v.is_finite()) || !mean.is_finite() {
            return Err(Error::NonFinite("observations"));
        }
        let param = cfg.parameterization;
        let space = self.space(family, mode, param)?;
        let resid: Vec<f64> = z.iter().map(|v| v - mean).collect();
        let var_z = {
            let v = variance(z, mean);
            if v > 0.0 {
                v
            } else {
                1.0
            }
        };

        let (mut lower, mut upper) = space.bounds();
        let (vl, vu) = Self::variance_bounds(param, var_z);
        lower.extend(vl);
        upper.extend(vu);

        let mut starts: Vec<(StartKind, Vec<f64>)> = Vec::new();
        if let Some(w) = warm {
            let x = match w {
                WarmStart::Fit(f) if f.point.coding == Some(param) => {
                    space.embed_point(&f.point, scale_coding(param)).map(|mut s| {
                        s.extend(&f.point.variance);
                        s
                    })
                }
                _ => None,
            };
            let x = match x {
                Some(x) => x,
                None => {
                    let p = match w {
                        WarmStart::Params(p) => p,
                        WarmStart::Fit(f) => &f.params,
                    };
                    let mut s = space.embed_params(p)?;
                    s.extend(Self::encode_variances(param, p.signal_variance(), p.noise_variance(), var_z));
                    s
                }
            };
            starts.push((StartKind::Warm, x));
        }
        let mut moment = space.moment_start(self.median_distance);
        moment.extend(Self::encode_variances(param, var_z / 2.0, var_z / 2.0, var_z));
        let mut rng = stream.rng();
        for _ in 0..cfg.random_starts {
            let mut x = space.perturb(&moment[..space.dim()], &mut rng);
            let mut v = moment[space.dim()..].to_vec();
            for e in v.iter_mut() {
                let d: f64 = rng.sample(StandardNormal);
                *e = if param == Parameterization::RawScale {
                    *e * (0.5 * d).exp()
                } else {
                    *e + 0.5 * d
                };
            }
            x.extend(v);
            starts.push((StartKind::Random, x));
        }
        starts.insert(usize::from(warm.is_some()), (StartKind::Moment, moment));

        let sd = space.dim();
        let steps = |x0: &[f64]| {
            let mut s = space.steps(&x0[..sd]);
            s.extend(Self::variance_steps(param, &x0[sd..]));
            s
        };
        let objective = |x: &[f64]| match self.evaluate(&space, param, &resid, x) {
            Some((ll, _, _)) => -ll,
            None => f64::INFINITY,
        };
        let (best, traces) = multistart(objective, &starts, steps, &lower, &upper, &cfg.nelder_mead);
        let best = best.ok_or(Error::OptimizationFailed { starts: starts.len() })?;
        let (ll, s2, e2) = self
            .evaluate(&space, param, &resid, &best.x)
            .ok_or(Error::OptimizationFailed { starts: starts.len() })?;
        let params = space.params(&best.x[..sd], s2, e2)?;
        Ok(FitResult {
            params,
            log_likelihood: ll,
            mean,
            converged: best.converged || traces.iter().any(|t| t.converged && t.objective == best.f),
            n_restarts_used: starts.len(),
            optimizer_trace: traces,
            point: FitPoint {
                isotropic: space.is_isotropic(),
                coding: Some(param),
                shape: best.x[..sd].to_vec(),
                variance: best.x[sd..].to_vec(),
            },
        })
    }
}

/// Fits a kernel family to a sample by maximum likelihood, with the mean
/// fixed at the sample's estimated mean.
pub fn fit_kernel_mle(
    sample: &SpatialSample,
    family: &KernelFamily,
    mode: &AxisMode,
    cfg: &OptimizerConfig,
    warm_start: Option<&KernelParams>,
    stream: RngStream,
) -> Result<FitResult> {
    let problem = MleProblem::new(sample.coords());
    let mean = sample.working_mean();
    problem.fit(sample.values(), mean, family, mode, cfg, warm_start.map(WarmStart::Params), stream)
}
