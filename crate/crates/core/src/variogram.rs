//! Empirical and directional variograms.
//!
//! Directions are axial: `h` and `−h` describe the same pair, so angles are
//! compared modulo `π`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::dataset::SpatialSample;
use crate::error::{invalid, Error, Result};
use crate::kernels::{reduce_angle, LagVector};

/// Lag window `h* ± δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LagBinSpec {
    /// Componentwise box around `target`; a pair qualifies when `h` or `−h`
    /// falls inside.
    Cartesian { target: LagVector, tolerance: Vec<f64> },
    /// Distance window, optionally restricted to directions within
    /// `angle_tolerance` of `direction`.
    Polar {
        distance: f64,
        distance_tolerance: f64,
        direction: Option<f64>,
        angle_tolerance: f64,
    },
}

impl LagBinSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            LagBinSpec::Cartesian { target, tolerance } => {
                if target.dim() != dim || tolerance.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: if target.dim() != dim { target.dim() } else { tolerance.len() },
                    });
                }
                if tolerance.iter().any(|t| !(*t >= 0.0)) {
                    return Err(invalid("lag tolerances must be nonnegative"));
                }
            }
            LagBinSpec::Polar {
                distance,
                distance_tolerance,
                direction,
                angle_tolerance,
            } => {
                if !(distance.is_finite() && *distance_tolerance >= 0.0) {
                    return Err(invalid("distance window must be finite with nonnegative tolerance"));
                }
                if direction.is_some() {
                    if dim != 2 {
                        return Err(Error::DimensionMismatch { expected: 2, got: dim });
                    }
                    if !(0.0..FRAC_PI_2).contains(angle_tolerance) {
                        return Err(invalid(format!("angle tolerance must lie in [0, π/2), got {angle_tolerance}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn contains(&self, h: &[f64]) -> bool {
        match self {
            LagBinSpec::Cartesian { target, tolerance } => {
                let t = target.components();
                let inside = |sign: f64| h.iter().zip(t).zip(tolerance).all(|((x, c), d)| (sign * x - c).abs() <= *d);
                inside(1.0) || inside(-1.0)
            }
            LagBinSpec::Polar {
                distance,
                distance_tolerance,
                direction,
                angle_tolerance,
            } => {
                let r = h.iter().map(|c| c * c).sum::<f64>().sqrt();
                if (r - distance).abs() > *distance_tolerance {
                    return false;
                }
                match direction {
                    None => true,
                    Some(_) if r == 0.0 => false,
                    Some(dir) => axial_gap(h[1].atan2(h[0]), *dir) <= *angle_tolerance,
                }
            }
        }
    }
}

/// Smallest angle between two axial directions, in `[0, π/2]`.
pub fn axial_gap(a: f64, b: f64) -> f64 {
    let d = reduce_angle(a - b);
    d.min(PI - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramEstimate {
    /// `None` when no pair falls in the bin.
    pub gamma: Option<f64>,
    pub pair_count: usize,
}

/// `γ̂ = Σ (z_i − z_j)² / (2 |H*|)` over pairs `i < j` in the bin.
pub fn empirical_variogram(sample: &SpatialSample, bin: &LagBinSpec) -> Result<VariogramEstimate> {
    let coords = sample.coords();
    bin.validate(coords.dim())?;
    let z = sample.values();
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut h = vec![0.0; coords.dim()];
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            for (k, (a, b)) in coords.point(i).iter().zip(coords.point(j)).enumerate() {
                h[k] = a - b;
            }
            if bin.contains(&h) {
                sum += (z[i] - z[j]).powi(2);
                count += 1;
            }
        }
    }
    Ok(VariogramEstimate {
        gamma: (count > 0).then(|| sum / (2.0 * count as f64)),
        pair_count: count,
    })
}

/// `n_bins` equal-width distance bins covering `[0, max_distance / 2]`.
pub fn default_distance_edges(sample: &SpatialSample, n_bins: usize) -> Result<Vec<f64>> {
    if n_bins == 0 {
        return Err(invalid("at least one distance bin is required"));
    }
    let top = sample.coords().max_distance() / 2.0;
    if !(top > 0.0) {
        return Err(invalid("all points coincide; distance bins are empty"));
    }
    Ok((0..=n_bins).map(|k| top * k as f64 / n_bins as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub direction: f64,
    pub distance_lo: f64,
    pub distance_hi: f64,
    pub gamma: Option<f64>,
    pub pair_count: usize,
}

/// Directional variograms on a (direction × distance-bin) grid. Bin `k`
/// holds distances in `[edges[k], edges[k+1])`, the last bin also its upper
/// edge. Pairs at zero distance have no direction and are skipped.
pub fn directional_variogram_profile(
    sample: &SpatialSample,
    directions: &[f64],
    distance_edges: &[f64],
    angular_tolerance: f64,
) -> Result<Vec<ProfileRow>> {
    if sample.coords().dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: sample.coords().dim(),
        });
    }
    if directions.is_empty() || distance_edges.len() < 2 {
        return Err(invalid("need at least one direction and one distance bin"));
    }
    if distance_edges.windows(2).any(|w| !(w[0] < w[1])) || !(distance_edges[0] >= 0.0) {
        return Err(invalid("distance edges must be nonnegative and strictly increasing"));
    }
    if !(0.0..FRAC_PI_2).contains(&angular_tolerance) {
        return Err(invalid(format!("angle tolerance must lie in [0, π/2), got {angular_tolerance}")));
    }
    let nb = distance_edges.len() - 1;
    let mut sums = vec![0.0; directions.len() * nb];
    let mut counts = vec![0usize; directions.len() * nb];
    let coords = sample.coords();
    let z = sample.values();
    let last = distance_edges[nb];
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            let (p, q) = (coords.point(i), coords.point(j));
            let (hx, hy) = (p[0] - q[0], p[1] - q[1]);
            let r = hx.hypot(hy);
            if r == 0.0 || r < distance_edges[0] || r > last {
                continue;
            }
            let k = if r == last {
                nb - 1
            } else {
                distance_edges.partition_point(|&e| e <= r) - 1
            };
            let theta = hy.atan2(hx);
            let d2 = (z[i] - z[j]).powi(2);
            for (di, &dir) in directions.iter().enumerate() {
                if axial_gap(theta, dir) <= angular_tolerance {
                    sums[di * nb + k] += d2;
                    counts[di * nb + k] += 1;
                }
            }
        }
    }
    let mut rows = Vec::with_capacity(sums.len());
    for (di, &dir) in directions.iter().enumerate() {
        for k in 0..nb {
            let c = counts[di * nb + k];
            rows.push(ProfileRow {
                direction: dir,
                distance_lo: distance_edges[k],
                distance_hi: distance_edges[k + 1],
                gamma: (c > 0).then(|| sums[di * nb + k] / (2.0 * c as f64)),
                pair_count: c,
            });
        }
    }
    Ok(rows)
}
