//! Gaussian random-field simulation and uniform coordinate designs.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::{covariance_matrix, CoordinateSet, KernelParams};
use crate::linalg::CholeskyFactor;

/// Addressable random stream. ChaCha8 keyed by `seed` with the 64-bit stream
/// selector set to `stream_id`, so sequences are reproducible across
/// platforms and independent of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream `id` of this stream. Children of distinct parents never
    /// share a key (up to 64-bit hash collisions).
    pub fn substream(&self, id: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5851_F42D_4C95_7F2D))),
            stream_id: id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    /// Closed interval per coordinate axis; its length is the dimension `q`.
    pub domain: Vec<(f64, f64)>,
    pub kernel: KernelParams,
    pub mean: f64,
}

impl SimulationConfig {
    /// Unit-square design used by the power study.
    pub fn unit_square(n: usize, kernel: KernelParams) -> Self {
        Self {
            n,
            domain: vec![(0.0, 1.0), (0.0, 1.0)],
            kernel,
            mean: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid(format!("simulation needs n >= 2, got {}", self.n)));
        }
        if self.domain.is_empty() {
            return Err(invalid("simulation domain has no axes"));
        }
        for &(lo, hi) in &self.domain {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(format!("empty or non-finite domain interval [{lo}, {hi}]")));
            }
        }
        if !self.mean.is_finite() {
            return Err(invalid("mean must be finite"));
        }
        Ok(())
    }
}

/// `n` i.i.d. points, each axis uniform on its interval.
pub fn sample_coords(config: &SimulationConfig, stream: RngStream) -> Result<CoordinateSet> {
    config.validate()?;
    let mut rng = stream.rng();
    let q = config.domain.len();
    let mut data = Vec::with_capacity(config.n * q);
    for _ in 0..config.n {
        for &(lo, hi) in &config.domain {
            let u: f64 = rng.random();
            data.push(if lo == hi { lo } else { lo + (hi - lo) * u });
        }
    }
    CoordinateSet::new(q, data)
}

/// Draws from `N(μ𝟙, Σ)` with one factorization reused across draws.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: CholeskyFactor,
}

impl GaussianSampler {
    pub fn new(cov: &Mat<f64>) -> Result<Self> {
        Ok(Self {
            factor: CholeskyFactor::new(cov)?,
        })
    }

    pub fn from_factor(factor: CholeskyFactor) -> Self {
        Self { factor }
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    /// Jitter added to the diagonal before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// `μ𝟙 + L ξ` with `ξ` i.i.d. standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> Vec<f64> {
        let xi: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let mut z = self.factor.mul_lower(&xi);
        for v in &mut z {
            *v += mean;
        }
        z
    }
}

pub fn sample_gaussian_field(mean: f64, cov: &Mat<f64>, stream: RngStream) -> Result<Vec<f64>> {
    let sampler = GaussianSampler::new(cov)?;
    Ok(sampler.sample(mean, &mut stream.rng()))
}

/// Coordinates and one field realization. Coordinates come from child stream
/// 0 and the field from child stream 1 of `stream`.
pub fn simulate(config: &SimulationConfig, stream: RngStream) -> Result<(CoordinateSet, Vec<f64>)> {
    let coords = sample_coords(config, stream.substream(0))?;
    let z = simulate_on(config, &coords, stream.substream(1))?;
    Ok((coords, z))
}

/// One field realization at fixed coordinates.
pub fn simulate_on(config: &SimulationConfig, coords: &CoordinateSet, stream: RngStream) -> Result<Vec<f64>> {
    let cov = covariance_matrix(coords, &config.kernel)?;
    sample_gaussian_field(config.mean, &cov, stream)
}
