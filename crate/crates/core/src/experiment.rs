//! Monte Carlo power study on simulated unit-square fields.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialSample;
use crate::error::{invalid, Result};
use crate::field_sim::{sample_coords, simulate_on, RngStream, SimulationConfig};
use crate::inference::{HypothesisPair, OptimizerConfig};
use crate::kernels::{KernelParams, KernelShape};
use crate::test_parametric::parametric_bootstrap_test;
use crate::test_rotational::{rotational_test, RotationalConfig};

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Parametric,
    Rotational,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Parametric => "parametric",
            Algorithm::Rotational => "rotational",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub sample_sizes: Vec<usize>,
    pub lambda2_values: Vec<f64>,
    pub repetitions: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    /// Elliptic kernel whose second length scale is replaced per cell.
    pub base_kernel: KernelParams,
    pub seed: u64,
    pub pair_subsample: Option<usize>,
    pub optimizer: OptimizerConfig,
    /// Draw new coordinates for every repetition; otherwise one design per
    /// sample size is reused.
    pub redraw_coords: bool,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            sample_sizes: vec![200, 500, 1000],
            lambda2_values: vec![1.0, 2.0, 5.0, 10.0],
            repetitions: 200,
            b: 200,
            alpha: std::f64::consts::PI / 36.0,
            base_kernel: KernelParams::elliptic(1.0, [1.0, 1.0], 0.0, 1.0).expect("valid kernel"),
            seed: 0,
            pair_subsample: Some(10_000),
            optimizer: OptimizerConfig::default(),
            redraw_coords: true,
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.iter().any(|&n| n < 2) {
            return Err(invalid("sample sizes must be at least 2"));
        }
        if self.lambda2_values.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(invalid("λ2 values must be positive"));
        }
        if self.b == 0 {
            return Err(invalid("B must be at least 1"));
        }
        if !matches!(self.base_kernel.shape(), KernelShape::EllipticExp { .. }) {
            return Err(invalid("the base kernel must be elliptic"));
        }
        Ok(())
    }

    /// Cell kernel: the base kernel with `λ₂` replaced.
    pub fn kernel(&self, lambda2: f64) -> Result<KernelParams> {
        match self.base_kernel.shape() {
            KernelShape::EllipticExp { length_scales, angle } => KernelParams::elliptic(
                self.base_kernel.signal_variance(),
                [length_scales[0], lambda2],
                *angle,
                self.base_kernel.noise_variance(),
            ),
            _ => Err(invalid("the base kernel must be elliptic")),
        }
    }

    /// Stream of one repetition, keyed by the cell values so the same
    /// `(n, λ₂, rep)` always sees the same data regardless of grid layout.
    pub fn repetition_stream(&self, n: usize, lambda2: f64, rep: usize) -> RngStream {
        RngStream::new(self.seed, n as u64)
            .substream(lambda2.to_bits())
            .substream(rep as u64)
    }

    /// Simulated sample of one repetition, drawn from child stream 0.
    pub fn simulate_repetition(&self, n: usize, lambda2: f64, rep: usize) -> Result<SpatialSample> {
        let cfg = SimulationConfig::unit_square(n, self.kernel(lambda2)?);
        let data = self.repetition_stream(n, lambda2, rep).substream(0);
        let coord_stream = if self.redraw_coords {
            data.substream(0)
        } else {
            RngStream::new(self.seed, n as u64).substream(0)
        };
        let coords = sample_coords(&cfg, coord_stream)?;
        let z = simulate_on(&cfg, &coords, data.substream(1))?;
        SpatialSample::new(coords, z)
    }

    pub fn rotational_config(&self) -> RotationalConfig {
        RotationalConfig {
            eta: 0.0,
            alpha: self.alpha,
            b: self.b,
            pair_subsample: self.pair_subsample,
            ..RotationalConfig::default()
        }
    }

    /// p-value of one repetition. The parametric test uses child stream 1
    /// and the rotational test child stream 2.
    pub fn run_repetition(&self, n: usize, lambda2: f64, rep: usize, algorithm: Algorithm) -> Result<f64> {
        let sample = self.simulate_repetition(n, lambda2, rep)?;
        let stream = self.repetition_stream(n, lambda2, rep);
        let result = match algorithm {
            Algorithm::Parametric => parametric_bootstrap_test(
                &sample,
                &HypothesisPair::elliptic_fixed(0.0),
                self.b,
                &self.optimizer,
                stream.substream(1),
            )?,
            Algorithm::Rotational => {
                rotational_test(&sample, &self.rotational_config(), &self.optimizer, stream.substream(2))?
            }
        };
        Ok(result.p_value)
    }

    pub fn run_cell(&self, n: usize, lambda2: f64, algorithm: Algorithm) -> Result<CellResult> {
        let outcomes: Vec<Result<f64>> = (0..self.repetitions)
            .into_par_iter()
            .map(|rep| self.run_repetition(n, lambda2, rep, algorithm))
            .collect();
        let mut p_values = Vec::with_capacity(outcomes.len());
        let mut failures = 0;
        for (rep, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(p) => p_values.push(p),
                Err(e) => {
                    log::warn!("n={n} λ2={lambda2} {} repetition {rep} failed: {e}", algorithm.name());
                    failures += 1;
                }
            }
        }
        Ok(CellResult::new(n, lambda2, algorithm, p_values, failures))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub lambda2: f64,
    pub algorithm: Algorithm,
    pub repetitions: usize,
    pub failures: usize,
    pub rejections: usize,
    /// Share of successful repetitions with `p < 0.05`.
    pub rejection_rate: f64,
    pub p_values: Vec<f64>,
}

impl CellResult {
    pub fn new(n: usize, lambda2: f64, algorithm: Algorithm, p_values: Vec<f64>, failures: usize) -> Self {
        let rejections = p_values.iter().filter(|&&p| p < SIGNIFICANCE).count();
        let rejection_rate = if p_values.is_empty() {
            0.0
        } else {
            rejections as f64 / p_values.len() as f64
        };
        Self {
            n,
            lambda2,
            algorithm,
            repetitions: p_values.len() + failures,
            failures,
            rejections,
            rejection_rate,
            p_values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<CellResult>,
}

/// Runs every `(n, λ₂, algorithm)` cell. A grid without repetitions yields
/// an empty table.
pub fn run_experiment_grid(grid: &ExperimentGrid, algorithms: &[Algorithm]) -> Result<ExperimentTable> {
    grid.validate()?;
    if grid.repetitions == 0 {
        return Ok(ExperimentTable::default());
    }
    let mut rows = Vec::new();
    for &n in &grid.sample_sizes {
        for &l2 in &grid.lambda2_values {
            for &a in algorithms {
                rows.push(grid.run_cell(n, l2, a)?);
            }
        }
    }
    Ok(ExperimentTable { rows })
}
