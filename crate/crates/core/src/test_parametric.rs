//! Parametric bootstrap likelihood-ratio test for anisotropy.
//!
//! The null (isotropic) and alternative (anisotropic) kernels are fit by
//! maximum likelihood and compared through a discrepancy `φ`. Its null
//! distribution is estimated by simulating `B` fields from the fitted null
//! model and repeating both fits on each.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialSample;
use crate::error::{invalid, Error, Result};
use crate::field_sim::{GaussianSampler, RngStream};
use crate::inference::{estimate_mean, FitResult, HypothesisPair, MleProblem, OptimizerConfig, WarmStart};
use crate::kernels::covariance_matrix;
use crate::test_rotational::LsFit;

/// Fitted null and alternative models for the observed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum ObservedFits {
    Likelihood { null: FitResult, alt: FitResult },
    LeastSquares { null: LsFit, alt: LsFit },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub stream_id: u64,
    /// Replicates requested; `TestResult::b` counts the successful ones.
    pub requested_b: usize,
    /// Indices of replicates dropped after a fit failure.
    pub failed_replicates: Vec<usize>,
    /// Diagonal jitter needed to factor the fitted null covariance.
    pub null_jitter: f64,
    #[serde(skip)]
    pub runtime: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub algorithm: String,
    pub statistic: String,
    pub phi_observed: f64,
    pub phi_resampled: Vec<f64>,
    #[serde(rename = "B")]
    pub b: usize,
    pub p_value: f64,
    pub fits: ObservedFits,
    pub provenance: Provenance,
}

/// `|{b : φ ≤ φ_b}| / B`. Ties count toward the p-value.
pub fn p_value(phi: f64, resampled: &[f64]) -> Result<f64> {
    if resampled.is_empty() {
        return Err(invalid("p-value needs at least one resampled statistic"));
    }
    let hits = resampled.iter().filter(|&&pb| phi <= pb).count();
    Ok(hits as f64 / resampled.len() as f64)
}

/// Keeps successful replicate statistics in index order, failing when more
/// than 5% of replicates failed.
pub(crate) fn collect_replicates(results: Vec<Result<f64>>) -> Result<(Vec<f64>, Vec<usize>)> {
    let total = results.len();
    let mut phis = Vec::with_capacity(total);
    let mut failed = Vec::new();
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(phi) => phis.push(phi),
            Err(e) => {
                log::warn!("replicate {} failed: {e}", b + 1);
                failed.push(b + 1);
            }
        }
    }
    if failed.len() * 20 > total || phis.is_empty() {
        return Err(Error::TooManyReplicateFailures {
            failed: failed.len(),
            total,
        });
    }
    if !failed.is_empty() {
        log::warn!("dropped {} of {total} replicates", failed.len());
    }
    Ok((phis, failed))
}

/// A discrepancy between fitted null and alternative models.
pub trait Statistic: Sync {
    fn name(&self) -> &'static str;
    fn compute(&self, null: &FitResult, alt: &FitResult) -> f64;
}

/// `ℓ(alt) − ℓ(null)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogLikelihoodRatio;

impl Statistic for LogLikelihoodRatio {
    fn name(&self) -> &'static str {
        "log_likelihood_ratio"
    }

    fn compute(&self, null: &FitResult, alt: &FitResult) -> f64 {
        alt.log_likelihood - null.log_likelihood
    }
}

/// Fits both hypotheses to `z`, the alternative warm-started at the null.
fn fit_pair(
    problem: &MleProblem,
    z: &[f64],
    mean: f64,
    hyp: &HypothesisPair,
    cfg: &OptimizerConfig,
    stream: RngStream,
) -> Result<(FitResult, FitResult)> {
    let null = problem.fit(z, mean, &hyp.null_family, &hyp.axis_mode, cfg, None, stream.substream(1))?;
    let alt = problem.fit(
        z,
        mean,
        &hyp.alt_family,
        &hyp.axis_mode,
        cfg,
        Some(WarmStart::Fit(&null)),
        stream.substream(2),
    )?;
    Ok((null, alt))
}

/// Observed discrepancy and fits. Uses child stream 0 of `stream`.
pub fn discrepancy(
    sample: &SpatialSample,
    hyp: &HypothesisPair,
    cfg: &OptimizerConfig,
    stream: RngStream,
) -> Result<(f64, FitResult, FitResult)> {
    hyp.validate()?;
    let problem = MleProblem::new(sample.coords());
    let (null, alt) = fit_pair(&problem, sample.values(), sample.working_mean(), hyp, cfg, stream.substream(0))?;
    Ok((LogLikelihoodRatio.compute(&null, &alt), null, alt))
}

pub fn parametric_bootstrap_test(
    sample: &SpatialSample,
    hyp: &HypothesisPair,
    b: usize,
    cfg: &OptimizerConfig,
    stream: RngStream,
) -> Result<TestResult> {
    parametric_bootstrap_test_with(sample, hyp, b, cfg, stream, &LogLikelihoodRatio)
}

/// Bootstrap test with a caller-chosen statistic. Replicate `b` draws from
/// child stream `b`; the observed fits use child stream 0.
pub fn parametric_bootstrap_test_with(
    sample: &SpatialSample,
    hyp: &HypothesisPair,
    b: usize,
    cfg: &OptimizerConfig,
    stream: RngStream,
    statistic: &dyn Statistic,
) -> Result<TestResult> {
    if b == 0 {
        return Err(invalid("B must be at least 1"));
    }
    hyp.validate()?;
    let start = Instant::now();
    let problem = MleProblem::new(sample.coords());
    let standardized = sample.is_standardized();
    let mean = sample.working_mean();
    let (null, alt) = fit_pair(&problem, sample.values(), mean, hyp, cfg, stream.substream(0))?;
    let phi = statistic.compute(&null, &alt);

    let sampler = GaussianSampler::new(&covariance_matrix(sample.coords(), &null.params)?)?;
    let results: Vec<Result<f64>> = (1..=b as u64)
        .into_par_iter()
        .map(|id| {
            let rep = stream.substream(id);
            let z = sampler.sample(mean, &mut rep.substream(0).rng());
            let m = if standardized { 0.0 } else { estimate_mean(&z)? };
            let (n0, n1) = fit_pair(&problem, &z, m, hyp, cfg, rep)?;
            Ok(statistic.compute(&n0, &n1))
        })
        .collect();
    let (phis, failed) = collect_replicates(results)?;
    let p = p_value(phi, &phis)?;
    Ok(TestResult {
        algorithm: "parametric_bootstrap".into(),
        statistic: statistic.name().into(),
        phi_observed: phi,
        b: phis.len(),
        phi_resampled: phis,
        p_value: p,
        fits: ObservedFits::Likelihood { null, alt },
        provenance: Provenance {
            seed: stream.seed,
            stream_id: stream.stream_id,
            requested_b: b,
            failed_replicates: failed,
            null_jitter: sampler.jitter(),
            runtime: start.elapsed(),
        },
    })
}
