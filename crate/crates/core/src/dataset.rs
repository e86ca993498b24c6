//! Spatial samples, delimited-text ingestion, and preprocessing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::CoordinateSet;

/// Locations with one observed value each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSample {
    coords: CoordinateSet,
    values: Vec<f64>,
    preprocessing_log: Vec<PreprocessRecord>,
    /// Values currently have mean 0 and unit variance by construction.
    standardized: bool,
}

impl SpatialSample {
    pub fn new(coords: CoordinateSet, values: Vec<f64>) -> Result<Self> {
        if coords.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: coords.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("values"));
        }
        Ok(Self {
            coords,
            values,
            preprocessing_log: Vec::new(),
            standardized: false,
        })
    }

    pub fn coords(&self) -> &CoordinateSet {
        &self.coords
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn preprocessing_log(&self) -> &[PreprocessRecord] {
        &self.preprocessing_log
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Mean used by the tests: 0 for standardized values, otherwise the
    /// sample mean.
    pub fn working_mean(&self) -> f64 {
        if self.standardized {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }

    pub(crate) fn with_record(mut self, record: PreprocessRecord) -> Self {
        self.preprocessing_log.push(record);
        self
    }
}

/// Column names of the x, y and value fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub x: String,
    pub y: String,
    pub value: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            x: "x".into(),
            y: "y".into(),
            value: "value".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordScaling {
    /// Each axis mapped affinely onto `[0, 1]`.
    UnitInterval,
    /// Each axis centered and divided by its population standard deviation.
    ZScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum PreprocessStep {
    StandardizeValues,
    StandardizeCoords { scaling: CoordScaling },
    LogValues,
    /// Drops points whose value z-score exceeds `threshold` in magnitude.
    DropOutliers { threshold: f64 },
}

/// One applied transform with the constants it used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum PreprocessRecord {
    Ingest {
        path: String,
        columns: ColumnMap,
        rows: usize,
    },
    /// `z' = ((z − mean) / sd − residual_mean) / residual_sd`; the second
    /// pass removes the rounding left by the first on poorly scaled data.
    StandardizeValues {
        mean: f64,
        sd: f64,
        residual_mean: f64,
        residual_sd: f64,
    },
    StandardizeCoords {
        scaling: CoordScaling,
        /// Per axis `(offset, scale)`: `x' = (x − offset) / scale`.
        axes: Vec<(f64, f64)>,
    },
    LogValues,
    DropOutliers {
        threshold: f64,
        mean: f64,
        sd: f64,
        /// Indices into the sample before this step.
        removed: Vec<usize>,
    },
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Reads a header-led comma- or whitespace-delimited file. Line numbers in
/// errors count the header as line 1.
pub fn load_dataset(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<SpatialSample> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut sample = parse_dataset(&text, columns)?;
    let rows = sample.len();
    sample.preprocessing_log.push(PreprocessRecord::Ingest {
        path: path.display().to_string(),
        columns: columns.clone(),
        rows,
    });
    Ok(sample)
}

/// Parses dataset text; see [`load_dataset`].
pub fn parse_dataset(text: &str, columns: &ColumnMap) -> Result<SpatialSample> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or(Error::TooFewRows(0))?;
    let comma = header.contains(',');
    let split = |line: &str| -> Vec<String> {
        if comma {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .trim(csv::Trim::All)
                .from_reader(line.as_bytes());
            rdr.records()
                .next()
                .and_then(|r| r.ok())
                .map(|r| r.iter().map(str::to_owned).collect())
                .unwrap_or_default()
        } else {
            line.split_whitespace().map(str::to_owned).collect()
        }
    };
    let names: Vec<String> = split(header).into_iter().map(|s| s.trim_matches('"').to_owned()).collect();
    let find = |name: &str| {
        names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let idx = [find(&columns.x)?, find(&columns.y)?, find(&columns.value)?];

    let mut xy = Vec::new();
    let mut values = Vec::new();
    for (line_no, line) in lines {
        let fields = split(line);
        let mut parsed = [0.0; 3];
        for (slot, (&k, name)) in parsed
            .iter_mut()
            .zip(idx.iter().zip([&columns.x, &columns.y, &columns.value]))
        {
            let raw = fields.get(k).map(String::as_str).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row: line_no,
                message: format!("column `{name}` has non-numeric value `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line_no,
                    message: format!("column `{name}` is not finite"),
                });
            }
            *slot = v;
        }
        xy.push(parsed[0]);
        xy.push(parsed[1]);
        values.push(parsed[2]);
    }
    if values.len() < 2 {
        return Err(Error::TooFewRows(values.len()));
    }
    SpatialSample::new(CoordinateSet::new(2, xy)?, values)
}

/// Applies `steps` in order, appending one record per step.
pub fn preprocess(sample: &SpatialSample, steps: &[PreprocessStep]) -> Result<SpatialSample> {
    let mut s = sample.clone();
    for step in steps {
        s = apply_step(s, *step)?;
    }
    Ok(s)
}

fn apply_step(mut s: SpatialSample, step: PreprocessStep) -> Result<SpatialSample> {
    match step {
        PreprocessStep::StandardizeValues => {
            let (mean, sd) = mean_sd(&s.values);
            if !(sd > 0.0) {
                return Err(invalid("cannot standardize constant values"));
            }
            shift_scale(&mut s.values, mean, sd);
            let (residual_mean, residual_sd) = mean_sd(&s.values);
            shift_scale(&mut s.values, residual_mean, residual_sd);
            s.standardized = true;
            Ok(s.with_record(PreprocessRecord::StandardizeValues {
                mean,
                sd,
                residual_mean,
                residual_sd,
            }))
        }
        PreprocessStep::StandardizeCoords { scaling } => {
            let q = s.coords.dim();
            let mut axes = Vec::with_capacity(q);
            for k in 0..q {
                let col: Vec<f64> = s.coords.axis(k).collect();
                let (offset, scale) = match scaling {
                    CoordScaling::UnitInterval => {
                        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        (lo, hi - lo)
                    }
                    CoordScaling::ZScore => mean_sd(&col),
                };
                // A constant axis is only shifted.
                axes.push((offset, if scale > 0.0 { scale } else { 1.0 }));
            }
            scale_coords(&mut s.coords, &axes);
            Ok(s.with_record(PreprocessRecord::StandardizeCoords { scaling, axes }))
        }
        PreprocessStep::LogValues => {
            if let Some(i) = s.values.iter().position(|&v| v <= 0.0) {
                return Err(invalid(format!(
                    "log transform needs positive values; value {} at index {i}",
                    s.values[i]
                )));
            }
            for v in &mut s.values {
                *v = v.ln();
            }
            s.standardized = false;
            Ok(s.with_record(PreprocessRecord::LogValues))
        }
        PreprocessStep::DropOutliers { threshold } => {
            if !(threshold >= 0.0) {
                return Err(invalid(format!("outlier threshold must be nonnegative, got {threshold}")));
            }
            let (mean, sd) = mean_sd(&s.values);
            let keep: Vec<bool> = s
                .values
                .iter()
                .map(|v| sd == 0.0 || ((v - mean) / sd).abs() <= threshold)
                .collect();
            let removed: Vec<usize> = keep.iter().enumerate().filter(|(_, &k)| !k).map(|(i, _)| i).collect();
            if removed.len() == s.values.len() {
                return Err(Error::EmptyResult);
            }
            drop_rows(&mut s, &removed);
            Ok(s.with_record(PreprocessRecord::DropOutliers {
                threshold,
                mean,
                sd,
                removed,
            }))
        }
    }
}

fn shift_scale(values: &mut [f64], offset: f64, scale: f64) {
    for v in values {
        *v = (*v - offset) / scale;
    }
}

fn scale_coords(coords: &mut CoordinateSet, axes: &[(f64, f64)]) {
    let q = coords.dim();
    for row in coords.data_mut().chunks_exact_mut(q) {
        for (c, (offset, scale)) in row.iter_mut().zip(axes) {
            *c = (*c - offset) / scale;
        }
    }
}

fn drop_rows(s: &mut SpatialSample, removed: &[usize]) {
    if removed.is_empty() {
        return;
    }
    let mut keep = vec![true; s.values.len()];
    for &i in removed {
        keep[i] = false;
    }
    s.coords = s.coords.retain_rows(&keep);
    s.values = s.values.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
    s.standardized = false;
}

/// Reapplies a preprocessing log to raw data using the recorded constants
/// rather than recomputing them. `Ingest` records are carried over as they
/// are.
pub fn replay(raw: &SpatialSample, log: &[PreprocessRecord]) -> Result<SpatialSample> {
    let mut s = raw.clone();
    s.preprocessing_log.clear();
    for record in log {
        match record {
            PreprocessRecord::Ingest { .. } => {}
            PreprocessRecord::StandardizeValues {
                mean,
                sd,
                residual_mean,
                residual_sd,
            } => {
                shift_scale(&mut s.values, *mean, *sd);
                shift_scale(&mut s.values, *residual_mean, *residual_sd);
                s.standardized = true;
            }
            PreprocessRecord::StandardizeCoords { axes, .. } => {
                if axes.len() != s.coords.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: s.coords.dim(),
                        got: axes.len(),
                    });
                }
                scale_coords(&mut s.coords, axes);
            }
            PreprocessRecord::LogValues => {
                if s.values.iter().any(|&v| v <= 0.0) {
                    return Err(invalid("log transform needs positive values"));
                }
                for v in &mut s.values {
                    *v = v.ln();
                }
                s.standardized = false;
            }
            PreprocessRecord::DropOutliers { removed, .. } => {
                if removed.iter().any(|&i| i >= s.values.len()) || removed.len() >= s.values.len() {
                    return Err(invalid("recorded outlier indices do not fit the sample"));
                }
                drop_rows(&mut s, removed);
            }
        }
        s.preprocessing_log.push(record.clone());
    }
    Ok(s)
}

/// Threshold halfway between the largest and second-largest value z-score
/// magnitudes, so that `DropOutliers` removes exactly the most extreme point.
pub fn single_outlier_threshold(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::TooFewRows(values.len()));
    }
    let (mean, sd) = mean_sd(values);
    if !(sd > 0.0) {
        return Err(invalid("values are constant"));
    }
    let mut z: Vec<f64> = values.iter().map(|v| ((v - mean) / sd).abs()).collect();
    z.sort_by(|a, b| b.total_cmp(a));
    if z[0] == z[1] {
        return Err(invalid("the two most extreme values tie; no threshold isolates one point"));
    }
    Ok(0.5 * (z[0] + z[1]))
}
