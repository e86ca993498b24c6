//! Machine-readable result records and flat tables.
//!
//! Records carry no wall-clock data, so identical inputs produce
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{PreprocessRecord, SpatialSample};
use crate::error::Result;
use crate::experiment::ExperimentTable;
use crate::test_parametric::TestResult;
use crate::variogram::ProfileRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// JSON record plus a companion CSV table next to it.
    #[default]
    Json,
    /// CSV table only.
    Csv,
}

/// Anything the CLI writes out.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report<'a> {
    TestResult {
        command: &'a str,
        config: serde_json::Value,
        preprocessing: &'a [PreprocessRecord],
        result: &'a TestResult,
    },
    ExperimentTable {
        config: serde_json::Value,
        table: &'a ExperimentTable,
    },
    Variogram {
        config: serde_json::Value,
        preprocessing: &'a [PreprocessRecord],
        rows: &'a [ProfileRow],
    },
    Sample {
        config: serde_json::Value,
        #[serde(serialize_with = "sample_summary")]
        sample: &'a SpatialSample,
    },
}

fn sample_summary<S: serde::Serializer>(s: &&SpatialSample, ser: S) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Summary<'b> {
        n: usize,
        preprocessing: &'b [PreprocessRecord],
    }
    Summary {
        n: s.len(),
        preprocessing: s.preprocessing_log(),
    }
    .serialize(ser)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Report<'_> {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Flat table for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            Report::TestResult { result, .. } => {
                out.push_str("replicate,phi,phi_observed\n");
                for (b, phi) in result.phi_resampled.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{}", b + 1, phi, result.phi_observed);
                }
            }
            Report::ExperimentTable { table, .. } => {
                out.push_str("n,lambda2,algorithm,repetitions,failures,rejections,rejection_rate\n");
                for r in &table.rows {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        r.n,
                        r.lambda2,
                        r.algorithm.name(),
                        r.repetitions,
                        r.failures,
                        r.rejections,
                        r.rejection_rate
                    );
                }
            }
            Report::Variogram { rows, .. } => {
                out.push_str("direction,distance_lo,distance_hi,gamma,pair_count\n");
                for r in rows.iter() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        r.direction,
                        r.distance_lo,
                        r.distance_hi,
                        opt(r.gamma),
                        r.pair_count
                    );
                }
            }
            Report::Sample { sample, .. } => {
                out.push_str("x,y,value\n");
                for (p, v) in sample.coords().points().zip(sample.values()) {
                    let _ = writeln!(out, "{},{},{}", p[0], p.get(1).copied().unwrap_or(0.0), v);
                }
            }
        }
        out
    }
}

/// Companion table path: `result.json` → `result.csv`.
pub fn companion_csv_path(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

/// Writes the report. JSON writes the record to `path` and the table to the
/// companion `.csv`; CSV writes only the table to `path`. Returns the files
/// written.
pub fn emit_result(report: &Report<'_>, format: OutputFormat, path: &Path) -> Result<Vec<PathBuf>> {
    match format {
        OutputFormat::Json => {
            let table = companion_csv_path(path);
            fs::write(path, report.to_json()?)?;
            if table != path {
                fs::write(&table, report.to_csv())?;
                Ok(vec![path.to_path_buf(), table])
            } else {
                Ok(vec![path.to_path_buf()])
            }
        }
        OutputFormat::Csv => {
            fs::write(path, report.to_csv())?;
            Ok(vec![path.to_path_buf()])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{Algorithm, CellResult};

    #[test]
    fn table_has_one_row_per_cell() {
        let table = ExperimentTable {
            rows: vec![
                CellResult::new(200, 1.0, Algorithm::Parametric, vec![0.5, 0.01], 0),
                CellResult::new(200, 10.0, Algorithm::Rotational, vec![0.02], 0),
            ],
        };
        let r = Report::ExperimentTable {
            config: serde_json::Value::Null,
            table: &table,
        };
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("200,10,rotational,1,0,1,1"));
    }

    #[test]
    fn companion_path() {
        assert_eq!(companion_csv_path(Path::new("out/r.json")), PathBuf::from("out/r.csv"));
    }
}
