//! Box-constrained Nelder–Mead simplex minimizer.
//!
//! Trial points are projected onto the box before evaluation. A non-finite
//! objective value is treated as `+∞`, so infeasible regions simply repel the
//! simplex.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    pub max_iter: usize,
    /// Stop once `f_worst − f_best ≤ rel_tol·|f_best|` across the simplex.
    pub rel_tol: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes `f` starting from `x0` with initial simplex edges `steps`.
///
/// The start point itself is a simplex vertex, so the returned value is never
/// worse than `f(project(x0))`.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    lower: &[f64],
    upper: &[f64],
    cfg: &NelderMeadConfig,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(steps.len(), dim);
    assert_eq!(lower.len(), dim);
    assert_eq!(upper.len(), dim);
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    project(&mut start, lower, upper);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(start.clone());
    for k in 0..dim {
        let mut v = start.clone();
        v[k] += steps[k];
        if v[k] > upper[k] {
            v[k] = start[k] - steps[k];
        }
        project(&mut v, lower, upper);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=dim).collect();
    while iterations < cfg.max_iter {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = values[order[0]];
        let worst = values[order[dim]];
        if dim == 0 {
            converged = true;
            break;
        }
        if best.is_finite() && worst - best <= cfg.rel_tol * best.abs() {
            converged = true;
            break;
        }
        let spread = (0..dim)
            .map(|k| {
                simplex
                    .iter()
                    .map(|v| (v[k] - simplex[order[0]][k]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread < 1e-14 {
            converged = best.is_finite();
            break;
        }
        iterations += 1;

        let iw = order[dim];
        let centroid: Vec<f64> = (0..dim)
            .map(|k| order[..dim].iter().map(|&i| simplex[i][k]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[iw])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p, lower, upper);
            p
        };

        let xr = along(ALPHA);
        let fr = eval(&xr);
        let second_worst = values[order[dim - 1]];
        if fr < best {
            let xe = along(GAMMA);
            let fe = eval(&xe);
            if fe < fr {
                simplex[iw] = xe;
                values[iw] = fe;
            } else {
                simplex[iw] = xr;
                values[iw] = fr;
            }
            continue;
        }
        if fr < second_worst {
            simplex[iw] = xr;
            values[iw] = fr;
            continue;
        }
        let (xc, fc) = if fr < worst {
            let xc = along(RHO * ALPHA);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-RHO);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < worst.min(fr) {
            simplex[iw] = xc;
            values[iw] = fc;
            continue;
        }
        let ib = order[0];
        let xb = simplex[ib].clone();
        for &i in &order[1..] {
            let mut p: Vec<f64> = xb
                .iter()
                .zip(&simplex[i])
                .map(|(b, v)| b + SIGMA * (v - b))
                .collect();
            project(&mut p, lower, upper);
            values[i] = eval(&p);
            simplex[i] = p;
        }
    }

    let ib = (0..=dim)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    Minimum {
        x: simplex[ib].clone(),
        f: values[ib],
        iterations,
        evaluations: evals,
        converged,
    }
}
