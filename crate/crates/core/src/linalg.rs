//! Dense Cholesky factorization with the diagonal-jitter escalation policy.
//!
//! Factorizations always run sequentially inside faer so that results do not
//! depend on the thread count; parallelism lives at the replicate level.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::{Mat, Par};

use crate::error::{Error, Result};

/// Relative jitter levels (times `trace / n`) tried after a failed
/// factorization, in order.
pub const JITTER_LEVELS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Lower Cholesky factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Mat<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    /// Factors a symmetric matrix, reading only its lower triangle.
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let n = a.nrows();
        Self::from_fill(n, |m| {
            for j in 0..n {
                let src = a.col_as_slice(j);
                m.col_as_slice_mut(j)[j..].copy_from_slice(&src[j..]);
            }
        })
    }

    /// Factors the matrix written by `fill` (lower triangle including the
    /// diagonal). `fill` is called again for every jitter retry.
    pub fn from_fill<F: FnMut(&mut Mat<f64>)>(n: usize, mut fill: F) -> Result<Self> {
        let mut m = Mat::<f64>::zeros(n, n);
        fill(&mut m);
        let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
        if !trace.is_finite() {
            return Err(Error::NonFinite("covariance matrix"));
        }
        let mut buf = MemBuffer::new(cholesky_in_place_scratch::<f64>(
            n,
            Par::Seq,
            Default::default(),
        ));
        if try_factor(&mut m, &mut buf) {
            return Ok(Self { l: m, jitter: 0.0 });
        }
        let scale = if n > 0 { trace.abs() / n as f64 } else { 0.0 };
        // A zero matrix still needs some jitter to become factorizable.
        let scale = if scale > 0.0 { scale } else { 1.0 };
        for level in JITTER_LEVELS {
            let jitter = level * scale;
            fill(&mut m);
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if try_factor(&mut m, &mut buf) {
                return Ok(Self { l: m, jitter });
            }
        }
        Err(Error::NotPositiveDefinite {
            size: n,
            max_jitter: JITTER_LEVELS[JITTER_LEVELS.len() - 1] * scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Diagonal jitter that was added before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> &Mat<f64> {
        &self.l
    }

    /// `ln det(A + jitter·I)`.
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>() * 2.0
    }

    /// Overwrites `b` with `L⁻¹ b`.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        for j in 0..n {
            let col = self.l.col_as_slice(j);
            let bj = b[j] / col[j];
            b[j] = bj;
            for (bi, lij) in b[j + 1..].iter_mut().zip(&col[j + 1..]) {
                *bi -= lij * bj;
            }
        }
    }

    /// `rᵀ A⁻¹ r` via one triangular solve.
    pub fn quad_form(&self, r: &[f64]) -> f64 {
        let mut w = r.to_vec();
        self.solve_lower_in_place(&mut w);
        w.iter().map(|x| x * x).sum()
    }

    /// Returns `L x`.
    pub fn mul_lower(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for (j, &xj) in x.iter().enumerate() {
            let col = self.l.col_as_slice(j);
            for (yi, lij) in y[j..].iter_mut().zip(&col[j..]) {
                *yi += lij * xj;
            }
        }
        y
    }

    /// Dense `L Lᵀ`.
    pub fn reconstruct(&self) -> Mat<f64> {
        let n = self.dim();
        Mat::from_fn(n, n, |i, j| {
            (0..=i.min(j)).map(|k| self.l[(i, k)] * self.l[(j, k)]).sum()
        })
    }
}

fn try_factor(m: &mut Mat<f64>, buf: &mut MemBuffer) -> bool {
    let stack = MemStack::new(buf);
    match cholesky_in_place(m.as_mut(), Default::default(), Par::Seq, stack, Default::default()) {
        Ok(_) => {
            // faer leaves the strict upper triangle untouched; clear it so `l`
            // really is lower triangular.
            let n = m.nrows();
            for j in 1..n {
                m.col_as_slice_mut(j)[..j].fill(0.0);
            }
            (0..n).all(|i| m[(i, i)].is_finite() && m[(i, i)] > 0.0)
        }
        Err(_) => false,
    }
}
