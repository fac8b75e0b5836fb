//! Banded symmetric positive definite solver and the Newton system shared by
//! the lower-level, linearised-state and adjoint solves.
//!
//! The second-order system at a pair `y = (u, v)` is the 2x2 block matrix
//!
//! ```text
//! M = [ A         lambda2 I ]      A = (eps+lambda2) I + eps D^T D + D^T H D
//!     [ lambda2 I     B     ]      B = (eps+lambda2) I + lambda1 diag(h'(v))
//! ```
//!
//! with `D` the forward-difference gradient and `H` the per-pixel 2x2
//! Jacobian of `h_gamma` at `grad u`. `B` is diagonal and positive, so `M` is
//! reduced to its Schur complement `S = A - lambda2^2 B^{-1}`, a banded SPD
//! matrix (bandwidth `cols`) factored by a direct banded Cholesky. `M` is
//! positive definite for every `eps > 0`, so the factorisation cannot break
//! down on valid inputs; a nonpositive pivot is reported as a solver error
//! rather than silently patched.

use crate::error::TvicError;
use crate::fidelity::{
    h_gamma_jacobian, h_gamma_vec_jacobian, newton_scalar_slope, newton_vec_jacobian,
    FidelityParams, SmoothingParams,
};
use crate::grid::{gradient, ImageGrid};
use crate::Result;

/// Lower band of a symmetric matrix, column-major: entry `(i, j)` with
/// `0 <= i - j <= bw` lives at `band[j * (bw + 1) + (i - j)]`.
#[derive(Clone)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSpd { n, bw, band: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i >= j && i - j <= self.bw);
        self.band[j * (self.bw + 1) + (i - j)] += value;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds `sigma` to every diagonal entry.
    pub fn shift_diagonal(&mut self, sigma: f64) {
        for j in 0..self.n {
            self.band[j * (self.bw + 1)] += sigma;
        }
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.n)
            .map(|j| self.band[j * (self.bw + 1)].abs())
            .fold(0.0_f64, f64::max)
    }

    /// Expands the stored band to a dense symmetric matrix (row-major).
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for j in 0..n {
            for d in 0..=self.bw.min(n - 1 - j) {
                let val = self.band[j * (self.bw + 1) + d];
                m[(j + d) * n + j] = val;
                m[j * n + (j + d)] = val;
            }
        }
        m
    }

    /// In-place modified Cholesky factorisation `S = L L^T`.
    ///
    /// Diagonal entries of the Schur complement can cancel down to the
    /// `2 eps` scale while the band carries `gamma / h^2` sized stiffness
    /// entries, so an exact pivot is below the float resolution of the
    /// elimination. Pivots under a relative floor are clamped to it: the
    /// perturbed factor stays positive definite (the Newton direction stays
    /// a descent direction) and only affects modes whose true curvature is
    /// unresolvable anyway. Strongly negative or non-finite pivots still
    /// report a breakdown.
    pub fn factor(mut self) -> Result<BandedCholesky> {
        let (n, bw, ld) = (self.n, self.bw, self.bw + 1);
        let diag_max = (0..n)
            .map(|j| self.band[j * ld].abs())
            .fold(0.0_f64, f64::max);
        let floor = diag_max * 1e-13 + f64::MIN_POSITIVE;
        for j in 0..n {
            let kmin = j.saturating_sub(bw);
            for k in kmin..j {
                let ljk = self.band[k * ld + (j - k)];
                if ljk == 0.0 {
                    continue;
                }
                // trailing update of column j by column k
                let top = (k + bw).min(n - 1);
                let len = top - j + 1;
                let (head, tail) = self.band.split_at_mut(j * ld);
                let col_k = &head[k * ld + (j - k)..k * ld + (j - k) + len];
                let col_j = &mut tail[..len];
                for t in 0..len {
                    col_j[t] -= ljk * col_k[t];
                }
            }
            let mut pivot = self.band[j * ld];
            if !pivot.is_finite() || pivot < -1e-8 * diag_max {
                return Err(TvicError::LinearSolver(format!(
                    "indefinite pivot {pivot} at column {j}"
                )));
            }
            if pivot < floor {
                pivot = floor;
            }
            let d = pivot.sqrt();
            self.band[j * ld] = d;
            let top = (j + bw).min(n - 1);
            let inv = 1.0 / d;
            for t in 1..=(top - j) {
                self.band[j * ld + t] *= inv;
            }
        }
        Ok(BandedCholesky { n, bw, band: self.band })
    }
}

/// Cholesky factor of a [`BandedSpd`]; solves by forward/back substitution.
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let (n, bw, ld) = (self.n, self.bw, self.bw + 1);
        // L y = x
        for j in 0..n {
            let xj = x[j] / self.band[j * ld];
            x[j] = xj;
            let top = (j + bw).min(n - 1);
            for i in j + 1..=top {
                x[i] -= self.band[j * ld + (i - j)] * xj;
            }
        }
        // L^T x = y
        for j in (0..n).rev() {
            let top = (j + bw).min(n - 1);
            let mut acc = x[j];
            for i in j + 1..=top {
                acc -= self.band[j * ld + (i - j)] * x[i];
            }
            x[j] = acc / self.band[j * ld];
        }
    }
}

/// Factored second-order system at a pair `(u, v)`.
pub struct NewtonSystem {
    lambda2: f64,
    b_diag: Vec<f64>,
    chol: BandedCholesky,
}

/// Bandwidth of the Schur complement for a `rows x cols` grid: the stencil
/// couples offsets `{1, cols-1, cols}`, collapsing to 1 in one dimension.
fn bandwidth(rows: usize, cols: usize) -> usize {
    if rows == 1 || cols == 1 {
        1
    } else {
        cols
    }
}

/// Assembles the `u`-block `A = (eps + l2_weight) I + eps D^T D + D^T H D`
/// with `H` evaluated at `grad u`: the exact Jacobian of `h_gamma`, or its
/// secant-floored counterpart for the globalised Newton direction.
pub(crate) fn assemble_a_block(
    u: &ImageGrid,
    l2_weight: f64,
    smoothing: &SmoothingParams,
    floored: bool,
) -> BandedSpd {
    let (rows, cols) = u.shape();
    let n = u.len();
    let (eps, gamma) = (smoothing.epsilon, smoothing.gamma);
    let inv_h2 = 1.0 / (u.mesh_h() * u.mesh_h());

    let du = gradient(u);
    let (dx, dy) = (du.dx(), du.dy());

    let mut s = BandedSpd::zeros(n, bandwidth(rows, cols));
    for k in 0..n {
        s.add(k, k, eps + l2_weight);
    }
    for k in 0..n {
        let (i, j) = (k / cols, k % cols);
        let has_x = j + 1 < cols;
        let has_y = i + 1 < rows;
        if !has_x && !has_y {
            continue;
        }
        let h = if floored {
            newton_vec_jacobian([dx[k], dy[k]], gamma)
        } else {
            h_gamma_vec_jacobian([dx[k], dy[k]], gamma)
        };
        if has_x {
            let w = (eps + h[0][0]) * inv_h2;
            s.add(k, k, w);
            s.add(k + 1, k + 1, w);
            s.add(k + 1, k, -w);
        }
        if has_y {
            let w = (eps + h[1][1]) * inv_h2;
            s.add(k, k, w);
            s.add(k + cols, k + cols, w);
            s.add(k + cols, k, -w);
        }
        if has_x && has_y {
            let w = h[0][1] * inv_h2;
            if w != 0.0 {
                s.add(k, k, 2.0 * w);
                s.add(k + 1, k, -w);
                s.add(k + cols, k, -w);
                s.add(k + cols, k + 1, w);
            }
        }
    }
    s
}

/// Assembles the Schur complement band at `(u, v)` without factoring it.
pub(crate) fn assemble_schur(
    u: &ImageGrid,
    v: &ImageGrid,
    params: &FidelityParams,
    smoothing: &SmoothingParams,
    floored: bool,
) -> (BandedSpd, Vec<f64>) {
    let (eps, gamma) = (smoothing.epsilon, smoothing.gamma);
    let (l1, l2) = (params.lambda1, params.lambda2);
    let b_diag: Vec<f64> = v
        .as_slice()
        .iter()
        .map(|&vi| {
            let slope = if floored {
                newton_scalar_slope(vi, gamma)
            } else {
                h_gamma_jacobian(vi, gamma)
            };
            eps + l2 + l1 * slope
        })
        .collect();
    let mut s = assemble_a_block(u, l2, smoothing, floored);
    for (k, &b) in b_diag.iter().enumerate() {
        s.add(k, k, -l2 * l2 / b);
    }
    (s, b_diag)
}

impl NewtonSystem {
    /// Assembles and factors the system at `(u, v)`.
    pub fn assemble(
        u: &ImageGrid,
        v: &ImageGrid,
        params: &FidelityParams,
        smoothing: &SmoothingParams,
    ) -> Result<Self> {
        let (s, b_diag) = assemble_schur(u, v, params, smoothing, false);
        let chol = s.factor()?;
        Ok(NewtonSystem { lambda2: params.lambda2, b_diag, chol })
    }

    /// Solves `M (x_u, x_v) = (rhs_u, rhs_v)` through the Schur complement.
    pub fn solve(&self, rhs_u: &[f64], rhs_v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.b_diag.len();
        assert_eq!(rhs_u.len(), n);
        assert_eq!(rhs_v.len(), n);
        let l2 = self.lambda2;
        let mut xu: Vec<f64> = (0..n)
            .map(|i| rhs_u[i] - l2 * rhs_v[i] / self.b_diag[i])
            .collect();
        self.chol.solve_in_place(&mut xu);
        let xv: Vec<f64> = (0..n)
            .map(|i| (rhs_v[i] - l2 * xu[i]) / self.b_diag[i])
            .collect();
        (xu, xv)
    }
}
