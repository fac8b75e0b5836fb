//! Fidelity-side formulas.
//!
//! The infimal convolution of `lambda1 |v|` and `lambda2/2 (r - v)^2`,
//! minimised pointwise over `v`, equals the classical Huber penalty
//! [`huber_phi`] of the residual `r = f - u`, with the minimiser given by the
//! soft-shrinkage [`v_optimal`]. For the differentiable solver the absolute
//! value is further smoothed: [`h_gamma`] is a C^1 surrogate for `sign`,
//! [`h_gamma_jacobian`] its derivative, and [`h_gamma_antiderivative`] the
//! corresponding smoothed `|.|` (normalised to vanish at zero, which pins the
//! otherwise arbitrary constant of integration). [`prox_huber_l1`] is the
//! proximal map of that smoothed absolute value; composed as
//! `prox_{lambda1/(eps+lambda2)}(lambda2 (f-u) / (eps+lambda2))` it yields the
//! optimal `v` of the regularised fidelity [`phi_ic_regularized`].

use crate::error::TvicError;
use crate::grid::{check_shapes, ImageGrid, VectorField};
use crate::parallel;
use crate::Result;

/// The fidelity weight pair with its box bounds `0 <= lambda_i <= L_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub box_l1: f64,
    pub box_l2: f64,
}

/// Default box bounds, comfortably containing every weight the learning loop
/// visits in practice.
pub const DEFAULT_BOX: (f64, f64) = (100.0, 1000.0);

impl FidelityParams {
    /// Weights with the default box bounds.
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        Self::with_box(lambda1, lambda2, DEFAULT_BOX.0, DEFAULT_BOX.1)
    }

    pub fn with_box(lambda1: f64, lambda2: f64, box_l1: f64, box_l2: f64) -> Result<Self> {
        if box_l1 <= 0.0 || box_l2 <= 0.0 {
            return Err(TvicError::param("box bounds must be positive"));
        }
        if !(0.0..=box_l1).contains(&lambda1) || !(0.0..=box_l2).contains(&lambda2) {
            return Err(TvicError::param(format!(
                "(lambda1, lambda2) = ({lambda1}, {lambda2}) outside box [0, {box_l1}] x [0, {box_l2}]"
            )));
        }
        Ok(FidelityParams { lambda1, lambda2, box_l1, box_l2 })
    }

    /// Shrinkage threshold `lambda1/lambda2`; requires both weights positive.
    pub fn threshold(&self) -> Result<f64> {
        if self.lambda1 <= 0.0 || self.lambda2 <= 0.0 {
            return Err(TvicError::param(
                "threshold lambda1/lambda2 undefined for a zero weight",
            ));
        }
        Ok(self.lambda1 / self.lambda2)
    }
}

/// Smoothing constants: `epsilon` weights the quadratic H1/L2 terms and
/// `gamma` controls the C^1 Huber smoothing of the absolute value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub epsilon: f64,
    pub gamma: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        SmoothingParams { epsilon: 1e-10, gamma: 1e3 }
    }
}

impl SmoothingParams {
    pub fn new(epsilon: f64, gamma: f64) -> Result<Self> {
        if epsilon <= 0.0 || gamma <= 0.0 {
            return Err(TvicError::param("epsilon and gamma must be positive"));
        }
        Ok(SmoothingParams { epsilon, gamma })
    }
}

/// Huber penalty of a scalar residual: quadratic `lambda2/2 t^2` below the
/// threshold `lambda1/lambda2`, affine `lambda1 |t| - lambda1^2/(2 lambda2)`
/// beyond it. Continuous with continuous derivative at the breakpoint.
pub fn huber_phi(t: f64, params: &FidelityParams) -> Result<f64> {
    let thresh = params.threshold()?;
    Ok(if t.abs() >= thresh {
        params.lambda1 * t.abs() - params.lambda1 * params.lambda1 / (2.0 * params.lambda2)
    } else {
        0.5 * params.lambda2 * t * t
    })
}

/// Pointwise minimiser of the inner `v`-problem: soft shrinkage of the
/// residual by `lambda1/lambda2`. Degenerate weights follow the vanishing
/// fidelity: `lambda1 = 0` keeps the whole residual in `v`, `lambda2 = 0`
/// sends `v` to zero.
pub fn v_optimal(residual: &ImageGrid, params: &FidelityParams) -> Result<ImageGrid> {
    if params.lambda1 == 0.0 {
        return Ok(residual.clone());
    }
    if params.lambda2 == 0.0 {
        return Ok(ImageGrid::zeros_like(residual));
    }
    let thresh = params.threshold()?;
    let mut out = ImageGrid::zeros_like(residual);
    let r = residual.as_slice();
    parallel::fill_indexed(out.as_mut_slice(), |i| {
        if r[i].abs() >= thresh {
            r[i] - thresh * r[i].signum()
        } else {
            0.0
        }
    });
    Ok(out)
}

/// The infimal-convolution fidelity evaluated through its Huber form:
/// `h^2 sum huber_phi(f_i - u_i)`. Returns zero when either weight vanishes.
pub fn phi_ic(u: &ImageGrid, f: &ImageGrid, params: &FidelityParams) -> Result<f64> {
    check_shapes("u", u, "f", f)?;
    if params.lambda1 == 0.0 || params.lambda2 == 0.0 {
        return Ok(0.0);
    }
    let thresh = params.threshold()?;
    let (l1, l2) = (params.lambda1, params.lambda2);
    let (us, fs) = (u.as_slice(), f.as_slice());
    let h2 = u.mesh_h() * u.mesh_h();
    Ok(parallel::sum(us.len(), |i| {
        let t = fs[i] - us[i];
        if t.abs() >= thresh {
            l1 * t.abs() - l1 * l1 / (2.0 * l2)
        } else {
            0.5 * l2 * t * t
        }
    }) * h2)
}

// Branch boundaries of h_gamma in terms of s = |z|:
// saturated for s >= s_hi, linear for s <= s_lo.
#[inline]
fn band(gamma: f64) -> (f64, f64) {
    let half = 0.5 / (gamma * gamma);
    (1.0 / gamma - half, 1.0 / gamma + half)
}

// Magnitude response g(s) with h_gamma(z) = z/|z| * g(|z|).
#[inline]
fn h_gamma_mag(s: f64, gamma: f64) -> f64 {
    let (s_lo, s_hi) = band(gamma);
    if s >= s_hi {
        1.0
    } else if s <= s_lo {
        gamma * s
    } else {
        let a = 1.0 - gamma * s + 0.5 / gamma;
        1.0 - 0.5 * gamma * a * a
    }
}

// d g / d s, nonnegative everywhere.
#[inline]
fn h_gamma_mag_deriv(s: f64, gamma: f64) -> f64 {
    let (s_lo, s_hi) = band(gamma);
    if s >= s_hi {
        0.0
    } else if s <= s_lo {
        gamma
    } else {
        let a = 1.0 - gamma * s + 0.5 / gamma;
        gamma * gamma * a
    }
}

/// C^1 smoothing of `sign` on scalars: `gamma z` near zero, `z/|z|` once
/// `gamma |z| - 1 >= 1/(2 gamma)`, with a quadratic blend in between.
#[inline]
pub fn h_gamma(z: f64, gamma: f64) -> f64 {
    z.signum() * h_gamma_mag(z.abs(), gamma)
}

/// Derivative of [`h_gamma`]; piecewise `gamma`, `gamma^2 a`, `0`.
#[inline]
pub fn h_gamma_jacobian(z: f64, gamma: f64) -> f64 {
    h_gamma_mag_deriv(z.abs(), gamma)
}

/// Two-vector version of [`h_gamma`], acting radially.
#[inline]
pub fn h_gamma_vec(z: [f64; 2], gamma: f64) -> [f64; 2] {
    let s = (z[0] * z[0] + z[1] * z[1]).sqrt();
    let (s_lo, _) = band(gamma);
    if s <= s_lo {
        return [gamma * z[0], gamma * z[1]];
    }
    let scale = h_gamma_mag(s, gamma) / s;
    [scale * z[0], scale * z[1]]
}

/// Symmetric 2x2 Jacobian of [`h_gamma_vec`], `[[xx, xy], [xy, yy]]`.
/// Positive semidefinite with eigenvalues `g(s)/s` and `g'(s)`.
#[inline]
pub fn h_gamma_vec_jacobian(z: [f64; 2], gamma: f64) -> [[f64; 2]; 2] {
    let s2 = z[0] * z[0] + z[1] * z[1];
    let s = s2.sqrt();
    let (s_lo, _) = band(gamma);
    if s <= s_lo {
        return [[gamma, 0.0], [0.0, gamma]];
    }
    let q = h_gamma_mag(s, gamma) / s;
    let gp = h_gamma_mag_deriv(s, gamma);
    let c = (gp - q) / s2;
    [
        [q + c * z[0] * z[0], c * z[0] * z[1]],
        [c * z[0] * z[1], q + c * z[1] * z[1]],
    ]
}

// Globalised Newton curvature: the exact radial derivative g'(s) vanishes on
// the saturated branch, which in 1D leaves saturated cells with no coupling
// at all and stalls the iteration on sawtooth profiles. Flooring the radial
// eigenvalue at the secant slope g(s)/s (the lagged-diffusivity matrix) keeps
// every direction positive while agreeing with the exact Jacobian inside the
// quadratic band, where the Newton tail happens.
#[inline]
pub(crate) fn newton_vec_jacobian(z: [f64; 2], gamma: f64) -> [[f64; 2]; 2] {
    let s2 = z[0] * z[0] + z[1] * z[1];
    let s = s2.sqrt();
    let (s_lo, _) = band(gamma);
    if s <= s_lo {
        return [[gamma, 0.0], [0.0, gamma]];
    }
    let q = h_gamma_mag(s, gamma) / s;
    let gp = h_gamma_mag_deriv(s, gamma).max(q);
    let c = (gp - q) / s2;
    [
        [q + c * z[0] * z[0], c * z[0] * z[1]],
        [c * z[0] * z[1], q + c * z[1] * z[1]],
    ]
}

#[inline]
pub(crate) fn newton_scalar_slope(v: f64, gamma: f64) -> f64 {
    let s = v.abs();
    let (s_lo, _) = band(gamma);
    if s <= s_lo {
        return gamma;
    }
    h_gamma_jacobian(v, gamma).max(h_gamma_mag(s, gamma) / s)
}

/// Antiderivative of [`h_gamma`] on magnitudes, with value 0 at 0: the
/// smoothed absolute value whose integral defines `|.|_{gamma, L1}`.
pub fn h_gamma_antiderivative(s: f64, gamma: f64) -> f64 {
    let s = s.abs();
    let (s_lo, s_hi) = band(gamma);
    if s <= s_lo {
        return 0.5 * gamma * s * s;
    }
    let rho_lo = 0.5 * gamma * s_lo * s_lo;
    let inv_g3 = 1.0 / (gamma * gamma * gamma);
    if s <= s_hi {
        let a = 1.0 - gamma * s + 0.5 / gamma;
        rho_lo + (s - s_lo) + (a * a * a - inv_g3) / 6.0
    } else {
        let rho_hi = rho_lo + (s_hi - s_lo) - inv_g3 / 6.0;
        rho_hi + (s - s_hi)
    }
}

/// `h^2 sum rho_gamma(|v_i|)`: the smoothed L1 norm of a grid.
pub fn smoothed_l1_grid(v: &ImageGrid, gamma: f64) -> f64 {
    let s = v.as_slice();
    let h2 = v.mesh_h() * v.mesh_h();
    parallel::sum(s.len(), |i| h_gamma_antiderivative(s[i], gamma)) * h2
}

/// `h^2 sum rho_gamma(|p_i|)`: the smoothed (isotropic) L1 norm of a field.
pub fn smoothed_l1_field(p: &VectorField, gamma: f64) -> f64 {
    let (dx, dy) = (p.dx(), p.dy());
    let h2 = p.mesh_h() * p.mesh_h();
    parallel::sum(dx.len(), |i| {
        h_gamma_antiderivative((dx[i] * dx[i] + dy[i] * dy[i]).sqrt(), gamma)
    }) * h2
}

/// Scalar proximal point of the smoothed absolute value: the unique root of
/// `h_gamma(w) + (w - z)/tau = 0`, found by safeguarded Newton with a
/// bisection fallback. The equation's slope is at least `1/tau`, so the root
/// is resolved well past `1e-12 * (1 + |z|)`, close to machine precision.
pub fn prox_huber_l1_scalar(z: f64, tau: f64, gamma: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let sign = z.signum();
    let z = z.abs();
    // root lies in [0, z]: the objective derivative is <= 0 at 0, >= 0 at z
    let (mut lo, mut hi) = (0.0_f64, z);
    let g = |w: f64| tau * h_gamma(w, gamma) + w - z;
    let tol = 1e-15 * (1.0 + z);
    // linear-branch and saturated-branch candidates solve g exactly
    let cand_lin = z / (1.0 + tau * gamma);
    let cand_sat = z - tau;
    let (s_lo, s_hi) = band(gamma);
    if cand_lin <= s_lo {
        return sign * cand_lin;
    }
    if cand_sat >= s_hi {
        return sign * cand_sat;
    }
    let mut w = cand_lin.clamp(lo, hi);
    for _ in 0..80 {
        let gw = g(w);
        if gw.abs() <= tol {
            break;
        }
        if gw > 0.0 {
            hi = w;
        } else {
            lo = w;
        }
        let slope = tau * h_gamma_jacobian(w, gamma) + 1.0;
        let newton = w - gw / slope;
        w = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= tol {
            break;
        }
    }
    sign * w
}

/// Pointwise [`prox_huber_l1_scalar`] over a grid.
pub fn prox_huber_l1(z: &ImageGrid, tau: f64, gamma: f64) -> ImageGrid {
    let mut out = ImageGrid::zeros_like(z);
    let s = z.as_slice();
    parallel::fill_indexed(out.as_mut_slice(), |i| prox_huber_l1_scalar(s[i], tau, gamma));
    out
}

/// Optimal `v` of the regularised fidelity at fixed `u`:
/// `prox_{lambda1/(eps+lambda2)}(lambda2 (f-u) / (eps+lambda2))`.
pub fn v_regularized(
    u: &ImageGrid,
    f: &ImageGrid,
    params: &FidelityParams,
    smoothing: &SmoothingParams,
) -> Result<ImageGrid> {
    check_shapes("u", u, "f", f)?;
    let denom = smoothing.epsilon + params.lambda2;
    let mut scaled = ImageGrid::zeros_like(u);
    let (us, fs) = (u.as_slice(), f.as_slice());
    let c = params.lambda2 / denom;
    parallel::fill_indexed(scaled.as_mut_slice(), |i| c * (fs[i] - us[i]));
    Ok(prox_huber_l1(&scaled, params.lambda1 / denom, smoothing.gamma))
}

/// The regularised fidelity evaluated at an explicit pair `(u, v)`:
/// `eps/2 |v|^2 + lambda1 |v|_{gamma,L1} + lambda2/2 |f - u - v|^2`.
pub fn phi_ic_regularized(
    u: &ImageGrid,
    v: &ImageGrid,
    f: &ImageGrid,
    params: &FidelityParams,
    smoothing: &SmoothingParams,
) -> Result<f64> {
    check_shapes("u", u, "f", f)?;
    check_shapes("v", v, "f", f)?;
    let (us, vs, fs) = (u.as_slice(), v.as_slice(), f.as_slice());
    let h2 = u.mesh_h() * u.mesh_h();
    let (eps, l1, l2, gamma) =
        (smoothing.epsilon, params.lambda1, params.lambda2, smoothing.gamma);
    Ok(parallel::sum(us.len(), |i| {
        let r = fs[i] - us[i] - vs[i];
        0.5 * eps * vs[i] * vs[i]
            + l1 * h_gamma_antiderivative(vs[i], gamma)
            + 0.5 * l2 * r * r
    }) * h2)
}
