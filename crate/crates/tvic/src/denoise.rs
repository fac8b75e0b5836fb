//! Damped Newton solver for the lower-level joint problem
//!
//! ```text
//! min_{u,v}  eps/2 (|u|_H1^2 + |v|^2) + |grad u|_{gamma,L1}
//!            + lambda1 |v|_{gamma,L1} + lambda2/2 |f - u - v|^2
//! ```
//!
//! The energy is strongly convex for `eps > 0` and C^2 away from the thin
//! Huber transition bands, so a plain Newton iteration on the first-order
//! system with Armijo damping on the residual norm (plus an energy decrease
//! safeguard) converges from any start. The iteration stops when either the
//! combined residual norm or the step between consecutive iterates drops
//! below `tol`.

use crate::error::TvicError;
use crate::fidelity::{
    h_gamma, h_gamma_vec, smoothed_l1_field, smoothed_l1_grid, v_regularized, FidelityParams,
    SmoothingParams,
};
use crate::grid::{check_shapes, divergence, gradient, ImageGrid, VectorField};
use crate::linsolve::{assemble_a_block, assemble_schur, NewtonSystem};
use crate::parallel;
use crate::Result;

/// Stopping and damping controls for the Newton iteration.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Residual / step tolerance in the combined discrete L2 norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo slope parameter for the residual-norm backtracking.
    pub armijo_c: f64,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-6, max_iter: 35, armijo_c: 1e-4, max_backtracks: 30 }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig { tol, ..Default::default() }
    }
}

/// Converged pair `(u, v)` with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub u: ImageGrid,
    pub v: ImageGrid,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final lower-level energy.
    pub energy: f64,
    /// Energy after every accepted step, starting from the initial point.
    pub energy_history: Vec<f64>,
}

/// The two components of the discrete first-order system at `(u, v)`:
///
/// ```text
/// R_u = eps u - div(eps grad u + h_gamma(grad u)) + lambda2 (u + v - f)
/// R_v = eps v + lambda1 h_gamma(v) + lambda2 (u + v - f)
/// ```
pub fn residual(
    u: &ImageGrid,
    v: &ImageGrid,
    f: &ImageGrid,
    params: &FidelityParams,
    smoothing: &SmoothingParams,
) -> Result<(ImageGrid, ImageGrid)> {
    check_shapes("u", u, "f", f)?;
    check_shapes("v", v, "f", f)?;
    let (eps, gamma) = (smoothing.epsilon, smoothing.gamma);
    let (l1, l2) = (params.lambda1, params.lambda2);

    let du = gradient(u);
    let mut flux = VectorField::zeros_like(u);
    {
        let (dx, dy) = (du.dx(), du.dy());
        let n = dx.len();
        let fx: Vec<f64> = parallel::map_collect(n, |k| {
            let hg = h_gamma_vec([dx[k], dy[k]], gamma);
            eps * dx[k] + hg[0]
        });
        let fy: Vec<f64> = parallel::map_collect(n, |k| {
            let hg = h_gamma_vec([dx[k], dy[k]], gamma);
            eps * dy[k] + hg[1]
        });
        flux.dx_mut().copy_from_slice(&fx);
        flux.dy_mut().copy_from_slice(&fy);
    }
    let div_flux = divergence(&flux);

    let (us, vs, fs, ds) = (u.as_slice(), v.as_slice(), f.as_slice(), div_flux.as_slice());
    let mut r_u = ImageGrid::zeros_like(u);
    parallel::fill_indexed(r_u.as_mut_slice(), |k| {
        eps * us[k] - ds[k] + l2 * (us[k] + vs[k] - fs[k])
    });
    let mut r_v = ImageGrid::zeros_like(u);
    parallel::fill_indexed(r_v.as_mut_slice(), |k| {
        eps * vs[k] + l1 * h_gamma(vs[k], gamma) + l2 * (us[k] + vs[k] - fs[k])
    });
    Ok((r_u, r_v))
}

/// Direct evaluation of the five energy terms.
pub fn lower_level_energy(
    u: &ImageGrid,
    v: &ImageGrid,
    f: &ImageGrid,
    params: &FidelityParams,
    smoothing: &SmoothingParams,
) -> Result<f64> {
    check_shapes("u", u, "f", f)?;
    check_shapes("v", v, "f", f)?;
    let du = gradient(u);
    let h1 = crate::grid::inner_product(u, u)? + du.inner(&du);
    let l2v = crate::grid::inner_product(v, v)?;
    let (us, vs, fs) = (u.as_slice(), v.as_slice(), f.as_slice());
    let h2 = u.mesh_h() * u.mesh_h();
    let fit = parallel::sum(us.len(), |k| {
        let r = fs[k] - us[k] - vs[k];
        r * r
    }) * h2;
    Ok(0.5 * smoothing.epsilon * (h1 + l2v)
        + smoothed_l1_field(&du, smoothing.gamma)
        + params.lambda1 * smoothed_l1_grid(v, smoothing.gamma)
        + 0.5 * params.lambda2 * fit)
}

fn combined_norm(r_u: &ImageGrid, r_v: &ImageGrid) -> f64 {
    let a = r_u.norm_l2();
    let b = r_v.norm_l2();
    (a * a + b * b).sqrt()
}

fn ensure_finite(grid: &ImageGrid, what: &str, iter: usize) -> Result<()> {
    if !grid.all_finite() {
        return Err(TvicError::NonFinite(format!("{what} at Newton iteration {iter}")));
    }
    Ok(())
}

/// Solves the lower-level problem by damped Newton, warm-started from `warm`
/// when provided and from `(u, v) = (f, 0)` otherwise.
pub fn solve_lower_level(
    f: &ImageGrid,
    params: &FidelityParams,
    smoothing: &SmoothingParams,
    cfg: &SolverConfig,
    warm: Option<&SolverState>,
) -> Result<SolverState> {
    let (state, _) = solve_lower_level_with_system(f, params, smoothing, cfg, warm)?;
    Ok(state)
}

// Smoothing stages for cold starts: Newton at large gamma is badly damped far
// from the solution, so ramp gamma up geometrically with warm starts between
// stages.
pub(crate) fn gamma_stages(target: f64) -> Vec<f64> {
    let mut stages = Vec::new();
    let mut g = 1.0;
    while g < target {
        stages.push(g);
        g *= 16.0;
    }
    stages.push(target);
    stages
}

/// Like [`solve_lower_level`] but also returns the Newton system factored at
/// the final iterate, for reuse by the adjoint and linearised-state solves.
pub fn solve_lower_level_with_system(
    f: &ImageGrid,
    params: &FidelityParams,
    smoothing: &SmoothingParams,
    cfg: &SolverConfig,
    warm: Option<&SolverState>,
) -> Result<(SolverState, NewtonSystem)> {
    if !f.all_finite() {
        return Err(TvicError::NonFinite("input image".into()));
    }
    let (mut u, cold) = match warm {
        Some(w) => {
            check_shapes("warm.u", &w.u, "f", f)?;
            (w.u.clone(), false)
        }
        None => (f.clone(), true),
    };

    let stages = if cold { gamma_stages(smoothing.gamma) } else { vec![smoothing.gamma] };
    let mut total_iterations = 0;
    let mut state = None;
    for &gamma in &stages {
        let stage_smoothing = SmoothingParams { gamma, ..*smoothing };
        let s = newton_solve(f, params, &stage_smoothing, cfg, u)?;
        total_iterations += s.iterations;
        u = s.u.clone();
        state = Some(s);
    }
    let mut state = state.expect("at least one smoothing stage");
    state.iterations = total_iterations;

    // refresh the factorisation at the final iterate so downstream solves see
    // exactly the converged pair
    let sys = NewtonSystem::assemble(&state.u, &state.v, params, smoothing)?;
    Ok((state, sys))
}

// Newton iteration on `u` alone, with `v` eliminated exactly through its
// proximal map at every residual and energy evaluation. The reduced energy
// E(u) = min_v E(u, v) has gradient R_u(u, v*(u)) and Hessian equal to the
// Schur complement of the joint second-order system, so the factorisation is
// shared with the adjoint and linearised solves.
//
// Two direction matrices are used. The exact Jacobian gives the fast local
// tail but is useless far from the solution: saturated Huber branches leave
// zero-curvature directions carrying order-one forces, so its steps are
// enormous and their quadratic model holds only inside the Huber band. The
// fallback floors the radial curvature at the secant slope (the lagged
// diffusivity matrix) and, when even that fails the line search, adds a
// Levenberg shift that escalates until a step is accepted. The exact matrix
// is tried first whenever the damping is quiescent.
fn newton_solve(
    f: &ImageGrid,
    params: &FidelityParams,
    smoothing: &SmoothingParams,
    cfg: &SolverConfig,
    mut u: ImageGrid,
) -> Result<SolverState> {
    let h2 = f.mesh_h() * f.mesh_h();
    let mut v = v_regularized(&u, f, params, smoothing)?;
    let mut energy = lower_level_energy(&u, &v, f, params, smoothing)?;
    let mut energy_history = vec![energy];
    let (mut r_u, mut r_v) = residual(&u, &v, f, params, smoothing)?;
    let mut res_norm = combined_norm(&r_u, &r_v);
    let mut converged = res_norm <= cfg.tol;
    let mut iterations = 0;
    let mut sigma = 0.0_f64;

    // line search along `du`; on success updates the iterate and returns the
    // accepted step length
    macro_rules! try_direction {
        ($du:expr, $max_halvings:expr) => {{
            let du: &[f64] = $du;
            let slope =
                h2 * r_u.as_slice().iter().zip(du).map(|(r, d)| r * d).sum::<f64>();
            let mut alpha = 1.0_f64;
            let mut taken = None;
            for _ in 0..=$max_halvings {
                let mut u_try = u.clone();
                for (slot, d) in u_try.as_mut_slice().iter_mut().zip(du) {
                    *slot += alpha * d;
                }
                ensure_finite(&u_try, "u", iterations)?;
                let v_try = v_regularized(&u_try, f, params, smoothing)?;
                let (ru_try, rv_try) = residual(&u_try, &v_try, f, params, smoothing)?;
                let res_try = combined_norm(&ru_try, &rv_try);
                let energy_try = lower_level_energy(&u_try, &v_try, f, params, smoothing)?;
                let res_ok = res_try <= (1.0 - cfg.armijo_c * alpha) * res_norm
                    && energy_try <= energy + 1e-12 * (1.0 + energy.abs());
                let energy_ok = energy_try
                    <= energy + cfg.armijo_c * alpha * slope + 1e-14 * (1.0 + energy.abs());
                if res_ok || energy_ok {
                    u = u_try;
                    v = v_try;
                    r_u = ru_try;
                    r_v = rv_try;
                    res_norm = res_try;
                    energy = energy_try;
                    energy_history.push(energy);
                    taken = Some(alpha);
                    break;
                }
                alpha *= 0.5;
            }
            taken
        }};
    }

    let reduced_rhs = |r_u: &ImageGrid, r_v: &ImageGrid, b_diag: &[f64]| -> Vec<f64> {
        let l2 = params.lambda2;
        (0..r_u.len())
            .map(|k| -(r_u.as_slice()[k] - l2 * r_v.as_slice()[k] / b_diag[k]))
            .collect()
    };

    'outer: while !converged && iterations < cfg.max_iter {
        // exact Jacobian first when undamped: quadratic tail
        if sigma == 0.0 {
            let (schur, b_diag) = assemble_schur(&u, &v, params, smoothing, false);
            if let Ok(chol) = schur.factor() {
                let mut du = reduced_rhs(&r_u, &r_v, &b_diag);
                chol.solve_in_place(&mut du);
                let step_norm =
                    du.iter().map(|x| x * x).sum::<f64>().sqrt() * f.mesh_h();
                if let Some(alpha) = try_direction!(&du, 6) {
                    iterations += 1;
                    if res_norm <= cfg.tol || (alpha == 1.0 && step_norm <= cfg.tol) {
                        converged = true;
                    }
                    continue 'outer;
                }
            }
        }

        // globalised direction: secant-floored curvature plus an escalating
        // Levenberg shift
        let (schur, b_diag) = assemble_schur(&u, &v, params, smoothing, true);
        let diag_scale = schur.max_diagonal();
        let rhs = reduced_rhs(&r_u, &r_v, &b_diag);
        for _escalation in 0..12 {
            let mut shifted = schur.clone();
            if sigma > 0.0 {
                shifted.shift_diagonal(sigma);
            }
            let chol = shifted.factor()?;
            let mut du = rhs.clone();
            chol.solve_in_place(&mut du);
            if let Some(alpha) = try_direction!(&du, cfg.max_backtracks.min(12)) {
                iterations += 1;
                if alpha == 1.0 {
                    sigma = if sigma > 1e-14 * diag_scale { 0.25 * sigma } else { 0.0 };
                }
                if res_norm <= cfg.tol {
                    converged = true;
                }
                continue 'outer;
            }
            sigma = if sigma == 0.0 { 1e-10 * diag_scale } else { 16.0 * sigma };
            if sigma > diag_scale {
                break;
            }
        }
        // no step accepted even under heavy damping: numerically stagnant
        break;
    }
    converged = converged || res_norm <= cfg.tol;

    Ok(SolverState {
        u,
        v,
        residual_norm: res_norm,
        iterations,
        converged,
        energy,
        energy_history,
    })
}

/// Huber-TV denoising with a pure quadratic fidelity: the same problem with
/// `v` frozen at zero and fit term `lambda2/2 |f - u|^2`.
pub fn solve_huber_tv_l2(
    f: &ImageGrid,
    lambda2: f64,
    smoothing: &SmoothingParams,
    cfg: &SolverConfig,
) -> Result<SolverState> {
    if lambda2 < 0.0 {
        return Err(TvicError::param("lambda2 must be nonnegative"));
    }
    let mut u = f.clone();
    let mut total_iterations = 0;
    let mut state = None;
    for &gamma in &gamma_stages(smoothing.gamma) {
        let stage = SmoothingParams { gamma, ..*smoothing };
        let s = newton_solve_quadratic(f, lambda2, &stage, cfg, u)?;
        total_iterations += s.iterations;
        u = s.u.clone();
        state = Some(s);
    }
    let mut state = state.expect("at least one smoothing stage");
    state.iterations = total_iterations;
    Ok(state)
}

fn newton_solve_quadratic(
    f: &ImageGrid,
    lambda2: f64,
    smoothing: &SmoothingParams,
    cfg: &SolverConfig,
    mut u: ImageGrid,
) -> Result<SolverState> {
    let (eps, gamma) = (smoothing.epsilon, smoothing.gamma);
    let h2 = f.mesh_h() * f.mesh_h();

    let res = |u: &ImageGrid| -> ImageGrid {
        let du = gradient(u);
        let mut flux = VectorField::zeros_like(u);
        let (dx, dy) = (du.dx(), du.dy());
        let n = dx.len();
        let fx: Vec<f64> = parallel::map_collect(n, |k| {
            let hg = h_gamma_vec([dx[k], dy[k]], gamma);
            eps * dx[k] + hg[0]
        });
        let fy: Vec<f64> = parallel::map_collect(n, |k| {
            let hg = h_gamma_vec([dx[k], dy[k]], gamma);
            eps * dy[k] + hg[1]
        });
        flux.dx_mut().copy_from_slice(&fx);
        flux.dy_mut().copy_from_slice(&fy);
        let div_flux = divergence(&flux);
        let mut r = ImageGrid::zeros_like(u);
        let (us, fs, ds) = (u.as_slice(), f.as_slice(), div_flux.as_slice());
        parallel::fill_indexed(r.as_mut_slice(), |k| {
            eps * us[k] - ds[k] + lambda2 * (us[k] - fs[k])
        });
        r
    };
    let energy_of = |u: &ImageGrid| -> Result<f64> {
        let du = gradient(u);
        let h1 = crate::grid::inner_product(u, u)? + du.inner(&du);
        let (us, fs) = (u.as_slice(), f.as_slice());
        let fit = parallel::sum(us.len(), |k| {
            let r = fs[k] - us[k];
            r * r
        }) * h2;
        Ok(0.5 * eps * h1 + smoothed_l1_field(&du, gamma) + 0.5 * lambda2 * fit)
    };

    let mut r = res(&u);
    let mut res_norm = r.norm_l2();
    let mut energy = energy_of(&u)?;
    let mut energy_history = vec![energy];
    let mut converged = res_norm <= cfg.tol;
    let mut iterations = 0;
    let mut sigma = 0.0_f64;

    'outer: while !converged && iterations < cfg.max_iter {
        let a = assemble_a_block(&u, lambda2, smoothing, true);
        let diag_scale = a.max_diagonal();
        let rhs: Vec<f64> = r.as_slice().iter().map(|x| -x).collect();

        for _escalation in 0..12 {
            let mut shifted = a.clone();
            if sigma > 0.0 {
                shifted.shift_diagonal(sigma);
            }
            let chol = shifted.factor()?;
            let mut step = rhs.clone();
            chol.solve_in_place(&mut step);
            let step_norm = step.iter().map(|x| x * x).sum::<f64>().sqrt() * f.mesh_h();
            let slope =
                h2 * r.as_slice().iter().zip(&step).map(|(ri, d)| ri * d).sum::<f64>();

            let mut alpha = 1.0_f64;
            for _ in 0..=cfg.max_backtracks.min(12) {
                let mut u_try = u.clone();
                for (slot, d) in u_try.as_mut_slice().iter_mut().zip(&step) {
                    *slot += alpha * d;
                }
                ensure_finite(&u_try, "u", iterations)?;
                let r_try = res(&u_try);
                let res_try = r_try.norm_l2();
                let energy_try = energy_of(&u_try)?;
                let res_ok = res_try <= (1.0 - cfg.armijo_c * alpha) * res_norm
                    && energy_try <= energy + 1e-12 * (1.0 + energy.abs());
                let energy_ok = energy_try
                    <= energy + cfg.armijo_c * alpha * slope + 1e-14 * (1.0 + energy.abs());
                if res_ok || energy_ok {
                    u = u_try;
                    r = r_try;
                    res_norm = res_try;
                    energy = energy_try;
                    energy_history.push(energy);
                    if alpha == 1.0 {
                        sigma = if sigma > 1e-14 * diag_scale { 0.25 * sigma } else { 0.0 };
                        if res_norm <= cfg.tol
                            || (sigma == 0.0 && step_norm <= cfg.tol)
                        {
                            converged = true;
                        }
                    }
                    iterations += 1;
                    if res_norm <= cfg.tol {
                        converged = true;
                    }
                    continue 'outer;
                }
                alpha *= 0.5;
            }
            sigma = if sigma == 0.0 { 1e-10 * diag_scale } else { 16.0 * sigma };
            if sigma > diag_scale {
                break;
            }
        }
        // no step accepted even under heavy damping: numerically stagnant
        break;
    }
    converged = converged || res_norm <= cfg.tol;

    Ok(SolverState {
        v: ImageGrid::zeros_like(&u),
        u,
        residual_norm: res_norm,
        iterations,
        converged,
        energy,
        energy_history,
    })
}
