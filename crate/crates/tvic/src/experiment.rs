//! Noise synthesis, quality metrics, and the sweep drivers used to probe the
//! model's limiting behaviour and to learn weights across noise mixtures.

use crate::bilevel::{learn_parameters, BfgsConfig, CostKind, CostSpec, LearnResult};
use crate::denoise::{solve_lower_level, SolverConfig, SolverState};
use crate::error::TvicError;
use crate::fidelity::{phi_ic, smoothed_l1_field, FidelityParams, SmoothingParams};
use crate::grid::{check_shapes, gradient, ImageGrid};
use crate::parallel;
use crate::Result;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;

/// Mixed Gaussian + Salt & Pepper noise description. With `theta` set, the
/// effective Gaussian variance is `theta * sigma^2` and the effective
/// impulse density `(1 - theta) * density`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub gaussian_variance: f64,
    pub sp_density: f64,
    pub theta: Option<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(gaussian_variance: f64, sp_density: f64, seed: u64) -> Result<Self> {
        let spec = NoiseSpec { gaussian_variance, sp_density, theta: None, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        self.theta = Some(theta);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.gaussian_variance < 0.0 {
            return Err(TvicError::param("gaussian variance must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.sp_density) {
            return Err(TvicError::param("salt & pepper density must lie in [0, 1]"));
        }
        if let Some(t) = self.theta {
            if !(0.0..=1.0).contains(&t) {
                return Err(TvicError::param("theta must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Effective `(variance, density)` after applying the mixing weight.
    pub fn effective(&self) -> (f64, f64) {
        match self.theta {
            Some(t) => (t * self.gaussian_variance, (1.0 - t) * self.sp_density),
            None => (self.gaussian_variance, self.sp_density),
        }
    }
}

/// Adds Gaussian noise, then flips a uniformly chosen fraction of pixels to
/// 0 or 1 with equal probability, then clamps to `[0, 1]`. Bit-reproducible
/// for a fixed seed.
pub fn add_noise(clean: &ImageGrid, spec: &NoiseSpec) -> Result<ImageGrid> {
    spec.validate()?;
    let (variance, density) = spec.effective();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = clean.clone();
    let n = out.len();

    if variance > 0.0 {
        let normal = Normal::new(0.0, variance.sqrt())
            .map_err(|e| TvicError::param(format!("bad gaussian spec: {e}")))?;
        for slot in out.as_mut_slice() {
            *slot += normal.sample(&mut rng);
        }
    }

    let spikes = (density * n as f64).round() as usize;
    if spikes > 0 {
        // partial Fisher-Yates draw of `spikes` distinct pixels
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..spikes {
            let j = rng.random_range(i..n);
            idx.swap(i, j);
        }
        let data = out.as_mut_slice();
        for &k in &idx[..spikes] {
            data[k] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        }
    }

    for slot in out.as_mut_slice() {
        *slot = slot.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// PSNR in dB for images with dynamic range 1, capped at 200 dB.
pub fn psnr(u: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    check_shapes("u", u, "reference", reference)?;
    let (a, b) = (u.as_slice(), reference.as_slice());
    let mse = parallel::sum(a.len(), |i| {
        let d = a[i] - b[i];
        d * d
    }) / a.len() as f64;
    if mse == 0.0 {
        return Ok(200.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(200.0))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (k, slot) in w.iter_mut().enumerate() {
        let d = k as f64 - c;
        *slot = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *slot;
    }
    for slot in &mut w {
        *slot /= sum;
    }
    w
}

// Separable valid-mode Gaussian filter: output (rows - 10) x (cols - 10).
fn gauss_filter_valid(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let w = ssim_kernel();
    let cols_out = cols - SSIM_WINDOW + 1;
    let rows_out = rows - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; rows * cols_out];
    parallel::fill_indexed(&mut horiz, |idx| {
        let (i, j) = (idx / cols_out, idx % cols_out);
        let mut acc = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            acc += wk * data[i * cols + j + k];
        }
        acc
    });
    let mut out = vec![0.0; rows_out * cols_out];
    parallel::fill_indexed(&mut out, |idx| {
        let (i, j) = (idx / cols_out, idx % cols_out);
        let mut acc = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            acc += wk * horiz[(i + k) * cols_out + j];
        }
        acc
    });
    out
}

/// Mean structural similarity over all full 11x11 Gaussian windows
/// (sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1).
pub fn ssim(u: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    check_shapes("u", u, "reference", reference)?;
    let (rows, cols) = u.shape();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(TvicError::param(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {rows}x{cols}"
        )));
    }
    let x = u.as_slice();
    let y = reference.as_slice();
    let n = x.len();
    let sq = |s: &[f64]| -> Vec<f64> { s.iter().map(|v| v * v).collect() };
    let xy: Vec<f64> = (0..n).map(|i| x[i] * y[i]).collect();

    let mu_x = gauss_filter_valid(x, rows, cols);
    let mu_y = gauss_filter_valid(y, rows, cols);
    let exx = gauss_filter_valid(&sq(x), rows, cols);
    let eyy = gauss_filter_valid(&sq(y), rows, cols);
    let exy = gauss_filter_valid(&xy, rows, cols);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let m = mu_x.len();
    let total = parallel::sum(m, |i| {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = exx[i] - mx * mx;
        let var_y = eyy[i] - my * my;
        let cov = exy[i] - mx * my;
        ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2))
    });
    Ok(total / m as f64)
}

/// Mean pixel value.
pub fn mean_of(f: &ImageGrid) -> f64 {
    let s = f.as_slice();
    parallel::sum(s.len(), |i| s[i]) / s.len() as f64
}

/// Lower median pixel value.
pub fn median_of(f: &ImageGrid) -> f64 {
    let mut sorted = f.as_slice().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite grid data"));
    sorted[(sorted.len() - 1) / 2]
}

/// One record of [`asymptotic_sweep`].
#[derive(Debug, Clone, Copy)]
pub struct SweepRecord {
    pub step_index: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `|v|_1`.
    pub v_l1: f64,
    /// `|f - u - v|_2`.
    pub residual_l2: f64,
    /// `|u - f|_1`.
    pub u_f_l1: f64,
    /// `|u - median(f)|_1`.
    pub dist_median: f64,
    /// `|u - mean(f)|_1`.
    pub dist_mean: f64,
    /// `|u - reference|_2` against the supplied single-noise solution.
    pub dist_reference: Option<f64>,
    /// Gap between the smoothed energy of the iterate and the TV-L1 energy
    /// of the reference.
    pub energy_gap_l1: Option<f64>,
    pub solver_iterations: usize,
    pub converged: bool,
}

/// Runs the lower-level solver along a `(lambda1, lambda2)` schedule with
/// warm starts and records the limit diagnostics at every step.
pub fn asymptotic_sweep(
    f: &ImageGrid,
    schedule: &[(f64, f64)],
    smoothing: &SmoothingParams,
    cfg: &SolverConfig,
    reference: Option<&ImageGrid>,
) -> Result<Vec<SweepRecord>> {
    if schedule.is_empty() {
        return Err(TvicError::param("empty parameter schedule"));
    }
    let median = median_of(f);
    let mean = mean_of(f);
    let median_grid = ImageGrid::constant(f.rows(), f.cols(), median)?;
    let mean_grid = ImageGrid::constant(f.rows(), f.cols(), mean)?;

    let mut out = Vec::with_capacity(schedule.len());
    let mut warm: Option<SolverState> = None;
    for (step_index, &(l1, l2)) in schedule.iter().enumerate() {
        let params = FidelityParams::with_box(l1, l2, l1.max(100.0) * 10.0, l2.max(1000.0) * 10.0)?;
        let state = solve_lower_level(f, &params, smoothing, cfg, warm.as_ref())?;

        let diff = |a: &ImageGrid, b: &ImageGrid| -> Result<ImageGrid> {
            let mut d = ImageGrid::zeros_like(a);
            let (xs, ys) = (a.as_slice(), b.as_slice());
            parallel::fill_indexed(d.as_mut_slice(), |k| xs[k] - ys[k]);
            Ok(d)
        };
        let fit = {
            let mut d = ImageGrid::zeros_like(f);
            let (us, vs, fs) = (state.u.as_slice(), state.v.as_slice(), f.as_slice());
            parallel::fill_indexed(d.as_mut_slice(), |k| fs[k] - us[k] - vs[k]);
            d
        };
        let (dist_reference, energy_gap_l1) = match reference {
            Some(r) => {
                let dist = diff(&state.u, r)?.norm_l2();
                let tv_u = smoothed_l1_field(&gradient(&state.u), smoothing.gamma);
                let tv_r = smoothed_l1_field(&gradient(r), smoothing.gamma);
                let energy_u = tv_u + phi_ic(&state.u, f, &params)?;
                let energy_r = tv_r + l1 * diff(r, f)?.norm_l1();
                (Some(dist), Some((energy_u - energy_r).abs()))
            }
            None => (None, None),
        };
        out.push(SweepRecord {
            step_index,
            lambda1: l1,
            lambda2: l2,
            v_l1: state.v.norm_l1(),
            residual_l2: fit.norm_l2(),
            u_f_l1: diff(&state.u, f)?.norm_l1(),
            dist_median: diff(&state.u, &median_grid)?.norm_l1(),
            dist_mean: diff(&state.u, &mean_grid)?.norm_l1(),
            dist_reference,
            energy_gap_l1,
            solver_iterations: state.iterations,
            converged: state.converged,
        });
        warm = Some(state);
    }
    Ok(out)
}

/// One row of [`theta_sweep`].
#[derive(Debug, Clone)]
pub struct ThetaRecord {
    pub theta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub ssim_noisy: f64,
    pub ssim_denoised: f64,
    pub learn: LearnResult,
}

/// For each mixing weight `theta`, synthesises the noise mixture, learns the
/// weights from the pair `(clean, noisy)`, and records the quality metrics.
/// Sweep points run in parallel, each with its own seed offset.
#[allow(clippy::too_many_arguments)]
pub fn theta_sweep(
    clean: &ImageGrid,
    sigma2: f64,
    density: f64,
    thetas: &[f64],
    cost_kind: CostKind,
    smoothing: &SmoothingParams,
    bfgs: &BfgsConfig,
    solver_cfg: &SolverConfig,
    seed: u64,
) -> Result<Vec<ThetaRecord>> {
    if thetas.is_empty() {
        return Err(TvicError::param("empty theta list"));
    }
    let results: Vec<Result<ThetaRecord>> = parallel::map_collect(thetas.len(), |i| {
        let theta = thetas[i];
        let spec =
            NoiseSpec::new(sigma2, density, seed.wrapping_add(i as u64))?.with_theta(theta)?;
        let noisy = add_noise(clean, &spec)?;
        let cost_spec = CostSpec { kind: cost_kind, training_image: clean.clone(), gamma: smoothing.gamma };
        let learn = learn_parameters(&noisy, &cost_spec, smoothing, bfgs, solver_cfg)?;
        Ok(ThetaRecord {
            theta,
            lambda1: learn.lambda_opt.0,
            lambda2: learn.lambda_opt.1,
            psnr_noisy: psnr(&noisy, clean)?,
            psnr_denoised: psnr(&learn.final_state.u, clean)?,
            ssim_noisy: ssim(&noisy, clean)?,
            ssim_denoised: ssim(&learn.final_state.u, clean)?,
            learn,
        })
    });
    results.into_iter().collect()
}

/// Writes the fixed-header mixture-sweep CSV.
pub fn write_theta_csv(records: &[ThetaRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "theta,lambda1,lambda2,psnr_noisy,psnr_denoised,ssim_noisy,ssim_denoised"
    )?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.theta, r.lambda1, r.lambda2, r.psnr_noisy, r.psnr_denoised, r.ssim_noisy,
            r.ssim_denoised
        )?;
    }
    Ok(())
}

/// Writes the fixed-header asymptotic-sweep CSV.
pub fn write_sweep_csv(records: &[SweepRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "step_index,param1,param2,v_l1,residual_l2,dist_median,dist_mean")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.step_index, r.lambda1, r.lambda2, r.v_l1, r.residual_l2, r.dist_median,
            r.dist_mean
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(rows: usize, cols: usize) -> ImageGrid {
        ImageGrid::from_fn(rows, cols, |i, j| {
            let a = ((i as f64 * 0.37).sin() + (j as f64 * 0.53).cos()) * 0.15 + 0.5;
            if (i / 8 + j / 8) % 2 == 0 {
                a + 0.12
            } else {
                a - 0.12
            }
        })
        .unwrap()
    }

    #[test]
    fn add_noise_identity_and_full_corruption() {
        let clean = textured(16, 16);
        let id = add_noise(&clean, &NoiseSpec::new(0.0, 0.0, 1).unwrap()).unwrap();
        assert_eq!(id.as_slice(), clean.as_slice());

        let full = add_noise(&clean, &NoiseSpec::new(0.0, 1.0, 1).unwrap()).unwrap();
        assert!(full.as_slice().iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn add_noise_is_reproducible_and_respects_theta() {
        let clean = textured(24, 24);
        let spec = NoiseSpec::new(0.01, 0.1, 42).unwrap();
        let a = add_noise(&clean, &spec).unwrap();
        let b = add_noise(&clean, &spec).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());

        // theta = 1: no impulses at all (sigma small enough that the
        // [0, 1] clamp never saturates a pixel)
        let spec = NoiseSpec::new(1e-4, 0.5, 7).unwrap().with_theta(1.0).unwrap();
        let noisy = add_noise(&clean, &spec).unwrap();
        let extremes = noisy
            .as_slice()
            .iter()
            .filter(|&&x| x == 0.0 || x == 1.0)
            .count();
        assert_eq!(extremes, 0);

        // theta = 0: the full impulse density, no gaussian part
        let spec = NoiseSpec::new(1e-4, 0.5, 7).unwrap().with_theta(0.0).unwrap();
        let noisy = add_noise(&clean, &spec).unwrap();
        let extremes = noisy
            .as_slice()
            .iter()
            .filter(|&&x| x == 0.0 || x == 1.0)
            .count();
        assert_eq!(extremes, clean.len() / 2);
    }

    #[test]
    fn gaussian_component_has_the_requested_variance() {
        let clean = ImageGrid::constant(256, 256, 0.5).unwrap();
        let sigma2 = 0.005;
        let noisy = add_noise(&clean, &NoiseSpec::new(sigma2, 0.0, 11).unwrap()).unwrap();
        let n = clean.len() as f64;
        let mean: f64 = noisy
            .as_slice()
            .iter()
            .zip(clean.as_slice())
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / n;
        let var: f64 = noisy
            .as_slice()
            .iter()
            .zip(clean.as_slice())
            .map(|(a, b)| {
                let d = a - b - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        assert!(
            (var - sigma2).abs() <= 0.1 * sigma2,
            "empirical variance {var} vs {sigma2}"
        );
    }

    #[test]
    fn sp_density_hits_the_requested_count() {
        let clean = ImageGrid::constant(64, 64, 0.5).unwrap();
        let noisy = add_noise(&clean, &NoiseSpec::new(0.0, 0.1, 3).unwrap()).unwrap();
        let spiked = noisy
            .as_slice()
            .iter()
            .filter(|&&x| x == 0.0 || x == 1.0)
            .count();
        assert_eq!(spiked, (0.1 * 4096.0_f64).round() as usize);
    }

    #[test]
    fn psnr_examples() {
        let a = textured(16, 16);
        assert_eq!(psnr(&a, &a).unwrap(), 200.0);

        let mut b = a.clone();
        for s in b.as_mut_slice() {
            *s += 0.1;
        }
        let got = psnr(&b, &a).unwrap();
        assert!((got - 20.0).abs() < 1e-12, "uniform 0.1 error: {got} dB");
    }

    #[test]
    fn psnr_matches_naive_loop() {
        let a = textured(32, 32);
        let mut b = a.clone();
        for (k, s) in b.as_mut_slice().iter_mut().enumerate() {
            *s = (*s + 0.001 * ((k % 17) as f64 - 8.0)).clamp(0.0, 1.0);
        }
        let mut mse = 0.0;
        for (x, y) in b.as_slice().iter().zip(a.as_slice()) {
            mse += (x - y) * (x - y);
        }
        mse /= a.len() as f64;
        let naive = 10.0 * (1.0 / mse).log10();
        assert_eq!(psnr(&b, &a).unwrap(), naive);
    }

    /// Literal-formula SSIM: direct nested loops over every full window.
    fn ssim_reference(u: &ImageGrid, r: &ImageGrid) -> f64 {
        let w = ssim_kernel();
        let (rows, cols) = u.shape();
        let (x, y) = (u.as_slice(), r.as_slice());
        let c1 = SSIM_K1 * SSIM_K1;
        let c2 = SSIM_K2 * SSIM_K2;
        let mut acc = 0.0;
        let mut count = 0;
        for i0 in 0..=(rows - SSIM_WINDOW) {
            for j0 in 0..=(cols - SSIM_WINDOW) {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for a in 0..SSIM_WINDOW {
                    for b in 0..SSIM_WINDOW {
                        let wgt = w[a] * w[b];
                        let xv = x[(i0 + a) * cols + j0 + b];
                        let yv = y[(i0 + a) * cols + j0 + b];
                        mx += wgt * xv;
                        my += wgt * yv;
                        sxx += wgt * xv * xv;
                        syy += wgt * yv * yv;
                        sxy += wgt * xv * yv;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_examples_and_reference_agreement() {
        let a = textured(32, 32);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        let mut inverted = a.clone();
        for s in inverted.as_mut_slice() {
            *s = 1.0 - *s;
        }
        assert!(ssim(&inverted, &a).unwrap() < 0.5);

        let noisy = add_noise(&a, &NoiseSpec::new(0.01, 0.05, 5).unwrap()).unwrap();
        let fast = ssim(&noisy, &a).unwrap();
        let slow = ssim_reference(&noisy, &a);
        assert!((fast - slow).abs() <= 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn median_and_mean_examples() {
        let c = ImageGrid::constant(9, 9, 0.37).unwrap();
        assert!((mean_of(&c) - 0.37).abs() < 1e-12);
        assert_eq!(median_of(&c), 0.37);

        // sampled unit step: half zeros, half ones
        let step = crate::exact1d::StepSignal::new(1.0, 1.0, 1024).unwrap().sample();
        assert!((mean_of(&step) - 0.5).abs() < 1e-12);
        assert_eq!(median_of(&step), 0.0); // lower median

        // the mean minimises the squared deviation, the median the absolute
        let f = textured(16, 16);
        let (mean, median) = (mean_of(&f), median_of(&f));
        let mut best_sq = (f64::INFINITY, 0.0);
        let mut best_abs = (f64::INFINITY, 0.0);
        let mut cval = -0.05;
        while cval <= 1.05 {
            let sq: f64 = f.as_slice().iter().map(|x| (x - cval) * (x - cval)).sum();
            let ab: f64 = f.as_slice().iter().map(|x| (x - cval).abs()).sum();
            if sq < best_sq.0 {
                best_sq = (sq, cval);
            }
            if ab < best_abs.0 {
                best_abs = (ab, cval);
            }
            cval += 1e-3;
        }
        assert!((best_sq.1 - mean).abs() <= 2e-3);
        assert!((best_abs.1 - median).abs() <= 2e-3);
    }

    #[test]
    fn lambda1_sweep_drives_v_to_zero() {
        let clean = textured(16, 16);
        let noisy = add_noise(&clean, &NoiseSpec::new(0.002, 0.08, 9).unwrap()).unwrap();
        let schedule: Vec<(f64, f64)> =
            (0..=4).map(|k| (10f64.powi(k), 30.0)).collect();
        let recs = asymptotic_sweep(
            &noisy,
            &schedule,
            &SmoothingParams::default(),
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        for w in recs.windows(2) {
            assert!(
                w[1].v_l1 < w[0].v_l1,
                "v_l1 not strictly decreasing: {} -> {}",
                w[0].v_l1,
                w[1].v_l1
            );
        }
        assert!(recs.last().unwrap().v_l1 <= 1e-3);
    }

    #[test]
    fn empty_schedule_is_rejected() {
        let f = textured(16, 16);
        assert!(asymptotic_sweep(
            &f,
            &[],
            &SmoothingParams::default(),
            &SolverConfig::default(),
            None
        )
        .is_err());
    }

    #[test]
    fn median_and_mean_limits_on_a_small_image() {
        let f = ImageGrid::from_fn(32, 32, |i, j| {
            if (i * 32 + j) < 666 {
                0.75
            } else {
                0.25
            }
        })
        .unwrap();
        let sm = SmoothingParams::default();
        let cfg = SolverConfig { max_iter: 60, ..Default::default() };

        // lambda1 = t, lambda2 = sqrt(t), t -> 0: median limit
        let med_schedule: Vec<(f64, f64)> =
            [1.0f64, 1e-1, 1e-2, 1e-3, 1e-4].iter().map(|&t| (t, t.sqrt())).collect();
        let recs = asymptotic_sweep(&f, &med_schedule, &sm, &cfg, None).unwrap();
        assert!(recs.last().unwrap().dist_median <= 1e-2);

        // lambda2 = t, lambda1 = sqrt(t), t -> 0: mean limit
        let mean_schedule: Vec<(f64, f64)> =
            [1.0f64, 1e-1, 1e-2, 1e-3, 1e-4].iter().map(|&t| (t.sqrt(), t)).collect();
        let recs = asymptotic_sweep(&f, &mean_schedule, &sm, &cfg, None).unwrap();
        assert!(recs.last().unwrap().dist_mean <= 1e-2);
    }

    #[test]
    fn noise_decomposition_smoke() {
        // v should capture the impulses and leave clean pixels alone; two
        // large flat regions keep both the TV cost of the structure low and
        // the clean-pixel residuals at the gaussian scale
        let clean = ImageGrid::from_fn(32, 32, |_, j| if j < 16 { 0.3 } else { 0.7 }).unwrap();
        let spec = NoiseSpec::new(5e-4, 0.1, 21).unwrap();
        let noisy = add_noise(&clean, &spec).unwrap();
        let spikes: Vec<bool> = noisy
            .as_slice()
            .iter()
            .zip(clean.as_slice())
            .map(|(n, c)| (n - c).abs() > 0.2)
            .collect();
        let state = solve_lower_level(
            &noisy,
            &FidelityParams::with_box(8.0, 240.0, 100.0, 1000.0).unwrap(),
            &SmoothingParams::default(),
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        let mut on_spikes = 0;
        let mut spike_total = 0;
        let mut on_clean = 0;
        let mut clean_total = 0;
        for (k, &is_spike) in spikes.iter().enumerate() {
            let big = state.v.as_slice()[k].abs() > 0.1;
            if is_spike {
                spike_total += 1;
                if big {
                    on_spikes += 1;
                }
            } else {
                clean_total += 1;
                if big {
                    on_clean += 1;
                }
            }
        }
        assert!(spike_total > 0);
        assert!(
            on_spikes as f64 >= 0.9 * spike_total as f64,
            "v active on only {on_spikes}/{spike_total} spikes"
        );
        assert!(
            (on_clean as f64) < 0.05 * clean_total as f64,
            "v active on {on_clean}/{clean_total} clean pixels"
        );
    }
}
