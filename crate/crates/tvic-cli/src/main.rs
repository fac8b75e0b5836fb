//! `tvic` command line: joint Gaussian + Salt & Pepper denoising with a
//! TV-IC model, bilevel learning of the fidelity weights, noise synthesis,
//! the 1D closed-form oracle, and the sweep experiments.
//!
//! Exit codes: 0 success, 2 I/O error, 3 invalid configuration, 4 solver
//! breakdown.

mod config;
mod imgio;

use clap::{Args, Parser, Subcommand};
use config::{pick, pick_opt, ConfigFile};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;
use tvic::bilevel::{learn_parameters, BfgsConfig, CostKind, CostSpec};
use tvic::denoise::{solve_lower_level, SolverConfig};
use tvic::exact1d::{
    classify_regime, exact_solution, regime_lattice, verify_optimality, Regime, StepSignal,
};
use tvic::experiment::{
    add_noise, asymptotic_sweep, psnr, ssim, theta_sweep, write_sweep_csv, write_theta_csv,
    NoiseSpec,
};
use tvic::fidelity::{FidelityParams, SmoothingParams};
use tvic::{ImageGrid, TvicError};

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Config(String),
    Solver(String),
}

impl From<TvicError> for CliError {
    fn from(e: TvicError) -> Self {
        match e {
            TvicError::LinearSolver(_) | TvicError::NonFinite(_) => CliError::Solver(e.to_string()),
            TvicError::InvalidParameter(_) | TvicError::ShapeMismatch(..) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

#[derive(Parser)]
#[command(name = "tvic", version, about = "TV-IC denoising and fidelity-weight learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise an image at fixed weights; writes u, v and a JSON summary.
    Denoise(RawArgs),
    /// Learn (lambda1, lambda2) from a training pair; writes the iteration
    /// log, the result JSON and the final reconstruction.
    Learn(RawArgs),
    /// Synthesise a Gaussian + Salt & Pepper noise mixture.
    Synth(RawArgs),
    /// Closed-form 1D step solutions: regime, certificate and the regime
    /// diagram CSV.
    Exact1d(RawArgs),
    /// Parameter sweeps: noise-mixture learning or asymptotic schedules.
    Sweep(RawArgs),
}

#[derive(Args, Clone, Default)]
struct RawArgs {
    /// Input (noisy) image: 8/16-bit grayscale PNG, PGM, or a .tvic sidecar.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Clean/training image.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Lower-level residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Armijo parameter of the outer line search.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    tol_outer: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Training cost: l2 or huber.
    #[arg(long)]
    cost: Option<String>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    /// Comma-separated mixing weights for the theta sweep.
    #[arg(long)]
    thetas: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    box_l1: Option<f64>,
    #[arg(long)]
    box_l2: Option<f64>,
    /// Sweep mode: theta, v-vanish, median or mean.
    #[arg(long)]
    mode: Option<String>,
    /// Step half width L of the 1D oracle.
    #[arg(long)]
    step_l: Option<f64>,
    /// Step height h of the 1D oracle.
    #[arg(long)]
    step_height: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    lattice_n: Option<usize>,
    #[arg(long)]
    lattice_max1: Option<f64>,
    #[arg(long)]
    lattice_max2: Option<f64>,
    /// Flat key=value config file; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Fully resolved run configuration.
struct RunConfig {
    input: Option<PathBuf>,
    train: Option<PathBuf>,
    output_dir: PathBuf,
    lambda1: f64,
    lambda2: f64,
    smoothing: SmoothingParams,
    solver: SolverConfig,
    eta: f64,
    tol_outer: f64,
    max_outer: usize,
    cost: CostKind,
    sigma2: f64,
    density: f64,
    theta: Option<f64>,
    thetas: Vec<f64>,
    seed: u64,
    box_l1: f64,
    box_l2: f64,
    mode: String,
    step_l: f64,
    step_height: f64,
    samples: usize,
    lattice_n: usize,
    lattice_max1: Option<f64>,
    lattice_max2: Option<f64>,
}

impl RunConfig {
    fn resolve(args: RawArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => Some(ConfigFile::load(path)?),
            None => None,
        };
        let f = file.as_ref();

        let epsilon = pick(args.epsilon, f, "epsilon", 1e-10)?;
        let gamma = pick(args.gamma, f, "gamma", 1e3)?;
        let smoothing = SmoothingParams::new(epsilon, gamma)?;
        let tol = pick(args.tol, f, "tol", 1e-6)?;
        let max_iter = pick(args.max_iter, f, "max-iter", 35)?;
        if tol <= 0.0 || max_iter == 0 {
            return Err(CliError::Config("tol must be positive, max-iter >= 1".into()));
        }
        let eta = pick(args.eta, f, "eta", 1e-4)?;
        if !(0.0..1.0).contains(&eta) || eta == 0.0 {
            return Err(CliError::Config(format!("eta = {eta} outside (0, 1)")));
        }
        let tol_outer = pick(args.tol_outer, f, "tol-outer", 1e-6)?;
        if tol_outer <= 0.0 {
            return Err(CliError::Config("tol-outer must be positive".into()));
        }
        let cost = match pick(args.cost, f, "cost", "l2".to_string())?.as_str() {
            "l2" => CostKind::L2,
            "huber" => CostKind::HuberGradient,
            other => {
                return Err(CliError::Config(format!(
                    "cost must be l2 or huber, got {other:?}"
                )))
            }
        };
        let sigma2 = pick(args.sigma2, f, "sigma2", 0.005)?;
        let density = pick(args.density, f, "density", 0.1)?;
        if sigma2 < 0.0 || !(0.0..=1.0).contains(&density) {
            return Err(CliError::Config(
                "sigma2 must be nonnegative and density within [0, 1]".into(),
            ));
        }
        let theta = pick_opt(args.theta, f, "theta")?;
        if let Some(t) = theta {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Config(format!("theta = {t} outside [0, 1]")));
            }
        }
        let thetas_raw =
            pick(args.thetas, f, "thetas", "0,0.25,0.5,0.75,1".to_string())?;
        let thetas: Vec<f64> = thetas_raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::Config(format!("thetas entry {s:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if thetas.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(CliError::Config("thetas entries must lie in [0, 1]".into()));
        }

        let box_l1 = pick(args.box_l1, f, "box-l1", 100.0)?;
        let box_l2 = pick(args.box_l2, f, "box-l2", 1000.0)?;
        let lambda1 = pick(args.lambda1, f, "lambda1", 1.0)?;
        let lambda2 = pick(args.lambda2, f, "lambda2", 10.0)?;
        // weights are validated against the box when a command builds its
        // FidelityParams
        let step_l = pick(args.step_l, f, "step-l", 1.0)?;
        let step_height = pick(args.step_height, f, "step-height", 1.0)?;
        let samples = pick(args.samples, f, "samples", 1024)?;

        let input = match args.input {
            Some(p) => Some(p),
            None => f.and_then(|c| c.get("input")).map(PathBuf::from),
        };
        let train = match args.train {
            Some(p) => Some(p),
            None => f.and_then(|c| c.get("train")).map(PathBuf::from),
        };
        let output_dir = match args.output_dir {
            Some(p) => p,
            None => f
                .and_then(|c| c.get("output-dir"))
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(".")),
        };

        Ok(RunConfig {
            input,
            train,
            output_dir,
            lambda1,
            lambda2,
            smoothing,
            solver: SolverConfig { tol, max_iter, ..Default::default() },
            eta,
            tol_outer,
            max_outer: pick(args.max_outer, f, "max-outer", 100)?,
            cost,
            sigma2,
            density,
            theta,
            thetas,
            seed: pick(args.seed, f, "seed", 0)?,
            box_l1,
            box_l2,
            mode: pick(args.mode, f, "mode", "theta".to_string())?,
            step_l,
            step_height,
            samples,
            lattice_n: pick(args.lattice_n, f, "lattice-n", 100)?,
            lattice_max1: pick_opt(args.lattice_max1, f, "lattice-max1")?,
            lattice_max2: pick_opt(args.lattice_max2, f, "lattice-max2")?,
        })
    }

    fn fidelity(&self) -> Result<FidelityParams, CliError> {
        Ok(FidelityParams::with_box(self.lambda1, self.lambda2, self.box_l1, self.box_l2)?)
    }

    fn require_input(&self) -> Result<ImageGrid, CliError> {
        let path = self
            .input
            .as_ref()
            .ok_or_else(|| CliError::Config("--input is required".into()))?;
        imgio::load_grid(path)
    }

    fn require_train(&self) -> Result<ImageGrid, CliError> {
        let path = self
            .train
            .as_ref()
            .ok_or_else(|| CliError::Config("--train is required".into()))?;
        imgio::load_grid(path)
    }

    fn ensure_output_dir(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.output_dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", self.output_dir.display())))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Io(format!("serialising {name}: {e}")))?;
        imgio::write_text(&self.output_dir.join(name), &text)
    }
}

#[derive(Serialize)]
struct DenoiseSummary {
    lambda1: f64,
    lambda2: f64,
    energy: f64,
    iterations: usize,
    converged: bool,
    residual_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    psnr_noisy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    psnr_denoised: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ssim_noisy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ssim_denoised: Option<f64>,
}

fn cmd_denoise(cfg: &RunConfig) -> Result<(), CliError> {
    let params = cfg.fidelity()?;
    let f = cfg.require_input()?;
    let reference = cfg.train.as_deref().map(imgio::load_grid).transpose()?;
    cfg.ensure_output_dir()?;

    let state = solve_lower_level(&f, &params, &cfg.smoothing, &cfg.solver, None)?;
    imgio::save_outputs(&state.u, &cfg.output_dir, "u")?;
    // v is signed; the PNG shows it shifted by one half, the sidecar is exact
    let mut v_shifted = state.v.clone();
    for s in v_shifted.as_mut_slice() {
        *s += 0.5;
    }
    imgio::save_png16(&v_shifted, &cfg.output_dir.join("v.png"))?;
    imgio::save_sidecar(&state.v, &cfg.output_dir.join("v.tvic"))?;

    let (mut psnr_noisy, mut psnr_denoised, mut ssim_noisy, mut ssim_denoised) =
        (None, None, None, None);
    if let Some(reference) = &reference {
        psnr_noisy = Some(psnr(&f, reference)?);
        psnr_denoised = Some(psnr(&state.u, reference)?);
        ssim_noisy = Some(ssim(&f, reference)?);
        ssim_denoised = Some(ssim(&state.u, reference)?);
    }
    cfg.write_json(
        "denoise.json",
        &DenoiseSummary {
            lambda1: params.lambda1,
            lambda2: params.lambda2,
            energy: state.energy,
            iterations: state.iterations,
            converged: state.converged,
            residual_norm: state.residual_norm,
            psnr_noisy,
            psnr_denoised,
            ssim_noisy,
            ssim_denoised,
        },
    )
}

#[derive(Serialize)]
struct LearnSummary {
    lambda1: f64,
    lambda2: f64,
    cost: f64,
    converged: bool,
    line_search_failed: bool,
    outer_iterations: usize,
    multipliers: (f64, f64),
    psnr_denoised: f64,
    ssim_denoised: f64,
}

fn cmd_learn(cfg: &RunConfig) -> Result<(), CliError> {
    let train = cfg.require_train()?;
    let f = cfg.require_input()?;
    let bfgs = BfgsConfig {
        eta_armijo: cfg.eta,
        tol_outer: cfg.tol_outer,
        max_outer: cfg.max_outer,
        initial_lambda: (cfg.lambda1, cfg.lambda2),
        box_bounds: (cfg.box_l1, cfg.box_l2),
        max_halvings: 30,
    };
    let spec = CostSpec { kind: cfg.cost, training_image: train.clone(), gamma: cfg.smoothing.gamma };
    cfg.ensure_output_dir()?;

    let result = learn_parameters(&f, &spec, &cfg.smoothing, &bfgs, &cfg.solver)?;

    let mut csv = String::from("k,lambda1,lambda2,cost,grad_norm,alpha,lower_iterations\n");
    for r in &result.iterations {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.k, r.lambda1, r.lambda2, r.cost, r.grad_norm, r.alpha, r.lower_iterations
        )
        .expect("string write");
    }
    imgio::write_text(&cfg.output_dir.join("iterations.csv"), &csv)?;
    imgio::save_outputs(&result.final_state.u, &cfg.output_dir, "denoised")?;
    cfg.write_json(
        "learn.json",
        &LearnSummary {
            lambda1: result.lambda_opt.0,
            lambda2: result.lambda_opt.1,
            cost: *result.cost_history.last().expect("nonempty history"),
            converged: result.converged,
            line_search_failed: result.line_search_failed,
            outer_iterations: result.iterations.len() - 1,
            multipliers: result.multipliers,
            psnr_denoised: psnr(&result.final_state.u, &train)?,
            ssim_denoised: ssim(&result.final_state.u, &train)?,
        },
    )
}

#[derive(Serialize)]
struct SynthSummary {
    sigma2_effective: f64,
    density_effective: f64,
    seed: u64,
    psnr_noisy: f64,
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let clean = cfg.require_input()?;
    let mut spec = NoiseSpec::new(cfg.sigma2, cfg.density, cfg.seed)?;
    if let Some(t) = cfg.theta {
        spec = spec.with_theta(t)?;
    }
    cfg.ensure_output_dir()?;
    let noisy = add_noise(&clean, &spec)?;
    imgio::save_outputs(&noisy, &cfg.output_dir, "noisy")?;
    let (sigma2_effective, density_effective) = spec.effective();
    cfg.write_json(
        "synth.json",
        &SynthSummary {
            sigma2_effective,
            density_effective,
            seed: cfg.seed,
            psnr_noisy: psnr(&noisy, &clean)?,
        },
    )
}

#[derive(Serialize)]
struct Exact1dSummary {
    regime: String,
    regime_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    outside_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inside_value: Option<f64>,
    certificate_pass: bool,
    worst_violation: f64,
    dual_endpoint: f64,
    dual_bound_excess: f64,
    jump_mismatch: f64,
}

fn cmd_exact1d(cfg: &RunConfig) -> Result<(), CliError> {
    let step = StepSignal::new(cfg.step_l, cfg.step_height, cfg.samples)?;
    let params = cfg.fidelity()?;
    cfg.ensure_output_dir()?;

    let regime = classify_regime(&step, &params)?;
    let summary = if regime == Regime::Ambiguous {
        Exact1dSummary {
            regime: "ambiguous".into(),
            regime_code: regime.code(),
            outside_value: None,
            inside_value: None,
            certificate_pass: false,
            worst_violation: f64::NAN,
            dual_endpoint: f64::NAN,
            dual_bound_excess: f64::NAN,
            jump_mismatch: f64::NAN,
        }
    } else {
        let sol = exact_solution(&step, &params)?;
        let report = verify_optimality(&sol.representative, &step, &params, 1e-8)?;
        let u = sol.representative.as_slice();
        let f = step.sample();
        let mut csv = String::from("x,f,u\n");
        for k in 0..step.samples {
            writeln!(csv, "{},{},{}", step.coord(k), f.as_slice()[k], u[k])
                .expect("string write");
        }
        imgio::write_text(&cfg.output_dir.join("representative.csv"), &csv)?;
        Exact1dSummary {
            regime: format!("{:?}", sol.regime),
            regime_code: sol.regime.code(),
            outside_value: Some(u[0]),
            inside_value: Some(u[step.samples / 2]),
            certificate_pass: report.pass,
            worst_violation: report.worst_violation,
            dual_endpoint: report.endpoint,
            dual_bound_excess: report.bound_excess,
            jump_mismatch: report.jump_mismatch,
        }
    };
    cfg.write_json("exact1d.json", &summary)?;

    let max1 = cfg.lattice_max1.unwrap_or(3.0 / cfg.step_l);
    let max2 = cfg
        .lattice_max2
        .unwrap_or(3.0 * 2.0 / (cfg.step_height * cfg.step_l));
    let lattice = regime_lattice(&step, max1, max2, cfg.lattice_n)?;
    let mut csv = String::from("lambda1,lambda2,regime_code\n");
    for (l1, l2, regime) in lattice {
        writeln!(csv, "{},{},{}", l1, l2, regime.code()).expect("string write");
    }
    imgio::write_text(&cfg.output_dir.join("regime_diagram.csv"), &csv)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.ensure_output_dir()?;
    match cfg.mode.as_str() {
        "theta" => {
            let clean = cfg.require_train()?;
            let bfgs = BfgsConfig {
                eta_armijo: cfg.eta,
                tol_outer: cfg.tol_outer,
                max_outer: cfg.max_outer,
                initial_lambda: (cfg.lambda1, cfg.lambda2),
                box_bounds: (cfg.box_l1, cfg.box_l2),
                max_halvings: 30,
            };
            let records = theta_sweep(
                &clean,
                cfg.sigma2,
                cfg.density,
                &cfg.thetas,
                cfg.cost,
                &cfg.smoothing,
                &bfgs,
                &cfg.solver,
                cfg.seed,
            )?;
            let mut out = Vec::new();
            write_theta_csv(&records, &mut out)
                .map_err(|e| CliError::Io(format!("theta csv: {e}")))?;
            imgio::write_text(
                &cfg.output_dir.join("theta_sweep.csv"),
                std::str::from_utf8(&out).expect("csv is utf8"),
            )
        }
        mode @ ("v-vanish" | "median" | "mean") => {
            let f = cfg.require_input()?;
            let schedule: Vec<(f64, f64)> = match mode {
                "v-vanish" => (0..=4).map(|k| (10f64.powi(k), cfg.lambda2)).collect(),
                "median" => [1.0f64, 1e-1, 1e-2, 1e-3, 1e-4]
                    .iter()
                    .map(|&t| (t, t.sqrt()))
                    .collect(),
                _ => [1.0f64, 1e-1, 1e-2, 1e-3, 1e-4]
                    .iter()
                    .map(|&t| (t.sqrt(), t))
                    .collect(),
            };
            let records = asymptotic_sweep(&f, &schedule, &cfg.smoothing, &cfg.solver, None)?;
            let mut out = Vec::new();
            write_sweep_csv(&records, &mut out)
                .map_err(|e| CliError::Io(format!("sweep csv: {e}")))?;
            imgio::write_text(
                &cfg.output_dir.join("asymptotic_sweep.csv"),
                std::str::from_utf8(&out).expect("csv is utf8"),
            )
        }
        other => Err(CliError::Config(format!(
            "mode must be theta, v-vanish, median or mean, got {other:?}"
        ))),
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let (args, cmd): (RawArgs, fn(&RunConfig) -> Result<(), CliError>) = match cli.command {
        Command::Denoise(a) => (a, cmd_denoise),
        Command::Learn(a) => (a, cmd_learn),
        Command::Synth(a) => (a, cmd_synth),
        Command::Exact1d(a) => (a, cmd_exact1d),
        Command::Sweep(a) => (a, cmd_sweep),
    };
    let cfg = RunConfig::resolve(args)?;
    cmd(&cfg)
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(CliError::Io(msg)) => {
            eprintln!("I/O error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Config(msg)) => {
            eprintln!("invalid configuration: {msg}");
            std::process::exit(3);
        }
        Err(CliError::Solver(msg)) => {
            eprintln!("solver breakdown: {msg}");
            std::process::exit(4);
        }
    }
}
