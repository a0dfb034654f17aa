use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use spiralkit::diffusion::{sample_reconstruct, DenoiserConfig, DenoiserKind, GuidanceConfig, NoiseSchedule};
use spiralkit::io;
use spiralkit::metrics::score_rss;
use spiralkit::nufft::{cg_inverse, CgOptions, NufftOptions, NufftPlan};
use spiralkit::phantom::{rss_combine, CoilProfile, PhantomKind, PhantomSpec};
use spiralkit::sweep::{emit_heatmap_csv, run_grid_search_with_progress, simulate_case, SweepConfig};
use spiralkit::trajgen::{design_spiral, SpiralSpec};
use spiralkit::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "spiralkit", version, about = "Spiral MRI trajectory design, simulation and reconstruction")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "SPIRALKIT_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a variable-density spiral and write it as CSV.
    Design(DesignArgs),
    /// Simulate a multicoil acquisition of a phantom along a trajectory.
    Simulate(SimulateArgs),
    /// Reconstruct coil images from measurements.
    Recon(ReconArgs),
    /// Score a reconstruction against a reference (prints JSON).
    Eval(EvalArgs),
    /// Grid search over interleaves and alpha.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    matrix: usize,
    #[arg(long)]
    fov_cm: f64,
    #[arg(long)]
    interleaves: usize,
    #[arg(long)]
    alpha: f64,
    /// Total readout across all interleaves, seconds.
    #[arg(long)]
    readout_s: f64,
    #[arg(long, default_value_t = 4e-6)]
    dwell_s: f64,
    #[arg(long, default_value_t = 40.0)]
    gmax_mt_per_m: f64,
    #[arg(long, default_value_t = 150.0)]
    smax_t_per_m_per_s: f64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomArg {
    SheppLogan,
    RandomEllipses,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoilArg {
    Gaussian,
    BirdcageLike,
}

/// Image grid the trajectory CSV (cycles/cm) is normalized against.
#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    matrix: usize,
    #[arg(long)]
    fov_cm: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value = "shepp-logan")]
    phantom: PhantomArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    coils: usize,
    #[arg(long, value_enum, default_value = "gaussian")]
    coil_profile: CoilArg,
    /// Complex noise std per component; default is 0.5% of peak |y|.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Measurements (cplx, dims [coils, samples]).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth coil images (cplx, dims [coils, h, w]).
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Cg,
    Diffusion,
}

#[derive(Clone, Copy, ValueEnum)]
enum DenoiserArg {
    Gaussian,
    Shrinkage,
}

#[derive(Args)]
struct ReconArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    meas: PathBuf,
    #[arg(long, value_enum, default_value = "cg")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "gaussian")]
    denoiser: DenoiserArg,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    threshold_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 4.0)]
    c2: f64,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 10.0)]
    sigma_max: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma_min: f64,
    /// Inner CG iterations for the prior and each guidance step.
    #[arg(long, default_value_t = 10)]
    cg_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    cg_tol: f64,
    #[arg(long)]
    inject_noise: bool,
    /// Iterations for `--method cg`.
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0.0)]
    l2_reg: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reconstructed coil images (cplx).
    #[arg(long)]
    out: PathBuf,
    /// RSS preview as 8-bit PGM.
    #[arg(long)]
    preview: Option<PathBuf>,
    /// Per-step sampler log CSV (diffusion only).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

type CmdResult = spiralkit::Result<()>;

fn repro(command: &str, seed: Option<u64>, config: serde_json::Value) {
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    eprintln!("spiralkit {} {command} seed={seed} config={config}", env!("CARGO_PKG_VERSION"));
}

fn load_plan(grid: &GridArgs) -> spiralkit::Result<NufftPlan> {
    let table = io::read_trajectory_csv(BufReader::new(File::open(&grid.traj)?))?;
    if !(grid.fov_cm > 0.0) || grid.matrix < 2 {
        return Err(Error::InvalidParameter("matrix must be >= 2 and fov-cm > 0".into()));
    }
    Ok(NufftPlan::new(table.normalized_coords(grid.matrix, grid.fov_cm), grid.matrix, NufftOptions::default())?)
}

fn design(a: DesignArgs) -> CmdResult {
    let spec = SpiralSpec {
        matrix_size: a.matrix,
        fov_cm: a.fov_cm,
        interleaves: a.interleaves,
        alpha: a.alpha,
        total_readout_s: a.readout_s,
        dwell_s: a.dwell_s,
        gmax_mt_per_m: a.gmax_mt_per_m,
        smax_t_per_m_per_s: a.smax_t_per_m_per_s,
    };
    repro("design", None, json!({ "spec": spec, "out": a.out }));
    let traj = design_spiral(&spec)?;
    eprintln!(
        "designed {} interleaves x {} samples, {:.4} turns, kmax {:.6} cycles/cm",
        traj.interleaves.len(),
        traj.samples_per_interleaf(),
        traj.turns,
        traj.kmax
    );
    match &a.out {
        Some(p) => io::write_trajectory_csv(BufWriter::new(File::create(p)?), &traj)?,
        None => io::write_trajectory_csv(std::io::stdout().lock(), &traj)?,
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let phantom = PhantomSpec {
        size: a.grid.matrix,
        kind: match a.phantom {
            PhantomArg::SheppLogan => PhantomKind::SheppLogan,
            PhantomArg::RandomEllipses => PhantomKind::RandomEllipses,
        },
        seed: a.seed,
        coils: a.coils,
        coil_profile: match a.coil_profile {
            CoilArg::Gaussian => CoilProfile::Gaussian,
            CoilArg::BirdcageLike => CoilProfile::BirdcageLike,
        },
        noise_sigma: a.noise_sigma,
    };
    repro(
        "simulate",
        Some(a.seed),
        json!({ "phantom": phantom, "traj": a.grid.traj, "matrix": a.grid.matrix, "fov_cm": a.grid.fov_cm, "out": a.out, "truth_out": a.truth_out }),
    );
    let plan = load_plan(&a.grid)?;
    let case = simulate_case(&plan, &phantom, a.seed)?;
    io::write_measurements(&a.out, &case.meas)?;
    if let Some(p) = &a.truth_out {
        io::write_image(p, &case.truth)?;
    }
    Ok(())
}

fn recon(a: ReconArgs) -> CmdResult {
    let cg = CgOptions {
        max_iters: a.max_iters,
        tol: a.tol,
        l2_reg: a.l2_reg,
    };
    let guidance = GuidanceConfig {
        beta: a.beta,
        c1: a.c1,
        c2: a.c2,
        cg_iters: a.cg_iters,
        cg_tol: a.cg_tol,
        inject_noise: a.inject_noise,
    };
    let schedule = NoiseSchedule {
        sigma_max: a.sigma_max,
        sigma_min: a.sigma_min,
        steps: a.steps,
    };
    let denoiser = DenoiserConfig {
        kind: match a.denoiser {
            DenoiserArg::Gaussian => DenoiserKind::Gaussian,
            DenoiserArg::Shrinkage => DenoiserKind::Shrinkage,
        },
        tau: a.tau,
        threshold_scale: a.threshold_scale,
    };
    let config = match a.method {
        MethodArg::Cg => json!({ "method": "cg", "cg": cg }),
        MethodArg::Diffusion => json!({ "method": "diffusion", "guidance": guidance, "schedule": schedule, "denoiser": denoiser }),
    };
    repro(
        "recon",
        Some(a.seed),
        json!({ "recon": config, "traj": a.grid.traj, "meas": a.meas, "matrix": a.grid.matrix, "fov_cm": a.grid.fov_cm, "out": a.out }),
    );
    let plan = load_plan(&a.grid)?;
    let meas = io::read_measurements(&a.meas)?;
    let image = match a.method {
        MethodArg::Cg => {
            let (img, report) = cg_inverse(&plan, &meas, cg)?;
            eprintln!(
                "cg: {} iterations, final relative residual {:.3e}",
                report.max_iterations(),
                report.max_final_residual()
            );
            img
        }
        MethodArg::Diffusion => {
            let den = denoiser.build()?;
            let out = sample_reconstruct(&plan, &meas, den.as_ref(), &schedule, &guidance, a.seed)?;
            if let Some(p) = &a.log {
                io::write_step_log(BufWriter::new(File::create(p)?), &out.log)?;
            }
            out.image
        }
    };
    if a.log.is_some() && a.method == MethodArg::Cg {
        eprintln!("note: --log is only written for --method diffusion");
    }
    io::write_image(&a.out, &image)?;
    if let Some(p) = &a.preview {
        let rss = rss_combine(&image);
        io::write_pgm(BufWriter::new(File::create(p)?), &rss, rss.max())?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    repro("eval", None, json!({ "ref": a.reference, "test": a.test }));
    let reference = io::read_image(&a.reference)?;
    let test = io::read_image(&a.test)?;
    let scores = score_rss(&reference, &test)?;
    println!("{}", json!({ "ssim": scores.ssim, "nrmse": scores.nrmse }));
    Ok(())
}

fn sweep(a: SweepArgs, workers: Option<usize>) -> CmdResult {
    let mut config: SweepConfig = match &a.config {
        Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))
            .map_err(|e| Error::InvalidParameter(format!("{}: {e}", p.display())))?,
        None => SweepConfig::default(),
    };
    if let Some(w) = workers {
        config.workers = w;
    }
    repro("sweep", Some(config.seed), json!({ "config": config, "out": a.out }));
    let total = config.interleaves_list.len() * config.alpha_list.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let result = run_grid_search_with_progress(&config, |row| {
        let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        let ssim = row.ssim.map_or_else(|| "-".to_string(), |s| format!("{s:.4}"));
        eprintln!(
            "[{n}/{total}] interleaves={} alpha={} feasible={} ssim={ssim}",
            row.interleaves, row.alpha, row.feasible
        );
    })?;
    emit_heatmap_csv(&result, &a.out)?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalBreakdown { .. } => EXIT_NUMERICAL,
        _ => EXIT_INVALID,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if !matches!(cli.command, Command::Sweep(_)) {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
        }
    }
    let result = match cli.command {
        Command::Design(a) => design(a),
        Command::Simulate(a) => simulate(a),
        Command::Recon(a) => recon(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a, cli.workers),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = std::io::stderr().flush();
            ExitCode::from(exit_code(&e))
        }
    }
}
