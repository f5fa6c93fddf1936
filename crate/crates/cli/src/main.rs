//! `deqpocs` command-line front end.

mod config;
mod pgm;

use clap::{Args, CommandFactory, Parser, Subcommand};
use config::ConfigFile;
use deqpocs_core::fixed_point::{Method, SolverSettings};
use deqpocs_core::forward::{Acs, MaskKind, Measurement};
use deqpocs_core::harness::{
    verify_convergence, verify_init_independence, verify_mask_transfer, verify_robustness,
    DEFAULT_MAX_ITER, DEFAULT_RATE_SLACK, DEFAULT_TOL, NOISE_LEVELS, PERTURBATION_LEVELS,
};
use deqpocs_core::metrics::{evaluate, evaluate_kspace, ssos_kspace, zero_filled, MetricsReport};
use deqpocs_core::net::{
    init_params, read_checkpoint, write_checkpoint, ConsistencyNetParams, Variant,
};
use deqpocs_core::phantom::{
    make_dataset, read_dataset, write_dataset, DatasetSpec, MaskSpec, Sample,
};
use deqpocs_core::spirit::{
    acs_region, calibrate_kernels, spirit_pocs_recon, DEFAULT_KERNEL_SIZE, DEFAULT_RIDGE,
};
use deqpocs_core::tensor::{read_ct01, write_ct01};
use deqpocs_core::train::{reconstruct, train, TrainConfig, TrainSample};
use deqpocs_core::{Error, KSpace};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    /// Bad arguments, unreadable or malformed input.
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    /// A check or certificate that did not hold.
    pub fn check(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Certificate(_) | Error::Divergence { .. } | Error::Training { .. } => {
                Failure::check(e.to_string())
            }
            _ => Failure::usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "deqpocs",
    version,
    about = "Certified deep-equilibrium POCS reconstruction for parallel MRI"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-coil dataset.
    GenData(GenDataArgs),
    /// Train a consistency network on a dataset.
    Train(TrainArgs),
    /// Reconstruct one sample with a checkpoint or a baseline.
    Recon(ReconArgs),
    /// Run SPIRiT on every sample of a dataset.
    Baseline(BaselineArgs),
    /// Check convergence, uniqueness and robustness of a checkpoint.
    Verify(VerifyArgs),
    /// Compare reconstructions against references.
    Eval(EvalArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Recon(_) => "recon",
            Command::Baseline(_) => "baseline",
            Command::Verify(_) => "verify",
            Command::Eval(_) => "eval",
        }
    }

    fn config_path(&self) -> Option<&Path> {
        match self {
            Command::GenData(a) => a.config.as_deref(),
            Command::Train(a) => a.config.as_deref(),
            Command::Recon(a) => a.config.as_deref(),
            Command::Baseline(a) => a.config.as_deref(),
            Command::Verify(a) => a.config.as_deref(),
            Command::Eval(a) => a.config.as_deref(),
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// picard or anderson.
    #[arg(long)]
    solver: Option<Method>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Anderson history length.
    #[arg(long)]
    memory: Option<usize>,
}

impl SolverArgs {
    fn settings(&self, cfg: &ConfigFile, tol: f64, max_iter: usize) -> Outcome<SolverSettings> {
        let method = cfg.pick(self.solver, "solver", Method::Anderson)?;
        let tol = cfg.pick(self.tol, "tol", tol)?;
        let max_iter = cfg.pick(self.max_iter, "max-iter", max_iter)?;
        let mut s = match method {
            Method::Picard => SolverSettings::picard(tol, max_iter),
            Method::Anderson => SolverSettings::anderson(tol, max_iter),
        };
        s.memory = cfg.pick(self.memory, "memory", s.memory)?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    coils: Option<usize>,
    /// 1d-cal, 2d-cal, 1d-free or 2d-free.
    #[arg(long)]
    mask: Option<MaskKind>,
    #[arg(long)]
    accel: Option<f64>,
    /// Calibration region: none, lines:N or region:RxC. Scaled default if omitted.
    #[arg(long)]
    acs: Option<String>,
    /// Relative noise level on the measured samples.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Index of the first generated sample.
    #[arg(long)]
    first_index: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch CSV report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// kspace or hybrid.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    bwd_tol: Option<f64>,
    #[arg(long)]
    bwd_max_iter: Option<usize>,
    /// Start each forward solve from the previous epoch's fixed point.
    #[arg(long)]
    warm_start: Option<bool>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReconArgs {
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sample index within the dataset.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use zerofill or spirit instead of a checkpoint.
    #[arg(long)]
    baseline: Option<String>,
    /// Output directory for recon.ct01, recon.pgm and residuals.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for the CSV reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Starting points per sample.
    #[arg(long)]
    inits: Option<usize>,
    #[arg(long)]
    slack: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Noise draws per level.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset with a different mask family, reported only.
    #[arg(long)]
    transfer_data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Fully sampled k-space (CT01), repeatable.
    #[arg(long)]
    reference: Vec<PathBuf>,
    /// Reconstructed k-space (CT01), one per reference.
    #[arg(long)]
    recon: Vec<PathBuf>,
    /// Metrics CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn required<T>(v: Option<T>, flag: &str) -> Outcome<T> {
    v.ok_or_else(|| Failure::usage(format!("--{flag} is required")))
}

fn parse_acs(s: &str) -> Outcome<Acs> {
    let bad = || Failure::usage(format!("bad --acs '{s}' (none, lines:N or region:RxC)"));
    if s == "none" {
        return Ok(Acs::None);
    }
    if let Some(n) = s.strip_prefix("lines:") {
        return n.parse().map(Acs::Lines).map_err(|_| bad());
    }
    if let Some(rc) = s.strip_prefix("region:") {
        let (r, c) = rc.split_once('x').ok_or_else(bad)?;
        return Ok(Acs::Region(
            r.parse().map_err(|_| bad())?,
            c.parse().map_err(|_| bad())?,
        ));
    }
    Err(bad())
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", path.display())))
}

fn load_dataset(dir: &Path) -> Outcome<Vec<(Sample, Measurement)>> {
    read_dataset(dir).map_err(|e| Failure::usage(format!("dataset {}: {e}", dir.display())))
}

fn load_checkpoint(path: &Path, grid: (usize, usize)) -> Outcome<ConsistencyNetParams> {
    let file = File::open(path)
        .map_err(|e| Failure::usage(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let (params, stored) = read_checkpoint(&mut BufReader::new(file), grid)?;
    log::info!("loaded {} (stored L={stored:.6})", path.display());
    Ok(params)
}

fn load_tensor(path: &Path) -> Outcome<KSpace> {
    let file = File::open(path)
        .map_err(|e| Failure::usage(format!("cannot open {}: {e}", path.display())))?;
    read_ct01(&mut BufReader::new(file))
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn grid_of(data: &[(Sample, Measurement)]) -> (usize, usize) {
    let (h, w, _) = data[0].1.y.shape();
    (h, w)
}

fn gen_data(a: GenDataArgs, cfg: &ConfigFile) -> Outcome {
    let out = required(cfg.pick_opt(a.out, "out")?, "out")?;
    let kind = cfg.pick(a.mask, "mask", MaskKind::Calibrated1D)?;
    let acs = cfg
        .pick_opt(a.acs, "acs")?
        .map(|s| parse_acs(&s))
        .transpose()?;
    let spec = DatasetSpec {
        count: cfg.pick(a.count, "count", 8)?,
        height: cfg.pick(a.height, "height", 32)?,
        width: cfg.pick(a.width, "width", 32)?,
        coils: cfg.pick(a.coils, "coils", 4)?,
        mask: MaskSpec {
            kind,
            accel: cfg.pick(a.accel, "accel", 4.0)?,
            acs,
        },
        noise: cfg.pick(a.noise, "noise", 0.0)?,
        seed: cfg.pick(a.seed, "seed", 0)?,
        first_index: cfg.pick(a.first_index, "first-index", 0)?,
    };
    let data = make_dataset(&spec)?;
    write_dataset(&out, &spec, &data)?;
    println!(
        "wrote {} samples ({}x{}, {} coils, {} R={}) to {}",
        spec.count,
        spec.height,
        spec.width,
        spec.coils,
        kind,
        spec.mask.accel,
        out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs, cfg: &ConfigFile) -> Outcome {
    let data_dir = required(cfg.pick_opt(a.data, "data")?, "data")?;
    let out = required(cfg.pick_opt(a.out, "out")?, "out")?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: cfg.pick(a.epochs, "epochs", defaults.epochs)?,
        learning_rate: cfg.pick(a.lr, "lr", defaults.learning_rate)?,
        forward: a
            .solver
            .settings(cfg, defaults.forward.tol, defaults.forward.max_iter)?,
        backward_tol: cfg.pick(a.bwd_tol, "bwd-tol", defaults.backward_tol)?,
        backward_max_iter: cfg.pick(a.bwd_max_iter, "bwd-max-iter", defaults.backward_max_iter)?,
        shuffle_seed: cfg.pick(a.seed, "seed", 0)?,
        warm_start: cfg.pick(a.warm_start, "warm-start", false)?,
        ..defaults
    };
    config.validate()?;
    let variant = cfg.pick(a.variant, "variant", Variant::KSpace)?;
    let blocks = cfg.pick(a.blocks, "blocks", 10)?;
    let features = cfg.pick(a.features, "features", 32)?;
    let data = load_dataset(&data_dir)?;
    let grid = grid_of(&data);
    let coils = data[0].1.y.channels();
    let params = init_params(variant, blocks, features, coils, grid, config.shuffle_seed)?;
    let samples: Vec<TrainSample> = data
        .into_iter()
        .map(|(s, meas)| TrainSample { full: s.full, meas })
        .collect();
    let (params, report) = train(params, &samples, &config)?;
    for e in 0..report.epochs() {
        println!(
            "epoch {:>4}  loss {:.6e}  fwd {:.1}  bwd {:.1}  L {:.6}",
            e + 1,
            report.mean_loss[e],
            report.mean_forward_iters[e],
            report.mean_backward_iters[e],
            report.lipschitz[e]
        );
    }
    let mut w = create(&out)?;
    write_checkpoint(&mut w, &params)?;
    w.flush()?;
    let report_path = cfg
        .pick_opt(a.report, "report")?
        .unwrap_or_else(|| out.with_extension("csv"));
    let mut w = create(&report_path)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "checkpoint {} (L={:.6}), report {}",
        out.display(),
        params.certified_lipschitz().lipschitz,
        report_path.display()
    );
    Ok(())
}

fn recon_cmd(a: ReconArgs, cfg: &ConfigFile) -> Outcome {
    let data_dir = required(cfg.pick_opt(a.data, "data")?, "data")?;
    let out = required(cfg.pick_opt(a.out, "out")?, "out")?;
    let index = cfg.pick(a.sample, "sample", 0)?;
    let baseline: Option<String> = cfg.pick_opt(a.baseline, "baseline")?;
    let settings = a.solver.settings(cfg, DEFAULT_TOL, 200)?;
    let data = load_dataset(&data_dir)?;
    let grid = grid_of(&data);
    let (sample, meas) = data.get(index).ok_or_else(|| {
        Failure::usage(format!(
            "sample {index} out of range ({} samples)",
            data.len()
        ))
    })?;
    let result = match baseline.as_deref() {
        None => {
            let ckpt = required(cfg.pick_opt(a.checkpoint, "checkpoint")?, "checkpoint")?;
            let params = load_checkpoint(&ckpt, grid)?;
            Some(reconstruct(&params, meas, None, &settings)?)
        }
        Some("spirit") => {
            let k = cfg.pick(a.kernel_size, "kernel-size", DEFAULT_KERNEL_SIZE)?;
            let ridge = cfg.pick(a.ridge, "ridge", DEFAULT_RIDGE)?;
            let kernels = calibrate_kernels(&acs_region(meas)?, k, ridge)?;
            Some(spirit_pocs_recon(
                &kernels,
                meas,
                settings.max_iter,
                settings.tol,
            )?)
        }
        Some("zerofill") => None,
        Some(other) => {
            return Err(Failure::usage(format!(
                "unknown baseline '{other}' (zerofill or spirit)"
            )))
        }
    };
    std::fs::create_dir_all(&out)?;
    let solution = result.as_ref().map_or(&meas.y, |r| &r.solution);
    let mut w = create(&out.join("recon.ct01"))?;
    write_ct01(&mut w, solution)?;
    w.flush()?;
    let image = if result.is_some() {
        ssos_kspace(solution)?
    } else {
        zero_filled(meas)?
    };
    let mut w = create(&out.join("recon.pgm"))?;
    pgm::write_pgm16(&mut w, &image)?;
    w.flush()?;
    if let Some(r) = &result {
        let mut w = create(&out.join("residuals.csv"))?;
        r.write_csv(&mut w)?;
        w.flush()?;
        println!(
            "{} iterations, converged {}, final residual {:.3e}",
            r.iterations,
            r.converged,
            r.final_residual()
        );
    }
    let m = evaluate(index, &image, &sample.reference)?;
    println!(
        "sample {index}: PSNR {:.2} dB, NMSE {:.4e}, SSIM {:.4}",
        m.psnr, m.nmse, m.ssim
    );
    Ok(())
}

fn baseline_cmd(a: BaselineArgs, cfg: &ConfigFile) -> Outcome {
    let data_dir = required(cfg.pick_opt(a.data, "data")?, "data")?;
    let out = required(cfg.pick_opt(a.out, "out")?, "out")?;
    let k = cfg.pick(a.kernel_size, "kernel-size", DEFAULT_KERNEL_SIZE)?;
    let ridge = cfg.pick(a.ridge, "ridge", DEFAULT_RIDGE)?;
    let max_iter = cfg.pick(a.max_iter, "max-iter", 100)?;
    let tol = cfg.pick(a.tol, "tol", DEFAULT_TOL)?;
    let data = load_dataset(&data_dir)?;
    std::fs::create_dir_all(&out)?;
    let mut spirit = MetricsReport::default();
    let mut zf = MetricsReport::default();
    for (i, (sample, meas)) in data.iter().enumerate() {
        let kernels = calibrate_kernels(&acs_region(meas)?, k, ridge)?;
        let res = spirit_pocs_recon(&kernels, meas, max_iter, tol)?;
        let mut w = create(&out.join(format!("sample_{i:04}_spirit.ct01")))?;
        write_ct01(&mut w, &res.solution)?;
        w.flush()?;
        if i == 0 {
            let mut w = create(&out.join("kernels_0000.sp01"))?;
            kernels.write_sp01(&mut w)?;
            w.flush()?;
        }
        spirit.push(evaluate_kspace(i, &res.solution, &sample.full)?);
        zf.push(evaluate(i, &zero_filled(meas)?, &sample.reference)?);
    }
    let mut w = create(&out.join("spirit_metrics.csv"))?;
    spirit.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out.join("zerofill_metrics.csv"))?;
    zf.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "SPIRiT PSNR {:.2} ± {:.2} dB, zero-fill {:.2} ± {:.2} dB over {} samples",
        spirit.psnr().0,
        spirit.psnr().1,
        zf.psnr().0,
        zf.psnr().1,
        data.len()
    );
    Ok(())
}

fn verify_cmd(a: VerifyArgs, cfg: &ConfigFile) -> Outcome {
    let ckpt = required(cfg.pick_opt(a.checkpoint, "checkpoint")?, "checkpoint")?;
    let data_dir = required(cfg.pick_opt(a.data, "data")?, "data")?;
    let out = required(cfg.pick_opt(a.out, "out")?, "out")?;
    let inits = cfg.pick(a.inits, "inits", 3)?;
    let slack = cfg.pick(a.slack, "slack", DEFAULT_RATE_SLACK)?;
    let trials = cfg.pick(a.trials, "trials", 20)?;
    let seed = cfg.pick(a.seed, "seed", 0)?;
    let settings = SolverSettings::picard(
        cfg.pick(a.tol, "tol", DEFAULT_TOL)?,
        cfg.pick(a.max_iter, "max-iter", DEFAULT_MAX_ITER)?,
    );
    settings.validate()?;
    if inits == 0 || trials == 0 {
        return Err(Failure::usage("--inits and --trials must be positive"));
    }
    let data = load_dataset(&data_dir)?;
    let params = load_checkpoint(&ckpt, grid_of(&data))?;
    let measurements: Vec<Measurement> = data.iter().map(|(_, m)| m.clone()).collect();
    std::fs::create_dir_all(&out)?;

    let conv = verify_convergence(&params, &measurements, inits, slack, &settings, seed)?;
    let mut w = create(&out.join("convergence.csv"))?;
    conv.write_csv(&mut w)?;
    w.flush()?;
    println!("{}", conv.summary());

    let rob = verify_robustness(
        &params,
        &measurements[0],
        &NOISE_LEVELS,
        trials,
        &settings,
        seed,
    )?;
    let mut w = create(&out.join("robustness.csv"))?;
    rob.write_csv(&mut w)?;
    w.flush()?;
    println!("{}", rob.summary());

    let mut w = create(&out.join("init_independence.csv"))?;
    let mut init_ok = true;
    for (k, meas) in measurements.iter().enumerate() {
        let rep = verify_init_independence(
            &params,
            meas,
            &PERTURBATION_LEVELS,
            1,
            &settings,
            seed.wrapping_add(k as u64),
        )?;
        if k == 0 {
            rep.write_csv(&mut w)?;
        } else {
            let mut buf = Vec::new();
            rep.write_csv(&mut buf)?;
            let body = buf.splitn(2, |&b| b == b'\n').nth(1).unwrap_or(&[]);
            w.write_all(body)?;
        }
        println!("sample {k} {}", rep.summary());
        init_ok &= rep.passed();
    }
    w.flush()?;

    if let Some(dir) = cfg.pick_opt::<PathBuf>(a.transfer_data, "transfer-data")? {
        let transfer = load_dataset(&dir)?;
        let (deq, zf) = verify_mask_transfer(&params, &transfer, &SolverSettings::default())?;
        let mut w = create(&out.join("transfer_deq.csv"))?;
        deq.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&out.join("transfer_zerofill.csv"))?;
        zf.write_csv(&mut w)?;
        w.flush()?;
        println!(
            "mask transfer: network PSNR {:.2} dB, zero-fill {:.2} dB",
            deq.psnr().0,
            zf.psnr().0
        );
    }

    if conv.passed() && rob.passed() && init_ok {
        println!("verify: PASS");
        Ok(())
    } else {
        Err(Failure::check("verify: FAIL"))
    }
}

fn eval_cmd(a: EvalArgs, cfg: &ConfigFile) -> Outcome {
    let out: Option<PathBuf> = cfg.pick_opt(a.out, "out")?;
    if a.reference.is_empty() {
        return Err(Failure::usage(
            "at least one --reference/--recon pair is required",
        ));
    }
    if a.reference.len() != a.recon.len() {
        return Err(Failure::usage(format!(
            "{} references but {} reconstructions",
            a.reference.len(),
            a.recon.len()
        )));
    }
    let mut report = MetricsReport::default();
    for (i, (r, x)) in a.reference.iter().zip(&a.recon).enumerate() {
        let full = load_tensor(r)?;
        let recon = load_tensor(x)?;
        report.push(evaluate_kspace(i, &recon, &full)?);
    }
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    match out {
        Some(path) => {
            let mut w = create(&path)?;
            w.write_all(&buf)?;
            w.flush()?;
        }
        None => std::io::stdout().write_all(&buf)?,
    }
    let (p, ps) = report.psnr();
    println!(
        "PSNR {p:.2} ± {ps:.2} dB over {} pairs",
        report.samples.len()
    );
    Ok(())
}

fn allowed_keys(name: &str) -> Vec<String> {
    Cli::command()
        .find_subcommand(name)
        .map(|c| {
            c.get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|l| *l != "config")
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn run(cli: Cli) -> Outcome {
    let cfg = ConfigFile::load(cli.command.config_path(), &allowed_keys(cli.command.name()))?;
    match cli.command {
        Command::GenData(a) => gen_data(a, &cfg),
        Command::Train(a) => train_cmd(a, &cfg),
        Command::Recon(a) => recon_cmd(a, &cfg),
        Command::Baseline(a) => baseline_cmd(a, &cfg),
        Command::Verify(a) => verify_cmd(a, &cfg),
        Command::Eval(a) => eval_cmd(a, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
