//! `cdlsr`: coupled dictionary training, guided super-resolution, image
//! evaluation and the synthetic experiment suites.
//!
//! Results go to stdout as JSON, progress to stderr. Exit codes: 0 on
//! success, 1 for usage and configuration errors, 2 for runtime errors and
//! failed thresholds.

mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use cdlsr::container::{load_dictionary_set, save_dictionary_set};
use cdlsr::imaging::{build_training_batch, read_image, write_image, BatchSpec, Image};
use cdlsr::learning::{train, with_workers, SingleModalityDictionaries};
use cdlsr::metrics::{psnr, ssim};
use cdlsr::model::TrainConfig;
use cdlsr::sr::{super_resolve_image, super_resolve_without_side_info, Solver, SrConfig};
use cdlsr::synth::{
    csr_report, find_point, line_plot_svg, number, run_cdl_recovery, run_csr_experiment, CsrArm, CsrOptions,
    CsrSource, ExperimentReport, Series, Sparsities, SynthConfig,
};

use config::{normalize_key, FileConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or values.
    Usage(String),
    /// Anything that went wrong while running a valid command.
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Failure(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<cdlsr::Error> for CliError {
    fn from(e: cdlsr::Error) -> Self {
        use cdlsr::Error as E;
        match e {
            E::InvalidConfig(_) | E::BudgetOutOfRange { .. } | E::NonPositiveLambda(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Failure(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cdlsr", version, about = "Coupled dictionary learning for guided image super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a coupled dictionary set from registered LR/HR/guidance images.
    Train(TrainArgs),
    /// Super-resolve one LR image, with or without a guidance image.
    Sr(SrArgs),
    /// Compare a test image with a reference: PSNR, RMSE and SSIM.
    Eval(EvalArgs),
    /// Synthetic dictionary recovery experiment.
    SynthCdl(SynthCdlArgs),
    /// Synthetic super-resolution sweep over the number of measurements.
    SynthCsr(SynthCsrArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Sr(_) => "sr",
            Command::Eval(_) => "eval",
            Command::SynthCdl(_) => "synth-cdl",
            Command::SynthCsr(_) => "synth-csr",
        }
    }

    fn config_path(&self) -> Option<&Path> {
        match self {
            Command::Train(a) => a.common.config.as_deref(),
            Command::Sr(a) => a.common.config.as_deref(),
            Command::Eval(a) => a.common.config.as_deref(),
            Command::SynthCdl(a) => a.common.config.as_deref(),
            Command::SynthCsr(a) => a.common.config.as_deref(),
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key = value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every logical CPU. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    lr_dir: Option<PathBuf>,
    #[arg(long)]
    hr_dir: Option<PathBuf>,
    #[arg(long)]
    guide_dir: Option<PathBuf>,
    /// Upscaling factor [default: 4]
    #[arg(long)]
    scale: Option<usize>,
    /// Patch side in pixels [default: 8]
    #[arg(long)]
    patch: Option<usize>,
    /// Atoms per dictionary [default: 1024]
    #[arg(long)]
    atoms: Option<usize>,
    /// Total sparsity over common and unique codes [default: 8]
    #[arg(long)]
    sparsity: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    out_iter: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    in_iter: Option<usize>,
    /// Ridge weight of the HR dictionary solve [default: 0.001]
    #[arg(long)]
    lambda: Option<f64>,
    /// Training patches kept after filtering [default: 100000]
    #[arg(long)]
    max_samples: Option<usize>,
    /// Minimum variance of an upscaled LR patch [default: 0.02]
    #[arg(long)]
    var_threshold: Option<f64>,
    /// Pixels between training patch origins [default: 1]
    #[arg(long)]
    batch_stride: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output dictionary file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SrArgs {
    #[command(flatten)]
    common: Common,
    /// LR input image
    #[arg(long)]
    input: Option<PathBuf>,
    /// HR guidance image; required unless --no-side-info
    #[arg(long)]
    guide: Option<PathBuf>,
    /// Dictionary file written by `train`
    #[arg(long)]
    dict: Option<PathBuf>,
    /// [default: 4]
    #[arg(long)]
    scale: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    stride: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    sparsity: Option<usize>,
    /// Code the LR patches over the target dictionaries alone
    #[arg(long)]
    no_side_info: bool,
    /// HR ground truth; prints PSNR, SSIM and RMSE of the result
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output image (.pgm or .mat)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Peak value for PSNR [default: 1]
    #[arg(long)]
    peak: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Signal size [default: 64]
    #[arg(long)]
    n: Option<usize>,
    /// LR size of the training data [default: 16]
    #[arg(long)]
    m: Option<usize>,
    /// Atoms per dictionary
    #[arg(long)]
    k: Option<usize>,
    /// Training samples [default: 10000]
    #[arg(long)]
    t: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    s_z: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    s_u: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    s_v: Option<usize>,
    /// Training sparsity budget [default: s_z + s_u + s_v]
    #[arg(long)]
    sparsity: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    out_iter: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    in_iter: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    lambda: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the JSON report to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthCdlArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    synth: SynthArgs,
    /// Input SNR of the training data in dB; noise-free when absent
    #[arg(long)]
    snr: Option<f64>,
    /// [default: 10]
    #[arg(long)]
    trials: Option<usize>,
    /// Threshold: every averaged recovery ratio must reach this
    #[arg(long)]
    min_ratio: Option<f64>,
    /// Threshold on the averaged final RMSE of the target signals
    #[arg(long)]
    max_rmse_x: Option<f64>,
    /// Threshold on the averaged final RMSE of the guidance signals
    #[arg(long)]
    max_rmse_y: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthCsrArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    synth: SynthArgs,
    /// Smallest measurement count of the sweep [default: 2]
    #[arg(long)]
    m_min: Option<usize>,
    /// Largest measurement count [default: n]
    #[arg(long)]
    m_max: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    m_step: Option<usize>,
    /// Test signals per measurement count [default: 1000]
    #[arg(long)]
    test_trials: Option<usize>,
    /// Input SNR of the noisy variant in dB [default: 5]
    #[arg(long)]
    noisy_snr: Option<f64>,
    /// Skip the noisy variant
    #[arg(long)]
    noise_free_only: bool,
    /// Reconstruct with the ground-truth dictionaries instead of learned ones
    #[arg(long)]
    truth_dicts: bool,
    /// Learn from LR training data with m rows instead of full-resolution pairs
    #[arg(long)]
    train_on_lr: bool,
    /// Write an SVG plot of output SNR against M
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Measurement count the thresholds below are checked at [default: 32]
    #[arg(long)]
    eval_m: Option<usize>,
    /// Threshold: noise-free output SNR with side information at eval_m
    #[arg(long)]
    min_snr_db: Option<f64>,
    /// Threshold: noise-free gain over the baseline at eval_m, in dB
    #[arg(long)]
    min_gain_db: Option<f64>,
    /// Threshold: SNR drop of the side-information arm from noise at eval_m
    #[arg(long)]
    max_noisy_drop_db: Option<f64>,
    /// Threshold: side information must win at every swept M up to this
    #[arg(long)]
    wins_up_to: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Returns whether every declared threshold passed.
fn run(command: Command) -> CliResult<bool> {
    let file = match command.config_path() {
        Some(path) => FileConfig::load(path, &config_keys(command.name()))?,
        None => FileConfig::empty(),
    };
    match command {
        Command::Train(a) => cmd_train(a, &file).map(|_| true),
        Command::Sr(a) => cmd_sr(a, &file).map(|_| true),
        Command::Eval(a) => cmd_eval(a, &file).map(|_| true),
        Command::SynthCdl(a) => cmd_synth_cdl(a, &file),
        Command::SynthCsr(a) => cmd_synth_csr(a, &file),
    }
}

/// Long flag names of a subcommand, as config keys.
fn config_keys(subcommand: &str) -> Vec<String> {
    let cmd = Cli::command();
    let sub = cmd
        .find_subcommand(subcommand)
        .expect("subcommand names come from the parser");
    sub.get_arguments()
        .filter_map(|a| a.get_long())
        .filter(|&l| l != "config" && l != "help")
        .map(normalize_key)
        .collect()
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

fn workers(common: &Common, file: &FileConfig) -> CliResult<usize> {
    file.or(common.workers, "workers", 0)
}

fn emit(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values always serialize"));
}

fn write_report(report: &ExperimentReport, out: Option<&Path>) -> CliResult<()> {
    let text = report.to_json();
    if let Some(path) = out {
        fs::write(path, format!("{text}\n"))
            .map_err(|e| CliError::Failure(format!("cannot write '{}': {e}", path.display())))?;
    }
    println!("{text}");
    Ok(())
}

fn load_image(path: &Path) -> CliResult<Image> {
    read_image(path).map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

// ------------------------------------------------------------ train

/// Regular, non-hidden file names of a directory, sorted.
fn image_names(dir: &Path) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot list '{}': {e}", dir.display())))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Failure(format!("{}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.starts_with('.') && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// File names present in all three directories; any file without its
/// counterparts is an error naming the missing path.
fn matching_names(lr: &Path, hr: &Path, guide: &Path) -> CliResult<Vec<String>> {
    let names = image_names(hr)?;
    if names.is_empty() {
        return Err(CliError::Usage(format!("no images in '{}'", hr.display())));
    }
    for (dir, what) in [(lr, "LR"), (guide, "guidance")] {
        for name in &names {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(CliError::Usage(format!("missing {what} image '{}'", path.display())));
            }
        }
        for name in image_names(dir)? {
            if !names.contains(&name) {
                return Err(CliError::Usage(format!(
                    "'{}' has no HR counterpart in '{}'",
                    dir.join(&name).display(),
                    hr.display()
                )));
            }
        }
    }
    Ok(names)
}

fn cmd_train(a: TrainArgs, file: &FileConfig) -> CliResult<()> {
    let lr_dir: PathBuf = required(file.pick(a.lr_dir, "lr_dir")?, "lr-dir")?;
    let hr_dir: PathBuf = required(file.pick(a.hr_dir, "hr_dir")?, "hr-dir")?;
    let guide_dir: PathBuf = required(file.pick(a.guide_dir, "guide_dir")?, "guide-dir")?;
    let out: PathBuf = required(file.pick(a.out, "out")?, "out")?;
    let defaults = BatchSpec::default();
    let seed = file.or(a.seed, "seed", 0)?;
    let spec = BatchSpec {
        patch_side: file.or(a.patch, "patch", defaults.patch_side)?,
        scale: file.or(a.scale, "scale", defaults.scale)?,
        stride: file.or(a.batch_stride, "batch_stride", defaults.stride)?,
        variance_threshold: file.or(a.var_threshold, "var_threshold", defaults.variance_threshold)?,
        max_t: file.or(a.max_samples, "max_samples", defaults.max_t)?,
        seed,
    };
    let base = TrainConfig::default();
    let cfg = TrainConfig {
        atoms: file.or(a.atoms, "atoms", base.atoms)?,
        sparsity: file.or(a.sparsity, "sparsity", base.sparsity)?,
        out_iter: file.or(a.out_iter, "out_iter", base.out_iter)?,
        in_iter: file.or(a.in_iter, "in_iter", base.in_iter)?,
        lambda: file.or(a.lambda, "lambda", base.lambda)?,
        seed,
        workers: workers(&a.common, file)?,
    };
    cfg.validate()?;
    if spec.patch_side == 0 || spec.scale < 2 || spec.stride == 0 || spec.max_t == 0 {
        return Err(CliError::Usage(
            "patch, batch-stride and max-samples must be positive and scale at least 2".into(),
        ));
    }

    let started = Instant::now();
    let names = matching_names(&lr_dir, &hr_dir, &guide_dir)?;
    let mut lr = Vec::new();
    let mut hr = Vec::new();
    let mut guide = Vec::new();
    for name in &names {
        lr.push(load_image(&lr_dir.join(name))?);
        hr.push(load_image(&hr_dir.join(name))?);
        guide.push(load_image(&guide_dir.join(name))?);
    }
    let batch = build_training_batch(&lr, &hr, &guide, &spec)?;
    info!("{} images, {} training patches", names.len(), batch.samples());
    let (dset, trace) = train(&batch, &cfg)?;
    save_dictionary_set(&dset, &out)?;
    let seconds = started.elapsed().as_secs_f64();
    info!("wrote {} in {seconds:.1} s", out.display());
    emit(&json!({
        "out": out.display().to_string(),
        "images": names.len(),
        "samples": batch.samples(),
        "final_rmse_x": number(trace.final_rmse_x),
        "final_rmse_y": number(trace.final_rmse_y),
        "seconds": seconds,
    }));
    Ok(())
}

// ------------------------------------------------------------ sr

fn patch_side(n: usize) -> CliResult<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(CliError::Failure(format!(
            "dictionary atoms have {n} entries, not a square patch"
        )));
    }
    Ok(side)
}

fn pixel_rmse(a: &Image, b: &Image) -> f64 {
    let sq: f64 = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum();
    (sq / a.pixels().len().max(1) as f64).sqrt()
}

fn image_metrics(truth: &Image, est: &Image) -> CliResult<Value> {
    if est.dims() != truth.dims() {
        return Err(CliError::Failure(format!(
            "images differ in size: {:?} vs {:?}",
            truth.dims(),
            est.dims()
        )));
    }
    Ok(json!({
        "psnr": number(psnr(truth, est, 1.0)?),
        "rmse": number(pixel_rmse(truth, est)),
        "ssim": number(ssim(truth, est)?),
    }))
}

fn cmd_sr(a: SrArgs, file: &FileConfig) -> CliResult<()> {
    let input: PathBuf = required(file.pick(a.input, "input")?, "input")?;
    let dict: PathBuf = required(file.pick(a.dict, "dict")?, "dict")?;
    let out: PathBuf = required(file.pick(a.out, "out")?, "out")?;
    let guide_path: Option<PathBuf> = file.pick(a.guide, "guide")?;
    let truth_path: Option<PathBuf> = file.pick(a.truth, "truth")?;
    let no_side_info = file.switch(a.no_side_info, "no_side_info")?;
    let defaults = SrConfig::default();
    let mut cfg = SrConfig {
        scale: file.or(a.scale, "scale", defaults.scale)?,
        patch_side: defaults.patch_side,
        stride: file.or(a.stride, "stride", defaults.stride)?,
        sparsity: file.or(a.sparsity, "sparsity", defaults.sparsity)?,
        solver: Solver::Omp,
    };
    cfg.validate()?;
    let threads = workers(&a.common, file)?;

    let started = Instant::now();
    let dset = load_dictionary_set(&dict).map_err(|e| CliError::Failure(format!("{}: {e}", dict.display())))?;
    cfg.patch_side = patch_side(dset.dims.n)?;
    let lr = load_image(&input)?;
    let truth = truth_path.as_deref().map(load_image).transpose()?;
    let guide = guide_path.as_deref().map(load_image).transpose()?;
    let result = with_workers(threads, || -> CliResult<Image> {
        if no_side_info {
            let dicts = SingleModalityDictionaries::from_coupled(&dset);
            let dims = guide.as_ref().or(truth.as_ref()).map(Image::dims);
            Ok(super_resolve_without_side_info(&lr, &dicts, &cfg, dims)?)
        } else {
            let guide = guide
                .as_ref()
                .ok_or_else(|| CliError::Usage("missing --guide (or pass --no-side-info)".into()))?;
            Ok(super_resolve_image(&lr, guide, &dset, &cfg)?)
        }
    })?;
    write_image(&result, &out)?;
    let seconds = started.elapsed().as_secs_f64();
    info!("wrote {} in {seconds:.1} s", out.display());
    let mut report = json!({
        "out": out.display().to_string(),
        "width": result.width(),
        "height": result.height(),
        "side_info": !no_side_info,
        "seconds": seconds,
    });
    if let Some(truth) = &truth {
        report["metrics"] = image_metrics(truth, &result)?;
    }
    emit(&report);
    Ok(())
}

// ------------------------------------------------------------ eval

fn cmd_eval(a: EvalArgs, file: &FileConfig) -> CliResult<()> {
    let reference: PathBuf = required(file.pick(a.reference, "ref")?, "ref")?;
    let test: PathBuf = required(file.pick(a.test, "test")?, "test")?;
    let peak = file.or(a.peak, "peak", 1.0)?;
    if !(peak > 0.0) {
        return Err(CliError::Usage(format!("peak must be positive, got {peak}")));
    }
    let r = load_image(&reference)?;
    let t = load_image(&test)?;
    let mut metrics = image_metrics(&r, &t)?;
    metrics["psnr"] = number(psnr(&r, &t, peak)?);
    emit(&metrics);
    Ok(())
}

// ------------------------------------------------------------ synthetic suites

struct Check {
    name: &'static str,
    value: f64,
    limit: f64,
    /// `true` when `value` must not exceed `limit`.
    upper: bool,
}

impl Check {
    fn passed(&self) -> bool {
        if self.upper {
            self.value <= self.limit
        } else {
            self.value >= self.limit
        }
    }
}

/// Adds the threshold table to the report and logs one line per check.
fn apply_checks(report: &mut ExperimentReport, checks: &[Check]) -> bool {
    let mut all = true;
    let rows: Vec<Value> = checks
        .iter()
        .map(|c| {
            let pass = c.passed();
            all &= pass;
            eprintln!(
                "{} {}: {:.4} {} {}",
                if pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                if c.upper { "<=" } else { ">=" },
                c.limit
            );
            json!({
                "name": c.name,
                "value": number(c.value),
                "limit": number(c.limit),
                "bound": if c.upper { "max" } else { "min" },
                "pass": pass,
            })
        })
        .collect();
    if !rows.is_empty() {
        report.aggregates.insert("thresholds".into(), Value::Array(rows));
    }
    all
}

fn synth_setup(
    a: &SynthArgs,
    common: &Common,
    file: &FileConfig,
    base: SynthConfig,
) -> CliResult<(SynthConfig, TrainConfig)> {
    let sparsities = Sparsities::new(
        file.or(a.s_z, "s_z", base.sparsities.s_z)?,
        file.or(a.s_u, "s_u", base.sparsities.s_u)?,
        file.or(a.s_v, "s_v", base.sparsities.s_v)?,
    );
    let synth = SynthConfig {
        n: file.or(a.n, "n", base.n)?,
        m: file.or(a.m, "m", base.m)?,
        k: file.or(a.k, "k", base.k)?,
        t: file.or(a.t, "t", base.t)?,
        sparsities,
        seed: file.or(a.seed, "seed", base.seed)?,
        ..base
    };
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        atoms: synth.k,
        sparsity: file.or(a.sparsity, "sparsity", sparsities.total())?,
        out_iter: file.or(a.out_iter, "out_iter", defaults.out_iter)?,
        in_iter: file.or(a.in_iter, "in_iter", defaults.in_iter)?,
        lambda: file.or(a.lambda, "lambda", defaults.lambda)?,
        seed: synth.seed,
        workers: workers(common, file)?,
    };
    Ok((synth, train))
}

fn cmd_synth_cdl(a: SynthCdlArgs, file: &FileConfig) -> CliResult<bool> {
    let (mut synth, train) = synth_setup(&a.synth, &a.common, file, SynthConfig::default())?;
    synth.input_snr_db = file.pick(a.snr, "snr")?;
    synth.trials = file.or(a.trials, "trials", synth.trials)?;
    synth.validate()?;
    train.validate()?;
    let out: Option<PathBuf> = file.pick(a.synth.out, "out")?;

    info!(
        "recovery experiment: N={} M={} K={} T={} trials={}",
        synth.n, synth.m, synth.k, synth.t, synth.trials
    );
    let started = Instant::now();
    let mut report = run_cdl_recovery(&synth, &train)?;
    info!("done in {:.1} s", started.elapsed().as_secs_f64());

    let agg = &report.aggregates;
    let read = |v: &Value| v.as_f64().unwrap_or(f64::NAN);
    let mut checks = Vec::new();
    if let Some(limit) = file.pick(a.min_ratio, "min_ratio")? {
        for (key, name) in [
            ("psi_c", "recovery.psi_c"),
            ("phi_c", "recovery.phi_c"),
            ("psi", "recovery.psi"),
            ("phi", "recovery.phi"),
        ] {
            checks.push(Check {
                name,
                value: read(&agg["recovery"][key]),
                limit,
                upper: false,
            });
        }
    }
    if let Some(limit) = file.pick(a.max_rmse_x, "max_rmse_x")? {
        checks.push(Check {
            name: "final_rmse_x",
            value: read(&agg["final_rmse_x"]),
            limit,
            upper: true,
        });
    }
    if let Some(limit) = file.pick(a.max_rmse_y, "max_rmse_y")? {
        checks.push(Check {
            name: "final_rmse_y",
            value: read(&agg["final_rmse_y"]),
            limit,
            upper: true,
        });
    }
    let pass = apply_checks(&mut report, &checks);
    write_report(&report, out.as_deref())?;
    Ok(pass)
}

fn cmd_synth_csr(a: SynthCsrArgs, file: &FileConfig) -> CliResult<bool> {
    let defaults = CsrOptions::default();
    let (synth, train) = synth_setup(&a.synth, &a.common, file, defaults.synth.clone())?;
    let m_min = file.or(a.m_min, "m_min", 2)?;
    let m_max = file.or(a.m_max, "m_max", synth.n)?;
    let m_step = file.or(a.m_step, "m_step", 2)?;
    if m_step == 0 || m_min == 0 || m_min > m_max {
        return Err(CliError::Usage(format!(
            "bad measurement range {m_min}..={m_max} step {m_step}"
        )));
    }
    let noise_free_only = file.switch(a.noise_free_only, "noise_free_only")?;
    let opts = CsrOptions {
        synth,
        measurements: (m_min..=m_max).step_by(m_step).collect(),
        test_trials: file.or(a.test_trials, "test_trials", defaults.test_trials)?,
        noisy_snr_db: if noise_free_only {
            None
        } else {
            Some(file.or(a.noisy_snr, "noisy_snr", 5.0)?)
        },
        source: if file.switch(a.truth_dicts, "truth_dicts")? {
            CsrSource::GroundTruth
        } else {
            CsrSource::Learned
        },
        train_on_hr: !file.switch(a.train_on_lr, "train_on_lr")?,
    };
    opts.validate()?;
    train.validate()?;
    let out: Option<PathBuf> = file.pick(a.synth.out, "out")?;
    let svg: Option<PathBuf> = file.pick(a.svg, "svg")?;

    info!(
        "measurement sweep: N={} K={} M in {:?}, {} test signals each",
        opts.synth.n, opts.synth.k, opts.measurements, opts.test_trials
    );
    let started = Instant::now();
    let (models, points) = run_csr_experiment(&opts, &train)?;
    info!("done in {:.1} s", started.elapsed().as_secs_f64());
    let mut report = csr_report(&opts, &train, &models, &points);

    let eval_m = file.or(a.eval_m, "eval_m", 32)?;
    let snr_at = |noisy: bool, arm: CsrArm| -> CliResult<f64> {
        find_point(&points, eval_m, noisy, arm)
            .map(|p| p.mean_snr_db)
            .ok_or_else(|| CliError::Usage(format!("eval_m {eval_m} is not in the sweep (or the variant is off)")))
    };
    let mut checks = Vec::new();
    if let Some(limit) = file.pick(a.min_snr_db, "min_snr_db")? {
        checks.push(Check {
            name: "snr_with_side_info",
            value: snr_at(false, CsrArm::WithSideInfo)?,
            limit,
            upper: false,
        });
    }
    if let Some(limit) = file.pick(a.min_gain_db, "min_gain_db")? {
        checks.push(Check {
            name: "gain_over_baseline",
            value: snr_at(false, CsrArm::WithSideInfo)? - snr_at(false, CsrArm::WithoutSideInfo)?,
            limit,
            upper: false,
        });
    }
    if let Some(limit) = file.pick(a.max_noisy_drop_db, "max_noisy_drop_db")? {
        checks.push(Check {
            name: "noisy_drop",
            value: snr_at(false, CsrArm::WithSideInfo)? - snr_at(true, CsrArm::WithSideInfo)?,
            limit,
            upper: true,
        });
    }
    if let Some(limit) = file.pick(a.wins_up_to, "wins_up_to")? {
        let mut worst = f64::INFINITY;
        for &m in opts.measurements.iter().filter(|&&m| m <= limit) {
            let with = find_point(&points, m, false, CsrArm::WithSideInfo).map(|p| p.mean_snr_db);
            let without = find_point(&points, m, false, CsrArm::WithoutSideInfo).map(|p| p.mean_snr_db);
            if let (Some(w), Some(b)) = (with, without) {
                worst = worst.min(w - b);
            }
        }
        // the smallest margin must be strictly positive
        checks.push(Check {
            name: "smallest_margin_up_to_limit",
            value: worst,
            limit: f64::MIN_POSITIVE,
            upper: false,
        });
    }
    let pass = apply_checks(&mut report, &checks);

    if let Some(path) = &svg {
        let series = |arm: CsrArm, noisy: bool, name: String, color: &str| Series {
            name,
            color: color.into(),
            points: points
                .iter()
                .filter(|p| p.arm == arm && p.input_snr_db.is_some() == noisy)
                .map(|p| (p.m as f64, p.mean_snr_db))
                .collect(),
        };
        let mut lines = vec![
            series(CsrArm::WithSideInfo, false, "with side information".into(), "#d62728"),
            series(CsrArm::WithoutSideInfo, false, "without side information".into(), "#222222"),
        ];
        if let Some(snr) = opts.noisy_snr_db {
            lines.push(series(CsrArm::WithSideInfo, true, format!("with side information, {snr} dB input"), "#ff9896"));
            lines.push(series(CsrArm::WithoutSideInfo, true, format!("without side information, {snr} dB input"), "#999999"));
        }
        let plot = line_plot_svg("Output SNR against measurements", "M", "output SNR (dB)", &lines);
        fs::write(path, plot).map_err(|e| CliError::Failure(format!("cannot write '{}': {e}", path.display())))?;
    }
    write_report(&report, out.as_deref())?;
    Ok(pass)
}
