//! The `pmdiff` command line.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O or parse error,
//! 3 numeric blowup or solver failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{
    add_gaussian_noise, probe_continuity, verify_invariants, verify_operator_properties, DenoiseExperiment, FieldStats,
    InvariantTolerances,
};
use crate::diffusivity::{DiffusivityKind, DiffusivityModel};
use crate::error::{DiffusionError, Result};
use crate::grid::{ScalarField, Spacing};
use crate::io::{load_field, save_field, FileKind};
use crate::operator::{convolve_gaussian, diffusivity_field, DiffusionOperator, GaussianKernel};
use crate::schemes::{Runner, SchemeConfig, SchemeKind};

#[derive(Debug, Parser)]
#[command(name = "pmdiff", version, about = "Perona-Malik nonlinear diffusion filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve an image (.pgm) or 1D signal (.csv) with one scheme.
    Run(RunArgs),
    /// Add Gaussian noise at a given signal-to-noise ratio.
    Noise(NoiseArgs),
    /// Report the structural properties of the diffusion operator for an input.
    CheckOperator(CheckArgs),
    /// Denoise with several schemes, stopping each at its first error minimum.
    DenoiseExperiment(ExperimentArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct ModelArgs {
    /// Diffusivity: rational or exponential.
    #[arg(long, default_value = "rational")]
    diffusivity: String,
    /// Contrast parameter, in intensity-gradient units of the loaded data
    /// (8-bit images load as [0, 1]).
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    dx: f64,
    #[arg(long, default_value_t = 1.0)]
    dy: f64,
}

impl ModelArgs {
    fn model(&self) -> Result<DiffusivityModel> {
        DiffusivityModel::new(self.diffusivity.parse::<DiffusivityKind>()?, self.lambda)
    }

    fn spacing(&self) -> Result<Spacing> {
        Spacing::new(self.dx, self.dy)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct StepArgs {
    #[arg(long, default_value_t = 0.2)]
    tau: f64,
    /// Smoothing width (pixels) of the regularized scheme.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Skip the explicit-scheme stability check.
    #[arg(long)]
    allow_unstable: bool,
    #[arg(long, default_value_t = 1e-10)]
    solver_tol: f64,
    /// Defaults to 10 x pixel count.
    #[arg(long)]
    solver_maxit: Option<usize>,
}

impl StepArgs {
    fn config(&self, kind: SchemeKind) -> SchemeConfig {
        SchemeConfig {
            kind,
            tau: self.tau,
            sigma: self.sigma,
            solver_tol: self.solver_tol,
            solver_max_iter: self.solver_maxit,
            enforce_stability_bound: !self.allow_unstable,
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value = "explicit")]
    scheme: String,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Comma-separated iterations to save, e.g. 10,100,1000.
    #[arg(long, value_delimiter = ',')]
    snapshots: Vec<usize>,
    /// Log the L1 distance to this field.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Metrics CSV path (default <out-dir>/metrics.csv).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Manifest path (default <out-dir>/manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    step: StepArgs,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Mean signal divided by noise standard deviation.
    #[arg(long, default_value_t = 2.0)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    input: PathBuf,
    /// Which scheme's operator to check.
    #[arg(long, default_value = "explicit")]
    scheme: String,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Seed of the perturbation direction used for the continuity probe.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also print machine-readable key=value lines.
    #[arg(long)]
    kv: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    clean: PathBuf,
    /// Noisy input; generated from --snr and --seed when absent.
    #[arg(long)]
    noisy: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "regularized,explicit,pm-original")]
    schemes: Vec<String>,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    /// Consecutive increases needed to confirm a minimum.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Where to write curves.csv and manifest.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    step: StepArgs,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    timestamp_unix: u64,
    argv: Vec<String>,
    #[serde(flatten)]
    details: &'a T,
}

fn write_manifest<T: Serialize>(path: &Path, command: &'static str, argv: &[String], details: &T) -> Result<()> {
    let manifest = Manifest {
        tool: "pmdiff",
        version: env!("CARGO_PKG_VERSION"),
        command,
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        argv: argv.to_vec(),
        details,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DiffusionError::Io(e.to_string()))?;
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| DiffusionError::Io(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| DiffusionError::Io(format!("{}: {e}", path.display())))
}

fn load_with_spacing(path: &Path, spacing: Spacing) -> Result<ScalarField> {
    let mut f = load_field(path)?;
    f.set_spacing(spacing);
    Ok(f)
}

/// Snapshot file name, zero-padded to the width of the largest iteration.
pub fn snapshot_name(iteration: usize, max_iteration: usize, kind: FileKind) -> String {
    let width = max_iteration.max(1).to_string().len();
    format!("out_{iteration:0width$}.{}", kind.extension())
}

#[derive(Serialize)]
struct RunDetails<'a> {
    input: &'a Path,
    out_dir: &'a Path,
    log: &'a Path,
    config: &'a SchemeConfig,
    model: &'a DiffusivityModel,
    spacing: (f64, f64),
    iters: usize,
    snapshots: &'a [usize],
    reference: Option<&'a Path>,
    seed: Option<u64>,
    outputs: Vec<String>,
}

fn cmd_run(args: &RunArgs, argv: &[String], out: &mut dyn std::io::Write) -> Result<()> {
    let kind: SchemeKind = args.scheme.parse()?;
    let model = args.model.model()?;
    let spacing = args.model.spacing()?;
    let config = args.step.config(kind);
    config.validate()?;
    let file_kind = FileKind::from_path(&args.input)?;
    let u0 = load_with_spacing(&args.input, spacing)?;
    config.check_for(&u0)?;
    let reference = args
        .reference
        .as_deref()
        .map(|p| load_with_spacing(p, spacing))
        .transpose()?;

    let mut runner = Runner::new(model, config.clone()).with_snapshots(args.snapshots.clone());
    if let Some(r) = &reference {
        runner = runner.with_reference(r);
    }
    let result = runner.run(&u0, args.iters)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| DiffusionError::Io(format!("{}: {e}", args.out_dir.display())))?;
    let mut outputs = Vec::new();
    let last_snapshot = args.snapshots.iter().copied().max().unwrap_or(0).max(args.iters);
    for (n, field) in &result.snapshots {
        let path = args.out_dir.join(snapshot_name(*n, last_snapshot, file_kind));
        save_field(&path, field)?;
        outputs.push(path.display().to_string());
    }
    let final_path = args.out_dir.join(format!("final.{}", file_kind.extension()));
    save_field(&final_path, &result.field)?;
    outputs.push(final_path.display().to_string());

    let log_path = args.log.clone().unwrap_or_else(|| args.out_dir.join("metrics.csv"));
    write_file(&log_path, result.log.to_csv().as_bytes())?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| args.out_dir.join("manifest.json"));
    let details = RunDetails {
        input: &args.input,
        out_dir: &args.out_dir,
        log: &log_path,
        config: &config,
        model: &model,
        spacing: (spacing.dx(), spacing.dy()),
        iters: args.iters,
        snapshots: &args.snapshots,
        reference: args.reference.as_deref(),
        seed: None,
        outputs,
    };
    write_manifest(&manifest_path, "run", argv, &details)?;

    let report = verify_invariants(&result.log, &FieldStats::of(&u0), &InvariantTolerances::default());
    let _ = writeln!(
        out,
        "{} iterations of {} done; {} snapshot(s) written to {}",
        result.iterations,
        kind,
        result.snapshots.len(),
        args.out_dir.display()
    );
    let _ = write!(out, "{report}");
    Ok(())
}

fn cmd_noise(args: &NoiseArgs, argv: &[String], out: &mut dyn std::io::Write) -> Result<()> {
    FileKind::from_path(&args.output)?;
    let clean = load_field(&args.input)?;
    let noisy = add_gaussian_noise(&clean, args.snr, args.seed)?;
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| DiffusionError::Io(format!("{}: {e}", parent.display())))?;
    }
    save_field(&args.output, &noisy)?;
    if let Some(path) = &args.manifest {
        #[derive(Serialize)]
        struct NoiseDetails<'a> {
            input: &'a Path,
            output: &'a Path,
            snr: f64,
            seed: u64,
            noise_std: f64,
        }
        let details = NoiseDetails {
            input: &args.input,
            output: &args.output,
            snr: args.snr,
            seed: args.seed,
            noise_std: clean.mean() / args.snr,
        };
        write_manifest(path, "noise", argv, &details)?;
    }
    let _ = writeln!(
        out,
        "noise std {:.6e} (snr {}, seed {}) written to {}",
        clean.mean() / args.snr,
        args.snr,
        args.seed,
        args.output.display()
    );
    Ok(())
}

fn operator_for(
    kind: SchemeKind,
    field: &ScalarField,
    model: &DiffusivityModel,
    sigma: f64,
) -> Result<DiffusionOperator> {
    match kind {
        SchemeKind::Explicit | SchemeKind::SemiImplicit => DiffusionOperator::assemble(field, model),
        SchemeKind::PmOriginal => DiffusionOperator::assemble_half_point(field, model),
        SchemeKind::Regularized => {
            let smoothed = convolve_gaussian(field, &GaussianKernel::new(sigma)?);
            Ok(DiffusionOperator::from_diffusivity(&diffusivity_field(
                &smoothed, model,
            )?))
        }
        SchemeKind::Gaussian => Ok(DiffusionOperator::laplacian(field)),
    }
}

fn cmd_check_operator(args: &CheckArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let kind: SchemeKind = args.scheme.parse()?;
    let model = args.model.model()?;
    let spacing = args.model.spacing()?;
    if !(args.sigma.is_finite() && args.sigma >= 0.0) {
        return Err(DiffusionError::Config(format!(
            "sigma must be nonnegative (got {})",
            args.sigma
        )));
    }
    let field = load_with_spacing(&args.input, spacing)?;
    let op = operator_for(kind, &field, &model, args.sigma)?;
    let continuity = probe_continuity(&field, args.seed, |u| operator_for(kind, u, &model, args.sigma))?;
    let report = verify_operator_properties(&op);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "operator: {kind} {}x{} dim={} nnz={}",
        field.height(),
        field.width(),
        op.dim(),
        op.nnz()
    );
    let _ = write!(text, "{continuity}{report}");
    if args.kv {
        let _ = writeln!(text, "p1.pass={}", continuity.pass());
        text.push_str(&report.key_values());
    }
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

#[derive(Serialize)]
struct ExperimentDetails<'a> {
    clean: &'a Path,
    noisy: Option<&'a Path>,
    snr: Option<f64>,
    seed: Option<u64>,
    model: &'a DiffusivityModel,
    configs: &'a [SchemeConfig],
    max_iters: usize,
    patience: usize,
    results: Vec<ExperimentSummary>,
}

#[derive(Serialize)]
struct ExperimentSummary {
    scheme: SchemeKind,
    stop_iteration: usize,
    min_error: f64,
    relative_min_error: f64,
    converged: bool,
}

fn cmd_denoise_experiment(args: &ExperimentArgs, argv: &[String], out: &mut dyn std::io::Write) -> Result<()> {
    let model = args.model.model()?;
    let spacing = args.model.spacing()?;
    let configs = args
        .schemes
        .iter()
        .map(|s| Ok(args.step.config(s.parse()?)))
        .collect::<Result<Vec<_>>>()?;
    if configs.is_empty() {
        return Err(DiffusionError::Config("no schemes given".into()));
    }
    for c in &configs {
        c.validate()?;
    }
    let clean = load_with_spacing(&args.clean, spacing)?;
    let noisy = match &args.noisy {
        Some(p) => load_with_spacing(p, spacing)?,
        None => add_gaussian_noise(&clean, args.snr, args.seed)?,
    };
    clean.same_dims(&noisy)?;
    for c in &configs {
        c.check_for(&clean)?;
    }
    let mut experiment = DenoiseExperiment::new(model, args.max_iters);
    experiment.patience = args.patience;
    let results = experiment.run(&clean, &noisy, &configs)?;

    let mut text = String::new();
    let mut summaries = Vec::new();
    for r in &results {
        let rel = r.min_error / r.curve[0].max(f64::MIN_POSITIVE);
        let _ = writeln!(
            text,
            "scheme={} stop_iter={} min_error={:.6e} rel_min_error={:.6e} converged={}",
            r.scheme, r.stop_iteration, r.min_error, rel, r.converged
        );
        summaries.push(ExperimentSummary {
            scheme: r.scheme,
            stop_iteration: r.stop_iteration,
            min_error: r.min_error,
            relative_min_error: rel,
            converged: r.converged,
        });
    }
    if let Some(dir) = &args.out_dir {
        let longest = results.iter().map(|r| r.curve.len()).max().unwrap_or(0);
        let mut csv = String::from("iter");
        for r in &results {
            let _ = write!(csv, ",{}_error,{}_relative", r.scheme, r.scheme);
        }
        csv.push('\n');
        let rel: Vec<Vec<f64>> = results.iter().map(|r| r.relative_curve()).collect();
        for n in 0..longest {
            let _ = write!(csv, "{n}");
            for (r, rc) in results.iter().zip(&rel) {
                match r.curve.get(n) {
                    Some(d) => {
                        let _ = write!(csv, ",{d:.16e},{:.16e}", rc[n]);
                    }
                    None => csv.push_str(",,"),
                }
            }
            csv.push('\n');
        }
        write_file(&dir.join("curves.csv"), csv.as_bytes())?;
        if args.noisy.is_none() {
            save_field(
                &dir.join(format!("noisy.{}", FileKind::from_path(&args.clean)?.extension())),
                &noisy,
            )?;
        }
        let details = ExperimentDetails {
            clean: &args.clean,
            noisy: args.noisy.as_deref(),
            snr: args.noisy.is_none().then_some(args.snr),
            seed: args.noisy.is_none().then_some(args.seed),
            model: &model,
            configs: &configs,
            max_iters: args.max_iters,
            patience: args.patience,
            results: summaries,
        };
        write_manifest(&dir.join("manifest.json"), "denoise-experiment", argv, &details)?;
    }
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

/// Maps an error to the documented exit code.
pub fn exit_code(err: &DiffusionError) -> i32 {
    match err.root() {
        DiffusionError::Io(_) | DiffusionError::Parse { .. } => 2,
        DiffusionError::NumericBlowup { .. } | DiffusionError::Solver { .. } => 3,
        _ => 1,
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code. Normal output goes to `out`; diagnostics go to `err`.
pub fn run_cli<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    // buffer success output so nothing is printed on failure
    let mut buffer = Vec::new();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, &argv, &mut buffer),
        Command::Noise(a) => cmd_noise(a, &argv, &mut buffer),
        Command::CheckOperator(a) => cmd_check_operator(a, &mut buffer),
        Command::DenoiseExperiment(a) => cmd_denoise_experiment(a, &argv, &mut buffer),
    };
    match result {
        Ok(()) => {
            let _ = out.write_all(&buffer);
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
