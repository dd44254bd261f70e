//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 infeasible budget,
//! 3 timeout (the incumbent is still written).

use crate::allocator::{self, AllocError, BudgetSpec, ExactOptions, SolverReport};
use crate::io::{self, IngestError, RunManifest, TableFileFormat};
use crate::loss_kernel::{self, GanMode, LossWeights};
use crate::rate_controller::{self, ControllerConfig};
use crate::rd_model::RdTable;
use crate::report::{self, SweepEntry, TableFormat};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_TIMEOUT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "rdalloc",
    version,
    about = "Rate-distortion allocation and perceptual loss tooling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Choose one quality level per image under a mean-bpp budget.
    Allocate(AllocateArgs),
    /// Run the exact allocator for several targets and summarise each.
    Sweep(SweepArgs),
    /// Evaluate the patch GAN losses and the composite distortion.
    LossEval(LossEvalArgs),
    /// Apply the target-rate λ switch to a rate trace.
    Controller(ControllerArgs),
    /// Re-serialise an RD table (CSV <-> JSON).
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Brute,
    Lagrangian,
    Exact,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputFormat {
    Csv,
    Json,
}

impl From<InputFormat> for TableFileFormat {
    fn from(f: InputFormat) -> Self {
        match f {
            InputFormat::Csv => TableFileFormat::Csv,
            InputFormat::Json => TableFileFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SummaryFormat {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Paper,
    Conventional,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Table format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    #[arg(long)]
    pub target_bpp: f64,
    #[arg(long, value_enum, default_value = "exact")]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub tolerance: f64,
    /// Wall-clock limit for the exact solver.
    #[arg(long)]
    pub timeout_sec: Option<f64>,
    /// Enumeration limit for the brute-force solver.
    #[arg(long, default_value_t = allocator::DEFAULT_ENUMERATION_CAP)]
    pub enumeration_cap: u128,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// Comma-separated mean-bpp targets.
    #[arg(long, default_value = "0.075,0.15,0.3")]
    pub targets: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub summary_format: SummaryFormat,
    /// Method name written in the summary rows.
    #[arg(long, default_value = "exact")]
    pub method_name: String,
    #[arg(long)]
    pub timeout_sec: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LossEvalArgs {
    /// JSON file `{"real_scores": [...], "fake_scores": [...]}`.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_enum, default_value = "paper")]
    pub gan_mode: ModeArg,
    /// Weights of the reconstruction, LPIPS and GAN terms (tool default, not a published setting).
    #[arg(long, default_value = "1,1,1")]
    pub weights: String,
    #[arg(long, default_value_t = 0.0)]
    pub rec: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lpips: f64,
    /// Also compare analytic gradients with central finite differences.
    #[arg(long)]
    pub check_grad: bool,
}

#[derive(Debug, Args)]
pub struct ControllerArgs {
    /// One nonnegative rate per line.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub lambda_alpha: f64,
    #[arg(long)]
    pub lambda_beta: f64,
    #[arg(long)]
    pub target_rate: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// Output path; `.json` writes JSON, anything else CSV.
    #[arg(long)]
    pub out: PathBuf,
}

/// Step size and relative-error floor of `loss-eval --check-grad`.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::input(e)
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Allocate(a) => allocate(&a, out, err),
        Command::Sweep(a) => sweep(&a, out),
        Command::LossEval(a) => loss_eval(&a, out),
        Command::Controller(a) => controller(&a, out, err),
        Command::Convert(a) => convert(&a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn load_table(path: &Path, format: Option<InputFormat>) -> Result<(RdTable, Vec<u8>), Failure> {
    let table = io::ingest(path, format.map(Into::into))?;
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    Ok((table, bytes))
}

fn timeout(secs: Option<f64>) -> Result<Option<Duration>, Failure> {
    secs.map(|s| {
        Duration::try_from_secs_f64(s).map_err(|e| Failure::input(format!("--timeout-sec: {e}")))
    })
    .transpose()
}

fn allocate(args: &AllocateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let (table, bytes) = load_table(&args.table, args.format)?;
    let budget = BudgetSpec::new(args.target_bpp).with_tolerance(args.tolerance);
    let options = ExactOptions {
        timeout: timeout(args.timeout_sec)?,
    };
    let result = match args.method {
        Method::Brute => allocator::solve_brute_force_with(&table, &budget, args.enumeration_cap),
        Method::Lagrangian => allocator::solve_lagrangian(&table, &budget),
        Method::Exact => allocator::solve_exact_with(&table, &budget, &options),
    };
    let (report, code) = match result {
        Ok(r) => (r, EXIT_OK),
        Err(AllocError::Infeasible {
            min_mean_bpp,
            target,
        }) => {
            let _ = writeln!(
                err,
                "infeasible: lowest achievable mean bpp {min_mean_bpp} exceeds target {target}"
            );
            return Ok(EXIT_INFEASIBLE);
        }
        Err(AllocError::Timeout(r)) => {
            let _ = writeln!(
                err,
                "timeout: writing incumbent with gap bound {:?}",
                r.assignment.gap_bound
            );
            (*r, EXIT_TIMEOUT)
        }
        Err(e) => return Err(Failure::input(e)),
    };

    write_file(
        &args.out,
        &io::assignment_to_json(&report.assignment, args.target_bpp, report.optimal),
    )?;
    let mut params = BTreeMap::new();
    params.insert("target_bpp".into(), args.target_bpp.to_string());
    params.insert("method".into(), format!("{:?}", args.method).to_lowercase());
    params.insert("tolerance".into(), args.tolerance.to_string());
    params.insert("timeout_sec".into(), format!("{:?}", args.timeout_sec));
    params.insert("enumeration_cap".into(), args.enumeration_cap.to_string());
    let manifest = RunManifest::new(
        "allocate",
        &params,
        &[(args.table.display().to_string(), bytes)],
    );
    write_file(&sidecar(&args.out), &manifest.to_json())?;

    let _ = out.write_all(solve_summary(&table, &report).as_bytes());
    Ok(code)
}

fn solve_summary(table: &RdTable, report: &SolverReport) -> String {
    let a = &report.assignment;
    let mut s = String::new();
    let _ = writeln!(s, "solver: {}", a.solver);
    let _ = writeln!(s, "achieved_mean_bpp: {}", a.achieved_mean_bpp);
    let _ = writeln!(s, "total_distortion: {}", a.total_distortion);
    let _ = writeln!(
        s,
        "mean_distortion: {}",
        a.total_distortion / table.len() as f64
    );
    match a.gap_bound {
        Some(g) => {
            let _ = writeln!(s, "gap_bound: {g}");
        }
        None => s.push_str("gap_bound: null\n"),
    }
    let _ = writeln!(s, "optimal: {}", report.optimal);
    s
}

pub fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>().map_err(|e| format!("{what}: {t:?}: {e}"))
        })
        .collect()
}

fn sweep(args: &SweepArgs, out: &mut dyn Write) -> CmdResult {
    let targets = parse_list(&args.targets, "--targets").map_err(Failure::input)?;
    if targets.is_empty() || targets.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Failure::input(
            "--targets must be a nonempty list of positive reals",
        ));
    }
    let (table, bytes) = load_table(&args.table, args.format)?;
    let options = ExactOptions {
        timeout: timeout(args.timeout_sec)?,
    };
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", args.out_dir.display())))?;

    let mut entries = Vec::with_capacity(targets.len());
    for (&target, result) in targets
        .iter()
        .zip(allocator::sweep_targets_with(&table, &targets, &options))
    {
        let failed = |status: String| SweepEntry::Failed {
            method_name: args.method_name.clone(),
            target_bpp: target,
            status,
        };
        let report = match result {
            Ok(r) => Some((r, None)),
            Err(AllocError::Timeout(r)) => Some((*r, Some("timeout".to_string()))),
            Err(AllocError::Infeasible { .. }) => {
                entries.push(failed("infeasible".into()));
                None
            }
            Err(e) => return Err(Failure::input(e)),
        };
        if let Some((report, status)) = report {
            let path = args.out_dir.join(format!("assignment_{target}.json"));
            write_file(
                &path,
                &io::assignment_to_json(&report.assignment, target, report.optimal),
            )?;
            match status {
                Some(s) => entries.push(failed(s)),
                None => {
                    let row =
                        report::summarize(&table, &report.assignment, &args.method_name, target)
                            .map_err(Failure::input)?;
                    entries.push(SweepEntry::Solved(row));
                }
            }
        }
    }

    let (format, name) = match args.summary_format {
        SummaryFormat::Csv => (TableFormat::Csv, "summary.csv"),
        SummaryFormat::Markdown => (TableFormat::Markdown, "summary.md"),
    };
    let rendered = report::render_sweep(&entries, format);
    write_file(&args.out_dir.join(name), &rendered)?;
    let mut params = BTreeMap::new();
    params.insert(
        "targets".into(),
        targets
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    params.insert("method_name".into(), args.method_name.clone());
    params.insert("summary_format".into(), name.into());
    params.insert("timeout_sec".into(), format!("{:?}", args.timeout_sec));
    let manifest = RunManifest::new(
        "sweep",
        &params,
        &[(args.table.display().to_string(), bytes)],
    );
    write_file(&args.out_dir.join("manifest.json"), &manifest.to_json())?;
    let _ = out.write_all(rendered.as_bytes());
    Ok(EXIT_OK)
}

fn loss_eval(args: &LossEvalArgs, out: &mut dyn Write) -> CmdResult {
    let scores = io::parse_scores_json(&io::read_file(&args.scores)?)?;
    let mode = match args.gan_mode {
        ModeArg::Paper => GanMode::Paper,
        ModeArg::Conventional => GanMode::Conventional,
    };
    let w = parse_list(&args.weights, "--weights").map_err(Failure::input)?;
    let [w_rec, w_lpips, w_gan] = w[..] else {
        return Err(Failure::input(
            "--weights takes exactly three values w1,w2,w3",
        ));
    };
    let weights = LossWeights::new(w_rec, w_lpips, w_gan).map_err(Failure::input)?;
    if !(args.rec.is_finite() && args.rec >= 0.0 && args.lpips.is_finite() && args.lpips >= 0.0) {
        return Err(Failure::input("--rec and --lpips must be finite and >= 0"));
    }
    let losses = loss_kernel::gan_losses(&scores, mode);
    let composite =
        loss_kernel::composite_distortion(args.rec, args.lpips, losses.loss_g, &weights);
    let mut s = String::new();
    let _ = writeln!(s, "gan_mode: {mode}");
    let _ = writeln!(s, "loss_d: {:?}", losses.loss_d);
    let _ = writeln!(s, "loss_g: {:?}", losses.loss_g);
    let _ = writeln!(s, "composite: {composite:?}");
    if args.check_grad {
        let e = loss_kernel::max_gradient_error(&scores, mode, GRAD_CHECK_STEP, GRAD_CHECK_FLOOR);
        let _ = writeln!(s, "grad_max_rel_error: {e:e}");
    }
    let _ = out.write_all(s.as_bytes());
    Ok(EXIT_OK)
}

fn controller(args: &ControllerArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let text = io::read_file(&args.trace)?;
    let trace = io::parse_trace(&text)?;
    let cfg = ControllerConfig::new(args.lambda_alpha, args.lambda_beta, args.target_rate)
        .map_err(Failure::input)?;
    for w in cfg.warnings() {
        let _ = writeln!(err, "warning: {w}");
    }
    let steps = rate_controller::simulate_controller(&trace, &cfg).map_err(Failure::input)?;
    let mut csv = String::from("step,rate,lambda,total_loss\n");
    for s in &steps {
        let _ = writeln!(csv, "{},{},{},{}", s.step, s.rate, s.lambda, s.total_loss);
    }
    match &args.out {
        Some(path) => {
            write_file(path, &csv)?;
            let mut params = BTreeMap::new();
            params.insert("lambda_alpha".into(), args.lambda_alpha.to_string());
            params.insert("lambda_beta".into(), args.lambda_beta.to_string());
            params.insert("target_rate".into(), args.target_rate.to_string());
            let manifest = RunManifest::new(
                "controller",
                &params,
                &[(args.trace.display().to_string(), text.into_bytes())],
            );
            write_file(&sidecar(path), &manifest.to_json())?;
        }
        None => {
            let _ = out.write_all(csv.as_bytes());
        }
    }
    Ok(EXIT_OK)
}

fn convert(args: &ConvertArgs) -> CmdResult {
    let table = io::ingest(&args.table, args.format.map(Into::into))?;
    let text = match TableFileFormat::from_path(&args.out) {
        TableFileFormat::Json => io::table_to_json(&table),
        TableFileFormat::Csv => io::table_to_csv(&table),
    };
    write_file(&args.out, &text)?;
    Ok(EXIT_OK)
}
