//! The `lrd` subcommands.
//!
//! Every command returns an [`Output`] instead of printing, so the binary
//! stays a thin wrapper and tests can inspect stdout, stderr and the exit
//! code directly. Exit codes: 0 success (warnings allowed), 1 verification
//! failure, 2 usage or I/O error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::bundle::{
    verify_bundle, write_bundle, BundleError, DecomposeOptions, Manifest, VerifyMode, WeightSource,
};
use crate::fixtures;
use crate::model::{ModelError, ModelFile};
use crate::planner::{
    optimize_rank, plan_model, recompute, CompressionPlan, Decision, NnProfiler, PlanError, Policy,
    RankChoice, RankRule, TimingProvider,
};
use crate::report::{Report, ReportRow};
use crate::tensor::io;
use crate::transforms::{branch_plan, freeze_plan, merge_plan, MergeOptions, TransformError};
use crate::weights::DEFAULT_SEED;

pub const SEED_ENV: &str = "LRD_SEED";

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What a command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Output {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

impl Output {
    fn ok(stdout: String) -> Self {
        Self {
            stdout,
            ..Self::default()
        }
    }

    fn warn(&mut self, line: impl AsRef<str>) {
        self.stderr.push_str("warning: ");
        self.stderr.push_str(line.as_ref());
        self.stderr.push('\n');
    }

    pub fn from_error(e: &CommandError) -> Self {
        Self {
            stdout: String::new(),
            stderr: format!("error: {e}\n"),
            code: 2,
        }
    }
}

fn parse_seed(text: &str) -> Option<u64> {
    let t = text.trim();
    match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16).ok(),
        None => t.replace('_', "").parse().ok(),
    }
}

/// `LRD_SEED` if set, else `fallback`.
pub fn env_seed() -> Result<Option<u64>, CommandError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => parse_seed(&v).map(Some).ok_or_else(|| {
            CommandError::Usage(format!(
                "{SEED_ENV}={v:?} is not an unsigned 64-bit integer"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CommandError::Usage(format!("{SEED_ENV}: {e}"))),
    }
}

/// Seed precedence: `LRD_SEED`, then the explicit value, then [`DEFAULT_SEED`].
pub fn resolve_seed(explicit: Option<u64>) -> Result<u64, CommandError> {
    Ok(env_seed()?.or(explicit).unwrap_or(DEFAULT_SEED))
}

/// A model file path, or one of the built-in names (`resnet50`, ...).
pub fn load_model(arg: &str) -> Result<ModelFile, CommandError> {
    let path = Path::new(arg);
    if path.exists() {
        let model = ModelFile::load(path)?;
        model.validate()?;
        return Ok(model);
    }
    fixtures::by_name(arg).ok_or_else(|| {
        CommandError::Usage(format!(
            "'{arg}' is neither a model file nor a built-in model (resnet50, resnet101, resnet152)"
        ))
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CommandError> {
    std::fs::write(path, text).map_err(|source| CommandError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, CommandError> {
    std::fs::read_to_string(path).map_err(|source| CommandError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transform {
    #[default]
    None,
    Merge,
    Freeze,
    Branch(usize),
}

impl FromStr for Transform {
    type Err = String;

    /// `none`, `merge`, `freeze`, `branchN` or `branch:N`. A bare `branch`
    /// parses as `Branch(0)` and takes its count from `--branches`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "branch" => Ok(Self::Branch(0)),
            "merge" => Ok(Self::Merge),
            "freeze" => Ok(Self::Freeze),
            _ => {
                let n = s
                    .strip_prefix("branch")
                    .map(|r| r.trim_start_matches(':'))
                    .ok_or_else(|| {
                        format!("unknown transform '{s}' (none, merge, freeze, branchN)")
                    })?;
                match n.parse::<usize>() {
                    Ok(n) if n > 0 => Ok(Self::Branch(n)),
                    _ => Err(format!(
                        "transform '{s}' needs a positive branch count, e.g. branch4"
                    )),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Budget,
    ChannelFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "lrd",
    version,
    about = "Low-rank decomposition of convolutional networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Layer count, parameters and FLOPs of one or more models.
    Stats(StatsArgs),
    /// Choose ranks for every layer at a compression ratio.
    Plan(PlanArgs),
    /// Factorize weights according to a plan and write a bundle.
    Decompose(DecomposeArgs),
    /// Run an equivalence suite over a bundle.
    Verify(VerifyArgs),
    /// Refine plan ranks by timing decomposed layers.
    OptimizeRanks(OptimizeArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Model files or built-in names.
    #[arg(required = true)]
    pub models: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    pub model: String,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Rank rule; defaults to `channel-fraction` for `merge`, `budget` otherwise.
    #[arg(long, value_enum)]
    pub policy: Option<RuleArg>,
    /// none, merge, freeze or branchN.
    #[arg(long, default_value = "none")]
    pub transform: Transform,
    /// Branch count for a bare `--transform branch`.
    #[arg(long)]
    pub branches: Option<usize>,
    /// Decompose the first convolution too.
    #[arg(long)]
    pub include_first: bool,
    #[arg(long, default_value_t = 1)]
    pub min_rank: usize,
    /// Plan JSON destination; without it the plan goes to stdout and the
    /// report to stderr.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    pub model: String,
    #[arg(long)]
    pub plan: PathBuf,
    /// Directory with `<layer>.bin` weights; seeded weights otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_parser = parse_seed_arg)]
    pub seed: Option<u64>,
    /// HOOI refinement sweeps for Tucker layers (0 = plain HOSVD).
    #[arg(long, default_value_t = 0)]
    pub hooi: usize,
    /// Also write a JSON copy of every factor file.
    #[arg(long, value_enum)]
    pub emit: Option<EmitFormat>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmitFormat {
    Bin,
    Json,
}

fn parse_seed_arg(s: &str) -> Result<u64, String> {
    parse_seed(s).ok_or_else(|| format!("'{s}' is not an unsigned 64-bit integer"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Reconstruct,
    Forward,
    BranchEquiv,
    MergeEquiv,
}

impl From<ModeArg> for VerifyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Reconstruct => VerifyMode::Reconstruct,
            ModeArg::Forward => VerifyMode::Forward,
            ModeArg::BranchEquiv => VerifyMode::BranchEquiv,
            ModeArg::MergeEquiv => VerifyMode::MergeEquiv,
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub bundle: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Reconstruct)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    pub model: String,
    #[arg(long)]
    pub alpha: f64,
    /// Lower end of the scan as a fraction of the planned rank.
    #[arg(long, default_value_t = 0.75)]
    pub rmin_frac: f64,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    /// Only profile these layers (repeatable); all decomposed layers otherwise.
    #[arg(long = "layer")]
    pub layers: Vec<String>,
    /// Cap on the profiling input's height and width.
    #[arg(long, default_value_t = 14)]
    pub max_hw: usize,
    #[arg(long, value_parser = parse_seed_arg)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Output {
    let result = match cli.command {
        Command::Stats(a) => cmd_stats(&a),
        Command::Plan(a) => cmd_plan(&a),
        Command::Decompose(a) => cmd_decompose(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::OptimizeRanks(a) => cmd_optimize_ranks(&a),
    };
    result.unwrap_or_else(|e| Output::from_error(&e))
}

fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Table => report.to_table(),
        Format::Json => report.to_json() + "\n",
    }
}

pub fn cmd_stats(args: &StatsArgs) -> Result<Output, CommandError> {
    let mut report = Report::default();
    for m in &args.models {
        report.rows.push(ReportRow::for_model(&load_model(m)?));
    }
    Ok(Output::ok(render(&report, args.format)))
}

/// Builds the plan for `model` with the requested transform applied.
pub fn build_plan(model: &ModelFile, args: &PlanArgs) -> Result<CompressionPlan, CommandError> {
    let transform = match (args.transform, args.branches) {
        (Transform::Branch(0), Some(n)) if n > 0 => Transform::Branch(n),
        (Transform::Branch(0), _) => {
            return Err(CommandError::Usage(
                "--transform branch needs a branch count: branchN or --branches N".into(),
            ))
        }
        (t, None) => t,
        (_, Some(_)) => {
            return Err(CommandError::Usage(
                "--branches applies only to a bare --transform branch".into(),
            ))
        }
    };
    let rule = match (args.policy, transform) {
        (Some(RuleArg::Budget), _) => RankRule::Budget,
        (Some(RuleArg::ChannelFraction), _) | (None, Transform::Merge) => RankRule::ChannelFraction,
        (None, _) => RankRule::Budget,
    };
    let policy = Policy {
        skip_first_conv: !args.include_first,
        min_rank: args.min_rank,
        beta: args.beta,
        rank_rule: rule,
    };
    let plan = plan_model(model, args.alpha, &policy)?;
    Ok(match transform {
        Transform::None => plan,
        Transform::Merge => merge_plan(model, &plan, MergeOptions::layer_merging())?,
        Transform::Freeze => freeze_plan(&plan),
        Transform::Branch(n) => branch_plan(&plan, n)?,
    })
}

pub fn cmd_plan(args: &PlanArgs) -> Result<Output, CommandError> {
    let model = load_model(&args.model)?;
    let plan = build_plan(&model, args)?;
    let report = Report {
        rows: vec![ReportRow::for_model(&model), ReportRow::for_plan(&plan)],
    };
    let mut out = Output::default();
    match &args.out {
        Some(path) => {
            write_text(path, &(plan.to_json() + "\n"))?;
            out.stdout = render(&report, args.format);
        }
        None => {
            out.stdout = plan.to_json() + "\n";
            out.stderr = render(&report, args.format);
        }
    }
    for (layer, w) in plan.warnings() {
        out.warn(format!("{layer}: {w}"));
    }
    Ok(out)
}

pub fn cmd_decompose(args: &DecomposeArgs) -> Result<Output, CommandError> {
    let model = load_model(&args.model)?;
    let plan = CompressionPlan::from_json(&read_text(&args.plan)?)
        .map_err(|e| CommandError::Usage(format!("{}: {e}", args.plan.display())))?;
    let seed = resolve_seed(args.seed)?;
    let weights = match &args.weights {
        Some(dir) => WeightSource::Directory { path: dir.clone() },
        None => WeightSource::Seeded { seed },
    };
    let opts = DecomposeOptions {
        seed,
        weights,
        hooi_sweeps: args.hooi,
    };
    let manifest = write_bundle(&model, &plan, &opts, &args.out)?;
    if args.emit == Some(EmitFormat::Json) {
        for rec in &manifest.layers {
            for file in &rec.files {
                let src = args.out.join(file);
                let t = io::read_file(&src).map_err(|source| BundleError::File {
                    layer: rec.name.clone(),
                    path: src.display().to_string(),
                    source,
                })?;
                write_text(&src.with_extension("json"), &io::to_json(&t))?;
            }
        }
    }
    Ok(Output::ok(summarize(&manifest, &args.out)))
}

fn summarize(manifest: &Manifest, dir: &Path) -> String {
    let decomposed: Vec<_> = manifest
        .layers
        .iter()
        .filter(|l| l.scheme != "original")
        .collect();
    let worst = decomposed
        .iter()
        .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error));
    let mut s = format!(
        "{}: {} layers, {} factorized, bundle written to {}\n",
        manifest.model,
        manifest.layers.len(),
        decomposed.len(),
        dir.display()
    );
    if let Some(w) = worst {
        let _ = writeln!(
            s,
            "largest relative error: {:.6e} ({})",
            w.relative_error, w.name
        );
    }
    s
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<Output, CommandError> {
    let mode: VerifyMode = args.mode.into();
    let report = verify_bundle(&args.bundle, mode, env_seed()?)?;
    let mut out = Output::default();
    match args.format {
        Format::Json => {
            out.stdout = serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
        }
        Format::Table => {
            let width = report
                .checks
                .iter()
                .map(|c| c.layer.len())
                .max()
                .unwrap_or(0);
            for c in &report.checks {
                let _ = write!(
                    out.stdout,
                    "{}  {:<width$}  {:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.layer,
                    c.value
                );
                if let Some(note) = &c.note {
                    let _ = write!(out.stdout, "  ({note})");
                }
                out.stdout.push('\n');
            }
            let failed = report.failures().count();
            let _ = writeln!(
                out.stdout,
                "{}: {} of {} layers within {:e}",
                mode.name(),
                report.checks.len() - failed,
                report.checks.len(),
                report.tolerance
            );
        }
    }
    if !report.passed() {
        out.code = 1;
        for c in report.failures() {
            let _ = writeln!(
                out.stderr,
                "error: {} check failed for layer '{}' ({:.3e})",
                mode.name(),
                c.layer,
                c.value
            );
        }
    }
    Ok(out)
}

/// Scan settings for [`optimize_plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSettings {
    pub rmin_frac: f64,
    pub step: usize,
    /// Empty means every decomposed layer.
    pub layers: Vec<String>,
}

/// Runs the rank search on every selected Svd/Tucker entry of `plan`.
///
/// A layer whose profiling fails becomes passthrough with a warning; the
/// rest of the plan is unaffected.
pub fn optimize_plan(
    plan: &CompressionPlan,
    settings: &OptimizeSettings,
    provider: &mut dyn TimingProvider,
    mut drain_records: impl FnMut() -> Vec<crate::planner::ProfileRecord>,
) -> Result<CompressionPlan, CommandError> {
    if !(settings.rmin_frac > 0.0 && settings.rmin_frac <= 1.0) {
        return Err(CommandError::Usage(format!(
            "--rmin-frac must lie in (0, 1], got {}",
            settings.rmin_frac
        )));
    }
    for name in &settings.layers {
        if plan.entry(name).is_none() {
            return Err(CommandError::Usage(format!("unknown layer '{name}'")));
        }
    }
    let mut out = plan.clone();
    for e in &mut out.entries {
        if !settings.layers.is_empty() && !settings.layers.contains(&e.spec.name) {
            continue;
        }
        let r_init = match e.decision {
            Decision::Svd { rank } => rank,
            Decision::Tucker { r1, r2 } => r1.max(r2),
            _ => continue,
        };
        let r_min = ((r_init as f64 * settings.rmin_frac).ceil() as usize).clamp(1, r_init);
        match optimize_rank(&e.spec, r_init, r_min, settings.step, provider) {
            Ok(mut search) => {
                search.records = drain_records();
                let decision = match (search.choice, &e.decision) {
                    (RankChoice::Passthrough, _) => Decision::Passthrough,
                    (RankChoice::Rank(r), Decision::Svd { .. }) => Decision::Svd { rank: r },
                    (RankChoice::Rank(r), _) => Decision::Tucker {
                        r1: r.min(e.spec.in_channels),
                        r2: r.min(e.spec.out_channels),
                    },
                };
                e.set_decision(decision);
                e.profile = Some(search);
            }
            Err(err) => {
                drain_records();
                e.set_decision(Decision::Passthrough);
                e.warnings
                    .push(format!("profiling failed, kept original: {err}"));
            }
        }
    }
    out.totals = recompute(&out.entries);
    out.transform = "optimized".into();
    Ok(out)
}

pub fn cmd_optimize_ranks(args: &OptimizeArgs) -> Result<Output, CommandError> {
    let model = load_model(&args.model)?;
    let plan = plan_model(&model, args.alpha, &Policy::default())?;
    let seed = resolve_seed(args.seed)?;
    let profiler = std::cell::RefCell::new(NnProfiler::new(args.reps, args.max_hw, seed)?);
    struct Shared<'a>(&'a std::cell::RefCell<NnProfiler>);
    impl TimingProvider for Shared<'_> {
        fn original_time(&mut self, spec: &crate::planner::LayerSpec) -> Result<f64, PlanError> {
            self.0.borrow_mut().original_time(spec)
        }
        fn decomposed_time(
            &mut self,
            spec: &crate::planner::LayerSpec,
            rank: usize,
        ) -> Result<f64, PlanError> {
            self.0.borrow_mut().decomposed_time(spec, rank)
        }
    }
    let settings = OptimizeSettings {
        rmin_frac: args.rmin_frac,
        step: args.step,
        layers: args.layers.clone(),
    };
    let optimized = optimize_plan(&plan, &settings, &mut Shared(&profiler), || {
        std::mem::take(&mut profiler.borrow_mut().records)
    })?;
    let mut out = Output::default();
    let json = optimized.to_json() + "\n";
    let report = Report {
        rows: vec![
            ReportRow::for_model(&model),
            ReportRow::for_plan(&plan),
            ReportRow::for_plan(&optimized),
        ],
    };
    match &args.out {
        Some(path) => {
            write_text(path, &json)?;
            out.stdout = report.to_table();
        }
        None => {
            out.stdout = json;
            out.stderr = report.to_table();
        }
    }
    for (layer, w) in optimized.warnings() {
        out.warn(format!("{layer}: {w}"));
    }
    Ok(out)
}
