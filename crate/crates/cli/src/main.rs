use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use mtft_core::io::{self, EmbeddingFormat, IoError, RunSummary};
use mtft_core::sim::{self, Init, SimConfig, SimError};
use mtft_core::stats::{self, Ridge, StatsError};
use mtft_core::theory::{verify_world, VerifyConfig};
use mtft_core::{SelectionConfig, SelectionError};

const EXIT_INPUT: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

/// Task selection and linear-world multitask finetuning toolkit.
#[derive(Parser)]
#[command(name = "mtft", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select finetuning tasks for a target by consistency and diversity.
    Select(SelectArgs),
    /// Coverage of a target mean by the Gaussian fitted to a pool.
    Coverage(CoverageArgs),
    /// Run the theory check suite on a world spec.
    Verify(VerifyArgs),
    /// Sweep the finetuning simulator over task and sample counts.
    Simulate(SimulateArgs),
}

#[derive(clap::Args)]
struct SelectArgs {
    /// Manifest listing the target and candidate embedding files.
    #[arg(long)]
    manifest: PathBuf,
    /// Relative coverage increase required to accept a candidate.
    #[arg(long, default_value_t = mtft_core::selection::DEFAULT_THRESHOLD_P)]
    p: f64,
    /// Covariance ridge: `auto` or a non-negative number.
    #[arg(long, default_value = "auto")]
    ridge: Ridge,
    /// Where to write the JSON selection report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop after this many selected tasks.
    #[arg(long)]
    max_selected: Option<usize>,
    /// Embed a timestamp in the report.
    #[arg(long)]
    stamp: bool,
}

#[derive(clap::Args)]
struct CoverageArgs {
    /// Embedding files pooled into the finetuning distribution.
    #[arg(long, num_args = 1.., required = true)]
    pool: Vec<PathBuf>,
    /// Target embedding file.
    #[arg(long)]
    target: PathBuf,
    /// Covariance ridge: `auto` or a non-negative number.
    #[arg(long, default_value = "auto")]
    ridge: Ridge,
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// World spec (TOML).
    #[arg(long)]
    world: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the Monte-Carlo head oracle.
    #[arg(long, default_value_t = VerifyConfig::default().seed)]
    seed: u64,
    /// Embed a timestamp in the report.
    #[arg(long)]
    stamp: bool,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// World spec (TOML).
    #[arg(long)]
    world: PathBuf,
    /// Comma-separated numbers of finetuning tasks.
    #[arg(long = "M", value_delimiter = ',', default_value = "10,20,40,80")]
    tasks: Vec<usize>,
    /// Comma-separated numbers of samples per task.
    #[arg(long = "m", value_delimiter = ',', default_value = "25")]
    samples: Vec<usize>,
    /// Replicates per cell.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// Step size.
    #[arg(long, default_value_t = sim::DEFAULT_GAMMA)]
    gamma: f64,
    /// Passes over the task list.
    #[arg(long, default_value_t = sim::DEFAULT_EPOCHS)]
    epochs: usize,
    /// Base seed from which every replicate seed is derived.
    #[arg(long, default_value_t = mtft_core::fixtures::TWO_CLUSTER_SEED)]
    seed: u64,
    /// Initial representation: zero, random_ball or closed_form_target.
    #[arg(long, default_value = "random_ball")]
    init: Init,
    /// Where to write the sweep table (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the JSON run summary.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Embed a timestamp in the summary.
    #[arg(long)]
    stamp: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    fn numerical(message: impl ToString) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.to_string(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Self::input(e)
    }
}

fn stats_failure(e: StatsError) -> Failure {
    match e {
        StatsError::Singular { .. } => Failure::numerical(e),
        other => Failure::input(other),
    }
}

fn selection_failure(e: SelectionError) -> Failure {
    let singular = match &e {
        SelectionError::Stats(s) => matches!(s, StatsError::Singular { .. }),
        SelectionError::Target { source, .. } | SelectionError::Candidate { source, .. } => {
            matches!(source, StatsError::Singular { .. })
        }
        _ => false,
    };
    if singular {
        Failure::numerical(e)
    } else {
        Failure::input(e)
    }
}

fn stamp_now() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn write_summary<C: Serialize, R: Serialize>(
    path: &Path,
    command: &str,
    config: C,
    result: R,
    stamp: bool,
) -> Result<(), Failure> {
    let mut summary = RunSummary::new(command, config, result);
    if stamp {
        summary.stamp = Some(stamp_now());
    }
    io::write_file(path, io::write_summary(&summary))?;
    Ok(())
}

#[derive(Serialize)]
struct SelectEcho<'a> {
    manifest: &'a Path,
    selection: SelectionConfig,
}

fn cmd_select(args: SelectArgs) -> Result<(), Failure> {
    let manifest = io::read_manifest(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let (target, candidates) = io::load_manifest_sets(&manifest, base)?;
    let config = SelectionConfig {
        threshold_p: args.p,
        ridge: args.ridge,
        max_selected: args.max_selected,
    };
    let result = mtft_core::select(&candidates, &target, &config).map_err(selection_failure)?;
    if let Some(out) = &args.out {
        let echo = SelectEcho {
            manifest: &args.manifest,
            selection: config,
        };
        write_summary(out, "select", echo, &result, args.stamp)?;
    }
    for id in &result.selected {
        println!("{id}");
    }
    Ok(())
}

fn cmd_coverage(args: CoverageArgs) -> Result<(), Failure> {
    let read = |p: &PathBuf| io::read_embeddings(p, EmbeddingFormat::from_path(p));
    let pool = args.pool.iter().map(read).collect::<Result<Vec<_>, _>>()?;
    let target = read(&args.target)?;
    let summary = stats::summarize(&pool).map_err(stats_failure)?;
    let target_mean = stats::summarize([&target]).map_err(stats_failure)?.mean;
    let detail = stats::coverage_detail(&summary, &target_mean, args.ridge).map_err(stats_failure)?;
    println!("{} {:?}", detail.score, detail.mahalanobis_sq);
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let world = io::read_world_spec(&args.world)?;
    let config = VerifyConfig {
        seed: args.seed,
        ..VerifyConfig::default()
    };
    let report = verify_world(&world, &config);
    print!("{}", io::write_checks_csv(&report.rows));
    if let Some(out) = &args.out {
        #[derive(Serialize)]
        struct Echo<'a> {
            world: &'a mtft_core::LinearWorldSpec,
            verify: &'a VerifyConfig,
        }
        let echo = Echo {
            world: &world,
            verify: &config,
        };
        write_summary(out, "verify", echo, &report, args.stamp)?;
    }
    if report.numerical_failure {
        return Err(Failure::numerical("a numerical solver did not converge"));
    }
    if report.has_failure() {
        let failed: Vec<&str> = report
            .rows
            .iter()
            .filter(|r| r.status == mtft_core::theory::CheckStatus::Fail)
            .map(|r| r.check.as_str())
            .collect();
        return Err(Failure {
            code: EXIT_INVARIANT,
            message: format!("failed checks: {}", failed.join(", ")),
        });
    }
    Ok(())
}

const EQUAL_PRODUCT_TOLERANCE: f64 = 0.15;

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let world = io::read_world_spec(&args.world)?;
    let mut template = SimConfig::new(world, 1, 1, args.seed);
    template.gamma = args.gamma;
    template.epochs = args.epochs;
    template.init = args.init;
    let cells = sim::sweep(&template, &args.tasks, &args.samples, args.seeds).map_err(|e| match e {
        SimError::Diverged { .. } => Failure::numerical(e),
        other => Failure::input(other),
    })?;

    if let Some(out) = &args.out {
        io::write_file(out, io::write_sweep_csv(&cells))?;
    }
    if let Some(path) = &args.summary {
        write_summary(path, "simulate", &template, &cells, args.stamp)?;
    }

    for &m in &args.samples {
        let t = sim::trend_in_tasks(&cells, m);
        if t.points.len() < 2 {
            continue;
        }
        println!(
            "monotone_in_M m={m} inversions={} improves={} {}",
            t.inversions,
            t.improves,
            if t.passed() { "PASS" } else { "FAIL" }
        );
    }
    for p in sim::equal_product_pairs(&cells) {
        println!(
            "equal_Mm ({},{}) vs ({},{}) relative_difference={:?} {}",
            p.first.0,
            p.first.1,
            p.second.0,
            p.second.1,
            p.relative_difference,
            if p.relative_difference <= EQUAL_PRODUCT_TOLERANCE {
                "PASS"
            } else {
                "FAIL"
            }
        );
    }
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("MTFT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::input(format!("MTFT_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::input(format!("cannot configure thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Coverage(a) => cmd_coverage(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Simulate(a) => cmd_simulate(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
