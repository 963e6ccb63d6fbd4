//! The `ata` command line. Each command is a thin wrapper over a library
//! call: it reads its inputs, writes report files under `--out` and returns
//! the text to echo.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ata_core::analytics::{
    compute_summary, extract_failures, recommend, summary_csv_string, write_failures, write_recommendations,
    RecommendConfig,
};
use ata_core::bench::{
    evaluate_candidate, load_benchmark, load_candidate, run_engine_as_candidate, write_benchmark, write_candidate,
    EvalReport, ScoreOptions, DEFAULT_TOLERANCE,
};
use ata_core::flow::{discover_task_flow, flow_to_dot, write_flow_file};
use ata_core::ingest::{load_trace_set, validate_trace, ValidateOptions, ValidationIssue};
use ata_core::model::{Severity, Trace};
use ata_core::par::Execution;
use ata_core::tracegen::{generate_suite, Suite, SuiteConfig};
use ata_core::variability::{
    run_variability, RunRecord, VariabilityOptions, VariabilityReport, VariabilityRunSet, DEFAULT_EXACT_BUDGET,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_ANALYSIS: u8 = 3;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 42;
/// Name of the candidate `gen` writes next to the ground truth.
pub const BUNDLED_CANDIDATE: &str = "tamas-like";

#[derive(Debug, Parser)]
#[command(name = "ata", version, about = "Analytics over agent execution traces")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Directory that receives report files.
    #[arg(long, global = true, default_value = "ata-out")]
    pub out: PathBuf,
    /// Form of the report echoed to standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Largest graph (in tasks) compared by exact search.
    #[arg(long, global = true, default_value_t = DEFAULT_EXACT_BUDGET)]
    pub ged_budget: usize,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Relative tolerance on execution time and cost when matching summaries.
    #[arg(long, global = true, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Run on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

impl Default for Global {
    fn default() -> Self {
        Global {
            out: PathBuf::from("ata-out"),
            format: Format::Text,
            ged_budget: DEFAULT_EXACT_BUDGET,
            seed: DEFAULT_SEED,
            tolerance: DEFAULT_TOLERANCE,
            sequential: false,
        }
    }
}

impl Global {
    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Dot,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate trace logs.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Discover the task flow of one log and write it with its summary,
    /// failure list and recommendations.
    Flow {
        path: PathBuf,
        #[arg(long)]
        dot: bool,
        #[arg(long)]
        flow_file: bool,
    },
    /// Compare repeated runs of one input.
    Variability {
        /// Log paths or glob patterns, one run each.
        #[arg(required = true)]
        patterns: Vec<String>,
        #[arg(long, allow_hyphen_values = true)]
        expected: f64,
    },
    /// Score an analytics candidate against a benchmark directory.
    Bench {
        dir: PathBuf,
        #[arg(long, conflicts_with = "self_", required_unless_present = "self_")]
        candidate: Option<String>,
        /// Score this engine's own analysis of the logs.
        #[arg(long = "self")]
        self_: bool,
    },
    /// Generate a synthetic benchmark suite into `--out`.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(subcommand)]
        action: Option<GenAction>,
    },
}

#[derive(Debug, Subcommand)]
pub enum GenAction {
    /// Print the suite composition without writing it.
    Census,
}

/// What a command produced. `code` is nonzero when the command ran but its
/// findings should fail the invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub files: Vec<PathBuf>,
    pub code: u8,
}

impl Outcome {
    fn ok(text: String, files: Vec<PathBuf>) -> Self {
        Outcome { text, files, code: EXIT_OK }
    }
}

/// Exit code for a failed command: analysis failures get 3, everything
/// else (usage, unreadable or malformed input) 2.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let analysis = err
        .chain()
        .filter_map(|e| e.downcast_ref::<ata_core::Error>())
        .any(|e| e.is_analysis_error());
    if analysis {
        EXIT_ANALYSIS
    } else {
        EXIT_INPUT
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest { paths } => cmd_ingest(paths, g),
        Command::Flow { path, dot, flow_file } => cmd_flow(path, *dot, *flow_file, g),
        Command::Variability { patterns, expected } => cmd_variability(patterns, *expected, g),
        Command::Bench { dir, candidate, .. } => cmd_bench(dir, candidate.as_deref(), g),
        Command::Gen { config, action } => match action {
            Some(GenAction::Census) => cmd_census(config.as_deref(), g),
            None => cmd_gen(config.as_deref(), g),
        },
    }
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    files.push(path);
    Ok(())
}

fn read_log(path: &Path) -> anyhow::Result<(Trace, Vec<ValidationIssue>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let set = load_trace_set(text.lines()).with_context(|| path.display().to_string())?;
    let (trace, mut warnings) = set.primary().ok_or(ata_core::Error::EmptyInput)?;
    let trace = trace.clone();
    warnings.extend(set.parse_warnings);
    Ok((trace, warnings))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into())
}

/// Validation findings for every log. Exits 3 when any is critical.
pub fn cmd_ingest(paths: &[PathBuf], g: &Global) -> anyhow::Result<Outcome> {
    let mut text = String::new();
    let mut critical = 0;
    for path in paths {
        let (trace, mut issues) = read_log(path)?;
        issues.extend(validate_trace(&trace, &ValidateOptions::default()));
        for issue in &issues {
            if issue.severity == Severity::CriticalError {
                critical += 1;
            }
            text.push_str(&format!("{}: {issue}\n", path.display()));
        }
    }
    let mut files = Vec::new();
    write(g.out.join("ingest-report.txt"), &text, &mut files)?;
    Ok(Outcome {
        text,
        files,
        code: if critical > 0 { EXIT_ANALYSIS } else { EXIT_OK },
    })
}

/// Writes `<stem>.flow` (the default), `<stem>.dot`, and always the
/// summary, failure list and recommendations for one log.
pub fn cmd_flow(path: &Path, dot: bool, flow_file: bool, g: &Global) -> anyhow::Result<Outcome> {
    let (trace, _) = read_log(path)?;
    let flow = discover_task_flow(&trace).with_context(|| path.display().to_string())?;
    let name = stem(path);
    let summary = compute_summary(&name, &trace, &flow);
    let failures = extract_failures(&trace);
    let recs = recommend(&flow, &RecommendConfig::default());

    let mut files = Vec::new();
    let dot = dot || g.format == Format::Dot;
    let flow_text = write_flow_file(&flow);
    let dot_text = flow_to_dot(&flow);
    if flow_file || !dot {
        write(g.out.join(format!("{name}.flow")), &flow_text, &mut files)?;
    }
    if dot {
        write(g.out.join(format!("{name}.dot")), &dot_text, &mut files)?;
    }
    let csv = summary_csv_string(std::slice::from_ref(&summary));
    write(g.out.join(format!("{name}.summary.csv")), &csv, &mut files)?;
    write(g.out.join(format!("{name}.failures")), &write_failures(&failures), &mut files)?;
    write(g.out.join(format!("{name}.recommendations.json")), &write_recommendations(&recs), &mut files)?;

    let text = match g.format {
        Format::Dot => dot_text,
        Format::Csv => csv,
        Format::Text => {
            let mut t = format!(
                "{name}: {} tasks, {} failures, happy path: {}\n",
                flow.len(),
                failures.len(),
                summary.happy_path
            );
            for r in &recs {
                t.push_str(&format!("recommend {:?}: {}\n", r.kind, r.rationale));
            }
            t
        }
    };
    Ok(Outcome::ok(text, files))
}

/// Expands patterns into a sorted, de-duplicated list of files. A pattern
/// without glob metacharacters names a file directly.
pub fn expand_patterns(patterns: &[String]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        let mut hit = false;
        for entry in glob::glob(p).with_context(|| format!("bad glob `{p}`"))? {
            out.push(entry?);
            hit = true;
        }
        if !hit {
            bail!("`{p}` matches no files");
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// The run set the variability command analyses, one run per log.
pub fn load_runset(paths: &[PathBuf], expected: f64) -> anyhow::Result<VariabilityRunSet> {
    let mut runs = Vec::new();
    for path in paths {
        let (trace, _) = read_log(path)?;
        let flow = discover_task_flow(&trace).with_context(|| path.display().to_string())?;
        runs.push(RunRecord {
            summary: compute_summary(&stem(path), &trace, &flow),
            output: trace.result(),
            flow,
            expected,
        });
    }
    Ok(VariabilityRunSet { runs })
}

pub fn variability_options(g: &Global) -> VariabilityOptions {
    VariabilityOptions {
        budget: g.ged_budget,
        exec: g.exec(),
        ..VariabilityOptions::default()
    }
}

pub fn cmd_variability(patterns: &[String], expected: f64, g: &Global) -> anyhow::Result<Outcome> {
    let paths = expand_patterns(patterns)?;
    if paths.len() < 2 {
        bail!("variability needs at least 2 run logs, got {}", paths.len());
    }
    let runset = load_runset(&paths, expected)?;
    let report: VariabilityReport = run_variability(&runset, &variability_options(g))?;
    let mut files = Vec::new();
    write(g.out.join("variability.txt"), &report.to_text(), &mut files)?;
    write(g.out.join("variability.csv"), &report.to_csv(), &mut files)?;
    let text = if g.format == Format::Csv { report.to_csv() } else { report.to_text() };
    Ok(Outcome::ok(text, files))
}

pub fn score_options(g: &Global) -> ScoreOptions {
    ScoreOptions {
        tolerance: g.tolerance,
        ged_budget: g.ged_budget,
        ..ScoreOptions::default()
    }
}

/// Scores the named candidate, or this engine when `candidate` is `None`.
pub fn cmd_bench(dir: &Path, candidate: Option<&str>, g: &Global) -> anyhow::Result<Outcome> {
    let bench = load_benchmark(dir)?;
    let (name, outputs) = match candidate {
        Some(name) => {
            if !dir.join("candidates").join(name).is_dir() {
                bail!("no candidate `{name}` under {}", dir.join("candidates").display());
            }
            (name.to_string(), load_candidate(&bench, name)?)
        }
        None => ("self".to_string(), run_engine_as_candidate(&bench, g.exec())),
    };
    let report: EvalReport = evaluate_candidate(&bench, &name, &outputs, &score_options(g), g.exec())?;
    let mut files = Vec::new();
    write(g.out.join(format!("eval-{name}.txt")), &report.to_text(), &mut files)?;
    write(g.out.join(format!("eval-{name}.csv")), &report.to_csv(), &mut files)?;
    let text = if g.format == Format::Csv { report.to_csv() } else { report.to_text() };
    Ok(Outcome::ok(text, files))
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<SuiteConfig> {
    match path {
        None => Ok(SuiteConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SuiteConfig::from_toml(&text).with_context(|| p.display().to_string())
        }
    }
}

fn suite(config: Option<&Path>, g: &Global) -> anyhow::Result<Suite> {
    let cfg = load_config(config)?;
    generate_suite(&cfg, g.seed, g.exec()).map_err(|e| anyhow!(e))
}

/// Writes the suite, its ground truth, the bundled candidate and the
/// config it was generated from.
pub fn cmd_gen(config: Option<&Path>, g: &Global) -> anyhow::Result<Outcome> {
    let suite = suite(config, g)?;
    write_benchmark(&g.out, &suite.cases)?;
    write_candidate(&g.out, BUNDLED_CANDIDATE, &suite.tamas_like())?;
    let mut files = Vec::new();
    let census = format!("seed: {}\n{}\n", suite.seed, suite.census());
    write(g.out.join("suite.toml"), &suite.config.to_toml(), &mut files)?;
    write(g.out.join("census.txt"), &census, &mut files)?;
    Ok(Outcome::ok(
        format!("wrote {} cases to {}\n{census}", suite.cases.len(), g.out.display()),
        files,
    ))
}

pub fn cmd_census(config: Option<&Path>, g: &Global) -> anyhow::Result<Outcome> {
    let suite = suite(config, g)?;
    Ok(Outcome::ok(format!("{}\n", suite.census()), Vec::new()))
}
