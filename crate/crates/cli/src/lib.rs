//! Command-line driver: generate streams, run methods over seeds, sweep the
//! (N, J) grid and aggregate results tables.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use gmocp_core::conformal::ScoreParams;
use gmocp_core::data_io::{
    aggregate, append_results, generate_stream, read_results, read_step_log, rolling_coverage,
    write_step_log, DriftKind, DriftProfile, MeanStd, ResultRow, Stream, SyntheticSpec,
};
use gmocp_core::engine::{Method, RunConfig, RunReport};
use gmocp_core::runner::{run_batch, Execution};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration values.
    Usage(String),
    /// Missing, malformed or inconsistent data.
    Data(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Data(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "gmocp",
    version,
    about = "Multi-model online conformal prediction experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic drifting probability stream.
    Generate(GenerateArgs),
    /// Run one method over a list of seeds.
    Run(RunArgs),
    /// Run the (N, J) grid plus the full-pool baseline.
    Sweep(SweepArgs),
    /// Aggregate a results table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DriftArg {
    Gradual,
    Abrupt,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "stream.jsonl")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    pub labels: u64,
    #[arg(long, default_value_t = 3000, value_parser = clap::value_parser!(u64).range(1..))]
    pub length: u64,
    /// Comma-separated per-model quality levels; defaults to six strong, one
    /// medium and one weak model.
    #[arg(long, value_delimiter = ',')]
    pub qualities: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "gradual")]
    pub drift: DriftArg,
    #[arg(long, default_value_t = 1000)]
    pub period: usize,
    #[arg(long, default_value_t = 0.1)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 4)]
    pub segments: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Hyperparameter flags shared by `run` and `sweep`; they override the
/// config file.
#[derive(Debug, Args, Default)]
pub struct ParamArgs {
    /// Flat JSON config file (alpha, eta, epsilon, eta_e, N, J, xi, k_reg,
    /// warmup, seeds, method).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long = "eta-e")]
    pub eta_e: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long = "k-reg")]
    pub k_reg: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Seeds as `a..b` (inclusive), a comma list, or a single value.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub stream: PathBuf,
    /// gmocp, mocp or single:<model>.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long = "N")]
    pub n_trials: Option<usize>,
    #[arg(long = "J")]
    pub n_selective: Option<usize>,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value = "results.csv")]
    pub out: PathBuf,
    /// Directory for per-step logs, one CSV per run.
    #[arg(long)]
    pub steps_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long = "grid-n", value_delimiter = ',', default_value = "1,3,5")]
    pub grid_n: Vec<usize>,
    #[arg(long = "grid-j", value_delimiter = ',', default_value = "1,2,4")]
    pub grid_j: Vec<usize>,
    /// Skip the full-pool baseline rows.
    #[arg(long)]
    pub no_baseline: bool,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value = "results.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub steps_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, default_value = "results.csv")]
    pub results: PathBuf,
    /// Per-step logs to turn into rolling coverage.
    #[arg(long)]
    pub steps_dir: Option<PathBuf>,
    #[arg(long, default_value = "rolling.csv")]
    pub rolling_out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub window: usize,
}

#[derive(Debug, Deserialize, Default, Clone)]
#[serde(untagged)]
enum SeedsValue {
    #[default]
    Unset,
    Text(String),
    List(Vec<u64>),
}

/// Flat JSON config file.
#[derive(Debug, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    alpha: Option<f64>,
    eta: Option<f64>,
    epsilon: Option<f64>,
    eta_e: Option<f64>,
    #[serde(rename = "N")]
    n_trials: Option<usize>,
    #[serde(rename = "J")]
    n_selective: Option<usize>,
    xi: Option<f64>,
    k_reg: Option<usize>,
    warmup: Option<usize>,
    #[serde(default)]
    seeds: SeedsValue,
    method: Option<String>,
}

/// Parses `a..b` (inclusive), `a..=b`, `a,b,c` or a single seed.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let text = text.trim();
    let num = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| format!("bad seed {s:?}"))
    };
    if let Some((a, b)) = text.split_once("..") {
        let (lo, hi) = (num(a)?, num(b.trim_start_matches('='))?);
        if lo > hi {
            return Err(format!("empty seed range {text:?}"));
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',').map(num).collect()
}

/// A fully resolved experiment: base config plus seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub base: RunConfig,
    pub seeds: Vec<u64>,
}

fn resolve(
    params: &ParamArgs,
    method: Option<&str>,
    n: Option<usize>,
    j: Option<usize>,
) -> Result<Resolved, CliError> {
    let file = match &params.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(CliError::Data)?;
            serde_json::from_str::<FileConfig>(&text)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let mut cfg = RunConfig::default();
    cfg.alpha_target = params.alpha.or(file.alpha).unwrap_or(cfg.alpha_target);
    cfg.eta = params.eta.or(file.eta).unwrap_or(cfg.eta);
    cfg.epsilon = params.epsilon.or(file.epsilon).unwrap_or(cfg.epsilon);
    cfg.eta_e = params.eta_e.or(file.eta_e).unwrap_or(cfg.eta_e);
    cfg.n_trials = n.or(file.n_trials).unwrap_or(cfg.n_trials);
    cfg.n_selective = j.or(file.n_selective).unwrap_or(cfg.n_selective);
    cfg.score_params = ScoreParams {
        xi: params.xi.or(file.xi).unwrap_or(cfg.score_params.xi),
        k_reg: params
            .k_reg
            .or(file.k_reg)
            .unwrap_or(cfg.score_params.k_reg),
    };
    cfg.warmup = params.warmup.or(file.warmup).unwrap_or(cfg.warmup);
    if let Some(m) = method.map(str::to_string).or(file.method) {
        cfg.method = m.parse().map_err(usage)?;
    }
    let seeds = match (&params.seeds, file.seeds) {
        (Some(s), _) => parse_seeds(s).map_err(usage)?,
        (None, SeedsValue::Text(s)) => parse_seeds(&s).map_err(usage)?,
        (None, SeedsValue::List(v)) => v,
        (None, SeedsValue::Unset) => vec![0],
    };
    if seeds.is_empty() {
        return Err(usage("no seeds given"));
    }
    Ok(Resolved { base: cfg, seeds })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

/// Hash of everything in the config except the seed.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_vec(&RunConfig {
        seed: 0,
        ..cfg.clone()
    })
    .expect("config serializes");
    sha256_hex(&canonical)
}

struct LoadedStream {
    stream: Stream,
    hash: String,
}

fn load(path: &Path) -> Result<LoadedStream, CliError> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading stream {}", path.display()))
        .map_err(CliError::Data)?;
    let stream = Stream::load(path)
        .with_context(|| format!("loading stream {}", path.display()))
        .map_err(CliError::Data)?;
    Ok(LoadedStream {
        hash: sha256_hex(&bytes),
        stream,
    })
}

fn graph_dims(cfg: &RunConfig) -> (Option<usize>, Option<usize>) {
    match cfg.method {
        Method::Gmocp => (Some(cfg.n_trials), Some(cfg.n_selective)),
        _ => (None, None),
    }
}

pub fn step_log_name(cfg: &RunConfig) -> String {
    let method = match cfg.method {
        Method::Gmocp => format!("gmocp_N{}_J{}", cfg.n_trials, cfg.n_selective),
        Method::Mocp => "mocp".to_string(),
        Method::Single(m) => format!("single{m}"),
    };
    format!("{method}_seed{}.csv", cfg.seed)
}

fn to_row(report: &RunReport, stream_hash: &str) -> ResultRow {
    let (n, j) = graph_dims(&report.config);
    ResultRow {
        method: report.config.method.to_string(),
        n_trials: n,
        n_selective: j,
        seed: report.config.seed,
        coverage: report.coverage,
        avg_width: report.avg_width,
        runtime_seconds: report.runtime_seconds,
        updates_total: report.updates_total,
        config_hash: config_hash(&report.config),
        stream_hash: stream_hash.to_string(),
    }
}

/// Runs every config, writes per-step logs and appends rows in input order.
fn execute(
    loaded: &LoadedStream,
    configs: &[RunConfig],
    jobs: usize,
    out: &Path,
    steps_dir: Option<&Path>,
) -> Result<Vec<ResultRow>, CliError> {
    for cfg in configs {
        cfg.validate(loaded.stream.n_models(), loaded.stream.len())
            .map_err(|e| usage(e.to_string()))?;
    }
    if let Some(dir) = steps_dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(CliError::Data)?;
    }
    let reports = run_batch(&loaded.stream, configs, Execution::from_jobs(jobs));
    let mut rows = Vec::with_capacity(reports.len());
    for report in reports {
        let report = report.context("running method").map_err(CliError::Data)?;
        if let Some(dir) = steps_dir {
            let path = dir.join(step_log_name(&report.config));
            write_step_log(&report.per_step, &path)
                .with_context(|| format!("writing {}", path.display()))
                .map_err(CliError::Data)?;
        }
        rows.push(to_row(&report, &loaded.hash));
    }
    append_results(&rows, out)
        .with_context(|| format!("writing results {}", out.display()))
        .map_err(CliError::Data)?;
    Ok(rows)
}

fn summary_line(label: &str, rows: &[&ResultRow]) -> String {
    let col =
        |f: fn(&ResultRow) -> f64| MeanStd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
    format!(
        "{label}: runs {} | coverage (%) {} | avg width {} | run time (s) {}",
        rows.len(),
        col(|r| r.coverage).scaled(100.0),
        col(|r| r.avg_width),
        col(|r| r.runtime_seconds),
    )
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<String, CliError> {
    let mut spec = SyntheticSpec {
        n_labels: args.labels as usize,
        length: args.length as usize,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    if let Some(q) = &args.qualities {
        spec.model_names = (0..q.len()).map(|i| format!("model-{i}")).collect();
        spec.drift.base_quality = q.clone();
    }
    spec.drift = DriftProfile {
        kind: match args.drift {
            DriftArg::Gradual => DriftKind::Gradual {
                period: args.period,
                amplitude: args.amplitude,
            },
            DriftArg::Abrupt => DriftKind::Abrupt {
                segments: args.segments,
            },
        },
        base_quality: spec.drift.base_quality,
    };
    let stream = generate_stream(&spec).map_err(|e| usage(e.to_string()))?;
    stream
        .write(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(CliError::Data)?;
    let h = &stream.header;
    Ok(format!(
        "wrote {}: {} models, {} labels, {} steps, {:?} drift, seed {}",
        args.out.display(),
        h.n_models,
        h.n_labels,
        h.length,
        args.drift,
        args.seed
    ))
}

pub fn cmd_run(args: &RunArgs) -> Result<String, CliError> {
    let resolved = resolve(
        &args.params,
        args.method.as_deref(),
        args.n_trials,
        args.n_selective,
    )?;
    let loaded = load(&args.stream)?;
    let configs: Vec<RunConfig> = resolved
        .seeds
        .iter()
        .map(|&seed| RunConfig {
            seed,
            ..resolved.base.clone()
        })
        .collect();
    let rows = execute(
        &loaded,
        &configs,
        args.params.jobs,
        &args.out,
        args.steps_dir.as_deref(),
    )?;
    let (n, j) = graph_dims(&resolved.base);
    let label = match (n, j) {
        (Some(n), Some(j)) => format!("{} N={n} J={j}", resolved.base.method),
        _ => resolved.base.method.to_string(),
    };
    Ok(summary_line(&label, &rows.iter().collect::<Vec<_>>()))
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<String, CliError> {
    let resolved = resolve(&args.params, Some("gmocp"), None, None)?;
    let loaded = load(&args.stream)?;
    let mut cells: Vec<RunConfig> = Vec::new();
    if !args.no_baseline {
        cells.push(resolved.base.with_method(Method::Mocp));
    }
    for &n in &args.grid_n {
        for &j in &args.grid_j {
            cells.push(RunConfig {
                n_trials: n,
                n_selective: j,
                method: Method::Gmocp,
                ..resolved.base.clone()
            });
        }
    }
    let done: HashSet<_> = if args.out.exists() {
        read_results(&args.out)
            .with_context(|| format!("reading {}", args.out.display()))
            .map_err(CliError::Data)?
            .iter()
            .map(ResultRow::key)
            .collect()
    } else {
        HashSet::new()
    };
    let mut todo = Vec::new();
    let mut skipped = 0;
    for cell in &cells {
        for &seed in &resolved.seeds {
            let cfg = RunConfig {
                seed,
                ..cell.clone()
            };
            let probe = to_row(
                &RunReport {
                    config: cfg.clone(),
                    coverage: 0.0,
                    avg_width: 0.0,
                    runtime_seconds: 0.0,
                    updates_total: 0,
                    per_step: Vec::new(),
                },
                &loaded.hash,
            );
            if done.contains(&probe.key()) {
                skipped += 1;
            } else {
                todo.push(cfg);
            }
        }
    }
    let rows = if todo.is_empty() {
        Vec::new()
    } else {
        execute(
            &loaded,
            &todo,
            args.params.jobs,
            &args.out,
            args.steps_dir.as_deref(),
        )?
    };
    Ok(format!(
        "sweep: {} configurations x {} seeds, {} runs executed, {} already present",
        cells.len(),
        resolved.seeds.len(),
        rows.len(),
        skipped
    ))
}

pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    let rows = read_results(&args.results)
        .with_context(|| format!("reading {}", args.results.display()))
        .map_err(CliError::Data)?;
    if rows.is_empty() {
        return Err(CliError::Data(anyhow::anyhow!(
            "no rows in {}",
            args.results.display()
        )));
    }
    let groups = aggregate(&rows)
        .context("aggregating results")
        .map_err(CliError::Data)?;
    let mut out = String::new();
    let dim = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    writeln!(
        out,
        "{:<10} {:>3} {:>3} {:>5}  {:<18} {:<18} {:<18}",
        "method", "N", "J", "runs", "Coverage (%)", "Avg Width", "Run Time (s)"
    )
    .unwrap();
    for g in &groups {
        writeln!(
            out,
            "{:<10} {:>3} {:>3} {:>5}  {:<18} {:<18} {:<18}",
            g.method,
            dim(g.n_trials),
            dim(g.n_selective),
            g.runs,
            g.coverage.scaled(100.0).to_string(),
            g.avg_width.to_string(),
            format!(
                "{:.4} ± {:.4}",
                g.runtime_seconds.mean, g.runtime_seconds.std
            ),
        )
        .unwrap();
    }
    if let Some(dir) = &args.steps_dir {
        let n = write_rolling(dir, &args.rolling_out, args.window)?;
        writeln!(
            out,
            "rolling coverage for {n} runs written to {}",
            args.rolling_out.display()
        )
        .unwrap();
    }
    Ok(out.trim_end().to_string())
}

fn write_rolling(dir: &Path, out: &Path, window: usize) -> Result<usize, CliError> {
    let mut logs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))
        .map_err(CliError::Data)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    logs.sort();
    let mut text = String::from("run,t,rolling_coverage,rolling_width\n");
    for path in &logs {
        let steps = read_step_log(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(CliError::Data)?;
        let run = path.file_stem().unwrap_or_default().to_string_lossy();
        for (t, cov, width) in rolling_coverage(&steps, window) {
            writeln!(text, "{run},{t},{cov},{width}").unwrap();
        }
    }
    std::fs::write(out, text)
        .with_context(|| format!("writing {}", out.display()))
        .map_err(CliError::Data)?;
    Ok(logs.len())
}

pub fn dispatch(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("0..9").unwrap().len(), 10);
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("5, 7,9").unwrap(), vec![5, 7, 9]);
        assert_eq!(parse_seeds("3").unwrap(), vec![3]);
        assert!(parse_seeds("4..1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn flags_override_file_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"alpha": 0.2, "N": 3, "J": 2, "seeds": [4, 5], "method": "mocp"}"#,
        )
        .unwrap();
        let params = ParamArgs {
            config: Some(path.clone()),
            alpha: Some(0.05),
            ..ParamArgs::default()
        };
        let r = resolve(&params, None, None, Some(4)).unwrap();
        assert_eq!(r.base.alpha_target, 0.05);
        assert_eq!((r.base.n_trials, r.base.n_selective), (3, 4));
        assert_eq!(r.base.method, Method::Mocp);
        assert_eq!(r.seeds, vec![4, 5]);

        std::fs::write(&path, r#"{"alpha": 0.2, "lr": 3}"#).unwrap();
        let params = ParamArgs {
            config: Some(path),
            ..ParamArgs::default()
        };
        assert!(matches!(
            resolve(&params, None, None, None),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn config_hash_ignores_seed_only() {
        let a = RunConfig::default();
        assert_eq!(
            config_hash(&a),
            config_hash(&RunConfig {
                seed: 9,
                ..a.clone()
            })
        );
        assert_ne!(
            config_hash(&a),
            config_hash(&RunConfig { n_trials: 3, ..a })
        );
    }
}
