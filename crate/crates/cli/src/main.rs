use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use visa_core::cot::{run_cot, StageEndpoints};
use visa_core::dataset::{generate_dataset, load_instance, load_manifest, render_dataset, DatasetConfig};
use visa_core::expr::print;
use visa_core::gateway::{EndpointConfig, QueryMode};
use visa_core::harness::{
    load_predictions, load_report, render_table, run_eval, write_report, RunConfig, Source,
    TIMING_FILE,
};
use visa_core::instance::Split;
use visa_core::metrics::{num_score, read_prediction};
use visa_core::refine::{refine, RefineConfig};

#[derive(Parser)]
#[command(name = "visa", version, about = "Field-to-expression dataset generation, scoring and CoT synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate instances, images and the manifest.
    Generate {
        #[arg(long, default_value_t = 10)]
        per_scenario: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "dataset")]
        out: PathBuf,
        #[arg(long)]
        eval_per_scenario: Option<usize>,
        #[arg(long)]
        gold_per_scenario: Option<usize>,
        /// Skip the PNG renders.
        #[arg(long)]
        no_render: bool,
    },
    /// Re-render images for an existing dataset.
    Render {
        #[arg(long, default_value = "dataset")]
        dataset: PathBuf,
    },
    /// Score predictions or a live endpoint on a split.
    Eval {
        #[arg(long, default_value = "dataset")]
        dataset: PathBuf,
        /// Split to score, or `all`.
        #[arg(long, default_value = "eval")]
        split: String,
        /// Line-delimited {"id", "raw"} records; omit to query --endpoint.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value = "vlm")]
        mode: String,
        /// Add the refined numeric column.
        #[arg(long)]
        refine: bool,
        #[arg(long, default_value = "runs/eval")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Fit the constants of each prediction and write the refined expressions.
    Refine {
        #[arg(long, default_value = "dataset")]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long, default_value = "refined.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the staged CoT synthesis and write the gold manifest.
    Cot {
        #[arg(long, default_value = "dataset")]
        dataset: PathBuf,
        #[arg(long, default_value = "gold-cot")]
        split: String,
        /// Output directory; defaults to `<dataset>/cot`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON file with per-stage endpoint settings.
        #[arg(long)]
        endpoints: Option<PathBuf>,
        /// Ignore cached stage outputs.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Print the tables of one or more reports.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct EndpointArgs {
    /// Base URL of a chat-completions endpoint, e.g. https://host/v1.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "default")]
    model: String,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "VISA_API_TOKEN")]
    token_env: String,
    #[arg(long, default_value_t = 300.0)]
    timeout: f64,
    #[arg(long, default_value_t = 8192)]
    max_tokens: u32,
    #[arg(long, default_value_t = 4)]
    retries: u32,
    #[arg(long, default_value_t = 1000)]
    backoff_ms: u64,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
}

impl EndpointArgs {
    fn config(&self) -> Option<EndpointConfig> {
        let url = self.endpoint.as_deref()?;
        let mut cfg = EndpointConfig::new(url, &self.model);
        cfg.token_env = Some(self.token_env.clone());
        cfg.timeout_secs = self.timeout;
        cfg.max_tokens = self.max_tokens;
        cfg.retries = self.retries;
        cfg.backoff_ms = self.backoff_ms;
        cfg.temperature = self.temperature;
        cfg.concurrency = self.concurrency.max(1);
        Some(cfg)
    }
}

/// Exit status 2 for bad configuration, 1 for failures after a run started.
enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Failure {
        Failure::Run(e.into())
    }
}

fn config<T>(r: Result<T, impl std::fmt::Display>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Config(anyhow!("{e}")))
}

fn parse_split(s: &str) -> Result<Option<Split>, Failure> {
    if s == "all" {
        return Ok(None);
    }
    config(s.parse::<Split>().map(Some))
}

fn require_dataset(path: &Path) -> Result<(), Failure> {
    if path.join("manifest.jsonl").is_file() {
        Ok(())
    } else {
        Err(Failure::Config(anyhow!("{} has no manifest.jsonl", path.display())))
    }
}

/// Number of instances that did not complete.
fn run(cli: Cli) -> Result<usize, Failure> {
    match cli.command {
        Command::Generate { per_scenario, seed, out, eval_per_scenario, gold_per_scenario, no_render } => {
            if per_scenario == 0 {
                return Err(Failure::Config(anyhow!("--per-scenario must be positive")));
            }
            let mut cfg = DatasetConfig::new(per_scenario, seed);
            cfg.render = !no_render;
            if let Some(n) = eval_per_scenario {
                cfg.eval_per_scenario = n;
            }
            if let Some(n) = gold_per_scenario {
                cfg.gold_per_scenario = n;
            }
            let start = Instant::now();
            let summary = generate_dataset(&out, &cfg).context("generation failed")?;
            println!("instances: {}", summary.count);
            println!("manifest: {}", summary.manifest_path.display());
            println!("manifest sha256: {}", summary.manifest_hash);
            log::info!("generated in {:.1} s", start.elapsed().as_secs_f64());
            Ok(0)
        }
        Command::Render { dataset } => {
            require_dataset(&dataset)?;
            let hash = render_dataset(&dataset).context("rendering failed")?;
            println!("manifest sha256: {hash}");
            Ok(0)
        }
        Command::Eval { dataset, split, predictions, mode, refine, out, seed, endpoint } => {
            require_dataset(&dataset)?;
            let split = parse_split(&split)?;
            let mode: QueryMode = config(mode.parse())?;
            let source = match (predictions, endpoint.config()) {
                (Some(path), None) => Source::Predictions { path },
                (None, Some(endpoint)) => Source::Endpoint { endpoint },
                (Some(_), Some(_)) => return Err(Failure::Config(anyhow!("give --predictions or --endpoint, not both"))),
                (None, None) => return Err(Failure::Config(anyhow!("one of --predictions or --endpoint is required"))),
            };
            let cfg = RunConfig {
                dataset,
                split,
                mode,
                source,
                refine,
                concurrency: endpoint.concurrency.max(1),
                out: out.clone(),
                seed,
            };
            let start = Instant::now();
            let report = run_eval(&cfg).map_err(|e| match e {
                visa_core::harness::HarnessError::Config(_) | visa_core::harness::HarnessError::Predictions { .. } => {
                    Failure::Config(e.into())
                }
                other => Failure::Run(other.into()),
            })?;
            let path = write_report(&out, &report)?;
            let timing = serde_json::json!({"wall_clock_secs": start.elapsed().as_secs_f64(), "instances": report.records.len()});
            std::fs::write(out.join(TIMING_FILE), serde_json::to_string_pretty(&timing)? + "\n")?;
            print!("{}", render_table(&report));
            println!("report: {}", path.display());
            Ok(report.failures())
        }
        Command::Refine { dataset, predictions, split, out, seed } => {
            require_dataset(&dataset)?;
            let split = parse_split(&split)?;
            let preds = config(load_predictions(&predictions))?;
            let cfg = RefineConfig { seed, ..RefineConfig::default() };
            let mut text = String::new();
            let mut missing = 0;
            for e in load_manifest(&dataset)?.into_iter().filter(|e| split.is_none_or(|s| s == e.split)) {
                let Some(raw) = preds.get(&e.id) else {
                    missing += 1;
                    continue;
                };
                let Some(expr) = read_prediction(raw).expr else { continue };
                let inst = load_instance(&dataset, &e.id)?;
                let r = refine(&expr, &inst.points, &inst.u, &cfg);
                let before = num_score(&expr, &inst.points, &inst.u).map(|s| s.0);
                let after = num_score(&r.expr, &inst.points, &inst.u).map(|s| s.0);
                let line = serde_json::json!({
                    "id": e.id,
                    "before": print(&expr),
                    "after": print(&r.expr),
                    "mse_before": r.initial_mse,
                    "mse_after": r.mse,
                    "s_n_before": before,
                    "s_n_after": after,
                    "converged": r.converged,
                });
                text.push_str(&line.to_string());
                text.push('\n');
            }
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            println!("refined: {}", out.display());
            Ok(missing)
        }
        Command::Cot { dataset, split, out, endpoints, force, limit, endpoint } => {
            require_dataset(&dataset)?;
            let split = parse_split(&split)?;
            let eps = match (endpoints, endpoint.config()) {
                (Some(path), _) => {
                    let text = config(std::fs::read_to_string(&path))?;
                    config(serde_json::from_str::<StageEndpoints>(&text))?
                }
                (None, Some(cfg)) => StageEndpoints::uniform(cfg),
                (None, None) => return Err(Failure::Config(anyhow!("one of --endpoints or --endpoint is required"))),
            };
            let mut insts = Vec::new();
            for e in load_manifest(&dataset)?.into_iter().filter(|e| split.is_none_or(|s| s == e.split)) {
                insts.push(load_instance(&dataset, &e.id)?);
            }
            insts.truncate(limit.unwrap_or(usize::MAX));
            let out = out.unwrap_or_else(|| dataset.join("cot"));
            let summary = run_cot(&dataset, &insts, &out, &eps, force)?;
            let incomplete = summary.records.iter().filter(|r| r.incomplete.is_some()).count();
            println!(
                "instances: {}  gold: {}  incomplete: {}  queried: {}  cached: {}",
                summary.records.len(),
                summary.gold,
                incomplete,
                summary.counts.queried,
                summary.counts.cached
            );
            println!("gold manifest: {}", summary.manifest.display());
            Ok(incomplete)
        }
        Command::Report { reports } => {
            for path in reports {
                let report = config(load_report(&path))?;
                println!("{}", path.display());
                print!("{}", render_table(&report));
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} instance(s) failed");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
