use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use taxotrace_core::classifier::{classify_dataset, read_artifacts, read_predictions, write_predictions};
use taxotrace_core::embedding::{write_cache, RecordingEmbedder};
use taxotrace_core::fixture::{write_fixture, REFERENCE_SPACES};
use taxotrace_core::harness::{self, render_beta_table, RunConfig};
use taxotrace_core::metrics::{
    beta_from_truth, compute_beta, evaluate, read_ground_truth, render_table,
};
use taxotrace_core::Taxonomy;

mod provider_spec;

#[derive(Parser)]
#[command(name = "taxotrace", version, about = "Zero-shot taxonomy classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every provider against every output space of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Classify a dataset against one taxonomy.
    Classify {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// mock:<model>[:<dim>[:<seed>]], http:<model>:<dim>@<url>,
        /// cache:<model>:<dim>@<path>, or a JSON provider config file.
        #[arg(long)]
        provider: String,
        #[arg(long, default_value_t = 15)]
        k: usize,
        /// Predictions JSONL to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
        /// Fixed β; derived from the ground truth when absent.
        #[arg(long)]
        beta: Option<f64>,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive β per output space from ground truth, or from explicit
    /// `l_head,l_tail,lambda` triples.
    Beta {
        #[arg(long, requires = "taxonomy")]
        truth: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        taxonomy: Vec<PathBuf>,
        #[arg(long = "params", value_name = "L_HEAD,L_TAIL,LAMBDA", num_args = 1..)]
        params: Vec<String>,
    },
    /// Depth and node counts of taxonomies.
    Stats {
        #[arg(long, required = true, num_args = 1..)]
        taxonomy: Vec<PathBuf>,
    },
    /// Serve the review API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Origin allowed by CORS; any origin when absent.
        #[arg(long)]
        cors_origin: Option<String>,
    },
    /// Write the synthetic reference fixture.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 24)]
        artifacts: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Precompute an embedding cache file for a taxonomy and dataset.
    Cache {
        #[arg(long, num_args = 1..)]
        taxonomy: Vec<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        provider: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Exit code for a command that finished but left work undone.
const PARTIAL: u8 = 2;

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Classify {
            taxonomy,
            dataset,
            provider,
            k,
            out,
        } => cmd_classify(&taxonomy, &dataset, &provider, k, &out),
        Command::Eval {
            predictions,
            truth,
            taxonomy,
            beta,
            out,
        } => cmd_eval(&predictions, &truth, &taxonomy, beta, out.as_deref()),
        Command::Beta {
            truth,
            taxonomy,
            params,
        } => cmd_beta(truth.as_deref(), &taxonomy, &params),
        Command::Stats { taxonomy } => cmd_stats(&taxonomy),
        Command::Serve {
            config,
            port,
            host,
            cors_origin,
        } => cmd_serve(&config, host, port, cors_origin.as_deref()),
        Command::Fixture {
            out,
            artifacts,
            seed,
        } => {
            let paths = write_fixture(&out, &REFERENCE_SPACES, artifacts, seed)?;
            println!("wrote {}", paths.config.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Cache {
            taxonomy,
            dataset,
            provider,
            out,
        } => cmd_cache(&taxonomy, &dataset, &provider, &out),
    }
}

fn cmd_run(config: &Path) -> Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let outcome = harness::run(&cfg)?;
    for t in &outcome.timings {
        eprintln!("{} / {}: {:.3}s", t.taxonomy, t.model, t.elapsed.as_secs_f64());
    }
    print!(
        "{}",
        harness::render_summary(
            outcome.beta,
            outcome.beta_source.as_deref(),
            &outcome.reports,
            &outcome.aborted
        )
    );
    Ok(if outcome.success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(PARTIAL)
    })
}

fn cmd_classify(taxonomy: &Path, dataset: &Path, provider: &str, k: usize, out: &Path) -> Result<ExitCode> {
    let tax = Taxonomy::load(taxonomy)?;
    let artifacts = read_artifacts(dataset)?;
    let embedder = provider_spec::parse(provider)?.build()?;
    let run = classify_dataset(&artifacts, &tax, embedder.as_ref(), k)?;
    write_predictions(out, &run.predictions)?;
    eprintln!(
        "{} predictions written to {}",
        run.predictions.len(),
        out.display()
    );
    for f in &run.failures {
        eprintln!("failed {}: {}", f.artifact_id, f.error);
    }
    Ok(if run.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(PARTIAL)
    })
}

fn cmd_eval(
    predictions: &Path,
    truth: &Path,
    taxonomy: &Path,
    beta: Option<f64>,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let tax = Taxonomy::load(taxonomy)?;
    let truths = read_ground_truth(truth)?;
    let annotated: std::collections::HashSet<&str> = truths
        .iter()
        .filter(|t| t.taxonomy_name == tax.name())
        .map(|t| t.artifact_id.as_str())
        .collect();
    let (preds, unannotated): (Vec<_>, Vec<_>) = read_predictions(predictions)?
        .into_iter()
        .partition(|p| annotated.contains(p.artifact_id.as_str()));
    if !unannotated.is_empty() {
        eprintln!(
            "ignoring {} predictions without a ground-truth record in `{}`",
            unannotated.len(),
            tax.name()
        );
    }
    let beta = match beta {
        Some(b) => b,
        None => beta_from_truth(&tax, &truths)
            .with_context(|| format!("deriving β for `{}`", tax.name()))?
            .beta,
    };
    let report = evaluate(&preds, &truths, &tax, beta)?;
    print!("{}", render_table(std::slice::from_ref(&report), &[]));
    if let Some(path) = out {
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    } else {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_beta(truth: Option<&Path>, taxonomies: &[PathBuf], params: &[String]) -> Result<ExitCode> {
    let mut rows = Vec::new();
    for p in params {
        let nums: Vec<u64> = p
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("`{p}` is not l_head,l_tail,lambda"))?;
        let [h, t, l] = nums[..] else {
            bail!("`{p}` is not l_head,l_tail,lambda");
        };
        rows.push((p.clone(), compute_beta(h, t, l)));
    }
    if let Some(truth) = truth {
        let truths = read_ground_truth(truth)?;
        for path in taxonomies {
            let tax = Taxonomy::load(path)?;
            rows.push((tax.name().to_owned(), beta_from_truth(&tax, &truths)));
        }
    }
    if rows.is_empty() {
        bail!("give --truth with --taxonomy, or --params");
    }
    print!("{}", render_beta_table(&rows));
    Ok(if rows.iter().all(|(_, r)| r.is_ok()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(PARTIAL)
    })
}

fn cmd_stats(taxonomies: &[PathBuf]) -> Result<ExitCode> {
    println!(
        "{:<8} {:>5} {:>7} {:>10} {:>7} {:>9}",
        "OS", "depth", "nodes", "categories", "leaves", "mean desc"
    );
    for path in taxonomies {
        let tax = Taxonomy::load(path)?;
        let s = tax.stats();
        println!(
            "{:<8} {:>5} {:>7} {:>10} {:>7} {:>9.1}",
            tax.name(),
            s.depth,
            s.total_nodes,
            s.category_nodes,
            s.leaf_nodes,
            s.mean_description_length
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(config: &Path, host: std::net::IpAddr, port: u16, cors: Option<&str>) -> Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    // Providers may hold blocking http clients, which must be created
    // outside the async runtime.
    let state = Arc::new(taxotrace_service::AppState::from_config(&cfg)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let addr = std::net::SocketAddr::new(host, port);
    eprintln!("listening on http://{addr}");
    runtime.block_on(taxotrace_service::serve(state, addr, cors))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_cache(taxonomies: &[PathBuf], dataset: &Path, provider: &str, out: &Path) -> Result<ExitCode> {
    let artifacts = read_artifacts(dataset)?;
    let recorder = RecordingEmbedder::new(provider_spec::parse(provider)?.build()?);
    let mut failed = 0;
    for path in taxonomies {
        let tax = Taxonomy::load(path)?;
        let run = classify_dataset(&artifacts, &tax, &recorder, 1)?;
        failed += run.failures.len();
    }
    let cache = recorder.into_cache();
    write_cache(out, &cache)?;
    eprintln!("{} vectors written to {}", cache.len(), out.display());
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(PARTIAL)
    })
}
