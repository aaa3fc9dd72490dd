//! `stepeval` — evaluate step-dependency answers, augment corpora,
//! generate synthetic fixtures, run the scene-graph pipeline, and manage
//! the response cache.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 run finished
//! with partial failures, 3 fatal runtime error.

mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{resolve_run, RunFlags};
use stepeval_core::augment::{
    augment_corpus, AugmentRule, ExpansionPolicy, SubgraphPolicy,
};
use stepeval_core::corpus;
use stepeval_core::gateway::DiskCache;
use stepeval_core::harness::{self, report, PipelineKind, RunRecord, ScoreTable};
use stepeval_core::metrics::aggregate;
use stepeval_core::rsgar::RsgarConfig;
use stepeval_core::synthetic::{generate_corpus, perturb, NoiseSpec};

#[derive(Parser)]
#[command(name = "stepeval", version, about = "Step-dependency answer evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a corpus: answer, score, match, tally, report.
    Evaluate(RunFlags),
    /// Evaluate with the recursive scene-graph pipeline.
    Rsgar(RsgarArgs),
    /// Derive new QA pairs by subgraph extraction and graph expansion.
    Augment(AugmentArgs),
    /// Generate a synthetic corpus plus scripted predictions and their
    /// analytically expected metrics.
    Synth(SynthArgs),
    /// Compare two score tables (Pearson, cosine, mean absolute error).
    Align(AlignArgs),
    /// Re-emit report files from a saved run record.
    Report(ReportArgs),
    /// Inspect or prune the response cache.
    Cache(CacheArgs),
}

#[derive(clap::Args)]
struct RsgarArgs {
    #[command(flatten)]
    flags: RunFlags,
    /// Maximum generation rounds.
    #[arg(long = "T", default_value_t = 5)]
    t: u32,
    /// Skip the depth map.
    #[arg(long)]
    no_depth: bool,
    /// Skip the segmentation map.
    #[arg(long)]
    no_seg: bool,
}

#[derive(clap::Args)]
struct AugmentArgs {
    /// Source corpus file.
    #[arg(long)]
    input: PathBuf,
    /// Output corpus file (generated samples, canonical schema).
    #[arg(long)]
    out: PathBuf,
    /// subgraph, expansion, or all.
    #[arg(long, default_value = "all")]
    rule: String,
    /// Cap generated samples per source sample.
    #[arg(long)]
    max_per_sample: Option<usize>,
    /// Minimum edge count for extracted subgraphs.
    #[arg(long, default_value_t = 1)]
    min_edges: usize,
    /// Seed for capped sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep duplicate subgraphs instead of dropping them.
    #[arg(long)]
    no_dedupe: bool,
    /// Also copy the source samples into the output file.
    #[arg(long)]
    include_source: bool,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Output directory for corpus.json, predictions.json, and
    /// expected_metrics.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    min_objects: usize,
    #[arg(long, default_value_t = 8)]
    max_objects: usize,
    #[arg(long, default_value_t = 4)]
    max_stack_height: usize,
    #[arg(long, default_value_t = 0.0)]
    drop_step_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    drop_edge_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    relabel_prob: f64,
}

#[derive(clap::Args)]
struct AlignArgs {
    /// First score table (model,f_c,f_p CSV).
    #[arg(long)]
    table_a: PathBuf,
    /// Second score table.
    #[arg(long)]
    table_b: PathBuf,
    /// Write the stats as JSON here as well.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use only the content F1 column for s and Δ.
    #[arg(long)]
    content_only: bool,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// A run_record.json produced by evaluate.
    #[arg(long)]
    run: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct CacheArgs {
    #[command(subcommand)]
    action: CacheAction,
}

#[derive(Subcommand)]
enum CacheAction {
    /// Record count and total bytes.
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Remove records; with --older-than-days only stale ones.
    Gc {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        older_than_days: Option<u64>,
    },
}

fn finish_run(record: &RunRecord) -> ExitCode {
    print!("{}", report::render_summary(record));
    if !record.failed_samples.is_empty() || record.empty_predictions > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_evaluate(flags: &RunFlags) -> Result<ExitCode> {
    let resolved = resolve_run(flags, None)?;
    let record = harness::evaluate(&resolved.gateway, &resolved.run)
        .map_err(fatal_unless_config)?;
    Ok(finish_run(&record))
}

fn cmd_rsgar(args: &RsgarArgs) -> Result<ExitCode> {
    let pipeline = PipelineKind::Rsgar(RsgarConfig {
        max_rounds: args.t,
        use_depth: !args.no_depth,
        use_seg: !args.no_seg,
    });
    let resolved = resolve_run(&args.flags, Some(pipeline))?;
    let record = harness::evaluate(&resolved.gateway, &resolved.run)
        .map_err(fatal_unless_config)?;
    Ok(finish_run(&record))
}

/// Config errors exit 1; anything that breaks a validated run exits 3.
struct Fatal(anyhow::Error);

fn fatal_unless_config(err: harness::HarnessError) -> anyhow::Error {
    match err {
        harness::HarnessError::Config(_) | harness::HarnessError::Corpus(_) => err.into(),
        other => anyhow::Error::new(Fatal(anyhow::Error::new(other))),
    }
}

impl std::fmt::Debug for Fatal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl std::fmt::Display for Fatal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Fatal {}

fn cmd_augment(args: &AugmentArgs) -> Result<ExitCode> {
    let rule = AugmentRule::parse(&args.rule)
        .with_context(|| format!("unknown rule {:?} (subgraph|expansion|all)", args.rule))?;
    if args.min_edges < 1 {
        bail!("--min-edges must be at least 1");
    }
    if args.max_per_sample == Some(0) {
        bail!("--max-per-sample must be at least 1");
    }
    let load = corpus::load_corpus(&args.input)?;
    for rejected in load.rejected() {
        eprintln!(
            "skipping invalid sample {}: {}",
            rejected.sample_id,
            rejected
                .violations
                .iter()
                .map(|v| v.rule.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    let subgraph_policy = SubgraphPolicy {
        min_edges: args.min_edges,
        max_per_sample: args.max_per_sample,
        dedupe: !args.no_dedupe,
        seed: args.seed,
    };
    let expansion_policy = ExpansionPolicy {
        max_per_sample: args.max_per_sample,
    };
    let generated = augment_corpus(&load.samples, rule, &subgraph_policy, &expansion_policy);
    let mut out = Vec::new();
    if args.include_source {
        out.extend(load.samples.iter().cloned());
    }
    out.extend(generated.iter().cloned());
    corpus::write_corpus(&args.out, &out)?;
    println!(
        "{} source samples → {} generated ({} written)",
        load.samples.len(),
        generated.len(),
        out.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(args: &SynthArgs) -> Result<ExitCode> {
    if args.count == 0 {
        bail!("--count must be at least 1");
    }
    let noise_template = NoiseSpec {
        drop_step_prob: args.drop_step_prob,
        drop_edge_prob: args.drop_edge_prob,
        relabel_prob: args.relabel_prob,
        seed: 0,
    };
    if !noise_template.validate() {
        bail!("noise probabilities must lie in [0,1]");
    }
    std::fs::create_dir_all(&args.out)?;
    let samples = generate_corpus(
        args.seed,
        args.count,
        args.min_objects,
        args.max_objects,
        args.max_stack_height,
    );

    let mut predictions = BTreeMap::new();
    let mut tallies = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let noise = NoiseSpec {
            seed: args.seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15),
            ..noise_template
        };
        let (prediction, expected) = perturb(sample, &noise);
        predictions.insert(sample.sample_id.clone(), prediction);
        tallies.push(expected);
    }

    corpus::write_corpus(&args.out.join("corpus.json"), &samples)?;
    harness::write_predictions(&args.out.join("predictions.json"), &predictions)?;
    let expected = aggregate(&tallies)?;
    let mut text = serde_json::to_string_pretty(&expected)?;
    text.push('\n');
    std::fs::write(args.out.join("expected_metrics.json"), text)?;
    println!(
        "wrote {} samples to {} (corpus.json, predictions.json, expected_metrics.json)",
        samples.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_align(args: &AlignArgs) -> Result<ExitCode> {
    let a = ScoreTable::load(&args.table_a)?;
    let b = ScoreTable::load(&args.table_b)?;
    let stats = harness::align(&a, &b, args.content_only)?;
    let mut text = serde_json::to_string_pretty(&stats)?;
    text.push('\n');
    if let Some(out) = &args.out {
        std::fs::write(out, &text)?;
    }
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: &ReportArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.run)
        .with_context(|| format!("cannot read {}", args.run.display()))?;
    let record: RunRecord = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse {}", args.run.display()))?;
    report::write_reports(&record, &args.out)?;
    println!("reports written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_cache(args: &CacheArgs) -> Result<ExitCode> {
    match &args.action {
        CacheAction::Stats { dir } => {
            let cache = DiskCache::open_existing(dir)?;
            let stats = cache.stats()?;
            println!("records: {}", stats.records);
            println!("bytes: {}", stats.bytes);
        }
        CacheAction::Gc {
            dir,
            older_than_days,
        } => {
            let cache = DiskCache::open_existing(dir)?;
            let removed = cache.gc(older_than_days.map(|d| d * 24 * 60 * 60))?;
            println!("removed {removed} records");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    let result = match &cli.command {
        Command::Evaluate(flags) => cmd_evaluate(flags),
        Command::Rsgar(args) => cmd_rsgar(args),
        Command::Augment(args) => cmd_augment(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Align(args) => cmd_align(args),
        Command::Report(args) => cmd_report(args),
        Command::Cache(args) => cmd_cache(args),
    };

    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Fatal>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
