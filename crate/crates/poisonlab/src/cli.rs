//! Command-line interface: single-stage subcommands plus the full
//! `run` pipeline and `fixtures` generation.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attack::{
    poison_dataset, read_poisoned_records, write_poisoned_records, write_timings, AttackConfig,
    AttackResources, DummyPolicy, Strategy,
};
use crate::dataset::ingest_dataset;
use crate::defense::{perplexity_filter, score_pool, write_rejections};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::experiment::{emit_report, run_experiment, ExperimentConfig};
use crate::harness::{evaluate_icl, mix_poison, transfer_eval, PromptSet};
use crate::model::Backend;
use crate::template::Template;
use crate::text::CharacterSet;

#[derive(Parser)]
#[command(name = "poisonlab", version, about = "Desk-scale laboratory for hidden-state data-poisoning attacks on in-context learning")]
pub struct Cli {
    /// Worker threads for candidate evaluation and per-example
    /// parallelism (results are identical for any value).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate the bundled fixture tree (vocabulary, embeddings, task
    /// datasets, backends, demo config).
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Poison every example of a dataset with one attack strategy.
    Poison(PoisonArgs),
    /// Blend a poisoned set into its clean counterpart at a poisoning rate.
    Mix {
        /// Clean dataset (line-delimited {text, label}).
        #[arg(long)]
        clean: PathBuf,
        /// Poisoned records produced by `poison`.
        #[arg(long)]
        poisoned: PathBuf,
        /// Fraction of the pool to replace, in [0, 1].
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure ICL accuracy of a pool on a backend.
    Eval(EvalArgs),
    /// Score a pool's perplexity and optionally filter it.
    Defend {
        /// Scorer backend manifest (directory or file).
        #[arg(long)]
        scorer: PathBuf,
        /// Pool file (output of `mix`) or a plain dataset.
        #[arg(long)]
        pool: PathBuf,
        /// Rejection quantile in (0, 1]; omit to only score.
        #[arg(long)]
        quantile: Option<f64>,
        /// Output prefix; writes <out>.perplexity.json and, when
        /// filtering, <out>.kept.pool.jsonl and <out>.rejections.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild report files from an artifacts directory, verifying digests.
    Report {
        #[arg(long)]
        artifacts: PathBuf,
    },
    /// Execute a full experiment config: poison → mix → eval → defend → report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
pub struct PoisonArgs {
    /// Surrogate backend manifest (directory or file).
    #[arg(long)]
    pub backend: PathBuf,
    /// Dataset to poison (line-delimited {text, label}).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 5)]
    pub budget: usize,
    #[arg(long, default_value_t = 10)]
    pub synonym_m: usize,
    /// Let a greedy step keep the current unit when nothing beats it.
    #[arg(long)]
    pub allow_noop: bool,
    /// Embedding table (required for the synonym strategy).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix; writes <out>.records.jsonl and <out>.timing.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub backend: PathBuf,
    /// Pool file (output of `mix`) or a plain dataset.
    #[arg(long)]
    pub pool: PathBuf,
    /// Test set (line-delimited {text, label}).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub shots: usize,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Name of the surrogate the pool was poisoned against, for
    /// transfer bookkeeping.
    #[arg(long)]
    pub surrogate: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    match s {
        "synonym" => Ok(Strategy::Synonym),
        "character" => Ok(Strategy::Character),
        "suffix" => Ok(Strategy::Suffix),
        "random-label" => Ok(Strategy::RandomLabel),
        other => Err(format!(
            "unknown strategy {other:?} (expected synonym|character|suffix|random-label)"
        )),
    }
}

/// Accept either a pool file with provenance flags or a plain dataset.
fn load_pool_flexible(path: &Path) -> Result<PromptSet> {
    match PromptSet::read(path) {
        Ok(pool) => Ok(pool),
        Err(_) => Ok(PromptSet::from_dataset(&ingest_dataset(path)?)),
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Fixtures { out, seed } => {
            let paths = crate::fixtures::generate(&out, seed)?;
            println!("fixtures written under {}", paths.root.display());
            Ok(())
        }
        Command::Poison(args) => {
            let backend = Backend::load(&args.backend)?;
            let dataset = ingest_dataset(&args.dataset)?;
            let embeddings = args.embeddings.as_deref().map(EmbeddingTable::load).transpose()?;
            let charset = CharacterSet::printable_ascii();
            let cfg = AttackConfig {
                strategy: args.strategy,
                budget: args.budget,
                synonym_m: args.synonym_m,
                allow_noop_candidate: args.allow_noop,
                seed: args.seed,
            };
            let resources = AttackResources {
                embeddings: embeddings.as_ref(),
                charset: &charset,
            };
            let run = poison_dataset(
                &backend,
                &dataset,
                &cfg,
                &resources,
                &DummyPolicy::SeededFromDataset,
            )?;
            let records = with_suffix(&args.out, ".records.jsonl");
            let timing = with_suffix(&args.out, ".timing.jsonl");
            write_poisoned_records(&records, &run.examples)?;
            write_timings(&timing, &run.timings_ms)?;
            for (idx, reason) in &run.errors {
                eprintln!("example {idx} passed through unpoisoned: {reason}");
            }
            println!(
                "poisoned {} examples ({} flagged) -> {}",
                run.examples.len(),
                run.errors.len(),
                records.display()
            );
            Ok(())
        }
        Command::Mix {
            clean,
            poisoned,
            rate,
            seed,
            out,
        } => {
            let clean_pool = PromptSet::from_dataset(&ingest_dataset(&clean)?);
            let records = read_poisoned_records(&poisoned)?;
            let poisoned_pool = PromptSet::from_poisoned(&records);
            let mixed = mix_poison(&clean_pool, &poisoned_pool, rate, seed)?;
            mixed.write(&out)?;
            println!("mixed pool of {} -> {}", mixed.len(), out.display());
            Ok(())
        }
        Command::Eval(args) => {
            let backend = Backend::load(&args.backend)?;
            let pool = load_pool_flexible(&args.pool)?;
            let test = ingest_dataset(&args.test)?;
            let template = Template::arrow();
            let result = match &args.surrogate {
                Some(surrogate) => transfer_eval(
                    surrogate,
                    &backend,
                    &pool,
                    &test.examples,
                    args.shots,
                    args.runs,
                    args.seed,
                    &template,
                ),
                None => evaluate_icl(
                    &backend,
                    &pool,
                    &test.examples,
                    args.shots,
                    args.runs,
                    args.seed,
                    &template,
                ),
            }?;
            result.write(&args.out)?;
            println!(
                "accuracy {:.4} ± {:.4} over {} runs -> {}",
                result.mean,
                result.stderr,
                result.runs,
                args.out.display()
            );
            Ok(())
        }
        Command::Defend {
            scorer,
            pool,
            quantile,
            out,
        } => {
            let scorer = Backend::load(&scorer)?;
            let pool = load_pool_flexible(&pool)?;
            let report = score_pool(&scorer, &pool)?;
            let ppl = with_suffix(&out, ".perplexity.json");
            let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
            json.push('\n');
            std::fs::write(&ppl, json).map_err(|e| Error::io(&ppl, e))?;
            println!("mean NLL {:.4} ± {:.4} -> {}", report.mean, report.stderr, ppl.display());
            if let Some(q) = quantile {
                let (kept, rejections) = perplexity_filter(&pool, &scorer, q)?;
                let kept_path = with_suffix(&out, ".kept.pool.jsonl");
                kept.write(&kept_path)?;
                write_rejections(&with_suffix(&out, ".rejections.jsonl"), &rejections)?;
                println!(
                    "rejected {}/{} above the {q} quantile -> {}",
                    rejections.len(),
                    pool.len(),
                    kept_path.display()
                );
            }
            Ok(())
        }
        Command::Report { artifacts } => {
            emit_report(&artifacts)?;
            println!("report rebuilt under {}", artifacts.display());
            Ok(())
        }
        Command::Run { config, out, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            run_experiment(&cfg, &out)?;
            println!("report written to {}", out.join("report.txt").display());
            Ok(())
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}
