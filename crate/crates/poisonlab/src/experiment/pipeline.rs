//! The poison → mix → evaluate → defend pipeline.
//!
//! Every stage writes its output as a digest-tracked artifact; reruns
//! reuse artifacts whose input digests match and recompute the rest.
//! (config, seed) → report is a pure function: stage seeds derive from
//! the master seed, candidate reductions are order-fixed, and wall-clock
//! timing lives in dedicated artifacts that the report proper excludes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{
    poison_dataset, read_poisoned_records, render_poisoned_records, AttackConfig,
    AttackResources, DummyPolicy, PoisonedRecord, Strategy,
};
use crate::dataset::{ingest_dataset, Dataset};
use crate::defense::{perplexity_filter, score_pool};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::experiment::artifacts::{file_digest, sha256_hex, ArtifactStore};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::report::{assemble_report, ReportFiles};
use crate::harness::{evaluate_icl, mix_poison, transfer_eval, EvalResult, PromptSet};
use crate::math::mix_seed;
use crate::model::{Backend, Manifest};
use crate::text::CharacterSet;

/// Resolved experiment plan: the axes the report iterates over, stored
/// as an artifact so reports can be rebuilt from the directory alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Plan {
    pub tool_version: String,
    pub dataset: String,
    pub surrogate: String,
    pub targets: Vec<String>,
    pub strategies: Vec<Strategy>,
    pub budgets: Vec<usize>,
    pub rates: Vec<f64>,
    pub templates: Vec<String>,
    pub shots: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    pub scorer: Option<String>,
    pub quantile: Option<f64>,
    pub config_digest: String,
}

pub fn rate_pct(rate: f64) -> u32 {
    (rate * 100.0).round() as u32
}

pub fn records_rel(strategy: Strategy, budget: usize) -> String {
    format!("poisoned/{strategy}-b{budget}.records.jsonl")
}

pub fn timing_rel(strategy: Strategy, budget: usize) -> String {
    format!("poisoned/{strategy}-b{budget}.timing.jsonl")
}

pub fn mixed_rel(strategy: Strategy, budget: usize, rate: f64) -> String {
    format!("mixed/{strategy}-b{budget}-r{:03}.pool.jsonl", rate_pct(rate))
}

pub fn clean_eval_rel(target: &str, template: &str, shots: usize) -> String {
    format!("evals/clean__{template}__s{shots}__{target}.json")
}

pub fn eval_rel(
    strategy: Strategy,
    budget: usize,
    rate: f64,
    target: &str,
    template: &str,
    shots: usize,
) -> String {
    format!(
        "evals/{strategy}__b{budget}__r{:03}__{template}__s{shots}__{target}.json",
        rate_pct(rate)
    )
}

pub fn perplexity_rel(name: &str) -> String {
    format!("defense/{name}.perplexity.json")
}

pub fn rejections_rel(strategy: Strategy, budget: usize, rate: f64) -> String {
    format!(
        "defense/{strategy}-b{budget}-r{:03}.rejections.jsonl",
        rate_pct(rate)
    )
}

/// Digest of the files a backend is built from.
fn backend_source_digest(path: &Path) -> Result<String> {
    let manifest_path = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let manifest = Manifest::load(&manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut h = Sha256::new();
    h.update(std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
    let vocab = base.join(&manifest.vocab_path);
    h.update(std::fs::read(&vocab).map_err(|e| Error::io(&vocab, e))?);
    if let Some(w) = &manifest.weights_path {
        let weights = base.join(w);
        h.update(std::fs::read(&weights).map_err(|e| Error::io(&weights, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn digest_of(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

struct LoadedBackends {
    surrogate: Backend,
    surrogate_digest: String,
    targets: Vec<(Backend, String)>,
    scorer: Option<(Backend, String)>,
}

fn load_backends(config: &ExperimentConfig) -> Result<LoadedBackends> {
    let surrogate = Backend::load(&config.surrogate)?;
    let surrogate_digest = backend_source_digest(&config.surrogate)?;
    let target_paths = if config.targets.is_empty() {
        vec![config.surrogate.clone()]
    } else {
        config.targets.clone()
    };
    let targets = target_paths
        .iter()
        .map(|p| Ok((Backend::load(p)?, backend_source_digest(p)?)))
        .collect::<Result<_>>()?;
    let scorer = match &config.scorer {
        Some(p) => Some((Backend::load(p)?, backend_source_digest(p)?)),
        None => None,
    };
    Ok(LoadedBackends {
        surrogate,
        surrogate_digest,
        targets,
        scorer,
    })
}

/// Execute the full pipeline into `out_dir` and return the assembled
/// report files.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ReportFiles> {
    config.validate()?;
    let mut store = ArtifactStore::open(out_dir)?;
    let version = env!("CARGO_PKG_VERSION").to_string();

    let stage = |what: &str, e: Error| Error::Eval(format!("stage {what}: {e}"));

    // --- inputs ---------------------------------------------------------
    let pool_dataset: Dataset = ingest_dataset(&config.train_pool).map_err(|e| stage("ingest", e))?;
    let test_dataset: Dataset = ingest_dataset(&config.test_set).map_err(|e| stage("ingest", e))?;
    let pool_digest = file_digest(&config.train_pool)?;
    let test_digest = file_digest(&config.test_set)?;
    let backends = load_backends(config).map_err(|e| stage("load-backends", e))?;
    let embeddings = match &config.embeddings {
        Some(p) => Some((EmbeddingTable::load(p)?, file_digest(p)?)),
        None => None,
    };
    let charset = CharacterSet::printable_ascii();
    let config_echo = config.echo_json();
    let config_digest = sha256_hex(config_echo.as_bytes());

    let plan = Plan {
        tool_version: version.clone(),
        dataset: config.dataset_name(),
        surrogate: backends.surrogate.name().to_string(),
        targets: backends.targets.iter().map(|(b, _)| b.name().to_string()).collect(),
        strategies: config.strategies.clone(),
        budgets: config.budgets.clone(),
        rates: config.rates.clone(),
        templates: config.templates.iter().map(|t| t.name.clone()).collect(),
        shots: config.shots.clone(),
        runs: config.runs,
        seed: config.seed,
        scorer: backends.scorer.as_ref().map(|(b, _)| b.name().to_string()),
        quantile: config.quantile,
        config_digest: config_digest.clone(),
    };

    store.put("config.json", &config_digest, config_echo.as_bytes())?;
    let plan_bytes = serde_json::to_vec_pretty(&plan).expect("plan serializes");
    store.put("plan.json", &digest_of(&["plan", &config_digest]), &plan_bytes)?;

    let clean_pool = PromptSet::from_dataset(&pool_dataset);

    // --- clean baselines --------------------------------------------------
    for (target, target_digest) in &backends.targets {
        for template in &config.templates {
            for &shots in &config.shots {
                let rel = clean_eval_rel(target.name(), &template.name, shots);
                let din = digest_of(&[
                    "eval-clean",
                    &version,
                    target_digest,
                    &pool_digest,
                    &test_digest,
                    &template.example_frame,
                    &template.query_frame,
                    &shots.to_string(),
                    &config.runs.to_string(),
                    &config.seed.to_string(),
                ]);
                store
                    .materialize(&rel, &din, || {
                        let r = evaluate_icl(
                            target,
                            &clean_pool,
                            &test_dataset.examples,
                            shots,
                            config.runs,
                            config.seed,
                            template,
                        )?;
                        Ok(r.render().into_bytes())
                    })
                    .map_err(|e| stage("eval-clean", e))?;
            }
        }
    }

    // --- poisoning --------------------------------------------------------
    for (si, &strategy) in config.strategies.iter().enumerate() {
        for &budget in &config.budgets {
            let attack_seed = mix_seed(config.seed, (si as u64) << 16 | budget as u64);
            let din = digest_of(&[
                "poison",
                &version,
                &backends.surrogate_digest,
                &pool_digest,
                &strategy.to_string(),
                &budget.to_string(),
                &config.synonym_m.to_string(),
                &config.allow_noop_candidate.to_string(),
                embeddings.as_ref().map(|(_, d)| d.as_str()).unwrap_or(""),
                &attack_seed.to_string(),
            ]);
            let rel_r = records_rel(strategy, budget);
            let rel_t = timing_rel(strategy, budget);
            let have_records = store.try_reuse(&rel_r, &din)?;
            let have_timing = store.try_reuse(&rel_t, &digest_of(&["timing", &din]))?;
            if !(have_records && have_timing) {
                let cfg = AttackConfig {
                    strategy,
                    budget,
                    synonym_m: config.synonym_m,
                    allow_noop_candidate: config.allow_noop_candidate,
                    seed: attack_seed,
                };
                let resources = AttackResources {
                    embeddings: embeddings.as_ref().map(|(t, _)| t),
                    charset: &charset,
                };
                let run = poison_dataset(
                    &backends.surrogate,
                    &pool_dataset,
                    &cfg,
                    &resources,
                    &DummyPolicy::SeededFromDataset,
                )
                .map_err(|e| stage("poison", e))?;
                store.put(&rel_r, &din, render_poisoned_records(&run.examples).as_bytes())?;
                let mut timing = String::new();
                for (index, &time_ms) in run.timings_ms.iter().enumerate() {
                    timing.push_str(
                        &serde_json::to_string(&crate::attack::TimingRecord { index, time_ms })
                            .expect("timing serializes"),
                    );
                    timing.push('\n');
                }
                store.put(&rel_t, &digest_of(&["timing", &din]), timing.as_bytes())?;
            }

            // --- mixing and poisoned evaluations --------------------------
            let records: Vec<PoisonedRecord> =
                read_poisoned_records(&store.root().join(&rel_r)).map_err(|e| stage("mix", e))?;
            let poisoned_pool = PromptSet::from_poisoned(&records);
            let records_digest = store
                .entries()
                .get(&rel_r)
                .map(|e| e.content_digest.clone())
                .expect("records just materialized");

            for &rate in &config.rates {
                let mix_seed_value = mix_seed(config.seed, 0x2000 + rate_pct(rate) as u64);
                let rel_m = mixed_rel(strategy, budget, rate);
                let din_m = digest_of(&[
                    "mix",
                    &records_digest,
                    &pool_digest,
                    &rate.to_string(),
                    &mix_seed_value.to_string(),
                ]);
                store
                    .materialize(&rel_m, &din_m, || {
                        let mixed = mix_poison(&clean_pool, &poisoned_pool, rate, mix_seed_value)?;
                        Ok(mixed.render().into_bytes())
                    })
                    .map_err(|e| stage("mix", e))?;
                let mixed_digest = store.entries().get(&rel_m).unwrap().content_digest.clone();
                let mixed =
                    PromptSet::read(&store.root().join(&rel_m)).map_err(|e| stage("mix", e))?;

                for (target, target_digest) in &backends.targets {
                    for template in &config.templates {
                        for &shots in &config.shots {
                            let rel_e =
                                eval_rel(strategy, budget, rate, target.name(), &template.name, shots);
                            let din_e = digest_of(&[
                                "eval",
                                &version,
                                target_digest,
                                &mixed_digest,
                                &test_digest,
                                &template.example_frame,
                                &template.query_frame,
                                &shots.to_string(),
                                &config.runs.to_string(),
                                &config.seed.to_string(),
                            ]);
                            store
                                .materialize(&rel_e, &din_e, || {
                                    let r: EvalResult = if target.name()
                                        == backends.surrogate.name()
                                    {
                                        evaluate_icl(
                                            target,
                                            &mixed,
                                            &test_dataset.examples,
                                            shots,
                                            config.runs,
                                            config.seed,
                                            template,
                                        )?
                                    } else {
                                        transfer_eval(
                                            backends.surrogate.name(),
                                            target,
                                            &mixed,
                                            &test_dataset.examples,
                                            shots,
                                            config.runs,
                                            config.seed,
                                            template,
                                        )?
                                    };
                                    Ok(r.render().into_bytes())
                                })
                                .map_err(|e| stage("eval", e))?;
                        }
                    }
                }

                // --- filtering defense ---------------------------------
                if let (Some(q), Some((scorer, scorer_digest))) =
                    (config.quantile, backends.scorer.as_ref())
                {
                    let rel_f = rejections_rel(strategy, budget, rate);
                    let din_f = digest_of(&[
                        "filter",
                        &version,
                        scorer_digest,
                        &mixed_digest,
                        &q.to_string(),
                    ]);
                    store
                        .materialize(&rel_f, &din_f, || {
                            let (_, rejections) = perplexity_filter(&mixed, scorer, q)?;
                            let mut out = String::new();
                            for r in &rejections {
                                out.push_str(
                                    &serde_json::to_string(r).expect("rejection serializes"),
                                );
                                out.push('\n');
                            }
                            Ok(out.into_bytes())
                        })
                        .map_err(|e| stage("defend", e))?;
                }
            }

            // --- perplexity on the fully poisoned pool -----------------
            if let Some((scorer, scorer_digest)) = backends.scorer.as_ref() {
                let rel_p = perplexity_rel(&format!("{strategy}-b{budget}"));
                let din_p = digest_of(&["ppl", &version, scorer_digest, &records_digest]);
                store
                    .materialize(&rel_p, &din_p, || {
                        let rep = score_pool(scorer, &poisoned_pool)?;
                        let mut json =
                            serde_json::to_string_pretty(&rep).expect("report serializes");
                        json.push('\n');
                        Ok(json.into_bytes())
                    })
                    .map_err(|e| stage("defend", e))?;
            }
        }
    }

    // clean-pool perplexity
    if let Some((scorer, scorer_digest)) = backends.scorer.as_ref() {
        let rel_p = perplexity_rel("clean");
        let din_p = digest_of(&["ppl", &version, scorer_digest, &pool_digest]);
        store
            .materialize(&rel_p, &din_p, || {
                let rep = score_pool(scorer, &clean_pool)?;
                let mut json = serde_json::to_string_pretty(&rep).expect("report serializes");
                json.push('\n');
                Ok(json.into_bytes())
            })
            .map_err(|e| stage("defend", e))?;
    }

    store.save()?;

    // --- report -----------------------------------------------------------
    let files = assemble_report(&store, &plan)?;
    files.write(&mut store)?;
    store.save()?;
    Ok(files)
}

/// Rebuild the report from an existing artifacts directory, verifying
/// every digest. Corruption is fatal; nothing is recomputed.
pub fn emit_report(artifacts_dir: &Path) -> Result<ReportFiles> {
    let mut store = ArtifactStore::open(artifacts_dir)?;
    let plan_bytes = store.read_verified("plan.json")?;
    let plan: Plan = serde_json::from_slice(&plan_bytes)
        .map_err(|e| Error::Artifact(format!("plan.json: {e}")))?;
    let files = assemble_report(&store, &plan)?;
    files.write(&mut store)?;
    store.save()?;
    Ok(files)
}
