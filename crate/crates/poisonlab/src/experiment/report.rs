//! Deterministic report emission.
//!
//! Reports are assembled purely from stored artifacts: every accuracy,
//! perplexity, and filter cell names the artifact it came from, and the
//! assembly re-reads those artifacts through digest verification. The
//! deterministic report (`report.json`, `report.txt`) never contains
//! wall-clock values; the timing table (`timing.json`, `timing.txt`)
//! carries those separately and is excluded from byte-level determinism
//! comparisons.

use serde::{Deserialize, Serialize};

use crate::attack::{Strategy, TimingRecord};
use crate::defense::{PerplexityReport, Rejection};
use crate::error::{Error, Result};
use crate::experiment::artifacts::ArtifactStore;
use crate::experiment::pipeline::{
    clean_eval_rel, eval_rel, mixed_rel, perplexity_rel, rate_pct, records_rel, rejections_rel,
    timing_rel, Plan,
};
use crate::harness::EvalResult;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub dataset: String,
    pub backend: String,
    pub template: String,
    pub shots: usize,
    /// None marks the clean baseline.
    pub strategy: Option<Strategy>,
    pub budget: Option<usize>,
    pub rate: Option<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub per_run: Vec<f64>,
    pub artifact: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerplexityCell {
    pub strategy: Option<Strategy>,
    pub budget: Option<usize>,
    pub mean: f64,
    pub stderr: f64,
    pub artifact: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterCell {
    pub strategy: Strategy,
    pub budget: usize,
    pub rate: f64,
    pub rejected: usize,
    pub pool_size: usize,
    pub artifact: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingCell {
    pub strategy: Strategy,
    pub budget: usize,
    pub mean_ms: f64,
    pub artifact: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub config_digest: String,
    pub plan: Plan,
    pub accuracy: Vec<AccuracyCell>,
    pub perplexity: Vec<PerplexityCell>,
    pub filter: Vec<FilterCell>,
}

/// The rendered artifacts of one report emission.
#[derive(Debug)]
pub struct ReportFiles {
    pub report_json: String,
    pub report_txt: String,
    pub timing_json: String,
    pub timing_txt: String,
}

impl ReportFiles {
    pub fn write(&self, store: &mut ArtifactStore) -> Result<()> {
        store.put("report.json", "report", self.report_json.as_bytes())?;
        store.put("report.txt", "report", self.report_txt.as_bytes())?;
        store.put("timing.json", "timing", self.timing_json.as_bytes())?;
        store.put("timing.txt", "timing", self.timing_txt.as_bytes())?;
        Ok(())
    }
}

fn read_eval(store: &ArtifactStore, rel: &str) -> Result<EvalResult> {
    let bytes = store.read_verified(rel)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Artifact(format!("{rel}: {e}")))
}

fn strategy_order(plan: &Plan) -> Vec<Strategy> {
    Strategy::REPORT_ORDER
        .into_iter()
        .filter(|s| plan.strategies.contains(s))
        .collect()
}

/// Build the report from stored artifacts only.
pub fn assemble_report(store: &ArtifactStore, plan: &Plan) -> Result<ReportFiles> {
    let mut accuracy = Vec::new();
    let strategies = strategy_order(plan);
    let mut budgets = plan.budgets.clone();
    budgets.sort_unstable();
    let mut rates = plan.rates.clone();
    rates.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));

    for target in &plan.targets {
        for template in &plan.templates {
            for &shots in &plan.shots {
                let rel = clean_eval_rel(target, template, shots);
                let r = read_eval(store, &rel)?;
                accuracy.push(AccuracyCell {
                    dataset: plan.dataset.clone(),
                    backend: target.clone(),
                    template: template.clone(),
                    shots,
                    strategy: None,
                    budget: None,
                    rate: None,
                    mean: r.mean,
                    stderr: r.stderr,
                    per_run: r.per_run,
                    artifact: rel,
                });
                for &budget in &budgets {
                    for &rate in &rates {
                        for &strategy in &strategies {
                            let rel = eval_rel(strategy, budget, rate, target, template, shots);
                            let r = read_eval(store, &rel)?;
                            accuracy.push(AccuracyCell {
                                dataset: plan.dataset.clone(),
                                backend: target.clone(),
                                template: template.clone(),
                                shots,
                                strategy: Some(strategy),
                                budget: Some(budget),
                                rate: Some(rate),
                                mean: r.mean,
                                stderr: r.stderr,
                                per_run: r.per_run,
                                artifact: rel,
                            });
                        }
                    }
                }
            }
        }
    }

    let mut perplexity = Vec::new();
    let mut filter = Vec::new();
    if plan.scorer.is_some() {
        let rel = perplexity_rel("clean");
        let rep: PerplexityReport = serde_json::from_slice(&store.read_verified(&rel)?)
            .map_err(|e| Error::Artifact(format!("{rel}: {e}")))?;
        perplexity.push(PerplexityCell {
            strategy: None,
            budget: None,
            mean: rep.mean,
            stderr: rep.stderr,
            artifact: rel,
        });
        for &budget in &budgets {
            for &strategy in &strategies {
                let rel = perplexity_rel(&format!("{strategy}-b{budget}"));
                let rep: PerplexityReport = serde_json::from_slice(&store.read_verified(&rel)?)
                    .map_err(|e| Error::Artifact(format!("{rel}: {e}")))?;
                perplexity.push(PerplexityCell {
                    strategy: Some(strategy),
                    budget: Some(budget),
                    mean: rep.mean,
                    stderr: rep.stderr,
                    artifact: rel,
                });
            }
        }
        if plan.quantile.is_some() {
            for &budget in &budgets {
                for &rate in &rates {
                    for &strategy in &strategies {
                        let rel = rejections_rel(strategy, budget, rate);
                        let bytes = store.read_verified(&rel)?;
                        let rejected = bytes
                            .split(|&b| b == b'\n')
                            .filter(|l| !l.is_empty())
                            .map(|l| {
                                serde_json::from_slice::<Rejection>(l)
                                    .map_err(|e| Error::Artifact(format!("{rel}: {e}")))
                            })
                            .collect::<Result<Vec<_>>>()?
                            .len();
                        let pool_size = store
                            .read_verified(&mixed_rel(strategy, budget, rate))?
                            .split(|&b| b == b'\n')
                            .filter(|l| !l.is_empty())
                            .count();
                        filter.push(FilterCell {
                            strategy,
                            budget,
                            rate,
                            rejected,
                            pool_size,
                            artifact: rel,
                        });
                    }
                }
            }
        }
    }

    let report = Report {
        tool_version: plan.tool_version.clone(),
        config_digest: plan.config_digest.clone(),
        plan: plan.clone(),
        accuracy,
        perplexity,
        filter,
    };

    // timing table (kept out of report.json)
    let mut timing = Vec::new();
    for &budget in &budgets {
        for &strategy in &strategies {
            let rel = timing_rel(strategy, budget);
            let bytes = store.read_verified(&rel)?;
            let records: Vec<TimingRecord> = bytes
                .split(|&b| b == b'\n')
                .filter(|l| !l.is_empty())
                .map(|l| {
                    serde_json::from_slice(l).map_err(|e| Error::Artifact(format!("{rel}: {e}")))
                })
                .collect::<Result<_>>()?;
            let mean_ms = if records.is_empty() {
                0.0
            } else {
                records.iter().map(|r| r.time_ms as f64).sum::<f64>() / records.len() as f64
            };
            timing.push(TimingCell {
                strategy,
                budget,
                mean_ms,
                artifact: rel,
            });
        }
    }

    // verify the poisoned record artifacts exist and are intact; report
    // cells indirectly depend on them
    for &budget in &budgets {
        for &strategy in &strategies {
            store.read_verified(&records_rel(strategy, budget))?;
        }
    }

    let mut report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    report_json.push('\n');
    let mut timing_json = serde_json::to_string_pretty(&timing).expect("timing serializes");
    timing_json.push('\n');

    Ok(ReportFiles {
        report_txt: render_report_txt(&report),
        report_json,
        timing_txt: render_timing_txt(plan, &timing),
        timing_json,
    })
}

fn render_report_txt(report: &Report) -> String {
    let plan = &report.plan;
    let strategies = strategy_order(plan);
    let mut out = String::new();
    out.push_str(&format!(
        "poisonlab report (tool {})\nconfig digest: {}\ndataset: {}\nsurrogate: {}\n",
        report.tool_version, report.config_digest, plan.dataset, plan.surrogate
    ));

    let cell = |c: &AccuracyCell| format!("{:.4}±{:.4}", c.mean, c.stderr);
    for target in &plan.targets {
        for template in &plan.templates {
            for &shots in &plan.shots {
                let block: Vec<&AccuracyCell> = report
                    .accuracy
                    .iter()
                    .filter(|c| c.backend == *target && c.template == *template && c.shots == shots)
                    .collect();
                let clean = block.iter().find(|c| c.strategy.is_none());
                out.push_str(&format!(
                    "\n== accuracy — backend={target} template={template} shots={shots} runs={}\n",
                    plan.runs
                ));
                if let Some(c) = clean {
                    out.push_str(&format!("clean: {}\n", cell(c)));
                }
                let mut budgets = plan.budgets.clone();
                budgets.sort_unstable();
                for &budget in &budgets {
                    out.push_str(&format!("budget {budget}:\n"));
                    out.push_str(&format!("  {:<6}", "rate"));
                    for s in &strategies {
                        out.push_str(&format!(" {:>16}", s.to_string()));
                    }
                    out.push('\n');
                    let mut rates = plan.rates.clone();
                    rates.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
                    for &rate in &rates {
                        out.push_str(&format!("  {:>4}% ", rate_pct(rate)));
                        for s in &strategies {
                            let c = block.iter().find(|c| {
                                c.strategy == Some(*s)
                                    && c.budget == Some(budget)
                                    && c.rate == Some(rate)
                            });
                            match c {
                                Some(c) => out.push_str(&format!(" {:>16}", cell(c))),
                                None => out.push_str(&format!(" {:>16}", "-")),
                            }
                        }
                        out.push('\n');
                    }
                }
            }
        }
    }

    if !report.perplexity.is_empty() {
        out.push_str(&format!(
            "\n== perplexity (scorer={}, mean NLL per token)\n",
            plan.scorer.as_deref().unwrap_or("-")
        ));
        for c in &report.perplexity {
            let name = match (c.strategy, c.budget) {
                (Some(s), Some(b)) => format!("{s} b={b}"),
                _ => "clean".to_string(),
            };
            out.push_str(&format!("  {name:<20} {:.4}±{:.4}\n", c.mean, c.stderr));
        }
    }

    if !report.filter.is_empty() {
        out.push_str(&format!(
            "\n== perplexity filter (quantile {})\n",
            plan.quantile.unwrap_or(f64::NAN)
        ));
        for c in &report.filter {
            out.push_str(&format!(
                "  {} b={} rate={}%: rejected {}/{}\n",
                c.strategy,
                c.budget,
                rate_pct(c.rate),
                c.rejected,
                c.pool_size
            ));
        }
    }
    out
}

fn render_timing_txt(plan: &Plan, timing: &[TimingCell]) -> String {
    let strategies = strategy_order(plan);
    let mut budgets = plan.budgets.clone();
    budgets.sort_unstable();
    let mut out = String::from("== poisoning time (mean ms per example)\n");
    out.push_str(&format!("{:<16}", "strategy"));
    for b in &budgets {
        out.push_str(&format!(" {:>10}", format!("b={b}")));
    }
    out.push('\n');
    for s in &strategies {
        out.push_str(&format!("{:<16}", s.to_string()));
        for b in &budgets {
            match timing.iter().find(|t| t.strategy == *s && t.budget == *b) {
                Some(t) => out.push_str(&format!(" {:>10.1}", t.mean_ms)),
                None => out.push_str(&format!(" {:>10}", "-")),
            }
        }
        out.push('\n');
    }
    out
}
