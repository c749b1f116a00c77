//! Acceptance suite: one test per criterion, each printing a PASS line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).
//!
//! Frozen values were measured once on the bundled fixtures (master
//! seed 7) and pinned; the lab is deterministic, so any drift is a
//! regression, not noise. Directional assertions (poisoned < clean,
//! non-increasing sweeps) are checked directly, with sweep steps allowed
//! a noise band of one standard error from each side.

use std::sync::OnceLock;

use poisonlab::attack::{
    character_attack, poison_dataset, suffix_attack, synonym_attack, AttackConfig,
    AttackResources, DummyPolicy, EditKind, PoisonedExample, PoisonedRecord, Strategy,
};
use poisonlab::dataset::{parse_dataset, render_dataset, Dataset, Example};
use poisonlab::defense::{perplexity_score, score_pool};
use poisonlab::distortion::{
    distortion, importance_scores, layer_distance, Granularity, ObjectiveEvaluator,
};
use poisonlab::embedding::EmbeddingTable;
use poisonlab::fixtures;
use poisonlab::harness::{evaluate_icl, mix_poison, transfer_eval, EvalResult, PromptSet, Provenance};
use poisonlab::model::{Backend, HiddenStack};
use poisonlab::template::Template;
use poisonlab::tensor::TensorContainer;
use poisonlab::text::{CharacterSet, Vocabulary};

const SEED: u64 = 7;

fn pass(n: usize, what: &str) {
    println!("acceptance {n:>2}: PASS — {what}");
}

// ---------------------------------------------------------------------------
// Shared fixture state (computed once, reused across criteria)
// ---------------------------------------------------------------------------

struct Task {
    pool: Dataset,
    test: Dataset,
    mock: Backend,
    table: EmbeddingTable,
    charset: CharacterSet,
    template: Template,
    clean_pool: PromptSet,
    clean_eval: EvalResult,
}

fn task() -> &'static Task {
    static TASK: OnceLock<Task> = OnceLock::new();
    TASK.get_or_init(|| {
        let (pool, test) = fixtures::synthetic_task(SEED);
        let mock = fixtures::mock_backend("mock-icl");
        let table = fixtures::embedding_table(SEED);
        let charset = fixtures::fixture_charset();
        let template = Template::arrow();
        let clean_pool = PromptSet::from_dataset(&pool);
        let clean_eval =
            evaluate_icl(&mock, &clean_pool, &test.examples, 5, 5, 0, &template).unwrap();
        Task {
            pool,
            test,
            mock,
            table,
            charset,
            template,
            clean_pool,
            clean_eval,
        }
    })
}

fn poisoned_pool(strategy: Strategy, budget: usize) -> PromptSet {
    let t = task();
    let cfg = AttackConfig {
        strategy,
        budget,
        synonym_m: 5,
        allow_noop_candidate: false,
        seed: SEED,
    };
    let resources = AttackResources {
        embeddings: Some(&t.table),
        charset: &t.charset,
    };
    let run = poison_dataset(&t.mock, &t.pool, &cfg, &resources, &DummyPolicy::SeededFromDataset)
        .unwrap();
    assert!(run.errors.is_empty(), "fixture poisoning must not flag examples");
    let records: Vec<PoisonedRecord> = run.examples.iter().map(Into::into).collect();
    PromptSet::from_poisoned(&records)
}

fn eval_pool(backend: &Backend, pool: &PromptSet) -> EvalResult {
    let t = task();
    evaluate_icl(backend, pool, &t.test.examples, 5, 5, 0, &t.template).unwrap()
}

/// One-standard-error noise band from each side of a sweep step.
fn band(a: &EvalResult, b: &EvalResult) -> f64 {
    a.stderr + b.stderr
}

fn assert_close(got: f64, frozen: f64, what: &str) {
    if std::env::var_os("POISONLAB_FREEZE").is_some() {
        println!("FREEZE {what}: {got:.16}");
        return;
    }
    assert!(
        (got - frozen).abs() < 1e-12,
        "{what}: measured {got:.16}, frozen {frozen:.16}"
    );
}

// ---------------------------------------------------------------------------
// Frozen fixture measurements (master seed 7, attack seed 7, eval seed 0)
// ---------------------------------------------------------------------------

const FROZEN_CLEAN_MOCK: f64 = 0.8320000000000001;
// index 0 → budget 1 … index 4 → budget 5
const FROZEN_SYNONYM_SWEEP: [f64; 5] = [
    0.6519999999999999,
    0.4020000000000000,
    0.3740000000000000,
    0.3740000000000000,
    0.3740000000000000,
];
const FROZEN_CHARACTER_SWEEP: [f64; 5] = [
    0.7520000000000000,
    0.7040000000000001,
    0.6439999999999999,
    0.5880000000000001,
    0.5659999999999999,
];
const FROZEN_SUFFIX_SWEEP: [f64; 5] = [
    0.8320000000000001,
    0.8019999999999999,
    0.7619999999999999,
    0.7680000000000000,
    0.7240000000000000,
];
// rates 0.1, 0.2, 0.5, 1.0 at budget 5
const FROZEN_SYNONYM_RATES: [f64; 4] = [
    0.7979999999999999,
    0.7379999999999999,
    0.6080000000000000,
    0.3740000000000000,
];
const FROZEN_CHARACTER_RATES: [f64; 4] = [
    0.8080000000000001,
    0.7899999999999999,
    0.6980000000000001,
    0.5659999999999999,
];
const FROZEN_SUFFIX_RATES: [f64; 4] = [
    0.8179999999999999,
    0.8040000000000000,
    0.7760000000000000,
    0.7240000000000000,
];
// transfer: synonym pool (m = 10) poisoned against tiny-rand-a
const FROZEN_TRANSFER: [(f64, f64); 2] = [
    (0.5199999999999999, 0.4640000000000001), // tiny-rand-b: (clean, poisoned)
    (0.8320000000000001, 0.4700000000000000), // mock-icl:    (clean, poisoned)
];
// bigram-scorer mean NLL on clean / character / suffix / synonym pools
const FROZEN_NLL: [f64; 4] = [
    1.9309043755267612,
    3.4692628146680398,
    2.5869322583045875,
    1.9750373328541730,
];

// ---------------------------------------------------------------------------
// 1. Distortion oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_distortion_matches_brute_force() {
    let started = std::time::Instant::now();
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for _ in 0..100 {
        let stack = |next: &mut dyn FnMut() -> f64| HiddenStack {
            layers: (0..4).map(|_| (0..32).map(|_| next() * 4.0).collect()).collect(),
            source_prompt_hash: String::new(),
        };
        let a = stack(&mut next);
        let b = stack(&mut next);
        let got = distortion(&a, &b).unwrap();

        // independent brute force: normalize, subtract, norm, min
        let mut brute_layers = Vec::new();
        for (x, y) in a.layers.iter().zip(&b.layers) {
            let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
            let (nx, ny) = (norm(x), norm(y));
            let d: f64 = x
                .iter()
                .zip(y)
                .map(|(p, q)| {
                    let p = if nx == 0.0 { *p } else { p / nx };
                    let q = if ny == 0.0 { *q } else { q / ny };
                    (p - q) * (p - q)
                })
                .sum::<f64>()
                .sqrt();
            brute_layers.push(d);
        }
        let brute_min = brute_layers.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((got.aggregate - brute_min).abs() < 1e-9);
        for (g, b) in got.per_layer.iter().zip(&brute_layers) {
            assert!((g - b).abs() < 1e-9);
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(1, "distortion equals brute-force recomputation on 100 random stack pairs (< 1 s)");
}

// ---------------------------------------------------------------------------
// 2. Scale invariance and symmetry
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_scale_invariance_and_symmetry() {
    let mut state = 0xdeadbeefcafef00du64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..1000 {
        let h1: Vec<f64> = (0..16).map(|_| next() - 0.5).collect();
        let h2: Vec<f64> = (0..16).map(|_| next() - 0.5).collect();
        let a = next() * 10.0 + 1e-6;
        let b = next() * 10.0 + 1e-6;
        let scaled1: Vec<f64> = h1.iter().map(|x| x * a).collect();
        let scaled2: Vec<f64> = h2.iter().map(|x| x * b).collect();
        let base = layer_distance(&h1, &h2).unwrap();
        let scaled = layer_distance(&scaled1, &scaled2).unwrap();
        assert!((base - scaled).abs() < 1e-9, "scale variance {base} vs {scaled}");
        let flipped = layer_distance(&h2, &h1).unwrap();
        assert_eq!(base, flipped, "asymmetric distance");
        assert!((0.0..=2.0 + 1e-12).contains(&base));
    }
    pass(2, "layer distance is scale-invariant and symmetric over 1000 random trials");
}

// ---------------------------------------------------------------------------
// 3. Importance-score oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_importance_oracle_on_tiny_fixture() {
    let tiny = fixtures::tiny_a_backend(SEED);
    let template = Template::arrow();
    let (pool, _) = fixtures::synthetic_task(SEED);

    let mut rng = 0x1234_5678u64;
    let mut pick = |n: usize| {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        (rng % n as u64) as usize
    };
    for trial in 0..20 {
        let ex = &pool.examples[pick(pool.len())];
        let granularity = if trial % 2 == 0 { Granularity::Word } else { Granularity::Char };
        // keep ≤ 20 units at char granularity
        let text: String = ex.text.chars().take(20).collect();
        let text = text.trim_end().to_string();
        let scores =
            importance_scores(&tiny, &text, &ex.label, "zz", &template, granularity).unwrap();

        // exhaustive per-unit deletion recomputation
        let ev = ObjectiveEvaluator::new(&tiny, &text, &ex.label, "zz", &template).unwrap();
        let oracle: Vec<f64> = match granularity {
            Granularity::Word => {
                let seg = poisonlab::text::split_words(&text);
                (0..seg.words.len())
                    .map(|i| ev.objective(&seg.with_word_deleted(i)).unwrap())
                    .collect()
            }
            Granularity::Char => text
                .char_indices()
                .map(|(o, c)| {
                    let mut deleted = String::new();
                    deleted.push_str(&text[..o]);
                    deleted.push_str(&text[o + c.len_utf8()..]);
                    ev.objective(&deleted).unwrap()
                })
                .collect(),
        };
        assert_eq!(scores.scores, oracle, "importance vector differs from oracle");

        // top-k selection equals sorting the oracle with the tie-break
        let k = 5.min(oracle.len());
        let mut order: Vec<usize> = (0..oracle.len()).collect();
        order.sort_by(|&a, &b| {
            oracle[b].partial_cmp(&oracle[a]).unwrap().then_with(|| a.cmp(&b))
        });
        order.truncate(k);
        assert_eq!(scores.top_k(k), order);
    }
    pass(3, "importance scores equal exhaustive deletion recomputation on 20 texts");
}

// ---------------------------------------------------------------------------
// 4. Greedy-step optimality
// ---------------------------------------------------------------------------

/// Replay a poisoned example edit by edit; at each committed state,
/// re-evaluate the full candidate set independently and check the
/// committed choice wins under the documented tie-break.
fn verify_greedy_steps(
    backend: &Backend,
    example: &Example,
    poisoned: &PoisonedExample,
    cfg: &AttackConfig,
    table: &EmbeddingTable,
    charset: &CharacterSet,
    dummy: &str,
    template: &Template,
) {
    let ev = ObjectiveEvaluator::new(backend, &example.text, &example.label, dummy, template)
        .unwrap();
    let vocab = backend.vocabulary();

    match cfg.strategy {
        Strategy::Synonym => {
            let seg = poisonlab::text::split_words(&example.text);
            let mut words: Vec<String> = seg.words.iter().map(|w| w.text.clone()).collect();
            for edit in &poisoned.edits {
                assert_eq!(edit.kind, EditKind::Word);
                let mut best: Option<(f64, String)> = None;
                for syn in table.top_m_synonyms(&words[edit.position], cfg.synonym_m).unwrap() {
                    let mut w = words.clone();
                    w[edit.position] = syn.clone();
                    let score = ev.objective(&seg.render_with_words(&w)).unwrap();
                    let better = match &best {
                        None => true,
                        Some((s, w)) => score > *s || (score == *s && syn < *w),
                    };
                    if better {
                        best = Some((score, syn));
                    }
                }
                assert_eq!(best.unwrap().1, edit.after, "synonym step not optimal");
                words[edit.position] = edit.after.clone();
            }
        }
        Strategy::Character => {
            let mut current = example.text.clone().into_bytes();
            for edit in &poisoned.edits {
                assert_eq!(edit.kind, EditKind::Char);
                let original = current[edit.position] as char;
                let mut best: Option<(f64, usize)> = None;
                for (ci, &c) in charset.chars().iter().enumerate() {
                    if c == original {
                        continue;
                    }
                    let mut bytes = current.clone();
                    bytes[edit.position] = c as u8;
                    let score = ev.objective(&String::from_utf8(bytes).unwrap()).unwrap();
                    let better = match best {
                        None => true,
                        Some((s, i)) => score > s || (score == s && ci < i),
                    };
                    if better {
                        best = Some((score, ci));
                    }
                }
                let committed = charset.chars()[best.unwrap().1].to_string();
                assert_eq!(committed, edit.after, "character step not optimal");
                current[edit.position] = edit.after.as_bytes()[0];
            }
        }
        Strategy::Suffix => {
            // reconstruct the initial suffix from the edit befores
            let mut suffix: Vec<u32> = poisoned
                .edits
                .iter()
                .map(|e| vocab.token_id(&e.before).unwrap())
                .collect();
            for (j, edit) in poisoned.edits.iter().enumerate() {
                assert_eq!(edit.kind, EditKind::Token);
                assert_eq!(edit.position, j);
                let mut best: Option<(f64, u32)> = None;
                for v in vocab.candidate_ids() {
                    let mut s = suffix.clone();
                    s[j] = v;
                    let text = format!("{}{}", example.text, vocab.detokenize(&s).unwrap());
                    let score = ev.objective(&text).unwrap();
                    let better = match best {
                        None => true,
                        Some((bs, bv)) => score > bs || (score == bs && v < bv),
                    };
                    if better {
                        best = Some((score, v));
                    }
                }
                let committed = vocab.token_str(best.unwrap().1).unwrap();
                assert_eq!(committed, edit.after, "suffix step not optimal");
                suffix[j] = best.unwrap().1;
            }
        }
        Strategy::RandomLabel => unreachable!(),
    }
}

#[test]
fn criterion_04_greedy_step_optimality() {
    let started = std::time::Instant::now();
    let t = task();
    let tiny = fixtures::tiny_a_backend(SEED);
    assert!(tiny.vocabulary().len() >= 60 && tiny.vocabulary().len() <= 80);
    assert!(t.charset.len() >= 60 && t.charset.len() <= 80);

    for strategy in [Strategy::Synonym, Strategy::Character, Strategy::Suffix] {
        for (i, example) in t.pool.examples.iter().take(10).enumerate() {
            let cfg = AttackConfig {
                strategy,
                budget: 5,
                synonym_m: 5,
                allow_noop_candidate: false,
                seed: SEED + i as u64,
            };
            let dummy = "zz";
            let poisoned = match strategy {
                Strategy::Synonym => {
                    synonym_attack(&tiny, example, &cfg, &t.table, dummy, &t.template).unwrap()
                }
                Strategy::Character => {
                    character_attack(&tiny, example, &cfg, &t.charset, dummy, &t.template).unwrap()
                }
                Strategy::Suffix => suffix_attack(&tiny, example, &cfg, dummy, &t.template).unwrap(),
                Strategy::RandomLabel => unreachable!(),
            };
            verify_greedy_steps(
                &tiny, example, &poisoned, &cfg, &t.table, &t.charset, dummy, &t.template,
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    pass(4, "every committed edit survives independent re-evaluation (< 2 min)");
}

// ---------------------------------------------------------------------------
// 5. Budget and label invariants
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_budget_and_label_invariants() {
    let t = task();
    assert_eq!(AttackConfig::new(Strategy::Synonym).budget, 5, "default budget");

    for strategy in [Strategy::Synonym, Strategy::Character, Strategy::Suffix] {
        for budget in [1usize, 3, 5] {
            let cfg = AttackConfig {
                strategy,
                budget,
                synonym_m: 5,
                allow_noop_candidate: false,
                seed: SEED,
            };
            let resources = AttackResources {
                embeddings: Some(&t.table),
                charset: &t.charset,
            };
            let run = poison_dataset(
                &t.mock,
                &t.pool,
                &cfg,
                &resources,
                &DummyPolicy::SeededFromDataset,
            )
            .unwrap();
            for (p, orig) in run.examples.iter().zip(&t.pool.examples) {
                assert_eq!(p.label, orig.label, "label changed by {strategy}");
                match strategy {
                    Strategy::Synonym => {
                        let before = poisonlab::text::split_words(&orig.text);
                        let after = poisonlab::text::split_words(&p.text);
                        assert_eq!(before.words.len(), after.words.len());
                        let diffs = before
                            .words
                            .iter()
                            .zip(&after.words)
                            .filter(|(a, b)| a.text != b.text)
                            .count();
                        assert!(diffs <= budget, "{diffs} word diffs > budget {budget}");
                    }
                    Strategy::Character => {
                        assert_eq!(orig.text.len(), p.text.len());
                        let diffs = orig
                            .text
                            .bytes()
                            .zip(p.text.bytes())
                            .filter(|(a, b)| a != b)
                            .count();
                        assert!(diffs <= budget, "{diffs} byte diffs > budget {budget}");
                    }
                    Strategy::Suffix => {
                        assert!(p.text.starts_with(orig.text.as_str()));
                        let appended = &p.text[orig.text.len()..];
                        let toks = t.mock.vocabulary().tokenize(appended);
                        assert_eq!(toks.ids.len() - 1, budget, "suffix token count");
                    }
                    Strategy::RandomLabel => unreachable!(),
                }
            }
        }
    }

    // random-label never alters text
    let cfg = AttackConfig::new(Strategy::RandomLabel);
    let resources = AttackResources { embeddings: None, charset: &t.charset };
    let run = poison_dataset(&t.mock, &t.pool, &cfg, &resources, &DummyPolicy::SeededFromDataset)
        .unwrap();
    for (p, orig) in run.examples.iter().zip(&t.pool.examples) {
        assert_eq!(p.text, orig.text);
    }
    pass(5, "budgets and labels hold for every strategy and budget");
}

// ---------------------------------------------------------------------------
// 6. End-to-end attack effect and budget sweep
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_attack_effect_and_budget_sweep() {
    let t = task();
    assert_close(t.clean_eval.mean, FROZEN_CLEAN_MOCK, "clean accuracy");

    for (strategy, frozen) in [
        (Strategy::Synonym, &FROZEN_SYNONYM_SWEEP),
        (Strategy::Character, &FROZEN_CHARACTER_SWEEP),
        (Strategy::Suffix, &FROZEN_SUFFIX_SWEEP),
    ] {
        let sweep: Vec<EvalResult> = (1..=5)
            .map(|budget| eval_pool(&t.mock, &poisoned_pool(strategy, budget)))
            .collect();
        for (b, r) in sweep.iter().enumerate() {
            assert_close(r.mean, frozen[b], &format!("{strategy} budget {}", b + 1));
        }
        // poisoned < clean at budget 5
        assert!(
            sweep[4].mean < t.clean_eval.mean,
            "{strategy}: {} not below clean {}",
            sweep[4].mean,
            t.clean_eval.mean
        );
        // sweep non-increasing within noise bands
        for w in sweep.windows(2) {
            assert!(
                w[1].mean <= w[0].mean + band(&w[0], &w[1]),
                "{strategy} sweep increased beyond noise: {} -> {}",
                w[0].mean,
                w[1].mean
            );
        }
    }
    pass(6, "all three attacks beat clean at budget 5; sweeps non-increasing within bands");
}

// ---------------------------------------------------------------------------
// 7. Poison-rate behavior
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_poison_rate_behavior() {
    let t = task();

    // rate 0 reproduces the clean EvalResult byte-exactly
    let poisoned = poisoned_pool(Strategy::Character, 5);
    let zero = mix_poison(&t.clean_pool, &poisoned, 0.0, 3).unwrap();
    let zero_eval = eval_pool(&t.mock, &zero);
    assert_eq!(zero_eval.render(), t.clean_eval.render(), "rate 0 differs from clean");

    for (strategy, frozen) in [
        (Strategy::Synonym, &FROZEN_SYNONYM_RATES),
        (Strategy::Character, &FROZEN_CHARACTER_RATES),
        (Strategy::Suffix, &FROZEN_SUFFIX_RATES),
    ] {
        let poisoned = poisoned_pool(strategy, 5);
        let mut sequence = vec![t.clean_eval.clone()];
        for (i, rate) in [0.1, 0.2, 0.5, 1.0].into_iter().enumerate() {
            let mixed = mix_poison(&t.clean_pool, &poisoned, rate, 3).unwrap();
            let replaced = mixed
                .members
                .iter()
                .filter(|m| m.provenance == Provenance::Poisoned)
                .count();
            assert_eq!(replaced, (rate * 100.0).round() as usize, "count at rate {rate}");
            let r = eval_pool(&t.mock, &mixed);
            assert_close(r.mean, frozen[i], &format!("{strategy} rate {rate}"));
            sequence.push(r);
        }
        for w in sequence.windows(2) {
            assert!(
                w[1].mean <= w[0].mean + band(&w[0], &w[1]),
                "{strategy} rate sweep increased beyond noise"
            );
        }
    }
    pass(7, "rate 0 is byte-exact clean; counts exact; rate sweeps non-increasing within bands");
}

// ---------------------------------------------------------------------------
// 8. Cross-model transfer
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_transfer_direction() {
    let t = task();
    let tiny_a = fixtures::tiny_a_backend(SEED);
    let tiny_b = fixtures::tiny_b_backend(SEED);

    let cfg = AttackConfig {
        strategy: Strategy::Synonym,
        budget: 5,
        synonym_m: 10,
        allow_noop_candidate: false,
        seed: SEED,
    };
    let resources = AttackResources {
        embeddings: Some(&t.table),
        charset: &t.charset,
    };
    let run = poison_dataset(&tiny_a, &t.pool, &cfg, &resources, &DummyPolicy::SeededFromDataset)
        .unwrap();
    let records: Vec<PoisonedRecord> = run.examples.iter().map(Into::into).collect();
    let poisoned = PromptSet::from_poisoned(&records);

    for (i, target) in [&tiny_b, &t.mock].into_iter().enumerate() {
        let clean = eval_pool(target, &t.clean_pool);
        let transferred = transfer_eval(
            tiny_a.name(),
            target,
            &poisoned,
            &t.test.examples,
            5,
            5,
            0,
            &t.template,
        )
        .unwrap();
        assert_eq!(transferred.surrogate.as_deref(), Some("tiny-rand-a"));
        let (frozen_clean, frozen_poisoned) = FROZEN_TRANSFER[i];
        assert_close(clean.mean, frozen_clean, &format!("{} clean", target.name()));
        assert_close(transferred.mean, frozen_poisoned, &format!("{} poisoned", target.name()));
        assert!(
            transferred.mean < clean.mean,
            "{}: transferred {} not strictly below clean {}",
            target.name(),
            transferred.mean,
            clean.mean
        );
    }
    pass(8, "surrogate-poisoned pool degrades both transfer targets below their clean accuracy");
}

// ---------------------------------------------------------------------------
// 9. Perplexity defense direction
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_perplexity_direction_and_uniform_identity() {
    let t = task();
    let mut corpus = String::new();
    for ex in &t.pool.examples {
        corpus.push_str(&ex.text);
        corpus.push('\n');
    }
    let scorer = fixtures::bigram_scorer(&corpus);

    let clean = score_pool(&scorer, &t.clean_pool).unwrap();
    let character = score_pool(&scorer, &poisoned_pool(Strategy::Character, 5)).unwrap();
    let suffix = score_pool(&scorer, &poisoned_pool(Strategy::Suffix, 5)).unwrap();
    let synonym = score_pool(&scorer, &poisoned_pool(Strategy::Synonym, 5)).unwrap();

    for (r, frozen, what) in [
        (&clean, FROZEN_NLL[0], "clean"),
        (&character, FROZEN_NLL[1], "character"),
        (&suffix, FROZEN_NLL[2], "suffix"),
        (&synonym, FROZEN_NLL[3], "synonym"),
    ] {
        assert_close(r.mean, frozen, &format!("{what} NLL"));
    }
    assert!(character.mean > clean.mean, "character NLL not above clean");
    assert!(suffix.mean > clean.mean, "suffix NLL not above clean");
    // synonym is reported, not asserted: swaps can stay in-distribution
    println!(
        "    NLL clean {:.4} < synonym {:.4} (reported), character {:.4}, suffix {:.4}",
        clean.mean, synonym.mean, character.mean, suffix.mean
    );

    // uniform scorer: exactly ln |V ∖ {BOS}| for any text
    let uniform = fixtures::uniform_scorer();
    let m = (uniform.vocabulary().len() - 1) as f64;
    for text in ["a", "abc xyz", &t.pool.examples[0].text] {
        assert_eq!(perplexity_score(&uniform, text).unwrap(), m.ln());
    }
    pass(9, "character/suffix pools raise mean NLL; uniform scorer equals ln|V∖{BOS}| exactly");
}

// ---------------------------------------------------------------------------
// 10. Full-pipeline determinism through the binary
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_run_determinism_across_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    fixtures::generate(&fx, SEED).unwrap();
    let config = serde_json::json!({
        "train_pool": fx.join("datasets/pool.jsonl"),
        "test_set": fx.join("datasets/test.jsonl"),
        "surrogate": fx.join("backends/mock-icl"),
        "embeddings": fx.join("embeddings.txt"),
        "scorer": fx.join("backends/bigram-scorer"),
        "strategies": ["random-label", "synonym", "suffix"],
        "budgets": [3],
        "shots": [5],
        "runs": 3,
        "rates": [0.0, 1.0],
        "quantile": 0.9,
        "seed": 7
    });
    let config_path = tmp.path().join("config.json");
    std::fs::write(&config_path, config.to_string()).unwrap();

    let bin = env!("CARGO_BIN_EXE_poisonlab");
    let mut outputs = Vec::new();
    for (out, jobs) in [("out-a", "1"), ("out-b", "8"), ("out-c", "1")] {
        let out_dir = tmp.path().join(out);
        let status = std::process::Command::new(bin)
            .args(["run", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&out_dir)
            .args(["--jobs", jobs])
            .status()
            .unwrap();
        assert!(status.success(), "run with --jobs {jobs} failed");
        outputs.push((
            std::fs::read(out_dir.join("report.json")).unwrap(),
            std::fs::read(out_dir.join("report.txt")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1], "reports differ between --jobs 1 and --jobs 8");
    assert_eq!(outputs[0], outputs[2], "reports differ between identical runs");
    pass(10, "full `run` is byte-identical across reruns and --jobs 1 vs 8");
}

// ---------------------------------------------------------------------------
// 11. Round trips
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_round_trips() {
    // tensor container
    let container = fixtures::random_tiny_container(SEED, 73, 2, 32, 64);
    let bytes = container.to_bytes();
    assert_eq!(TensorContainer::from_bytes(&bytes).unwrap().to_bytes(), bytes);

    // vocabulary file
    let lines = fixtures::fixture_vocab_lines();
    let vocab = Vocabulary::from_token_lines(&lines).unwrap();
    assert_eq!(vocab.to_token_lines(), lines);

    // dataset ingestion
    let (pool, _) = fixtures::synthetic_task(SEED);
    let rendered = render_dataset(&pool.examples);
    let reparsed = parse_dataset(&rendered).unwrap();
    assert_eq!(render_dataset(&reparsed.examples), rendered);

    // template render/parse
    for template in [
        Template::arrow(),
        Template::new("io", "Input: {input}\nOutput: {output}\n", "Input: {query}\nOutput:").unwrap(),
    ] {
        let rendered = template.render_probe("some text", "label", "query text");
        let (i, o, q) = template.parse_probe(&rendered).unwrap();
        assert_eq!((i.as_str(), o.as_str(), q.as_str()), ("some text", "label", "query text"));
    }
    pass(11, "container, vocabulary, dataset, and template round trips are exact");
}

// ---------------------------------------------------------------------------
// 12. Timing report shape
// ---------------------------------------------------------------------------

#[test]
fn criterion_12_timing_report_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    fixtures::generate(&fx, SEED).unwrap();
    let config = serde_json::json!({
        "train_pool": fx.join("datasets/pool.jsonl"),
        "test_set": fx.join("datasets/test.jsonl"),
        "surrogate": fx.join("backends/mock-icl"),
        "embeddings": fx.join("embeddings.txt"),
        "strategies": ["synonym", "character", "suffix"],
        "budgets": [1, 3, 5],
        "shots": [5],
        "runs": 2,
        "rates": [1.0],
        "seed": 7
    });
    let cfg = poisonlab::experiment::ExperimentConfig::parse(&config.to_string()).unwrap();
    let out = tmp.path().join("out");
    poisonlab::experiment::run_experiment(&cfg, &out).unwrap();

    let timing: Vec<serde_json::Value> =
        serde_json::from_slice(&std::fs::read(out.join("timing.json")).unwrap()).unwrap();
    // Table-12 shape: one cell per (strategy, budget); values unasserted
    assert_eq!(timing.len(), 9);
    for (strategy, budget) in [("synonym", 1), ("character", 3), ("suffix", 5)] {
        assert!(
            timing
                .iter()
                .any(|c| c["strategy"] == strategy && c["budget"] == budget),
            "missing timing cell {strategy}/b{budget}"
        );
    }
    let txt = std::fs::read_to_string(out.join("timing.txt")).unwrap();
    assert!(txt.contains("b=1") && txt.contains("b=3") && txt.contains("b=5"));
    pass(12, "timing table covers every (strategy, budget) pair; no wall-clock assertions");
}
