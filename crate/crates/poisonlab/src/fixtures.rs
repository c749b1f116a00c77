//! Deterministic bundled fixtures: a character-level vocabulary, a
//! clustered synthetic embedding table, a four-class word-salad task,
//! and the three backend kinds wired up for it.
//!
//! Nothing here is trained. The task is built so that the mock backend
//! solves it well when clean: each class owns twelve "signal" words,
//! texts are short samples from the class inventory, and the mock's
//! top-layer n-gram profile separates classes. The embedding table
//! groups words by meaning id across classes (cluster `j` holds each
//! class's variant of meaning `j`), so synonym swaps are semantically
//! grouped yet move a text's character profile toward another class.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{render_dataset, Dataset, Example};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::math::mix_seed;
use crate::model::{Backend, BackendKind, Manifest, MockIcl, TinyTransformer};
use crate::tensor::TensorContainer;
use crate::text::{CharacterSet, Vocabulary};

pub const CLASS_LABELS: [&str; 2] = ["negative", "positive"];
pub const MEANING_CLUSTERS: usize = 6;

/// Character-level fixture vocabulary: BOS, UNK, the arrow and newline
/// used by templates, space, letters, digits, and a little punctuation.
pub fn fixture_vocab_lines() -> String {
    let mut lines = String::from("<bos>\n<unk>\n→\n\\n\n\\s\n");
    for c in ('a'..='z').chain('A'..='Z').chain('0'..='9') {
        lines.push(c);
        lines.push('\n');
    }
    for c in ".,!?'-".chars() {
        lines.push(c);
        lines.push('\n');
    }
    lines
}

pub fn fixture_vocab() -> Vocabulary {
    Vocabulary::from_token_lines(&fixture_vocab_lines()).expect("fixture vocabulary is valid")
}

/// The single-character tokens of the fixture vocabulary, minus the
/// template markers: the candidate alphabet for character replacement.
pub fn fixture_charset() -> CharacterSet {
    let chars = std::iter::once(' ')
        .chain('a'..='z')
        .chain('A'..='Z')
        .chain('0'..='9')
        .chain(".,!?'-".chars());
    CharacterSet::from_chars(chars).expect("fixture charset is valid")
}

// ---------------------------------------------------------------------------
// Synthetic task
// ---------------------------------------------------------------------------

/// 4 classes × 12 meaning clusters of lowercase words, all distinct and
/// distinct from the labels.
pub fn class_inventories(seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x10ad));
    let mut seen: Vec<String> = CLASS_LABELS.iter().map(|s| s.to_string()).collect();
    let mut inventories = vec![Vec::with_capacity(MEANING_CLUSTERS); CLASS_LABELS.len()];
    for _cluster in 0..MEANING_CLUSTERS {
        for inventory in inventories.iter_mut() {
            let word = loop {
                let len = 4 + rng.gen_range(0..3usize);
                let w: String = (0..len)
                    .map(|_| char::from(b'a' + rng.gen_range(0..26u8)))
                    .collect();
                if !seen.contains(&w) {
                    break w;
                }
            };
            seen.push(word.clone());
            inventory.push(word);
        }
    }
    inventories
}

/// Embedding table text: dimension 8, one cluster center per meaning id,
/// each class's variant offset by small noise. Rendered sorted by word
/// so the file is canonical.
pub fn embedding_table_text(seed: u64) -> String {
    let inventories = class_inventories(seed);
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for cluster in 0..MEANING_CLUSTERS {
        let mut crng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xce17 + cluster as u64));
        let center: Vec<f64> = (0..8).map(|_| crng.gen_range(-1.0..1.0)).collect();
        for inventory in &inventories {
            let word = inventory[cluster].clone();
            let mut wrng = ChaCha8Rng::seed_from_u64(mix_seed(seed, hash_word(&word)));
            let vector: Vec<f64> = center
                .iter()
                .map(|c| c + 0.05 * wrng.gen_range(-1.0..1.0))
                .collect();
            rows.push((word, vector));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = String::new();
    for (word, vector) in rows {
        out.push_str(&word);
        for v in vector {
            out.push_str(&format!(" {v:.6}"));
        }
        out.push('\n');
    }
    out
}

pub fn embedding_table(seed: u64) -> EmbeddingTable {
    EmbeddingTable::parse(&embedding_table_text(seed)).expect("fixture table parses")
}

fn hash_word(word: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in word.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn make_examples(seed: u64, stream: u64, count: usize, inventories: &[Vec<String>]) -> Vec<Example> {
    (0..count)
        .map(|i| {
            let class = i % CLASS_LABELS.len();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, stream ^ (i as u64) << 8));
            let words = 2 + rng.gen_range(0..2usize);
            let text = (0..words)
                .map(|_| inventories[class][rng.gen_range(0..MEANING_CLUSTERS)].as_str())
                .collect::<Vec<_>>()
                .join(" ");
            Example {
                text,
                label: CLASS_LABELS[class].to_string(),
            }
        })
        .collect()
}

/// The frozen task: a 100-example prompt pool and a 100-query test set.
pub fn synthetic_task(seed: u64) -> (Dataset, Dataset) {
    let inventories = class_inventories(seed);
    let pool = make_examples(seed, 0xb001, 100, &inventories);
    let test = make_examples(seed, 0x7e57, 100, &inventories);
    let parse = |examples: Vec<Example>| {
        crate::dataset::parse_dataset(&render_dataset(&examples)).expect("fixture dataset parses")
    };
    (parse(pool), parse(test))
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// Seeded random weights for the tiny transformer, packed in a container.
pub fn random_tiny_container(
    seed: u64,
    vocab_size: usize,
    layers: usize,
    dim: usize,
    max_seq: usize,
) -> TensorContainer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n: usize, scale: f32| -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    };
    let mut c = TensorContainer::new();
    c.insert("token_embedding", vec![vocab_size, dim], uniform(vocab_size * dim, 0.5))
        .unwrap();
    c.insert("position_embedding", vec![max_seq, dim], uniform(max_seq * dim, 0.5))
        .unwrap();
    for i in 0..layers {
        let p = format!("blocks.{i}");
        for w in ["wq", "wk", "wv", "wo"] {
            c.insert(&format!("{p}.attn.{w}"), vec![dim, dim], uniform(dim * dim, 0.2))
                .unwrap();
        }
        for b in ["bq", "bk", "bv", "bo"] {
            c.insert(&format!("{p}.attn.{b}"), vec![dim], uniform(dim, 0.05)).unwrap();
        }
        for ln in ["ln1", "ln2"] {
            c.insert(&format!("{p}.{ln}.weight"), vec![dim], vec![1.0; dim]).unwrap();
            c.insert(&format!("{p}.{ln}.bias"), vec![dim], vec![0.0; dim]).unwrap();
        }
        c.insert(&format!("{p}.mlp.w_up"), vec![4 * dim, dim], uniform(4 * dim * dim, 0.2))
            .unwrap();
        c.insert(&format!("{p}.mlp.b_up"), vec![4 * dim], uniform(4 * dim, 0.05)).unwrap();
        c.insert(&format!("{p}.mlp.w_down"), vec![dim, 4 * dim], uniform(4 * dim * dim, 0.2))
            .unwrap();
        c.insert(&format!("{p}.mlp.b_down"), vec![dim], uniform(dim, 0.05)).unwrap();
    }
    c.insert("final_norm.weight", vec![dim], vec![1.0; dim]).unwrap();
    c.insert("final_norm.bias", vec![dim], vec![0.0; dim]).unwrap();
    c
}

pub const TINY_LAYERS: usize = 2;
pub const TINY_DIM: usize = 32;
pub const TINY_HEADS: usize = 2;
pub const TINY_MAX_SEQ: usize = 256;
pub const MOCK_LAYERS: usize = 4;
pub const MOCK_DIM: usize = 32;
pub const MOCK_SEED: u64 = 9;

fn tiny_manifest(seed: u64) -> Manifest {
    Manifest {
        kind: BackendKind::TinyTransformer,
        layers: TINY_LAYERS,
        dim: TINY_DIM,
        heads: TINY_HEADS,
        vocab_path: "../../vocab.txt".into(),
        weights_path: Some("weights.bin".into()),
        seed,
        order: 2,
    }
}

/// In-memory tiny-transformer fixture.
pub fn tiny_backend(seed: u64, name: &str) -> Backend {
    let vocab = fixture_vocab();
    let container = random_tiny_container(seed, vocab.len(), TINY_LAYERS, TINY_DIM, TINY_MAX_SEQ);
    let manifest = tiny_manifest(seed);
    Backend::TinyTransformer(
        TinyTransformer::from_container(&manifest, &container, vocab, name.to_string())
            .expect("fixture weights complete"),
    )
}

/// The two bundled transformer fixtures, matching what [`generate`]
/// writes to disk for the same master seed.
pub fn tiny_a_backend(seed: u64) -> Backend {
    tiny_backend(mix_seed(seed, 0xAAAA), "tiny-rand-a")
}

pub fn tiny_b_backend(seed: u64) -> Backend {
    tiny_backend(mix_seed(seed, 0xBBB7), "tiny-rand-b")
}

/// In-memory mock-icl fixture.
pub fn mock_backend(name: &str) -> Backend {
    Backend::MockIcl(
        MockIcl::new(MOCK_LAYERS, MOCK_DIM, MOCK_SEED, fixture_vocab(), name.to_string())
            .expect("fixture mock is valid"),
    )
}

/// In-memory bigram scorer fitted on the clean pool corpus.
pub fn bigram_scorer(corpus: &str) -> Backend {
    Backend::CharNgram(
        crate::model::CharNgram::fit(fixture_vocab(), 2, corpus, "bigram-scorer".into())
            .expect("scorer fits"),
    )
}

/// In-memory uniform scorer (order-1, no counts).
pub fn uniform_scorer() -> Backend {
    Backend::CharNgram(
        crate::model::CharNgram::fit(fixture_vocab(), 1, "", "uniform-scorer".into())
            .expect("scorer fits"),
    )
}

// ---------------------------------------------------------------------------
// On-disk fixture tree
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub root: PathBuf,
    pub vocab: PathBuf,
    pub embeddings: PathBuf,
    pub pool: PathBuf,
    pub test: PathBuf,
    pub corpus: PathBuf,
    pub mock: PathBuf,
    pub tiny_a: PathBuf,
    pub tiny_b: PathBuf,
    pub bigram_scorer: PathBuf,
    pub uniform_scorer: PathBuf,
    pub demo_config: PathBuf,
}

impl FixturePaths {
    pub fn under(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            vocab: root.join("vocab.txt"),
            embeddings: root.join("embeddings.txt"),
            pool: root.join("datasets/pool.jsonl"),
            test: root.join("datasets/test.jsonl"),
            corpus: root.join("corpus.txt"),
            mock: root.join("backends/mock-icl"),
            tiny_a: root.join("backends/tiny-rand-a"),
            tiny_b: root.join("backends/tiny-rand-b"),
            bigram_scorer: root.join("backends/bigram-scorer"),
            uniform_scorer: root.join("backends/uniform-scorer"),
            demo_config: root.join("configs/demo.json"),
        }
    }
}

fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Generate the whole fixture tree. Everything is a pure function of
/// `seed`, so regeneration is byte-identical.
pub fn generate(root: &Path, seed: u64) -> Result<FixturePaths> {
    let paths = FixturePaths::under(root);
    write(&paths.vocab, &fixture_vocab_lines())?;
    write(&paths.embeddings, &embedding_table_text(seed))?;

    let (pool, test) = synthetic_task(seed);
    write(&paths.pool, &render_dataset(&pool.examples))?;
    write(&paths.test, &render_dataset(&test.examples))?;

    let mut corpus = String::new();
    for ex in &pool.examples {
        corpus.push_str(&ex.text);
        corpus.push('\n');
    }
    write(&paths.corpus, &corpus)?;

    let vocab = fixture_vocab();

    // mock-icl
    std::fs::create_dir_all(&paths.mock).map_err(|e| Error::io(&paths.mock, e))?;
    Manifest {
        kind: BackendKind::MockIcl,
        layers: MOCK_LAYERS,
        dim: MOCK_DIM,
        heads: 1,
        vocab_path: "../../vocab.txt".into(),
        weights_path: None,
        seed: MOCK_SEED,
        order: 2,
    }
    .save(&paths.mock.join("manifest.json"))?;

    // tiny transformers
    for (dir, tiny_seed) in [(&paths.tiny_a, mix_seed(seed, 0xAAAA)), (&paths.tiny_b, mix_seed(seed, 0xBBB7))] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.as_path(), e))?;
        let container =
            random_tiny_container(tiny_seed, vocab.len(), TINY_LAYERS, TINY_DIM, TINY_MAX_SEQ);
        container.write(&dir.join("weights.bin"))?;
        tiny_manifest(tiny_seed).save(&dir.join("manifest.json"))?;
    }

    // scorers
    for (dir, order, weights) in [
        (&paths.bigram_scorer, 2, Some("../../corpus.txt".to_string())),
        (&paths.uniform_scorer, 1, None),
    ] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.as_path(), e))?;
        Manifest {
            kind: BackendKind::CharNgram,
            layers: 1,
            dim: vocab.len(),
            heads: 1,
            vocab_path: "../../vocab.txt".into(),
            weights_path: weights,
            seed: 0,
            order,
        }
        .save(&dir.join("manifest.json"))?;
    }

    write(&paths.demo_config, &demo_config_json())?;
    Ok(paths)
}

/// A small full-pipeline configuration over the generated fixtures,
/// relative to the config file's directory.
fn demo_config_json() -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "train_pool": "../datasets/pool.jsonl",
        "test_set": "../datasets/test.jsonl",
        "surrogate": "../backends/mock-icl",
        "targets": ["../backends/mock-icl"],
        "embeddings": "../embeddings.txt",
        "scorer": "../backends/bigram-scorer",
        "strategies": ["random-label", "synonym", "character", "suffix"],
        "budgets": [5],
        "shots": [5],
        "runs": 5,
        "rates": [0.0, 0.5, 1.0],
        "quantile": 0.95,
        "seed": 7
    }))
    .expect("demo config serializes")
        + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inventories_are_distinct_and_label_free() {
        let inv = class_inventories(7);
        let mut all: Vec<&String> = inv.iter().flatten().collect();
        let total = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), total);
        for label in CLASS_LABELS {
            assert!(!all.iter().any(|w| w.as_str() == label));
        }
    }

    #[test]
    fn embedding_clusters_are_synonym_groups() {
        let seed = 7;
        let inv = class_inventories(seed);
        let table = embedding_table(seed);
        // the other class's variant of the same meaning ranks first
        let word = &inv[0][3];
        let syns = table.top_m_synonyms(word, 1).unwrap();
        assert_eq!(&syns[0], &inv[1][3]);
    }

    #[test]
    fn task_is_balanced_and_ascii() {
        let (pool, test) = synthetic_task(7);
        assert_eq!(pool.len(), 100);
        assert_eq!(test.len(), 100);
        assert_eq!(pool.label_space, CLASS_LABELS.to_vec());
        for ex in pool.examples.iter().chain(&test.examples) {
            assert!(ex.text.is_ascii());
        }
        for label in CLASS_LABELS {
            assert_eq!(pool.examples.iter().filter(|e| e.label == label).count(), 50);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        generate(&a, 7).unwrap();
        generate(&b, 7).unwrap();
        for rel in ["vocab.txt", "embeddings.txt", "datasets/pool.jsonl", "corpus.txt"] {
            assert_eq!(
                std::fs::read(a.join(rel)).unwrap(),
                std::fs::read(b.join(rel)).unwrap(),
                "{rel}"
            );
        }
        assert_eq!(
            std::fs::read(a.join("backends/tiny-rand-a/weights.bin")).unwrap(),
            std::fs::read(b.join("backends/tiny-rand-a/weights.bin")).unwrap()
        );
    }

    #[test]
    fn generated_backends_load() {
        let dir = tempfile::tempdir().unwrap();
        let paths = generate(dir.path(), 7).unwrap();
        for backend_dir in [&paths.mock, &paths.tiny_a, &paths.tiny_b, &paths.bigram_scorer, &paths.uniform_scorer] {
            let backend = Backend::load(backend_dir).unwrap();
            assert!(backend.layer_count() >= 1);
        }
        let tiny = Backend::load(&paths.tiny_a).unwrap();
        assert_eq!(tiny.layer_count(), TINY_LAYERS);
        assert_eq!(tiny.hidden_dim(), TINY_DIM);
    }

    #[test]
    fn tiny_container_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let paths = generate(dir.path(), 7).unwrap();
        let file = paths.tiny_a.join("weights.bin");
        let bytes = std::fs::read(&file).unwrap();
        let reread = TensorContainer::from_bytes(&bytes).unwrap();
        assert_eq!(reread.to_bytes(), bytes);
    }

    #[test]
    fn embedding_file_round_trips() {
        let text = embedding_table_text(7);
        let table = EmbeddingTable::parse(&text).unwrap();
        assert_eq!(table.dim(), 8);
        assert_eq!(table.len(), CLASS_LABELS.len() * MEANING_CLUSTERS);
    }
}
