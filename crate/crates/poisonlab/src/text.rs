//! Tokenization and segmentation of raw text into the three perturbation
//! granularities: model tokens, words, and characters.
//!
//! Everything here is deterministic and allocation-light. Texts ingested
//! into the lab are ASCII-only; the token vocabulary may additionally
//! carry multi-byte marker tokens (the prompt templates use "→").

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Spelling of the beginning-of-sequence token in vocabulary files.
pub const BOS_MARKER: &str = "<bos>";
/// Spelling of the unknown token in vocabulary files.
pub const UNK_MARKER: &str = "<unk>";

pub type TokenId = u32;

// ---------------------------------------------------------------------------
// Character set
// ---------------------------------------------------------------------------

/// The ordered candidate alphabet used by the character-replacement attack.
///
/// Order matters: ties between equally good replacement candidates are
/// broken by position in this list.
#[derive(Debug, Clone)]
pub struct CharacterSet {
    chars: Vec<char>,
}

impl CharacterSet {
    /// Full printable-ASCII alphabet: uppercase, lowercase, digits,
    /// punctuation (in code-point order), then space.
    pub fn printable_ascii() -> Self {
        let mut chars: Vec<char> = ('A'..='Z').collect();
        chars.extend('a'..='z');
        chars.extend('0'..='9');
        chars.extend((0x21u8..=0x7e).map(char::from).filter(|c| c.is_ascii_punctuation()));
        chars.push(' ');
        Self { chars }
    }

    /// Build a custom alphabet. Rejects duplicates and non-ASCII entries,
    /// and requires at least one uppercase letter, one lowercase letter,
    /// one digit, one punctuation mark, and the space character.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect();
        let mut seen = [false; 128];
        for &c in &chars {
            if !c.is_ascii() {
                return Err(Error::Vocabulary(format!(
                    "character set entry {c:?} is not ASCII"
                )));
            }
            let idx = c as usize;
            if seen[idx] {
                return Err(Error::Vocabulary(format!(
                    "duplicate character set entry {c:?}"
                )));
            }
            seen[idx] = true;
        }
        let has = |f: fn(&char) -> bool| chars.iter().any(|c| f(c));
        if !has(char::is_ascii_uppercase)
            || !has(char::is_ascii_lowercase)
            || !has(char::is_ascii_digit)
            || !has(char::is_ascii_punctuation)
            || !chars.contains(&' ')
        {
            return Err(Error::Vocabulary(
                "character set must cover uppercase, lowercase, digits, punctuation, and space"
                    .into(),
            ));
        }
        Ok(Self { chars })
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn contains(&self, c: char) -> bool {
        self.chars.contains(&c)
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// An ordered token vocabulary with a string ↔ id bijection and the two
/// special tokens BOS and UNK.
///
/// The on-disk format is one token per line, order defining ids. The lines
/// `<bos>` and `<unk>` denote the special tokens; `\n`, `\s` and `\\`
/// escape newline, space, and backslash inside ordinary tokens.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    bos: TokenId,
    unk: TokenId,
    max_token_chars: usize,
}

/// Result of tokenizing a text: ids are BOS-prefixed; `lossy` is set when
/// any character had to be mapped to UNK (the round trip through
/// [`Vocabulary::detokenize`] will not reproduce the input).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<TokenId>,
    pub lossy: bool,
}

fn unescape_token(line: &str, line_no: usize) -> Result<String> {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('s') => out.push(' '),
                Some('\\') => out.push('\\'),
                other => {
                    return Err(Error::Vocabulary(format!(
                        "line {line_no}: bad escape {other:?}"
                    )))
                }
            }
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

fn escape_token(token: &str) -> String {
    token
        .replace('\\', "\\\\")
        .replace('\n', "\\n")
        .replace(' ', "\\s")
}

impl Vocabulary {
    /// Build from the line-oriented file content. Exactly one `<bos>` and
    /// one `<unk>` line must be present; duplicates are rejected.
    pub fn from_token_lines(content: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut ids = HashMap::new();
        let mut bos = None;
        let mut unk = None;
        let mut max_token_chars = 1;
        for (i, line) in content.lines().enumerate() {
            let id = tokens.len() as TokenId;
            let token = match line {
                BOS_MARKER => {
                    if bos.replace(id).is_some() {
                        return Err(Error::Vocabulary(format!("line {}: duplicate <bos>", i + 1)));
                    }
                    BOS_MARKER.to_string()
                }
                UNK_MARKER => {
                    if unk.replace(id).is_some() {
                        return Err(Error::Vocabulary(format!("line {}: duplicate <unk>", i + 1)));
                    }
                    UNK_MARKER.to_string()
                }
                _ => {
                    let t = unescape_token(line, i + 1)?;
                    if t.is_empty() {
                        return Err(Error::Vocabulary(format!("line {}: empty token", i + 1)));
                    }
                    max_token_chars = max_token_chars.max(t.chars().count());
                    t
                }
            };
            if ids.insert(token.clone(), id).is_some() {
                return Err(Error::Vocabulary(format!(
                    "line {}: duplicate token {token:?}",
                    i + 1
                )));
            }
            tokens.push(token);
        }
        let bos = bos.ok_or_else(|| Error::Vocabulary("missing <bos> line".into()))?;
        let unk = unk.ok_or_else(|| Error::Vocabulary("missing <unk> line".into()))?;
        Ok(Self {
            tokens,
            ids,
            bos,
            unk,
            max_token_chars,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_token_lines(&content)
    }

    /// Serialize back to the line format. `from_token_lines(to_token_lines())`
    /// is the identity.
    pub fn to_token_lines(&self) -> String {
        let mut out = String::new();
        for (id, token) in self.tokens.iter().enumerate() {
            if id as TokenId == self.bos {
                out.push_str(BOS_MARKER);
            } else if id as TokenId == self.unk {
                out.push_str(UNK_MARKER);
            } else {
                out.push_str(&escape_token(token));
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    pub fn token_str(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    /// Ids usable as attack candidates: everything except BOS and UNK,
    /// in id order.
    pub fn candidate_ids(&self) -> Vec<TokenId> {
        (0..self.tokens.len() as TokenId)
            .filter(|&id| id != self.bos && id != self.unk)
            .collect()
    }

    /// Greedy longest-match tokenization, left to right, BOS-prefixed.
    /// Characters that no token covers map to UNK and set the lossy flag.
    pub fn tokenize(&self, text: &str) -> Tokenized {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut ids = vec![self.bos];
        let mut lossy = false;
        let mut i = 0;
        while i < chars.len() {
            let start = chars[i].0;
            let mut matched = None;
            let max_len = self.max_token_chars.min(chars.len() - i);
            for len in (1..=max_len).rev() {
                let end = if i + len < chars.len() {
                    chars[i + len].0
                } else {
                    text.len()
                };
                let candidate = &text[start..end];
                if candidate == BOS_MARKER || candidate == UNK_MARKER {
                    continue;
                }
                if let Some(&id) = self.ids.get(candidate) {
                    matched = Some((id, len));
                    break;
                }
            }
            match matched {
                Some((id, len)) => {
                    ids.push(id);
                    i += len;
                }
                None => {
                    ids.push(self.unk);
                    lossy = true;
                    i += 1;
                }
            }
        }
        Tokenized { ids, lossy }
    }

    /// Inverse of [`tokenize`](Self::tokenize) for lossless inputs. BOS
    /// renders as nothing; UNK renders as its `<unk>` marker.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            if id == self.bos {
                continue;
            }
            let token = self
                .token_str(id)
                .ok_or_else(|| Error::Vocabulary(format!("token id {id} out of range")))?;
            out.push_str(token);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Word segmentation
// ---------------------------------------------------------------------------

/// A word with its byte offset into the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub text: String,
    pub start: usize,
}

/// Words plus the verbatim separators around them, so the source text can
/// be reconstructed byte-for-byte. `separators.len() == words.len() + 1`:
/// the run before the first word, between each pair, and after the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSegmentation {
    pub words: Vec<WordSpan>,
    pub separators: Vec<String>,
}

/// Separators are whitespace plus ASCII punctuation; words are maximal
/// runs of everything else.
pub fn is_word_separator(c: char) -> bool {
    c.is_ascii_whitespace() || c.is_ascii_punctuation()
}

/// Split a text into words and separators.
pub fn split_words(text: &str) -> WordSegmentation {
    let mut words = Vec::new();
    let mut separators = Vec::new();
    let mut sep = String::new();
    let mut word = String::new();
    let mut word_start = 0;
    for (pos, c) in text.char_indices() {
        if is_word_separator(c) {
            if !word.is_empty() {
                words.push(WordSpan {
                    text: std::mem::take(&mut word),
                    start: word_start,
                });
                separators.push(std::mem::take(&mut sep));
            }
            sep.push(c);
        } else {
            if word.is_empty() {
                word_start = pos;
            }
            word.push(c);
        }
    }
    if !word.is_empty() {
        words.push(WordSpan {
            text: word,
            start: word_start,
        });
        separators.push(std::mem::take(&mut sep));
    }
    // trailing separator run (or the whole text when there are no words)
    separators.push(sep);
    // `separators` was built as [before w0, before w1, ..., trailing];
    // that is already the documented layout.
    WordSegmentation { words, separators }
}

impl WordSegmentation {
    /// Concatenate separators and words back into the source text.
    pub fn reconstruct(&self) -> String {
        let mut out = String::new();
        for (i, word) in self.words.iter().enumerate() {
            out.push_str(&self.separators[i]);
            out.push_str(&word.text);
        }
        out.push_str(self.separators.last().map(String::as_str).unwrap_or(""));
        out
    }

    /// Text with word `idx` swapped for `replacement`; everything else
    /// byte-identical.
    pub fn with_word(&self, idx: usize, replacement: &str) -> String {
        let mut out = String::new();
        for (i, word) in self.words.iter().enumerate() {
            out.push_str(&self.separators[i]);
            out.push_str(if i == idx { replacement } else { &word.text });
        }
        out.push_str(self.separators.last().map(String::as_str).unwrap_or(""));
        out
    }

    /// Text rebuilt from a full replacement word list (same length as
    /// `words`), keeping every separator verbatim.
    pub fn render_with_words(&self, words: &[String]) -> String {
        debug_assert_eq!(words.len(), self.words.len());
        let mut out = String::new();
        for (i, word) in words.iter().enumerate() {
            out.push_str(&self.separators[i]);
            out.push_str(word);
        }
        out.push_str(self.separators.last().map(String::as_str).unwrap_or(""));
        out
    }

    /// Text with word `idx` deleted along with its left separator run
    /// (the right run when deleting the first word), so no doubled
    /// whitespace appears. Deleting the only word yields the empty string.
    pub fn with_word_deleted(&self, idx: usize) -> String {
        if self.words.len() <= 1 {
            return String::new();
        }
        let mut out = String::new();
        for (i, word) in self.words.iter().enumerate() {
            if i == idx {
                continue;
            }
            // Deleting word 0 drops separators[1] instead of separators[0].
            let sep = if idx == 0 && i == 1 {
                &self.separators[0]
            } else {
                &self.separators[i]
            };
            out.push_str(sep);
            out.push_str(&word.text);
        }
        out.push_str(self.separators.last().map(String::as_str).unwrap_or(""));
        out
    }
}

// ---------------------------------------------------------------------------
// Character enumeration
// ---------------------------------------------------------------------------

/// Characters of an ASCII text with their byte offsets. Non-ASCII input is
/// rejected: the attack surface is defined over single-byte positions.
pub fn enumerate_chars(text: &str) -> Result<Vec<(usize, char)>> {
    if !text.is_ascii() {
        let bad = text.chars().find(|c| !c.is_ascii()).unwrap();
        return Err(Error::Dataset(format!(
            "non-ASCII character {bad:?} outside the supported text domain"
        )));
    }
    Ok(text.char_indices().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_vocab() -> Vocabulary {
        let mut lines = String::from("<bos>\n<unk>\n→\n\\n\n\\s\n");
        for c in 'a'..='z' {
            lines.push(c);
            lines.push('\n');
        }
        Vocabulary::from_token_lines(&lines).unwrap()
    }

    #[test]
    fn tokenize_empty_is_bos_only() {
        let v = small_vocab();
        let t = v.tokenize("");
        assert_eq!(t.ids, vec![v.bos()]);
        assert!(!t.lossy);
    }

    #[test]
    fn tokenize_round_trips_in_domain_text() {
        let v = small_vocab();
        let text = "abc xyz\nq→r";
        let t = v.tokenize(text);
        assert!(!t.lossy);
        assert_eq!(v.detokenize(&t.ids).unwrap(), text);
    }

    #[test]
    fn out_of_domain_char_maps_to_unk_and_flags_lossy() {
        let v = small_vocab();
        let t = v.tokenize("aZb");
        assert!(t.lossy);
        assert!(t.ids.contains(&v.unk()));
        assert_ne!(v.detokenize(&t.ids).unwrap(), "aZb");
    }

    #[test]
    fn greedy_longest_match_prefers_longer_tokens() {
        let v = Vocabulary::from_token_lines("<bos>\n<unk>\na\nb\nab\n").unwrap();
        let t = v.tokenize("ab");
        assert_eq!(t.ids.len(), 2); // BOS + "ab"
        assert_eq!(v.token_str(t.ids[1]), Some("ab"));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = small_vocab();
        let lines = v.to_token_lines();
        let v2 = Vocabulary::from_token_lines(&lines).unwrap();
        assert_eq!(lines, v2.to_token_lines());
    }

    #[test]
    fn duplicate_token_rejected() {
        let err = Vocabulary::from_token_lines("<bos>\n<unk>\na\na\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn split_words_basic() {
        let seg = split_words("great movie");
        assert_eq!(
            seg.words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>(),
            vec!["great", "movie"]
        );
        assert_eq!(seg.reconstruct(), "great movie");
    }

    #[test]
    fn split_words_apostrophe_is_separator() {
        let seg = split_words("don't stop");
        assert_eq!(
            seg.words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>(),
            vec!["don", "t", "stop"]
        );
        assert_eq!(seg.reconstruct(), "don't stop");
    }

    #[test]
    fn split_words_preserves_surrounding_whitespace() {
        let seg = split_words("  a  ");
        assert_eq!(seg.words.len(), 1);
        assert_eq!(seg.reconstruct(), "  a  ");
    }

    #[test]
    fn word_replacement_keeps_separators() {
        let seg = split_words("a, b c");
        assert_eq!(seg.with_word(1, "XX"), "a, XX c");
    }

    #[test]
    fn word_deletion_removes_left_separator() {
        let seg = split_words("a b c");
        assert_eq!(seg.with_word_deleted(1), "a c");
        assert_eq!(seg.with_word_deleted(2), "a b");
    }

    #[test]
    fn deleting_first_word_removes_right_separator() {
        let seg = split_words("a b c");
        assert_eq!(seg.with_word_deleted(0), "b c");
    }

    #[test]
    fn deleting_only_word_yields_empty() {
        let seg = split_words("  hello  ");
        assert_eq!(seg.with_word_deleted(0), "");
    }

    #[test]
    fn enumerate_chars_offsets() {
        assert_eq!(enumerate_chars("ab").unwrap(), vec![(0, 'a'), (1, 'b')]);
        assert_eq!(enumerate_chars("").unwrap(), vec![]);
        assert!(enumerate_chars("é").is_err());
    }

    #[test]
    fn printable_ascii_charset_has_95_entries() {
        let cs = CharacterSet::printable_ascii();
        assert_eq!(cs.len(), 95);
        assert!(cs.contains(' '));
        assert!(cs.contains('~'));
    }

    #[test]
    fn charset_requires_category_coverage() {
        assert!(CharacterSet::from_chars("abc".chars()).is_err());
        assert!(CharacterSet::from_chars("aA0. ".chars()).is_ok());
    }

    proptest! {
        #[test]
        fn reconstruction_is_identity(text in "[ -~]{0,64}") {
            let seg = split_words(&text);
            prop_assert_eq!(seg.reconstruct(), text);
        }

        #[test]
        fn tokenizer_round_trip_over_charset(text in "[a-z →\n]{0,48}") {
            let v = small_vocab();
            let t = v.tokenize(&text);
            prop_assert!(!t.lossy);
            prop_assert_eq!(v.detokenize(&t.ids).unwrap(), text);
        }

        #[test]
        fn prefix_tokenization_stable_at_separator_boundary(
            prefix in "[a-z ]{0,24} ",
            tail in "[a-z ]{0,24}",
        ) {
            // char-level vocabulary: tokenizing prefix+tail starts with
            // the tokens of prefix.
            let v = small_vocab();
            let full = format!("{prefix}{tail}");
            let a = v.tokenize(&prefix).ids;
            let b = v.tokenize(&full).ids;
            prop_assert_eq!(&b[..a.len()], &a[..]);
        }
    }
}
