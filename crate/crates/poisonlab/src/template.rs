//! Prompt templates: one literal frame per demonstration example and one
//! for the query line. The default template renders
//! `{input}→{output}\n` per example and `{query}→` for the query, so a
//! probe prompt for ("great movie", "positive") with dummy query
//! "fine film" reads `great movie→positive\nfine film→`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{Tokenized, Vocabulary};

/// Placeholder names used in frames.
const INPUT: &str = "{input}";
const OUTPUT: &str = "{output}";
const QUERY: &str = "{query}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    /// Frame containing `{input}` and `{output}`, applied per example.
    pub example_frame: String,
    /// Frame containing `{query}`, appended after the examples.
    pub query_frame: String,
}

/// The literal pieces around the placeholders, used for rendering and
/// for parsing rendered prompts back into fields.
struct Frames<'a> {
    e_pre: &'a str,
    e_mid: &'a str,
    e_post: &'a str,
    q_pre: &'a str,
    q_post: &'a str,
}

impl Template {
    pub fn new(name: &str, example_frame: &str, query_frame: &str) -> Result<Self> {
        let t = Self {
            name: name.to_string(),
            example_frame: example_frame.to_string(),
            query_frame: query_frame.to_string(),
        };
        t.frames()?;
        Ok(t)
    }

    /// The default arrow template.
    pub fn arrow() -> Self {
        Self::new("arrow", "{input}→{output}\n", "{query}→").expect("default template is valid")
    }

    fn frames(&self) -> Result<Frames<'_>> {
        let split_once = |frame: &'static str, text: &'_ str, ph: &str| -> Result<(usize, usize)> {
            let start = text.find(ph).ok_or_else(|| {
                Error::Template(format!("{frame} frame missing required placeholder {ph}"))
            })?;
            if text[start + ph.len()..].contains(ph) {
                return Err(Error::Template(format!(
                    "{frame} frame repeats placeholder {ph}"
                )));
            }
            Ok((start, start + ph.len()))
        };
        let (i_start, i_end) = split_once("example", &self.example_frame, INPUT)?;
        let (o_start, o_end) = split_once("example", &self.example_frame, OUTPUT)?;
        if o_start < i_end {
            return Err(Error::Template(
                "example frame must place {input} before {output}".into(),
            ));
        }
        let (q_start, q_end) = split_once("query", &self.query_frame, QUERY)?;
        let f = Frames {
            e_pre: &self.example_frame[..i_start],
            e_mid: &self.example_frame[i_end..o_start],
            e_post: &self.example_frame[o_end..],
            q_pre: &self.query_frame[..q_start],
            q_post: &self.query_frame[q_end..],
        };
        if f.e_mid.is_empty() {
            return Err(Error::Template(
                "example frame needs a literal separator between {input} and {output}".into(),
            ));
        }
        if f.q_post.is_empty() {
            return Err(Error::Template(
                "query frame needs a literal answer delimiter after {query}".into(),
            ));
        }
        Ok(f)
    }

    /// The literal the model sees right before it must answer.
    pub fn answer_delimiter(&self) -> String {
        self.frames().expect("validated at construction").q_post.to_string()
    }

    pub fn render_example(&self, input: &str, output: &str) -> String {
        let f = self.frames().expect("validated at construction");
        format!("{}{}{}{}{}", f.e_pre, input, f.e_mid, output, f.e_post)
    }

    pub fn render_query(&self, query: &str) -> String {
        let f = self.frames().expect("validated at construction");
        format!("{}{}{}", f.q_pre, query, f.q_post)
    }

    /// One example plus the query line: the probe layout used during
    /// attack optimization.
    pub fn render_probe(&self, input: &str, output: &str, query: &str) -> String {
        format!("{}{}", self.render_example(input, output), self.render_query(query))
    }

    /// Recover (input, output, query) from a rendered probe. Splits at
    /// the first occurrence of each literal separator, so it is exact for
    /// fields that do not themselves contain the separators.
    pub fn parse_probe(&self, text: &str) -> Result<(String, String, String)> {
        let f = self.frames()?;
        let rest = text
            .strip_prefix(f.e_pre)
            .ok_or_else(|| Error::Template("rendered text missing example prefix".into()))?;
        let (input, rest) = rest
            .split_once(f.e_mid)
            .ok_or_else(|| Error::Template("rendered text missing input/output separator".into()))?;
        let sep = format!("{}{}", f.e_post, f.q_pre);
        let (output, rest) = rest
            .split_once(&sep)
            .ok_or_else(|| Error::Template("rendered text missing example/query separator".into()))?;
        let query = rest
            .strip_suffix(f.q_post)
            .ok_or_else(|| Error::Template("rendered text missing answer delimiter".into()))?;
        Ok((input.to_string(), output.to_string(), query.to_string()))
    }
}

/// A probe prompt: one example with its label, a dummy query, and the
/// rendered/tokenized form used to read hidden states.
#[derive(Debug, Clone)]
pub struct ProbePrompt {
    pub input: String,
    pub label: String,
    pub dummy_query: String,
    pub template_name: String,
    pub rendered: String,
    pub tokens: Tokenized,
}

/// Render and tokenize a probe prompt. The example label and dummy query
/// must be non-empty; the input may be empty (deletion of the only unit
/// during importance scoring produces an empty input).
pub fn build_probe_prompt(
    input: &str,
    label: &str,
    dummy_query: &str,
    template: &Template,
    vocab: &Vocabulary,
) -> Result<ProbePrompt> {
    if label.is_empty() {
        return Err(Error::Template("probe prompt needs a non-empty label".into()));
    }
    if dummy_query.is_empty() {
        return Err(Error::Template("probe prompt needs a non-empty dummy query".into()));
    }
    let rendered = template.render_probe(input, label, dummy_query);
    let tokens = vocab.tokenize(&rendered);
    Ok(ProbePrompt {
        input: input.to_string(),
        label: label.to_string(),
        dummy_query: dummy_query.to_string(),
        template_name: template.name.clone(),
        rendered,
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_probe_renders_the_documented_layout() {
        let t = Template::arrow();
        assert_eq!(
            t.render_probe("great movie", "positive", "fine film"),
            "great movie→positive\nfine film→"
        );
    }

    #[test]
    fn template_without_query_placeholder_errors() {
        let err = Template::new("bad", "{input}→{output}\n", "no placeholder→").unwrap_err();
        assert!(err.to_string().contains("{query}"), "{err}");
    }

    #[test]
    fn parse_probe_inverts_render() {
        let t = Template::new("io", "Input: {input}\nOutput: {output}\n", "Input: {query}\nOutput:")
            .unwrap();
        let rendered = t.render_probe("a b", "yes", "c d");
        assert_eq!(
            t.parse_probe(&rendered).unwrap(),
            ("a b".into(), "yes".into(), "c d".into())
        );
    }

    #[test]
    fn answer_delimiter_of_default_template_is_the_arrow() {
        assert_eq!(Template::arrow().answer_delimiter(), "→");
    }

    #[test]
    fn multi_shot_render_composes_example_frames() {
        let t = Template::arrow();
        let two = format!("{}{}", t.render_example("x1", "y1"), t.render_example("x2", "y2"));
        assert_eq!(two, "x1→y1\nx2→y2\n");
    }

    #[test]
    fn empty_input_still_renders() {
        let t = Template::arrow();
        assert_eq!(t.render_probe("", "y", "q"), "→y\nq→");
    }
}
