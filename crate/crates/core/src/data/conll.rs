use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HgnError, Result};

/// Hard cap on sentence length, matching the largest supported encoder input.
pub const MAX_SENTENCE_LEN: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    /// Position of the sentence within its source file.
    pub source_index: usize,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn read_conll(path: &Path) -> Result<Vec<LabeledSequence>> {
    let text = fs::read_to_string(path).map_err(|e| HgnError::io(path, e))?;
    parse_conll(&text, &path.display().to_string())
}

/// Whitespace-separated columns, token first and tag last; blank lines end
/// sentences and `-DOCSTART-` lines are skipped.
pub fn parse_conll(text: &str, origin: &str) -> Result<Vec<LabeledSequence>> {
    parse_lines(text, origin, true)
        .map(|sents| {
            sents
                .into_iter()
                .enumerate()
                .map(|(i, (tokens, tags))| LabeledSequence {
                    tokens,
                    tags,
                    source_index: i,
                })
                .collect()
        })
}

/// Token-only reader for prediction input: the first column of each line.
pub fn parse_tokens(text: &str, origin: &str) -> Result<Vec<Vec<String>>> {
    parse_lines(text, origin, false).map(|s| s.into_iter().map(|(t, _)| t).collect())
}

pub fn read_tokens(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| HgnError::io(path, e))?;
    parse_tokens(&text, &path.display().to_string())
}

type RawSentence = (Vec<String>, Vec<String>);

fn parse_lines(text: &str, origin: &str, need_tags: bool) -> Result<Vec<RawSentence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut start_line = 0;
    let flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>, out: &mut Vec<RawSentence>, line: usize| {
        if tokens.is_empty() {
            return Ok(());
        }
        if tokens.len() > MAX_SENTENCE_LEN {
            return Err(HgnError::Parse {
                path: origin.to_string(),
                line,
                msg: format!("sentence has {} tokens, limit is {MAX_SENTENCE_LEN}", tokens.len()),
            });
        }
        out.push((std::mem::take(tokens), std::mem::take(tags)));
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush(&mut tokens, &mut tags, &mut out, start_line)?;
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if need_tags && cols.len() < 2 {
            return Err(HgnError::Parse {
                path: origin.to_string(),
                line: lineno,
                msg: format!("expected a token and a tag column, found {:?}", line.trim()),
            });
        }
        if tokens.is_empty() {
            start_line = lineno;
        }
        tokens.push(cols[0].to_string());
        tags.push(cols.last().expect("non-empty").to_string());
    }
    flush(&mut tokens, &mut tags, &mut out, start_line)?;
    Ok(out)
}

/// Two-column `token tag` lines, a blank line after every sentence.
pub fn write_conll(corpus: &[LabeledSequence]) -> String {
    let mut out = String::new();
    for s in corpus {
        for (t, g) in s.tokens.iter().zip(&s.tags) {
            out.push_str(t);
            out.push(' ');
            out.push_str(g);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_one_sentence() {
        let c = parse_conll("EU B-ORG\nrejects O\n\n", "t").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].tokens, ["EU", "rejects"]);
        assert_eq!(c[0].tags, ["B-ORG", "O"]);
    }

    #[test]
    fn repeated_separators_collapse() {
        let c = parse_conll("a O\n\n\nb B-X\n", "t").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].source_index, 1);
    }

    #[test]
    fn tag_is_last_column_and_docstart_skipped() {
        let c = parse_conll("-DOCSTART- -X- O\n\nEU NNP I-NP B-ORG\n", "t").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].tags, ["B-ORG"]);
    }

    #[test]
    fn tagless_line_names_line() {
        let err = parse_conll("word\n", "f.txt").unwrap_err();
        assert!(matches!(err, HgnError::Parse { line: 1, .. }), "{err}");
        let err = parse_conll("a O\nb\n", "f.txt").unwrap_err();
        assert!(matches!(err, HgnError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_conll("", "t").unwrap().is_empty());
        assert!(parse_conll("\n\n", "t").unwrap().is_empty());
    }

    #[test]
    fn long_sentences_rejected() {
        let text: String = (0..=MAX_SENTENCE_LEN).map(|i| format!("w{i} O\n")).collect();
        assert!(parse_conll(&text, "t").is_err());
    }

    #[test]
    fn tokens_only_reader() {
        let s = parse_tokens("a\nb X\n\nc\n", "t").unwrap();
        assert_eq!(s, vec![vec!["a", "b"], vec!["c"]]);
    }
}
