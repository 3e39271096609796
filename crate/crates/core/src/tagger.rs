//! Softmax tag classifier, BIO span decoding and entity-level scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HgnError, Result};
use crate::numerics::params::xavier;
use crate::numerics::{Bindings, Graph, ParamStore, Tensor, Var};

pub const OUTSIDE: &str = "O";

/// `O` at index 0, then `B-t`, `I-t` for each entity type in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    entity_types: Vec<String>,
    tags: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelScheme {
    pub fn new<I, S>(entity_types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let types: BTreeSet<String> = entity_types.into_iter().map(Into::into).collect();
        let entity_types: Vec<String> = types.into_iter().collect();
        let mut tags = vec![OUTSIDE.to_string()];
        for t in &entity_types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        let index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        LabelScheme {
            entity_types,
            tags,
            index,
        }
    }

    /// Collects entity types from every tag string seen.
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut types = BTreeSet::new();
        for t in tags {
            if let Some(ty) = parse_tag(t)?.1 {
                types.insert(ty.to_string());
            }
        }
        Ok(Self::new(types))
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn outside(&self) -> usize {
        0
    }

    pub fn index_of(&self, tag: &str) -> Result<usize> {
        if self.index.is_empty() {
            // deserialized without the lookup table
            return self
                .tags
                .iter()
                .position(|t| t == tag)
                .ok_or_else(|| HgnError::InvalidArgument(format!("unknown tag {tag:?}")));
        }
        self.index
            .get(tag)
            .copied()
            .ok_or_else(|| HgnError::InvalidArgument(format!("unknown tag {tag:?}")))
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn decode_ids(&self, ids: &[usize]) -> Result<Vec<EntitySpan>> {
        let tags: Vec<&str> = ids.iter().map(|&i| self.tag(i)).collect();
        bio_decode(&tags)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Prefix {
    Begin,
    Inside,
}

fn parse_tag(tag: &str) -> Result<(Option<Prefix>, Option<&str>)> {
    if tag == OUTSIDE {
        return Ok((None, None));
    }
    let (prefix, ty) = if let Some(ty) = tag.strip_prefix("B-") {
        (Prefix::Begin, ty)
    } else if let Some(ty) = tag.strip_prefix("I-") {
        (Prefix::Inside, ty)
    } else {
        return Err(HgnError::InvalidArgument(format!("unknown tag {tag:?}, expected O, B-<type> or I-<type>")));
    };
    if ty.is_empty() {
        return Err(HgnError::InvalidArgument(format!("tag {tag:?} has an empty type")));
    }
    Ok((Some(prefix), Some(ty)))
}

/// Entity occupying tokens `start..=end`, one-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub kind: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, kind: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            kind: kind.into(),
        }
    }
}

/// Maximal BIO runs. An `I-t` that does not continue an open `t` span opens a
/// new one, as conlleval does.
pub fn bio_decode<S: AsRef<str>>(tags: &[S]) -> Result<Vec<EntitySpan>> {
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        let pos = i + 1;
        let (prefix, ty) = parse_tag(tag.as_ref())?;
        match (prefix, ty) {
            (Some(Prefix::Inside), Some(ty)) if open.as_ref().is_some_and(|s| s.kind == ty) => {
                if let Some(s) = open.as_mut() {
                    s.end = pos;
                }
            }
            (Some(_), Some(ty)) => {
                spans.extend(open.take());
                open = Some(EntitySpan::new(pos, pos, ty));
            }
            _ => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// BIO tags for `n` tokens with the given non-overlapping spans.
pub fn spans_to_tags(spans: &[EntitySpan], n: usize) -> Result<Vec<String>> {
    let mut tags = vec![OUTSIDE.to_string(); n];
    let mut used = vec![false; n];
    for s in spans {
        if s.start == 0 || s.start > s.end || s.end > n {
            return Err(HgnError::InvalidArgument(format!("span {s:?} outside 1..={n}")));
        }
        for p in s.start..=s.end {
            if used[p - 1] {
                return Err(HgnError::InvalidArgument(format!("span {s:?} overlaps another")));
            }
            used[p - 1] = true;
            tags[p - 1] = if p == s.start {
                format!("B-{}", s.kind)
            } else {
                format!("I-{}", s.kind)
            };
        }
    }
    Ok(tags)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl TypeMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        TypeMetrics {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            // equals 2PR/(P+R), and 0 when P+R = 0
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            tp,
            fp,
            fn_,
        }
    }
}

/// Micro-averaged exact-match scores.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_type: BTreeMap<String, TypeMetrics>,
}

impl Metrics {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}", "type", "precision", "recall", "f1", "tp", "fp", "fn");
        let mut line = |name: &str, m: &TypeMetrics| {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>6}",
                name, m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_
            );
        };
        for (ty, m) in &self.per_type {
            line(ty, m);
        }
        line("overall", &TypeMetrics::from_counts(self.tp, self.fp, self.fn_));
        out
    }
}

/// A predicted span counts as correct iff gold has the identical
/// `(start, end, type)` in the same sentence.
pub fn entity_prf(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<Metrics> {
    if gold.len() != pred.len() {
        return Err(HgnError::InvalidArgument(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let gold_set: HashSet<&EntitySpan> = g.iter().collect();
        let pred_set: HashSet<&EntitySpan> = p.iter().collect();
        for s in &pred_set {
            let c = counts.entry(s.kind.clone()).or_default();
            if gold_set.contains(s) {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        for s in &gold_set {
            if !pred_set.contains(s) {
                counts.entry(s.kind.clone()).or_default().2 += 1;
            }
        }
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut per_type = BTreeMap::new();
    for (ty, (t, f, n)) in counts {
        tp += t;
        fp += f;
        fn_ += n;
        per_type.insert(ty, TypeMetrics::from_counts(t, f, n));
    }
    let overall = TypeMetrics::from_counts(tp, fp, fn_);
    Ok(Metrics {
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        tp,
        fp,
        fn_,
        per_type,
    })
}

pub fn init_params(input_dim: usize, n_tags: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
    store.insert("tagger.w", xavier(rng, input_dim, n_tags))?;
    store.insert("tagger.b", Tensor::zeros(&[n_tags]))?;
    Ok(())
}

/// Linear projection then row softmax: one tag distribution per row of `s`.
pub fn classify(g: &mut Graph, params: &Bindings, s: Var) -> Result<Var> {
    let w = params.var("tagger.w")?;
    if g.shape(s)[1] != g.shape(w)[0] {
        return Err(HgnError::shape("classify", g.shape(s), g.shape(w)));
    }
    let logits = g.matmul(s, w)?;
    let logits = g.add_bias(logits, params.var("tagger.b")?)?;
    g.softmax_rows(logits)
}

/// Mean negative log-likelihood of the gold tags over unmasked positions.
pub fn sequence_loss(g: &mut Graph, probs: Var, gold: &[usize], mask: &[bool]) -> Result<Var> {
    g.nll_loss(probs, gold, mask)
}
