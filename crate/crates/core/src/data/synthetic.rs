//! Synthetic local-cue corpus.
//!
//! Sentences are random filler words with planted *ambiguous* words. An
//! ambiguous word is an entity iff a trigger word sits within `k` positions of
//! it (`cue_width = 2k + 1`); the nearest trigger (left wins ties) decides the
//! type. Near-miss triggers are deliberately planted at distances `k+1` and
//! `k+2`, so the label is decidable from the cue window and nothing wider.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conll::{write_conll, LabeledSequence};
use crate::error::{HgnError, Result};
use crate::tagger::{bio_decode, entity_prf, Metrics, OUTSIDE};

const SYLLABLES: [&str; 8] = ["ka", "lo", "mi", "ne", "ru", "so", "ta", "vi"];

const AMBIGUOUS: [&str; 24] = [
    "amber", "brook", "cliff", "dale", "ember", "fern", "glen", "heath", "iris", "jade", "kestrel", "lark",
    "marsh", "north", "oak", "pike", "quill", "reed", "sage", "thorn", "umber", "vale", "wren", "yarrow",
];

const TRIGGERS: [(&str, &str); 9] = [
    ("mr", "PER"),
    ("dr", "PER"),
    ("mrs", "PER"),
    ("in", "LOC"),
    ("near", "LOC"),
    ("via", "LOC"),
    ("corp", "ORG"),
    ("inc", "ORG"),
    ("ltd", "ORG"),
];

pub const ENTITY_TYPES: [&str; 3] = ["LOC", "ORG", "PER"];

fn fillers() -> Vec<String> {
    let mut out = Vec::with_capacity(SYLLABLES.len() * SYLLABLES.len());
    for a in SYLLABLES {
        for b in SYLLABLES {
            out.push(format!("{a}{b}"));
        }
    }
    out
}

pub fn trigger_type(word: &str) -> Option<&'static str> {
    TRIGGERS.iter().find(|(w, _)| *w == word).map(|(_, t)| *t)
}

pub fn is_ambiguous(word: &str) -> bool {
    AMBIGUOUS.contains(&word)
}

/// Gold tag for the token at `center` of `window`, looking only inside `window`
/// and at most `k` positions away.
pub fn cue_label(window: &[&str], center: usize, k: usize) -> String {
    if !is_ambiguous(window[center]) {
        return OUTSIDE.to_string();
    }
    for dist in 1..=k {
        let left = center.checked_sub(dist).map(|p| window[p]);
        let right = window.get(center + dist).copied();
        for w in [left, right].into_iter().flatten() {
            if let Some(t) = trigger_type(w) {
                return format!("B-{t}");
            }
        }
    }
    OUTSIDE.to_string()
}

/// `(window, center)` for token `p`: tokens `p-k ..= p+k` clipped to the sentence.
fn cue_window<'a>(tokens: &'a [&'a str], p: usize, k: usize) -> (&'a [&'a str], usize) {
    let lo = p.saturating_sub(k);
    let hi = (p + k + 1).min(tokens.len());
    (&tokens[lo..hi], p - lo)
}

fn label_sentence(tokens: &[String], k: usize) -> Vec<String> {
    let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
    (0..refs.len())
        .map(|p| {
            let (w, c) = cue_window(&refs, p, k);
            cue_label(w, c, k)
        })
        .collect()
}

fn check_cue_width(cue_width: usize) -> Result<usize> {
    if cue_width < 3 || cue_width % 2 == 0 {
        return Err(HgnError::InvalidArgument(format!(
            "cue width must be odd and at least 3, got {cue_width}"
        )));
    }
    Ok((cue_width - 1) / 2)
}

fn sentence(rng: &mut ChaCha8Rng, k: usize, fill: &[String]) -> Vec<String> {
    let len = rng.gen_range(8..=20);
    let mut slots: Vec<Option<&str>> = vec![None; len];
    let free = |slots: &[Option<&str>], q: usize| q < slots.len() && slots[q].is_none();

    let planted = rng.gen_range(1..=2);
    for _ in 0..planted {
        let open: Vec<usize> = (0..len).filter(|&q| slots[q].is_none()).collect();
        let Some(&p) = open.choose(rng) else { break };
        slots[p] = Some(AMBIGUOUS[rng.gen_range(0..AMBIGUOUS.len())]);
        let roll: f64 = rng.gen();
        let dist = if roll < 0.5 {
            Some(rng.gen_range(1..=k))
        } else if roll < 0.85 {
            Some(rng.gen_range(k + 1..=k + 2))
        } else {
            None
        };
        if let Some(d) = dist {
            let q = if rng.gen_bool(0.5) { p.checked_sub(d) } else { Some(p + d) };
            if let Some(q) = q.filter(|&q| free(&slots, q)) {
                slots[q] = Some(TRIGGERS[rng.gen_range(0..TRIGGERS.len())].0);
            }
        }
    }
    if rng.gen_bool(0.3) {
        let open: Vec<usize> = (0..len).filter(|&q| slots[q].is_none()).collect();
        if let Some(&q) = open.choose(rng) {
            slots[q] = Some(TRIGGERS[rng.gen_range(0..TRIGGERS.len())].0);
        }
    }
    slots
        .into_iter()
        .map(|s| match s {
            Some(w) => w.to_string(),
            None => fill[rng.gen_range(0..fill.len())].clone(),
        })
        .collect()
}

fn generate_with(rng: &mut ChaCha8Rng, n_sentences: usize, k: usize) -> Vec<LabeledSequence> {
    let fill = fillers();
    (0..n_sentences)
        .map(|i| {
            let tokens = sentence(rng, k, &fill);
            let tags = label_sentence(&tokens, k);
            LabeledSequence {
                tokens,
                tags,
                source_index: i,
            }
        })
        .collect()
}

/// `n_sentences` labelled sentences, deterministic in `seed`.
pub fn gen_synthetic(n_sentences: usize, seed: u64, cue_width: usize) -> Result<Vec<LabeledSequence>> {
    let k = check_cue_width(cue_width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(generate_with(&mut rng, n_sentences, k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub seed: u64,
    pub cue_width: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub entity_types: Vec<String>,
}

pub struct SyntheticSplits {
    pub train: Vec<LabeledSequence>,
    pub dev: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
    pub manifest: Manifest,
}

/// Train split of `n_train` sentences plus dev and test splits of a quarter
/// that size each, drawn in that order from one seeded stream.
pub fn gen_splits(n_train: usize, seed: u64, cue_width: usize) -> Result<SyntheticSplits> {
    let k = check_cue_width(cue_width)?;
    let held_out = (n_train / 4).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = generate_with(&mut rng, n_train, k);
    let dev = generate_with(&mut rng, held_out, k);
    let test = generate_with(&mut rng, held_out, k);
    let manifest = Manifest {
        generator: "local-cue/1".into(),
        seed,
        cue_width,
        train: train.len(),
        dev: dev.len(),
        test: test.len(),
        entity_types: ENTITY_TYPES.iter().map(|s| s.to_string()).collect(),
    };
    Ok(SyntheticSplits {
        train,
        dev,
        test,
        manifest,
    })
}

/// Writes `train.txt`, `dev.txt`, `test.txt` and `manifest.json` into `dir`.
pub fn write_splits(dir: &Path, splits: &SyntheticSplits) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HgnError::io(dir, e))?;
    for (name, part) in [("train.txt", &splits.train), ("dev.txt", &splits.dev), ("test.txt", &splits.test)] {
        let path = dir.join(name);
        fs::write(&path, write_conll(part)).map_err(|e| HgnError::io(&path, e))?;
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&splits.manifest)?;
    fs::write(&path, json + "\n").map_err(|e| HgnError::io(&path, e))
}

/// Re-derives every tag from its cue window alone and reports the first mismatch.
/// Also checks that every entity has a trigger within `k` positions.
pub fn audit(corpus: &[LabeledSequence], cue_width: usize) -> Result<()> {
    let k = check_cue_width(cue_width)?;
    for s in corpus {
        let refs: Vec<&str> = s.tokens.iter().map(String::as_str).collect();
        for p in 0..refs.len() {
            let (w, c) = cue_window(&refs, p, k);
            let derived = cue_label(w, c, k);
            if derived != s.tags[p] {
                return Err(HgnError::InvalidArgument(format!(
                    "sentence {} token {p}: tag {} but cue window gives {derived}",
                    s.source_index, s.tags[p]
                )));
            }
            if s.tags[p] != OUTSIDE && !w.iter().any(|t| trigger_type(t).is_some()) {
                return Err(HgnError::InvalidArgument(format!(
                    "sentence {} token {p}: entity without a trigger in its window",
                    s.source_index
                )));
            }
        }
    }
    Ok(())
}

/// Window-blind reference tagger: each word gets the tag it carried most often
/// in `train` (ties to the lexicographically smallest tag, unseen words `O`).
pub fn majority_baseline(train: &[LabeledSequence], test: &[LabeledSequence]) -> Result<Metrics> {
    let mut counts: HashMap<&str, HashMap<&str, usize>> = HashMap::new();
    for s in train {
        for (w, t) in s.tokens.iter().zip(&s.tags) {
            *counts.entry(w).or_default().entry(t).or_default() += 1;
        }
    }
    let best: HashMap<&str, &str> = counts
        .iter()
        .map(|(w, c)| {
            let mut v: Vec<(&&str, &usize)> = c.iter().collect();
            v.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
            (*w, *v[0].0)
        })
        .collect();
    let mut gold = Vec::with_capacity(test.len());
    let mut pred = Vec::with_capacity(test.len());
    for s in test {
        let tags: Vec<&str> = s.tokens.iter().map(|w| best.get(w.as_str()).copied().unwrap_or(OUTSIDE)).collect();
        pred.push(bio_decode(&tags)?);
        gold.push(bio_decode(&s.tags)?);
    }
    entity_prf(&gold, &pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_bytes() {
        let a = write_conll(&gen_synthetic(50, 3, 5).unwrap());
        let b = write_conll(&gen_synthetic(50, 3, 5).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, write_conll(&gen_synthetic(50, 4, 5).unwrap()));
    }

    #[test]
    fn rejects_bad_cue_width() {
        assert!(gen_synthetic(1, 0, 4).is_err());
        assert!(gen_synthetic(1, 0, 1).is_err());
    }

    #[test]
    fn construction_audit_passes() {
        for cue in [3, 5, 7] {
            let c = gen_synthetic(300, 17, cue).unwrap();
            audit(&c, cue).unwrap();
        }
    }

    #[test]
    fn relabeling_outside_window_never_changes_entity_tags() {
        let k = 2;
        let c = gen_synthetic(200, 5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let vocab: Vec<&str> = AMBIGUOUS.iter().copied().chain(TRIGGERS.iter().map(|t| t.0)).chain(["kalo"]).collect();
        for s in &c {
            for p in 0..s.len() {
                if !is_ambiguous(&s.tokens[p]) {
                    continue;
                }
                let mut perturbed = s.tokens.clone();
                for (q, tok) in perturbed.iter_mut().enumerate() {
                    if q + k < p || q > p + k {
                        *tok = vocab[rng.gen_range(0..vocab.len())].to_string();
                    }
                }
                assert_eq!(label_sentence(&perturbed, k)[p], s.tags[p]);
            }
        }
    }

    #[test]
    fn near_misses_are_outside() {
        let toks = ["kalo", "mr", "kalo", "kalo", "amber", "kalo"];
        let (w, c) = cue_window(&toks, 4, 2);
        assert_eq!(cue_label(w, c, 2), "O");
        let (w, c) = cue_window(&toks, 4, 3);
        assert_eq!(cue_label(w, c, 3), "B-PER");
    }

    #[test]
    fn splits_have_requested_sizes() {
        let s = gen_splits(40, 1, 5).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (40, 10, 10));
        assert_eq!(s.manifest.test, 10);
    }

    #[test]
    fn majority_baseline_is_weak() {
        let s = gen_splits(2000, 7, 5).unwrap();
        let m = majority_baseline(&s.train, &s.test).unwrap();
        assert!(m.f1 <= 0.6, "majority baseline F1 {}", m.f1);
    }
}
