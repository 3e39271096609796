use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conll::LabeledSequence;
use super::vocab::{Vocab, PAD};
use crate::error::{HgnError, Result};
use crate::tagger::LabelScheme;

/// Padded `B x L` block of sentences. Padding cells hold `PAD` / the `O` index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub token_ids: Vec<Vec<usize>>,
    pub tag_ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    /// `source_index` of each row's sentence.
    pub sentence_ids: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.mask.iter().map(|m| m.iter().filter(|&&b| b).count()).collect()
    }

    /// Real tokens of every row laid end to end.
    pub fn flat_tokens(&self) -> Vec<usize> {
        flatten(&self.token_ids, &self.mask)
    }

    pub fn flat_tags(&self) -> Vec<usize> {
        flatten(&self.tag_ids, &self.mask)
    }
}

fn flatten(rows: &[Vec<usize>], mask: &[Vec<bool>]) -> Vec<usize> {
    rows.iter()
        .zip(mask)
        .flat_map(|(r, m)| r.iter().zip(m).filter(|(_, &k)| k).map(|(&v, _)| v))
        .collect()
}

/// Groups sentences into batches of `batch_size`, optionally after a seeded shuffle.
pub fn batchify(
    corpus: &[LabeledSequence],
    vocab: &Vocab,
    scheme: &LabelScheme,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(HgnError::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let outside = scheme.outside();
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let width = chunk.iter().map(|&i| corpus[i].len()).max().unwrap_or(0);
        let mut b = Batch {
            token_ids: Vec::with_capacity(chunk.len()),
            tag_ids: Vec::with_capacity(chunk.len()),
            mask: Vec::with_capacity(chunk.len()),
            sentence_ids: Vec::with_capacity(chunk.len()),
        };
        for &i in chunk {
            let s = &corpus[i];
            let mut toks = vocab.encode(&s.tokens);
            let mut tags = s
                .tags
                .iter()
                .map(|t| scheme.index_of(t))
                .collect::<Result<Vec<_>>>()?;
            let mut mask = vec![true; s.len()];
            toks.resize(width, PAD);
            tags.resize(width, outside);
            mask.resize(width, false);
            b.token_ids.push(toks);
            b.tag_ids.push(tags);
            b.mask.push(mask);
            b.sentence_ids.push(s.source_index);
        }
        batches.push(b);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::build_vocab;

    fn corpus() -> Vec<LabeledSequence> {
        (0..5)
            .map(|i| LabeledSequence {
                tokens: (0..=i).map(|j| format!("w{j}")).collect(),
                tags: (0..=i).map(|j| if j == 0 { "B-X".to_string() } else { "O".to_string() }).collect(),
                source_index: i,
            })
            .collect()
    }

    #[test]
    fn sizes_and_padding() {
        let c = corpus();
        let v = build_vocab(&c, 1);
        let s = LabelScheme::new(["X"]);
        let b = batchify(&c, &v, &s, 2, None).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(b[0].token_ids[0], vec![v.id("w0"), PAD]);
        assert_eq!(b[0].tag_ids[0], vec![1, 0]);
        assert_eq!(b[0].mask[0], vec![true, false]);
        assert!(batchify(&c, &v, &s, 0, None).is_err());
    }

    #[test]
    fn mask_sums_match_lengths() {
        let c = corpus();
        let v = build_vocab(&c, 1);
        let s = LabelScheme::new(["X"]);
        for b in batchify(&c, &v, &s, 2, Some(4)).unwrap() {
            for (len, id) in b.lengths().iter().zip(&b.sentence_ids) {
                assert_eq!(*len, c[*id].len());
            }
        }
    }

    #[test]
    fn seeded_shuffle_is_repeatable() {
        let c = corpus();
        let v = build_vocab(&c, 1);
        let s = LabelScheme::new(["X"]);
        let a = batchify(&c, &v, &s, 2, Some(9)).unwrap();
        let b = batchify(&c, &v, &s, 2, Some(9)).unwrap();
        assert_eq!(a, b);
    }
}
