//! Global context encoder.
//!
//! Either a small trainable post-LN transformer encoder or a loader for
//! precomputed per-token vectors (standing in for a frozen pretrained model).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HgnError, Result};
use crate::numerics::params::{uniform, xavier};
use crate::numerics::{container, Bindings, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    Sinusoidal,
    Learned,
    /// No position signal at all. Used to test permutation equivariance.
    None,
}

impl fmt::Display for PositionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionMode::Sinusoidal => "sinusoidal",
            PositionMode::Learned => "learned",
            PositionMode::None => "none",
        })
    }
}

impl FromStr for PositionMode {
    type Err = HgnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoidal" => Ok(PositionMode::Sinusoidal),
            "learned" => Ok(PositionMode::Learned),
            "none" => Ok(PositionMode::None),
            other => Err(HgnError::Config(format!("unknown position mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeroVariant {
    TrainableTransformer,
    FrozenFile,
}

impl fmt::Display for HeroVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeroVariant::TrainableTransformer => "trainable_transformer",
            HeroVariant::FrozenFile => "frozen_file",
        })
    }
}

impl FromStr for HeroVariant {
    type Err = HgnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trainable_transformer" => Ok(HeroVariant::TrainableTransformer),
            "frozen_file" => Ok(HeroVariant::FrozenFile),
            other => Err(HgnError::Config(format!("unknown hero variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeroConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub position_mode: PositionMode,
    pub variant: HeroVariant,
    pub ln_eps: f64,
}

impl HeroConfig {
    /// Desk-scale defaults: d=64, 2 layers, 4 heads, feed-forward width 128.
    pub fn desk(vocab_size: usize) -> Self {
        HeroConfig {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_len: 512,
            position_mode: PositionMode::Sinusoidal,
            variant: HeroVariant::TrainableTransformer,
            ln_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(HgnError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(HgnError::Config(format!("d_model {} must be even", self.d_model)));
        }
        if self.variant == HeroVariant::TrainableTransformer && (self.vocab_size < 2 || self.d_ff == 0) {
            return Err(HgnError::Config("vocab_size must be >= 2 and d_ff positive".into()));
        }
        if self.max_len == 0 {
            return Err(HgnError::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

/// Hero output: one `d_model` row per token, in sentence order.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextMatrix {
    pub values: Tensor,
}

impl ContextMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(HgnError::InvalidArgument(format!(
                "context matrix must be N x d, got {:?}",
                values.shape()
            )));
        }
        Ok(ContextMatrix { values })
    }

    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }
}

/// `pe[pos][2i] = sin(pos / 10000^(2i/d))`, `pe[pos][2i+1] = cos(...)`.
pub fn sinusoidal_table(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, d]);
    for pos in 0..len {
        let row = t.row_mut(pos);
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            row[i] = angle.sin();
            if i + 1 < d {
                row[i + 1] = angle.cos();
            }
        }
    }
    t
}

fn layer_name(layer: usize, part: &str) -> String {
    format!("hero.l{layer}.{part}")
}

pub fn init_params(cfg: &HeroConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
    cfg.validate()?;
    if cfg.variant == HeroVariant::FrozenFile {
        return Ok(());
    }
    let d = cfg.d_model;
    store.insert("hero.embed", uniform(rng, &[cfg.vocab_size, d], 1.0))?;
    if cfg.position_mode == PositionMode::Learned {
        store.insert("hero.pos", uniform(rng, &[cfg.max_len, d], 0.5))?;
    }
    for l in 0..cfg.n_layers {
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert(layer_name(l, &format!("attn.{w}")), xavier(rng, d, d))?;
        }
        for b in ["bq", "bk", "bv", "bo"] {
            store.insert(layer_name(l, &format!("attn.{b}")), Tensor::zeros(&[d]))?;
        }
        store.insert(layer_name(l, "ln1.gain"), Tensor::ones(&[d]))?;
        store.insert(layer_name(l, "ln1.bias"), Tensor::zeros(&[d]))?;
        store.insert(layer_name(l, "ff.w1"), xavier(rng, d, cfg.d_ff))?;
        store.insert(layer_name(l, "ff.b1"), Tensor::zeros(&[cfg.d_ff]))?;
        store.insert(layer_name(l, "ff.w2"), xavier(rng, cfg.d_ff, d))?;
        store.insert(layer_name(l, "ff.b2"), Tensor::zeros(&[d]))?;
        store.insert(layer_name(l, "ln2.gain"), Tensor::ones(&[d]))?;
        store.insert(layer_name(l, "ln2.bias"), Tensor::zeros(&[d]))?;
    }
    Ok(())
}

/// Word embedding plus position encoding for one token sequence.
pub fn embed_tokens(g: &mut Graph, cfg: &HeroConfig, params: &Bindings, ids: &[usize]) -> Result<Var> {
    embed_segments(g, cfg, params, ids, &[ids.len()])
}

/// Embeds several sentences laid end to end; positions restart per sentence.
fn embed_segments(g: &mut Graph, cfg: &HeroConfig, params: &Bindings, ids: &[usize], lens: &[usize]) -> Result<Var> {
    if ids.is_empty() {
        return Err(HgnError::InvalidArgument("cannot embed an empty sentence".into()));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(HgnError::OutOfRange {
            what: "token id",
            index: bad,
            limit: cfg.vocab_size,
        });
    }
    if let Some(&long) = lens.iter().find(|&&n| n > cfg.max_len) {
        return Err(HgnError::OutOfRange {
            what: "sentence length",
            index: long,
            limit: cfg.max_len,
        });
    }
    let table = params.var("hero.embed")?;
    let words = g.gather_rows(table, ids)?;
    let positions: Vec<usize> = lens.iter().flat_map(|&n| 0..n).collect();
    match cfg.position_mode {
        PositionMode::None => Ok(words),
        PositionMode::Sinusoidal => {
            let longest = lens.iter().copied().max().unwrap_or(1);
            let pe = sinusoidal_table(longest, cfg.d_model);
            let mut data = Vec::with_capacity(positions.len() * cfg.d_model);
            for &p in &positions {
                data.extend_from_slice(pe.row(p));
            }
            let pos = g.constant(Tensor::new(vec![positions.len(), cfg.d_model], data)?);
            g.add(words, pos)
        }
        PositionMode::Learned => {
            let table = params.var("hero.pos")?;
            let pos = g.gather_rows(table, &positions)?;
            g.add(words, pos)
        }
    }
}

fn affine(g: &mut Graph, params: &Bindings, x: Var, w: &str, b: &str) -> Result<Var> {
    let wv = params.var(w)?;
    let bv = params.var(b)?;
    let y = g.matmul(x, wv)?;
    g.add_bias(y, bv)
}

/// Output of one encoder block plus the attention weights of every head
/// (one `N x N` matrix per head per sentence).
pub struct BlockOutput {
    pub output: Var,
    pub attention: Vec<Var>,
}

/// One post-LN encoder block over a single sequence. `mask[j] == false` removes
/// token `j` from every query's key set.
pub fn self_attention_block(
    g: &mut Graph,
    cfg: &HeroConfig,
    params: &Bindings,
    layer: usize,
    x: Var,
    mask: &[bool],
) -> Result<BlockOutput> {
    let n = g.shape(x)[0];
    if mask.len() != n {
        return Err(HgnError::shape("self_attention_block", g.shape(x), &[mask.len()]));
    }
    block(g, cfg, params, layer, x, &[n], Some(mask))
}

fn block(
    g: &mut Graph,
    cfg: &HeroConfig,
    params: &Bindings,
    layer: usize,
    x: Var,
    lens: &[usize],
    mask: Option<&[bool]>,
) -> Result<BlockOutput> {
    let q = affine(g, params, x, &layer_name(layer, "attn.wq"), &layer_name(layer, "attn.bq"))?;
    let k = affine(g, params, x, &layer_name(layer, "attn.wk"), &layer_name(layer, "attn.bk"))?;
    let v = affine(g, params, x, &layer_name(layer, "attn.wv"), &layer_name(layer, "attn.bv"))?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut attention = Vec::new();
    let mut sentences = Vec::with_capacity(lens.len());
    let mut start = 0;
    for &len in lens {
        let (qs, ks, vs) = if lens.len() == 1 {
            (q, k, v)
        } else {
            (
                g.slice_rows(q, start, len)?,
                g.slice_rows(k, start, len)?,
                g.slice_rows(v, start, len)?,
            )
        };
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = g.slice_cols(qs, h * dh, dh)?;
            let kh = g.slice_cols(ks, h * dh, dh)?;
            let vh = g.slice_cols(vs, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let raw = g.matmul(qh, kt)?;
            let scores = g.scale(raw, scale);
            let weights = match mask {
                Some(m) => g.masked_softmax_rows(scores, m)?,
                None => g.softmax_rows(scores)?,
            };
            attention.push(weights);
            heads.push(g.matmul(weights, vh)?);
        }
        sentences.push(g.concat_cols(&heads)?);
        start += len;
    }
    let mixed = if sentences.len() == 1 {
        sentences[0]
    } else {
        g.concat_rows(&sentences)?
    };
    let attn_out = affine(g, params, mixed, &layer_name(layer, "attn.wo"), &layer_name(layer, "attn.bo"))?;
    let res1 = g.add(x, attn_out)?;
    let norm1 = g.layer_norm_rows(
        res1,
        params.var(&layer_name(layer, "ln1.gain"))?,
        params.var(&layer_name(layer, "ln1.bias"))?,
        cfg.ln_eps,
    )?;
    let hidden = affine(g, params, norm1, &layer_name(layer, "ff.w1"), &layer_name(layer, "ff.b1"))?;
    let hidden = g.relu(hidden);
    let ff = affine(g, params, hidden, &layer_name(layer, "ff.w2"), &layer_name(layer, "ff.b2"))?;
    let res2 = g.add(norm1, ff)?;
    let output = g.layer_norm_rows(
        res2,
        params.var(&layer_name(layer, "ln2.gain"))?,
        params.var(&layer_name(layer, "ln2.bias"))?,
        cfg.ln_eps,
    )?;
    Ok(BlockOutput { output, attention })
}

/// Encodes one sentence: embedding followed by `n_layers` blocks.
pub fn encode(g: &mut Graph, cfg: &HeroConfig, params: &Bindings, ids: &[usize]) -> Result<Var> {
    encode_segments(g, cfg, params, ids, &[ids.len()])
}

/// Encodes sentences laid end to end as one `sum(lens) x d` matrix. Attention
/// never crosses a sentence boundary, so each block of rows equals what
/// [`encode`] produces for that sentence alone.
pub fn encode_segments(g: &mut Graph, cfg: &HeroConfig, params: &Bindings, ids: &[usize], lens: &[usize]) -> Result<Var> {
    if lens.iter().sum::<usize>() != ids.len() || lens.contains(&0) {
        return Err(HgnError::InvalidArgument(format!(
            "segment lengths {lens:?} do not partition {} tokens",
            ids.len()
        )));
    }
    let mut x = embed_segments(g, cfg, params, ids, lens)?;
    for layer in 0..cfg.n_layers {
        x = block(g, cfg, params, layer, x, lens, None)?.output;
    }
    Ok(x)
}

/// Forward-only convenience: runs [`encode`] on a scratch graph.
pub fn encode_context(cfg: &HeroConfig, store: &ParamStore, ids: &[usize]) -> Result<ContextMatrix> {
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let z = encode(&mut g, cfg, &b, ids)?;
    ContextMatrix::new(g.value(z).clone())
}

/// Per-sentence context vectors loaded from a tensor container whose entries
/// are named `sent<i>`, `i` being the sentence's position in its dataset file.
#[derive(Clone, Debug, Default)]
pub struct FrozenEmbeddings {
    by_sentence: HashMap<usize, Tensor>,
}

impl FrozenEmbeddings {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_named(container::read_file(path)?)
    }

    pub fn from_named(named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut by_sentence = HashMap::new();
        for (name, t) in named {
            let idx: usize = name
                .strip_prefix("sent")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| HgnError::Checkpoint(format!("unexpected tensor name {name:?}, want sent<i>")))?;
            if t.rank() != 2 {
                return Err(HgnError::Checkpoint(format!("{name} must be N x d, got {:?}", t.shape())));
            }
            by_sentence.insert(idx, t);
        }
        Ok(FrozenEmbeddings { by_sentence })
    }

    pub fn save(path: &Path, sentences: &[Tensor]) -> Result<()> {
        let named: Vec<(String, Tensor)> = sentences
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("sent{i}"), t.clone()))
            .collect();
        container::write_file(path, &named)
    }

    pub fn len(&self) -> usize {
        self.by_sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_sentence.is_empty()
    }

    /// Stored vectors for sentence `index`, checked against its token count and `d_model`.
    pub fn context(&self, index: usize, n_tokens: usize, d_model: usize) -> Result<ContextMatrix> {
        let t = self
            .by_sentence
            .get(&index)
            .ok_or_else(|| HgnError::InvalidArgument(format!("no frozen embeddings for sentence {index}")))?;
        if t.shape()[1] != d_model {
            return Err(HgnError::shape("frozen embedding dim", &[d_model], &t.shape()[1..]));
        }
        if t.shape()[0] != n_tokens {
            return Err(HgnError::shape("frozen embedding rows", &[n_tokens], &t.shape()[..1]));
        }
        ContextMatrix::new(t.clone())
    }
}

/// Loads the stored context for one sentence straight from a file.
pub fn load_frozen_embeddings(path: &Path, sentence_index: usize, n_tokens: usize, d_model: usize) -> Result<ContextMatrix> {
    FrozenEmbeddings::load(path)?.context(sentence_index, n_tokens, d_model)
}
