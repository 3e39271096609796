//! Training loop, evaluation and the run record.

use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{batchify, build_vocab, read_conll, LabeledSequence, Vocab};
use crate::error::{HgnError, Result};
use crate::hero::FrozenEmbeddings;
use crate::model::{Checkpoint, Model, ModelConfig, ModelInput};
use crate::numerics::{Adam, AdamConfig, Graph, Tensor};
use crate::tagger::{bio_decode, entity_prf, LabelScheme, Metrics};

const EVAL_BATCH: usize = 64;

/// Sentences plus, for a frozen Hero, each sentence's context rows.
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub sentences: Vec<LabeledSequence>,
    pub contexts: Option<Vec<Tensor>>,
}

impl Split {
    pub fn new(sentences: Vec<LabeledSequence>) -> Self {
        Split {
            sentences,
            contexts: None,
        }
    }

    /// Reads a CoNLL file and, if given, the frozen embeddings for it.
    pub fn load(path: &Path, frozen: Option<&Path>, d_model: usize) -> Result<Self> {
        let sentences = read_conll(path)?;
        let mut split = Split::new(sentences);
        if let Some(f) = frozen {
            split.attach_frozen(&FrozenEmbeddings::load(f)?, d_model)?;
        }
        Ok(split)
    }

    pub fn attach_frozen(&mut self, emb: &FrozenEmbeddings, d_model: usize) -> Result<()> {
        let ctx = self
            .sentences
            .iter()
            .map(|s| emb.context(s.source_index, s.len(), d_model).map(|c| c.values))
            .collect::<Result<Vec<_>>>()?;
        self.contexts = Some(ctx);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    fn extend(&mut self, other: &Split) {
        self.sentences.extend(other.sentences.iter().cloned());
        if let (Some(a), Some(b)) = (&mut self.contexts, &other.contexts) {
            a.extend(b.iter().cloned());
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Split,
    pub dev: Option<Split>,
    pub test: Option<Split>,
}

impl Dataset {
    /// Loads every split named in `config`; a training file is required.
    pub fn load(config: &RunConfig) -> Result<Self> {
        let h = &config.hero;
        let frozen = h.variant == crate::hero::HeroVariant::FrozenFile;
        let pick = |p: &Option<std::path::PathBuf>, name: &str| -> Result<Option<std::path::PathBuf>> {
            match (frozen, p) {
                (true, None) => Err(HgnError::Config(format!("frozen Hero needs hero.frozen.{name}"))),
                (true, Some(p)) => Ok(Some(p.clone())),
                (false, _) => Ok(None),
            }
        };
        let train_path = config
            .data_train
            .as_ref()
            .ok_or_else(|| HgnError::Config("data.train is required".into()))?;
        let train = Split::load(train_path, pick(&h.frozen_train, "train")?.as_deref(), h.d_model)?;
        let dev = match &config.data_dev {
            Some(p) => Some(Split::load(p, pick(&h.frozen_dev, "dev")?.as_deref(), h.d_model)?),
            None => None,
        };
        let test = match &config.data_test {
            Some(p) => Some(Split::load(p, pick(&h.frozen_test, "test")?.as_deref(), h.d_model)?),
            None => None,
        };
        Ok(Dataset { train, dev, test })
    }

    fn all_tags(&self) -> impl Iterator<Item = &str> {
        [Some(&self.train), self.dev.as_ref(), self.test.as_ref()]
            .into_iter()
            .flatten()
            .flat_map(|s| s.sentences.iter().flat_map(|x| x.tags.iter().map(String::as_str)))
    }
}

/// Flattened model input for the given sentences of `split`.
pub fn batch_input(model: &Model, vocab: &Vocab, split: &Split, idx: &[usize]) -> Result<(ModelInput, Vec<usize>)> {
    let lens: Vec<usize> = idx.iter().map(|&i| split.sentences[i].len()).collect();
    let input = if model.is_frozen() {
        let ctx = split
            .contexts
            .as_ref()
            .ok_or_else(|| HgnError::InvalidArgument("frozen Hero needs embeddings for this split".into()))?;
        let d = model.config.hero.d_model;
        let mut data = Vec::with_capacity(lens.iter().sum::<usize>() * d);
        for &i in idx {
            data.extend_from_slice(ctx[i].data());
        }
        ModelInput::Context(Tensor::new(vec![lens.iter().sum(), d], data)?)
    } else {
        let ids = idx.iter().flat_map(|&i| vocab.encode(&split.sentences[i].tokens)).collect();
        ModelInput::Tokens(ids)
    };
    Ok((input, lens))
}

/// Predicted tag strings for every sentence of `split`, in order.
pub fn predict_split(model: &Model, vocab: &Vocab, scheme: &LabelScheme, split: &Split) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::with_capacity(split.len());
    let order: Vec<usize> = (0..split.len()).collect();
    for chunk in order.chunks(EVAL_BATCH) {
        let (input, lens) = batch_input(model, vocab, split, chunk)?;
        let ids = model.predict(&input, &lens)?;
        let mut at = 0;
        for n in lens {
            out.push(ids[at..at + n].iter().map(|&t| scheme.tag(t).to_string()).collect());
            at += n;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub token_accuracy: f64,
}

pub fn evaluate(model: &Model, vocab: &Vocab, scheme: &LabelScheme, split: &Split) -> Result<Evaluation> {
    let predicted = predict_split(model, vocab, scheme, split)?;
    let mut gold = Vec::with_capacity(split.len());
    let mut pred = Vec::with_capacity(split.len());
    let (mut right, mut total) = (0usize, 0usize);
    for (s, p) in split.sentences.iter().zip(&predicted) {
        right += s.tags.iter().zip(p).filter(|(a, b)| a == b).count();
        total += s.len();
        gold.push(bio_decode(&s.tags)?);
        pred.push(bio_decode(p)?);
    }
    Ok(Evaluation {
        metrics: entity_prf(&gold, &pred)?,
        token_accuracy: if total == 0 { 0.0 } else { right as f64 / total as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Token-weighted mean NLL over the epoch's batches.
    pub train_loss: f64,
    pub max_grad_norm: f64,
    pub clipped_batches: usize,
    pub dev: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Clipping {
    pub enabled: bool,
    pub max_norm: f64,
    pub clipped_batches: usize,
    pub total_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub model: ModelConfig,
    pub n_params: usize,
    pub tags: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept: best dev F1, or the last epoch without dev data.
    pub best_epoch: usize,
    pub selection: String,
    pub clipping: Clipping,
    pub train: Metrics,
    pub train_token_accuracy: f64,
    pub dev: Option<Metrics>,
    pub test: Option<Metrics>,
    pub checkpoint: Option<String>,
    /// Kept out of the JSON so that records of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

pub struct Trained {
    pub checkpoint: Checkpoint,
    pub record: RunRecord,
}

fn epoch_seed(seed: u64, epoch: usize, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((epoch as u64) << 8)
        .wrapping_add(stream)
}

/// Trains from scratch on `data` and returns the best-selected model with its record.
pub fn train(config: &RunConfig, data: &Dataset) -> Result<Trained> {
    config.validate()?;
    let started = Instant::now();
    if data.train.is_empty() {
        return Err(HgnError::InvalidArgument("training split is empty".into()));
    }
    let mut train_split = data.train.clone();
    if config.train.train_on_dev {
        if let Some(dev) = &data.dev {
            train_split.extend(dev);
        }
    }
    // Renumber so batches can refer to positions in the merged split.
    for (i, s) in train_split.sentences.iter_mut().enumerate() {
        s.source_index = i;
    }
    let scheme = LabelScheme::from_tags(data.all_tags())?;
    let vocab = build_vocab(&train_split.sentences, config.min_count);
    let model_config = ModelConfig::from_run(config, vocab.len(), scheme.len());
    let mut model = Model::new(model_config.clone(), config.train.seed)?;
    let n_params = model.store.num_coords();
    info!(
        "training {} params on {} sentences, {} tags",
        n_params,
        train_split.len(),
        scheme.len()
    );

    let t = &config.train;
    let mut adam = Adam::new(&model.store, AdamConfig::with_lr(t.lr));
    let mut epochs = Vec::with_capacity(t.epochs);
    let mut best: Option<(f64, usize, Vec<(String, Tensor)>)> = None;
    let mut clipped_total = 0;
    let mut batches_total = 0;
    for epoch in 1..=t.epochs {
        let lr = t.lr / (1.0 + t.lr_decay * (epoch - 1) as f64);
        adam.set_lr(lr);
        let batches = batchify(
            &train_split.sentences,
            &vocab,
            &scheme,
            t.batch_size,
            Some(epoch_seed(t.seed, epoch, 1)),
        )?;
        let mut drop_rng = ChaCha8Rng::seed_from_u64(epoch_seed(t.seed, epoch, 2));
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        let (mut max_norm, mut clipped) = (0.0f64, 0usize);
        for batch in &batches {
            let (input, lens) = batch_input(&model, &vocab, &train_split, &batch.sentence_ids)?;
            let gold = batch.flat_tags();
            let mut g = Graph::new();
            let b = model.store.bind(&mut g);
            let dropout = (t.dropout > 0.0).then_some((t.dropout, &mut drop_rng));
            let f = model.forward(&mut g, &b, &input, &lens, dropout)?;
            let mask = vec![true; gold.len()];
            let loss = g.nll_loss(f.probs, &gold, &mask)?;
            let lv = g.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(HgnError::NonFinite(format!(
                    "training loss {lv} at epoch {epoch}, batch of sentences {:?}",
                    batch.sentence_ids
                )));
            }
            g.backward(loss)?;
            model.store.zero_grads();
            model.store.accumulate_grads(&g, &b);
            let norm = if t.clip_norm > 0.0 {
                model.store.clip_grad_norm(t.clip_norm)
            } else {
                model.store.grad_norm()
            };
            if !norm.is_finite() {
                return Err(HgnError::NonFinite(format!("gradient norm {norm} at epoch {epoch}")));
            }
            if t.clip_norm > 0.0 && norm > t.clip_norm {
                clipped += 1;
            }
            max_norm = max_norm.max(norm);
            adam.step(&mut model.store);
            if t.weight_decay > 0.0 {
                let shrink = 1.0 - lr * t.weight_decay;
                for v in model.store.values_mut() {
                    v.data_mut().iter_mut().for_each(|x| *x *= shrink);
                }
            }
            loss_sum += lv * gold.len() as f64;
            tokens += gold.len();
        }
        clipped_total += clipped;
        batches_total += batches.len();
        let dev = match &data.dev {
            Some(d) => Some(evaluate(&model, &vocab, &scheme, d)?.metrics),
            None => None,
        };
        let train_loss = loss_sum / tokens as f64;
        info!(
            "epoch {epoch}: loss {train_loss:.6} dev F1 {}",
            dev.as_ref().map_or("-".to_string(), |m| format!("{:.4}", m.f1))
        );
        debug!("epoch {epoch}: max grad norm {max_norm:.4}, clipped {clipped}/{}", batches.len());
        let score = dev.as_ref().map_or(f64::NEG_INFINITY, |m| m.f1);
        let better = match &best {
            None => true,
            Some((s, _, _)) => data.dev.is_none() || score > *s,
        };
        if better {
            best = Some((score, epoch, model.store.to_named()));
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            max_grad_norm: max_norm,
            clipped_batches: clipped,
            dev,
        });
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.store.load_named(params)?;

    let train_eval = evaluate(&model, &vocab, &scheme, &train_split)?;
    let dev = match &data.dev {
        Some(d) => Some(evaluate(&model, &vocab, &scheme, d)?.metrics),
        None => None,
    };
    let test = match &data.test {
        Some(d) => Some(evaluate(&model, &vocab, &scheme, d)?.metrics),
        None => None,
    };
    let record = RunRecord {
        config: config.clone(),
        model: model_config,
        n_params,
        tags: scheme.tags().to_vec(),
        epochs,
        best_epoch,
        selection: if data.dev.is_some() { "best_dev_f1" } else { "last_epoch" }.into(),
        clipping: Clipping {
            enabled: t.clip_norm > 0.0,
            max_norm: t.clip_norm,
            clipped_batches: clipped_total,
            total_batches: batches_total,
        },
        train: train_eval.metrics,
        train_token_accuracy: train_eval.token_accuracy,
        dev,
        test,
        checkpoint: None,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(Trained {
        checkpoint: Checkpoint { model, vocab, scheme },
        record,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    fn tiny_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.hero.d_model = 8;
        c.hero.n_heads = 2;
        c.hero.d_ff = 16;
        c.hero.n_layers = 1;
        c.windows = vec![3];
        c.train.epochs = 2;
        c.train.batch_size = 4;
        c
    }

    fn data() -> Dataset {
        Dataset {
            train: Split::new(gen_synthetic(12, 1, 3).unwrap()),
            dev: Some(Split::new(gen_synthetic(4, 2, 3).unwrap())),
            test: None,
        }
    }

    #[test]
    fn records_consecutive_epochs() {
        let t = train(&tiny_config(), &data()).unwrap();
        let e: Vec<usize> = t.record.epochs.iter().map(|e| e.epoch).collect();
        assert_eq!(e, vec![1, 2]);
        assert!(t.record.epochs.iter().all(|e| e.dev.is_some() && e.train_loss.is_finite()));
    }

    #[test]
    fn same_seed_same_losses() {
        let a = train(&tiny_config(), &data()).unwrap().record;
        let b = train(&tiny_config(), &data()).unwrap().record;
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn recorded_train_metrics_match_reevaluation() {
        let t = train(&tiny_config(), &data()).unwrap();
        let ck = &t.checkpoint;
        let again = evaluate(&ck.model, &ck.vocab, &ck.scheme, &data().train).unwrap();
        assert_eq!(again.metrics, t.record.train);
    }

    #[test]
    fn dropout_and_decay_run() {
        let mut c = tiny_config();
        c.train.dropout = 0.2;
        c.train.weight_decay = 0.01;
        c.train.lr_decay = 0.5;
        let r = train(&c, &data()).unwrap().record;
        assert!(r.epochs[1].lr < r.epochs[0].lr);
    }
}
