//! Train only the Gang, fusion and classifier on top of precomputed context
//! vectors. Here the vectors come from an untrained transformer run once.
//!
//!     cargo run --release --example frozen_hero

use hgn::config::RunConfig;
use hgn::data::{build_vocab, gen_splits, LabeledSequence};
use hgn::hero::{encode_context, init_params, FrozenEmbeddings, HeroConfig, HeroVariant};
use hgn::numerics::{ParamStore, Tensor};
use hgn::train::{train, Dataset, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const D: usize = 32;

fn main() -> hgn::Result<()> {
    let splits = gen_splits(800, 5, 3)?;
    let vocab = build_vocab(&splits.train, 1);

    let mut hero = HeroConfig::desk(vocab.len());
    hero.d_model = D;
    hero.n_heads = 2;
    hero.d_ff = 64;
    hero.n_layers = 1;
    let mut store = ParamStore::new();
    init_params(&hero, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;

    let contexts = |sents: &[LabeledSequence]| -> hgn::Result<FrozenEmbeddings> {
        let z: Vec<Tensor> = sents
            .iter()
            .map(|s| encode_context(&hero, &store, &vocab.encode(&s.tokens)).map(|c| c.values))
            .collect::<hgn::Result<_>>()?;
        let named = z.into_iter().enumerate().map(|(i, t)| (format!("sent{i}"), t)).collect();
        FrozenEmbeddings::from_named(named)
    };

    let split = |sents: Vec<LabeledSequence>| -> hgn::Result<Split> {
        let emb = contexts(&sents)?;
        let mut s = Split::new(sents);
        s.attach_frozen(&emb, D)?;
        Ok(s)
    };
    let data = Dataset {
        train: split(splits.train)?,
        dev: Some(split(splits.dev)?),
        test: Some(split(splits.test)?),
    };

    let mut config = RunConfig::default();
    config.hero.variant = HeroVariant::FrozenFile;
    config.hero.d_model = D;
    config.train.lr = 1e-2;
    config.train.epochs = 20;
    let trained = train(&config, &data)?;
    println!("trainable parameters {}", trained.record.n_params);
    println!("test F1 {:.4}", trained.record.test.as_ref().map(|m| m.f1).unwrap_or(0.0));
    Ok(())
}
