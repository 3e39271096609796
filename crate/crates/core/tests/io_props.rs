mod common;

use std::path::PathBuf;

use hgn::config::RunConfig;
use hgn::data::{batchify, build_vocab, parse_conll, write_conll, LabeledSequence};
use hgn::fusion::FusionMode;
use hgn::gang::CellKind;
use hgn::hero::{HeroVariant, PositionMode};
use hgn::model::{Checkpoint, Model, ModelConfig, ModelInput};
use hgn::tagger::{bio_decode, entity_prf, spans_to_tags, LabelScheme};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{perturb_spans, random_spans};

const TYPES: [&str; 3] = ["PER", "LOC", "ORG"];

fn corpus(seed: u64, sentences: usize) -> Vec<LabeledSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|i| {
            let n = rng.gen_range(1..8);
            let spans = random_spans(&mut rng, n, &TYPES);
            LabeledSequence {
                tokens: (0..n).map(|_| format!("w{}", rng.gen_range(0..30))).collect(),
                tags: spans_to_tags(&spans, n).unwrap(),
                source_index: i,
            }
        })
        .collect()
}

fn run_config() -> impl Strategy<Value = RunConfig> {
    (
        (
            prop::sample::select(vec![HeroVariant::TrainableTransformer, HeroVariant::FrozenFile]),
            prop::sample::select(vec![(8usize, 2usize), (16, 4), (64, 4)]),
            0usize..4,
            prop::sample::select(vec![PositionMode::Sinusoidal, PositionMode::Learned, PositionMode::None]),
            prop::option::of("[a-z]{1,8}/[a-z]{1,8}\\.hgn"),
        ),
        (
            prop::sample::subsequence(vec![1usize, 3, 5, 7, 9, 11], 0..=4),
            prop::sample::select(CellKind::ALL.to_vec()),
            prop::sample::select(FusionMode::ALL.to_vec()),
            any::<bool>(),
            any::<bool>(),
        ),
        (1e-6f64..1.0, 1usize..128, 1usize..500, any::<u64>(), any::<bool>(), 0.0f64..10.0, 0.0f64..0.9),
        (prop::option::of("[a-z]{1,10}\\.txt"), "[a-z]{1,6}(/[a-z]{1,6})?", 1usize..5),
    )
        .prop_map(|(h, g, t, p)| {
            let mut c = RunConfig::default();
            c.hero.variant = h.0;
            c.hero.d_model = h.1 .0;
            c.hero.n_heads = h.1 .1;
            c.hero.n_layers = h.2;
            c.hero.position_mode = h.3;
            c.hero.frozen_train = h.4.map(PathBuf::from);
            c.windows = g.0;
            c.cell = g.1;
            c.fusion = g.2;
            c.fusion_scale_scores = g.3;
            c.fusion_mlp_tanh = g.4;
            c.train.lr = t.0;
            c.train.batch_size = t.1;
            c.train.epochs = t.2;
            c.train.seed = t.3;
            c.train.train_on_dev = t.4;
            c.train.clip_norm = t.5;
            c.train.dropout = t.6;
            c.data_train = p.0.map(PathBuf::from);
            c.output_dir = PathBuf::from(p.1);
            c.min_count = p.2;
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bio_round_trip(n in 1usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spans = random_spans(&mut rng, n, &TYPES);
        prop_assert_eq!(bio_decode(&spans_to_tags(&spans, n).unwrap()).unwrap(), spans);
    }

    #[test]
    fn prf_swap_exchanges_precision_and_recall(sentences in 0usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for _ in 0..sentences {
            let n = rng.gen_range(1..12);
            let g = random_spans(&mut rng, n, &TYPES);
            pred.push(perturb_spans(&mut rng, &g, n, &TYPES));
            gold.push(g);
        }
        let a = entity_prf(&gold, &pred).unwrap();
        let b = entity_prf(&pred, &gold).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert_eq!(a.f1, b.f1);
    }

    #[test]
    fn f1_ignores_sentence_order(sentences in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        for _ in 0..sentences {
            let n = rng.gen_range(1..12);
            let g = random_spans(&mut rng, n, &TYPES);
            let p = perturb_spans(&mut rng, &g, n, &TYPES);
            pairs.push((g, p));
        }
        let (g1, p1): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        pairs.shuffle(&mut rng);
        let (g2, p2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        prop_assert_eq!(entity_prf(&g1, &p1).unwrap(), entity_prf(&g2, &p2).unwrap());
    }

    #[test]
    fn conll_write_then_read_is_identity(sentences in 0usize..12, seed in any::<u64>()) {
        let c = corpus(seed, sentences);
        prop_assert_eq!(parse_conll(&write_conll(&c), "mem").unwrap(), c);
    }

    #[test]
    fn batchify_preserves_the_sentence_multiset(sentences in 1usize..40, batch in 1usize..9, shuffle in prop::option::of(any::<u64>()), seed in any::<u64>()) {
        let c = corpus(seed, sentences);
        let vocab = build_vocab(&c, 1);
        let scheme = LabelScheme::new(TYPES);
        let batches = batchify(&c, &vocab, &scheme, batch, shuffle).unwrap();
        let mut seen: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
        for b in &batches {
            prop_assert!(b.len() <= batch);
            for r in 0..b.len() {
                let n = b.lengths()[r];
                prop_assert!(b.mask[r][..n].iter().all(|&m| m) && b.mask[r][n..].iter().all(|&m| !m));
                seen.push((b.sentence_ids[r], b.token_ids[r][..n].to_vec(), b.tag_ids[r][..n].to_vec()));
            }
        }
        seen.sort();
        let mut want: Vec<(usize, Vec<usize>, Vec<usize>)> = c
            .iter()
            .map(|s| {
                let tags = s.tags.iter().map(|t| scheme.index_of(t).unwrap()).collect();
                (s.source_index, vocab.encode(&s.tokens), tags)
            })
            .collect();
        want.sort();
        prop_assert_eq!(seen, want);
    }

    #[test]
    fn config_write_then_parse_is_identity(c in run_config()) {
        prop_assume!(c.validate().is_ok());
        prop_assert_eq!(RunConfig::parse(&c.write()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoint_round_trip_preserves_predictions(
        windows in prop::sample::subsequence(vec![1usize, 3, 5], 0..=2),
        cell in prop::sample::select(CellKind::ALL.to_vec()),
        fusion in prop::sample::select(FusionMode::ALL.to_vec()),
        seed in any::<u64>(),
    ) {
        let mut run = RunConfig::default();
        run.hero.d_model = 8;
        run.hero.n_heads = 2;
        run.hero.d_ff = 8;
        run.hero.n_layers = 1;
        run.windows = windows;
        run.cell = cell;
        run.fusion = fusion;
        let scheme = LabelScheme::new(TYPES);
        let model = Model::new(ModelConfig::from_run(&run, 12, scheme.len()), seed).unwrap();
        let vocab = hgn::data::Vocab::from_words((0..12).map(|i| format!("w{i}")).collect());
        let ck = Checkpoint { model, vocab, scheme };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hgn");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lens: Vec<usize> = (0..3).map(|_| rng.gen_range(1..7)).collect();
        let ids: Vec<usize> = (0..lens.iter().sum()).map(|_| rng.gen_range(0..12)).collect();
        let input = ModelInput::Tokens(ids);
        prop_assert_eq!(
            ck.model.probabilities(&input, &lens).unwrap(),
            back.model.probabilities(&input, &lens).unwrap()
        );
    }
}
