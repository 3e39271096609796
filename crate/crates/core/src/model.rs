//! Full tagger: Hero, optional Gang, fusion and classifier, plus checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Vocab;
use crate::error::{HgnError, Result};
use crate::fusion::{self, FusionConfig, FusionMode};
use crate::gang::{self, CellConfig, CellKind, WindowSpec};
use crate::hero::{self, HeroConfig, HeroVariant};
use crate::numerics::{container, Bindings, Graph, ParamStore, Tensor, Var};
use crate::tagger::{self, LabelScheme};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hero: HeroConfig,
    /// Empty means no Gang: the classifier reads `z` directly.
    pub windows: Vec<usize>,
    pub cell: CellKind,
    pub fusion: FusionMode,
    pub scale_scores: bool,
    pub mlp_tanh: bool,
    pub n_tags: usize,
}

impl ModelConfig {
    pub fn from_run(run: &RunConfig, vocab_size: usize, n_tags: usize) -> Self {
        let h = &run.hero;
        ModelConfig {
            hero: HeroConfig {
                vocab_size,
                d_model: h.d_model,
                n_layers: h.n_layers,
                n_heads: h.n_heads,
                d_ff: h.d_ff,
                max_len: h.max_len,
                position_mode: h.position_mode,
                variant: h.variant,
                ln_eps: 1e-5,
            },
            windows: run.windows.clone(),
            cell: run.cell,
            fusion: run.fusion,
            scale_scores: run.fusion_scale_scores,
            mlp_tanh: run.fusion_mlp_tanh,
            n_tags,
        }
    }
}

/// What the Hero reads: token ids, or precomputed context rows for a frozen Hero.
#[derive(Clone, Debug)]
pub enum ModelInput {
    Tokens(Vec<usize>),
    Context(Tensor),
}

impl ModelInput {
    pub fn rows(&self) -> usize {
        match self {
            ModelInput::Tokens(ids) => ids.len(),
            ModelInput::Context(t) => t.rows(),
        }
    }
}

/// Graph handles for one forward pass over a flattened batch.
#[derive(Clone, Debug)]
pub struct Forward {
    pub z: Var,
    pub local: Vec<Var>,
    pub s: Var,
    pub probs: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    windows: Option<WindowSpec>,
    cell: Option<CellConfig>,
    fusion: FusionConfig,
}

impl Model {
    /// Fresh parameters drawn from a ChaCha stream seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.hero.validate()?;
        if config.n_tags == 0 {
            return Err(HgnError::Config("label scheme is empty".into()));
        }
        let d = config.hero.d_model;
        let windows = if config.windows.is_empty() {
            None
        } else {
            Some(WindowSpec::new(config.windows.clone())?)
        };
        let cell = windows.as_ref().map(|_| CellConfig::new(config.cell, d)).transpose()?;
        let mut fusion = FusionConfig::new(config.fusion, d, windows.as_ref().map_or(0, WindowSpec::len));
        fusion.scale_scores = config.scale_scores;
        fusion.mlp_tanh = config.mlp_tanh;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        hero::init_params(&config.hero, &mut store, &mut rng)?;
        if let (Some(w), Some(c)) = (&windows, &cell) {
            gang::init_params(w, c, &mut store, &mut rng)?;
        }
        fusion::init_params(&fusion, &mut store, &mut rng)?;
        tagger::init_params(fusion.output_dim(), config.n_tags, &mut store, &mut rng)?;
        Ok(Model {
            config,
            store,
            windows,
            cell,
            fusion,
        })
    }

    pub fn is_frozen(&self) -> bool {
        self.config.hero.variant == HeroVariant::FrozenFile
    }

    /// Hero, Gang, fusion and classifier over sentences laid end to end.
    /// With `dropout = Some((p, rng))` an inverted-dropout mask is applied to the
    /// fused features.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &Bindings,
        input: &ModelInput,
        lens: &[usize],
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<Forward> {
        let z = match input {
            ModelInput::Tokens(ids) => {
                if self.is_frozen() {
                    return Err(HgnError::InvalidArgument("frozen Hero needs context rows, not token ids".into()));
                }
                hero::encode_segments(g, &self.config.hero, params, ids, lens)?
            }
            ModelInput::Context(t) => {
                if !self.is_frozen() {
                    return Err(HgnError::InvalidArgument("trainable Hero needs token ids".into()));
                }
                if t.rank() != 2 || t.cols() != self.config.hero.d_model || t.rows() != lens.iter().sum::<usize>() {
                    return Err(HgnError::shape(
                        "frozen context",
                        t.shape(),
                        &[lens.iter().sum(), self.config.hero.d_model],
                    ));
                }
                g.constant(t.clone())
            }
        };
        let local = match (&self.windows, &self.cell) {
            (Some(w), Some(c)) => gang::gang_forward(g, w, c, params, z, lens)?,
            _ => Vec::new(),
        };
        let mut s = fusion::fuse(g, &self.fusion, params, z, &local)?.s;
        if let Some((p, rng)) = dropout.filter(|(p, _)| *p > 0.0) {
            let keep = 1.0 - p;
            let shape = g.shape(s).to_vec();
            let n: usize = shape.iter().product();
            let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
            let m = g.constant(Tensor::new(shape, mask)?);
            s = g.mul(s, m)?;
        }
        let probs = tagger::classify(g, params, s)?;
        Ok(Forward { z, local, s, probs })
    }

    /// Tag distributions, one row per token, computed on a scratch graph.
    pub fn probabilities(&self, input: &ModelInput, lens: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.store.bind(&mut g);
        let f = self.forward(&mut g, &b, input, lens, None)?;
        Ok(g.value(f.probs).clone())
    }

    /// Argmax tag index per token; ties go to the lowest index.
    pub fn predict(&self, input: &ModelInput, lens: &[usize]) -> Result<Vec<usize>> {
        Ok(self.probabilities(input, lens)?.argmax_rows())
    }
}

/// Sidecar written next to the parameter file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    vocab: Vocab,
    tags: Vec<String>,
}

/// A trained model with everything needed to read new text.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocab,
    pub scheme: LabelScheme,
}

/// `model.hgn` -> `model.meta.json`.
pub fn meta_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("meta.json")
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.model.store.to_named())?;
        let meta = Meta {
            model: self.model.config.clone(),
            vocab: self.vocab.clone(),
            tags: self.scheme.tags().to_vec(),
        };
        let mp = meta_path(path);
        fs::write(&mp, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| HgnError::io(&mp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mp = meta_path(path);
        let text = fs::read_to_string(&mp).map_err(|e| HgnError::io(&mp, e))?;
        let meta: Meta =
            serde_json::from_str(&text).map_err(|e| HgnError::Checkpoint(format!("{}: {e}", mp.display())))?;
        let scheme = LabelScheme::from_tags(meta.tags.iter().map(String::as_str))?;
        if scheme.tags() != meta.tags.as_slice() || scheme.len() != meta.model.n_tags {
            return Err(HgnError::Checkpoint(format!(
                "tag list {:?} does not match a {}-tag model",
                meta.tags, meta.model.n_tags
            )));
        }
        if meta.vocab.len() != meta.model.hero.vocab_size && meta.model.hero.variant == HeroVariant::TrainableTransformer {
            return Err(HgnError::Checkpoint(format!(
                "vocabulary has {} words, model expects {}",
                meta.vocab.len(),
                meta.model.hero.vocab_size
            )));
        }
        let mut model = Model::new(meta.model, 0)?;
        model.store.load_named(container::read_file(path)?)?;
        Ok(Checkpoint {
            model,
            vocab: meta.vocab,
            scheme,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(windows: Vec<usize>, fusion: FusionMode) -> ModelConfig {
        let mut run = RunConfig::default();
        run.hero.d_model = 8;
        run.hero.n_heads = 2;
        run.hero.d_ff = 16;
        run.hero.n_layers = 1;
        run.windows = windows;
        run.fusion = fusion;
        ModelConfig::from_run(&run, 10, 3)
    }

    #[test]
    fn probabilities_are_distributions() {
        let m = Model::new(config(vec![1, 3], FusionMode::Mlp), 1).unwrap();
        let p = m.probabilities(&ModelInput::Tokens(vec![2, 3, 4, 5, 6]), &[3, 2]).unwrap();
        assert_eq!(p.shape(), &[5, 3]);
        for r in 0..5 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batching_does_not_change_rows() {
        let m = Model::new(config(vec![3, 5], FusionMode::Dot), 2).unwrap();
        let joint = m.probabilities(&ModelInput::Tokens(vec![2, 3, 4, 5, 6, 7]), &[4, 2]).unwrap();
        let a = m.probabilities(&ModelInput::Tokens(vec![2, 3, 4, 5]), &[4]).unwrap();
        let b = m.probabilities(&ModelInput::Tokens(vec![6, 7]), &[2]).unwrap();
        assert_eq!(&joint.data()[..12], a.data());
        assert_eq!(&joint.data()[12..], b.data());
    }

    #[test]
    fn base_model_has_no_gang_params() {
        let m = Model::new(config(vec![], FusionMode::Mlp), 3).unwrap();
        assert!(m.store.names().iter().all(|n| !n.starts_with("gang.") && !n.starts_with("fusion.")));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.hgn");
        let model = Model::new(config(vec![3], FusionMode::Concat), 4).unwrap();
        let vocab = Vocab::from_words((0..10).map(|i| format!("w{i}")).collect());
        let scheme = LabelScheme::new(["X"]);
        let ck = Checkpoint { model, vocab, scheme };
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let input = ModelInput::Tokens(vec![1, 5, 9]);
        assert_eq!(ck.model.predict(&input, &[3]).unwrap(), back.model.predict(&input, &[3]).unwrap());
        assert_eq!(back.model.store.to_named(), ck.model.store.to_named());
    }
}
