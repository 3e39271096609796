//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments run to end of line
//! hero.d_model = 64
//! gang.windows = 3,5,7
//! data.train = corpus/train.txt
//! ```
//!
//! An empty `gang.windows` disables the Gang entirely (the encoder-only baseline).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HgnError, Result};
use crate::fusion::FusionMode;
use crate::gang::{CellKind, WindowSpec};
use crate::hero::{HeroVariant, PositionMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeroSettings {
    pub variant: HeroVariant,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub position_mode: PositionMode,
    /// Frozen-variant embedding files, one per split.
    pub frozen_train: Option<PathBuf>,
    pub frozen_dev: Option<PathBuf>,
    pub frozen_test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_on_dev: bool,
    /// L2 clipping threshold; 0 disables clipping.
    pub clip_norm: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    /// Epoch `e` uses `lr / (1 + lr_decay * (e - 1))`.
    pub lr_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub hero: HeroSettings,
    /// Window sizes; empty means no Gang.
    pub windows: Vec<usize>,
    pub cell: CellKind,
    pub fusion: FusionMode,
    pub fusion_scale_scores: bool,
    pub fusion_mlp_tanh: bool,
    pub train: TrainSettings,
    pub data_train: Option<PathBuf>,
    pub data_dev: Option<PathBuf>,
    pub data_test: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub min_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hero: HeroSettings {
                variant: HeroVariant::TrainableTransformer,
                d_model: 64,
                n_layers: 2,
                n_heads: 4,
                d_ff: 128,
                max_len: 512,
                position_mode: PositionMode::Sinusoidal,
                frozen_train: None,
                frozen_dev: None,
                frozen_test: None,
            },
            windows: vec![3, 5, 7],
            cell: CellKind::Lstm,
            fusion: FusionMode::Dot,
            fusion_scale_scores: false,
            fusion_mlp_tanh: false,
            train: TrainSettings {
                lr: 1e-3,
                batch_size: 32,
                epochs: 10,
                seed: 42,
                train_on_dev: false,
                clip_norm: 5.0,
                dropout: 0.0,
                weight_decay: 0.0,
                lr_decay: 0.0,
            },
            data_train: None,
            data_dev: None,
            data_test: None,
            output_dir: PathBuf::from("runs/default"),
            min_count: 1,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| HgnError::Config(format!("{key}: cannot parse {raw:?}: {e}")))
}

fn bool_value(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(HgnError::Config(format!("{key}: expected true or false, got {raw:?}"))),
    }
}

fn path_value(raw: &str) -> Option<PathBuf> {
    (!raw.is_empty()).then(|| PathBuf::from(raw))
}

fn list_value(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect()
}

fn join(ws: &[usize]) -> String {
    ws.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HgnError::io(path, e))?;
        Self::parse(&text)
    }

    /// Starts from [`RunConfig::default`] and applies every `key = value` line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| HgnError::Config(format!("line {}: expected key = value", n + 1)))?;
            c.set(key.trim(), raw.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "hero.variant" => self.hero.variant = value(key, raw)?,
            "hero.d_model" => self.hero.d_model = value(key, raw)?,
            "hero.n_layers" => self.hero.n_layers = value(key, raw)?,
            "hero.n_heads" => self.hero.n_heads = value(key, raw)?,
            "hero.d_ff" => self.hero.d_ff = value(key, raw)?,
            "hero.max_len" => self.hero.max_len = value(key, raw)?,
            "hero.position_mode" => self.hero.position_mode = value(key, raw)?,
            "hero.frozen.train" => self.hero.frozen_train = path_value(raw),
            "hero.frozen.dev" => self.hero.frozen_dev = path_value(raw),
            "hero.frozen.test" => self.hero.frozen_test = path_value(raw),
            "gang.windows" => self.windows = list_value(key, raw)?,
            "gang.cell" => self.cell = value(key, raw)?,
            "fusion.mode" => self.fusion = value(key, raw)?,
            "fusion.scale_scores" => self.fusion_scale_scores = bool_value(key, raw)?,
            "fusion.mlp_tanh" => self.fusion_mlp_tanh = bool_value(key, raw)?,
            "train.lr" => self.train.lr = value(key, raw)?,
            "train.batch_size" => self.train.batch_size = value(key, raw)?,
            "train.epochs" => self.train.epochs = value(key, raw)?,
            "train.seed" => self.train.seed = value(key, raw)?,
            "train.train_on_dev" => self.train.train_on_dev = bool_value(key, raw)?,
            "train.clip_norm" => self.train.clip_norm = value(key, raw)?,
            "train.dropout" => self.train.dropout = value(key, raw)?,
            "train.weight_decay" => self.train.weight_decay = value(key, raw)?,
            "train.lr_decay" => self.train.lr_decay = value(key, raw)?,
            "data.train" => self.data_train = path_value(raw),
            "data.dev" => self.data_dev = path_value(raw),
            "data.test" => self.data_test = path_value(raw),
            "output.dir" => self.output_dir = PathBuf::from(raw),
            "vocab.min_count" => self.min_count = value(key, raw)?,
            _ => return Err(HgnError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key, one per line, in a fixed order.
    pub fn write(&self) -> String {
        let h = &self.hero;
        let t = &self.train;
        let mut out = String::new();
        let rows: Vec<(&str, String)> = vec![
            ("hero.variant", h.variant.to_string()),
            ("hero.d_model", h.d_model.to_string()),
            ("hero.n_layers", h.n_layers.to_string()),
            ("hero.n_heads", h.n_heads.to_string()),
            ("hero.d_ff", h.d_ff.to_string()),
            ("hero.max_len", h.max_len.to_string()),
            ("hero.position_mode", h.position_mode.to_string()),
            ("hero.frozen.train", show(&h.frozen_train)),
            ("hero.frozen.dev", show(&h.frozen_dev)),
            ("hero.frozen.test", show(&h.frozen_test)),
            ("gang.windows", join(&self.windows)),
            ("gang.cell", self.cell.to_string()),
            ("fusion.mode", self.fusion.to_string()),
            ("fusion.scale_scores", self.fusion_scale_scores.to_string()),
            ("fusion.mlp_tanh", self.fusion_mlp_tanh.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.train_on_dev", t.train_on_dev.to_string()),
            ("train.clip_norm", t.clip_norm.to_string()),
            ("train.dropout", t.dropout.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.lr_decay", t.lr_decay.to_string()),
            ("data.train", show(&self.data_train)),
            ("data.dev", show(&self.data_dev)),
            ("data.test", show(&self.data_test)),
            ("output.dir", self.output_dir.display().to_string()),
            ("vocab.min_count", self.min_count.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HgnError::Config(msg));
        if !self.windows.is_empty() {
            WindowSpec::new(self.windows.clone()).map_err(|e| HgnError::Config(e.to_string()))?;
        }
        let h = &self.hero;
        if h.d_model == 0 || h.d_model % 2 != 0 {
            return bad(format!("hero.d_model must be even and positive, got {}", h.d_model));
        }
        if h.n_heads == 0 || h.d_model % h.n_heads != 0 {
            return bad(format!("hero.n_heads {} must divide hero.d_model {}", h.n_heads, h.d_model));
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad(format!("train.lr must be positive, got {}", t.lr));
        }
        if t.epochs == 0 {
            return bad("train.epochs must be at least 1".into());
        }
        if t.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return bad(format!("train.dropout must be in [0, 1), got {}", t.dropout));
        }
        if t.clip_norm < 0.0 || t.weight_decay < 0.0 || t.lr_decay < 0.0 {
            return bad("train.clip_norm, train.weight_decay and train.lr_decay must be non-negative".into());
        }
        if self.min_count == 0 {
            return bad("vocab.min_count must be at least 1".into());
        }
        Ok(())
    }

    pub fn window_spec(&self) -> Result<Option<WindowSpec>> {
        if self.windows.is_empty() {
            Ok(None)
        } else {
            WindowSpec::new(self.windows.clone()).map(Some)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.write()).unwrap(), c);
    }

    #[test]
    fn parses_comments_and_lists() {
        let c = RunConfig::parse("# x\ngang.windows = 3, 5 ,7  # trailing\ntrain.lr = 3e-5\n").unwrap();
        assert_eq!(c.windows, vec![3, 5, 7]);
        assert_eq!(c.train.lr, 3e-5);
    }

    #[test]
    fn empty_windows_is_base() {
        let c = RunConfig::parse("gang.windows =\n").unwrap();
        assert!(c.window_spec().unwrap().is_none());
        assert_eq!(RunConfig::parse(&c.write()).unwrap(), c);
    }

    #[test]
    fn violations() {
        for text in [
            "gang.windows = 4",
            "train.lr = 0",
            "train.epochs = 0",
            "hero.d_model = 63\nhero.n_heads = 1",
            "nope = 1",
            "train.train_on_dev = yes",
            "just words",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(HgnError::Config(_))), "{text}");
        }
    }
}
