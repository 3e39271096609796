//! The operations behind each CLI subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::conll::{read_tokens, write_conll};
use crate::data::synthetic::{self, Manifest};
use crate::data::LabeledSequence;
use crate::error::{HgnError, Result};
use crate::fusion::FusionMode;
use crate::gang::CellKind;
use crate::hero::{FrozenEmbeddings, HeroVariant};
use crate::model::{Checkpoint, Model, ModelConfig, ModelInput};
use crate::numerics::{finite_diff_check, CoordCheck, Graph, ParamStore, Tensor};
use crate::tagger::{Metrics, OUTSIDE};
use crate::train::{evaluate, predict_split, train, Dataset, RunRecord, Split};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HgnError::io(path, e))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Trains per `config`, then writes `model.hgn`, `model.meta.json`, `run.json`
/// and `timing.json` into `output.dir`.
pub fn cmd_train(config: &RunConfig) -> Result<RunRecord> {
    let data = Dataset::load(config)?;
    let trained = train(config, &data)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| HgnError::io(dir, e))?;
    let ck_path = dir.join("model.hgn");
    trained.checkpoint.save(&ck_path)?;
    let mut record = trained.record;
    record.checkpoint = Some(ck_path.display().to_string());
    write_text(&dir.join("run.json"), &json(&record)?)?;
    write_text(
        &dir.join("timing.json"),
        &json(&serde_json::json!({ "wall_clock_secs": record.wall_clock_secs }))?,
    )?;
    info!("best epoch {} saved to {}", record.best_epoch, ck_path.display());
    Ok(record)
}

fn split_for(ck: &Checkpoint, sentences: Vec<LabeledSequence>, embeddings: Option<&Path>) -> Result<Split> {
    let mut split = Split::new(sentences);
    if ck.model.config.hero.variant == HeroVariant::FrozenFile {
        let path = embeddings
            .ok_or_else(|| HgnError::InvalidArgument("this checkpoint has a frozen Hero; pass --embeddings".into()))?;
        split.attach_frozen(&FrozenEmbeddings::load(path)?, ck.model.config.hero.d_model)?;
    }
    Ok(split)
}

/// Scores a checkpoint on a labelled file. Writes the metrics JSON to `out` when given.
pub fn cmd_eval(checkpoint: &Path, data: &Path, embeddings: Option<&Path>, out: Option<&Path>) -> Result<Metrics> {
    let ck = Checkpoint::load(checkpoint)?;
    let sentences = crate::data::read_conll(data)?;
    for s in &sentences {
        for t in &s.tags {
            ck.scheme.index_of(t).map_err(|_| {
                HgnError::Checkpoint(format!("tag {t:?} in {} is unknown to the checkpoint", data.display()))
            })?;
        }
    }
    let split = split_for(&ck, sentences, embeddings)?;
    let metrics = evaluate(&ck.model, &ck.vocab, &ck.scheme, &split)?.metrics;
    if let Some(out) = out {
        write_text(out, &json(&metrics)?)?;
    }
    Ok(metrics)
}

/// Tags every sentence of a token file (first column) and returns two-column CoNLL text.
pub fn cmd_predict(checkpoint: &Path, input: &Path, embeddings: Option<&Path>) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let sentences: Vec<LabeledSequence> = read_tokens(input)?
        .into_iter()
        .enumerate()
        .map(|(i, tokens)| LabeledSequence {
            tags: vec![OUTSIDE.to_string(); tokens.len()],
            tokens,
            source_index: i,
        })
        .collect();
    if sentences.is_empty() {
        return Ok(String::new());
    }
    let mut split = split_for(&ck, sentences, embeddings)?;
    let tags = predict_split(&ck.model, &ck.vocab, &ck.scheme, &split)?;
    for (s, t) in split.sentences.iter_mut().zip(tags) {
        s.tags = t;
    }
    Ok(write_conll(&split.sentences))
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckCase {
    pub cell: CellKind,
    pub fusion: FusionMode,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
    pub worst: Option<CoordCheck>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrozenHeroCheck {
    pub hero_params: usize,
    /// L2 norm of the gradient reaching the frozen context rows.
    pub context_grad_norm: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckSummary {
    pub step: f64,
    pub tol: f64,
    pub cases: Vec<GradcheckCase>,
    pub frozen_hero: FrozenHeroCheck,
    pub passed: bool,
}

pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_TOL: f64 = 1e-4;

fn gradcheck_config(cell: CellKind, fusion: FusionMode, variant: HeroVariant) -> ModelConfig {
    let mut run = RunConfig::default();
    run.hero.variant = variant;
    run.hero.d_model = 8;
    run.hero.n_heads = 2;
    run.hero.d_ff = 8;
    run.hero.n_layers = 1;
    run.windows = vec![1, 3];
    run.cell = cell;
    run.fusion = fusion;
    ModelConfig::from_run(&run, 6, 3)
}

fn full_loss(model: &Model, store: &ParamStore, input: &ModelInput, lens: &[usize], gold: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let f = model.forward(&mut g, &b, input, lens, None)?;
    let loss = g.nll_loss(f.probs, gold, &vec![true; gold.len()])?;
    Ok(g.value(loss).data()[0])
}

/// Loss and gradients at the current parameters; returns the gradient at `z`.
fn backprop(model: &mut Model, input: &ModelInput, lens: &[usize], gold: &[usize]) -> Result<Tensor> {
    let mut g = Graph::new();
    let b = model.store.bind(&mut g);
    let f = model.forward(&mut g, &b, input, lens, None)?;
    let loss = g.nll_loss(f.probs, gold, &vec![true; gold.len()])?;
    g.backward(loss)?;
    model.store.zero_grads();
    model.store.accumulate_grads(&g, &b);
    Ok(g.grad_or_zeros(f.z))
}

/// Finite-difference check of the full loss for every cell kind and fusion
/// mode on a tiny model, plus a frozen-Hero run.
pub fn cmd_gradcheck() -> Result<GradcheckSummary> {
    let lens = [4usize, 3];
    let ids = vec![2, 3, 4, 5, 1, 3, 2];
    let gold = vec![1, 2, 0, 1, 0, 1, 0];
    let mut cases = Vec::new();
    for (ci, cell) in CellKind::ALL.into_iter().enumerate() {
        for (fi, fusion) in FusionMode::ALL.into_iter().enumerate() {
            let mut model = Model::new(
                gradcheck_config(cell, fusion, HeroVariant::TrainableTransformer),
                100 + (ci * 4 + fi) as u64,
            )?;
            let input = ModelInput::Tokens(ids.clone());
            backprop(&mut model, &input, &lens, &gold)?;
            let template = model.clone();
            let report = finite_diff_check(
                &mut model.store,
                |store| full_loss(&template, store, &input, &lens, &gold),
                GRADCHECK_STEP,
                GRADCHECK_TOL,
            )?;
            info!("gradcheck {cell}/{fusion}: max rel error {:.3e}", report.max_rel_error);
            cases.push(GradcheckCase {
                cell,
                fusion,
                checked: report.checked,
                max_rel_error: report.max_rel_error,
                passed: report.passed,
                worst: report.worst,
            });
        }
    }

    let mut model = Model::new(gradcheck_config(CellKind::Lstm, FusionMode::Mlp, HeroVariant::FrozenFile), 7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ctx: Vec<f64> = (0..ids.len() * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let input = ModelInput::Context(Tensor::new(vec![ids.len(), 8], ctx)?);
    let z_grad = backprop(&mut model, &input, &lens, &gold)?;
    let template = model.clone();
    let report = finite_diff_check(
        &mut model.store,
        |store| full_loss(&template, store, &input, &lens, &gold),
        GRADCHECK_STEP,
        GRADCHECK_TOL,
    )?;
    let hero_params = model.store.names().iter().filter(|n| n.starts_with("hero.")).count();
    let context_grad_norm = z_grad.norm_sq().sqrt();
    let frozen_hero = FrozenHeroCheck {
        hero_params,
        context_grad_norm,
        max_rel_error: report.max_rel_error,
        passed: hero_params == 0 && context_grad_norm == 0.0 && report.passed,
    };
    let passed = cases.iter().all(|c| c.passed) && frozen_hero.passed;
    Ok(GradcheckSummary {
        step: GRADCHECK_STEP,
        tol: GRADCHECK_TOL,
        cases,
        frozen_hero,
        passed,
    })
}

impl GradcheckSummary {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:<8} {:>7} {:>12} {}", "cell", "fusion", "coords", "max_rel_err", "status");
        for c in &self.cases {
            let status = if c.passed { "ok" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{:<6} {:<8} {:>7} {:>12.3e} {status}",
                c.cell.to_string(),
                c.fusion.to_string(),
                c.checked,
                c.max_rel_error
            );
        }
        let f = &self.frozen_hero;
        let _ = writeln!(
            out,
            "frozen hero: {} hero params, context grad norm {}, max_rel_err {:.3e} {}",
            f.hero_params,
            f.context_grad_norm,
            f.max_rel_error,
            if f.passed { "ok" } else { "FAIL" }
        );
        out
    }
}

/// Variants to train in an ablation: window sets and/or cell kinds.
///
/// ```text
/// windows = 3; 5; 7; 9; 11; 3,5,7
/// cells = lstm, gru
/// ```
///
/// Window sets are separated by `;`. With both keys present every pair is run;
/// with one, the other comes from the run config.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Sweep {
    pub windows: Vec<Vec<usize>>,
    pub cells: Vec<CellKind>,
}

impl Sweep {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HgnError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sweep = Sweep::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| HgnError::Config(format!("sweep line {}: expected key = value", n + 1)))?;
            match key.trim() {
                "windows" => {
                    for set in raw.split(';').map(str::trim).filter(|s| !s.is_empty()) {
                        let sizes = set
                            .split(',')
                            .map(|w| {
                                w.trim()
                                    .parse::<usize>()
                                    .map_err(|e| HgnError::Config(format!("sweep window {w:?}: {e}")))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        crate::gang::WindowSpec::new(sizes.clone()).map_err(|e| HgnError::Config(e.to_string()))?;
                        sweep.windows.push(sizes);
                    }
                }
                "cells" => {
                    for c in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        sweep.cells.push(c.parse()?);
                    }
                }
                other => return Err(HgnError::Config(format!("unknown sweep key {other:?}"))),
            }
        }
        if sweep.windows.is_empty() && sweep.cells.is_empty() {
            return Err(HgnError::Config("sweep lists no window sets and no cells".into()));
        }
        Ok(sweep)
    }

    fn variants(&self, config: &RunConfig) -> Vec<(Vec<usize>, CellKind)> {
        let windows = if self.windows.is_empty() {
            vec![config.windows.clone()]
        } else {
            self.windows.clone()
        };
        let cells = if self.cells.is_empty() {
            vec![config.cell]
        } else {
            self.cells.clone()
        };
        let mut out = Vec::new();
        for w in &windows {
            for &c in &cells {
                out.push((w.clone(), c));
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub windows: Vec<usize>,
    pub cell: Option<CellKind>,
    pub dev_f1: Option<f64>,
    pub test_f1: Option<f64>,
    /// Test F1 when a test split exists, else dev F1, else train F1.
    pub f1: f64,
    pub delta_vs_base: f64,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub seed: u64,
    pub epochs: usize,
    pub baseline: AblationRow,
    pub variants: Vec<AblationRow>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(out, "{:<22} {:>8} {:>8} {:>8} {:>8}", "variant", "dev_f1", "test_f1", "f1", "delta");
        for r in std::iter::once(&self.baseline).chain(&self.variants) {
            let _ = writeln!(
                out,
                "{:<22} {:>8} {:>8} {:>8.4} {:>+8.4}",
                r.name,
                fmt(r.dev_f1),
                fmt(r.test_f1),
                r.f1,
                r.delta_vs_base
            );
        }
        out
    }
}

fn row(name: String, windows: Vec<usize>, cell: Option<CellKind>, rec: &RunRecord) -> AblationRow {
    let dev_f1 = rec.dev.as_ref().map(|m| m.f1);
    let test_f1 = rec.test.as_ref().map(|m| m.f1);
    AblationRow {
        name,
        windows,
        cell,
        dev_f1,
        test_f1,
        f1: test_f1.or(dev_f1).unwrap_or(rec.train.f1),
        delta_vs_base: 0.0,
        wall_clock_secs: rec.wall_clock_secs,
    }
}

/// Trains the no-Gang baseline and every sweep variant with the same seed and budget.
pub fn ablate(config: &RunConfig, sweep: &Sweep, data: &Dataset) -> Result<AblationReport> {
    let mut base_cfg = config.clone();
    base_cfg.windows.clear();
    info!("ablation: training baseline");
    let base = train(&base_cfg, data)?.record;
    let baseline = row("base".into(), Vec::new(), None, &base);
    let mut variants = Vec::new();
    for (windows, cell) in sweep.variants(config) {
        let mut cfg = config.clone();
        cfg.windows = windows.clone();
        cfg.cell = cell;
        let name = if windows.is_empty() {
            "base".to_string()
        } else {
            format!("{cell} w={}", windows.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","))
        };
        info!("ablation: training {name}");
        let rec = train(&cfg, data)?.record;
        let mut r = row(name, windows, Some(cell), &rec);
        r.delta_vs_base = r.f1 - baseline.f1;
        variants.push(r);
    }
    Ok(AblationReport {
        seed: config.train.seed,
        epochs: config.train.epochs,
        baseline,
        variants,
    })
}

/// [`ablate`] on the configured data; writes `ablation.json` and `ablation.txt` to `output.dir`.
pub fn cmd_ablate(config: &RunConfig, sweep: &Sweep) -> Result<AblationReport> {
    let data = Dataset::load(config)?;
    let report = ablate(config, sweep, &data)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| HgnError::io(dir, e))?;
    write_text(&dir.join("ablation.json"), &json(&report)?)?;
    write_text(&dir.join("ablation.txt"), &report.table())?;
    Ok(report)
}

/// Generates, audits and writes a synthetic local-cue corpus.
pub fn cmd_gen_data(out: &Path, seed: u64, sentences: usize, cue_width: usize) -> Result<Manifest> {
    if sentences == 0 {
        return Err(HgnError::InvalidArgument("need at least one training sentence".into()));
    }
    let splits = synthetic::gen_splits(sentences, seed, cue_width)?;
    for part in [&splits.train, &splits.dev, &splits.test] {
        synthetic::audit(part, cue_width)?;
    }
    synthetic::write_splits(out, &splits)?;
    Ok(splits.manifest)
}

/// Default location of `eval` output: next to the checkpoint.
pub fn default_metrics_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("metrics.json")
}
