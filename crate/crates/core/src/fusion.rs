//! Per-token fusion of the global vector `z_i` with local features `h_i^1..h_i^M`.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HgnError, Result};
use crate::numerics::params::xavier;
use crate::numerics::{Bindings, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Learned query over `[z, h^1..h^M]`.
    Mlp,
    /// `z` queries `h^1..h^M`; the attended vector is added back onto `z`.
    Dot,
    /// `[h^1, ..., h^M, z]`.
    Concat,
    /// `h^1 + ... + h^M + z`.
    Add,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::Mlp, FusionMode::Dot, FusionMode::Concat, FusionMode::Add];
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Mlp => "mlp",
            FusionMode::Dot => "dot",
            FusionMode::Concat => "concat",
            FusionMode::Add => "add",
        })
    }
}

impl FromStr for FusionMode {
    type Err = HgnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(FusionMode::Mlp),
            "dot" => Ok(FusionMode::Dot),
            "concat" => Ok(FusionMode::Concat),
            "add" => Ok(FusionMode::Add),
            other => Err(HgnError::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub d: usize,
    /// Number of local feature sets. Zero means no Gang: `s = z`.
    pub windows: usize,
    /// Divide attention scores by `sqrt(d)`. Off by default.
    pub scale_scores: bool,
    /// Apply `tanh` to the MLP query. Off by default.
    pub mlp_tanh: bool,
}

impl FusionConfig {
    pub fn new(mode: FusionMode, d: usize, windows: usize) -> Self {
        FusionConfig {
            mode,
            d,
            windows,
            scale_scores: false,
            mlp_tanh: false,
        }
    }

    pub fn output_dim(&self) -> usize {
        match (self.windows, self.mode) {
            (0, _) => self.d,
            (m, FusionMode::Concat) => (m + 1) * self.d,
            _ => self.d,
        }
    }
}

pub fn init_params(cfg: &FusionConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
    if cfg.mode == FusionMode::Mlp && cfg.windows > 0 {
        store.insert("fusion.mlp.w", xavier(rng, (cfg.windows + 1) * cfg.d, cfg.d))?;
        store.insert("fusion.mlp.b", Tensor::zeros(&[cfg.d]))?;
    }
    Ok(())
}

/// Fused rows plus, for the attention modes, the `T x candidates` weights.
#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub s: Var,
    pub weights: Option<Var>,
}

/// Softmax over per-row dot products of `query` with each candidate, then the
/// weighted sum of the candidates.
fn attend(g: &mut Graph, query: Var, candidates: &[Var], scale: Option<f64>) -> Result<(Var, Var)> {
    let scores: Vec<Var> = candidates
        .iter()
        .map(|&c| g.row_dots(query, c))
        .collect::<Result<_>>()?;
    let mut scores = g.concat_cols(&scores)?;
    if let Some(s) = scale {
        scores = g.scale(scores, s);
    }
    let weights = g.softmax_rows(scores)?;
    let mut terms = Vec::with_capacity(candidates.len());
    for (j, &c) in candidates.iter().enumerate() {
        let w = g.slice_cols(weights, j, 1)?;
        terms.push(g.scale_rows(c, w)?);
    }
    Ok((g.add_all(&terms)?, weights))
}

pub fn fuse(g: &mut Graph, cfg: &FusionConfig, params: &Bindings, z: Var, hs: &[Var]) -> Result<FusionOutput> {
    if hs.len() != cfg.windows {
        return Err(HgnError::InvalidArgument(format!(
            "fusion configured for {} windows, got {}",
            cfg.windows,
            hs.len()
        )));
    }
    for &h in hs {
        if g.shape(h) != g.shape(z) {
            return Err(HgnError::shape("fusion", g.shape(z), g.shape(h)));
        }
    }
    if hs.is_empty() {
        return Ok(FusionOutput { s: z, weights: None });
    }
    let scale = cfg.scale_scores.then(|| 1.0 / (cfg.d as f64).sqrt());
    match cfg.mode {
        FusionMode::Dot => {
            let (u, w) = attend(g, z, hs, scale)?;
            Ok(FusionOutput {
                s: g.add(z, u)?,
                weights: Some(w),
            })
        }
        FusionMode::Mlp => {
            let mut candidates = Vec::with_capacity(hs.len() + 1);
            candidates.push(z);
            candidates.extend_from_slice(hs);
            let flat = g.concat_cols(&candidates)?;
            let m = g.matmul(flat, params.var("fusion.mlp.w")?)?;
            let mut m = g.add_bias(m, params.var("fusion.mlp.b")?)?;
            if cfg.mlp_tanh {
                m = g.tanh(m);
            }
            let (s, w) = attend(g, m, &candidates, scale)?;
            Ok(FusionOutput { s, weights: Some(w) })
        }
        FusionMode::Concat => {
            let mut parts = hs.to_vec();
            parts.push(z);
            Ok(FusionOutput {
                s: g.concat_cols(&parts)?,
                weights: None,
            })
        }
        FusionMode::Add => {
            let mut parts = hs.to_vec();
            parts.push(z);
            Ok(FusionOutput {
                s: g.add_all(&parts)?,
                weights: None,
            })
        }
    }
}

fn row(t: &Tensor) -> Result<Tensor> {
    Tensor::new(vec![1, t.len()], t.data().to_vec())
}

fn single_token(mode: FusionMode, z: &Tensor, hs: &[Tensor], store: &ParamStore) -> Result<Tensor> {
    let cfg = FusionConfig::new(mode, z.len(), hs.len());
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let zv = g.constant(row(z)?);
    let hv: Vec<Var> = hs.iter().map(|h| Ok(g.constant(row(h)?))).collect::<Result<_>>()?;
    let out = fuse(&mut g, &cfg, &b, zv, &hv)?;
    Ok(Tensor::vector(g.value(out.s).data().to_vec()))
}

/// MLP-attention for one token. `store` must hold `fusion.mlp.w` (`(M+1)d x d`)
/// and `fusion.mlp.b`.
pub fn mlp_attention(z: &Tensor, hs: &[Tensor], store: &ParamStore) -> Result<Tensor> {
    single_token(FusionMode::Mlp, z, hs, store)
}

/// DOT-attention for one token: `z + softmax(z . h^j) h^j`.
pub fn dot_attention(z: &Tensor, hs: &[Tensor]) -> Result<Tensor> {
    single_token(FusionMode::Dot, z, hs, &ParamStore::new())
}

pub fn concat_fusion(z: &Tensor, hs: &[Tensor]) -> Result<Tensor> {
    single_token(FusionMode::Concat, z, hs, &ParamStore::new())
}

pub fn sum_fusion(z: &Tensor, hs: &[Tensor]) -> Result<Tensor> {
    single_token(FusionMode::Add, z, hs, &ParamStore::new())
}
