//! Multi-window local feature extraction.
//!
//! For every token and every configured window width `w = 2k + 1`, the rows
//! `i-k ..= i+k` of the context matrix (clipped to the sentence) are encoded by
//! a forward and a backward recurrent pass with independent parameters. The
//! token's local feature is `[backward final state, forward final state]`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HgnError, Result};
use crate::hero::ContextMatrix;
use crate::numerics::params::xavier;
use crate::numerics::{Bindings, Graph, ParamStore, Tensor, Var};

/// Ordered, strictly increasing odd span widths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    sizes: Vec<usize>,
}

impl WindowSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(HgnError::Config("at least one window size is required".into()));
        }
        if let Some(bad) = sizes.iter().find(|&&s| s == 0 || s % 2 == 0) {
            return Err(HgnError::Config(format!("window size {bad} must be odd and positive")));
        }
        if sizes.windows(2).any(|p| p[0] >= p[1]) {
            return Err(HgnError::Config(format!("window sizes {sizes:?} must be strictly increasing")));
        }
        Ok(WindowSpec { sizes })
    }

    /// Builds the spec from half-widths `k`, i.e. spans of `2k + 1` tokens.
    pub fn from_half_widths(ks: &[usize]) -> Result<Self> {
        Self::new(ks.iter().map(|&k| 2 * k + 1).collect())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Half-width `k` of a span of `size = 2k + 1` tokens.
pub fn half_width(size: usize) -> usize {
    (size - 1) / 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Rnn,
    Gru,
    Lstm,
    Cnn,
    Mlp,
}

impl CellKind {
    pub const ALL: [CellKind; 5] = [CellKind::Rnn, CellKind::Gru, CellKind::Lstm, CellKind::Cnn, CellKind::Mlp];

    fn gate_count(self) -> usize {
        match self {
            CellKind::Rnn | CellKind::Cnn | CellKind::Mlp => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Rnn => "rnn",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
            CellKind::Cnn => "cnn",
            CellKind::Mlp => "mlp",
        })
    }
}

impl FromStr for CellKind {
    type Err = HgnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(CellKind::Rnn),
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            "cnn" => Ok(CellKind::Cnn),
            "mlp" => Ok(CellKind::Mlp),
            other => Err(HgnError::Config(format!("unknown cell kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    pub kind: CellKind,
    pub input_dim: usize,
    /// Per direction; always `input_dim / 2`.
    pub hidden_dim: usize,
}

impl CellConfig {
    pub fn new(kind: CellKind, input_dim: usize) -> Result<Self> {
        if input_dim == 0 || input_dim % 2 != 0 {
            return Err(HgnError::Config(format!(
                "gang input dim {input_dim} must be even so two directions fill it"
            )));
        }
        Ok(CellConfig {
            kind,
            input_dim,
            hidden_dim: input_dim / 2,
        })
    }
}

/// `features[j]` is `N x d`; row `i` is token `i`'s feature under window `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFeatureSet {
    pub features: Vec<Tensor>,
}

/// Zero-based rows `max(0, i-k) .. min(n, i+k+1)` around token `i` of an
/// `n`-token sentence. Spans are clipped at the sentence edges, never padded.
pub fn extract_subsequence(i: usize, k: usize, n: usize) -> Result<Range<usize>> {
    if i >= n {
        return Err(HgnError::OutOfRange {
            what: "token index",
            index: i,
            limit: n,
        });
    }
    Ok(i.saturating_sub(k)..(i + k + 1).min(n))
}

const DIRECTIONS: [&str; 2] = ["bwd", "fwd"];

fn prefix(window: usize, dir: &str) -> String {
    format!("gang.w{window}.{dir}")
}

pub fn init_params(
    windows: &WindowSpec,
    cell: &CellConfig,
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let (d, h) = (cell.input_dim, cell.hidden_dim);
    for j in 0..windows.len() {
        if cell.kind == CellKind::Mlp {
            store.insert(format!("gang.w{j}.mlp.w"), xavier(rng, d, d))?;
            store.insert(format!("gang.w{j}.mlp.b"), Tensor::zeros(&[d]))?;
            continue;
        }
        for dir in DIRECTIONS {
            let p = prefix(j, dir);
            let gates = cell.kind.gate_count() * h;
            match cell.kind {
                CellKind::Cnn => {
                    store.insert(format!("{p}.k"), xavier(rng, 3 * d, h))?;
                    store.insert(format!("{p}.b"), Tensor::zeros(&[h]))?;
                }
                CellKind::Gru => {
                    store.insert(format!("{p}.wx"), xavier(rng, d, gates))?;
                    store.insert(format!("{p}.wh"), xavier(rng, h, gates))?;
                    store.insert(format!("{p}.bx"), Tensor::zeros(&[gates]))?;
                    store.insert(format!("{p}.bh"), Tensor::zeros(&[gates]))?;
                }
                CellKind::Rnn | CellKind::Lstm => {
                    store.insert(format!("{p}.wx"), xavier(rng, d, gates))?;
                    store.insert(format!("{p}.wh"), xavier(rng, h, gates))?;
                    store.insert(format!("{p}.b"), Tensor::zeros(&[gates]))?;
                }
                CellKind::Mlp => unreachable!(),
            }
        }
    }
    Ok(())
}

/// Recurrent state; `c` is only present for LSTM cells.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    pub c: Option<Var>,
}

impl CellState {
    pub fn zeros(g: &mut Graph, kind: CellKind, rows: usize, hidden: usize) -> Self {
        let h = g.constant(Tensor::zeros(&[rows, hidden]));
        let c = (kind == CellKind::Lstm).then(|| g.constant(Tensor::zeros(&[rows, hidden])));
        CellState { h, c }
    }

    fn select(self, g: &mut Graph, old: CellState, take: &[bool]) -> Result<CellState> {
        let h = g.select_rows(self.h, old.h, take)?;
        let c = match (self.c, old.c) {
            (Some(new), Some(old)) => Some(g.select_rows(new, old, take)?),
            _ => None,
        };
        Ok(CellState { h, c })
    }
}

fn input_bias_name(kind: CellKind, p: &str) -> String {
    if kind == CellKind::Gru {
        format!("{p}.bx")
    } else {
        format!("{p}.b")
    }
}

/// `x W_x + b`: the input half of a recurrent step, computable for all rows at once.
fn project_input(g: &mut Graph, kind: CellKind, params: &Bindings, p: &str, x: Var) -> Result<Var> {
    let xw = g.matmul(x, params.var(&format!("{p}.wx"))?)?;
    g.add_bias(xw, params.var(&input_bias_name(kind, p))?)
}

/// One step given the already projected input `xp = x W_x + b`.
fn step_projected(g: &mut Graph, kind: CellKind, params: &Bindings, p: &str, xp: Var, state: CellState) -> Result<CellState> {
    let hw = g.matmul(state.h, params.var(&format!("{p}.wh"))?)?;
    match kind {
        CellKind::Rnn => {
            let pre = g.add(xp, hw)?;
            Ok(CellState { h: g.tanh(pre), c: None })
        }
        CellKind::Lstm => {
            let hd = g.shape(state.h)[1];
            let gates = g.add(xp, hw)?;
            let i = g.slice_cols(gates, 0, hd)?;
            let f = g.slice_cols(gates, hd, hd)?;
            let c_in = g.slice_cols(gates, 2 * hd, hd)?;
            let o = g.slice_cols(gates, 3 * hd, hd)?;
            let i = g.sigmoid(i);
            let f = g.sigmoid(f);
            let c_in = g.tanh(c_in);
            let o = g.sigmoid(o);
            let c_prev = state
                .c
                .ok_or_else(|| HgnError::InvalidArgument("lstm step without cell state".into()))?;
            let keep = g.mul(f, c_prev)?;
            let write = g.mul(i, c_in)?;
            let c = g.add(keep, write)?;
            let tc = g.tanh(c);
            let h = g.mul(o, tc)?;
            Ok(CellState { h, c: Some(c) })
        }
        CellKind::Gru => {
            let hd = g.shape(state.h)[1];
            let hp = g.add_bias(hw, params.var(&format!("{p}.bh"))?)?;
            let xr = g.slice_cols(xp, 0, hd)?;
            let xz = g.slice_cols(xp, hd, hd)?;
            let xn = g.slice_cols(xp, 2 * hd, hd)?;
            let hr = g.slice_cols(hp, 0, hd)?;
            let hz = g.slice_cols(hp, hd, hd)?;
            let hn = g.slice_cols(hp, 2 * hd, hd)?;
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r);
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z);
            let rh = g.mul(r, hn)?;
            let n = g.add(xn, rh)?;
            let n = g.tanh(n);
            // h' = (1 - z) n + z h = n + z (h - n)
            let diff = g.sub(state.h, n)?;
            let zd = g.mul(z, diff)?;
            let h = g.add(n, zd)?;
            Ok(CellState { h, c: None })
        }
        CellKind::Cnn | CellKind::Mlp => Err(HgnError::InvalidArgument(format!(
            "{kind} is not a recurrent cell"
        ))),
    }
}

/// One recurrent step on `x` (`B x d`) from `state` (`B x d/2`).
pub fn recurrent_cell_step(
    g: &mut Graph,
    kind: CellKind,
    params: &Bindings,
    param_prefix: &str,
    x: Var,
    state: CellState,
) -> Result<CellState> {
    let xp = project_input(g, kind, params, param_prefix, x)?;
    step_projected(g, kind, params, param_prefix, xp, state)
}

/// Convolution input rows at span position `pos`: `[z(pos-1) | z(pos) | z(pos+1)]`
/// read in the direction of travel, so the backward pass sees the span mirrored.
/// Taps outside the span point at the zero row `zero_row`.
fn conv_taps(span: Range<usize>, pos: usize, zero_row: usize, forward: bool) -> [usize; 3] {
    let left = if pos > span.start { pos - 1 } else { zero_row };
    let right = if pos + 1 < span.end { pos + 1 } else { zero_row };
    if forward {
        [left, pos, right]
    } else {
        [right, pos, left]
    }
}

fn conv_at(g: &mut Graph, params: &Bindings, p: &str, z_aug: Var, taps: [Vec<usize>; 3]) -> Result<Var> {
    let parts = [
        g.gather_rows(z_aug, &taps[0])?,
        g.gather_rows(z_aug, &taps[1])?,
        g.gather_rows(z_aug, &taps[2])?,
    ];
    let window = g.concat_cols(&parts)?;
    let pre = g.matmul(window, params.var(&format!("{p}.k"))?)?;
    let pre = g.add_bias(pre, params.var(&format!("{p}.b"))?)?;
    Ok(g.tanh(pre))
}

fn with_zero_row(g: &mut Graph, z: Var) -> Result<Var> {
    let d = g.shape(z)[1];
    let zero = g.constant(Tensor::zeros(&[1, d]));
    g.concat_rows(&[z, zero])
}

/// Encodes each row range of `z` in `spans` with direction parameters `p`,
/// returning one row per span. Spans are processed together, step `t` touching
/// position `t` of every span still long enough; finished spans keep their
/// state unchanged, so each row equals encoding that span alone.
fn encode_spans_direction(
    g: &mut Graph,
    cell: &CellConfig,
    params: &Bindings,
    p: &str,
    z: Var,
    spans: &[Range<usize>],
    forward: bool,
) -> Result<Var> {
    let rows = spans.len();
    let longest = spans.iter().map(|s| s.len()).max().unwrap_or(0);
    let position = |s: &Range<usize>, t: usize| {
        let t = t.min(s.len() - 1);
        if forward {
            s.start + t
        } else {
            s.end - 1 - t
        }
    };
    let active = |t: usize| -> Vec<bool> { spans.iter().map(|s| t < s.len()).collect() };

    match cell.kind {
        CellKind::Cnn => {
            let z_aug = with_zero_row(g, z)?;
            let zero_row = g.shape(z)[0];
            let mut acc: Option<Var> = None;
            for t in 0..longest {
                let mut taps = [Vec::with_capacity(rows), Vec::with_capacity(rows), Vec::with_capacity(rows)];
                for s in spans {
                    let tp = conv_taps(s.clone(), position(s, t), zero_row, forward);
                    for (dst, v) in taps.iter_mut().zip(tp) {
                        dst.push(v);
                    }
                }
                let conv = conv_at(g, params, p, z_aug, taps)?;
                acc = Some(match acc {
                    None => conv,
                    Some(prev) => {
                        let m = g.maximum(prev, conv)?;
                        let take = active(t);
                        if take.iter().all(|&a| a) {
                            m
                        } else {
                            g.select_rows(m, prev, &take)?
                        }
                    }
                });
            }
            acc.ok_or_else(|| HgnError::InvalidArgument("empty span".into()))
        }
        CellKind::Rnn | CellKind::Gru | CellKind::Lstm => {
            let projected = project_input(g, cell.kind, params, p, z)?;
            let mut state = CellState::zeros(g, cell.kind, rows, cell.hidden_dim);
            for t in 0..longest {
                let idx: Vec<usize> = spans.iter().map(|s| position(s, t)).collect();
                let xp = g.gather_rows(projected, &idx)?;
                let next = step_projected(g, cell.kind, params, p, xp, state)?;
                let take = active(t);
                state = if take.iter().all(|&a| a) {
                    next
                } else {
                    next.select(g, state, &take)?
                };
            }
            Ok(state.h)
        }
        CellKind::Mlp => unreachable!("mlp cells have no direction"),
    }
}

/// Masked mean over each span followed by `tanh(mean W + b)`.
fn encode_spans_mlp(g: &mut Graph, params: &Bindings, window: usize, z: Var, spans: &[Range<usize>]) -> Result<Var> {
    let longest = spans.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut acc: Option<Var> = None;
    for t in 0..longest {
        let idx: Vec<usize> = spans.iter().map(|s| s.start + t.min(s.len() - 1)).collect();
        let rows = g.gather_rows(z, &idx)?;
        acc = Some(match acc {
            None => rows,
            Some(prev) => {
                let sum = g.add(prev, rows)?;
                let take: Vec<bool> = spans.iter().map(|s| t < s.len()).collect();
                if take.iter().all(|&a| a) {
                    sum
                } else {
                    g.select_rows(sum, prev, &take)?
                }
            }
        });
    }
    let acc = acc.ok_or_else(|| HgnError::InvalidArgument("empty span".into()))?;
    let inv = Tensor::new(
        vec![spans.len(), 1],
        spans.iter().map(|s| 1.0 / s.len() as f64).collect(),
    )?;
    let inv = g.constant(inv);
    let mean = g.scale_rows(acc, inv)?;
    let pre = g.matmul(mean, params.var(&format!("gang.w{window}.mlp.w"))?)?;
    let pre = g.add_bias(pre, params.var(&format!("gang.w{window}.mlp.b"))?)?;
    Ok(g.tanh(pre))
}

fn encode_spans(g: &mut Graph, cell: &CellConfig, params: &Bindings, window: usize, z: Var, spans: &[Range<usize>]) -> Result<Var> {
    if spans.iter().any(|s| s.is_empty()) {
        return Err(HgnError::InvalidArgument("cannot encode an empty span".into()));
    }
    if cell.kind == CellKind::Mlp {
        return encode_spans_mlp(g, params, window, z, spans);
    }
    let bwd = encode_spans_direction(g, cell, params, &prefix(window, "bwd"), z, spans, false)?;
    let fwd = encode_spans_direction(g, cell, params, &prefix(window, "fwd"), z, spans, true)?;
    g.concat_cols(&[bwd, fwd])
}

/// Encodes one span (`L x d`) with the parameters of window `window`,
/// returning `1 x d` = `[backward final, forward final]`.
///
/// This walks the span one row at a time with no masking, so it doubles as the
/// reference that [`gang_forward`]'s batched schedule must reproduce exactly.
pub fn encode_span_bidirectional(g: &mut Graph, cell: &CellConfig, params: &Bindings, window: usize, span: Var) -> Result<Var> {
    let len = g.shape(span)[0];
    if len == 0 {
        return Err(HgnError::InvalidArgument("cannot encode an empty span".into()));
    }
    let rows: Vec<Var> = (0..len).map(|t| g.slice_rows(span, t, 1)).collect::<Result<_>>()?;
    match cell.kind {
        CellKind::Mlp => {
            let mut acc = rows[0];
            for &r in &rows[1..] {
                acc = g.add(acc, r)?;
            }
            let inv = g.constant(Tensor::new(vec![1, 1], vec![1.0 / len as f64])?);
            let mean = g.scale_rows(acc, inv)?;
            let pre = g.matmul(mean, params.var(&format!("gang.w{window}.mlp.w"))?)?;
            let pre = g.add_bias(pre, params.var(&format!("gang.w{window}.mlp.b"))?)?;
            Ok(g.tanh(pre))
        }
        CellKind::Cnn => {
            let span_aug = with_zero_row(g, span)?;
            let mut halves = Vec::with_capacity(2);
            for dir in DIRECTIONS {
                let p = prefix(window, dir);
                let mut acc: Option<Var> = None;
                for t in 0..len {
                    let pos = if dir == "fwd" { t } else { len - 1 - t };
                    let tp = conv_taps(0..len, pos, len, dir == "fwd");
                    let conv = conv_at(g, params, &p, span_aug, [vec![tp[0]], vec![tp[1]], vec![tp[2]]])?;
                    acc = Some(match acc {
                        None => conv,
                        Some(prev) => g.maximum(prev, conv)?,
                    });
                }
                halves.push(acc.expect("len >= 1"));
            }
            g.concat_cols(&halves)
        }
        CellKind::Rnn | CellKind::Gru | CellKind::Lstm => {
            let mut halves = Vec::with_capacity(2);
            for dir in DIRECTIONS {
                let p = prefix(window, dir);
                let mut state = CellState::zeros(g, cell.kind, 1, cell.hidden_dim);
                let order: Vec<usize> = if dir == "fwd" { (0..len).collect() } else { (0..len).rev().collect() };
                for t in order {
                    state = recurrent_cell_step(g, cell.kind, params, &p, rows[t], state)?;
                }
                halves.push(state.h);
            }
            g.concat_cols(&halves)
        }
    }
}

/// Local features for sentences laid end to end in `z` (`sum(lens) x d`).
/// Returns one `sum(lens) x d` matrix per window, in window order.
pub fn gang_forward(
    g: &mut Graph,
    windows: &WindowSpec,
    cell: &CellConfig,
    params: &Bindings,
    z: Var,
    lens: &[usize],
) -> Result<Vec<Var>> {
    let (rows, d) = (g.shape(z)[0], g.shape(z)[1]);
    if d != cell.input_dim {
        return Err(HgnError::shape("gang_forward", g.shape(z), &[cell.input_dim]));
    }
    if lens.iter().sum::<usize>() != rows || lens.contains(&0) {
        return Err(HgnError::InvalidArgument(format!(
            "segment lengths {lens:?} do not partition {rows} rows"
        )));
    }
    let mut out = Vec::with_capacity(windows.len());
    for (j, &size) in windows.sizes().iter().enumerate() {
        let k = half_width(size);
        let mut spans = Vec::with_capacity(rows);
        let mut start = 0;
        for &n in lens {
            for i in 0..n {
                let r = extract_subsequence(i, k, n)?;
                spans.push(start + r.start..start + r.end);
            }
            start += n;
        }
        out.push(encode_spans(g, cell, params, j, z, &spans)?);
    }
    Ok(out)
}

/// Forward-only convenience over a single sentence's context matrix.
pub fn local_features(windows: &WindowSpec, cell: &CellConfig, store: &ParamStore, z: &ContextMatrix) -> Result<LocalFeatureSet> {
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let zv = g.constant(z.values.clone());
    let feats = gang_forward(&mut g, windows, cell, &b, zv, &[z.rows()])?;
    Ok(LocalFeatureSet {
        features: feats.into_iter().map(|v| g.value(v).clone()).collect(),
    })
}
