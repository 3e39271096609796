//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use hgn::gang::{encode_span_bidirectional, half_width, CellConfig, WindowSpec};
use hgn::numerics::{Graph, ParamStore, Tensor};
use hgn::tagger::EntitySpan;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).unwrap()
}

/// Overwrites every parameter (biases included) with uniform noise.
pub fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, bound: f64) {
    for v in store.values_mut() {
        v.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
    }
}

/// Re-encodes every token's span on its own graph, one token and window at a time.
pub fn brute_force_gang(windows: &WindowSpec, cell: &CellConfig, store: &ParamStore, z: &Tensor) -> Vec<Tensor> {
    let (n, d) = (z.rows(), z.cols());
    let mut out = Vec::new();
    for (j, &size) in windows.sizes().iter().enumerate() {
        let k = half_width(size);
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            let lo = i.saturating_sub(k);
            let hi = (i + k + 1).min(n);
            let rows: Vec<&[f64]> = (lo..hi).map(|r| z.row(r)).collect();
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let span = g.constant(Tensor::from_rows(&rows).unwrap());
            let h = encode_span_bidirectional(&mut g, cell, &b, j, span).unwrap();
            data.extend_from_slice(g.value(h).data());
        }
        out.push(Tensor::new(vec![n, d], data).unwrap());
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

fn weighted_sum(weights: &[f64], cands: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; cands[0].len()];
    for (w, c) in weights.iter().zip(cands) {
        for (o, x) in out.iter_mut().zip(c.iter()) {
            *o += w * x;
        }
    }
    out
}

/// `z + sum_j softmax(z . h_j)_j h_j`, written out with loops.
pub fn hand_dot_attention(z: &[f64], hs: &[Vec<f64>]) -> Vec<f64> {
    let scores: Vec<f64> = hs.iter().map(|h| dot(z, h)).collect();
    let cands: Vec<&[f64]> = hs.iter().map(Vec::as_slice).collect();
    let u = weighted_sum(&softmax(&scores), &cands);
    z.iter().zip(&u).map(|(a, b)| a + b).collect()
}

/// Query `m = concat(z, h_1..h_M) W + b`, then softmax over `m . c` for `c` in `[z, h_1..h_M]`.
pub fn hand_mlp_attention(z: &[f64], hs: &[Vec<f64>], w: &Tensor, b: &[f64]) -> Vec<f64> {
    let mut cands: Vec<&[f64]> = vec![z];
    cands.extend(hs.iter().map(Vec::as_slice));
    let flat: Vec<f64> = cands.iter().flat_map(|c| c.iter().copied()).collect();
    let d = z.len();
    let m: Vec<f64> = (0..d)
        .map(|col| b[col] + (0..flat.len()).map(|r| flat[r] * w.get(r, col)).sum::<f64>())
        .collect();
    let scores: Vec<f64> = cands.iter().map(|c| dot(&m, c)).collect();
    weighted_sum(&softmax(&scores), &cands)
}

/// `(tp, fp, fn)` by comparing every predicted span against every gold span.
pub fn quadratic_counts(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        for ps in p {
            let mut found = false;
            for gs in g {
                if gs.start == ps.start && gs.end == ps.end && gs.kind == ps.kind {
                    found = true;
                }
            }
            if found {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        for gs in g {
            if !p.iter().any(|ps| ps.start == gs.start && ps.end == gs.end && ps.kind == gs.kind) {
                fn_ += 1;
            }
        }
    }
    (tp, fp, fn_)
}

/// Precision, recall and F1 from counts via the textbook harmonic mean.
pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Non-overlapping random spans over `n` tokens with types drawn from `types`.
pub fn random_spans(rng: &mut ChaCha8Rng, n: usize, types: &[&str]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut pos = 1;
    while pos <= n {
        if rng.gen_bool(0.35) {
            let len = rng.gen_range(1..=3).min(n - pos + 1);
            spans.push(EntitySpan::new(pos, pos + len - 1, types[rng.gen_range(0..types.len())]));
            pos += len;
        } else {
            pos += 1;
        }
    }
    spans
}

/// A perturbed copy of `spans`: some dropped, some shifted, some retyped, some new.
pub fn perturb_spans(rng: &mut ChaCha8Rng, spans: &[EntitySpan], n: usize, types: &[&str]) -> Vec<EntitySpan> {
    let mut out = Vec::new();
    for s in spans {
        match rng.gen_range(0..5) {
            0 => {}
            1 => out.push(EntitySpan::new(s.start, s.end, types[rng.gen_range(0..types.len())])),
            2 if s.end < n => out.push(EntitySpan::new(s.start, s.end + 1, s.kind.clone())),
            _ => out.push(s.clone()),
        }
    }
    if rng.gen_bool(0.3) && n > 0 {
        let p = rng.gen_range(1..=n);
        out.push(EntitySpan::new(p, p, types[0]));
    }
    out.sort_by_key(|s| (s.start, s.end, s.kind.clone()));
    out.dedup();
    out
}
