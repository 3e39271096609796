//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use hgn::commands::{cmd_ablate, cmd_gen_data, cmd_gradcheck, cmd_train, Sweep, GRADCHECK_TOL};
use hgn::config::RunConfig;
use hgn::data::gen_synthetic;
use hgn::fusion::{self, dot_attention, mlp_attention, sum_fusion, FusionConfig, FusionMode};
use hgn::gang::{self, half_width, local_features, CellConfig, CellKind, WindowSpec};
use hgn::hero::ContextMatrix;
use hgn::numerics::{ParamStore, Tensor};
use hgn::tagger::{entity_prf, EntitySpan};
use hgn::train::{train, Dataset, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let report = cmd_gradcheck().map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(report.cases.len() == 20, format!("{} configurations, want 20", report.cases.len()))?;
    let worst = report.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    for c in &report.cases {
        ensure(
            c.passed && c.max_rel_error <= GRADCHECK_TOL,
            format!("{}/{} max rel error {:.3e}", c.cell, c.fusion, c.max_rel_error),
        )?;
    }
    ensure(report.frozen_hero.passed, "frozen Hero received gradient")?;
    ensure(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!("20 configurations, max rel error {worst:.2e}, {secs:.1}s"))
}

fn locality() -> Check {
    let (n, d) = (12, 8);
    let sizes = vec![1, 3, 5, 7, 9];
    let windows = WindowSpec::new(sizes.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0usize;
    for trial in 0..100 {
        let kind = CellKind::ALL[trial % CellKind::ALL.len()];
        let cell = CellConfig::new(kind, d).unwrap();
        let mut store = ParamStore::new();
        gang::init_params(&windows, &cell, &mut store, &mut rng).unwrap();
        randomize(&mut store, &mut rng, 0.8);
        let z = random_tensor(&mut rng, &[n, d], 1.0);
        let base = local_features(&windows, &cell, &store, &ContextMatrix::new(z.clone()).unwrap()).unwrap();
        let i = rng.gen_range(0..n);
        for (j, &size) in sizes.iter().enumerate() {
            let k = half_width(size);
            let mut moved = z.clone();
            for r in 0..n {
                if r + k < i || r > i + k {
                    moved.row_mut(r).iter_mut().for_each(|x| *x = rng.gen_range(-3.0..3.0));
                }
            }
            let after = local_features(&windows, &cell, &store, &ContextMatrix::new(moved).unwrap()).unwrap();
            ensure(
                base.features[j].row(i) == after.features[j].row(i),
                format!("trial {trial} ({kind}) window {size} token {i} changed"),
            )?;
            compared += 1;
        }
    }
    Ok(format!("100 trials, {compared} exact comparisons"))
}

fn brute_force_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    // gang_forward against per-token re-encoding
    for trial in 0..25 {
        let kind = CellKind::ALL[trial % CellKind::ALL.len()];
        let d = 2 * rng.gen_range(1..=4);
        let n = rng.gen_range(1..=10);
        let sizes: Vec<usize> = [1, 3, 5, 7].into_iter().filter(|_| rng.gen_bool(0.6)).collect();
        let sizes = if sizes.is_empty() { vec![3] } else { sizes };
        let windows = WindowSpec::new(sizes).unwrap();
        let cell = CellConfig::new(kind, d).unwrap();
        let mut store = ParamStore::new();
        gang::init_params(&windows, &cell, &mut store, &mut rng).unwrap();
        randomize(&mut store, &mut rng, 0.8);
        let z = random_tensor(&mut rng, &[n, d], 1.0);
        let fast = local_features(&windows, &cell, &store, &ContextMatrix::new(z.clone()).unwrap()).unwrap();
        ensure(
            fast.features == brute_force_gang(&windows, &cell, &store, &z),
            format!("gang trial {trial} ({kind}, n={n}, windows {windows}) differs"),
        )?;
    }
    // attention against hand-rolled weighted sums
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let d = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=4);
        let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let hs: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let ht: Vec<Tensor> = hs.iter().map(|h| Tensor::vector(h.clone())).collect();
        let got = dot_attention(&Tensor::vector(z.clone()), &ht).unwrap();
        for (a, b) in got.data().iter().zip(hand_dot_attention(&z, &hs)) {
            worst = worst.max((a - b).abs());
        }
        let mut store = ParamStore::new();
        fusion::init_params(&FusionConfig::new(FusionMode::Mlp, d, m), &mut store, &mut rng).unwrap();
        randomize(&mut store, &mut rng, 1.0);
        let got = mlp_attention(&Tensor::vector(z.clone()), &ht, &store).unwrap();
        let w = store.get("fusion.mlp.w").unwrap();
        let b = store.get("fusion.mlp.b").unwrap().data().to_vec();
        for (a, e) in got.data().iter().zip(hand_mlp_attention(&z, &hs, w, &b)) {
            worst = worst.max((a - e).abs());
        }
    }
    ensure(worst <= 1e-12, format!("attention differs by {worst:.3e}"))?;
    // entity_prf against the quadratic matcher
    let types = ["PER", "LOC", "ORG"];
    for trial in 0..200 {
        let sents = rng.gen_range(0..6);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for _ in 0..sents {
            let n = rng.gen_range(1..12);
            let g = random_spans(&mut rng, n, &types);
            pred.push(if rng.gen_bool(0.2) {
                random_spans(&mut rng, n, &types)
            } else {
                perturb_spans(&mut rng, &g, n, &types)
            });
            gold.push(g);
        }
        let m = entity_prf(&gold, &pred).unwrap();
        let (tp, fp, fn_) = quadratic_counts(&gold, &pred);
        let (p, r, f) = prf_from_counts(tp, fp, fn_);
        ensure(
            (m.tp, m.fp, m.fn_) == (tp, fp, fn_),
            format!("prf trial {trial}: counts {:?} vs {:?}", (m.tp, m.fp, m.fn_), (tp, fp, fn_)),
        )?;
        ensure(
            (m.precision - p).abs() <= 1e-12 && (m.recall - r).abs() <= 1e-12 && (m.f1 - f).abs() <= 1e-12,
            format!("prf trial {trial}: rates differ"),
        )?;
    }
    Ok(format!("25 gang configs exact, attention max diff {worst:.1e}, 200 span sets"))
}

fn trivial_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mlp_gap = 0.0f64;
    for _ in 0..50 {
        let d = rng.gen_range(1..=8);
        let z = random_tensor(&mut rng, &[d], 2.0);
        let h = random_tensor(&mut rng, &[d], 2.0);
        let s = dot_attention(&z, std::slice::from_ref(&h)).unwrap();
        ensure(s == z.add(&h).unwrap(), "dot fusion with M=1 is not z + h")?;

        let m = rng.gen_range(1..=4);
        let zeros = vec![Tensor::zeros(&[d]); m];
        ensure(sum_fusion(&z, &zeros).unwrap() == z, "sum fusion with zero features is not z")?;

        let mut store = ParamStore::new();
        fusion::init_params(&FusionConfig::new(FusionMode::Mlp, d, m), &mut store, &mut rng).unwrap();
        randomize(&mut store, &mut rng, 1.0);
        let same = vec![z.clone(); m];
        let out = mlp_attention(&z, &same, &store).unwrap();
        for (a, b) in out.data().iter().zip(z.data()) {
            mlp_gap = mlp_gap.max((a - b).abs());
        }
    }
    ensure(mlp_gap <= 1e-12, format!("mlp attention over identical candidates off by {mlp_gap:.3e}"))?;
    Ok(format!("50 draws each; mlp identity within {mlp_gap:.1e}"))
}

fn overfit() -> Check {
    let start = Instant::now();
    let mut c = RunConfig::default();
    c.hero.d_model = 64;
    c.hero.n_layers = 2;
    c.hero.n_heads = 4;
    c.hero.d_ff = 128;
    c.windows = vec![1, 3];
    c.train.epochs = 300;
    c.train.lr = 1e-3;
    c.train.seed = 3;
    let data = Dataset {
        train: Split::new(gen_synthetic(32, 21, 3).map_err(|e| e.to_string())?),
        dev: None,
        test: None,
    };
    let rec = train(&c, &data).map_err(|e| e.to_string())?.record;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        rec.train_token_accuracy >= 0.99,
        format!("token accuracy {:.4} after 300 epochs", rec.train_token_accuracy),
    )?;
    ensure(secs < 300.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "token accuracy {:.4}, final loss {:.2e}, {secs:.1}s",
        rec.train_token_accuracy,
        rec.epochs.last().unwrap().train_loss
    ))
}

fn synthetic_experiment() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    cmd_gen_data(&corpus, 13, 2000, 5).map_err(|e| e.to_string())?;
    let mut c = RunConfig::default();
    c.hero.d_model = 32;
    c.hero.n_layers = 1;
    c.hero.n_heads = 4;
    c.hero.d_ff = 64;
    c.windows = vec![3, 5, 7];
    c.cell = CellKind::Lstm;
    c.fusion = FusionMode::Dot;
    c.train.lr = 3e-3;
    c.train.epochs = 15;
    c.train.seed = 1;
    c.data_train = Some(corpus.join("train.txt"));
    c.data_dev = Some(corpus.join("dev.txt"));
    c.data_test = Some(corpus.join("test.txt"));
    c.output_dir = dir.path().join("ablation");
    let sweep = Sweep {
        windows: vec![vec![3, 5, 7]],
        cells: vec![],
    };
    let report = cmd_ablate(&c, &sweep).map_err(|e| e.to_string())?;
    let hgn = &report.variants[0];
    let f1 = hgn.test_f1.ok_or("no test metrics")?;
    ensure(f1 >= 0.90, format!("HGN test F1 {f1:.4}"))?;
    ensure(hgn.wall_clock_secs < 600.0, format!("HGN took {:.1}s", hgn.wall_clock_secs))?;
    ensure(
        hgn.delta_vs_base > 0.0,
        format!("HGN F1 {f1:.4} not above baseline {:.4}", report.baseline.f1),
    )?;
    Ok(format!(
        "HGN test F1 {f1:.4} in {:.1}s, baseline {:.4}, delta {:+.4}",
        hgn.wall_clock_secs, report.baseline.f1, hgn.delta_vs_base
    ))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    cmd_gen_data(&corpus, 4, 120, 5).map_err(|e| e.to_string())?;
    let mut c = RunConfig::default();
    c.hero.d_model = 16;
    c.hero.n_layers = 1;
    c.hero.n_heads = 2;
    c.hero.d_ff = 32;
    c.train.epochs = 3;
    c.train.dropout = 0.1;
    c.data_train = Some(corpus.join("train.txt"));
    c.data_dev = Some(corpus.join("dev.txt"));
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        c.output_dir = dir.path().join("runs");
        cmd_train(&c).map_err(|e| e.to_string())?;
        let read = |name: &str| fs::read(c.output_dir.join(name)).map_err(|e| e.to_string());
        outputs.push((read("run.json")?, read("model.hgn")?, read("model.meta.json")?));
        fs::rename(&c.output_dir, dir.path().join(run)).map_err(|e| e.to_string())?;
    }
    ensure(outputs[0].0 == outputs[1].0, "run.json differs")?;
    ensure(outputs[0].1 == outputs[1].1, "model.hgn differs")?;
    ensure(outputs[0].2 == outputs[1].2, "model.meta.json differs")?;
    Ok(format!(
        "run.json ({} bytes) and checkpoint ({} bytes) identical",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

fn metrics_conventions() -> Check {
    let sp = |s, e, t: &str| EntitySpan::new(s, e, t);
    let five = vec![vec![sp(1, 1, "PER"), sp(3, 4, "LOC")], vec![sp(2, 2, "ORG"), sp(4, 4, "PER"), sp(6, 7, "MISC")]];
    let m = entity_prf(&five, &five).unwrap();
    ensure((m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0), format!("identical sets: {m:?}"))?;
    let gold = vec![vec![sp(1, 2, "PER"), sp(4, 4, "LOC")]];
    let pred = vec![vec![sp(1, 2, "PER")]];
    let m = entity_prf(&gold, &pred).unwrap();
    ensure(
        (m.precision, m.recall, m.f1) == (1.0, 0.5, 2.0 / 3.0),
        format!("one of two found: P={} R={} F1={}", m.precision, m.recall, m.f1),
    )?;
    let m = entity_prf(&gold, &[vec![]]).unwrap();
    ensure((m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0), format!("empty prediction: {m:?}"))?;
    Ok("P/R/F1 = 1/1/1, 1/0.5/2/3, 0/0/0 exactly".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("gradient correctness", gradient_correctness),
        ("locality invariant", locality),
        ("brute-force oracle equivalence", brute_force_equivalence),
        ("trivial-case identities", trivial_identities),
        ("overfit", overfit),
        ("synthetic local-cue experiment", synthetic_experiment),
        ("determinism", determinism),
        ("metrics conventions", metrics_conventions),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                Err(format!("panic: {msg}"))
            });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
