use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hgn::cli::exit_status;
use hgn::data::read_conll;
use hgn::hero::FrozenEmbeddings;
use hgn::model::Checkpoint;
use hgn::numerics::Tensor;
use hgn::tagger::Metrics;
use hgn::train::{predict_split, Split};
use hgn::HgnError;
use serde_json::Value;

fn hgn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgn"))
        .args(args)
        .env_remove("HGN_LOG")
        .output()
        .expect("spawn hgn")
}

fn ok(args: &[&str]) -> String {
    let out = hgn(args);
    assert!(
        out.status.success(),
        "hgn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path, corpus: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "hero.d_model = 8\nhero.n_heads = 2\nhero.d_ff = 16\nhero.n_layers = 1\n\
         gang.windows = 1,3\ntrain.epochs = 2\ntrain.batch_size = 8\n\
         data.train = {}\ndata.dev = {}\ndata.test = {}\noutput.dir = {}\n{extra}",
        corpus.join("train.txt").display(),
        corpus.join("dev.txt").display(),
        corpus.join("test.txt").display(),
        dir.join("run").display(),
    );
    let path = dir.join("hgn.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn gen(dir: &Path, sentences: usize) -> PathBuf {
    let corpus = dir.join("corpus");
    ok(&["gen-data", "--out", s(&corpus), "--seed", "3", "--sentences", &sentences.to_string(), "--cue-width", "3"]);
    corpus
}

#[test]
fn train_eval_predict_agree() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), 40);
    let cfg = small_config(dir.path(), &corpus, "");
    let record: Value = serde_json::from_str(&ok(&["train", "--config", s(&cfg)])).unwrap();
    let run = dir.path().join("run");
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(record, on_disk);
    let epochs: Vec<u64> = record["epochs"].as_array().unwrap().iter().map(|e| e["epoch"].as_u64().unwrap()).collect();
    assert_eq!(epochs, vec![1, 2]);
    assert_eq!(record["clipping"]["enabled"], Value::Bool(true));
    assert!(run.join("timing.json").exists());

    // eval on the training split reproduces the recorded train metrics
    let ck = run.join("model.hgn");
    let train = corpus.join("train.txt");
    let out = dir.path().join("m.json");
    let table = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&train), "--out", s(&out)]);
    assert!(table.contains("overall"));
    let metrics: Metrics = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let recorded: Metrics = serde_json::from_value(record["train"].clone()).unwrap();
    assert_eq!(metrics, recorded);

    // eval twice gives identical bytes
    let first = fs::read(&out).unwrap();
    let again = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&train), "--out", s(&out)]);
    assert_eq!(table, again);
    assert_eq!(first, fs::read(&out).unwrap());
    ok(&["eval", "--checkpoint", s(&ck), "--data", s(&train)]);
    assert!(run.join("model.metrics.json").exists());

    // predict matches the internal decoding and the line-count contract
    let test = corpus.join("test.txt");
    let text = ok(&["predict", "--checkpoint", s(&ck), "--input", s(&test)]);
    let gold = read_conll(&test).unwrap();
    let tokens: usize = gold.iter().map(|g| g.len()).sum();
    assert_eq!(text.lines().count(), tokens + gold.len());
    let loaded = Checkpoint::load(&ck).unwrap();
    let internal = predict_split(&loaded.model, &loaded.vocab, &loaded.scheme, &Split::new(gold.clone())).unwrap();
    let predicted = hgn::data::parse_conll(&text, "stdout").unwrap();
    for ((p, g), tags) in predicted.iter().zip(&gold).zip(&internal) {
        assert_eq!(p.tokens, g.tokens);
        assert_eq!(&p.tags, tags);
    }
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), 24);
    let cfg = small_config(dir.path(), &corpus, "train.dropout = 0.2\n");
    let a = ok(&["train", "--config", s(&cfg)]);
    let ck_a = fs::read(dir.path().join("run/model.hgn")).unwrap();
    let b = ok(&["train", "--config", s(&cfg)]);
    let ck_b = fs::read(dir.path().join("run/model.hgn")).unwrap();
    assert_eq!(a, b);
    assert_eq!(ck_a, ck_b);
}

#[test]
fn one_epoch_one_entry_and_logging() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), 16);
    let cfg = small_config(dir.path(), &corpus, "train.epochs = 1\n");
    let out = Command::new(env!("CARGO_BIN_EXE_hgn"))
        .args(["train", "--config", s(&cfg), "--train-on-dev"])
        .env("HGN_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success());
    let rec: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec["epochs"].as_array().unwrap().len(), 1);
    assert_eq!(rec["config"]["train"]["train_on_dev"], Value::Bool(true));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 1"));
}

#[test]
fn empty_predict_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), 12);
    let cfg = small_config(dir.path(), &corpus, "train.epochs = 1\n");
    ok(&["train", "--config", s(&cfg)]);
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    let ck = dir.path().join("run/model.hgn");
    assert_eq!(ok(&["predict", "--checkpoint", s(&ck), "--input", s(&empty)]), "");
}

#[test]
fn no_entities_anywhere_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("plain.txt");
    fs::write(&data, "a O\nb O\n\nc O\n").unwrap();
    let cfg = dir.path().join("hgn.cfg");
    fs::write(
        &cfg,
        format!(
            "hero.d_model = 8\nhero.n_heads = 2\nhero.n_layers = 1\ntrain.epochs = 1\ndata.train = {}\noutput.dir = {}\n",
            data.display(),
            dir.path().join("run").display()
        ),
    )
    .unwrap();
    ok(&["train", "--config", s(&cfg)]);
    let out = dir.path().join("m.json");
    ok(&["eval", "--checkpoint", s(&dir.path().join("run/model.hgn")), "--data", s(&data), "--out", s(&out)]);
    let m: Metrics = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!((m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_), (0.0, 0.0, 0.0, 0, 0, 0));
}

#[test]
fn ablate_reports_baseline_plus_each_window_set() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), 12);
    let cfg = small_config(dir.path(), &corpus, "train.epochs = 1\n");
    let sweep = dir.path().join("sweep.txt");
    fs::write(&sweep, "# single windows and the combination\nwindows = 3; 5; 7; 9; 11; 3,5,7\n").unwrap();
    let table = ok(&["ablate", "--config", s(&cfg), "--sweep", s(&sweep)]);
    assert_eq!(table.lines().count(), 1 + 7);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/ablation.json")).unwrap()).unwrap();
    assert_eq!(report["variants"].as_array().unwrap().len(), 6);
    assert_eq!(report["baseline"]["windows"], serde_json::json!([]));
    assert_eq!(report["baseline"]["delta_vs_base"], serde_json::json!(0.0));
}

#[test]
fn frozen_hero_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), 16);
    let d = 8;
    let mut seed = 1.0f64;
    for split in ["train", "dev", "test"] {
        let sents = read_conll(&corpus.join(format!("{split}.txt"))).unwrap();
        let tensors: Vec<Tensor> = sents
            .iter()
            .map(|s| {
                let data = (0..s.len() * d)
                    .map(|_| {
                        seed = (seed * 1.618_033_988_7) % 1.0 + 0.1;
                        seed - 0.6
                    })
                    .collect();
                Tensor::new(vec![s.len(), d], data).unwrap()
            })
            .collect();
        FrozenEmbeddings::save(&dir.path().join(format!("{split}.emb")), &tensors).unwrap();
    }
    let extra = format!(
        "hero.variant = frozen_file\nhero.frozen.train = {0}/train.emb\nhero.frozen.dev = {0}/dev.emb\nhero.frozen.test = {0}/test.emb\ntrain.epochs = 1\n",
        dir.path().display()
    );
    let cfg = small_config(dir.path(), &corpus, &extra);
    let rec: Value = serde_json::from_str(&ok(&["train", "--config", s(&cfg)])).unwrap();
    assert_eq!(rec["model"]["hero"]["variant"], "frozen_file");
    let ck = dir.path().join("run/model.hgn");
    let test = corpus.join("test.txt");
    let emb = dir.path().join("test.emb");
    ok(&["eval", "--checkpoint", s(&ck), "--data", s(&test), "--embeddings", s(&emb)]);
    let missing = hgn(&["eval", "--checkpoint", s(&ck), "--data", s(&test)]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "gang.windows = 4\n").unwrap();
    assert_eq!(hgn(&["train", "--config", s(&bad)]).status.code(), Some(1));
    assert_eq!(hgn(&["eval", "--checkpoint", "/nonexistent.hgn", "--data", "x"]).status.code(), Some(1));
    assert_eq!(hgn(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(hgn(&["gen-data", "--out", s(dir.path()), "--cue-width", "4"]).status.code(), Some(1));
    assert_eq!(exit_status(&Ok(true)), 0);
    assert_eq!(exit_status(&Ok(false)), 2);
    assert_eq!(exit_status(&Err(HgnError::NonFinite("loss".into()))), 2);
    assert_eq!(exit_status(&Err(HgnError::Config("x".into()))), 1);
}

#[test]
fn gradcheck_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    let table = ok(&["gradcheck", "--out", s(&out)]);
    assert_eq!(table.lines().filter(|l| l.ends_with(" ok")).count(), 21);
    let report: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["cases"].as_array().unwrap().len(), 20);
    assert_eq!(report["frozen_hero"]["hero_params"], 0);
}
