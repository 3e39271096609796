//! Train briefly, save a checkpoint, reload it and tag raw tokens.
//!
//!     cargo run --release --example checkpoint_predict

use std::fs;

use hgn::commands::{cmd_eval, cmd_gen_data, cmd_predict, cmd_train};
use hgn::config::RunConfig;

fn main() -> hgn::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| hgn::HgnError::io(std::env::temp_dir(), e))?;
    let corpus = dir.path().join("corpus");
    cmd_gen_data(&corpus, 3, 800, 3)?;

    let mut config = RunConfig::parse(
        "hero.d_model = 32\nhero.n_layers = 1\nhero.d_ff = 64\ntrain.epochs = 12\ntrain.lr = 0.003\n",
    )?;
    config.data_train = Some(corpus.join("train.txt"));
    config.data_dev = Some(corpus.join("dev.txt"));
    config.output_dir = dir.path().join("run");
    let record = cmd_train(&config)?;
    println!("trained {} epochs, best {}", record.epochs.len(), record.best_epoch);

    let ck = dir.path().join("run/model.hgn");
    let metrics = cmd_eval(&ck, &corpus.join("test.txt"), None, None)?;
    print!("{}", metrics.table());

    let input = dir.path().join("input.txt");
    fs::write(&input, "dr\namber\nkalo\n\nsori\nnear\nbrook\n\nbrook\ncorp\n").unwrap();
    print!("{}", cmd_predict(&ck, &input, None)?);
    Ok(())
}
