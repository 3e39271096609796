//! Train a small Hero-Gang tagger on the synthetic local-cue corpus and
//! compare it against the majority-tag baseline.
//!
//!     cargo run --release --example train_synthetic

use hgn::config::RunConfig;
use hgn::data::synthetic::majority_baseline;
use hgn::data::gen_splits;
use hgn::train::{train, Dataset, Split};

fn main() -> hgn::Result<()> {
    let splits = gen_splits(1000, 13, 5)?;
    let baseline = majority_baseline(&splits.train, &splits.test)?;

    let mut config = RunConfig::default();
    config.hero.d_model = 32;
    config.hero.n_layers = 1;
    config.hero.d_ff = 64;
    config.train.lr = 3e-3;
    config.train.epochs = 12;
    config.train.seed = 1;

    let data = Dataset {
        train: Split::new(splits.train),
        dev: Some(Split::new(splits.dev)),
        test: Some(Split::new(splits.test)),
    };
    let trained = train(&config, &data)?;
    let rec = &trained.record;
    for e in &rec.epochs {
        let dev = e.dev.as_ref().map(|m| m.f1).unwrap_or(f64::NAN);
        println!("epoch {:>2}  loss {:.4}  dev F1 {:.4}", e.epoch, e.train_loss, dev);
    }
    let test = rec.test.as_ref().expect("test split was given");
    println!("best epoch {}", rec.best_epoch);
    println!("majority baseline test F1 {:.4}", baseline.f1);
    println!("hero-gang         test F1 {:.4}", test.f1);
    print!("{}", test.table());
    Ok(())
}
