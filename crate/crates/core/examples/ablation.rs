//! Window ablation: the no-Gang baseline against single windows and their union.
//!
//!     cargo run --release --example ablation

use hgn::commands::{ablate, Sweep};
use hgn::config::RunConfig;
use hgn::data::gen_splits;
use hgn::train::{Dataset, Split};

fn main() -> hgn::Result<()> {
    let splits = gen_splits(800, 7, 5)?;
    let data = Dataset {
        train: Split::new(splits.train),
        dev: Some(Split::new(splits.dev)),
        test: Some(Split::new(splits.test)),
    };
    let mut config = RunConfig::default();
    config.hero.d_model = 32;
    config.hero.n_layers = 1;
    config.hero.d_ff = 64;
    config.train.lr = 3e-3;
    config.train.epochs = 10;

    let sweep = Sweep::parse("windows = 3; 5; 3,5,7\n")?;
    let report = ablate(&config, &sweep, &data)?;
    print!("{}", report.table());
    Ok(())
}
