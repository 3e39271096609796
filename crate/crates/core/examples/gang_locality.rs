//! Each window feature depends only on the tokens inside its window. Change one
//! context row and see which outputs move.
//!
//!     cargo run --example gang_locality

use hgn::gang::{init_params, local_features, CellConfig, CellKind, WindowSpec};
use hgn::hero::ContextMatrix;
use hgn::numerics::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hgn::Result<()> {
    let (n, d, changed) = (10, 6, 4);
    let windows = WindowSpec::new(vec![1, 3, 5])?;
    let cell = CellConfig::new(CellKind::Lstm, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    init_params(&windows, &cell, &mut store, &mut rng)?;

    let z: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut bumped = z.clone();
    for x in &mut bumped[changed * d..(changed + 1) * d] {
        *x += 1.0;
    }
    let a = local_features(&windows, &cell, &store, &ContextMatrix::new(Tensor::new(vec![n, d], z)?)?)?;
    let b = local_features(&windows, &cell, &store, &ContextMatrix::new(Tensor::new(vec![n, d], bumped)?)?)?;

    println!("context row {changed} changed; '*' marks features that moved");
    for (j, size) in windows.sizes().iter().enumerate() {
        let marks: String = (0..n)
            .map(|i| if a.features[j].row(i) == b.features[j].row(i) { '.' } else { '*' })
            .collect();
        println!("window {size:>2}  {marks}");
    }
    Ok(())
}
