//! The four ways of combining a token's context vector with its local features.
//!
//!     cargo run --example fusion_modes

use hgn::fusion::{concat_fusion, dot_attention, mlp_attention, sum_fusion};
use hgn::numerics::{ParamStore, Tensor};

fn show(name: &str, t: &Tensor) {
    let cells: Vec<String> = t.data().iter().map(|v| format!("{v:+.3}")).collect();
    println!("{name:<7} [{}]", cells.join(", "));
}

fn main() -> hgn::Result<()> {
    let z = Tensor::vector(vec![1.0, 0.0, -0.5, 0.25]);
    let h = [Tensor::vector(vec![0.5, 0.5, 0.0, 0.0]), Tensor::vector(vec![-1.0, 0.2, 0.3, 0.1])];

    show("z", &z);
    show("dot", &dot_attention(&z, &h)?);
    show("add", &sum_fusion(&z, &h)?);
    show("concat", &concat_fusion(&z, &h)?);

    // a hand-set query: only the first coordinate of each candidate scores
    let (m, d) = (h.len(), z.len());
    let mut w = Tensor::zeros(&[(m + 1) * d, d]);
    for j in 0..=m {
        w.data_mut()[j * d * d] = 1.0;
    }
    let mut store = ParamStore::new();
    store.insert("fusion.mlp.w", w)?;
    store.insert("fusion.mlp.b", Tensor::zeros(&[d]))?;
    show("mlp", &mlp_attention(&z, &h, &store)?);
    Ok(())
}
