//! Finite-difference check of every cell kind crossed with every fusion mode,
//! plus the frozen-Hero case.
//!
//!     cargo run --release --example gradcheck

fn main() -> hgn::Result<()> {
    let report = hgn::commands::cmd_gradcheck()?;
    print!("{}", report.table());
    println!("passed: {}", report.passed);
    Ok(())
}
