//! Parse gold and predicted CoNLL columns and score them at the entity level.
//!
//!     cargo run --example conll_metrics

use hgn::data::parse_conll;
use hgn::tagger::{bio_decode, entity_prf};

const GOLD: &str = "\
dr B-PER
amber I-PER
visited O
oslo B-LOC

acme B-ORG
corp I-ORG
";

// the second entity is cut short and an I- tag starts a new span
const PRED: &str = "\
dr B-PER
amber I-PER
visited O
oslo B-LOC

acme B-ORG
corp O
";

fn main() -> hgn::Result<()> {
    let gold = parse_conll(GOLD, "gold")?;
    let pred = parse_conll(PRED, "pred")?;
    let spans = |c: &[hgn::data::LabeledSequence]| c.iter().map(|s| bio_decode(&s.tags)).collect::<hgn::Result<Vec<_>>>();
    let g = spans(&gold)?;
    let p = spans(&pred)?;
    for (i, (gs, ps)) in g.iter().zip(&p).enumerate() {
        println!("sentence {i}: gold {gs:?}");
        println!("            pred {ps:?}");
    }
    let m = entity_prf(&g, &p)?;
    print!("{}", m.table());
    println!("{}", m.to_json()?);

    // a stray I- tag is repaired into a span of its own
    println!("{:?}", bio_decode(&["O", "I-LOC", "I-LOC", "B-PER"])?);
    Ok(())
}
