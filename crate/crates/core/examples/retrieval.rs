//! Trains the full model, then retrieves the top-5 test samples for every
//! composition, seen and unseen.
//!
//! cargo run --release --example retrieval -- [seed]

use ivr::data::{generate_synthetic, SynthConfig};
use ivr::eval::retrieve_topk;
use ivr::training::{train, TrainConfig};

fn main() -> ivr::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed"));
    let ds = generate_synthetic(&SynthConfig::default(), seed)?;
    let out = train(
        &ds,
        &TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    )?;
    let vocab = ds.vocab();
    for (kind, pairs) in [("seen", &ds.split().seen), ("unseen", &ds.split().unseen)] {
        for &p in pairs.iter() {
            let hits = retrieve_topk(
                &out.best_params,
                &ds,
                (&vocab.attrs[p.attr], &vocab.objs[p.obj]),
                5,
            )?;
            let correct = hits.iter().filter(|h| h.pair == p).count();
            let got: Vec<String> = hits.iter().map(|h| vocab.pair_name(h.pair)).collect();
            println!(
                "{kind:<6} {:<12} {correct}/5  [{}]",
                vocab.pair_name(p),
                got.join(", ")
            );
        }
    }
    Ok(())
}
