//! Sensitivity of the full model to the masked-channel ratio.
//!
//! cargo run --release --example alpha_sweep -- [seed]

use ivr::data::{generate_synthetic, Partition, SynthConfig};
use ivr::eval::evaluate;
use ivr::training::{train, TrainConfig};

fn main() -> ivr::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed"));
    let ds = generate_synthetic(&SynthConfig::default(), seed)?;
    println!(
        "{:>6} {:>7} {:>7} {:>7} {:>7}",
        "alpha", "seen", "unseen", "hm", "auc"
    );
    for alpha in [1.0 / 6.0, 0.25, 1.0 / 3.0, 0.5] {
        let cfg = TrainConfig {
            seed,
            alpha,
            ..TrainConfig::default()
        };
        let out = train(&ds, &cfg)?;
        let r = evaluate(&out.best_params, &ds, Partition::Test)?;
        println!(
            "{alpha:>6.3} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
            r.best_seen, r.best_unseen, r.best_hm, r.auc
        );
    }
    Ok(())
}
