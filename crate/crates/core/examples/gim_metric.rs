//! Euclidean versus cosine distance between paired classifier gradients.
//!
//! cargo run --release --example gim_metric -- [seed]

use ivr::data::{generate_synthetic, Partition, SynthConfig};
use ivr::eval::evaluate;
use ivr::invariance::GimMetric;
use ivr::training::{train, TrainConfig};

fn main() -> ivr::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed"));
    let ds = generate_synthetic(&SynthConfig::default(), seed)?;
    for metric in [GimMetric::Euclidean, GimMetric::Cosine] {
        let cfg = TrainConfig {
            seed,
            gim_metric: metric,
            ..TrainConfig::default()
        };
        let out = train(&ds, &cfg)?;
        let last = out.log.last().expect("at least one epoch");
        let r = evaluate(&out.best_params, &ds, Partition::Test)?;
        println!(
            "{:<9} final l_grad {:.4}  test seen {:.2} unseen {:.2} hm {:.2} auc {:.2}",
            metric.as_str(),
            last.losses.l_grad,
            r.best_seen,
            r.best_unseen,
            r.best_hm,
            r.auc
        );
    }
    Ok(())
}
