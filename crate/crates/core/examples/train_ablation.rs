//! Trains the loss-term ablation rows on the default synthetic benchmark and
//! prints mean test metrics over a few seeds.
//!
//! cargo run --release --example train_ablation -- [n_seeds] [epochs]

use std::time::Instant;

use ivr::data::{generate_synthetic, Partition, SynthConfig};
use ivr::eval::evaluate;
use ivr::training::{train, TrainConfig};

fn main() -> ivr::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_seeds: u64 = args.next().map_or(5, |s| s.parse().expect("n_seeds"));
    let epochs: Option<usize> = args.next().map(|s| s.parse().expect("epochs"));

    let rows: [(&str, bool, bool); 4] = [
        ("cls+comp", false, false),
        ("+rep", true, false),
        ("+grad", false, true),
        ("full", true, true),
    ];
    println!(
        "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "row", "seen", "unseen", "hm", "auc", "secs"
    );
    for (name, rep, grad) in rows {
        let t = Instant::now();
        let mut sum = [0.0; 4];
        for seed in 0..n_seeds {
            let ds = generate_synthetic(&SynthConfig::default(), seed)?;
            let mut cfg = TrainConfig {
                seed,
                use_rep: rep,
                use_grad: grad,
                ..TrainConfig::default()
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let out = train(&ds, &cfg)?;
            let r = evaluate(&out.best_params, &ds, Partition::Test)?;
            for (s, v) in sum
                .iter_mut()
                .zip([r.best_seen, r.best_unseen, r.best_hm, r.auc])
            {
                *s += v;
            }
        }
        let n = n_seeds as f64;
        println!(
            "{:<10} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.1}",
            name,
            sum[0] / n,
            sum[1] / n,
            sum[2] / n,
            sum[3] / n,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
