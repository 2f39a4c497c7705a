//! Calibration sweep on a trained model: prints the seen/unseen curve and
//! writes report.json and curve.csv.
//!
//! cargo run --release --example evaluate -- [out_dir] [epochs]

use ivr::data::{generate_synthetic, Partition, SynthConfig};
use ivr::eval::evaluate;
use ivr::training::{train, TrainConfig};

fn main() -> ivr::Result<()> {
    let mut args = std::env::args().skip(1);
    let out_dir = args.next().unwrap_or_else(|| "eval_report".into());
    let epochs: usize = args.next().map_or(10, |s| s.parse().expect("epochs"));

    let ds = generate_synthetic(&SynthConfig::default(), 0)?;
    let cfg = TrainConfig {
        epochs,
        use_rep: false,
        use_grad: false,
        ..TrainConfig::default()
    };
    let out = train(&ds, &cfg)?;
    let report = evaluate(&out.best_params, &ds, Partition::Test)?;

    println!("{:>10} {:>8} {:>8}", "bias", "seen", "unseen");
    for p in &report.curve {
        println!("{:>10.4} {:>8.3} {:>8.3}", p.bias, p.seen_acc, p.unseen_acc);
    }
    println!(
        "seen {:.2} unseen {:.2} hm {:.2} auc {:.2}",
        report.best_seen, report.best_unseen, report.best_hm, report.auc
    );
    report.write(&out_dir)?;
    Ok(())
}
