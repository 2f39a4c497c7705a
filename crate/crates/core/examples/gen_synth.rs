//! Generates the default synthetic benchmark, writes it to disk and reads it
//! back.
//!
//! cargo run --release --example gen_synth -- [out_dir] [seed]

use ivr::data::{generate_synthetic, read_dataset, write_dataset, Partition, SynthConfig};

fn main() -> ivr::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synth_data".into());
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let cfg = SynthConfig::default();
    let ds = generate_synthetic(&cfg, seed)?;
    write_dataset(&ds, &out)?;
    let back = read_dataset(&out)?;
    assert_eq!(back, ds);

    println!("{out}: N={} D={}", ds.len(), ds.dim());
    for part in [Partition::Train, Partition::Val, Partition::Test] {
        println!("  {:<5} {} samples", part.as_str(), ds.indices(part).len());
    }
    let names = |pairs: &[ivr::data::Pair]| {
        pairs
            .iter()
            .map(|&p| ds.vocab().pair_name(p))
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("  seen:   {}", names(&ds.split().seen));
    println!("  unseen: {}", names(&ds.split().unseen));
    Ok(())
}
