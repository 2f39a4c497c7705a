//! Compares the analytic gradient of the full objective, including the
//! second-order gradient-alignment path, with central differences.
//!
//! cargo run --release --example gradient_check

use ivr::data::{generate_synthetic, SynthConfig, TripletSampler};
use ivr::invariance::GimMetric;
use ivr::model::{ModelParams, PARAM_NAMES};
use ivr::tensor::{Graph, Rng};
use ivr::training::{build_loss, init_params, total_loss, TrainConfig};

fn main() -> ivr::Result<()> {
    let synth = SynthConfig {
        n_attrs: 2,
        n_objs: 2,
        d_attr: 2,
        d_obj: 2,
        d_spur: 2,
        samples_per_pair: 6,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&synth, 0)?;
    let batch = TripletSampler::new(&ds)?.sample(2, &mut Rng::new(1));

    for metric in [GimMetric::Euclidean, GimMetric::Cosine] {
        let cfg = TrainConfig {
            gim_metric: metric,
            emb_hidden: 4,
            embed_dim: 4,
            word_dim: 4,
            disent_dim: 4,
            ..TrainConfig::default()
        };
        let params = init_params(&ds, &cfg)?;
        // Masks are piecewise constant in the parameters; hold them fixed.
        let masks = {
            let mut g = Graph::new();
            let pv = params.bind(&mut g, true);
            build_loss(&mut g, &pv, &params, &ds, &batch, &cfg, None)?.masks
        };
        let (bd, grads) = total_loss(&params, &ds, &batch, &cfg, masks.as_ref())?;
        let f = |p: &ModelParams| -> ivr::Result<f64> {
            Ok(total_loss(p, &ds, &batch, &cfg, masks.as_ref())?.0.total)
        };
        println!("{} (loss {:.6})", metric.as_str(), bd.total);
        let h = 1e-5;
        let mut p = params.clone();
        for (k, name) in PARAM_NAMES.iter().enumerate() {
            let mut worst = 0.0f64;
            for j in 0..params.tensors()[k].len() {
                let orig = params.tensors()[k].as_slice()[j];
                p.get_mut(name).unwrap().as_mut_slice()[j] = orig + h;
                let up = f(&p)?;
                p.get_mut(name).unwrap().as_mut_slice()[j] = orig - h;
                let down = f(&p)?;
                p.get_mut(name).unwrap().as_mut_slice()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[k].as_slice()[j];
                worst = worst
                    .max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
            }
            println!("  {name:<16} max rel err {worst:.2e}");
        }
    }
    Ok(())
}
