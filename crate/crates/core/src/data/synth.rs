//! Synthetic feature datasets with a controllable spurious channel.
//!
//! Every feature vector is the concatenation of three blocks:
//!
//! 1. attribute block: `μ_a + N(0, σ²)`
//! 2. object block: `μ_o + N(0, σ²)`
//! 3. spurious block: `ν_(a,o) + N(0, σ²)`
//!
//! Prototypes are drawn once from `N(0, I)`. Samples of seen pairs carry
//! their own pair prototype in block 3, so block 3 alone identifies a seen
//! composition. Samples of unseen pairs instead carry the prototype of a
//! random seen pair sharing neither their attribute nor their object (or a
//! fresh `N(0, I)` draw when no such pair exists). A model that relies on
//! block 3 is therefore misled on unseen compositions.

use serde::{Deserialize, Serialize};

use super::{FeatureDataset, Pair, PairSplit, Partition, SampleLabel, Vocab};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_attrs: usize,
    pub n_objs: usize,
    pub d_attr: usize,
    pub d_obj: usize,
    pub d_spur: usize,
    pub samples_per_pair: usize,
    pub unseen_fraction: f64,
    pub sigma: f64,
    /// Share of each seen pair's samples assigned to train; the rest of the
    /// seen samples go to val and test.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_attrs: 4,
            n_objs: 4,
            d_attr: 8,
            d_obj: 8,
            d_spur: 8,
            samples_per_pair: 200,
            unseen_fraction: 0.25,
            sigma: 0.1,
            train_fraction: 0.6,
            val_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn dim(&self) -> usize {
        self.d_attr + self.d_obj + self.d_spur
    }

    pub fn n_unseen(&self) -> usize {
        let total = (self.n_attrs * self.n_objs) as f64;
        // The epsilon keeps e.g. 0.1 × 30 from rounding up to 4.
        (self.unseen_fraction * total - 1e-9).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_attrs < 2 || self.n_objs < 2 {
            return bad(format!(
                "need at least 2 attributes and 2 objects, got {} x {}",
                self.n_attrs, self.n_objs
            ));
        }
        if self.d_attr == 0 || self.d_obj == 0 || self.d_spur == 0 {
            return bad("block dimensions must be >= 1".into());
        }
        if self.samples_per_pair == 0 {
            return bad("samples_per_pair must be >= 1".into());
        }
        if !(self.unseen_fraction > 0.0 && self.unseen_fraction < 1.0) {
            return bad(format!(
                "unseen_fraction must lie in (0, 1), got {}",
                self.unseen_fraction
            ));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        let fr = (self.train_fraction, self.val_fraction);
        if !(fr.0 > 0.0 && fr.1 >= 0.0 && fr.0 + fr.1 <= 1.0) {
            return bad(format!(
                "train/val fractions must satisfy 0 < train, 0 <= val, train + val <= 1, got {fr:?}"
            ));
        }
        Ok(())
    }
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<FeatureDataset> {
    cfg.validate()?;
    let mut root = Rng::new(seed);
    let mut split_rng = root.fork(1);
    let mut proto_rng = root.fork(2);
    let mut sample_rng = root.fork(3);

    let split = choose_split(cfg, &mut split_rng)?;

    let draw = |rng: &mut Rng, d: usize| -> Vec<f64> { (0..d).map(|_| rng.normal()).collect() };
    let attr_proto: Vec<Vec<f64>> = (0..cfg.n_attrs)
        .map(|_| draw(&mut proto_rng, cfg.d_attr))
        .collect();
    let obj_proto: Vec<Vec<f64>> = (0..cfg.n_objs)
        .map(|_| draw(&mut proto_rng, cfg.d_obj))
        .collect();
    // Indexed attr-major: pair (a, o) at a * n_objs + o.
    let pair_proto: Vec<Vec<f64>> = (0..cfg.n_attrs * cfg.n_objs)
        .map(|_| draw(&mut proto_rng, cfg.d_spur))
        .collect();

    let n = cfg.samples_per_pair;
    let n_train = ((cfg.train_fraction * n as f64).round() as usize).clamp(1, n);
    let n_val = ((cfg.val_fraction * n as f64).round() as usize).min(n - n_train);
    let n_unseen_val = n / 2;

    let mut data = Vec::with_capacity(cfg.n_attrs * cfg.n_objs * n * cfg.dim());
    let mut labels = Vec::new();
    for a in 0..cfg.n_attrs {
        for o in 0..cfg.n_objs {
            let pair = Pair::new(a, o);
            let unseen = split.is_unseen(pair);
            let decoys: Vec<Pair> = split
                .seen
                .iter()
                .copied()
                .filter(|p| p.attr != a && p.obj != o)
                .collect();
            for s in 0..n {
                let partition = if unseen {
                    if s < n_unseen_val {
                        Partition::Val
                    } else {
                        Partition::Test
                    }
                } else if s < n_train {
                    Partition::Train
                } else if s < n_train + n_val {
                    Partition::Val
                } else {
                    Partition::Test
                };
                let noisy = |rng: &mut Rng, proto: &[f64], out: &mut Vec<f64>| {
                    out.extend(proto.iter().map(|m| m + cfg.sigma * rng.normal()));
                };
                noisy(&mut sample_rng, &attr_proto[a], &mut data);
                noisy(&mut sample_rng, &obj_proto[o], &mut data);
                let spur = if !unseen {
                    pair_proto[a * cfg.n_objs + o].clone()
                } else if decoys.is_empty() {
                    draw(&mut sample_rng, cfg.d_spur)
                } else {
                    let d = decoys[sample_rng.below(decoys.len())];
                    pair_proto[d.attr * cfg.n_objs + d.obj].clone()
                };
                noisy(&mut sample_rng, &spur, &mut data);
                labels.push(SampleLabel { pair, partition });
            }
        }
    }

    let vocab = Vocab::new(
        (0..cfg.n_attrs).map(|i| format!("attr{i}")).collect(),
        (0..cfg.n_objs).map(|i| format!("obj{i}")).collect(),
    )?;
    let features = Tensor::from_vec(labels.len(), cfg.dim(), data)?;
    FeatureDataset::new(vocab, split, features, labels)
}

/// Picks the unseen pairs at random, keeping each attribute and object in
/// at least two seen pairs (one when the other vocabulary has only two entries).
fn choose_split(cfg: &SynthConfig, rng: &mut Rng) -> Result<PairSplit> {
    let k = cfg.n_unseen();
    let total = cfg.n_attrs * cfg.n_objs;
    if k == 0 || k >= total {
        return Err(Error::Config(format!(
            "unseen fraction {} gives {k} unseen of {total} pairs",
            cfg.unseen_fraction
        )));
    }
    let min_per_attr = if cfg.n_objs >= 3 { 2 } else { 1 };
    let min_per_obj = if cfg.n_attrs >= 3 { 2 } else { 1 };

    let all: Vec<Pair> = (0..cfg.n_attrs)
        .flat_map(|a| (0..cfg.n_objs).map(move |o| Pair::new(a, o)))
        .collect();
    for _ in 0..1000 {
        let mut order = all.clone();
        rng.shuffle(&mut order);
        let mut attr_seen = vec![cfg.n_objs; cfg.n_attrs];
        let mut obj_seen = vec![cfg.n_attrs; cfg.n_objs];
        let mut unseen = Vec::with_capacity(k);
        for p in order {
            if unseen.len() == k {
                break;
            }
            if attr_seen[p.attr] > min_per_attr && obj_seen[p.obj] > min_per_obj {
                attr_seen[p.attr] -= 1;
                obj_seen[p.obj] -= 1;
                unseen.push(p);
            }
        }
        if unseen.len() == k {
            unseen.sort();
            let seen = all
                .iter()
                .copied()
                .filter(|p| !unseen.contains(p))
                .collect();
            return Ok(PairSplit { seen, unseen });
        }
    }
    Err(Error::Config(format!(
        "cannot hold out {k} of {total} pairs while keeping every attribute in >= {min_per_attr} \
         and every object in >= {min_per_obj} seen pairs"
    )))
}
