#![allow(dead_code)]

use ivr::data::{
    generate_synthetic, FeatureDataset, Pair, SynthConfig, TripletBatch, TripletSampler,
};
use ivr::eval::{harmonic_mean, ScoreMatrix};
use ivr::invariance::{GimMetric, TripletMasks};
use ivr::model::ModelParams;
use ivr::tensor::{Graph, Rng, Tensor};
use ivr::training::{build_loss, init_params, total_loss, TrainConfig};

/// Floor on the denominator of the relative error, so that gradients that
/// are zero up to rounding do not blow the ratio up.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// D=6, H=E=4, 2 attrs x 2 objs.
pub fn tiny(seed: u64, metric: GimMetric) -> (FeatureDataset, TrainConfig, ModelParams) {
    let synth = SynthConfig {
        n_attrs: 2,
        n_objs: 2,
        d_attr: 2,
        d_obj: 2,
        d_spur: 2,
        samples_per_pair: 6,
        unseen_fraction: 0.25,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&synth, seed).unwrap();
    let cfg = TrainConfig {
        seed,
        gim_metric: metric,
        emb_hidden: 4,
        embed_dim: 4,
        word_dim: 4,
        disent_dim: 4,
        ..TrainConfig::default()
    };
    let params = init_params(&ds, &cfg).unwrap();
    (ds, cfg, params)
}

/// A batch of `n` triplets in which every anchor has both partners.
pub fn full_batch(ds: &FeatureDataset, n: usize, seed: u64) -> TripletBatch {
    let sampler = TripletSampler::new(ds).unwrap();
    let mut rng = Rng::new(seed);
    let mut triplets = Vec::new();
    while triplets.len() < n {
        let t = sampler.sample(1, &mut rng).triplets[0];
        if t.attr_partner.is_some() && t.obj_partner.is_some() {
            triplets.push(t);
        }
    }
    TripletBatch { triplets }
}

pub fn masks_for(
    params: &ModelParams,
    ds: &FeatureDataset,
    batch: &TripletBatch,
    cfg: &TrainConfig,
) -> Option<TripletMasks> {
    let mut g = Graph::new();
    let pv = params.bind(&mut g, true);
    build_loss(&mut g, &pv, params, ds, batch, cfg, None)
        .unwrap()
        .masks
}

pub struct FdReport {
    pub max_rel: f64,
    pub worst: (String, usize),
    pub n_checked: usize,
}

/// Central differences of the full objective against the analytic gradient,
/// over every scalar parameter, with the channel masks held fixed.
pub fn fd_check(
    params: &ModelParams,
    ds: &FeatureDataset,
    batch: &TripletBatch,
    cfg: &TrainConfig,
    h: f64,
) -> FdReport {
    let masks = masks_for(params, ds, batch, cfg);
    let (_, grads) = total_loss(params, ds, batch, cfg, masks.as_ref()).unwrap();
    let f = |p: &ModelParams| {
        total_loss(p, ds, batch, cfg, masks.as_ref())
            .unwrap()
            .0
            .total
    };
    let mut rep = FdReport {
        max_rel: 0.0,
        worst: (String::new(), 0),
        n_checked: 0,
    };
    let mut p = params.clone();
    for (k, name) in ivr::model::PARAM_NAMES.iter().enumerate() {
        for j in 0..params.tensors()[k].len() {
            let orig = params.tensors()[k].as_slice()[j];
            p.get_mut(name).unwrap().as_mut_slice()[j] = orig + h;
            let up = f(&p);
            p.get_mut(name).unwrap().as_mut_slice()[j] = orig - h;
            let down = f(&p);
            p.get_mut(name).unwrap().as_mut_slice()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(grads[k].as_slice()[j], numeric);
            if e > rep.max_rel {
                rep.max_rel = e;
                rep.worst = (name.to_string(), j);
            }
            rep.n_checked += 1;
        }
    }
    rep
}

/// Random matrix with seen candidates first. Scores are multiples of 1/64,
/// so sums and differences are exact and a dense bias grid visits every
/// interval between breakpoints.
pub fn random_matrix(rng: &mut Rng) -> ScoreMatrix {
    let n_seen = 1 + rng.below(3);
    let n_unseen = 1 + rng.below(3);
    let p = n_seen + n_unseen;
    let n = 4 + rng.below(12);
    let unseen: Vec<bool> = (0..p).map(|j| j >= n_seen).collect();
    let mut truth: Vec<usize> = (0..n).map(|_| rng.below(p)).collect();
    truth[0] = rng.below(n_seen);
    truth[1] = n_seen + rng.below(n_unseen);
    let scores = (0..n * p).map(|_| rng.below(65) as f64 / 64.0).collect();
    ScoreMatrix::new(
        Tensor::from_vec(n, p, scores).unwrap(),
        (0..p).map(|j| Pair::new(j, j)).collect(),
        unseen,
        truth,
    )
    .unwrap()
}

/// Top-1 accuracies with bias `b` added to unseen scores, argmax with the
/// lowest index winning ties.
pub fn accuracies_at(sm: &ScoreMatrix, b: f64) -> (f64, f64) {
    let (mut hs, mut ns, mut hu, mut nu) = (0, 0, 0, 0);
    for (i, &t) in sm.truth.iter().enumerate() {
        let row = sm.scores.row_slice(i);
        let mut best = 0;
        for j in 1..row.len() {
            let s = |k: usize| row[k] + if sm.unseen[k] { b } else { 0.0 };
            if s(j) > s(best) {
                best = j;
            }
        }
        if sm.unseen[t] {
            nu += 1;
            hu += usize::from(best == t);
        } else {
            ns += 1;
            hs += usize::from(best == t);
        }
    }
    (hs as f64 / ns as f64, hu as f64 / nu as f64)
}

pub fn dense_oracle(sm: &ScoreMatrix) -> (f64, f64) {
    let diffs: Vec<f64> = (0..sm.scores.rows())
        .map(|i| {
            let row = sm.scores.row_slice(i);
            let m = |u: bool| {
                row.iter()
                    .zip(&sm.unseen)
                    .filter(|(_, &f)| f == u)
                    .map(|(s, _)| *s)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            m(false) - m(true)
        })
        .collect();
    let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let mut pts: Vec<(f64, f64)> = (0..=10_000)
        .map(|k| accuracies_at(sm, lo + (hi - lo) * k as f64 / 10_000.0))
        .collect();
    let hm = pts
        .iter()
        .map(|&(s, u)| harmonic_mean(s, u))
        .fold(0.0, f64::max);
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.dedup();
    let auc: f64 = pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    (100.0 * hm, 100.0 * auc)
}
