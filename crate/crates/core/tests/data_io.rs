use std::collections::HashMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use ivr::data::{
    generate_synthetic, read_dataset, write_dataset, FeatureDataset, Pair, PairSplit, Partition,
    SampleLabel, SynthConfig, TripletSampler, Vocab,
};
use ivr::tensor::{Rng, Tensor};
use ivr::Error;

fn arb_dataset() -> impl Strategy<Value = FeatureDataset> {
    (2usize..5, 2usize..5, 1usize..6, 1usize..30, any::<u64>()).prop_map(|(na, no, d, n, seed)| {
        let mut rng = Rng::new(seed);
        let mut pairs: Vec<Pair> = (0..na)
            .flat_map(|a| (0..no).map(move |o| Pair::new(a, o)))
            .collect();
        rng.shuffle(&mut pairs);
        let n_unseen = 1 + rng.below(pairs.len() - 1);
        let unseen = pairs.split_off(pairs.len() - n_unseen);
        let split = PairSplit {
            seen: pairs,
            unseen,
        };
        let labels: Vec<SampleLabel> = (0..n)
            .map(|_| {
                let partition = [Partition::Train, Partition::Val, Partition::Test][rng.below(3)];
                let pool: Vec<Pair> = match partition {
                    Partition::Train => split.seen.clone(),
                    _ => split.candidates(),
                };
                SampleLabel {
                    pair: pool[rng.below(pool.len())],
                    partition,
                }
            })
            .collect();
        let values = (0..n * d).map(|_| rng.normal() * 1e3).collect();
        let vocab = Vocab::new(
            (0..na).map(|i| format!("a,{i}")).collect(),
            (0..no).map(|i| format!("o \"{i}\"")).collect(),
        )
        .unwrap();
        FeatureDataset::new(
            vocab,
            split,
            Tensor::from_vec(n, d, values).unwrap(),
            labels,
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_read_is_identity(ds in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        prop_assert_eq!(&back, &ds);
        let bits = |t: &Tensor| t.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.features()), bits(ds.features()));
    }
}

#[test]
fn synthetic_round_trips() {
    let ds = generate_synthetic(
        &SynthConfig {
            samples_per_pair: 10,
            ..SynthConfig::default()
        },
        4,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    assert_eq!((back.len(), back.dim()), (160, 24));
}

#[test]
fn train_sample_with_unseen_pair_is_rejected() {
    let ds = generate_synthetic(
        &SynthConfig {
            samples_per_pair: 5,
            ..SynthConfig::default()
        },
        1,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let u = ds.split().unseen[0];
    let path = dir.path().join("labels.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1] = format!("0,{},{},train", u.attr, u.obj);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn generator_counts_and_reproducibility() {
    let cfg = SynthConfig::default();
    let a = generate_synthetic(&cfg, 9).unwrap();
    assert_eq!(a.split().seen.len(), 12);
    assert_eq!(a.split().unseen.len(), 4);
    assert_eq!(a.dim(), 24);
    assert_eq!(a, generate_synthetic(&cfg, 9).unwrap());
    assert_ne!(a, generate_synthetic(&cfg, 10).unwrap());
    for i in a.indices(Partition::Train) {
        assert!(a.split().is_seen(a.labels()[i].pair));
    }
}

/// Least-squares one-hot regression on the attribute block alone.
#[test]
fn attribute_block_is_linearly_decodable() {
    let cfg = SynthConfig::default();
    let ds = generate_synthetic(&cfg, 2).unwrap();
    let design = |idx: &[usize]| {
        DMatrix::from_fn(idx.len(), cfg.d_attr + 1, |r, c| {
            if c == cfg.d_attr {
                1.0
            } else {
                ds.feature(idx[r])[c]
            }
        })
    };
    let train = ds.indices(Partition::Train);
    let held: Vec<usize> = ds
        .indices(Partition::Test)
        .into_iter()
        .filter(|&i| ds.split().is_seen(ds.labels()[i].pair))
        .collect();
    let x = design(&train);
    let y = DMatrix::from_fn(train.len(), cfg.n_attrs, |r, c| {
        f64::from(ds.labels()[train[r]].pair.attr == c)
    });
    let w = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let pred = design(&held) * w;
    let correct = (0..held.len())
        .filter(|&r| pred.row(r).transpose().argmax().0 == ds.labels()[held[r]].pair.attr)
        .count();
    let acc = correct as f64 / held.len() as f64;
    assert!(acc > 0.95, "probe accuracy {acc}");
}

/// Unseen-pair samples sit near the spurious centroid of a seen pair that
/// shares neither concept with them.
#[test]
fn unseen_samples_carry_a_foreign_spurious_block() {
    let cfg = SynthConfig::default();
    let ds = generate_synthetic(&cfg, 6).unwrap();
    let lo = cfg.d_attr + cfg.d_obj;
    let mut centroid: HashMap<Pair, (Vec<f64>, usize)> = HashMap::new();
    for i in ds.indices(Partition::Train) {
        let e = centroid
            .entry(ds.labels()[i].pair)
            .or_insert((vec![0.0; cfg.d_spur], 0));
        for (s, x) in e.0.iter_mut().zip(&ds.feature(i)[lo..]) {
            *s += x;
        }
        e.1 += 1;
    }
    let centroid: Vec<(Pair, Vec<f64>)> = centroid
        .into_iter()
        .map(|(p, (s, n))| (p, s.into_iter().map(|x| x / n as f64).collect()))
        .collect();
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut checked = 0;
    for (i, l) in ds.labels().iter().enumerate() {
        if !ds.split().is_unseen(l.pair) {
            continue;
        }
        let has_decoy = centroid
            .iter()
            .any(|(p, _)| p.attr != l.pair.attr && p.obj != l.pair.obj);
        if !has_decoy {
            continue;
        }
        let (nearest, d) = centroid
            .iter()
            .map(|(p, c)| (*p, dist(c, &ds.feature(i)[lo..])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(nearest.attr != l.pair.attr && nearest.obj != l.pair.obj);
        assert!(d < 6.0 * cfg.sigma * (cfg.d_spur as f64).sqrt());
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn triplets_respect_label_constraints() {
    let ds = generate_synthetic(
        &SynthConfig {
            samples_per_pair: 20,
            ..SynthConfig::default()
        },
        3,
    )
    .unwrap();
    let sampler = TripletSampler::new(&ds).unwrap();
    let mut rng = Rng::new(0);
    let l = |i: usize| ds.labels()[i].pair;
    for _ in 0..50 {
        for t in sampler.sample(64, &mut rng).triplets {
            assert_eq!(ds.labels()[t.anchor].partition, Partition::Train);
            if let Some(p) = t.attr_partner {
                assert!(l(p).attr == l(t.anchor).attr && l(p).obj != l(t.anchor).obj);
            }
            if let Some(p) = t.obj_partner {
                assert!(l(p).obj == l(t.anchor).obj && l(p).attr != l(t.anchor).attr);
            }
        }
    }
}

/// With equal samples per seen pair, an anchor's partner pair is uniform
/// over the qualifying seen pairs.
#[test]
fn partner_pairs_are_uniform() {
    let ds = generate_synthetic(
        &SynthConfig {
            samples_per_pair: 20,
            ..SynthConfig::default()
        },
        8,
    )
    .unwrap();
    let sampler = TripletSampler::new(&ds).unwrap();
    let mut rng = Rng::new(77);
    let mut counts: HashMap<(Pair, Pair), u64> = HashMap::new();
    let mut anchors: HashMap<Pair, u64> = HashMap::new();
    for t in sampler.sample(10_000, &mut rng).triplets {
        let a = ds.labels()[t.anchor].pair;
        *anchors.entry(a).or_default() += 1;
        let p = ds.labels()[t.attr_partner.expect("each attribute has two seen pairs")].pair;
        *counts.entry((a, p)).or_default() += 1;
    }
    let seen = &ds.split().seen;
    let (mut stat, mut dof) = (0.0, 0usize);
    for (&a, &n) in &anchors {
        let options: Vec<Pair> = seen
            .iter()
            .copied()
            .filter(|p| p.attr == a.attr && p.obj != a.obj)
            .collect();
        let expected = n as f64 / options.len() as f64;
        for p in &options {
            let o = counts.get(&(a, *p)).copied().unwrap_or(0) as f64;
            stat += (o - expected).powi(2) / expected;
        }
        dof += options.len() - 1;
    }
    let p_value = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    assert!(p_value > 0.01, "chi2 {stat} on {dof} dof, p = {p_value}");
}
