use std::collections::HashMap;

use super::{FeatureDataset, Pair, Partition};
use crate::error::{contract, Result};
use crate::tensor::Rng;

/// One training triplet `(x^(a,ō), x^(a,o), x^(ā,o))` by sample index.
///
/// A partner is `None` when no training sample qualifies, which happens when
/// the anchor's attribute (or object) occurs in only one seen pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    /// Same attribute, different object.
    pub attr_partner: Option<usize>,
    /// Same object, different attribute.
    pub obj_partner: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Samples of one concept, grouped contiguously by partner concept.
struct Group {
    samples: Vec<usize>,
    /// partner-concept index → (start, len) within `samples`
    ranges: HashMap<usize, (usize, usize)>,
}

impl Group {
    fn draw_excluding(&self, exclude: usize, rng: &mut Rng) -> Option<usize> {
        let (start, len) = self.ranges.get(&exclude).copied().unwrap_or((0, 0));
        let others = self.samples.len() - len;
        if others == 0 {
            return None;
        }
        let mut r = rng.below(others);
        if r >= start {
            r += len;
        }
        Some(self.samples[r])
    }
}

/// Precomputed index over the training partition for fast triplet draws.
pub struct TripletSampler {
    train: Vec<usize>,
    pairs: Vec<Pair>,
    by_attr: Vec<Group>,
    by_obj: Vec<Group>,
}

impl TripletSampler {
    pub fn new(ds: &FeatureDataset) -> Result<Self> {
        let train = ds.indices(Partition::Train);
        contract!(
            !train.is_empty(),
            "triplet sampling needs a nonempty train partition"
        );
        let pairs: Vec<Pair> = ds.labels().iter().map(|l| l.pair).collect();

        let build = |n: usize, key: fn(Pair) -> (usize, usize)| -> Vec<Group> {
            let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
            for &i in &train {
                let (concept, partner) = key(pairs[i]);
                buckets[concept].push((partner, i));
            }
            buckets
                .into_iter()
                .map(|mut b| {
                    b.sort_unstable();
                    let mut ranges = HashMap::new();
                    for (pos, &(partner, _)) in b.iter().enumerate() {
                        ranges
                            .entry(partner)
                            .and_modify(|r: &mut (usize, usize)| r.1 += 1)
                            .or_insert((pos, 1));
                    }
                    Group {
                        samples: b.into_iter().map(|(_, i)| i).collect(),
                        ranges,
                    }
                })
                .collect()
        };
        let by_attr = build(ds.vocab().attrs.len(), |p| (p.attr, p.obj));
        let by_obj = build(ds.vocab().objs.len(), |p| (p.obj, p.attr));
        Ok(TripletSampler {
            train,
            pairs,
            by_attr,
            by_obj,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    /// Draws `batch_size` triplets with replacement. Anchors are uniform over
    /// training samples; each partner is uniform over the qualifying samples.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> TripletBatch {
        let triplets = (0..batch_size)
            .map(|_| {
                let anchor = self.train[rng.below(self.train.len())];
                let p = self.pairs[anchor];
                let attr_partner = self.by_attr[p.attr].draw_excluding(p.obj, rng);
                let obj_partner = self.by_obj[p.obj].draw_excluding(p.attr, rng);
                Triplet {
                    anchor,
                    attr_partner,
                    obj_partner,
                }
            })
            .collect();
        TripletBatch { triplets }
    }
}

pub fn sample_triplets(
    ds: &FeatureDataset,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<TripletBatch> {
    Ok(TripletSampler::new(ds)?.sample(batch_size, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PairSplit, SampleLabel, Vocab};
    use crate::tensor::Tensor;

    fn dataset(pairs_and_parts: &[(usize, usize, Partition)], split: PairSplit) -> FeatureDataset {
        let vocab = Vocab::new(
            vec!["red".into(), "green".into(), "blue".into()],
            vec!["apple".into(), "leaf".into(), "car".into()],
        )
        .unwrap();
        let labels = pairs_and_parts
            .iter()
            .map(|&(a, o, partition)| SampleLabel {
                pair: Pair::new(a, o),
                partition,
            })
            .collect::<Vec<_>>();
        let n = labels.len();
        FeatureDataset::new(vocab, split, Tensor::zeros(n, 2), labels).unwrap()
    }

    #[test]
    fn singleton_attribute_clears_attr_side() {
        // "red" (0) only ever appears as (red, apple).
        let split = PairSplit {
            seen: vec![
                Pair::new(0, 0),
                Pair::new(1, 0),
                Pair::new(1, 1),
                Pair::new(2, 1),
            ],
            unseen: vec![],
        };
        let t = Partition::Train;
        let ds = dataset(
            &[(0, 0, t), (0, 0, t), (1, 0, t), (1, 1, t), (2, 1, t)],
            split,
        );
        let mut rng = Rng::new(5);
        let batch = sample_triplets(&ds, 200, &mut rng).unwrap();
        for tr in &batch.triplets {
            if ds.labels()[tr.anchor].pair == Pair::new(0, 0) {
                assert!(tr.attr_partner.is_none());
                assert!(tr.obj_partner.is_some());
            }
        }
    }

    #[test]
    fn empty_train_partition_is_contract_error() {
        let split = PairSplit {
            seen: vec![Pair::new(0, 0)],
            unseen: vec![],
        };
        let ds = dataset(&[(0, 0, Partition::Test)], split);
        assert!(sample_triplets(&ds, 4, &mut Rng::new(0)).is_err());
    }
}
