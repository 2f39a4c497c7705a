//! Feature datasets: in-memory representation, on-disk format, synthetic
//! generation and triplet sampling.

mod io;
mod synth;
mod triplet;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{read_dataset, write_dataset, FEATURES_MAGIC, FEATURES_VERSION};
pub use synth::{generate_synthetic, SynthConfig};
pub use triplet::{sample_triplets, Triplet, TripletBatch, TripletSampler};

/// An attribute–object composition, by vocabulary index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Pair {
    pub attr: usize,
    pub obj: usize,
}

impl Pair {
    pub fn new(attr: usize, obj: usize) -> Self {
        Pair { attr, obj }
    }
}

impl From<(usize, usize)> for Pair {
    fn from((attr, obj): (usize, usize)) -> Self {
        Pair { attr, obj }
    }
}

impl From<Pair> for (usize, usize) {
    fn from(p: Pair) -> Self {
        (p.attr, p.obj)
    }
}

/// Attribute and object vocabularies; indices are list positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub attrs: Vec<String>,
    pub objs: Vec<String>,
}

impl Vocab {
    pub fn new(attrs: Vec<String>, objs: Vec<String>) -> Result<Self> {
        let v = Vocab { attrs, objs };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        for (kind, names) in [("attribute", &self.attrs), ("object", &self.objs)] {
            if names.is_empty() {
                return Err(Error::Validation(format!("empty {kind} vocabulary")));
            }
            let mut seen = HashSet::new();
            for n in names {
                if !seen.insert(n.as_str()) {
                    return Err(Error::Validation(format!("duplicate {kind} name '{n}'")));
                }
            }
        }
        Ok(())
    }

    pub fn attr_index(&self, name: &str) -> Result<usize> {
        lookup("attribute", &self.attrs, name)
    }

    pub fn obj_index(&self, name: &str) -> Result<usize> {
        lookup("object", &self.objs, name)
    }

    pub fn pair_name(&self, p: Pair) -> String {
        format!("{} {}", self.attrs[p.attr], self.objs[p.obj])
    }

    pub fn contains(&self, p: Pair) -> bool {
        p.attr < self.attrs.len() && p.obj < self.objs.len()
    }
}

fn lookup(kind: &'static str, names: &[String], name: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Lookup {
            kind,
            name: name.to_string(),
            known: names.join(", "),
        })
}

/// Seen (training) and unseen (held-out) compositions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSplit {
    pub seen: Vec<Pair>,
    pub unseen: Vec<Pair>,
}

impl PairSplit {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let mut all = HashSet::new();
        for (kind, pairs) in [("seen", &self.seen), ("unseen", &self.unseen)] {
            for &p in pairs {
                if !vocab.contains(p) {
                    return Err(Error::Validation(format!(
                        "{kind} pair ({}, {}) outside vocabulary of {} attrs x {} objs",
                        p.attr,
                        p.obj,
                        vocab.attrs.len(),
                        vocab.objs.len()
                    )));
                }
                if !all.insert(p) {
                    return Err(Error::Validation(format!(
                        "pair ({}, {}) listed twice across seen/unseen",
                        p.attr, p.obj
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_seen(&self, p: Pair) -> bool {
        self.seen.contains(&p)
    }

    pub fn is_unseen(&self, p: Pair) -> bool {
        self.unseen.contains(&p)
    }

    /// Seen pairs followed by unseen pairs, in manifest order.
    pub fn candidates(&self) -> Vec<Pair> {
        self.seen.iter().chain(&self.unseen).copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(Error::Validation(format!(
                "unknown partition '{other}' (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleLabel {
    pub pair: Pair,
    pub partition: Partition,
}

/// Precomputed feature vectors with composition labels and a pair split.
///
/// Feature values are held as `f64` but are always representable as `f32`,
/// which is the on-disk precision; [`FeatureDataset::new`] rounds them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    vocab: Vocab,
    split: PairSplit,
    features: Tensor,
    labels: Vec<SampleLabel>,
}

impl FeatureDataset {
    pub fn new(
        vocab: Vocab,
        split: PairSplit,
        mut features: Tensor,
        labels: Vec<SampleLabel>,
    ) -> Result<Self> {
        for x in features.as_mut_slice() {
            *x = *x as f32 as f64;
        }
        let ds = FeatureDataset {
            vocab,
            split,
            features,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        self.split.validate(&self.vocab)?;
        if self.features.rows() != self.labels.len() {
            return Err(Error::Validation(format!(
                "{} feature rows but {} labels",
                self.features.rows(),
                self.labels.len()
            )));
        }
        if self.features.cols() == 0 {
            return Err(Error::Validation("feature dimension is zero".into()));
        }
        let seen: HashSet<Pair> = self.split.seen.iter().copied().collect();
        let unseen: HashSet<Pair> = self.split.unseen.iter().copied().collect();
        for (i, l) in self.labels.iter().enumerate() {
            if l.pair.attr >= self.vocab.attrs.len() {
                return Err(Error::Validation(format!(
                    "sample {i}: attr index {} >= {} attributes",
                    l.pair.attr,
                    self.vocab.attrs.len()
                )));
            }
            if l.pair.obj >= self.vocab.objs.len() {
                return Err(Error::Validation(format!(
                    "sample {i}: obj index {} >= {} objects",
                    l.pair.obj,
                    self.vocab.objs.len()
                )));
            }
            let ok = match l.partition {
                Partition::Train => seen.contains(&l.pair),
                Partition::Val | Partition::Test => {
                    seen.contains(&l.pair) || unseen.contains(&l.pair)
                }
            };
            if !ok {
                return Err(Error::Validation(format!(
                    "sample {i} ({}) has pair ({}, {}) not allowed in that partition",
                    l.partition, l.pair.attr, l.pair.obj
                )));
            }
        }
        if let Some(bad) = self.features.as_slice().iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature value at sample {}",
                bad / self.features.cols()
            )));
        }
        Ok(())
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn split(&self) -> &PairSplit {
        &self.split
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[SampleLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row_slice(i)
    }

    pub fn indices(&self, partition: Partition) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.partition == partition)
            .map(|(i, _)| i)
            .collect()
    }

    /// Feature rows for `idx`, stacked into a `len × D` tensor.
    pub fn gather(&self, idx: &[usize]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.feature(i));
        }
        Tensor::from_vec(idx.len(), d, data).expect("gather shape")
    }

    /// Sample counts per (pair, partition).
    pub fn counts(&self) -> HashMap<(Pair, Partition), usize> {
        let mut m = HashMap::new();
        for l in &self.labels {
            *m.entry((l.pair, l.partition)).or_insert(0) += 1;
        }
        m
    }
}
