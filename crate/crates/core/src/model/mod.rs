//! Trainable parameters and forward computations.
//!
//! The model has three branches over a precomputed feature `f(x)`:
//!
//! - image embedding `ω`: two affine layers with a ReLU in between, mapping
//!   `D → hidden → E`;
//! - composition embedding `g`: learned attribute and object tables whose
//!   rows are concatenated and mapped affinely into the same `E`-dim space.
//!   Image/composition compatibility is their cosine distance;
//! - disentangled classifiers: `ρ_attr`, `ρ_obj` (affine `D → H`) followed
//!   by affine attribute and object classifiers.

mod checkpoint;
mod words;

use serde::{Deserialize, Serialize};

use crate::data::Pair;
use crate::error::{contract, Error, Result};
use crate::tensor::{softmax_in_place, Graph, Rng, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, vocab_hash, Checkpoint, CheckpointHeader};
pub use words::load_word_vectors;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Attr,
    Obj,
}

impl Task {
    pub const BOTH: [Task; 2] = [Task::Attr, Task::Obj];

    pub fn label(self, p: Pair) -> usize {
        match self {
            Task::Attr => p.attr,
            Task::Obj => p.obj,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Input feature width `D`.
    pub feat_dim: usize,
    /// Hidden width of the image embedding MLP.
    pub emb_hidden: usize,
    /// Joint embedding width `E`.
    pub embed_dim: usize,
    /// Concept vector width `E_w`.
    pub word_dim: usize,
    /// Disentangled representation width `H`.
    pub disent_dim: usize,
    pub n_attrs: usize,
    pub n_objs: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.feat_dim,
            self.emb_hidden,
            self.embed_dim,
            self.word_dim,
            self.disent_dim,
            self.n_attrs,
            self.n_objs,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!(
                "all model dimensions must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn shapes(&self) -> [(usize, usize); N_PARAMS] {
        let d = self;
        [
            (d.emb_hidden, d.feat_dim),
            (1, d.emb_hidden),
            (d.embed_dim, d.emb_hidden),
            (1, d.embed_dim),
            (d.n_attrs, d.word_dim),
            (d.n_objs, d.word_dim),
            (d.embed_dim, 2 * d.word_dim),
            (1, d.embed_dim),
            (d.disent_dim, d.feat_dim),
            (1, d.disent_dim),
            (d.disent_dim, d.feat_dim),
            (1, d.disent_dim),
            (d.n_attrs, d.disent_dim),
            (1, d.n_attrs),
            (d.n_objs, d.disent_dim),
            (1, d.n_objs),
        ]
    }

    /// Fan-in used for initialization of each parameter.
    fn fan_ins(&self) -> [usize; N_PARAMS] {
        let d = self;
        [
            d.feat_dim,
            d.feat_dim,
            d.emb_hidden,
            d.emb_hidden,
            d.word_dim,
            d.word_dim,
            2 * d.word_dim,
            2 * d.word_dim,
            d.feat_dim,
            d.feat_dim,
            d.feat_dim,
            d.feat_dim,
            d.disent_dim,
            d.disent_dim,
            d.disent_dim,
            d.disent_dim,
        ]
    }
}

pub const N_PARAMS: usize = 16;

/// Parameter names in their fixed storage order (checkpoints, optimizer state).
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "emb.w1",
    "emb.b1",
    "emb.w2",
    "emb.b2",
    "comp.attr_table",
    "comp.obj_table",
    "comp.w",
    "comp.b",
    "disent_attr.w",
    "disent_attr.b",
    "disent_obj.w",
    "disent_obj.b",
    "cls_attr.w",
    "cls_attr.b",
    "cls_obj.w",
    "cls_obj.b",
];

mod idx {
    pub const EMB_W1: usize = 0;
    pub const EMB_B1: usize = 1;
    pub const EMB_W2: usize = 2;
    pub const EMB_B2: usize = 3;
    pub const ATTR_TABLE: usize = 4;
    pub const OBJ_TABLE: usize = 5;
    pub const COMP_W: usize = 6;
    pub const COMP_B: usize = 7;
    pub const DIS_ATTR_W: usize = 8;
    pub const DIS_ATTR_B: usize = 9;
    pub const DIS_OBJ_W: usize = 10;
    pub const DIS_OBJ_B: usize = 11;
    pub const CLS_ATTR_W: usize = 12;
    pub const CLS_ATTR_B: usize = 13;
    pub const CLS_OBJ_W: usize = 14;
    pub const CLS_OBJ_B: usize = 15;
}

/// All trainable weights plus the composition softmax temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// Temperature applied to cosine logits `(1 − d)/τ`.
    pub tau: f64,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Uniform `U(−1/√fan_in, 1/√fan_in)` initialization for every tensor.
    pub fn init(dims: ModelDims, tau: f64, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let tensors = dims
            .shapes()
            .iter()
            .zip(dims.fan_ins())
            .map(|(&(r, c), fan_in)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..r * c).map(|_| rng.uniform(-bound, bound)).collect();
                Tensor::from_vec(r, c, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_tensors(dims, tau, tensors)
    }

    pub fn from_tensors(dims: ModelDims, tau: f64, tensors: Vec<Tensor>) -> Result<Self> {
        dims.validate()?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
        }
        contract!(
            tensors.len() == N_PARAMS,
            "expected {N_PARAMS} parameter tensors, got {}",
            tensors.len()
        );
        for ((t, shape), name) in tensors.iter().zip(dims.shapes()).zip(PARAM_NAMES) {
            contract!(
                t.shape() == shape,
                "parameter {name} has shape {:?}, expected {shape:?}",
                t.shape()
            );
        }
        Ok(ModelParams { dims, tau, tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect::<Vec<_>>();
        ParamVars {
            vars: vars.try_into().expect("N_PARAMS vars"),
            tau: self.tau,
        }
    }

    /// Gradients collected from `g` after backward, zero where none reached.
    pub fn grads_from(&self, g: &Graph, pv: &ParamVars) -> Vec<Tensor> {
        pv.vars
            .iter()
            .zip(&self.tensors)
            .map(|(&v, t)| {
                g.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }

    fn eval<T>(&self, f: impl FnOnce(&mut Graph, &ParamVars) -> Result<T>) -> Result<T> {
        let mut g = Graph::new();
        let pv = self.bind(&mut g, false);
        f(&mut g, &pv)
    }

    pub fn disentangle(&self, features: &Tensor) -> Result<(Tensor, Tensor)> {
        self.eval(|g, pv| {
            let x = g.constant(features.clone());
            let (za, zo) = pv.disentangle(g, x)?;
            Ok((g.value(za).clone(), g.value(zo).clone()))
        })
    }

    pub fn classify(&self, z: &Tensor, task: Task) -> Result<Tensor> {
        self.eval(|g, pv| {
            let z = g.constant(z.clone());
            let out = pv.classify(g, z, task)?;
            Ok(g.value(out).clone())
        })
    }

    pub fn composition_distance(&self, features: &Tensor, pairs: &[Pair]) -> Result<Tensor> {
        self.eval(|g, pv| {
            let x = g.constant(features.clone());
            let d = pv.composition_distance(g, x, pairs)?;
            Ok(g.value(d).clone())
        })
    }

    pub fn composition_loss(
        &self,
        features: &Tensor,
        true_pairs: &[Pair],
        seen_pairs: &[Pair],
    ) -> Result<f64> {
        self.eval(|g, pv| {
            let x = g.constant(features.clone());
            let l = pv.composition_loss(g, x, true_pairs, seen_pairs)?;
            g.value(l).item()
        })
    }

    /// Fused per-candidate scores (`B × P`), see [`PairScores`].
    pub fn pair_score(&self, features: &Tensor, candidates: &[Pair]) -> Result<Tensor> {
        Ok(self.pair_score_parts(features, candidates)?.fused())
    }

    /// The two normalized score components for each sample and candidate.
    pub fn pair_score_parts(&self, features: &Tensor, candidates: &[Pair]) -> Result<PairScores> {
        contract!(
            !candidates.is_empty(),
            "pair_score needs at least one candidate"
        );
        let (embedding, pa, po) = self.eval(|g, pv| {
            let x = g.constant(features.clone());
            let d = pv.composition_distance(g, x, candidates)?;
            let logits = pv.cosine_logits(g, d);
            let emb = g.value(logits).softmax_rows();
            let (za, zo) = pv.disentangle(g, x)?;
            let la = pv.classify(g, za, Task::Attr)?;
            let lo = pv.classify(g, zo, Task::Obj)?;
            Ok((emb, g.value(la).softmax_rows(), g.value(lo).softmax_rows()))
        })?;

        let (b, p) = (features.rows(), candidates.len());
        let mut decoupled = Tensor::zeros(b, p);
        for i in 0..b {
            let row = decoupled.row_slice_mut(i);
            for (s, c) in row.iter_mut().zip(candidates) {
                *s = pa[(i, c.attr)] * po[(i, c.obj)];
            }
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|s| *s /= total);
            } else {
                row.fill(1.0 / p as f64);
            }
        }
        Ok(PairScores {
            embedding,
            decoupled,
        })
    }
}

/// Score components over a candidate list.
///
/// `embedding` is the softmax of the cosine logits; `decoupled` is
/// `P(a)·P(o)` from the two classifiers, renormalized over the candidates.
/// Each row of each component sums to one, so the fused score rows sum to two.
#[derive(Clone, Debug)]
pub struct PairScores {
    pub embedding: Tensor,
    pub decoupled: Tensor,
}

impl PairScores {
    pub fn fused(&self) -> Tensor {
        self.embedding.zip_map(&self.decoupled, |a, b| a + b)
    }
}

/// Graph handles for one binding of [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub vars: [Var; N_PARAMS],
    pub tau: f64,
}

/// Intermediate nodes of one forward pass over a block of samples.
#[derive(Clone, Copy, Debug)]
pub struct ForwardCache {
    pub z_attr: Var,
    pub z_obj: Var,
    pub image_emb: Var,
    pub pair_emb: Var,
}

impl ParamVars {
    pub fn image_embedding(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let v = &self.vars;
        let h = g.linear(x, v[idx::EMB_W1], v[idx::EMB_B1])?;
        let h = g.relu(h);
        g.linear(h, v[idx::EMB_W2], v[idx::EMB_B2])
    }

    /// Composition embeddings `g(y)` for each pair, `P × E`.
    pub fn pair_embedding(&self, g: &mut Graph, pairs: &[Pair]) -> Result<Var> {
        contract!(!pairs.is_empty(), "pair embedding needs at least one pair");
        let v = &self.vars;
        let attrs: Vec<usize> = pairs.iter().map(|p| p.attr).collect();
        let objs: Vec<usize> = pairs.iter().map(|p| p.obj).collect();
        let ea = g.gather_rows(v[idx::ATTR_TABLE], &attrs)?;
        let eo = g.gather_rows(v[idx::OBJ_TABLE], &objs)?;
        let cat = g.concat_cols(ea, eo)?;
        g.linear(cat, v[idx::COMP_W], v[idx::COMP_B])
    }

    pub fn disentangle(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let v = &self.vars;
        let d = g.value(v[idx::DIS_ATTR_W]).cols();
        contract!(
            g.value(x).cols() == d,
            "feature width {} does not match model input width {d}",
            g.value(x).cols()
        );
        let za = g.linear(x, v[idx::DIS_ATTR_W], v[idx::DIS_ATTR_B])?;
        let zo = g.linear(x, v[idx::DIS_OBJ_W], v[idx::DIS_OBJ_B])?;
        Ok((za, zo))
    }

    pub fn classifier(&self, task: Task) -> (Var, Var) {
        let v = &self.vars;
        match task {
            Task::Attr => (v[idx::CLS_ATTR_W], v[idx::CLS_ATTR_B]),
            Task::Obj => (v[idx::CLS_OBJ_W], v[idx::CLS_OBJ_B]),
        }
    }

    pub fn classify(&self, g: &mut Graph, z: Var, task: Task) -> Result<Var> {
        let (w, b) = self.classifier(task);
        g.linear(z, w, b)
    }

    pub fn composition_distance(&self, g: &mut Graph, x: Var, pairs: &[Pair]) -> Result<Var> {
        let e = self.image_embedding(g, x)?;
        let c = self.pair_embedding(g, pairs)?;
        g.cosine_distance_matrix(e, c)
    }

    /// `(1 − d)/τ`.
    pub fn cosine_logits(&self, g: &mut Graph, dist: Var) -> Var {
        let s = g.scale(dist, -1.0 / self.tau);
        g.add_scalar(s, 1.0 / self.tau)
    }

    /// Per-sample cross-entropy over `candidates` with cosine logits, `B × 1`.
    pub fn composition_loss_rows(
        &self,
        g: &mut Graph,
        x: Var,
        true_pairs: &[Pair],
        candidates: &[Pair],
    ) -> Result<Var> {
        let labels = true_pairs
            .iter()
            .map(|p| {
                candidates.iter().position(|c| c == p).ok_or_else(|| {
                    Error::Contract(format!(
                        "true pair ({}, {}) is not among the candidate pairs",
                        p.attr, p.obj
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let d = self.composition_distance(g, x, candidates)?;
        let logits = self.cosine_logits(g, d);
        g.cross_entropy_rows(logits, &labels)
    }

    /// Batch-mean composition cross-entropy over the seen pairs.
    pub fn composition_loss(
        &self,
        g: &mut Graph,
        x: Var,
        true_pairs: &[Pair],
        seen_pairs: &[Pair],
    ) -> Result<Var> {
        let rows = self.composition_loss_rows(g, x, true_pairs, seen_pairs)?;
        Ok(g.mean(rows))
    }

    pub fn forward(&self, g: &mut Graph, x: Var, pairs: &[Pair]) -> Result<ForwardCache> {
        let (z_attr, z_obj) = self.disentangle(g, x)?;
        let image_emb = self.image_embedding(g, x)?;
        let pair_emb = self.pair_embedding(g, pairs)?;
        Ok(ForwardCache {
            z_attr,
            z_obj,
            image_emb,
            pair_emb,
        })
    }
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let mut v = row.to_vec();
    softmax_in_place(&mut v);
    v
}
