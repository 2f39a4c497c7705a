//! The full objective and the optimization loop.
//!
//! `L = L_comp + L_cls + λ₁·L_rep + λ₂·L_grad`, every term averaged over the
//! triplets of a batch.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, Pair, Partition, TripletBatch, TripletSampler};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::invariance::{
    grad_loss, grad_pairs, masked_representations, rep_loss, GimMetric, TripletLayout, TripletMasks,
};
use crate::model::{save_checkpoint, ModelDims, ModelParams, ParamVars, Task};
use crate::tensor::{AdamConfig, AdamState, Graph, Rng, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Fraction of representation channels masked per pair.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gim_metric: GimMetric,
    pub use_comp: bool,
    pub use_cls: bool,
    pub use_rep: bool,
    pub use_grad: bool,
    pub emb_hidden: usize,
    pub embed_dim: usize,
    pub word_dim: usize,
    pub disent_dim: usize,
    pub tau: f64,
    /// Evaluate the validation partition after each epoch.
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 5e-5,
            lambda1: 1.0,
            lambda2: 10.0,
            alpha: 1.0 / 6.0,
            epochs: 50,
            batch_size: 128,
            seed: 0,
            gim_metric: GimMetric::Euclidean,
            use_comp: true,
            use_cls: true,
            use_rep: true,
            use_grad: true,
            emb_hidden: 64,
            embed_dim: 64,
            word_dim: 64,
            disent_dim: 64,
            tau: 0.05,
            validate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            ));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!(
                "trade-off weights must be >= 0, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.tau));
        }
        Ok(())
    }

    pub fn dims(&self, ds: &FeatureDataset) -> ModelDims {
        ModelDims {
            feat_dim: ds.dim(),
            emb_hidden: self.emb_hidden,
            embed_dim: self.embed_dim,
            word_dim: self.word_dim,
            disent_dim: self.disent_dim,
            n_attrs: ds.vocab().attrs.len(),
            n_objs: ds.vocab().objs.len(),
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    fn any_term(&self) -> bool {
        self.use_comp || self.use_cls || self.use_rep || self.use_grad
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_comp: f64,
    pub l_cls: f64,
    pub l_rep: f64,
    pub l_grad: f64,
    pub total: f64,
}

/// A loss built on a graph: the scalar root, its component values and the
/// masks that were used.
pub struct LossGraph {
    pub root: Var,
    pub breakdown: LossBreakdown,
    pub masks: Option<TripletMasks>,
}

pub fn layout(ds: &FeatureDataset, batch: &TripletBatch) -> (TripletLayout, Vec<usize>) {
    let b = batch.len();
    let mut rows = Vec::with_capacity(3 * b);
    rows.extend(batch.triplets.iter().map(|t| t.anchor));
    rows.extend(
        batch
            .triplets
            .iter()
            .map(|t| t.attr_partner.unwrap_or(t.anchor)),
    );
    rows.extend(
        batch
            .triplets
            .iter()
            .map(|t| t.obj_partner.unwrap_or(t.anchor)),
    );
    let pairs = rows.iter().map(|&i| ds.labels()[i].pair).collect();
    let layout = TripletLayout {
        b,
        pairs,
        attr_valid: batch
            .triplets
            .iter()
            .map(|t| t.attr_partner.is_some())
            .collect(),
        obj_valid: batch
            .triplets
            .iter()
            .map(|t| t.obj_partner.is_some())
            .collect(),
    };
    (layout, rows)
}

/// Builds the full objective on `g`. When `fixed_masks` is `None`, masks are
/// computed from the current parameters.
pub fn build_loss(
    g: &mut Graph,
    pv: &ParamVars,
    params: &ModelParams,
    ds: &FeatureDataset,
    batch: &TripletBatch,
    cfg: &TrainConfig,
    fixed_masks: Option<&TripletMasks>,
) -> Result<LossGraph> {
    if batch.is_empty() {
        return Err(Error::Contract("loss needs a nonempty batch".into()));
    }
    let (layout, rows) = layout(ds, batch);
    let b = layout.b as f64;
    let x = g.constant(ds.gather(&rows));
    let weights = layout.member_weights();
    let mut bd = LossBreakdown::default();
    let mut terms: Vec<Var> = Vec::new();

    if cfg.use_comp {
        let seen: &[Pair] = &ds.split().seen;
        let ce = pv.composition_loss_rows(g, x, &layout.pairs, seen)?;
        let l = weighted_mean(g, ce, &weights, b)?;
        bd.l_comp = g.value(l).item()?;
        terms.push(l);
    }

    let need_z = cfg.use_cls || cfg.use_rep || cfg.use_grad;
    let (z_attr, z_obj) = if need_z {
        pv.disentangle(g, x)?
    } else {
        (x, x)
    };

    if cfg.use_cls {
        let mut sum = None;
        for (task, z) in [(Task::Attr, z_attr), (Task::Obj, z_obj)] {
            let logits = pv.classify(g, z, task)?;
            let labels: Vec<usize> = layout.pairs.iter().map(|&p| task.label(p)).collect();
            let ce = g.cross_entropy_rows(logits, &labels)?;
            let l = weighted_mean(g, ce, &weights, b)?;
            sum = Some(match sum {
                None => l,
                Some(s) => g.add(s, l)?,
            });
        }
        let l = sum.expect("two tasks");
        bd.l_cls = g.value(l).item()?;
        terms.push(l);
    }

    let mut used_masks = None;
    if cfg.use_rep || cfg.use_grad {
        let masks = match fixed_masks {
            Some(m) => m.clone(),
            None => {
                TripletMasks::compute(params, g.value(z_attr), g.value(z_obj), &layout, cfg.alpha)?
            }
        };
        let (zh_a, zh_o) = masked_representations(g, z_attr, z_obj, &layout, &masks)?;
        if cfg.use_rep {
            let l = rep_loss(g, pv, zh_a, zh_o, &layout)?;
            bd.l_rep = g.value(l).item()?;
            terms.push(g.scale(l, cfg.lambda1));
        }
        if cfg.use_grad {
            let (pa, po) = grad_pairs(g, pv, zh_a, zh_o, &layout)?;
            let l = grad_loss(g, &pa, &po, cfg.gim_metric)?;
            bd.l_grad = g.value(l).item()?;
            terms.push(g.scale(l, cfg.lambda2));
        }
        used_masks = Some(masks);
    }

    let root = match terms.split_first() {
        None => g.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = g.add(acc, t)?;
            }
            acc
        }
    };
    bd.total = g.value(root).item()?;
    Ok(LossGraph {
        root,
        breakdown: bd,
        masks: used_masks,
    })
}

fn weighted_mean(g: &mut Graph, rows: Var, weights: &[f64], b: f64) -> Result<Var> {
    let wv = g.constant(Tensor::from_vec(weights.len(), 1, weights.to_vec())?);
    let prod = g.mul(rows, wv)?;
    let s = g.sum(prod);
    Ok(g.scale(s, 1.0 / b))
}

/// Loss values and parameter gradients (in `PARAM_NAMES` order) for one batch.
pub fn total_loss(
    params: &ModelParams,
    ds: &FeatureDataset,
    batch: &TripletBatch,
    cfg: &TrainConfig,
    fixed_masks: Option<&TripletMasks>,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut g = Graph::new();
    let pv = params.bind(&mut g, true);
    let lg = build_loss(&mut g, &pv, params, ds, batch, cfg, fixed_masks)?;
    g.backward(lg.root)?;
    Ok((lg.breakdown, params.grads_from(&g, &pv)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValMetrics {
    pub seen: f64,
    pub unseen: f64,
    pub hm: f64,
    pub auc: f64,
}

impl From<&EvalReport> for ValMetrics {
    fn from(r: &EvalReport) -> Self {
        ValMetrics {
            seen: r.best_seen,
            unseen: r.best_unseen,
            hm: r.best_hm,
            auc: r.auc,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the per-step breakdowns over the epoch.
    pub losses: LossBreakdown,
    pub val: Option<ValMetrics>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_params: ModelParams,
    pub best_params: ModelParams,
    /// Epoch (1-based) of `best_params`; 0 means the initial parameters.
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

pub const LOG_HEADER: &str = "epoch,l_comp,l_cls,l_rep,l_grad,val_seen,val_unseen,val_hm,val_auc";

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for e in &self.log {
            let v = e.val.unwrap_or(ValMetrics {
                seen: f64::NAN,
                unseen: f64::NAN,
                hm: f64::NAN,
                auc: f64::NAN,
            });
            let l = &e.losses;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.epoch, l.l_comp, l.l_cls, l.l_rep, l.l_grad, v.seen, v.unseen, v.hm, v.auc
            ));
        }
        s
    }

    /// Writes `final.ckpt`, `best.ckpt` and `train_log.csv` into `dir`.
    pub fn write(
        &self,
        ds: &FeatureDataset,
        cfg: &TrainConfig,
        dir: impl AsRef<Path>,
    ) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let echo = serde_json::to_value(cfg).expect("config serializes");
        save_checkpoint(
            &self.final_params,
            ds.vocab(),
            &echo,
            dir.join("final.ckpt"),
        )?;
        let mut best_echo = echo;
        best_echo["best_epoch"] = self.best_epoch.into();
        save_checkpoint(
            &self.best_params,
            ds.vocab(),
            &best_echo,
            dir.join("best.ckpt"),
        )?;
        let path = dir.join("train_log.csv");
        fs::write(&path, self.log_csv()).map_err(|e| Error::io(&path, e))
    }
}

pub fn init_params(ds: &FeatureDataset, cfg: &TrainConfig) -> Result<ModelParams> {
    let mut rng = Rng::new(cfg.seed).fork(1);
    ModelParams::init(cfg.dims(ds), cfg.tau, &mut rng)
}

/// Trains from a seeded initialization.
pub fn train(ds: &FeatureDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = init_params(ds, cfg)?;
    train_from(ds, cfg, params)
}

/// Trains starting from `params`. Runs `epochs × ⌈N_train / batch_size⌉`
/// Adam steps; fully determined by `(ds, cfg, params)`.
pub fn train_from(
    ds: &FeatureDataset,
    cfg: &TrainConfig,
    mut params: ModelParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let sampler = TripletSampler::new(ds)?;
    let mut rng = Rng::new(cfg.seed).fork(2);
    let mut adam = AdamState::new(cfg.adam(), params.tensors());
    let steps = sampler.n_train().div_ceil(cfg.batch_size);

    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut acc = LossBreakdown::default();
        for _ in 0..steps {
            let batch = sampler.sample(cfg.batch_size, &mut rng);
            let (bd, grads) = total_loss(&params, ds, &batch, cfg, None)?;
            if cfg.any_term() {
                let grad_refs: Vec<&Tensor> = grads.iter().collect();
                let mut param_refs: Vec<&mut Tensor> = params.tensors_mut().collect();
                adam.step(&mut param_refs, &grad_refs)?;
            }
            acc.l_comp += bd.l_comp;
            acc.l_cls += bd.l_cls;
            acc.l_rep += bd.l_rep;
            acc.l_grad += bd.l_grad;
            acc.total += bd.total;
        }
        let n = steps as f64;
        let losses = LossBreakdown {
            l_comp: acc.l_comp / n,
            l_cls: acc.l_cls / n,
            l_rep: acc.l_rep / n,
            l_grad: acc.l_grad / n,
            total: acc.total / n,
        };
        let val = if cfg.validate {
            evaluate(&params, ds, Partition::Val)
                .ok()
                .map(|r| ValMetrics::from(&r))
        } else {
            None
        };
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(auc, _, _)| v.auc > *auc) {
                best = Some((v.auc, epoch, params.clone()));
            }
        }
        log.push(EpochLog { epoch, losses, val });
    }

    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (cfg.epochs, params.clone()),
    };
    Ok(TrainOutcome {
        final_params: params,
        best_params,
        best_epoch,
        log,
    })
}
