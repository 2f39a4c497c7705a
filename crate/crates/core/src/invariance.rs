//! Representation- and gradient-level invariance across domains.
//!
//! For attribute recognition the object is treated as the domain: the
//! anchor `x^(a,o)` and its partner `x^(a,ō)` share an attribute label but
//! come from different object domains. Symmetrically for objects with the
//! partner `x^(ā,o)`.
//!
//! *Channel masking.* For each pair the gradient of the true-class
//! probability with respect to the disentangled representation is computed
//! for both members. Channels where the two gradients differ most are
//! considered domain-specific and zeroed in both members before
//! classification. Masks are constants of the graph.
//!
//! *Gradient alignment.* The gradient of each member's classification loss
//! with respect to its classifier parameters is built as an explicit graph
//! expression, `∂l/∂b = p − e_y` and `∂l/∂W = (p − e_y) ⊗ ẑ`, and the distance
//! between the two members' gradients is penalized. Differentiating that
//! distance with ordinary reverse mode then carries the second-order terms.
//!
//! The true-class *probability* (not the raw logit) is differentiated for
//! masking: with an affine classifier the logit gradient is the weight row
//! of the label, identical for both members, which would make every
//! difference vanish.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Pair;
use crate::error::{contract, Error, Result};
use crate::model::{softmax, ModelParams, ParamVars, Task};
use crate::tensor::{Graph, Tensor, Var};

/// Distance used to compare the two classifier gradients of a pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GimMetric {
    #[default]
    Euclidean,
    Cosine,
}

impl FromStr for GimMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(GimMetric::Euclidean),
            "cosine" => Ok(GimMetric::Cosine),
            other => Err(Error::Config(format!(
                "unknown gradient metric '{other}' (expected euclidean or cosine)"
            ))),
        }
    }
}

impl GimMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            GimMetric::Euclidean => "euclidean",
            GimMetric::Cosine => "cosine",
        }
    }
}

/// `∂p_label/∂z` for `p = softmax(W z + b)`, i.e. `p_label · (W[label] − pᵀW)`.
pub fn representation_gradient_raw(
    w: &Tensor,
    b: &Tensor,
    z: &[f64],
    label: usize,
) -> Result<Vec<f64>> {
    let (c, h) = w.shape();
    contract!(
        z.len() == h,
        "representation width {} != classifier input {h}",
        z.len()
    );
    if label >= c {
        return Err(Error::Index {
            index: label,
            len: c,
        });
    }
    let logits: Vec<f64> = (0..c)
        .map(|k| crate::tensor::dot(w.row_slice(k), z) + b.as_slice()[k])
        .collect();
    let p = softmax(&logits);
    let mut out = w.row_slice(label).to_vec();
    for (k, &pk) in p.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row_slice(k)) {
            *o -= pk * wv;
        }
    }
    out.iter_mut().for_each(|o| *o *= p[label]);
    Ok(out)
}

/// Representation gradient using the task's classifier from `params`.
pub fn representation_gradient(
    params: &ModelParams,
    z: &[f64],
    task: Task,
    label: usize,
) -> Result<Vec<f64>> {
    let (w, b) = classifier_tensors(params, task);
    representation_gradient_raw(w, b, z, label)
}

fn classifier_tensors(params: &ModelParams, task: Task) -> (&Tensor, &Tensor) {
    let (w, b) = match task {
        Task::Attr => ("cls_attr.w", "cls_attr.b"),
        Task::Obj => ("cls_obj.w", "cls_obj.b"),
    };
    (params.get(w).unwrap(), params.get(b).unwrap())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskResult {
    /// `|g_1 − g_2|` per channel.
    pub delta_g: Vec<f64>,
    /// The k-th largest entry of `delta_g`.
    pub threshold: f64,
    /// 0.0 for zeroed channels, 1.0 otherwise.
    pub mask: Vec<f64>,
    pub k_zeroed: usize,
}

/// Number of channels zeroed for a ratio `alpha` of `h` channels: `⌈α·h⌉`.
pub fn zeroed_count(alpha: f64, h: usize) -> usize {
    ((alpha * h as f64 - 1e-9).ceil().max(0.0) as usize).min(h)
}

/// Zeroes the `⌈α·H⌉` channels with the largest gradient difference; equal
/// differences are zeroed lower index first.
pub fn channel_mask(g1: &[f64], g2: &[f64], alpha: f64) -> Result<MaskResult> {
    contract!(
        g1.len() == g2.len(),
        "channel_mask: gradient lengths differ ({} vs {})",
        g1.len(),
        g2.len()
    );
    contract!(
        alpha > 0.0 && alpha < 1.0,
        "channel_mask: alpha must lie in (0, 1), got {alpha}"
    );
    contract!(!g1.is_empty(), "channel_mask: empty gradients");
    let delta_g: Vec<f64> = g1.iter().zip(g2).map(|(a, b)| (a - b).abs()).collect();
    let k = zeroed_count(alpha, delta_g.len());
    let mut order: Vec<usize> = (0..delta_g.len()).collect();
    // stable: equal values keep ascending index order
    order.sort_by(|&i, &j| delta_g[j].total_cmp(&delta_g[i]));
    let mut mask = vec![1.0; delta_g.len()];
    for &i in &order[..k] {
        mask[i] = 0.0;
    }
    let threshold = delta_g[order[k - 1]];
    Ok(MaskResult {
        delta_g,
        threshold,
        mask,
        k_zeroed: k,
    })
}

/// `z ⊙ m` with the mask as a graph constant. `mask` has the shape of `z`.
pub fn apply_mask(g: &mut Graph, z: Var, mask: &Tensor) -> Result<Var> {
    let m = g.constant(mask.clone());
    g.mul(z, m)
}

/// Row-stacked layout of a triplet batch: rows `0..B` are anchors, `B..2B`
/// attribute partners, `2B..3B` object partners. Missing partners occupy a
/// row (filled with the anchor) but carry zero weight everywhere.
#[derive(Clone, Debug)]
pub struct TripletLayout {
    pub b: usize,
    /// Composition labels of all `3B` rows.
    pub pairs: Vec<Pair>,
    pub attr_valid: Vec<bool>,
    pub obj_valid: Vec<bool>,
}

impl TripletLayout {
    /// Per-row weights for classification terms on unmasked representations.
    pub fn member_weights(&self) -> Vec<f64> {
        let b = self.b;
        (0..3 * b)
            .map(|r| match r / b {
                0 => 1.0,
                1 => w(self.attr_valid[r - b]),
                _ => w(self.obj_valid[r - 2 * b]),
            })
            .collect()
    }

    fn labels(&self, task: Task) -> Vec<usize> {
        self.pairs.iter().map(|&p| task.label(p)).collect()
    }
}

fn w(valid: bool) -> f64 {
    if valid {
        1.0
    } else {
        0.0
    }
}

/// Masks for each triplet; `None` where the side's partner is missing.
#[derive(Clone, Debug, Default)]
pub struct TripletMasks {
    pub attr: Vec<Option<MaskResult>>,
    pub obj: Vec<Option<MaskResult>>,
}

impl TripletMasks {
    /// Builds masks from the current representations (values only).
    pub fn compute(
        params: &ModelParams,
        z_attr: &Tensor,
        z_obj: &Tensor,
        layout: &TripletLayout,
        alpha: f64,
    ) -> Result<Self> {
        let b = layout.b;
        let side = |task: Task, z: &Tensor, partner_block: usize, valid: &[bool]| {
            let (wt, bt) = classifier_tensors(params, task);
            (0..b)
                .map(|t| {
                    if !valid[t] {
                        return Ok(None);
                    }
                    let p = partner_block * b + t;
                    let g1 = representation_gradient_raw(
                        wt,
                        bt,
                        z.row_slice(t),
                        task.label(layout.pairs[t]),
                    )?;
                    let g2 = representation_gradient_raw(
                        wt,
                        bt,
                        z.row_slice(p),
                        task.label(layout.pairs[p]),
                    )?;
                    channel_mask(&g1, &g2, alpha).map(Some)
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(TripletMasks {
            attr: side(Task::Attr, z_attr, 1, &layout.attr_valid)?,
            obj: side(Task::Obj, z_obj, 2, &layout.obj_valid)?,
        })
    }

    /// All-ones masks for every valid side.
    pub fn ones(layout: &TripletLayout, h: usize) -> Self {
        let one = || MaskResult {
            delta_g: vec![0.0; h],
            threshold: 0.0,
            mask: vec![1.0; h],
            k_zeroed: 0,
        };
        TripletMasks {
            attr: layout.attr_valid.iter().map(|&v| v.then(one)).collect(),
            obj: layout.obj_valid.iter().map(|&v| v.then(one)).collect(),
        }
    }

    /// `3B × H` mask matrices (attr, obj) in the [`TripletLayout`] row order.
    fn matrices(&self, layout: &TripletLayout, h: usize) -> (Tensor, Tensor) {
        let b = layout.b;
        let mut ma = Tensor::filled(3 * b, h, 1.0);
        let mut mo = Tensor::filled(3 * b, h, 1.0);
        for t in 0..b {
            if let Some(m) = &self.attr[t] {
                ma.row_slice_mut(t).copy_from_slice(&m.mask);
                ma.row_slice_mut(b + t).copy_from_slice(&m.mask);
            }
            if let Some(m) = &self.obj[t] {
                mo.row_slice_mut(t).copy_from_slice(&m.mask);
                mo.row_slice_mut(2 * b + t).copy_from_slice(&m.mask);
            }
        }
        (ma, mo)
    }
}

/// Masked representations `ẑ_attr`, `ẑ_obj` over all `3B` rows.
pub fn masked_representations(
    g: &mut Graph,
    z_attr: Var,
    z_obj: Var,
    layout: &TripletLayout,
    masks: &TripletMasks,
) -> Result<(Var, Var)> {
    let h = g.value(z_attr).cols();
    let (ma, mo) = masks.matrices(layout, h);
    Ok((apply_mask(g, z_attr, &ma)?, apply_mask(g, z_obj, &mo)?))
}

fn weighted_sum(g: &mut Graph, rows: Var, weights: Vec<f64>) -> Result<Var> {
    let n = weights.len();
    let wv = g.constant(Tensor::from_vec(n, 1, weights)?);
    let prod = g.mul(rows, wv)?;
    Ok(g.sum(prod))
}

/// Cross-entropy of both tasks on masked representations: attribute terms
/// for the anchor and attribute partner, object terms for the anchor and
/// object partner; mean over triplets.
pub fn rep_loss(
    g: &mut Graph,
    pv: &ParamVars,
    z_hat_attr: Var,
    z_hat_obj: Var,
    layout: &TripletLayout,
) -> Result<Var> {
    let b = layout.b;
    let la = pv.classify(g, z_hat_attr, Task::Attr)?;
    let ce_a = g.cross_entropy_rows(la, &layout.labels(Task::Attr))?;
    let lo = pv.classify(g, z_hat_obj, Task::Obj)?;
    let ce_o = g.cross_entropy_rows(lo, &layout.labels(Task::Obj))?;
    let wa = (0..3 * b)
        .map(|r| match r / b {
            0 | 1 => w(layout.attr_valid[r % b]),
            _ => 0.0,
        })
        .collect();
    let wo = (0..3 * b)
        .map(|r| match r / b {
            0 | 2 => w(layout.obj_valid[r % b]),
            _ => 0.0,
        })
        .collect();
    let sa = weighted_sum(g, ce_a, wa)?;
    let so = weighted_sum(g, ce_o, wo)?;
    let total = g.add(sa, so)?;
    Ok(g.scale(total, 1.0 / b as f64))
}

/// Flattened `[∂l/∂W ; ∂l/∂b]` per row for `l = CE(W ẑ + b, label)`, built
/// analytically as a differentiable expression. Output is `B × (C·H + C)`,
/// with `∂l/∂W` row-major over `(class, channel)`.
pub fn classifier_gradient(
    g: &mut Graph,
    pv: &ParamVars,
    z_hat: Var,
    task: Task,
    labels: &[usize],
) -> Result<Var> {
    let logits = pv.classify(g, z_hat, task)?;
    let (rows, c) = g.value(logits).shape();
    contract!(
        labels.len() == rows,
        "{} labels for {rows} rows",
        labels.len()
    );
    let mut onehot = Tensor::zeros(rows, c);
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Index { index: y, len: c });
        }
        onehot[(r, y)] = 1.0;
    }
    let p = g.softmax_rows(logits);
    let e = g.constant(onehot);
    let resid = g.sub(p, e)?;
    let dw = g.row_outer(resid, z_hat)?;
    g.concat_cols(dw, resid)
}

/// The classifier gradients of the two members of one domain pair, one row
/// per triplet.
#[derive(Clone, Debug)]
pub struct GradPair {
    pub first: Var,
    pub second: Var,
    pub valid: Vec<bool>,
}

/// Builds the attribute and object [`GradPair`]s from masked representations.
pub fn grad_pairs(
    g: &mut Graph,
    pv: &ParamVars,
    z_hat_attr: Var,
    z_hat_obj: Var,
    layout: &TripletLayout,
) -> Result<(GradPair, GradPair)> {
    let b = layout.b;
    let ga = classifier_gradient(g, pv, z_hat_attr, Task::Attr, &layout.labels(Task::Attr))?;
    let go = classifier_gradient(g, pv, z_hat_obj, Task::Obj, &layout.labels(Task::Obj))?;
    let attr = GradPair {
        first: g.slice_rows(ga, 0, b)?,
        second: g.slice_rows(ga, b, 2 * b)?,
        valid: layout.attr_valid.clone(),
    };
    let obj = GradPair {
        first: g.slice_rows(go, 0, b)?,
        second: g.slice_rows(go, 2 * b, 3 * b)?,
        valid: layout.obj_valid.clone(),
    };
    Ok((attr, obj))
}

/// Per-triplet distance between the two gradients of a pair, `B × 1`.
pub fn pair_distance(g: &mut Graph, pair: &GradPair, metric: GimMetric) -> Result<Var> {
    match metric {
        GimMetric::Euclidean => {
            let diff = g.sub(pair.first, pair.second)?;
            Ok(g.row_norm(diff))
        }
        GimMetric::Cosine => g.row_cosine_distance(pair.first, pair.second),
    }
}

/// Sum of the attribute-pair and object-pair gradient distances, mean over
/// triplets. Sides without a partner contribute zero.
pub fn grad_loss(
    g: &mut Graph,
    pair_attr: &GradPair,
    pair_obj: &GradPair,
    metric: GimMetric,
) -> Result<Var> {
    let b = pair_attr.valid.len();
    contract!(
        b > 0 && pair_obj.valid.len() == b,
        "grad_loss: inconsistent batch sizes"
    );
    let da = pair_distance(g, pair_attr, metric)?;
    let sa = weighted_sum(g, da, pair_attr.valid.iter().map(|&v| w(v)).collect())?;
    let dob = pair_distance(g, pair_obj, metric)?;
    let so = weighted_sum(g, dob, pair_obj.valid.iter().map(|&v| w(v)).collect())?;
    let total = g.add(sa, so)?;
    Ok(g.scale(total, 1.0 / b as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn representation_gradient_two_class_example() {
        let w = Tensor::identity(2);
        let b = Tensor::zeros(1, 2);
        let g = representation_gradient_raw(&w, &b, &[0.0, 0.0], 0).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-15);
        assert!((g[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn representation_gradient_matches_finite_differences() {
        let w = Tensor::from_rows(&[
            vec![0.3, -1.2, 0.5],
            vec![1.1, 0.2, -0.7],
            vec![-0.4, 0.9, 0.1],
        ])
        .unwrap();
        let b = Tensor::row(&[0.1, -0.2, 0.05]);
        let z = [0.4, -0.3, 0.8];
        let prob = |z: &[f64]| {
            let logits: Vec<f64> = (0..3)
                .map(|k| crate::tensor::dot(w.row_slice(k), z) + b.as_slice()[k])
                .collect();
            softmax(&logits)[1]
        };
        let g = representation_gradient_raw(&w, &b, &z, 1).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let (mut zp, mut zm) = (z, z);
            zp[k] += h;
            zm[k] -= h;
            let fd = (prob(&zp) - prob(&zm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-9, "channel {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn saturated_probability_has_vanishing_gradient() {
        let w = Tensor::identity(2);
        let b = Tensor::zeros(1, 2);
        let g = representation_gradient_raw(&w, &b, &[40.0, 0.0], 0).unwrap();
        assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-9);
    }

    #[test]
    fn invalid_label_is_rejected() {
        let w = Tensor::identity(2);
        let b = Tensor::zeros(1, 2);
        assert!(representation_gradient_raw(&w, &b, &[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn mask_reference_example() {
        let g1 = [5.0, 1.0, 4.0, 2.0, 3.0, 0.0];
        let g2 = [0.0; 6];
        let m = channel_mask(&g1, &g2, 1.0 / 3.0).unwrap();
        assert_eq!(m.mask, vec![0.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(m.k_zeroed, 2);
        assert_eq!(m.threshold, 4.0);
    }

    #[test]
    fn mask_ties_zero_lower_indices() {
        let m = channel_mask(&[1.0; 6], &[0.0; 6], 0.5).unwrap();
        assert_eq!(m.mask, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zeroed_count_uses_ceiling() {
        assert_eq!(zeroed_count(1.0 / 6.0, 64), 11);
        assert_eq!(zeroed_count(0.5, 4), 2);
        assert_eq!(zeroed_count(0.1, 30), 3);
        assert_eq!(zeroed_count(1.0 / 3.0, 6), 2);
    }

    #[test]
    fn mask_length_mismatch_is_rejected() {
        assert!(channel_mask(&[1.0, 2.0], &[1.0], 0.5).is_err());
        assert!(channel_mask(&[1.0, 2.0], &[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn unknown_metric_is_config_error() {
        assert!(matches!(
            "manhattan".parse::<GimMetric>(),
            Err(Error::Config(_))
        ));
        assert_eq!("cosine".parse::<GimMetric>().unwrap(), GimMetric::Cosine);
    }
}
