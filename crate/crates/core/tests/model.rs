mod common;

use nalgebra::DMatrix;

use common::rel_err;
use ivr::data::Pair;
use ivr::model::{ModelDims, ModelParams, PairScores, Task};
use ivr::tensor::{Graph, Rng, Tensor};

fn dims() -> ModelDims {
    ModelDims {
        feat_dim: 5,
        emb_hidden: 6,
        embed_dim: 4,
        word_dim: 3,
        disent_dim: 4,
        n_attrs: 3,
        n_objs: 2,
    }
}

fn params(seed: u64) -> ModelParams {
    ModelParams::init(dims(), 0.05, &mut Rng::new(seed)).unwrap()
}

fn features(seed: u64, n: usize) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::from_vec(n, 5, (0..n * 5).map(|_| rng.normal()).collect()).unwrap()
}

fn mat(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.as_slice())
}

fn all_pairs() -> Vec<Pair> {
    (0..3)
        .flat_map(|a| (0..2).map(move |o| Pair::new(a, o)))
        .collect()
}

#[test]
fn classify_matches_matrix_oracle() {
    let p = params(1);
    let z = features(2, 7).map(|x| x * 0.5);
    let z = Tensor::from_vec(7, 4, z.as_slice()[..28].to_vec()).unwrap();
    for (task, w, b) in [
        (Task::Attr, "cls_attr.w", "cls_attr.b"),
        (Task::Obj, "cls_obj.w", "cls_obj.b"),
    ] {
        let logits = p.classify(&z, task).unwrap();
        let mut expect = mat(&z) * mat(p.get(w).unwrap()).transpose();
        for mut row in expect.row_iter_mut() {
            row += mat(p.get(b).unwrap()).row(0);
        }
        let got = mat(&logits);
        assert!((got - expect).amax() <= 1e-12);
    }
}

/// `1 − cos(ω(x), g(a, o))` computed entry by entry.
#[test]
fn composition_distance_matches_direct_formula() {
    let p = params(3);
    let x = features(4, 6);
    let pairs = all_pairs();
    let d = p.composition_distance(&x, &pairs).unwrap();
    let t = |n: &str| mat(p.get(n).unwrap());
    for i in 0..x.rows() {
        let xi = DMatrix::from_row_slice(5, 1, x.row_slice(i));
        let h = (t("emb.w1") * xi + t("emb.b1").transpose()).map(|v| v.max(0.0));
        let e = t("emb.w2") * h + t("emb.b2").transpose();
        for (j, pr) in pairs.iter().enumerate() {
            let cat: Vec<f64> = p
                .get("comp.attr_table")
                .unwrap()
                .row_slice(pr.attr)
                .iter()
                .chain(p.get("comp.obj_table").unwrap().row_slice(pr.obj))
                .copied()
                .collect();
            let c = t("comp.w") * DMatrix::from_column_slice(6, 1, &cat) + t("comp.b").transpose();
            let expect = 1.0 - e.dot(&c) / (e.norm() * c.norm());
            assert!((d[(i, j)] - expect).abs() <= 1e-12);
            assert!((0.0..=2.0).contains(&d[(i, j)]));
        }
    }
}

#[test]
fn matching_embeddings_have_zero_distance() {
    // ω collapses to its bias, and g of pair (0,0) collapses to the same vector.
    let mut p = params(5);
    let target = [0.3, -1.0, 2.0, 0.5];
    p.get_mut("emb.w2").unwrap().as_mut_slice().fill(0.0);
    p.get_mut("emb.b2")
        .unwrap()
        .as_mut_slice()
        .copy_from_slice(&target);
    p.get_mut("comp.w").unwrap().as_mut_slice().fill(0.0);
    p.get_mut("comp.b")
        .unwrap()
        .as_mut_slice()
        .copy_from_slice(&target);
    let d = p
        .composition_distance(&features(6, 3), &[Pair::new(0, 0)])
        .unwrap();
    assert!(d.as_slice().iter().all(|x| x.abs() < 1e-15));
}

#[test]
fn composition_loss_gradient_matches_finite_differences() {
    let p = params(7);
    let x = features(8, 4);
    let seen = all_pairs();
    let truth = vec![
        Pair::new(0, 1),
        Pair::new(2, 0),
        Pair::new(1, 1),
        Pair::new(0, 0),
    ];
    let mut g = Graph::new();
    let pv = p.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let l = pv.composition_loss(&mut g, xv, &truth, &seen).unwrap();
    g.backward(l).unwrap();
    let grads = p.grads_from(&g, &pv);
    let h = 1e-5;
    let mut q = p.clone();
    for (k, name) in ivr::model::PARAM_NAMES.iter().enumerate() {
        for j in 0..p.tensors()[k].len() {
            let orig = p.tensors()[k].as_slice()[j];
            q.get_mut(name).unwrap().as_mut_slice()[j] = orig + h;
            let up = q.composition_loss(&x, &truth, &seen).unwrap();
            q.get_mut(name).unwrap().as_mut_slice()[j] = orig - h;
            let down = q.composition_loss(&x, &truth, &seen).unwrap();
            q.get_mut(name).unwrap().as_mut_slice()[j] = orig;
            let e = rel_err(grads[k].as_slice()[j], (up - down) / (2.0 * h));
            assert!(e <= 1e-5, "{name}[{j}]: {e:.3e}");
        }
    }
}

#[test]
fn disentangler_gradient_matches_finite_differences() {
    let p = params(9);
    let x = features(10, 3);
    let mut g = Graph::new();
    let pv = p.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let (za, _) = pv.disentangle(&mut g, xv).unwrap();
    let s = g.sum(za);
    g.backward(s).unwrap();
    let grad = p.grads_from(&g, &pv)[ivr::model::PARAM_NAMES
        .iter()
        .position(|n| *n == "disent_attr.w")
        .unwrap()]
    .clone();
    let h = 1e-5;
    let mut q = p.clone();
    for j in 0..grad.len() {
        let orig = p.get("disent_attr.w").unwrap().as_slice()[j];
        let f = |q: &ModelParams| q.disentangle(&x).unwrap().0.sum();
        q.get_mut("disent_attr.w").unwrap().as_mut_slice()[j] = orig + h;
        let up = f(&q);
        q.get_mut("disent_attr.w").unwrap().as_mut_slice()[j] = orig - h;
        let down = f(&q);
        q.get_mut("disent_attr.w").unwrap().as_mut_slice()[j] = orig;
        assert!(rel_err(grad.as_slice()[j], (up - down) / (2.0 * h)) <= 1e-6);
    }
}

fn argsort(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx
}

#[test]
fn uniform_component_leaves_other_ranking() {
    let p = params(11);
    let parts = p.pair_score_parts(&features(12, 5), &all_pairs()).unwrap();
    let n = all_pairs().len();
    let uniform = Tensor::filled(5, n, 1.0 / n as f64);
    let only_dec = PairScores {
        embedding: uniform.clone(),
        decoupled: parts.decoupled.clone(),
    }
    .fused();
    let only_emb = PairScores {
        embedding: parts.embedding.clone(),
        decoupled: uniform,
    }
    .fused();
    for i in 0..5 {
        assert_eq!(
            argsort(only_dec.row_slice(i)),
            argsort(parts.decoupled.row_slice(i))
        );
        assert_eq!(
            argsort(only_emb.row_slice(i)),
            argsort(parts.embedding.row_slice(i))
        );
    }
}

#[test]
fn score_components_are_distributions() {
    let p = params(13);
    let x = features(14, 8);
    let parts = p.pair_score_parts(&x, &all_pairs()).unwrap();
    for t in [&parts.embedding, &parts.decoupled] {
        for i in 0..8 {
            let row = t.row_slice(i);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
    // deterministic
    assert_eq!(p.pair_score(&x, &all_pairs()).unwrap(), parts.fused());
}
