//! Generalized seen/unseen evaluation with a calibration bias, and
//! composition-query retrieval.
//!
//! A scalar bias is added to every unseen candidate's score. Sweeping the
//! bias traces a curve of (seen accuracy, unseen accuracy). The bias values
//! visited are exactly the per-sample breakpoints `max_seen − max_unseen`,
//! plus one value below and one above all of them, so every distinct
//! operating point of the curve is visited once.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::data::{FeatureDataset, Pair, Partition};
use crate::error::{contract, Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

/// Per-sample candidate scores with ground truth.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    pub scores: Tensor,
    pub candidates: Vec<Pair>,
    /// `true` for unseen candidates.
    pub unseen: Vec<bool>,
    /// Index into `candidates` of each sample's true pair.
    pub truth: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(
        scores: Tensor,
        candidates: Vec<Pair>,
        unseen: Vec<bool>,
        truth: Vec<usize>,
    ) -> Result<Self> {
        contract!(
            scores.cols() == candidates.len() && unseen.len() == candidates.len(),
            "score matrix has {} columns for {} candidates ({} flags)",
            scores.cols(),
            candidates.len(),
            unseen.len()
        );
        contract!(
            truth.len() == scores.rows(),
            "{} truths for {} samples",
            truth.len(),
            scores.rows()
        );
        if let Some(&t) = truth.iter().find(|&&t| t >= candidates.len()) {
            return Err(Error::Index {
                index: t,
                len: candidates.len(),
            });
        }
        Ok(ScoreMatrix {
            scores,
            candidates,
            unseen,
            truth,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub bias: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Sorted by bias, ascending. Accuracies in `[0, 1]`.
    pub curve: Vec<CurvePoint>,
    /// Seen accuracy at the most negative bias, ×100.
    pub best_seen: f64,
    /// Unseen accuracy at the most positive bias, ×100.
    pub best_unseen: f64,
    pub best_hm: f64,
    pub auc: f64,
}

#[derive(Serialize)]
struct ReportJson {
    seen: f64,
    unseen: f64,
    hm: f64,
    auc: f64,
    n_bias_points: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let r = ReportJson {
            seen: self.best_seen,
            unseen: self.best_unseen,
            hm: self.best_hm,
            auc: self.auc,
            n_bias_points: self.curve.len(),
        };
        serde_json::to_string_pretty(&r).expect("report serializes") + "\n"
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("bias,seen_acc,unseen_acc\n");
        for p in &self.curve {
            s.push_str(&format!("{},{},{}\n", p.bias, p.seen_acc, p.unseen_acc));
        }
        s
    }

    /// Writes `report.json` and `curve.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.json", self.to_json()),
            ("curve.csv", self.curve_csv()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

/// Best-scoring seen and unseen candidate of one row (lowest index on ties).
fn group_maxima(row: &[f64], unseen: &[bool]) -> ((f64, usize), (f64, usize)) {
    let mut best = [(f64::NEG_INFINITY, usize::MAX); 2];
    for (j, (&s, &u)) in row.iter().zip(unseen).enumerate() {
        let slot = &mut best[u as usize];
        if s > slot.0 || slot.1 == usize::MAX {
            *slot = (s, j);
        }
    }
    (best[0], best[1])
}

/// Sweeps the calibration bias over all breakpoints.
///
/// For a sample with best seen score `s` and best unseen score `u`, the
/// prediction switches from the seen to the unseen candidate once the bias
/// exceeds `s − u`. At exactly `s − u` the seen candidate is kept, which is
/// the lower-index rule under the seen-first candidate order produced by
/// [`score_partition`].
pub fn calibration_sweep(sm: &ScoreMatrix) -> Result<EvalReport> {
    let n_unseen_c = sm.unseen.iter().filter(|&&u| u).count();
    if n_unseen_c == 0 || n_unseen_c == sm.unseen.len() {
        return Err(Error::Protocol(
            "calibration sweep needs both seen and unseen candidates".into(),
        ));
    }
    let true_unseen: Vec<bool> = sm.truth.iter().map(|&t| sm.unseen[t]).collect();
    let n_u = true_unseen.iter().filter(|&&u| u).count();
    let n_s = true_unseen.len() - n_u;
    if n_u == 0 {
        return Err(Error::Protocol(
            "no samples with an unseen true pair".into(),
        ));
    }
    if n_s == 0 {
        return Err(Error::Protocol("no samples with a seen true pair".into()));
    }

    struct Sample {
        diff: f64,
        seen_hit: bool,
        unseen_hit: bool,
        true_unseen: bool,
    }
    let samples: Vec<Sample> = (0..sm.scores.rows())
        .map(|i| {
            let ((s, si), (u, ui)) = group_maxima(sm.scores.row_slice(i), &sm.unseen);
            Sample {
                diff: s - u,
                seen_hit: si == sm.truth[i],
                unseen_hit: ui == sm.truth[i],
                true_unseen: true_unseen[i],
            }
        })
        .collect();

    let mut biases: Vec<f64> = samples.iter().map(|s| s.diff).collect();
    biases.sort_by(f64::total_cmp);
    biases.dedup();
    let lo = biases[0] - 1.0;
    let hi = biases[biases.len() - 1] + 1.0;
    biases.insert(0, lo);
    biases.push(hi);

    let curve: Vec<CurvePoint> = biases
        .iter()
        .map(|&bias| {
            let (mut cs, mut cu) = (0usize, 0usize);
            for s in &samples {
                let hit = if bias > s.diff {
                    s.unseen_hit
                } else {
                    s.seen_hit
                };
                if hit {
                    if s.true_unseen {
                        cu += 1;
                    } else {
                        cs += 1;
                    }
                }
            }
            CurvePoint {
                bias,
                seen_acc: cs as f64 / n_s as f64,
                unseen_acc: cu as f64 / n_u as f64,
            }
        })
        .collect();

    Ok(summarize(curve))
}

/// Derives the summary numbers from a curve sorted by ascending bias.
pub fn summarize(curve: Vec<CurvePoint>) -> EvalReport {
    // Descending bias gives ascending seen accuracy.
    let auc = curve
        .windows(2)
        .rev()
        .map(|w| (w[0].seen_acc - w[1].seen_acc) * (w[0].unseen_acc + w[1].unseen_acc) / 2.0)
        .sum::<f64>();
    let best_hm = curve
        .iter()
        .map(|p| harmonic_mean(p.seen_acc, p.unseen_acc))
        .fold(0.0, f64::max);
    EvalReport {
        best_seen: 100.0 * curve.first().map_or(0.0, |p| p.seen_acc),
        best_unseen: 100.0 * curve.last().map_or(0.0, |p| p.unseen_acc),
        best_hm: 100.0 * best_hm,
        auc: 100.0 * auc,
        curve,
    }
}

/// Fused scores of every sample in `partition` over the split's candidates
/// (seen pairs first, then unseen).
pub fn score_partition(
    params: &ModelParams,
    ds: &FeatureDataset,
    partition: Partition,
) -> Result<ScoreMatrix> {
    let idx = ds.indices(partition);
    if idx.is_empty() {
        return Err(Error::Protocol(format!("{partition} partition is empty")));
    }
    let candidates = ds.split().candidates();
    let unseen = candidates
        .iter()
        .map(|&p| ds.split().is_unseen(p))
        .collect();
    let truth = idx
        .iter()
        .map(|&i| {
            let p = ds.labels()[i].pair;
            candidates.iter().position(|&c| c == p).ok_or_else(|| {
                Error::Validation(format!("sample {i} has a pair outside the split"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = params.pair_score(&ds.gather(&idx), &candidates)?;
    ScoreMatrix::new(scores, candidates, unseen, truth)
}

pub fn evaluate(
    params: &ModelParams,
    ds: &FeatureDataset,
    partition: Partition,
) -> Result<EvalReport> {
    calibration_sweep(&score_partition(params, ds, partition)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub index: usize,
    pub pair: Pair,
    pub score: f64,
}

/// The `k` test samples scoring highest for the query composition,
/// best first; ties go to the lower sample index.
pub fn retrieve_topk(
    params: &ModelParams,
    ds: &FeatureDataset,
    query: (&str, &str),
    k: usize,
) -> Result<Vec<Retrieved>> {
    let q = Pair::new(
        ds.vocab().attr_index(query.0)?,
        ds.vocab().obj_index(query.1)?,
    );
    if k == 0 {
        return Ok(Vec::new());
    }
    let idx = ds.indices(Partition::Test);
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let mut candidates = ds.split().candidates();
    let col = match candidates.iter().position(|&c| c == q) {
        Some(c) => c,
        None => {
            candidates.push(q);
            candidates.len() - 1
        }
    };
    let scores = params.pair_score(&ds.gather(&idx), &candidates)?;
    let mut hits: Vec<Retrieved> = idx
        .iter()
        .enumerate()
        .map(|(r, &i)| Retrieved {
            index: i,
            pair: ds.labels()[i].pair,
            score: scores[(r, col)],
        })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    hits.truncate(k);
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand() -> ScoreMatrix {
        ScoreMatrix::new(
            Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap(),
            vec![Pair::new(0, 0), Pair::new(1, 1)],
            vec![false, true],
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn hand_example_endpoints() {
        let r = calibration_sweep(&hand()).unwrap();
        let first = r.curve.first().unwrap();
        let last = r.curve.last().unwrap();
        assert_eq!((first.seen_acc, first.unseen_acc), (1.0, 0.0));
        assert_eq!((last.seen_acc, last.unseen_acc), (0.0, 1.0));
        assert_eq!(r.best_seen, 100.0);
        assert_eq!(r.best_unseen, 100.0);
        // at bias 0.8 both samples are right
        assert_eq!(r.best_hm, 100.0);
        assert_eq!(r.auc, 100.0);
    }

    #[test]
    fn straight_segment_has_half_area() {
        let curve = vec![
            CurvePoint {
                bias: -1.0,
                seen_acc: 1.0,
                unseen_acc: 0.0,
            },
            CurvePoint {
                bias: 1.0,
                seen_acc: 0.0,
                unseen_acc: 1.0,
            },
        ];
        assert_eq!(summarize(curve).auc, 50.0);
    }

    #[test]
    fn harmonic_mean_values() {
        assert_eq!(harmonic_mean(0.5, 0.5), 0.5);
        assert!((harmonic_mean(0.6, 0.4) - 0.48).abs() < 1e-15);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    #[test]
    fn missing_unseen_truth_is_protocol_error() {
        let sm = ScoreMatrix::new(
            Tensor::from_rows(&[vec![0.9, 0.1]]).unwrap(),
            vec![Pair::new(0, 0), Pair::new(1, 1)],
            vec![false, true],
            vec![0],
        )
        .unwrap();
        assert!(matches!(calibration_sweep(&sm), Err(Error::Protocol(_))));
    }

    #[test]
    fn row_shift_changes_no_prediction() {
        let mut sm = hand();
        let before = calibration_sweep(&sm).unwrap();
        for x in sm.scores.row_slice_mut(0) {
            *x += 3.5;
        }
        let after = calibration_sweep(&sm).unwrap();
        let acc = |r: &EvalReport| {
            r.curve
                .iter()
                .map(|p| (p.seen_acc, p.unseen_acc))
                .collect::<Vec<_>>()
        };
        assert_eq!(acc(&before), acc(&after));
    }
}
