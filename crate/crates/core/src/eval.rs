//! Logistic-regression base classifier and the AUC / F1 / cut-off metrics.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::samplers::{Matrix, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(dim_err(format!(
                "model has {} weights, data has {} columns",
                self.weights.len(),
                x.cols()
            )));
        }
        Ok(x.row_iter().map(|r| self.score(r)).collect())
    }
}

/// Counts of (positives, negatives); rejects labels outside {0, 1}.
fn class_counts(labels: &[u8]) -> Result<(usize, usize)> {
    let mut pos = 0;
    for (row, &y) in labels.iter().enumerate() {
        match y {
            0 => {}
            1 => pos += 1,
            v => {
                return Err(Error::NonBinaryLabel {
                    row,
                    value: v.to_string(),
                })
            }
        }
    }
    Ok((pos, labels.len() - pos))
}

fn require_both(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(dim_err(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let (pos, neg) = class_counts(labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassData);
    }
    Ok((pos, neg))
}

/// Full-batch gradient descent on mean binary cross-entropy, starting from
/// small uniform weights drawn from `rng`.
pub fn fit_logistic(
    data: &Matrix,
    labels: &[u8],
    epochs: usize,
    learning_rate: f64,
    rng: &mut RngStream,
) -> Result<LogisticModel> {
    if data.rows() != labels.len() {
        return Err(dim_err(format!("{} rows for {} labels", data.rows(), labels.len())));
    }
    let (pos, neg) = class_counts(labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassData);
    }
    let d = data.cols();
    let mut model = LogisticModel {
        weights: (0..d).map(|_| rng.uniform_range(-0.01, 0.01)).collect(),
        bias: 0.0,
    };
    if learning_rate == 0.0 {
        return Ok(model);
    }
    let n = labels.len() as f64;
    let mut gw = vec![0.0; d];
    for _ in 0..epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, &y) in data.row_iter().zip(labels) {
            let r = model.score(x) - f64::from(y);
            gb += r;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += r * v;
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= learning_rate * g / n;
        }
        model.bias -= learning_rate * gb / n;
    }
    if model.weights.iter().any(|w| !w.is_finite()) || !model.bias.is_finite() {
        return Err(Error::NonFinite("logistic regression diverged".into()));
    }
    Ok(model)
}

/// Mann-Whitney AUC with ties counted one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = require_both(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over tie groups, 1-based.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// F1 of the predictions `score >= cutoff`.
pub fn f1_at_cutoff(scores: &[f64], labels: &[u8], cutoff: f64) -> Result<f64> {
    require_both(scores, labels)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= cutoff, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

/// Midpoints between consecutive sorted unique scores; a single unique score
/// is its own candidate.
pub fn cutoff_candidates(scores: &[f64]) -> Vec<f64> {
    let mut u = scores.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    if u.len() == 1 {
        return u;
    }
    u.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// The candidate cut-off with the largest training F1, smallest on ties.
pub fn select_cutoff(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = require_both(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sweep ascending: everything before `next` is predicted negative.
    let (mut tp, mut fp) = (pos, labels.len() - pos);
    let mut next = 0;
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for c in cutoff_candidates(scores) {
        while next < order.len() && scores[order[next]] < c {
            if labels[order[next]] == 1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            next += 1;
        }
        let f = f1_from_counts(tp, fp, pos - tp);
        if f > best.0 {
            best = (f, c);
        }
    }
    Ok(best.1)
}

/// One CSV row of experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub site: String,
    pub condition: String,
    pub auc: f64,
    pub auc_sd: f64,
    pub f1: f64,
    pub cutoff: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    num += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.0, 0.0, 1.0, 1.0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClassData)));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_at_cutoff(&[0.1, 0.9], &[0, 1], 0.5).unwrap(), 1.0);
        assert_eq!(f1_at_cutoff(&[0.1, 0.2], &[0, 1], 0.5).unwrap(), 0.0);
        // 2 TP, 1 FP, 1 FN
        let s = [0.9, 0.8, 0.7, 0.1, 0.05];
        let y = [1, 1, 0, 1, 0];
        assert!((f1_at_cutoff(&s, &y, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cutoff_examples() {
        let s = [0.1, 0.2, 0.8, 0.9];
        let y = [0, 0, 1, 1];
        assert_eq!(select_cutoff(&s, &y).unwrap(), 0.5);
        let single = select_cutoff(&[0.4, 0.4, 0.4], &[0, 1, 1]).unwrap();
        assert_eq!(single, 0.4);
        assert!((f1_at_cutoff(&[0.4, 0.4, 0.4], &[0, 1, 1], single).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn logistic_separable_and_degenerate() {
        let x = Matrix::new(6, 1, vec![-3.0, -2.5, -2.0, 2.0, 2.5, 3.0]).unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let m = fit_logistic(&x, &y, 500, 0.5, &mut RngStream::new(1)).unwrap();
        let p = m.predict_proba(&x).unwrap();
        assert!(p.iter().zip(&y).all(|(s, &l)| (*s >= 0.5) == (l == 1)));
        assert!(matches!(
            fit_logistic(&x, &[1; 6], 10, 0.5, &mut RngStream::new(1)),
            Err(Error::SingleClassData)
        ));
        let init = fit_logistic(&x, &y, 0, 0.5, &mut RngStream::new(3)).unwrap();
        let zero = fit_logistic(&x, &y, 100, 0.0, &mut RngStream::new(3)).unwrap();
        assert_eq!(init, zero);
    }

    #[test]
    fn f1_piecewise_constant_between_scores() {
        let s = [0.1, 0.3, 0.6, 0.65, 0.9];
        let y = [0, 1, 0, 1, 1];
        let mut prev: Option<(f64, f64)> = None;
        let mut sorted = s.to_vec();
        sorted.sort_by(f64::total_cmp);
        for step in 0..=1000 {
            let c = step as f64 / 1000.0;
            let f = f1_at_cutoff(&s, &y, c).unwrap();
            if let Some((pc, pf)) = prev {
                let crossed = sorted.iter().any(|&v| v >= pc && v < c);
                if !crossed {
                    assert_eq!(pf, f, "F1 changed at {c} without crossing a score");
                }
            }
            prev = Some((c, f));
        }
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|v| f64::from(v) / 20.0), n),
                prop::collection::vec(0u8..2, n),
            )
                .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
        })
    }

    proptest! {
        #[test]
        fn auc_matches_all_pairs((s, y) in scored_labels()) {
            prop_assert!((auc(&s, &y).unwrap() - auc_pairs(&s, &y)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform((s, y) in scored_labels()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc(&s, &y).unwrap(), auc(&t, &y).unwrap());
        }

        #[test]
        fn auc_label_flip_complements(n in 2usize..30, seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            let s: Vec<f64> = (0..n).map(|i| i as f64 + 0.5 * rng.uniform()).collect();
            let mut y: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
            y[0] = 0;
            y[1] = 1;
            let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
            prop_assert!((auc(&s, &y).unwrap() + auc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cutoff_attains_grid_max((s, y) in scored_labels()) {
            let c = select_cutoff(&s, &y).unwrap();
            let grid = cutoff_candidates(&s);
            let best = grid.iter().map(|&g| f1_at_cutoff(&s, &y, g).unwrap()).fold(f64::MIN, f64::max);
            prop_assert_eq!(f1_at_cutoff(&s, &y, c).unwrap(), best);
            let first = grid.iter().copied().find(|&g| f1_at_cutoff(&s, &y, g).unwrap() == best).unwrap();
            prop_assert_eq!(c, first);
        }
    }
}
