//! Generation and downstream metrics: inception score, predictive
//! entropies, equal error rate, AUROC, AUPRC, MAE and accuracy.
//!
//! Probabilities are rows of a `[n, K]` tensor. Logs are natural.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_probs(p: &Tensor) -> Result<(usize, usize)> {
    if p.rank() != 2 {
        return Err(Error::Data(format!("expected [n, K] probabilities, got {:?}", p.shape())));
    }
    let (n, k) = (p.shape()[0], p.shape()[1]);
    if n == 0 || k == 0 {
        return Err(Error::Data("empty prediction set".into()));
    }
    Ok((n, k))
}

/// Mean over rows of `p(y | x)`.
pub fn marginal(p: &Tensor) -> Result<Vec<f64>> {
    let (n, k) = check_probs(p)?;
    let mut m = vec![0.0; k];
    for i in 0..n {
        for (j, v) in p.row(i).iter().enumerate() {
            m[j] += v;
        }
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    Ok(m)
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `exp(E_x KL(p(y|x) || p(y)))`.
pub fn inception_score(p: &Tensor) -> Result<f64> {
    let (n, _) = check_probs(p)?;
    let m = marginal(p)?;
    let mut kl: f64 = 0.0;
    for i in 0..n {
        for (j, &v) in p.row(i).iter().enumerate() {
            if v > 0.0 {
                kl += v * (v.ln() - m[j].ln());
            }
        }
    }
    Ok((kl / n as f64).exp())
}

/// `(H(y|x), H(y))`: mean per-sample entropy and entropy of the marginal.
pub fn entropy_metrics(p: &Tensor) -> Result<(f64, f64)> {
    let (n, _) = check_probs(p)?;
    let conditional = (0..n).map(|i| entropy(p.row(i))).sum::<f64>() / n as f64;
    Ok((conditional, entropy(&marginal(p)?)))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Equal error rate of scored pairs `(score, same)`, where a pair is
/// accepted when `score >= threshold`. Rates are evaluated at every
/// distinct score; the crossing of the false-accept and false-reject
/// curves is linearly interpolated.
pub fn eer(pairs: &[(f64, bool)]) -> Result<f64> {
    let positives = pairs.iter().filter(|p| p.1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Data(
            "equal error rate needs both same and different pairs".into(),
        ));
    }
    if pairs.iter().any(|p| !p.0.is_finite()) {
        return Err(Error::NonFinite { what: "similarity score".into() });
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Threshold above every score: nothing accepted.
    let mut fpr_prev = 0.0;
    let mut fnr_prev = 1.0;
    let mut accepted_pos = 0usize;
    let mut accepted_neg = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                accepted_pos += 1;
            } else {
                accepted_neg += 1;
            }
            i += 1;
        }
        let fpr = accepted_neg as f64 / negatives as f64;
        let fnr = 1.0 - accepted_pos as f64 / positives as f64;
        if fpr >= fnr {
            // The difference fpr - fnr changes sign between the previous
            // and the current threshold.
            let d_prev = fpr_prev - fnr_prev;
            let d_cur = fpr - fnr;
            let w = if d_cur == d_prev { 0.0 } else { -d_prev / (d_cur - d_prev) };
            return Ok(fpr_prev + w * (fpr - fpr_prev));
        }
        fpr_prev = fpr;
        fnr_prev = fnr;
    }
    unreachable!("all pairs accepted gives fpr = 1 >= fnr = 0")
}

fn check_binary(scores: &[f64], targets: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} scores for {} targets",
            scores.len(),
            targets.len()
        )));
    }
    let pos = targets.iter().filter(|&&t| t).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("binary targets contain a single class".into()));
    }
    Ok((pos, neg))
}

/// Points of the ROC curve at every distinct threshold, from (0, 0) to (1, 1),
/// plus cumulative true positives for precision-recall.
fn sweep(scores: &[f64], targets: &[bool]) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![(0, 0)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if targets[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// Area under the ROC curve by the trapezoid rule.
pub fn auroc(scores: &[f64], targets: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, targets)?;
    let pts = sweep(scores, targets);
    let mut area = 0.0;
    for w in pts.windows(2) {
        let (tp0, fp0) = w[0];
        let (tp1, fp1) = w[1];
        let dx = (fp1 - fp0) as f64 / neg as f64;
        area += dx * (tp0 + tp1) as f64 / (2.0 * pos as f64);
    }
    Ok(area)
}

/// Area under the precision-recall curve as `sum (R_n - R_{n-1}) P_n`.
pub fn auprc(scores: &[f64], targets: &[bool]) -> Result<f64> {
    let (pos, _) = check_binary(scores, targets)?;
    let pts = sweep(scores, targets);
    let mut area = 0.0;
    for w in pts.windows(2) {
        let (tp0, _) = w[0];
        let (tp1, fp1) = w[1];
        let precision = tp1 as f64 / (tp1 + fp1) as f64;
        area += (tp1 - tp0) as f64 / pos as f64 * precision;
    }
    Ok(area)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Data(format!(
            "mae needs equal non-empty inputs, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn accuracy(pred: &[usize], target: &[usize]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Data(format!(
            "accuracy needs equal non-empty inputs, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot_uniform(k: usize, reps: usize) -> Tensor {
        Tensor::from_fn(&[k * reps, k], |i| ((i / k) % k == i % k) as u8 as f64)
    }

    #[test]
    fn one_hot_uniform_predictions_reach_the_ceiling() {
        let p = one_hot_uniform(9, 3);
        assert!((inception_score(&p).unwrap() - 9.0).abs() < 1e-12);
        let (hyx, hy) = entropy_metrics(&p).unwrap();
        assert_eq!(hyx, 0.0);
        assert!((hy - 9f64.ln()).abs() < 1e-15);
        assert!((hy - 2.197).abs() < 5e-4);
    }

    #[test]
    fn identical_predictions_score_one() {
        let p = Tensor::from_fn(&[5, 3], |i| [0.2, 0.5, 0.3][i % 3]);
        assert!((inception_score(&p).unwrap() - 1.0).abs() < 1e-15);
        let (hyx, hy) = entropy_metrics(&p).unwrap();
        assert!((hyx - hy).abs() < 1e-15);
    }

    #[test]
    fn two_class_toy_matches_hand_sum() {
        let p = Tensor::new(vec![3, 2], vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4]).unwrap();
        let m: [f64; 2] = [(0.9 + 0.2 + 0.6) / 3.0, (0.1 + 0.8 + 0.4) / 3.0];
        let rows: [[f64; 2]; 3] = [[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]];
        let mut kl: f64 = 0.0;
        for r in rows {
            kl += r[0] * (r[0] / m[0]).ln() + r[1] * (r[1] / m[1]).ln();
        }
        let expected = (kl / 3.0).exp();
        assert!((inception_score(&p).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn uniform_conditionals_have_log_k_entropy() {
        let p = Tensor::full(&[4, 7], 1.0 / 7.0);
        let (hyx, _) = entropy_metrics(&p).unwrap();
        assert!((hyx - 7f64.ln()).abs() < 1e-14);
        assert!(entropy_metrics(&Tensor::zeros(&[0, 3])).is_err());
    }

    #[test]
    fn eer_limits() {
        let separated: Vec<(f64, bool)> =
            (0..20).map(|i| (if i < 10 { 0.9 } else { 0.1 }, i < 10)).collect();
        assert_eq!(eer(&separated).unwrap(), 0.0);
        let reversed: Vec<(f64, bool)> = separated.iter().map(|&(s, l)| (s, !l)).collect();
        assert_eq!(eer(&reversed).unwrap(), 1.0);
        assert!(eer(&[(0.5, true)]).is_err());
    }

    #[test]
    fn eer_interpolates_between_thresholds() {
        // One negative scoring above one positive out of two each.
        let pairs = [(0.9, true), (0.7, false), (0.5, true), (0.1, false)];
        assert!((eer(&pairs).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_scores_sit_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
        assert!((eer(&pairs).unwrap() - 0.5).abs() < 0.05);
        assert!((auroc(&scores, &labels).unwrap() - 0.5).abs() < 0.03);
    }

    #[test]
    fn perfect_ranking() {
        let scores = [0.9, 0.8, 0.3, 0.2, 0.1];
        let targets = [true, true, false, false, false];
        assert_eq!(auroc(&scores, &targets).unwrap(), 1.0);
        assert_eq!(auprc(&scores, &targets).unwrap(), 1.0);
        assert!(auroc(&scores, &[true; 5]).is_err());
    }

    #[test]
    fn auroc_counts_ties_as_half() {
        let scores = [0.5, 0.5];
        assert_eq!(auroc(&scores, &[true, false]).unwrap(), 0.5);
        assert_eq!(auprc(&scores, &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn mae_and_accuracy() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[0.0, 4.0]).unwrap(), 1.5);
        assert_eq!(accuracy(&[1, 2, 3, 0], &[1, 2, 0, 0]).unwrap(), 0.75);
        assert!(mae(&[], &[]).is_err());
    }

    /// Mann-Whitney form of AUROC over all positive/negative pairs.
    fn auroc_pairs(scores: &[f64], targets: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for (i, &ti) in targets.iter().enumerate() {
            for (j, &tj) in targets.iter().enumerate() {
                if ti && !tj {
                    total += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        wins / total
    }

    proptest! {
        #[test]
        fn trapezoid_auroc_equals_pair_counting(
            raw in prop::collection::vec((0u8..6, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 5.0).collect();
            let targets: Vec<bool> = raw.iter().map(|r| r.1).collect();
            prop_assume!(targets.iter().any(|&t| t) && targets.iter().any(|&t| !t));
            let a = auroc(&scores, &targets).unwrap();
            prop_assert!((a - auroc_pairs(&scores, &targets)).abs() < 1e-12);
        }

        #[test]
        fn score_bounds_and_jensen(
            rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 1..20)
        ) {
            let n = rows.len();
            let data: Vec<f64> = rows
                .iter()
                .flat_map(|r| {
                    let s: f64 = r.iter().sum();
                    r.iter().map(move |v| v / s)
                })
                .collect();
            let p = Tensor::new(vec![n, 4], data).unwrap();
            let is = inception_score(&p).unwrap();
            prop_assert!((1.0 - 1e-12..=4.0 + 1e-12).contains(&is));
            let (hyx, hy) = entropy_metrics(&p).unwrap();
            prop_assert!(hyx <= hy + 1e-12);
        }
    }
}
