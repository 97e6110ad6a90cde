//! Evaluation metrics: macro-averaged F1 for labels, rank-statistic AUC for
//! similarity scores.

/// Unweighted mean of per-class F1 over the classes that occur in either
/// `gold` or `pred`. A class with no true positives scores 0. Returns `None`
/// for empty input.
pub fn macro_f1(pred: &[usize], gold: &[usize]) -> Option<f64> {
    assert_eq!(pred.len(), gold.len(), "prediction and label counts differ");
    if gold.is_empty() {
        return None;
    }
    let classes = pred.iter().chain(gold).copied().max().unwrap() + 1;
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fnc = vec![0usize; classes];
    for (&p, &g) in pred.iter().zip(gold) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fnc[g] += 1;
        }
    }
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..classes {
        if tp[c] + fp[c] + fnc[c] == 0 {
            continue;
        }
        present += 1;
        total += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fnc[c]) as f64;
    }
    Some(total / present as f64)
}

/// Area under the ROC curve as the Mann–Whitney statistic: the probability
/// that a random positive outscores a random negative, ties counting half.
/// `None` unless both classes are present.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len(), "score and label counts differ");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks (1-based) over runs of tied scores.
    let mut rank = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            rank[k] = avg;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let rank_sum: f64 = rank.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// F1 of always predicting the most frequent gold label.
pub fn majority_baseline_f1(gold: &[usize]) -> Option<f64> {
    let classes = gold.iter().copied().max()? + 1;
    let mut counts = vec![0usize; classes];
    gold.iter().for_each(|&g| counts[g] += 1);
    let majority = (0..classes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))?;
    macro_f1(&vec![majority; gold.len()], gold)
}
