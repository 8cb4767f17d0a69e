//! Area under the ROC curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub score: f64,
    pub positive: bool,
}

impl ScoredLabel {
    pub fn new(score: f64, positive: bool) -> Self {
        Self { score, positive }
    }

    /// Builds from a numeric label, which must be exactly 0 or 1.
    pub fn from_label(score: f64, label: f64) -> Result<Self> {
        match label {
            1.0 => Ok(Self::new(score, true)),
            0.0 => Ok(Self::new(score, false)),
            l => Err(Error::Contract(format!("label {l} is not 0 or 1"))),
        }
    }
}

fn class_counts(items: &[ScoredLabel]) -> Result<(usize, usize)> {
    if items.iter().any(|i| !i.score.is_finite()) {
        return Err(Error::NonFinite("auroc"));
    }
    let pos = items.iter().filter(|i| i.positive).count();
    let neg = items.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateMetric(format!(
            "auROC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Mann–Whitney form: tied scores share their average rank, so a tie
/// between a positive and a negative counts one half.
pub fn auroc(items: &[ScoredLabel]) -> Result<f64> {
    let (pos, neg) = class_counts(items)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].score.total_cmp(&items[b].score));

    let mut positive_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let score = items[order[start]].score;
        let mut end = start + 1;
        while end < order.len() && items[order[end]].score == score {
            end += 1;
        }
        // ranks start..end are 1-based start+1 ..= end
        let average_rank = (start + 1 + end) as f64 / 2.0;
        let group_pos = order[start..end].iter().filter(|&&i| items[i].positive).count();
        positive_rank_sum += average_rank * group_pos as f64;
        start = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Direct enumeration of every positive/negative pair.
pub fn pair_count_auroc(items: &[ScoredLabel]) -> Result<f64> {
    let (pos, neg) = class_counts(items)?;
    let mut wins = 0.0;
    for p in items.iter().filter(|i| i.positive) {
        for n in items.iter().filter(|i| !i.positive) {
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}
