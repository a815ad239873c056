//! Aggregation of per-seed learning curves into median and interquartile
//! bands, plus the final-return summary.

use crate::error::{Error, Result};
use crate::harness::results::{AggregateRow, SummaryRow};
use crate::training::LearningCurve;

/// Linearly interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Median and quartiles at every evaluation point. All curves must share
/// one evaluation grid.
pub fn aggregate_curves(curves: &[LearningCurve]) -> Result<Vec<AggregateRow>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Data("no curves to aggregate".into()))?;
    for c in curves {
        let same_grid = c.len() == first.len()
            && c.iter()
                .zip(first)
                .all(|(a, b)| a.iteration == b.iteration && a.episodes_seen == b.episodes_seen);
        if !same_grid {
            return Err(Error::Data(
                "learning curves have different evaluation grids".into(),
            ));
        }
    }
    Ok(first
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let v = sorted(&curves.iter().map(|c| c[i].mean_return).collect::<Vec<_>>());
            AggregateRow {
                iteration: p.iteration,
                episodes_seen: p.episodes_seen,
                median: quantile(&v, 0.5),
                q1: quantile(&v, 0.25),
                q3: quantile(&v, 0.75),
                seeds: v.len(),
            }
        })
        .collect())
}

pub fn summarize(entry: &str, finals: &[f64]) -> Result<SummaryRow> {
    if finals.is_empty() {
        return Err(Error::Data(format!("no results for {entry}")));
    }
    let v = sorted(finals);
    Ok(SummaryRow {
        entry: entry.to_string(),
        median_final: quantile(&v, 0.5),
        q1_final: quantile(&v, 0.25),
        q3_final: quantile(&v, 0.75),
        seeds: v.len(),
    })
}

/// First evaluation point whose return reaches `threshold`, as episodes seen.
pub fn episodes_to_reach(curve: &LearningCurve, threshold: f64) -> Option<usize> {
    curve
        .iter()
        .find(|p| p.mean_return >= threshold)
        .map(|p| p.episodes_seen)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(&sorted(values), 0.5)
}
