use std::ops::Range;

use crate::time::{Duration, TimeSpan};

/// Median of a non-empty sample; the mean of the two middle values for even
/// counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

/// Gap between consecutive spans, `next.start - prev.end`.
pub fn gaps(spans: &[TimeSpan]) -> Vec<Duration> {
    spans.windows(2).map(|w| w[1].start - w[0].end).collect()
}

/// Splits time-ordered spans wherever the gap to the previous span exceeds
/// `max(factor × median positive gap, min_gap)`. When that would leave only
/// singletons the whole input becomes one cluster.
pub fn time_based_cluster(spans: &[TimeSpan], min_gap: Duration, factor: f64) -> Vec<Range<usize>> {
    if spans.is_empty() {
        return Vec::new();
    }
    let gaps = gaps(spans);
    let mut positive: Vec<f64> = gaps.iter().filter(|g| g.secs() > 0).map(|g| g.as_secs_f64()).collect();
    let med = median(&mut positive).unwrap_or(0.0);
    let threshold = (factor * med).max(min_gap.as_secs_f64());

    let mut out = Vec::new();
    let mut start = 0;
    for (i, g) in gaps.iter().enumerate() {
        if g.as_secs_f64() > threshold {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    out.push(start..spans.len());
    if out.len() > 1 && out.iter().all(|r| r.len() == 1) {
        return vec![0..spans.len()];
    }
    out
}
