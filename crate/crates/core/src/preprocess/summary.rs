//! Per-channel summary statistics of a one-minute series, used as the
//! intraoperative design matrix of the logistic baseline.

use serde::{Deserialize, Serialize};

use crate::schema::FeatureSchema;
use crate::stats;

pub const SUMMARY_STATS: usize = 49;

const DECILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Parameters of the statistics that take one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummaryConfig {
    /// Quantiles filling the last four slots.
    pub extra_quantiles: [f64; 4],
    pub entropy_bins: usize,
    pub peak_support: usize,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig {
            extra_quantiles: [0.01, 0.05, 0.95, 0.99],
            entropy_bins: 10,
            peak_support: 1,
        }
    }
}

/// Names of the 45 fixed statistics.
const FIXED_NAMES: [&str; 45] = [
    "minimum",
    "maximum",
    "mean",
    "median",
    "standard_deviation",
    "sum",
    "variance",
    "kurtosis",
    "skewness",
    "absolute_energy",
    "absolute_sum_of_changes",
    "count_above_mean",
    "count_below_mean",
    "first_location_of_minimum",
    "last_location_of_minimum",
    "first_location_of_maximum",
    "last_location_of_maximum",
    "length",
    "longest_strike_above_mean",
    "longest_strike_below_mean",
    "mean_absolute_change",
    "mean_change",
    "ratio_unique_values_to_length",
    "variance_larger_than_standard_deviation",
    "quantile_0.1",
    "quantile_0.2",
    "quantile_0.3",
    "quantile_0.4",
    "quantile_0.5",
    "quantile_0.6",
    "quantile_0.7",
    "quantile_0.8",
    "quantile_0.9",
    "index_mass_quantile_0.1",
    "index_mass_quantile_0.2",
    "index_mass_quantile_0.3",
    "index_mass_quantile_0.4",
    "index_mass_quantile_0.5",
    "index_mass_quantile_0.6",
    "index_mass_quantile_0.7",
    "index_mass_quantile_0.8",
    "index_mass_quantile_0.9",
    "binned_entropy",
    "number_of_peaks",
    "range_count",
];

/// Names of all 49 statistics under `cfg`, in output order.
pub fn summary_stat_names(cfg: &SummaryConfig) -> Vec<String> {
    let mut names: Vec<String> = FIXED_NAMES.iter().map(|s| s.to_string()).collect();
    names.extend(cfg.extra_quantiles.iter().map(|q| format!("quantile_{q}")));
    names
}

/// `channel__statistic` for every channel and statistic, channel-major.
pub fn summary_feature_names(schema: &FeatureSchema, cfg: &SummaryConfig) -> Vec<String> {
    let stats = summary_stat_names(cfg);
    schema
        .channels
        .iter()
        .flat_map(|c| stats.iter().map(move |s| format!("{}__{s}", c.name)))
        .collect()
}

fn longest_run(x: &[f64], pred: impl Fn(f64) -> bool) -> usize {
    let (mut best, mut cur) = (0, 0);
    for &v in x {
        cur = if pred(v) { cur + 1 } else { 0 };
        best = best.max(cur);
    }
    best
}

/// Relative position (index + 1) / n at which the cumulative absolute mass
/// first reaches `q`. A series without mass is treated as uniform.
fn index_mass_quantile(x: &[f64], q: f64) -> f64 {
    let n = x.len() as f64;
    let total: f64 = x.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return (q * n).ceil().max(1.0) / n;
    }
    let mut acc = 0.0;
    for (i, v) in x.iter().enumerate() {
        acc += v.abs();
        if acc / total >= q {
            return (i + 1) as f64 / n;
        }
    }
    1.0
}

fn binned_entropy(x: &[f64], range: (f64, f64), bins: usize) -> f64 {
    let (lo, hi) = range;
    let mut counts = vec![0usize; bins];
    for &v in x {
        let b = if hi > lo {
            (((v - lo) / (hi - lo)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
        } else {
            0
        };
        counts[b] += 1;
    }
    let n = x.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

fn number_of_peaks(x: &[f64], support: usize) -> f64 {
    if x.len() < 2 * support + 1 {
        return 0.0;
    }
    (support..x.len() - support)
        .filter(|&i| (1..=support).all(|k| x[i] > x[i - k] && x[i] > x[i + k]))
        .count() as f64
}

/// The 49 statistics of one channel. `range` is the channel's development
/// minimum and maximum, which fixes the entropy bins.
pub fn summarize_channel(x: &[f64], range: (f64, f64), cfg: &SummaryConfig) -> Vec<f64> {
    assert!(!x.is_empty(), "summary of an empty series");
    let n = x.len();
    let nf = n as f64;
    let sorted = stats::sorted_copy(x);
    let mean = stats::mean(x);
    let var = stats::variance(x);
    let std = var.sqrt();
    let central = |k: i32| x.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / nf;
    let (skew, kurt) = if var > 0.0 {
        (central(3) / var.powf(1.5), central(4) / (var * var) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let min = sorted[0];
    let max = sorted[n - 1];
    let first = |target: f64| x.iter().position(|&v| v == target).unwrap() as f64 / nf;
    let last = |target: f64| (x.iter().rposition(|&v| v == target).unwrap() + 1) as f64 / nf;
    let changes: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let abs_changes: f64 = changes.iter().map(|d| d.abs()).sum();
    let mut unique = sorted.clone();
    unique.dedup();

    let mut out = vec![
        min,
        max,
        mean,
        stats::percentile_sorted(&sorted, 0.5),
        std,
        x.iter().sum(),
        var,
        kurt,
        skew,
        x.iter().map(|v| v * v).sum(),
        abs_changes,
        x.iter().filter(|&&v| v > mean).count() as f64,
        x.iter().filter(|&&v| v < mean).count() as f64,
        first(min),
        last(min),
        first(max),
        last(max),
        nf,
        longest_run(x, |v| v > mean) as f64,
        longest_run(x, |v| v < mean) as f64,
        if n > 1 { abs_changes / (nf - 1.0) } else { 0.0 },
        if n > 1 { (x[n - 1] - x[0]) / (nf - 1.0) } else { 0.0 },
        unique.len() as f64 / nf,
        if var > std { 1.0 } else { 0.0 },
    ];
    out.extend(DECILES.iter().map(|&q| stats::percentile_sorted(&sorted, q)));
    out.extend(DECILES.iter().map(|&q| index_mass_quantile(x, q)));
    out.push(binned_entropy(x, range, cfg.entropy_bins));
    out.push(number_of_peaks(x, cfg.peak_support));
    out.push(x.iter().filter(|&&v| v > mean - std && v < mean + std).count() as f64);
    out.extend(cfg.extra_quantiles.iter().map(|&q| stats::percentile_sorted(&sorted, q)));
    debug_assert_eq!(out.len(), SUMMARY_STATS);
    out
}

/// Summaries of every channel, concatenated channel-major.
pub fn summarize_series(values: &[Vec<f64>], ranges: &[(f64, f64)], cfg: &SummaryConfig) -> Vec<f64> {
    values
        .iter()
        .zip(ranges)
        .flat_map(|(x, &r)| summarize_channel(x, r, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stat(x: &[f64], name: &str) -> f64 {
        let cfg = SummaryConfig::default();
        let i = summary_stat_names(&cfg).iter().position(|n| n == name).unwrap();
        summarize_channel(x, (0.0, 10.0), &cfg)[i]
    }

    #[test]
    fn forty_nine_named_slots() {
        let names = summary_stat_names(&SummaryConfig::default());
        assert_eq!(names.len(), SUMMARY_STATS);
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), SUMMARY_STATS);
        let s = crate::schema::default_schema();
        assert_eq!(summary_feature_names(&s, &SummaryConfig::default()).len(), 686);
    }

    #[test]
    fn constant_series() {
        let x = [5.0, 5.0, 5.0];
        for name in ["minimum", "maximum", "mean", "median"] {
            assert_eq!(stat(&x, name), 5.0);
        }
        assert_eq!(stat(&x, "standard_deviation"), 0.0);
        assert_eq!(stat(&x, "sum"), 15.0);
        assert_eq!(stat(&x, "absolute_sum_of_changes"), 0.0);
        assert_eq!(stat(&x, "range_count"), 0.0);
        assert_eq!(stat(&x, "ratio_unique_values_to_length"), 1.0 / 3.0);
    }

    #[test]
    fn change_statistics() {
        let x = [1.0, 3.0, 2.0];
        assert_eq!(stat(&x, "absolute_sum_of_changes"), 3.0);
        assert_eq!(stat(&x, "mean_change"), 0.5);
        assert_eq!(stat(&x, "mean_absolute_change"), 1.5);
        assert_eq!(stat(&x, "number_of_peaks"), 1.0);
        let x = [1.0, 2.0, 3.0];
        assert_eq!(stat(&x, "count_above_mean"), 1.0);
        assert_eq!(stat(&x, "count_below_mean"), 1.0);
    }

    #[test]
    fn locations_and_strikes() {
        let x = [2.0, 0.0, 9.0, 0.0, 9.0, 1.0, 1.0, 1.0];
        assert_eq!(stat(&x, "first_location_of_minimum"), 1.0 / 8.0);
        assert_eq!(stat(&x, "last_location_of_minimum"), 4.0 / 8.0);
        assert_eq!(stat(&x, "first_location_of_maximum"), 2.0 / 8.0);
        assert_eq!(stat(&x, "last_location_of_maximum"), 5.0 / 8.0);
        assert_eq!(stat(&x, "longest_strike_below_mean"), 3.0);
        assert_eq!(stat(&x, "longest_strike_above_mean"), 1.0);
        assert_eq!(stat(&x, "length"), 8.0);
        assert_eq!(stat(&x, "absolute_energy"), 4.0 + 81.0 + 81.0 + 3.0);
    }

    #[test]
    fn index_mass_and_entropy() {
        let x = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(stat(&x, "index_mass_quantile_0.5"), 0.5);
        assert_eq!(stat(&x, "index_mass_quantile_0.9"), 1.0);
        assert_eq!(stat(&[0.0; 4], "index_mass_quantile_0.5"), 0.5);
        // Two equally filled bins.
        let e = stat(&[0.5, 0.5, 9.5, 9.5], "binned_entropy");
        assert!((e - 2f64.ln()).abs() < 1e-15);
        assert_eq!(stat(&[3.0; 5], "binned_entropy"), 0.0);
        // Out-of-range values land in the edge bins.
        let e = stat(&[-100.0, 100.0], "binned_entropy");
        assert!((e - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn moments_match_direct_formulas() {
        let x: [f64; 5] = [1.0, 2.0, 2.0, 3.0, 10.0];
        let n = 5.0;
        let m = 18.0 / n;
        let m2: f64 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m3: f64 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
        let m4: f64 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
        assert!((stat(&x, "skewness") - m3 / m2.powf(1.5)).abs() < 1e-12);
        assert!((stat(&x, "kurtosis") - (m4 / (m2 * m2) - 3.0)).abs() < 1e-12);
        assert_eq!(stat(&x, "variance_larger_than_standard_deviation"), 1.0);
        assert_eq!(stat(&x, "range_count"), 4.0);
    }

    #[test]
    fn single_value_series_is_finite() {
        let out = summarize_channel(&[7.0], (0.0, 10.0), &SummaryConfig::default());
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
