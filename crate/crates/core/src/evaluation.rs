//! Threshold selection, confusion and ranking metrics, percentile bootstrap
//! intervals and net reclassification improvement.
//!
//! Every metric is computed from score-sorted tallies with per-sample
//! counts, so a bootstrap resample costs one linear pass.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::stats;

pub const METRICS_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_RESAMPLES: usize = 1000;
/// Redraws allowed for a single-class resample before it is skipped.
pub const REDRAW_CAP: usize = 10;
/// Fewest usable resamples for an interval.
pub const MIN_VALID_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Undefined {
    NoPositives,
    NoNegatives,
    NoPredictedPositives,
    NoPredictedNegatives,
    TooFewResamples,
}

impl fmt::Display for Undefined {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Undefined::NoPositives => "no positive labels",
            Undefined::NoNegatives => "no negative labels",
            Undefined::NoPredictedPositives => "no predicted positives",
            Undefined::NoPredictedNegatives => "no predicted negatives",
            Undefined::TooFewResamples => "fewer than 100 usable bootstrap resamples",
        })
    }
}

impl From<Undefined> for Error {
    fn from(u: Undefined) -> Self {
        Error::Undefined(u.to_string())
    }
}

pub type Metric = std::result::Result<f64, Undefined>;

/// Positive and negative weight at one distinct score.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Tally {
    score: f64,
    pos: f64,
    neg: f64,
}

/// Sample indices in ascending score order, split into tie groups.
#[derive(Debug, Clone)]
struct Sorted {
    order: Vec<usize>,
    /// Exclusive end of each tie group within `order`.
    group_end: Vec<usize>,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("scores contain NaN".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    Ok(())
}

impl Sorted {
    fn new(scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let mut group_end = Vec::new();
        for i in 1..=order.len() {
            if i == order.len() || scores[order[i]] != scores[order[i - 1]] {
                group_end.push(i);
            }
        }
        Sorted { order, group_end }
    }

    fn tallies(&self, scores: &[f64], labels: &[u8], counts: Option<&[u32]>) -> Vec<Tally> {
        let mut out = Vec::with_capacity(self.group_end.len());
        let mut start = 0;
        for &end in &self.group_end {
            let mut t = Tally { score: scores[self.order[start]], pos: 0.0, neg: 0.0 };
            for &i in &self.order[start..end] {
                let w = counts.map_or(1.0, |c| f64::from(c[i]));
                if labels[i] == 1 {
                    t.pos += w;
                } else {
                    t.neg += w;
                }
            }
            if t.pos > 0.0 || t.neg > 0.0 {
                out.push(t);
            }
            start = end;
        }
        out
    }
}

fn totals(t: &[Tally]) -> (f64, f64) {
    t.iter().fold((0.0, 0.0), |(p, n), x| (p + x.pos, n + x.neg))
}

fn both_classes(t: &[Tally]) -> std::result::Result<(f64, f64), Undefined> {
    match totals(t) {
        (p, _) if p == 0.0 => Err(Undefined::NoPositives),
        (_, n) if n == 0.0 => Err(Undefined::NoNegatives),
        pn => Ok(pn),
    }
}

fn auroc_t(t: &[Tally]) -> Metric {
    let (p, n) = both_classes(t)?;
    let mut below = 0.0;
    let mut wins = 0.0;
    for x in t {
        wins += x.pos * (below + 0.5 * x.neg);
        below += x.neg;
    }
    Ok(wins / (p * n))
}

fn auprc_t(t: &[Tally]) -> Metric {
    let (p, _) = totals(t);
    if p == 0.0 {
        return Err(Undefined::NoPositives);
    }
    let (mut tp, mut fp, mut recall, mut ap) = (0.0, 0.0, 0.0, 0.0);
    for x in t.iter().rev() {
        tp += x.pos;
        fp += x.neg;
        let r = tp / p;
        ap += (r - recall) * (tp / (tp + fp));
        recall = r;
    }
    Ok(ap)
}

/// Best threshold among the observed scores and +∞; ties go to the
/// smallest threshold.
fn youden_t(t: &[Tally]) -> std::result::Result<(f64, f64), Undefined> {
    let (p, n) = both_classes(t)?;
    let (mut best_thr, mut best_j) = (f64::INFINITY, 0.0);
    let (mut tp, mut fp) = (0.0, 0.0);
    for x in t.iter().rev() {
        tp += x.pos;
        fp += x.neg;
        let j = tp / p + (n - fp) / n - 1.0;
        if j >= best_j {
            best_j = j;
            best_thr = x.score;
        }
    }
    Ok((best_thr, best_j))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Confusion {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    pub fn_: f64,
}

fn confusion_t(t: &[Tally], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for x in t {
        if x.score >= threshold {
            c.tp += x.pos;
            c.fp += x.neg;
        } else {
            c.fn_ += x.pos;
            c.tn += x.neg;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMetrics {
    pub sensitivity: Metric,
    pub specificity: Metric,
    pub ppv: Metric,
    pub npv: Metric,
    pub accuracy: Metric,
}

impl Confusion {
    pub fn metrics(&self) -> ConfusionMetrics {
        let ratio = |num: f64, den: f64, why: Undefined| if den > 0.0 { Ok(num / den) } else { Err(why) };
        let total = self.tp + self.fp + self.tn + self.fn_;
        ConfusionMetrics {
            sensitivity: ratio(self.tp, self.tp + self.fn_, Undefined::NoPositives),
            specificity: ratio(self.tn, self.tn + self.fp, Undefined::NoNegatives),
            ppv: ratio(self.tp, self.tp + self.fp, Undefined::NoPredictedPositives),
            npv: ratio(self.tn, self.tn + self.fn_, Undefined::NoPredictedNegatives),
            accuracy: ratio(self.tp + self.tn, total, Undefined::NoPositives),
        }
    }
}

pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    Ok(auroc_t(&Sorted::new(scores).tallies(scores, labels, None))?)
}

pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    Ok(auprc_t(&Sorted::new(scores).tallies(scores, labels, None))?)
}

/// `(threshold, J)`; the threshold may be +∞ (predict no positives).
pub fn youden_threshold(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    check_inputs(scores, labels)?;
    Ok(youden_t(&Sorted::new(scores).tallies(scores, labels, None))?)
}

/// Counts under the rule `score ≥ threshold → positive`.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    check_inputs(scores, labels)?;
    Ok(confusion_t(&Sorted::new(scores).tallies(scores, labels, None), threshold))
}

pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMetrics> {
    Ok(confusion(scores, labels, threshold)?.metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapInfo {
    pub requested: usize,
    /// Single-class draws replaced by a fresh draw.
    pub redrawn: usize,
    /// Resamples still single-class after the redraw cap.
    pub skipped: usize,
}

/// Multiplicity of each sample in resample `j`, redrawing single-class
/// draws up to [`REDRAW_CAP`] times. Returns the counts (None if skipped)
/// and the number of redraws.
fn resample_counts(labels: &[u8], seed: u64, j: usize) -> (Option<Vec<u32>>, usize) {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    for attempt in 0..=REDRAW_CAP {
        let mut counts = vec![0u32; n];
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1;
        }
        let (mut pos, mut neg) = (false, false);
        for (c, &y) in counts.iter().zip(labels) {
            if *c > 0 {
                if y == 1 {
                    pos = true;
                } else {
                    neg = true;
                }
            }
        }
        if pos && neg {
            return (Some(counts), attempt);
        }
    }
    (None, REDRAW_CAP)
}

/// Applies `f` to every usable resample, in resample order.
fn bootstrap_map<R: Send>(
    labels: &[u8],
    n_resamples: usize,
    seed: u64,
    f: impl Fn(&[u32]) -> R + Sync,
) -> (Vec<R>, BootstrapInfo) {
    let runs: Vec<(Option<R>, usize)> = (0..n_resamples)
        .into_par_iter()
        .map(|j| {
            let (counts, redraws) = resample_counts(labels, seed, j);
            (counts.map(|c| f(&c)), redraws)
        })
        .collect();
    let mut info = BootstrapInfo { requested: n_resamples, ..Default::default() };
    let mut out = Vec::with_capacity(n_resamples);
    for (r, redraws) in runs {
        info.redrawn += redraws;
        match r {
            Some(v) => out.push(v),
            None => info.skipped += 1,
        }
    }
    (out, info)
}

/// Point estimate with a 95% percentile interval, widened if needed so it
/// contains the point. The interval is absent when no resampling was asked for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Estimate {
    pub point: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_hi: Option<f64>,
    /// Resamples on which the metric was defined.
    pub resamples: usize,
}

impl Estimate {
    pub fn point_only(point: f64) -> Self {
        Estimate { point, ci_lo: None, ci_hi: None, resamples: 0 }
    }

    /// `(ci_lo, ci_hi)` when present.
    pub fn interval(&self) -> Option<(f64, f64)> {
        self.ci_lo.zip(self.ci_hi)
    }
}

fn percentile_interval(point: f64, mut values: Vec<f64>) -> std::result::Result<Estimate, Undefined> {
    if values.len() < MIN_VALID_RESAMPLES {
        return Err(Undefined::TooFewResamples);
    }
    values.sort_by(f64::total_cmp);
    Ok(Estimate {
        point,
        ci_lo: Some(stats::percentile_sorted(&values, 0.025).min(point)),
        ci_hi: Some(stats::percentile_sorted(&values, 0.975).max(point)),
        resamples: values.len(),
    })
}

/// Percentile interval of an arbitrary metric over `n_resamples` resamples
/// of the (score, label) pairs.
pub fn bootstrap_ci(
    metric: impl Fn(&[f64], &[u8]) -> Result<f64> + Sync,
    scores: &[f64],
    labels: &[u8],
    n_resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_inputs(scores, labels)?;
    if n_resamples < 2 {
        return Err(Error::Config("bootstrap needs at least 2 resamples".into()));
    }
    let point = metric(scores, labels)?;
    let (values, _) = bootstrap_map(labels, n_resamples, seed, |counts| {
        let (mut s, mut y) = (Vec::with_capacity(scores.len()), Vec::with_capacity(scores.len()));
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                s.push(scores[i]);
                y.push(labels[i]);
            }
        }
        metric(&s, &y).ok()
    });
    let e = percentile_interval(point, values.into_iter().flatten().collect())?;
    Ok(e.interval().expect("percentile intervals are two-sided"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricEntry {
    Estimate(Estimate),
    Undefined { undefined: Undefined },
}

impl MetricEntry {
    pub fn estimate(&self) -> Option<&Estimate> {
        match self {
            MetricEntry::Estimate(e) => Some(e),
            MetricEntry::Undefined { .. } => None,
        }
    }
}

pub const METRIC_NAMES: [&str; 7] = ["sensitivity", "specificity", "ppv", "npv", "accuracy", "auprc", "auroc"];

fn all_metrics(t: &[Tally], threshold: f64) -> [Metric; 7] {
    let c = confusion_t(t, threshold).metrics();
    [c.sensitivity, c.specificity, c.ppv, c.npv, c.accuracy, auprc_t(t), auroc_t(t)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeMetrics {
    pub outcome: String,
    pub n: usize,
    pub prevalence: f64,
    /// Youden threshold on the full sample; null means +∞ (predict none).
    pub threshold: Option<f64>,
    pub youden_j: Option<f64>,
    pub sensitivity: MetricEntry,
    pub specificity: MetricEntry,
    pub ppv: MetricEntry,
    pub npv: MetricEntry,
    pub accuracy: MetricEntry,
    pub auprc: MetricEntry,
    pub auroc: MetricEntry,
    pub bootstrap: BootstrapInfo,
}

impl OutcomeMetrics {
    pub fn entries(&self) -> [(&'static str, &MetricEntry); 7] {
        [
            ("sensitivity", &self.sensitivity),
            ("specificity", &self.specificity),
            ("ppv", &self.ppv),
            ("npv", &self.npv),
            ("accuracy", &self.accuracy),
            ("auprc", &self.auprc),
            ("auroc", &self.auroc),
        ]
    }

    pub fn threshold_value(&self) -> f64 {
        self.threshold.unwrap_or(f64::INFINITY)
    }
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// All seven metrics of one outcome with a threshold fixed from the full
/// sample and intervals from `n_resamples` resamples (0 for point estimates
/// only).
pub fn evaluate_outcome(
    outcome: &str,
    scores: &[f64],
    labels: &[u8],
    n_resamples: usize,
    seed: u64,
) -> Result<OutcomeMetrics> {
    check_inputs(scores, labels)?;
    if n_resamples == 1 {
        return Err(Error::Config("bootstrap needs 0 or at least 2 resamples".into()));
    }
    let n = labels.len();
    let prevalence = if n == 0 { 0.0 } else { labels.iter().filter(|&&y| y == 1).count() as f64 / n as f64 };
    let sorted = Sorted::new(scores);
    let full = sorted.tallies(scores, labels, None);
    let youden = youden_t(&full);
    let mut entries: Vec<MetricEntry> = Vec::with_capacity(7);
    let mut info = BootstrapInfo { requested: n_resamples, ..Default::default() };
    match youden {
        Err(why) => entries.extend((0..7).map(|_| MetricEntry::Undefined { undefined: why })),
        Ok((threshold, _)) if n_resamples == 0 => {
            entries.extend(all_metrics(&full, threshold).iter().map(|m| match m {
                Ok(p) => MetricEntry::Estimate(Estimate::point_only(*p)),
                Err(why) => MetricEntry::Undefined { undefined: *why },
            }));
        }
        Ok((threshold, _)) => {
            let points = all_metrics(&full, threshold);
            let (reps, bi) = bootstrap_map(labels, n_resamples, seed, |counts| {
                all_metrics(&sorted.tallies(scores, labels, Some(counts)), threshold)
            });
            info = bi;
            for (m, point) in points.iter().enumerate() {
                let entry = point.and_then(|p| {
                    percentile_interval(p, reps.iter().filter_map(|r| r[m].ok()).collect())
                });
                entries.push(match entry {
                    Ok(e) => MetricEntry::Estimate(e),
                    Err(why) => MetricEntry::Undefined { undefined: why },
                });
            }
        }
    }
    let mut it = entries.into_iter();
    let mut next = || it.next().expect("seven entries");
    Ok(OutcomeMetrics {
        outcome: outcome.to_string(),
        n,
        prevalence,
        threshold: youden.ok().and_then(|(t, _)| finite_or_none(t)),
        youden_j: youden.ok().map(|(_, j)| j),
        sensitivity: next(),
        specificity: next(),
        ppv: next(),
        npv: next(),
        accuracy: next(),
        auprc: next(),
        auroc: next(),
        bootstrap: info,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelReport {
    pub model: String,
    pub outcomes: Vec<OutcomeMetrics>,
}

/// Metrics of every outcome for one model. `probs[i][k]` is the
/// probability of outcome `k` for encounter `i`.
pub fn evaluate_model(
    model: &str,
    outcomes: &[String],
    probs: &[Vec<f64>],
    labels: &[Vec<u8>],
    n_resamples: usize,
    seed: u64,
) -> Result<ModelReport> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} encounters", probs.len(), labels.len())));
    }
    let outcomes = outcomes
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
            let y: Vec<u8> = labels.iter().map(|l| l[k]).collect();
            evaluate_outcome(name, &scores, &y, n_resamples, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelReport { model: model.to_string(), outcomes })
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub format_version: u32,
    pub ci_method: String,
    pub n_resamples: usize,
    pub seed: u64,
    pub models: Vec<ModelReport>,
}

impl MetricsReport {
    pub fn new(n_resamples: usize, seed: u64, models: Vec<ModelReport>) -> Self {
        MetricsReport {
            format_version: METRICS_FORMAT_VERSION,
            ci_method: "percentile bootstrap, 95%".into(),
            n_resamples,
            seed,
            models,
        }
    }

    /// Checks `ci_lo ≤ point ≤ ci_hi` and that every value lies in [0, 1].
    pub fn validate(&self) -> Result<()> {
        if self.format_version != METRICS_FORMAT_VERSION {
            return Err(Error::Data(format!("metrics format version {} is not supported", self.format_version)));
        }
        for m in &self.models {
            for o in &m.outcomes {
                for (name, entry) in o.entries() {
                    if let Some(e) = entry.estimate() {
                        let (lo, hi) = e.interval().unwrap_or((e.point, e.point));
                        let ordered = lo <= e.point && e.point <= hi && e.ci_lo.is_some() == e.ci_hi.is_some();
                        let bounded = [lo, e.point, hi].iter().all(|v| (0.0..=1.0).contains(v));
                        if !ordered || !bounded {
                            return Err(Error::Data(format!("{} / {} / {name}: invalid estimate {e:?}", m.model, o.outcome)));
                        }
                    }
                }
                if !(0.0..=1.0).contains(&o.prevalence) {
                    return Err(Error::Data(format!("{} / {}: prevalence out of range", m.model, o.outcome)));
                }
            }
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let report: MetricsReport = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

/// Reclassification counts of one comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Reclassification {
    events: f64,
    nonevents: f64,
    events_up: f64,
    events_down: f64,
    nonevents_up: f64,
    nonevents_down: f64,
}

impl Reclassification {
    fn count(old: &[f64], new: &[f64], labels: &[u8], t_old: f64, t_new: f64, counts: Option<&[u32]>) -> Self {
        let mut r = Reclassification {
            events: 0.0,
            nonevents: 0.0,
            events_up: 0.0,
            events_down: 0.0,
            nonevents_up: 0.0,
            nonevents_down: 0.0,
        };
        for i in 0..labels.len() {
            let w = counts.map_or(1.0, |c| f64::from(c[i]));
            if w == 0.0 {
                continue;
            }
            let (was, now) = (old[i] >= t_old, new[i] >= t_new);
            let (up, down) = (f64::from(u8::from(now && !was)), f64::from(u8::from(was && !now)));
            if labels[i] == 1 {
                r.events += w;
                r.events_up += w * up;
                r.events_down += w * down;
            } else {
                r.nonevents += w;
                r.nonevents_up += w * up;
                r.nonevents_down += w * down;
            }
        }
        r
    }

    fn event_component(&self) -> f64 {
        (self.events_up - self.events_down) / self.events
    }

    fn nonevent_component(&self) -> f64 {
        (self.nonevents_down - self.nonevents_up) / self.nonevents
    }

    fn index(&self) -> f64 {
        self.event_component() + self.nonevent_component()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NriResult {
    pub n: usize,
    pub events: usize,
    /// Thresholds of the old and new model; null means +∞.
    pub old_threshold: Option<f64>,
    pub new_threshold: Option<f64>,
    /// `(events up − events down) / events`.
    pub event_component: f64,
    /// `(nonevents down − nonevents up) / nonevents`.
    pub nonevent_component: f64,
    /// Net correct reclassifications among events, percent of all encounters.
    pub event_pct: f64,
    /// Net correct reclassifications among nonevents, percent of all encounters.
    pub nonevent_pct: f64,
    /// `event_pct + nonevent_pct`.
    pub overall_pct: f64,
    pub nri_index: Estimate,
    pub standard_error: f64,
    pub p_value: f64,
    pub p_value_method: String,
    pub bootstrap: BootstrapInfo,
}

/// Two-category NRI of `new` against `old` at fixed thresholds, with a
/// percentile interval and a two-sided z-test on the bootstrap standard error.
pub fn nri(
    old: &[f64],
    new: &[f64],
    labels: &[u8],
    old_threshold: f64,
    new_threshold: f64,
    n_resamples: usize,
    seed: u64,
) -> Result<NriResult> {
    check_inputs(old, labels)?;
    check_inputs(new, labels)?;
    if n_resamples < 2 {
        return Err(Error::Config("bootstrap needs at least 2 resamples".into()));
    }
    let full = Reclassification::count(old, new, labels, old_threshold, new_threshold, None);
    if full.events == 0.0 {
        return Err(Undefined::NoPositives.into());
    }
    if full.nonevents == 0.0 {
        return Err(Undefined::NoNegatives.into());
    }
    let point = full.index();
    let (reps, info) = bootstrap_map(labels, n_resamples, seed, |counts| {
        Reclassification::count(old, new, labels, old_threshold, new_threshold, Some(counts)).index()
    });
    let n_valid = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / n_valid;
    let se = (reps.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_valid - 1.0)).sqrt();
    let nri_index = percentile_interval(point, reps)?;
    let p_value = if se > 0.0 {
        let z = point / se;
        2.0 * (1.0 - Normal::standard().cdf(z.abs()))
    } else if point == 0.0 {
        1.0
    } else {
        0.0
    };
    let n = labels.len() as f64;
    let event_pct = 100.0 * (full.events_up - full.events_down) / n;
    let nonevent_pct = 100.0 * (full.nonevents_down - full.nonevents_up) / n;
    Ok(NriResult {
        n: labels.len(),
        events: full.events as usize,
        old_threshold: finite_or_none(old_threshold),
        new_threshold: finite_or_none(new_threshold),
        event_component: full.event_component(),
        nonevent_component: full.nonevent_component(),
        event_pct,
        nonevent_pct,
        overall_pct: event_pct + nonevent_pct,
        nri_index,
        standard_error: se,
        p_value,
        p_value_method: "two-sided normal test on the bootstrap standard error".into(),
        bootstrap: info,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeNri {
    pub outcome: String,
    #[serde(flatten)]
    pub result: NriResult,
}

/// Contents of `nri.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NriReport {
    pub format_version: u32,
    pub old_model: String,
    pub new_model: String,
    pub n_resamples: usize,
    pub seed: u64,
    pub outcomes: Vec<OutcomeNri>,
}

impl NriReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.3, 0.4], &[1, 1]), Err(Error::Undefined(_))));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.2, 0.7, 0.4], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.5);
        assert!(auprc(&[0.9, 0.1], &[0, 0]).is_err());
    }

    #[test]
    fn youden_examples() {
        assert_eq!(youden_threshold(&[0.2, 0.4, 0.6, 0.8], &[0, 0, 1, 1]).unwrap(), (0.6, 1.0));
        let (_, j) = youden_threshold(&[0.5; 6], &[0, 1, 1, 0, 0, 1]).unwrap();
        assert_eq!(j, 0.0);
        // Reversed labels: the best rule still scans observed thresholds.
        let (t, j) = youden_threshold(&[0.2, 0.4, 0.6, 0.8], &[1, 1, 0, 0]).unwrap();
        assert_eq!((t, j), (0.2, 0.0));
        assert!(youden_threshold(&[0.1], &[0]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let m = confusion_metrics(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0], 0.5).unwrap();
        for v in [m.sensitivity, m.specificity, m.ppv, m.npv, m.accuracy] {
            assert_eq!(v, Ok(1.0));
        }
        let m = confusion_metrics(&[0.1, 0.2, 0.3], &[1, 0, 1], f64::INFINITY).unwrap();
        assert_eq!(m.sensitivity, Ok(0.0));
        assert_eq!(m.specificity, Ok(1.0));
        assert_eq!(m.ppv, Err(Undefined::NoPredictedPositives));
        let c = Confusion { tp: 3.0, fp: 1.0, tn: 5.0, fn_: 1.0 }.metrics();
        assert_eq!(c.sensitivity, Ok(0.75));
        assert_eq!(c.specificity, Ok(5.0 / 6.0));
        assert_eq!(c.ppv, Ok(0.75));
        assert_eq!(c.npv, Ok(5.0 / 6.0));
        assert_eq!(c.accuracy, Ok(0.8));
    }

    #[test]
    fn nri_counting_example() {
        let mut labels = vec![1u8; 10];
        labels.extend([0u8; 10]);
        let old = vec![0.0; 20];
        let mut new = vec![0.0; 20];
        new[0] = 1.0;
        new[1] = 1.0;
        let mut old_nonevent_up = old.clone();
        old_nonevent_up[10] = 1.0;
        let r = nri(&old_nonevent_up, &new, &labels, 0.5, 0.5, 200, 1).unwrap();
        assert!((r.event_component - 0.2).abs() < 1e-15);
        assert!((r.nonevent_component - 0.1).abs() < 1e-15);
        assert!((r.nri_index.point - 0.3).abs() < 1e-15);
        assert!((r.overall_pct - 15.0).abs() < 1e-12);
    }
}
