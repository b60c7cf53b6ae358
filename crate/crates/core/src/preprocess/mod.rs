//! Encoding statistics fitted on the development cohort, and the transform
//! from raw encounters to model inputs with missingness masks.

mod summary;

pub use summary::{
    summarize_channel, summarize_series, summary_feature_names, summary_stat_names, SummaryConfig,
    SUMMARY_STATS,
};

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, RawEncounter, StaticValue};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::schema::{CyclicalPeriod, FeatureKind, FeatureSchema, FeatureSpec, GapFill, MISSING_LEVEL};
use crate::stats;

pub const PREPROCESSOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NumericStats {
    Continuous {
        name: String,
        p1: f64,
        p99: f64,
        median: f64,
        mean: f64,
        std: f64,
    },
    Binary {
        name: String,
        /// Development-set mode, used to impute missing values.
        mode: f64,
        mean: f64,
        std: f64,
    },
}

impl NumericStats {
    pub fn name(&self) -> &str {
        match self {
            NumericStats::Continuous { name, .. } | NumericStats::Binary { name, .. } => name,
        }
    }

    fn fill(&self) -> f64 {
        match *self {
            NumericStats::Continuous { median, .. } => median,
            NumericStats::Binary { mode, .. } => mode,
        }
    }

    fn normalize(&self, x: f64) -> f64 {
        match *self {
            NumericStats::Continuous { p1, p99, mean, std, .. } => {
                z_score(cap_outliers(x, p1, p99), mean, std)
            }
            NumericStats::Binary { mean, std, .. } => z_score(x, mean, std),
        }
    }
}

/// Level → index map of one nominal feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMap {
    pub name: String,
    pub index: BTreeMap<String, usize>,
}

impl LevelMap {
    fn of(f: &FeatureSpec) -> Self {
        LevelMap {
            name: f.name.clone(),
            index: f.levels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Index of `level`, or of the missing level when absent or unknown.
    pub fn lookup(&self, level: Option<&str>) -> usize {
        level
            .and_then(|l| self.index.get(l))
            .or_else(|| self.index.get(MISSING_LEVEL))
            .copied()
            .expect("level maps always contain the missing level")
    }

    fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.index.len()];
        for &i in self.index.values() {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return false;
            }
        }
        self.index.contains_key(MISSING_LEVEL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub name: String,
    /// Median of the observed development values.
    pub median: f64,
    /// Mean and standard deviation of the resampled development minutes.
    pub mean: f64,
    pub std: f64,
    pub valid_range: (f64, f64),
    pub gap_fill: GapFill,
}

/// Everything needed to encode an encounter; fitted once on the
/// development cohort and never modified afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessorState {
    pub format_version: u32,
    pub schema_hash: String,
    pub numeric: Vec<NumericStats>,
    pub onehot: Vec<LevelMap>,
    pub embedded: Vec<LevelMap>,
    pub channels: Vec<ChannelStats>,
}

/// One encounter as the model consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedEncounter {
    pub encounter_id: String,
    /// Normalized continuous/binary values, their masks, then one-hot blocks.
    pub numeric_static: Vec<f64>,
    pub embedded_ids: Vec<usize>,
    /// `[T, 2·channels]`: normalized values, then masks.
    pub series: Tensor,
    pub labels: Vec<u8>,
}

impl EncodedEncounter {
    pub fn duration(&self) -> usize {
        self.series.shape()[0]
    }
}

/// Per-channel one-minute series before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub duration: usize,
    pub values: Vec<Vec<f64>>,
    pub masks: Vec<Vec<u8>>,
}

pub fn cap_outliers(x: f64, p1: f64, p99: f64) -> f64 {
    x.max(p1).min(p99)
}

fn z_score(x: f64, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        (x - mean) / std
    } else {
        0.0
    }
}

/// `(sin, cos)` of the position of `index` within a cycle of `period`.
pub fn encode_cyclical(index: usize, period: usize) -> Result<(f64, f64)> {
    if index >= period {
        return Err(Error::Data(format!("cyclical index {index} outside period {period}")));
    }
    let angle = 2.0 * std::f64::consts::PI * index as f64 / period as f64;
    // Exact values at the quarter points keep encodings free of 1e-16 noise.
    if (4 * index) % period == 0 {
        return Ok([(0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0)][4 * index / period]);
    }
    Ok(angle.sin_cos())
}

fn cyclical_value(f: &FeatureSpec, admitted: &NaiveDateTime) -> Option<f64> {
    let c = f.cyclical?;
    let index = match c.period {
        CyclicalPeriod::Weekday => admitted.weekday().num_days_from_monday() as usize,
        CyclicalPeriod::Month => admitted.month0() as usize,
    };
    let (sin, cos) = encode_cyclical(index, c.period.period()).expect("calendar index in range");
    Some(match c.component {
        crate::schema::CyclicalComponent::Sin => sin,
        crate::schema::CyclicalComponent::Cos => cos,
    })
}

/// Raw value of a continuous/binary feature, `None` when missing.
fn raw_numeric(f: &FeatureSpec, enc: &RawEncounter) -> Option<f64> {
    if let Some(v) = cyclical_value(f, &enc.admit_timestamp) {
        return Some(v);
    }
    match enc.static_values.get(&f.name) {
        Some(StaticValue::Number(v)) => Some(*v),
        _ => None,
    }
}

fn raw_level<'a>(f: &FeatureSpec, enc: &'a RawEncounter) -> Option<&'a str> {
    match enc.static_values.get(&f.name) {
        Some(StaticValue::Level(l)) => Some(l.as_str()),
        _ => None,
    }
}

/// Welford accumulator for a population mean and standard deviation.
#[derive(Default)]
struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn finish(&self) -> (f64, f64) {
        if self.n == 0 {
            return (0.0, 0.0);
        }
        let std = (self.m2 / self.n as f64).sqrt();
        if std <= 1e-12 * self.mean.abs().max(1.0) {
            (self.mean, 0.0)
        } else {
            (self.mean, std)
        }
    }
}

/// Valid, de-duplicated observations of each channel, sorted by minute.
/// Of several readings in the same minute the one latest in the file wins.
fn channel_observations(enc: &RawEncounter, schema: &FeatureSchema) -> Vec<Vec<(usize, f64)>> {
    let mut per_channel: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); schema.channels.len()];
    for p in &enc.series {
        let (lo, hi) = schema.channels[p.channel].valid_range;
        if p.value >= lo && p.value <= hi {
            per_channel[p.channel].insert(p.minute as usize, p.value);
        }
    }
    per_channel.into_iter().map(|m| m.into_iter().collect()).collect()
}

/// Surgery length in minutes: one past the last recorded minute, at least 1.
pub fn duration(enc: &RawEncounter) -> usize {
    enc.series.iter().map(|p| p.minute as usize + 1).max().unwrap_or(1)
}

/// Fills one channel onto a one-minute grid of length `t`.
fn fill_channel(obs: &[(usize, f64)], t: usize, gap_fill: GapFill, median: f64) -> (Vec<f64>, Vec<u8>) {
    let mut mask = vec![0u8; t];
    for &(m, _) in obs {
        mask[m] = 1;
    }
    let values = match (obs.first(), gap_fill) {
        (_, GapFill::Zero) => {
            let mut v = vec![0.0; t];
            for &(m, x) in obs {
                v[m] = x;
            }
            v
        }
        (None, GapFill::Interpolate) => vec![median; t],
        (Some(&(_, x0)), GapFill::Interpolate) => {
            let mut v = vec![x0; t];
            for pair in obs.windows(2) {
                let ((a, xa), (b, xb)) = (pair[0], pair[1]);
                for (m, slot) in v.iter_mut().enumerate().take(b).skip(a) {
                    *slot = xa + (xb - xa) * (m - a) as f64 / (b - a) as f64;
                }
            }
            let &(last, xl) = obs.last().unwrap();
            v[last..].fill(xl);
            v
        }
    };
    (values, mask)
}

impl PreprocessorState {
    pub fn fit(dev: &Cohort, schema: &FeatureSchema) -> Result<Self> {
        if dev.is_empty() {
            return Err(Error::Data("cannot fit preprocessing on an empty development cohort".into()));
        }
        let mut numeric = Vec::new();
        for f in schema.numeric_features() {
            let observed: Vec<f64> = dev.encounters.iter().filter_map(|e| raw_numeric(f, e)).collect();
            let stats = match f.kind {
                FeatureKind::Continuous => {
                    if observed.is_empty() {
                        return Err(Error::Data(format!(
                            "continuous feature `{}` is never observed in the development cohort",
                            f.name
                        )));
                    }
                    let sorted = stats::sorted_copy(&observed);
                    let p1 = stats::percentile_sorted(&sorted, 0.01);
                    let p99 = stats::percentile_sorted(&sorted, 0.99);
                    let median = stats::percentile_sorted(&sorted, 0.5);
                    let column: Vec<f64> = dev
                        .encounters
                        .iter()
                        .map(|e| raw_numeric(f, e).map_or(median, |x| cap_outliers(x, p1, p99)))
                        .collect();
                    let (mean, std) = stats::mean_std(&column);
                    NumericStats::Continuous { name: f.name.clone(), p1, p99, median, mean, std }
                }
                FeatureKind::Binary => {
                    let ones = observed.iter().filter(|&&x| x == 1.0).count();
                    let mode = if ones > observed.len() - ones { 1.0 } else { 0.0 };
                    let column: Vec<f64> = dev
                        .encounters
                        .iter()
                        .map(|e| raw_numeric(f, e).unwrap_or(mode))
                        .collect();
                    let (mean, std) = stats::mean_std(&column);
                    NumericStats::Binary { name: f.name.clone(), mode, mean, std }
                }
                FeatureKind::Nominal => unreachable!("numeric_features yields no nominals"),
            };
            numeric.push(stats);
        }

        let observations: Vec<Vec<Vec<(usize, f64)>>> = dev
            .encounters
            .iter()
            .map(|e| channel_observations(e, schema))
            .collect();
        let durations: Vec<usize> = dev.encounters.iter().map(duration).collect();
        let mut channels = Vec::with_capacity(schema.channels.len());
        for (c, spec) in schema.channels.iter().enumerate() {
            let observed: Vec<f64> = observations
                .iter()
                .flat_map(|obs| obs[c].iter().map(|&(_, x)| x))
                .collect();
            let median = if observed.is_empty() {
                log::warn!(
                    "channel `{}` is never observed in the development cohort; its statistics are zero",
                    spec.name
                );
                0.0
            } else {
                stats::median(&observed)
            };
            let mut running = Running::default();
            for (obs, &t) in observations.iter().zip(&durations) {
                let (values, _) = fill_channel(&obs[c], t, spec.gap_fill, median);
                values.iter().for_each(|&x| running.push(x));
            }
            let (mean, std) = running.finish();
            channels.push(ChannelStats {
                name: spec.name.clone(),
                median,
                mean,
                std,
                valid_range: spec.valid_range,
                gap_fill: spec.gap_fill,
            });
        }
        log::info!("same-minute duplicate readings resolved by keeping the last file row");

        let state = PreprocessorState {
            format_version: PREPROCESSOR_FORMAT_VERSION,
            schema_hash: schema.hash(),
            numeric,
            onehot: schema.onehot_features().map(LevelMap::of).collect(),
            embedded: schema.embedded_features().map(LevelMap::of).collect(),
            channels,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != PREPROCESSOR_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "preprocessor format version {} is not supported (expected {PREPROCESSOR_FORMAT_VERSION})",
                self.format_version
            )));
        }
        for s in &self.numeric {
            let ok = match *s {
                NumericStats::Continuous { p1, p99, median, mean, std, .. } => {
                    p1 <= p99 && std >= 0.0 && [p1, p99, median, mean, std].iter().all(|v| v.is_finite())
                }
                NumericStats::Binary { mode, mean, std, .. } => {
                    (mode == 0.0 || mode == 1.0) && std >= 0.0 && mean.is_finite() && std.is_finite()
                }
            };
            if !ok {
                return Err(Error::Data(format!("invalid statistics for feature `{}`", s.name())));
            }
        }
        for m in self.onehot.iter().chain(&self.embedded) {
            if !m.is_bijection() {
                return Err(Error::Data(format!(
                    "level map of `{}` is not a bijection onto 0..{} including `{MISSING_LEVEL}`",
                    m.name,
                    m.len()
                )));
            }
        }
        for c in &self.channels {
            if !(c.std >= 0.0 && c.mean.is_finite() && c.median.is_finite()) {
                return Err(Error::Data(format!("invalid statistics for channel `{}`", c.name)));
            }
        }
        Ok(())
    }

    /// Fails when `schema` is not the schema this state was fitted on.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if self.schema_hash != schema.hash() {
            return Err(Error::Schema(format!(
                "preprocessor was fitted on schema {} but the cohort uses {}",
                &self.schema_hash[..12.min(self.schema_hash.len())],
                &schema.hash()[..12]
            )));
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let state: PreprocessorState = serde_json::from_str(text)?;
        state.validate()?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// The numeric static vector and the embedded-nominal ids.
    pub fn encode_static(&self, enc: &RawEncounter, schema: &FeatureSchema) -> (Vec<f64>, Vec<usize>) {
        let n = self.numeric.len();
        let mut out = vec![0.0; 2 * n];
        for (i, (f, s)) in schema.numeric_features().zip(&self.numeric).enumerate() {
            let raw = raw_numeric(f, enc);
            out[i] = s.normalize(raw.unwrap_or_else(|| s.fill()));
            out[n + i] = if raw.is_some() { 1.0 } else { 0.0 };
        }
        for (f, m) in schema.onehot_features().zip(&self.onehot) {
            let mut block = vec![0.0; m.len()];
            block[m.lookup(raw_level(f, enc))] = 1.0;
            out.extend(block);
        }
        let ids = schema
            .embedded_features()
            .zip(&self.embedded)
            .map(|(f, m)| m.lookup(raw_level(f, enc)))
            .collect();
        (out, ids)
    }

    /// One-minute values and masks per channel, before normalization.
    pub fn resample(&self, enc: &RawEncounter, schema: &FeatureSchema) -> Resampled {
        let t = duration(enc);
        let obs = channel_observations(enc, schema);
        let (values, masks) = obs
            .iter()
            .zip(&self.channels)
            .map(|(o, c)| fill_channel(o, t, c.gap_fill, c.median))
            .unzip();
        Resampled { duration: t, values, masks }
    }

    /// The `[T, 2·channels]` model input: z-normalized values, then masks.
    pub fn build_series(&self, enc: &RawEncounter, schema: &FeatureSchema) -> Tensor {
        self.series_from(&self.resample(enc, schema))
    }

    pub fn series_from(&self, r: &Resampled) -> Tensor {
        let c = self.channels.len();
        let mut data = vec![0.0; r.duration * 2 * c];
        for (j, stats) in self.channels.iter().enumerate() {
            for t in 0..r.duration {
                let row = &mut data[t * 2 * c..(t + 1) * 2 * c];
                row[j] = z_score(r.values[j][t], stats.mean, stats.std);
                row[c + j] = f64::from(r.masks[j][t]);
            }
        }
        Tensor::new(vec![r.duration, 2 * c], data).expect("series shape")
    }

    pub fn encode(&self, enc: &RawEncounter, schema: &FeatureSchema) -> Result<EncodedEncounter> {
        let (numeric_static, embedded_ids) = self.encode_static(enc, schema);
        let series = self.build_series(enc, schema);
        if numeric_static.len() != schema.numeric_width() || series.shape()[1] != schema.series_width() {
            return Err(Error::Shape(format!(
                "encoded widths {}/{} do not match schema widths {}/{}",
                numeric_static.len(),
                series.shape()[1],
                schema.numeric_width(),
                schema.series_width()
            )));
        }
        Ok(EncodedEncounter {
            encounter_id: enc.encounter_id.clone(),
            numeric_static,
            embedded_ids,
            series,
            labels: enc.outcomes.clone(),
        })
    }

    /// Encodes every encounter, in cohort order.
    pub fn encode_cohort(&self, cohort: &Cohort) -> Result<Vec<EncodedEncounter>> {
        self.check_schema(&cohort.schema)?;
        cohort
            .encounters
            .par_iter()
            .map(|e| self.encode(e, &cohort.schema))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::SeriesPoint;
    use crate::schema::{default_channels, default_outcomes, CyclicalComponent};

    fn schema() -> FeatureSchema {
        let mut features = vec![
            FeatureSpec::continuous("x"),
            FeatureSpec::binary("flag"),
            FeatureSpec::nominal("smoking", &["Never", "Former", "Current"]),
            FeatureSpec::cyclical("wd_sin", CyclicalPeriod::Weekday, CyclicalComponent::Sin),
        ];
        let levels: Vec<String> = (0..25).map(|i| format!("s{i}")).collect();
        features.push(FeatureSpec::nominal("surgeon", &levels));
        FeatureSchema::new(features, default_channels(), default_outcomes()).unwrap()
    }

    fn encounter(id: &str, x: Option<f64>, series: Vec<SeriesPoint>) -> RawEncounter {
        let mut static_values = BTreeMap::new();
        if let Some(x) = x {
            static_values.insert("x".into(), StaticValue::Number(x));
        }
        RawEncounter {
            encounter_id: id.into(),
            admit_timestamp: crate::cohort::parse_timestamp("2017-03-06T08:00:00").unwrap(),
            static_values,
            series,
            outcomes: vec![0; 9],
        }
    }

    fn hr(minute: u32, value: f64) -> SeriesPoint {
        SeriesPoint { minute, channel: 4, value }
    }

    #[test]
    fn cap_examples() {
        assert_eq!(cap_outliers(150.0, 40.0, 120.0), 120.0);
        assert_eq!(cap_outliers(35.0, 40.0, 120.0), 40.0);
        assert_eq!(cap_outliers(80.0, 40.0, 120.0), 80.0);
    }

    #[test]
    fn cyclical_examples() {
        assert_eq!(encode_cyclical(0, 7).unwrap(), (0.0, 1.0));
        assert_eq!(encode_cyclical(3, 12).unwrap(), (1.0, 0.0));
        assert_eq!(encode_cyclical(6, 12).unwrap(), (0.0, -1.0));
        assert_eq!(encode_cyclical(9, 12).unwrap(), (-1.0, 0.0));
        assert!(encode_cyclical(7, 7).is_err());
        for i in 0..7 {
            let (s, c) = encode_cyclical(i, 7).unwrap();
            let a = 2.0 * std::f64::consts::PI * i as f64 / 7.0;
            assert!((s - a.sin()).abs() < 1e-15 && (c - a.cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn fit_percentiles_and_constants() {
        let s = schema();
        let encs = (1..=100).map(|i| encounter(&format!("e{i}"), Some(i as f64), vec![])).collect();
        let state = PreprocessorState::fit(&Cohort::new(s.clone(), encs).unwrap(), &s).unwrap();
        match state.numeric[0] {
            NumericStats::Continuous { p1, p99, .. } => {
                assert!((p1 - 1.99).abs() < 1e-12 && (p99 - 99.01).abs() < 1e-12)
            }
            _ => panic!(),
        }

        let encs = (0..10).map(|i| encounter(&format!("e{i}"), Some(5.0), vec![])).collect();
        let state = PreprocessorState::fit(&Cohort::new(s.clone(), encs).unwrap(), &s).unwrap();
        assert_eq!(
            state.numeric[0],
            NumericStats::Continuous { name: "x".into(), p1: 5.0, p99: 5.0, median: 5.0, mean: 5.0, std: 0.0 }
        );
        let (v, _) = state.encode_static(&encounter("z", Some(5.0), vec![]), &s);
        assert_eq!(v[0], 0.0);
        assert_eq!(state.onehot[0].index["Never"], 0);
        assert_eq!(state.onehot[0].index["Current"], 2);
        assert_eq!(state.onehot[0].index[MISSING_LEVEL], 3);
    }

    #[test]
    fn never_observed_continuous_is_an_error() {
        let s = schema();
        let dev = Cohort::new(s.clone(), vec![encounter("a", None, vec![])]).unwrap();
        assert!(PreprocessorState::fit(&dev, &s).is_err());
        let empty = Cohort::new(s.clone(), vec![]).unwrap();
        assert!(PreprocessorState::fit(&empty, &s).is_err());
    }

    fn fitted() -> (FeatureSchema, PreprocessorState) {
        let s = schema();
        let encs = vec![
            encounter("a", Some(1.0), vec![hr(0, 60.0), hr(4, 80.0)]),
            encounter("b", Some(3.0), vec![hr(1, 70.0)]),
        ];
        let state = PreprocessorState::fit(&Cohort::new(s.clone(), encs).unwrap(), &s).unwrap();
        (s, state)
    }

    #[test]
    fn interpolation_and_edge_fill() {
        let (s, state) = fitted();
        let r = state.resample(&encounter("a", None, vec![hr(0, 60.0), hr(4, 80.0)]), &s);
        assert_eq!(r.duration, 5);
        assert_eq!(r.values[4], [60.0, 65.0, 70.0, 75.0, 80.0]);
        assert_eq!(r.masks[4], [1, 0, 0, 0, 1]);

        let r = state.resample(&encounter("b", None, vec![hr(2, 10.0), SeriesPoint { minute: 4, channel: 0, value: 1.0 }]), &s);
        // 10 is below the heart-rate range and is discarded; systolic 1 likewise.
        assert_eq!(r.masks[4], [0; 5]);
        let r = state.resample(&encounter("b", None, vec![hr(2, 50.0), SeriesPoint { minute: 4, channel: 0, value: 100.0 }]), &s);
        assert_eq!(r.values[4], [50.0; 5]);
        assert_eq!(r.masks[4], [0, 0, 1, 0, 0]);
    }

    #[test]
    fn unobserved_channels_and_zero_fill() {
        let (s, state) = fitted();
        let median = state.channels[4].median;
        assert_eq!(median, 70.0);
        let r = state.resample(&encounter("c", None, vec![SeriesPoint { minute: 3, channel: 13, value: 50.0 }]), &s);
        assert_eq!(r.values[4], [median; 4]);
        assert_eq!(r.masks[4], [0; 4]);
        assert_eq!(r.values[13], [0.0, 0.0, 0.0, 50.0]);
        assert_eq!(r.masks[13], [0, 0, 0, 1]);
        assert_eq!(r.values[12], [0.0; 4]);

        let empty = state.resample(&encounter("d", None, vec![]), &s);
        assert_eq!(empty.duration, 1);
    }

    #[test]
    fn duplicates_keep_last_row() {
        let (s, state) = fitted();
        let r = state.resample(&encounter("a", None, vec![hr(0, 90.0), hr(0, 95.0), hr(1, 100.0)]), &s);
        assert_eq!(r.values[4], [95.0, 100.0]);
    }

    #[test]
    fn static_encoding_layout() {
        let (s, state) = fitted();
        let mut e = encounter("q", None, vec![]);
        e.static_values.insert("surgeon".into(), StaticValue::Level(MISSING_LEVEL.into()));
        let (v, ids) = state.encode_static(&e, &s);
        assert_eq!(v.len(), s.numeric_width());
        // x, flag, wd_sin values, then their masks: only the cyclical one is observed.
        assert_eq!(&v[3..6], [0.0, 0.0, 1.0]);
        assert_eq!(&v[6..10], [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ids, [25]);
        assert_eq!(state.embedded[0].index[MISSING_LEVEL], 25);
    }

    #[test]
    fn default_schema_width_is_295() {
        let s = crate::schema::default_schema();
        assert_eq!(2 * s.numeric_count(), 240);
        assert_eq!(s.numeric_width(), 295);
        assert_eq!(s.series_width(), 28);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let (_, state) = fitted();
        let back = PreprocessorState::from_json_str(&state.to_json_string()).unwrap();
        assert_eq!(back, state);
        let mut broken = state.clone();
        broken.onehot[0].index.insert("Never".into(), 2);
        assert!(PreprocessorState::from_json_str(&broken.to_json_string()).is_err());
        let mut broken = state;
        broken.format_version = 99;
        assert!(PreprocessorState::from_json_str(&broken.to_json_string()).is_err());
    }
}
