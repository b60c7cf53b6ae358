//! Seeded synthetic cohorts with planted outcome signal and the generating
//! logits as ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{parse_timestamp, Cohort, RawEncounter, SeriesPoint, StaticValue};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::schema::{schema_with_dims, FeatureKind, FeatureSchema, GapFill, SchemaDims, MISSING_LEVEL, OUTCOME_COUNT};

/// One additive contribution to an outcome's generating logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    /// `weight · z` for a continuous feature's standardized value, or
    /// `weight · (x − p)` for a binary feature.
    Linear { feature: String, weight: f64 },
    /// `weight · z_a · z_b`, whose sign is the XOR of the two signs.
    Xor { a: String, b: String, weight: f64 },
    /// `weight · u`, the encounter's level offset of a channel.
    SeriesMean { channel: String, weight: f64 },
    /// `weight · d`, the encounter's drift of a channel over the surgery.
    SeriesTrend { channel: String, weight: f64 },
    /// `weight` when the feature is observed, 0 when missing.
    Observed { feature: String, weight: f64 },
    /// `weight · s`, the shared latent factor.
    Shared { weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// `y ~ Bernoulli(sigmoid(logit + ε))`.
    #[default]
    Bernoulli,
    /// `y = 1[logit + ε ≥ 0]`.
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRecipe {
    pub prevalence: f64,
    #[serde(default)]
    pub terms: Vec<Term>,
    /// Standard deviation of unobserved logit noise.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub rule: LabelRule,
}

/// `s = Σ z_{a_j} · z_{b_j} / √k` over `k` feature pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedFactor {
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DurationSpec {
    pub median: f64,
    pub sigma: f64,
    pub min: u32,
    pub max: u32,
}

impl Default for DurationSpec {
    fn default() -> Self {
        DurationSpec { median: 120.0, sigma: 0.6, min: 20, max: 600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissingnessSpec {
    /// Probability that a static feature is missing.
    pub static_rate: f64,
    /// Per-feature overrides. Features used by linear, XOR or shared terms
    /// are always observed unless overridden here.
    pub overrides: BTreeMap<String, f64>,
    /// Probability that a channel is never recorded in an encounter.
    pub channel_absent: f64,
    /// Probability that an interpolated channel is recorded at a minute.
    pub minute_observed: f64,
    /// Probability of an event on a zero-filled channel at a minute.
    pub event_rate: f64,
}

impl Default for MissingnessSpec {
    fn default() -> Self {
        MissingnessSpec {
            static_rate: 0.1,
            overrides: BTreeMap::new(),
            channel_absent: 0.05,
            minute_observed: 0.5,
            event_rate: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub seed: u64,
    pub dims: SchemaDims,
    pub duration: DurationSpec,
    pub missingness: MissingnessSpec,
    pub start: String,
    pub span_days: u32,
    pub shared: Option<SharedFactor>,
    /// One recipe per outcome, in schema order.
    pub outcomes: Vec<OutcomeRecipe>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        preset("default").expect("default preset exists")
    }
}

pub const PRESETS: [&str; 5] = ["default", "null", "nonlinear", "correlated_rare", "missingness"];

fn linear(feature: &str, weight: f64) -> Term {
    Term::Linear { feature: feature.into(), weight }
}

fn recipe(prevalence: f64, terms: Vec<Term>, noise: f64) -> OutcomeRecipe {
    OutcomeRecipe { prevalence, terms, noise, rule: LabelRule::Bernoulli }
}

const LAB: &str = "_min_past_week";

/// Schema dimensions used by the focused recipes.
pub fn compact_dims() -> SchemaDims {
    SchemaDims { continuous: 24, binary: 6, onehot: 3, embedded: vec![25, 30] }
}

/// Named recipes: `default` mixes every term kind; `null` has no signal;
/// `nonlinear` plants an XOR outcome (first) and a purely linear outcome
/// (second); `correlated_rare` ties every outcome to a nonlinear shared
/// factor with a 3% final outcome; `missingness` makes the fourth outcome
/// depend on whether `bmi` was recorded.
pub fn preset(name: &str) -> Result<SynthSpec> {
    let base = SynthSpec {
        n: 2000,
        seed: 7,
        dims: SchemaDims::default(),
        duration: DurationSpec::default(),
        missingness: MissingnessSpec::default(),
        start: "2014-01-01T00:00:00".into(),
        span_days: 1460,
        shared: None,
        outcomes: Vec::new(),
    };
    let background = |prevalence: f64, feature: &str| recipe(prevalence, vec![linear(feature, 0.8)], 0.3);
    let spec = match name {
        "default" => SynthSpec {
            shared: Some(SharedFactor {
                pairs: vec![("age".into(), "charlson_comorbidity_index".into()), ("bmi".into(), format!("hemoglobin{LAB}"))],
            }),
            outcomes: vec![
                recipe(0.20, vec![linear("age", 0.7), linear("charlson_comorbidity_index", 0.6), Term::Shared { weight: 0.8 }], 0.5),
                recipe(0.08, vec![Term::SeriesMean { channel: "etco2".into(), weight: 0.8 }, Term::Shared { weight: 0.6 }], 0.5),
                recipe(0.06, vec![linear(&format!("wbc{LAB}"), 0.9), Term::SeriesTrend { channel: "temperature".into(), weight: 0.7 }], 0.5),
                recipe(0.13, vec![linear(&format!("serum_creatinine{LAB}"), 1.0), Term::SeriesMean { channel: "systolic_bp".into(), weight: -0.6 }], 0.5),
                recipe(0.10, vec![linear("age", 0.8), Term::Observed { feature: "neighborhood_median_income".into(), weight: 1.0 }], 0.5),
                recipe(0.03, vec![linear("bmi", 0.7), Term::Shared { weight: 0.7 }], 0.5),
                recipe(0.08, vec![Term::SeriesMean { channel: "heart_rate".into(), weight: 0.9 }, linear("age", 0.5)], 0.5),
                recipe(0.15, vec![linear("bmi", 0.6), linear("gender_male", 0.5)], 0.5),
                recipe(0.02, vec![linear("age", 1.0), Term::Shared { weight: 1.0 }, Term::SeriesTrend { channel: "spo2".into(), weight: -0.6 }], 0.5),
            ],
            ..base
        },
        "null" => SynthSpec { outcomes: (0..OUTCOME_COUNT).map(|_| recipe(0.2, vec![], 0.0)).collect(), ..base },
        "nonlinear" => {
            let mut outcomes = vec![
                recipe(0.3, vec![Term::Xor { a: "age".into(), b: "bmi".into(), weight: 4.0 }], 0.0),
                recipe(
                    0.3,
                    vec![
                        linear("charlson_comorbidity_index", 1.2),
                        linear("distance_to_hospital_km", -0.9),
                        linear(&format!("hemoglobin{LAB}"), 0.8),
                    ],
                    0.0,
                ),
            ];
            outcomes.extend(
                ["neighborhood_median_income", "neighborhood_pct_rural", "neighborhood_pct_below_poverty"]
                    .iter()
                    .cycle()
                    .take(OUTCOME_COUNT - 2)
                    .map(|f| background(0.2, f)),
            );
            SynthSpec {
                n: 8000,
                dims: compact_dims(),
                duration: DurationSpec { median: 40.0, sigma: 0.4, min: 20, max: 120 },
                outcomes,
                ..base
            }
        }
        "correlated_rare" => {
            let pairs: Vec<(String, String)> = [
                ("age", "bmi"),
                ("charlson_comorbidity_index", "distance_to_hospital_km"),
                ("neighborhood_median_income", "neighborhood_pct_rural"),
                ("neighborhood_pct_below_poverty", "neighborhood_population_density"),
            ]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
            let mut outcomes: Vec<OutcomeRecipe> =
                (0..OUTCOME_COUNT - 1).map(|_| recipe(0.3, vec![Term::Shared { weight: 2.5 }], 0.3)).collect();
            outcomes.push(recipe(0.03, vec![Term::Shared { weight: 2.5 }], 0.3));
            SynthSpec {
                n: 4000,
                dims: compact_dims(),
                shared: Some(SharedFactor { pairs }),
                duration: DurationSpec { median: 30.0, sigma: 0.3, min: 20, max: 60 },
                outcomes,
                ..base
            }
        }
        "missingness" => {
            let mut outcomes: Vec<OutcomeRecipe> = ["age", "charlson_comorbidity_index", "distance_to_hospital_km"]
                .iter()
                .cycle()
                .take(OUTCOME_COUNT)
                .map(|f| background(0.2, f))
                .collect();
            outcomes[3] = recipe(0.25, vec![Term::Observed { feature: "bmi".into(), weight: 4.0 }], 0.3);
            let mut missingness = MissingnessSpec::default();
            missingness.overrides.insert("bmi".into(), 0.5);
            SynthSpec {
                n: 3000,
                dims: compact_dims(),
                missingness,
                duration: DurationSpec { median: 40.0, sigma: 0.4, min: 20, max: 120 },
                outcomes,
                ..base
            }
        }
        other => {
            return Err(Error::Config(format!("unknown synth preset `{other}` (known: {})", PRESETS.join(", "))));
        }
    };
    Ok(spec)
}

impl SynthSpec {
    pub fn schema(&self) -> Result<FeatureSchema> {
        schema_with_dims(&self.dims)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        let d = &self.duration;
        if d.min == 0 || d.max < d.min || !(d.median > 0.0) || !(d.sigma >= 0.0) {
            return bad(format!("invalid duration bounds {d:?}"));
        }
        let m = &self.missingness;
        let rates = [m.static_rate, m.channel_absent, m.minute_observed, m.event_rate];
        if rates.iter().chain(m.overrides.values()).any(|r| !(0.0..=1.0).contains(r)) {
            return bad("missingness rates must lie in [0, 1]".into());
        }
        parse_timestamp(&self.start)?;
        if self.outcomes.len() != OUTCOME_COUNT {
            return bad(format!("{} outcome recipes given, {OUTCOME_COUNT} required", self.outcomes.len()));
        }
        let schema = self.schema()?;
        let feature = |name: &str| {
            schema
                .feature(name)
                .filter(|f| f.cyclical.is_none())
                .ok_or_else(|| Error::Config(format!("recipe refers to unknown static feature `{name}`")))
        };
        let continuous = |name: &str| -> Result<()> {
            match feature(name)?.kind {
                FeatureKind::Continuous => Ok(()),
                _ => Err(Error::Config(format!("`{name}` must be a continuous feature"))),
            }
        };
        for name in m.overrides.keys() {
            feature(name)?;
        }
        if let Some(s) = &self.shared {
            if s.pairs.is_empty() {
                return bad("shared factor needs at least one feature pair".into());
            }
            for (a, b) in &s.pairs {
                continuous(a)?;
                continuous(b)?;
            }
        }
        for (k, r) in self.outcomes.iter().enumerate() {
            if !(r.prevalence > 0.01 && r.prevalence < 0.5) {
                return bad(format!("outcome {k}: prevalence {} outside (0.01, 0.5)", r.prevalence));
            }
            if !(r.noise >= 0.0) {
                return bad(format!("outcome {k}: noise must be non-negative"));
            }
            for t in &r.terms {
                match t {
                    Term::Linear { feature: f, .. } => {
                        if !matches!(feature(f)?.kind, FeatureKind::Continuous | FeatureKind::Binary) {
                            return bad(format!("linear term on nominal `{f}`"));
                        }
                    }
                    Term::Xor { a, b, .. } => {
                        continuous(a)?;
                        continuous(b)?;
                    }
                    Term::SeriesMean { channel, .. } | Term::SeriesTrend { channel, .. } => {
                        let c = schema
                            .channel_index(channel)
                            .ok_or_else(|| Error::Config(format!("unknown channel `{channel}`")))?;
                        if schema.channels[c].gap_fill != GapFill::Interpolate {
                            return bad(format!("series terms need an interpolated channel, `{channel}` is not"));
                        }
                    }
                    Term::Observed { feature: f, .. } => {
                        feature(f)?;
                    }
                    Term::Shared { .. } => {
                        if self.shared.is_none() {
                            return bad(format!("outcome {k} uses the shared factor but none is configured"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Features that must stay observed so the generating logit is visible.
    fn signal_features(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for r in &self.outcomes {
            for t in &r.terms {
                match t {
                    Term::Linear { feature, .. } => {
                        out.insert(feature.clone());
                    }
                    Term::Xor { a, b, .. } => {
                        out.insert(a.clone());
                        out.insert(b.clone());
                    }
                    _ => {}
                }
            }
        }
        if let Some(s) = &self.shared {
            for (a, b) in &s.pairs {
                out.insert(a.clone());
                out.insert(b.clone());
            }
        }
        out
    }
}

/// Generating logits (intercept included, noise excluded) per encounter
/// and outcome, in cohort order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub encounter_ids: Vec<String>,
    pub outcomes: Vec<String>,
    pub logits: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

impl GroundTruth {
    pub fn logits_for(&self, k: usize) -> Vec<f64> {
        self.logits.iter().map(|l| l[k]).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["encounter_id".to_string()];
        header.extend(self.outcomes.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.encounter_ids.iter().zip(&self.logits) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let outcomes: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
        let (mut encounter_ids, mut logits) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            encounter_ids.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Data(format!("{}: bad logit `{v}`", path.display()))))
                .collect::<Result<Vec<_>>>()?;
            logits.push(row);
        }
        Ok(GroundTruth { encounter_ids, outcomes, logits, intercepts: Vec::new() })
    }

    /// The rows of `ids`, in that order.
    pub fn subset(&self, ids: &[String]) -> Result<GroundTruth> {
        let index: BTreeMap<&str, usize> =
            self.encounter_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let logits = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.logits[i].clone())
                    .ok_or_else(|| Error::Data(format!("no ground truth for `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroundTruth {
            encounter_ids: ids.to_vec(),
            outcomes: self.outcomes.clone(),
            logits,
            intercepts: self.intercepts.clone(),
        })
    }
}

/// AUROC of the generating logits against realized labels, per outcome.
pub fn oracle_auroc(truth: &GroundTruth, cohort: &Cohort) -> Result<Vec<f64>> {
    let truth = truth.subset(&cohort.encounters.iter().map(|e| e.encounter_id.clone()).collect::<Vec<_>>())?;
    (0..truth.outcomes.len())
        .map(|k| evaluation::auroc(&truth.logits_for(k), &cohort.labels(k)))
        .collect()
}

/// Latent quantities of one encounter that recipes read.
struct Latent {
    z: BTreeMap<String, f64>,
    binary: BTreeMap<String, (f64, f64)>,
    offsets: Vec<f64>,
    drifts: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn round_to(v: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (v * s).round() / s
}

/// Per-feature generating parameters, drawn once per cohort.
struct FeatureParams {
    loc: f64,
    scale: f64,
    p: f64,
}

/// Generates the cohort and its ground truth. Deterministic in the spec.
pub fn generate(spec: &SynthSpec) -> Result<(Cohort, GroundTruth)> {
    spec.validate()?;
    let schema = spec.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let signal = spec.signal_features();
    let start = parse_timestamp(&spec.start)?;

    let params: BTreeMap<String, FeatureParams> = schema
        .features
        .iter()
        .map(|f| {
            let p = FeatureParams {
                loc: rng.random_range(10.0..100.0),
                scale: rng.random_range(1.0..20.0),
                p: rng.random_range(0.1..0.5),
            };
            (f.name.clone(), p)
        })
        .collect();
    let missing_rate = |name: &str| {
        spec.missingness.overrides.get(name).copied().unwrap_or(if signal.contains(name) {
            0.0
        } else {
            spec.missingness.static_rate
        })
    };

    let mut times: Vec<NaiveDateTime> = (0..spec.n)
        .map(|_| start + Duration::seconds(rng.random_range(0..i64::from(spec.span_days) * 86_400)))
        .collect();
    times.sort();
    let lognormal = LogNormal::new(spec.duration.median.ln(), spec.duration.sigma)
        .map_err(|e| Error::Config(format!("duration distribution: {e}")))?;

    let mut encounters = Vec::with_capacity(spec.n);
    let mut latents = Vec::with_capacity(spec.n);
    for (i, admit) in times.into_iter().enumerate() {
        let mut static_values = BTreeMap::new();
        let mut latent = Latent { z: BTreeMap::new(), binary: BTreeMap::new(), offsets: vec![], drifts: vec![] };
        for f in schema.features.iter().filter(|f| f.cyclical.is_none()) {
            let fp = &params[&f.name];
            let value = match f.kind {
                FeatureKind::Continuous => {
                    let z: f64 = rng.sample(StandardNormal);
                    latent.z.insert(f.name.clone(), z);
                    StaticValue::Number(round_to(fp.loc + fp.scale * z, 4))
                }
                FeatureKind::Binary => {
                    let x = f64::from(u8::from(rng.random_bool(fp.p)));
                    latent.binary.insert(f.name.clone(), (x, fp.p));
                    StaticValue::Number(x)
                }
                FeatureKind::Nominal => {
                    let declared: Vec<&String> = f.levels.iter().filter(|l| l.as_str() != MISSING_LEVEL).collect();
                    // Cubing a uniform draw skews use towards the first levels.
                    let u: f64 = rng.random();
                    StaticValue::Level(declared[((u * u * u) * declared.len() as f64) as usize].clone())
                }
            };
            if !rng.random_bool(missing_rate(&f.name)) {
                static_values.insert(f.name.clone(), value);
            }
        }

        let duration = (lognormal.sample(&mut rng).round() as u32).clamp(spec.duration.min, spec.duration.max);
        let mut series = Vec::new();
        for (c, ch) in schema.channels.iter().enumerate() {
            let u: f64 = rng.sample(StandardNormal);
            let d: f64 = rng.sample(StandardNormal);
            latent.offsets.push(u);
            latent.drifts.push(d);
            let absent = rng.random_bool(spec.missingness.channel_absent);
            let (lo, hi) = ch.valid_range;
            let span = hi - lo;
            for minute in 0..duration {
                match ch.gap_fill {
                    GapFill::Interpolate => {
                        let noise: f64 = rng.sample(StandardNormal);
                        // Channel 0 is recorded at the first and last minute so
                        // the resampled duration equals the generated one.
                        let anchor = c == 0 && (minute == 0 || minute + 1 == duration);
                        let observed = anchor || (!absent && rng.random_bool(spec.missingness.minute_observed));
                        if observed {
                            let t = f64::from(minute) / f64::from(duration.max(2) - 1);
                            let v = lo + 0.45 * span + 0.08 * span * (u + d * t + 0.3 * noise);
                            series.push(SeriesPoint { minute, channel: c, value: round_to(v.clamp(lo, hi), 2) });
                        }
                    }
                    GapFill::Zero => {
                        if !absent && rng.random_bool(spec.missingness.event_rate) {
                            let size: f64 = rng.sample(StandardNormal);
                            let v = (0.05 * span * (1.0 + 0.3 * u + 0.3 * size.abs())).clamp(lo, hi);
                            series.push(SeriesPoint { minute, channel: c, value: round_to(v, 2) });
                        }
                    }
                }
            }
        }
        encounters.push(RawEncounter {
            encounter_id: format!("enc_{:06}", i + 1),
            admit_timestamp: admit,
            static_values,
            series,
            outcomes: vec![0; OUTCOME_COUNT],
        });
        latents.push(latent);
    }

    let shared: Vec<f64> = latents
        .iter()
        .map(|l| match &spec.shared {
            Some(s) => s.pairs.iter().map(|(a, b)| l.z[a] * l.z[b]).sum::<f64>() / (s.pairs.len() as f64).sqrt(),
            None => 0.0,
        })
        .collect();
    let mut logits = vec![vec![0.0; OUTCOME_COUNT]; spec.n];
    let mut intercepts = Vec::with_capacity(OUTCOME_COUNT);
    for (k, r) in spec.outcomes.iter().enumerate() {
        let eta: Vec<f64> = encounters
            .iter()
            .zip(&latents)
            .zip(&shared)
            .map(|((e, l), &s)| r.terms.iter().map(|t| term_value(t, e, l, s, &schema)).sum())
            .collect();
        let noise: Vec<f64> = (0..spec.n).map(|_| r.noise * rng.sample::<f64, _>(StandardNormal)).collect();
        let b = solve_intercept(&eta, &noise, r, k)?;
        intercepts.push(b);
        for (i, e) in encounters.iter_mut().enumerate() {
            let z = eta[i] + b;
            logits[i][k] = z;
            e.outcomes[k] = match r.rule {
                LabelRule::Bernoulli => u8::from(rng.random_bool(sigmoid(z + noise[i]))),
                LabelRule::Threshold => u8::from(z + noise[i] >= 0.0),
            };
        }
    }
    let truth = GroundTruth {
        encounter_ids: encounters.iter().map(|e| e.encounter_id.clone()).collect(),
        outcomes: schema.outcomes.clone(),
        logits,
        intercepts,
    };
    Ok((Cohort::new(schema, encounters)?, truth))
}

fn term_value(t: &Term, e: &RawEncounter, l: &Latent, shared: f64, schema: &FeatureSchema) -> f64 {
    match t {
        Term::Linear { feature, weight } => match (l.z.get(feature), l.binary.get(feature)) {
            (Some(z), _) => weight * z,
            (_, Some((x, p))) => weight * (x - p),
            _ => 0.0,
        },
        Term::Xor { a, b, weight } => weight * l.z[a] * l.z[b],
        Term::SeriesMean { channel, weight } => weight * l.offsets[schema.channel_index(channel).expect("validated")],
        Term::SeriesTrend { channel, weight } => weight * l.drifts[schema.channel_index(channel).expect("validated")],
        Term::Observed { feature, weight } => {
            if e.static_values.contains_key(feature) {
                *weight
            } else {
                0.0
            }
        }
        Term::Shared { weight } => weight * shared,
    }
}

/// Intercept giving the target expected prevalence, by bisection.
fn solve_intercept(eta: &[f64], noise: &[f64], r: &OutcomeRecipe, k: usize) -> Result<f64> {
    let rate = |b: f64| {
        let total: f64 = eta
            .iter()
            .zip(noise)
            .map(|(e, n)| match r.rule {
                LabelRule::Bernoulli => sigmoid(e + n + b),
                LabelRule::Threshold => f64::from(u8::from(e + n + b >= 0.0)),
            })
            .sum();
        total / eta.len() as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < r.prevalence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = if (rate(lo) - r.prevalence).abs() <= (rate(hi) - r.prevalence).abs() { lo } else { hi };
    let achieved = rate(b);
    if (achieved - r.prevalence).abs() > 0.01 {
        return Err(Error::Config(format!(
            "outcome {k}: prevalence {} is unreachable (closest expected prevalence {achieved:.4}); the signal is too coarse or too strong",
            r.prevalence
        )));
    }
    Ok(b)
}

/// Writes the cohort files and `ground_truth.csv` into `dir`.
pub fn write(cohort: &Cohort, truth: &GroundTruth, dir: &Path) -> Result<()> {
    crate::cohort::write_cohort(cohort, dir)?;
    truth.write_csv(&dir.join("ground_truth.csv"))
}
