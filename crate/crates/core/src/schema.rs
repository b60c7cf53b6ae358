//! Feature schema: static features with their nominal encodings, plus the
//! intraoperative channels and outcomes.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MISSING_LEVEL: &str = "missing";
pub const CHANNEL_COUNT: usize = 14;
pub const OUTCOME_COUNT: usize = 9;
/// Nominals with at least this many levels must be embedded.
pub const EMBEDDING_CARDINALITY: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Binary,
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NominalEncoding {
    Onehot,
    Embedded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CyclicalPeriod {
    /// Day of week, period 7.
    Weekday,
    /// Month of year, period 12.
    Month,
}

impl CyclicalPeriod {
    pub fn period(self) -> usize {
        match self {
            CyclicalPeriod::Weekday => 7,
            CyclicalPeriod::Month => 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CyclicalComponent {
    Sin,
    Cos,
}

/// A continuous feature derived from the admission timestamp rather than read
/// from the static file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cyclical {
    pub period: CyclicalPeriod,
    pub component: CyclicalComponent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<NominalEncoding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cyclical: Option<Cyclical>,
}

impl FeatureSpec {
    pub fn continuous(name: &str) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Continuous,
            levels: Vec::new(),
            encoding: None,
            cyclical: None,
        }
    }

    pub fn cyclical(name: &str, period: CyclicalPeriod, component: CyclicalComponent) -> Self {
        FeatureSpec {
            cyclical: Some(Cyclical { period, component }),
            ..FeatureSpec::continuous(name)
        }
    }

    pub fn binary(name: &str) -> Self {
        FeatureSpec {
            kind: FeatureKind::Binary,
            ..FeatureSpec::continuous(name)
        }
    }

    /// A nominal feature; the encoding follows the cardinality rule.
    pub fn nominal<S: AsRef<str>>(name: &str, levels: &[S]) -> Self {
        let levels: Vec<String> = levels.iter().map(|l| l.as_ref().to_string()).collect();
        let encoding = if levels.len() < EMBEDDING_CARDINALITY {
            NominalEncoding::Onehot
        } else {
            NominalEncoding::Embedded
        };
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Nominal,
            levels,
            encoding: Some(encoding),
            cyclical: None,
        }
    }

    /// Number of declared levels, not counting the reserved missing level.
    pub fn cardinality(&self) -> usize {
        self.levels.iter().filter(|l| *l != MISSING_LEVEL).count()
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, FeatureKind::Continuous | FeatureKind::Binary)
    }

    pub fn missing_index(&self) -> Option<usize> {
        self.levels.iter().position(|l| l == MISSING_LEVEL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapFill {
    /// Linear interpolation between observations, nearest value at the edges.
    #[default]
    Interpolate,
    /// Unobserved minutes are zero (blood loss, urine output).
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub valid_range: (f64, f64),
    #[serde(default)]
    pub gap_fill: GapFill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub schema_version: u32,
    pub features: Vec<FeatureSpec>,
    pub channels: Vec<ChannelSpec>,
    pub outcomes: Vec<String>,
}

impl FeatureSchema {
    /// Builds a schema, appending the reserved missing level where absent and
    /// checking every invariant.
    pub fn new(
        features: Vec<FeatureSpec>,
        channels: Vec<ChannelSpec>,
        outcomes: Vec<String>,
    ) -> Result<Self> {
        let mut schema = FeatureSchema {
            schema_version: SCHEMA_VERSION,
            features,
            channels,
            outcomes,
        };
        schema.normalize();
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut schema: FeatureSchema =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.normalize();
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    fn normalize(&mut self) {
        for f in &mut self.features {
            if f.kind == FeatureKind::Nominal && f.missing_index().is_none() {
                f.levels.push(MISSING_LEVEL.to_string());
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            match f.kind {
                FeatureKind::Nominal => {
                    let mut levels = HashSet::new();
                    for level in &f.levels {
                        if !levels.insert(level.as_str()) {
                            return Err(Error::Schema(format!(
                                "nominal `{}` repeats level `{level}`",
                                f.name
                            )));
                        }
                    }
                    let expected = if f.cardinality() < EMBEDDING_CARDINALITY {
                        NominalEncoding::Onehot
                    } else {
                        NominalEncoding::Embedded
                    };
                    match f.encoding {
                        None => {
                            return Err(Error::Schema(format!(
                                "nominal `{}` has no encoding",
                                f.name
                            )))
                        }
                        Some(enc) if enc != expected => {
                            return Err(Error::Schema(format!(
                                "nominal `{}` has {} levels and must use {:?} encoding, not {:?}",
                                f.name,
                                f.cardinality(),
                                expected,
                                enc
                            )))
                        }
                        _ => {}
                    }
                    if f.cardinality() == 0 {
                        return Err(Error::Schema(format!("nominal `{}` has no levels", f.name)));
                    }
                }
                _ => {
                    if f.encoding.is_some() || !f.levels.is_empty() {
                        return Err(Error::Schema(format!(
                            "`{}` is not nominal but declares levels or an encoding",
                            f.name
                        )));
                    }
                    if f.cyclical.is_some() && f.kind != FeatureKind::Continuous {
                        return Err(Error::Schema(format!(
                            "cyclical feature `{}` must be continuous",
                            f.name
                        )));
                    }
                }
            }
        }
        if self.channels.len() != CHANNEL_COUNT {
            return Err(Error::Schema(format!(
                "expected {CHANNEL_COUNT} channels, found {}",
                self.channels.len()
            )));
        }
        let mut names = HashSet::new();
        for c in &self.channels {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate channel `{}`", c.name)));
            }
            let (lo, hi) = c.valid_range;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Schema(format!("channel `{}` has invalid range", c.name)));
            }
        }
        if self.outcomes.len() != OUTCOME_COUNT {
            return Err(Error::Schema(format!(
                "expected {OUTCOME_COUNT} outcomes, found {}",
                self.outcomes.len()
            )));
        }
        let mut outcomes = HashSet::new();
        for o in &self.outcomes {
            if !outcomes.insert(o.as_str()) {
                return Err(Error::Schema(format!("duplicate outcome `{o}`")));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form; checkpoints and preprocessor
    /// states record it to detect schema drift.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn outcome_index(&self, name: &str) -> Option<usize> {
        self.outcomes.iter().position(|o| o == name)
    }

    /// Continuous and binary features, in declaration order.
    pub fn numeric_features(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features.iter().filter(|f| f.is_numeric())
    }

    pub fn onehot_features(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features
            .iter()
            .filter(|f| f.encoding == Some(NominalEncoding::Onehot))
    }

    pub fn embedded_features(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features
            .iter()
            .filter(|f| f.encoding == Some(NominalEncoding::Embedded))
    }

    pub fn numeric_count(&self) -> usize {
        self.numeric_features().count()
    }

    pub fn onehot_width(&self) -> usize {
        self.onehot_features().map(|f| f.levels.len()).sum()
    }

    /// Values and masks of every continuous/binary feature, then the one-hot
    /// blocks.
    pub fn numeric_width(&self) -> usize {
        2 * self.numeric_count() + self.onehot_width()
    }

    pub fn series_width(&self) -> usize {
        2 * self.channels.len()
    }

    /// Column labels of the numeric static vector, in encoding order.
    pub fn numeric_column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.numeric_features().map(|f| f.name.clone()).collect();
        names.extend(self.numeric_features().map(|f| format!("{}:observed", f.name)));
        for f in self.onehot_features() {
            names.extend(f.levels.iter().map(|l| format!("{}={l}", f.name)));
        }
        names
    }
}

pub fn load_schema(path: &Path) -> Result<FeatureSchema> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FeatureSchema::from_json_str(&text)
}

/// Sizes used to build a schema of the default shape, possibly smaller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaDims {
    /// Continuous features including the four cyclical admission features.
    pub continuous: usize,
    pub binary: usize,
    pub onehot: usize,
    /// Level counts of the embedded nominals (missing level not included).
    pub embedded: Vec<usize>,
}

impl Default for SchemaDims {
    fn default() -> Self {
        SchemaDims {
            continuous: 88,
            binary: 32,
            onehot: 12,
            embedded: vec![1908, 311, 64, 2126],
        }
    }
}

const BASE_CONTINUOUS: [&str; 8] = [
    "age",
    "bmi",
    "distance_to_hospital_km",
    "neighborhood_median_income",
    "neighborhood_pct_below_poverty",
    "neighborhood_pct_rural",
    "neighborhood_population_density",
    "charlson_comorbidity_index",
];

const LABS: [&str; 19] = [
    "hemoglobin",
    "serum_glucose",
    "bun",
    "serum_creatinine",
    "serum_calcium",
    "serum_sodium",
    "serum_potassium",
    "serum_chloride",
    "serum_co2",
    "wbc",
    "mch",
    "mchc",
    "rdw",
    "platelets",
    "egfr",
    "bun_creatinine_ratio",
    "albumin",
    "inr",
    "lactate",
];

const LAB_STATS: [&str; 4] = [
    "min_past_week",
    "max_past_week",
    "count_past_week",
    "variance_past_week",
];

const BINARY: [&str; 32] = [
    "gender_male",
    "ethnicity_hispanic",
    "rural_area",
    "admission_source_transfer",
    "admission_emergent",
    "admitting_service_surgery",
    "night_admission",
    "postop_location_icu",
    "trauma_room",
    "myocardial_infarction",
    "congestive_heart_failure",
    "peripheral_vascular_disease",
    "cerebrovascular_disease",
    "chronic_pulmonary_disease",
    "diabetes",
    "cancer",
    "liver_disease",
    "valvular_disease",
    "coagulopathy",
    "weight_loss",
    "alcohol_drug_abuse",
    "betablockers",
    "diuretics",
    "statins",
    "aspirin",
    "ace_inhibitors",
    "pressors_inotropes",
    "bicarbonate",
    "antiemetics",
    "aminoglycosides",
    "vancomycin",
    "nsaids",
];

const SEVERITY: [&str; 4] = ["negative", "trace", "positive", "strongly_positive"];

fn onehot_catalog() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        ("race", vec!["white", "black", "other"]),
        ("marital_status", vec!["married", "single", "divorced_widowed"]),
        (
            "primary_insurance",
            vec!["medicare", "medicaid", "private", "uninsured"],
        ),
        ("smoking", vec!["Never", "Former", "Current"]),
        ("urine_protein", SEVERITY.to_vec()),
        ("urine_hemoglobin", SEVERITY.to_vec()),
        ("urine_glucose", SEVERITY[..3].to_vec()),
        ("urine_erythrocytes", SEVERITY.to_vec()),
        (
            "surgery_type",
            vec![
                "cardiothoracic",
                "general",
                "gynecologic",
                "neurosurgery",
                "orthopedic",
                "otolaryngology",
                "plastic",
                "urology",
                "vascular",
            ],
        ),
        ("anesthesia_type", vec!["general", "regional"]),
        ("case_priority", vec!["elective", "urgent"]),
        ("scheduled_day_part", vec!["morning", "afternoon"]),
    ]
}

const EMBEDDED: [(&str, &str); 4] = [
    ("zip_code", "zip"),
    ("attending_surgeon", "surgeon"),
    ("scheduled_room", "room"),
    ("primary_procedure", "proc"),
];

pub fn default_channels() -> Vec<ChannelSpec> {
    let ch = |name: &str, lo: f64, hi: f64, gap_fill: GapFill| ChannelSpec {
        name: name.to_string(),
        valid_range: (lo, hi),
        gap_fill,
    };
    use GapFill::{Interpolate, Zero};
    vec![
        ch("systolic_bp", 40.0, 250.0, Interpolate),
        ch("diastolic_bp", 20.0, 150.0, Interpolate),
        ch("etco2", 10.0, 80.0, Interpolate),
        ch("fio2", 21.0, 100.0, Interpolate),
        ch("heart_rate", 30.0, 200.0, Interpolate),
        ch("mac", 0.0, 3.0, Interpolate),
        ch("o2_flow", 0.0, 15.0, Interpolate),
        ch("peep", 0.0, 25.0, Interpolate),
        ch("pip", 5.0, 60.0, Interpolate),
        ch("resp_rate", 4.0, 40.0, Interpolate),
        ch("spo2", 50.0, 100.0, Interpolate),
        ch("temperature", 32.0, 42.0, Interpolate),
        ch("urine_output", 0.0, 2000.0, Zero),
        ch("blood_loss", 0.0, 5000.0, Zero),
    ]
}

pub fn default_outcomes() -> Vec<String> {
    [
        "prolonged_icu_stay",
        "prolonged_mechanical_ventilation",
        "sepsis",
        "acute_kidney_injury",
        "neurological_complications",
        "venous_thromboembolism",
        "cardiovascular_complications",
        "wound_complications",
        "in_hospital_mortality",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// A schema with the default feature catalogue truncated or extended to
/// `dims`. Names past the end of the catalogue are generic.
pub fn schema_with_dims(dims: &SchemaDims) -> Result<FeatureSchema> {
    if dims.continuous < 4 {
        return Err(Error::Config(
            "at least 4 continuous features (the cyclical admission features) are required".into(),
        ));
    }
    if dims.onehot > onehot_catalog().len() || dims.embedded.len() > EMBEDDED.len() {
        return Err(Error::Config(format!(
            "at most {} one-hot and {} embedded nominals are supported",
            onehot_catalog().len(),
            EMBEDDED.len()
        )));
    }
    let mut plain: Vec<String> = BASE_CONTINUOUS.iter().map(|s| s.to_string()).collect();
    for lab in LABS {
        for stat in LAB_STATS {
            plain.push(format!("{lab}_{stat}"));
        }
    }
    let n_plain = dims.continuous - 4;
    let mut features: Vec<FeatureSpec> = (0..n_plain)
        .map(|i| match plain.get(i) {
            Some(name) => FeatureSpec::continuous(name),
            None => FeatureSpec::continuous(&format!("continuous_{i:03}")),
        })
        .collect();
    use CyclicalComponent::{Cos, Sin};
    use CyclicalPeriod::{Month, Weekday};
    features.push(FeatureSpec::cyclical("admit_weekday_sin", Weekday, Sin));
    features.push(FeatureSpec::cyclical("admit_weekday_cos", Weekday, Cos));
    features.push(FeatureSpec::cyclical("admit_month_sin", Month, Sin));
    features.push(FeatureSpec::cyclical("admit_month_cos", Month, Cos));
    features.extend((0..dims.binary).map(|i| match BINARY.get(i) {
        Some(name) => FeatureSpec::binary(name),
        None => FeatureSpec::binary(&format!("binary_{i:03}")),
    }));
    for (name, levels) in onehot_catalog().into_iter().take(dims.onehot) {
        features.push(FeatureSpec::nominal(name, &levels));
    }
    for (&(name, prefix), &card) in EMBEDDED.iter().zip(&dims.embedded) {
        if card < EMBEDDING_CARDINALITY {
            return Err(Error::Config(format!(
                "embedded nominal `{name}` needs at least {EMBEDDING_CARDINALITY} levels"
            )));
        }
        let levels: Vec<String> = (0..card).map(|i| format!("{prefix}_{i:04}")).collect();
        features.push(FeatureSpec::nominal(name, &levels));
    }
    FeatureSchema::new(features, default_channels(), default_outcomes())
}

/// The perioperative schema shipped with the project: 88 continuous,
/// 32 binary, 12 one-hot and 4 embedded nominals, 14 channels, 9 outcomes.
pub fn default_schema() -> FeatureSchema {
    schema_with_dims(&SchemaDims::default()).expect("default schema is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_feature(extra: FeatureSpec) -> Result<FeatureSchema> {
        let mut features = vec![FeatureSpec::continuous("age")];
        features.push(extra);
        FeatureSchema::new(features, default_channels(), default_outcomes())
    }

    #[test]
    fn small_nominal_must_be_onehot() {
        let mut race = FeatureSpec::nominal("race", &["white", "black", "other"]);
        assert_eq!(race.encoding, Some(NominalEncoding::Onehot));
        assert!(with_feature(race.clone()).is_ok());
        race.encoding = Some(NominalEncoding::Embedded);
        let err = with_feature(race).unwrap_err();
        assert!(err.to_string().contains("Onehot"), "{err}");
    }

    #[test]
    fn large_nominal_must_be_embedded() {
        let levels: Vec<String> = (0..1908).map(|i| format!("z{i}")).collect();
        let mut zip = FeatureSpec::nominal("zip_code", &levels);
        assert_eq!(zip.encoding, Some(NominalEncoding::Embedded));
        assert!(with_feature(zip.clone()).is_ok());
        zip.encoding = Some(NominalEncoding::Onehot);
        assert!(matches!(with_feature(zip), Err(Error::Schema(_))));
    }

    #[test]
    fn missing_outcome_is_rejected() {
        let mut outcomes = default_outcomes();
        outcomes.pop();
        let err = FeatureSchema::new(vec![], default_channels(), outcomes).unwrap_err();
        assert!(err.to_string().contains("9 outcomes"));
    }

    #[test]
    fn duplicate_feature_is_rejected() {
        let err = with_feature(FeatureSpec::binary("age")).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn channel_count_is_enforced() {
        let mut channels = default_channels();
        channels.pop();
        assert!(FeatureSchema::new(vec![], channels, default_outcomes()).is_err());
    }

    #[test]
    fn missing_level_is_appended_once() {
        let schema = with_feature(FeatureSpec::nominal("smoking", &["Never", "Former", "Current"]))
            .unwrap();
        let f = schema.feature("smoking").unwrap();
        assert_eq!(f.levels, ["Never", "Former", "Current", "missing"]);
        let again = FeatureSchema::from_json_str(&schema.to_json_string()).unwrap();
        assert_eq!(again, schema);
        assert_eq!(again.hash(), schema.hash());
    }

    #[test]
    fn default_schema_shape() {
        let s = default_schema();
        assert_eq!(s.features.iter().filter(|f| f.kind == FeatureKind::Continuous).count(), 88);
        assert_eq!(s.features.iter().filter(|f| f.kind == FeatureKind::Binary).count(), 32);
        assert_eq!(s.onehot_features().count(), 12);
        assert_eq!(s.embedded_features().count(), 4);
        assert_eq!(s.numeric_count(), 120);
        assert_eq!(s.onehot_width(), 55);
        assert_eq!(s.numeric_width(), 295);
        assert_eq!(s.series_width(), 28);
        assert_eq!(s.numeric_column_names().len(), 295);
        let zip = s.feature("zip_code").unwrap();
        assert_eq!(zip.cardinality(), 1908);
        assert_eq!(zip.levels.len(), 1909);
    }
}
