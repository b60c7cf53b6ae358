//! Cohort files: `static.csv`, `series.csv` and `outcomes.csv` alongside a
//! `schema.json`, plus the chronological development/validation split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};
use crate::schema::{FeatureKind, FeatureSchema, MISSING_LEVEL};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq)]
pub enum StaticValue {
    Number(f64),
    Level(String),
}

/// One intraoperative measurement, `minute` minutes after anesthesia start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub minute: u32,
    /// Index into the schema's channel list.
    pub channel: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEncounter {
    pub encounter_id: String,
    pub admit_timestamp: NaiveDateTime,
    /// Absent keys are missing values.
    pub static_values: BTreeMap<String, StaticValue>,
    /// Measurements in input-file row order.
    pub series: Vec<SeriesPoint>,
    pub outcomes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub schema: FeatureSchema,
    pub encounters: Vec<RawEncounter>,
    /// Nominal cells whose level was not declared and became `missing`.
    pub unknown_levels: usize,
}

impl Cohort {
    pub fn new(schema: FeatureSchema, encounters: Vec<RawEncounter>) -> Result<Self> {
        let mut ids = HashSet::new();
        for e in &encounters {
            if !ids.insert(e.encounter_id.as_str()) {
                return Err(Error::Data(format!(
                    "duplicate encounter id `{}`",
                    e.encounter_id
                )));
            }
            if e.outcomes.len() != schema.outcomes.len() || e.outcomes.iter().any(|&y| y > 1) {
                return Err(Error::Data(format!(
                    "encounter `{}` must carry {} binary outcomes",
                    e.encounter_id,
                    schema.outcomes.len()
                )));
            }
        }
        Ok(Cohort {
            schema,
            encounters,
            unknown_levels: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.encounters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encounters.is_empty()
    }

    /// Labels of one outcome across the cohort.
    pub fn labels(&self, outcome: usize) -> Vec<u8> {
        self.encounters.iter().map(|e| e.outcomes[outcome]).collect()
    }

    fn subset(&self, encounters: Vec<RawEncounter>) -> Cohort {
        Cohort {
            schema: self.schema.clone(),
            encounters,
            unknown_levels: 0,
        }
    }
}

pub fn parse_timestamp(text: &str) -> Result<NaiveDateTime> {
    let text = text.trim();
    if let Ok(t) = NaiveDateTime::parse_from_str(text, TIMESTAMP_FORMAT) {
        return Ok(t);
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S") {
        return Ok(t);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.naive_utc());
    }
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight exists"));
    }
    Err(Error::Data(format!("unparseable timestamp `{text}`")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_number(text: &str, what: &str) -> Result<f64> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Data(format!("{what}: `{text}` is not a finite number")))
}

/// Loads a cohort. `series_path` may be `None` when no intraoperative data
/// exists; every encounter then has an empty series.
pub fn load_cohort(
    schema: &FeatureSchema,
    static_path: &Path,
    series_path: Option<&Path>,
    outcomes_path: &Path,
) -> Result<Cohort> {
    let mut rdr = reader(static_path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("encounter_id") || headers.get(1) != Some("admit_timestamp") {
        return Err(Error::Data(format!(
            "{}: header must start with encounter_id,admit_timestamp",
            static_path.display()
        )));
    }
    let column: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut feature_columns = Vec::new();
    for f in &schema.features {
        if f.cyclical.is_some() {
            continue;
        }
        match column.get(f.name.as_str()) {
            Some(&i) => feature_columns.push((f, i)),
            None => log::warn!(
                "{}: no column for feature `{}`; treating it as missing",
                static_path.display(),
                f.name
            ),
        }
    }

    let mut encounters = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut unknown_levels = 0usize;
    for row in rdr.records() {
        let row = row?;
        let id = row.get(0).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(Error::Data("empty encounter_id in static file".into()));
        }
        let admit_timestamp = parse_timestamp(row.get(1).unwrap_or_default())?;
        let mut static_values = BTreeMap::new();
        for &(f, i) in &feature_columns {
            let cell = row.get(i).unwrap_or_default();
            if cell.is_empty() {
                continue;
            }
            let value = match f.kind {
                FeatureKind::Continuous => {
                    StaticValue::Number(parse_number(cell, &format!("{id}/{}", f.name))?)
                }
                FeatureKind::Binary => {
                    let v = parse_number(cell, &format!("{id}/{}", f.name))?;
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Data(format!(
                            "{id}/{}: binary feature value `{cell}` is not 0 or 1",
                            f.name
                        )));
                    }
                    StaticValue::Number(v)
                }
                FeatureKind::Nominal => {
                    if f.levels.iter().any(|l| l == cell) {
                        StaticValue::Level(cell.to_string())
                    } else {
                        unknown_levels += 1;
                        StaticValue::Level(MISSING_LEVEL.to_string())
                    }
                }
            };
            static_values.insert(f.name.clone(), value);
        }
        if index_of.insert(id.clone(), encounters.len()).is_some() {
            return Err(Error::Data(format!("duplicate encounter id `{id}`")));
        }
        encounters.push(RawEncounter {
            encounter_id: id,
            admit_timestamp,
            static_values,
            series: Vec::new(),
            outcomes: Vec::new(),
        });
    }
    if unknown_levels > 0 {
        log::warn!("{unknown_levels} nominal values had undeclared levels and were mapped to `{MISSING_LEVEL}`");
    }

    if let Some(series_path) = series_path {
        let mut rdr = reader(series_path)?;
        let headers = rdr.headers()?.clone();
        let expected = ["encounter_id", "minute", "channel", "value"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Data(format!(
                "{}: header must be encounter_id,minute,channel,value",
                series_path.display()
            )));
        }
        for row in rdr.records() {
            let row = row?;
            let id = &row[0];
            let &idx = index_of.get(id).ok_or_else(|| {
                Error::Data(format!("series row for unknown encounter `{id}`"))
            })?;
            let minute: i64 = row[1]
                .parse()
                .map_err(|_| Error::Data(format!("{id}: minute `{}` is not an integer", &row[1])))?;
            if minute < 0 {
                return Err(Error::Data(format!("{id}: negative minute offset {minute}")));
            }
            let minute = u32::try_from(minute)
                .map_err(|_| Error::Data(format!("{id}: minute offset {minute} too large")))?;
            let channel = schema
                .channel_index(&row[2])
                .ok_or_else(|| Error::Data(format!("{id}: unknown channel `{}`", &row[2])))?;
            let value = parse_number(&row[3], &format!("{id}/{}", &row[2]))?;
            encounters[idx].series.push(SeriesPoint {
                minute,
                channel,
                value,
            });
        }
    }

    let mut rdr = reader(outcomes_path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("encounter_id") {
        return Err(Error::Data(format!(
            "{}: header must start with encounter_id",
            outcomes_path.display()
        )));
    }
    let mut outcome_cols = Vec::with_capacity(schema.outcomes.len());
    for name in &schema.outcomes {
        let col = headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!("{}: no column for outcome `{name}`", outcomes_path.display()))
        })?;
        outcome_cols.push(col);
    }
    let mut seen = vec![false; encounters.len()];
    for row in rdr.records() {
        let row = row?;
        let id = &row[0];
        let &idx = index_of
            .get(id)
            .ok_or_else(|| Error::Data(format!("outcome row for encounter `{id}` not in static file")))?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::Data(format!("duplicate outcome row for `{id}`")));
        }
        let mut labels = Vec::with_capacity(outcome_cols.len());
        for (&col, name) in outcome_cols.iter().zip(&schema.outcomes) {
            labels.push(match row.get(col).unwrap_or_default() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Data(format!(
                        "{id}/{name}: outcome value `{other}` is not 0 or 1"
                    )))
                }
            });
        }
        encounters[idx].outcomes = labels;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!(
            "encounter `{}` has no outcome row",
            encounters[i].encounter_id
        )));
    }

    let mut cohort = Cohort::new(schema.clone(), encounters)?;
    cohort.unknown_levels = unknown_levels;
    Ok(cohort)
}

/// Loads `schema.json`, `static.csv`, `series.csv` (optional) and
/// `outcomes.csv` from one directory.
pub fn load_cohort_dir(dir: &Path) -> Result<Cohort> {
    let schema = crate::schema::load_schema(&dir.join("schema.json"))?;
    let series = dir.join("series.csv");
    load_cohort(
        &schema,
        &dir.join("static.csv"),
        series.exists().then_some(series.as_path()),
        &dir.join("outcomes.csv"),
    )
}

/// Writes the four cohort files into `dir`. Reloading yields the same cohort.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = &cohort.schema;
    let schema_path = dir.join("schema.json");
    std::fs::write(&schema_path, schema.to_json_string()).map_err(|e| Error::io(&schema_path, e))?;

    let file_columns: Vec<_> = schema.features.iter().filter(|f| f.cyclical.is_none()).collect();
    let path = dir.join("static.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["encounter_id".to_string(), "admit_timestamp".to_string()];
    header.extend(file_columns.iter().map(|f| f.name.clone()));
    w.write_record(&header)?;
    for e in &cohort.encounters {
        let mut row = vec![e.encounter_id.clone(), format_timestamp(&e.admit_timestamp)];
        for f in &file_columns {
            row.push(match e.static_values.get(&f.name) {
                None => String::new(),
                Some(StaticValue::Number(v)) => v.to_string(),
                Some(StaticValue::Level(l)) => l.clone(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("series.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["encounter_id", "minute", "channel", "value"])?;
    for e in &cohort.encounters {
        for p in &e.series {
            w.write_record([
                e.encounter_id.as_str(),
                &p.minute.to_string(),
                &schema.channels[p.channel].name,
                &p.value.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("outcomes.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["encounter_id".to_string()];
    header.extend(schema.outcomes.iter().cloned());
    w.write_record(&header)?;
    for e in &cohort.encounters {
        let mut row = vec![e.encounter_id.clone()];
        row.extend(e.outcomes.iter().map(|y| y.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Encounters admitted strictly before `cutoff` form the development
/// cohort; the rest (including those exactly at the cutoff) the validation
/// cohort. File order is preserved on both sides.
pub fn split_chronological(cohort: &Cohort, cutoff: NaiveDateTime) -> (Cohort, Cohort) {
    let (dev, val): (Vec<_>, Vec<_>) = cohort
        .encounters
        .iter()
        .cloned()
        .partition(|e| e.admit_timestamp < cutoff);
    (cohort.subset(dev), cohort.subset(val))
}

/// The cutoff that places roughly `validation_fraction` of the encounters
/// (the latest ones) in validation.
pub fn cutoff_for_fraction(cohort: &Cohort, validation_fraction: f64) -> Result<NaiveDateTime> {
    if cohort.is_empty() {
        return Err(Error::Data("cannot split an empty cohort".into()));
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::Config(format!(
            "validation fraction {validation_fraction} outside [0, 1)"
        )));
    }
    let mut times: Vec<NaiveDateTime> = cohort.encounters.iter().map(|e| e.admit_timestamp).collect();
    times.sort();
    let n_dev = ((1.0 - validation_fraction) * times.len() as f64).round() as usize;
    Ok(match times.get(n_dev) {
        Some(&t) => t,
        None => *times.last().unwrap() + chrono::Duration::seconds(1),
    })
}
