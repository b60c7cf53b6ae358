//! Pieces shared by the commands: splits, predictors and prediction files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use riskseq_core::baseline::LogisticModel;
use riskseq_core::cohort::{cutoff_for_fraction, format_timestamp, parse_timestamp, split_chronological, Cohort};
use riskseq_core::error::{Error, Result};
use riskseq_core::model::{Mode, Model, Phase, CHECKPOINT_MAGIC};
use riskseq_core::preprocess::PreprocessorState;

use crate::cli::{SplitArgs, SplitName};

pub const PREPROCESSOR_FILE: &str = "preprocessor.json";
pub const SPLIT_FILE: &str = "split.json";
pub const HISTORY_FILE: &str = "history.json";

/// `split.json`: the development/validation boundary a model was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRecord {
    pub cutoff: String,
    pub validation_fraction: Option<f64>,
    pub development: usize,
    pub validation: usize,
}

impl SplitRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn apply(&self, cohort: &Cohort) -> Result<(Cohort, Cohort)> {
        Ok(split_chronological(cohort, parse_timestamp(&self.cutoff)?))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

/// Splits by an explicit cutoff or by the latest validation fraction.
pub fn split(cohort: &Cohort, args: &SplitArgs) -> Result<(Cohort, Cohort, SplitRecord)> {
    let (cutoff, fraction) = match &args.cutoff {
        Some(text) => (parse_timestamp(text)?, None),
        None => (cutoff_for_fraction(cohort, args.validation_fraction)?, Some(args.validation_fraction)),
    };
    let (dev, val) = split_chronological(cohort, cutoff);
    if dev.is_empty() {
        return Err(Error::Data("the development split is empty".into()));
    }
    let record = SplitRecord {
        cutoff: format_timestamp(&cutoff),
        validation_fraction: fraction,
        development: dev.len(),
        validation: val.len(),
    };
    Ok((dev, val, record))
}

pub fn sibling(path: &Path, name: &str) -> PathBuf {
    parent_dir(path).join(name)
}

pub fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    let dir = parent_dir(path);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))
}

/// Parses `multitask` or `single:OUTCOME`.
pub fn parse_task_mode(text: &str, outcomes: &[String]) -> Result<Mode> {
    match text.split_once(':') {
        None if text == "multitask" => Ok(Mode::Multitask),
        Some(("single", name)) => outcomes
            .iter()
            .position(|o| o == name)
            .map(Mode::Single)
            .ok_or_else(|| Error::Config(format!("unknown outcome `{name}` (known: {})", outcomes.join(", ")))),
        _ => Err(Error::Config(format!("task mode `{text}` must be `multitask` or `single:OUTCOME`"))),
    }
}

pub fn mode_label(mode: Mode, outcomes: &[String]) -> String {
    match mode {
        Mode::Multitask => "multitask".into(),
        Mode::Single(k) => format!("single:{}", outcomes[k]),
    }
}

/// Checks that a cohort carries what a phase reads.
pub fn require_inputs(cohort: &Cohort, data: &Path, phase: Phase) -> Result<()> {
    if phase.uses_series() && !data.join("series.csv").exists() {
        return Err(Error::Data(format!(
            "the {phase} phase needs intraoperative series but {} has no series.csv; add it or train with --phase preop",
            data.display()
        )));
    }
    if phase.uses_series() && cohort.encounters.iter().all(|e| e.series.is_empty()) {
        return Err(Error::Data(format!("the {phase} phase needs intraoperative series but series.csv is empty")));
    }
    Ok(())
}

/// A fitted network or logistic baseline.
#[derive(Debug, Clone)]
pub enum Predictor {
    Deep(Model),
    Logistic(LogisticModel),
}

impl Predictor {
    /// Loads a checkpoint or baseline file, checking it matches `cohort`'s schema.
    pub fn load(path: &Path, cohort: &Cohort) -> Result<Self> {
        let mut head = [0u8; 8];
        let is_checkpoint = std::fs::File::open(path)
            .and_then(|mut f| std::io::Read::read_exact(&mut f, &mut head))
            .is_ok()
            && &head == CHECKPOINT_MAGIC;
        if is_checkpoint {
            return Ok(Predictor::Deep(Model::load_for(path, &cohort.schema)?));
        }
        let baseline = LogisticModel::load(path)?;
        if baseline.schema_hash != cohort.schema.hash() {
            return Err(Error::Schema(format!("{} was fitted on a different schema", path.display())));
        }
        Ok(Predictor::Logistic(baseline))
    }

    pub fn phase(&self) -> Phase {
        match self {
            Predictor::Deep(m) => m.phase(),
            Predictor::Logistic(b) => b.layout.phase,
        }
    }

    pub fn task_names(&self) -> Vec<String> {
        match self {
            Predictor::Deep(m) => m.task_names.clone(),
            Predictor::Logistic(b) => b.tasks.iter().map(|t| t.name.clone()).collect(),
        }
    }

    pub fn default_name(&self, outcomes: &[String]) -> String {
        match self {
            Predictor::Deep(m) => format!("{}_{}", m.phase(), mode_label(m.config.mode, outcomes)),
            Predictor::Logistic(b) => format!("{}_logistic", b.layout.phase),
        }
    }

    /// Probabilities per encounter, one column per task.
    pub fn predict(&self, cohort: &Cohort, pre: &PreprocessorState) -> Result<Vec<Vec<f64>>> {
        match self {
            Predictor::Deep(m) => predict_deep(m, cohort, pre),
            Predictor::Logistic(b) => b.predict_cohort(cohort, pre),
        }
    }
}

pub fn predict_deep(model: &Model, cohort: &Cohort, pre: &PreprocessorState) -> Result<Vec<Vec<f64>>> {
    let encoded = pre.encode_cohort(cohort)?;
    encoded.par_iter().map(|e| Ok(model.predict(e)?.probs)).collect()
}

/// Labels of `cohort` for `tasks`, per encounter.
pub fn labels_for(cohort: &Cohort, tasks: &[String]) -> Result<Vec<Vec<u8>>> {
    let idx = tasks
        .iter()
        .map(|t| {
            cohort
                .schema
                .outcome_index(t)
                .ok_or_else(|| Error::Schema(format!("outcome `{t}` is not in the cohort schema")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cohort.encounters.iter().map(|e| idx.iter().map(|&k| e.outcomes[k]).collect()).collect())
}

pub fn select_split(cohort: &Cohort, model_path: &Path, which: SplitName) -> Result<Cohort> {
    if which == SplitName::All {
        return Ok(cohort.clone());
    }
    let path = sibling(model_path, SPLIT_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; it records the development/validation boundary (use --split all to score every encounter)",
            path.display()
        )));
    }
    let (dev, val) = SplitRecord::load(&path)?.apply(cohort)?;
    Ok(if which == SplitName::Development { dev } else { val })
}

/// Columns of a prediction or label file keyed by outcome name.
#[derive(Debug, Clone, PartialEq)]
pub struct Table<T> {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<T>>,
}

impl<T: Copy> Table<T> {
    pub fn column(&self, name: &str) -> Option<Vec<T>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Rows reordered to follow `ids`.
    pub fn aligned(&self, ids: &[String], what: &str) -> Result<Table<T>> {
        let index: BTreeMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.rows[i].clone())
                    .ok_or_else(|| Error::Data(format!("{what} has no row for encounter `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Table { ids: ids.to_vec(), columns: self.columns.clone(), rows })
    }
}

pub fn write_predictions(path: &Path, ids: &[String], tasks: &[String], probs: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["encounter_id".to_string()];
    header.extend(tasks.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(probs) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_table<T>(path: &Path, parse: impl Fn(&str) -> Option<T>) -> Result<Table<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("encounter_id") {
        return Err(Error::Data(format!("{}: first column must be encounter_id", path.display())));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let (mut ids, mut rows) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| {
                parse(v).ok_or_else(|| {
                    Error::Data(format!("{}: row {}: invalid value `{v}`", path.display(), line + 2))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { ids, columns, rows })
}

pub fn read_predictions(path: &Path) -> Result<Table<f64>> {
    read_table(path, |v| v.parse::<f64>().ok().filter(|p| (0.0..=1.0).contains(p)))
}

pub fn read_labels(path: &Path) -> Result<Table<u8>> {
    read_table(path, |v| match v {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    })
}
