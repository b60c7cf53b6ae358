//! The phase x task-mode grid of deep models and logistic baselines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use riskseq_core::baseline::{BaselineConfig, LogisticModel};
use riskseq_core::cohort::Cohort;
use riskseq_core::error::{Error, Result};
use riskseq_core::evaluation::{evaluate_model, nri, MetricEntry, MetricsReport, NriReport, OutcomeNri, METRIC_NAMES};
use riskseq_core::model::{Mode, Model, Phase};
use riskseq_core::preprocess::PreprocessorState;
use riskseq_core::training::{train, TrainConfig, TrainHistory};

use crate::pipeline::{predict_deep, write_json, write_predictions, SplitRecord, HISTORY_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Synthetic recipe used when no cohort is supplied.
    pub preset: String,
    /// Overrides the recipe's encounter count.
    pub n: Option<usize>,
    /// Overrides the recipe's seed.
    pub synth_seed: Option<u64>,
    pub validation_fraction: f64,
    pub bootstrap: usize,
    /// Bootstrap seed.
    pub seed: u64,
    /// Phase and mode are set per grid cell.
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: "default".into(),
            n: None,
            synth_seed: None,
            validation_fraction: 0.2,
            bootstrap: 1000,
            seed: 0,
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

/// Trains one network for `phase` and `mode` on the development cohort.
pub fn train_deep(
    dev: &Cohort,
    pre: &PreprocessorState,
    cfg: &TrainConfig,
    phase: Phase,
    mode: Mode,
) -> Result<(Model, TrainHistory)> {
    let mut cfg = cfg.clone();
    cfg.model.phase = phase;
    cfg.model.mode = mode;
    let (model, history) = train(dev, pre, &cfg)?;
    Ok((model, history.without_timing()))
}

/// The model as it reads back from its checkpoint, so in-process scores
/// match those of a later `evaluate`.
pub fn as_stored(model: &Model) -> Result<Model> {
    Model::from_bytes(&model.to_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Multitask,
    SingleTask,
    Logistic,
}

impl GridKind {
    pub fn label(self) -> &'static str {
        match self {
            GridKind::Multitask => "multitask",
            GridKind::SingleTask => "single",
            GridKind::Logistic => "logistic",
        }
    }
}

/// Validation probabilities of one grid cell, columns in schema outcome order.
#[derive(Debug, Clone)]
pub struct GridModel {
    pub name: String,
    pub phase: Phase,
    pub kind: GridKind,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub models: Vec<GridModel>,
    pub metrics: MetricsReport,
    pub nri: Option<NriReport>,
    pub outputs: Vec<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains and evaluates every cell for `phases`, writing models, predictions,
/// metrics.json, table2.csv, table2.md and (when both are present) nri.json
/// of the postoperative over the preoperative multitask model.
pub fn run_grid(
    dev: &Cohort,
    val: &Cohort,
    split: &SplitRecord,
    phases: &[Phase],
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<GridResult> {
    if val.is_empty() {
        return Err(Error::Data("the validation split is empty".into()));
    }
    create_dir(out)?;
    let outcomes = dev.schema.outcomes.clone();
    let mut outputs = Vec::new();
    let pre = PreprocessorState::fit(dev, &dev.schema)?;
    let pre_path = out.join("preprocessor.json");
    pre.save(&pre_path)?;
    let split_path = out.join("split.json");
    split.save(&split_path)?;
    outputs.extend([pre_path, split_path]);

    let mut models = Vec::new();
    for &phase in phases {
        let name = format!("{phase}_multitask");
        log::info!("training {name}");
        let dir = out.join("models").join(&name);
        create_dir(&dir)?;
        let (model, history) = train_deep(dev, &pre, &cfg.train, phase, Mode::Multitask)?;
        outputs.extend(save_deep(&model, &history, &dir)?);
        let probs = predict_deep(&as_stored(&model)?, val, &pre)?;
        models.push(GridModel { name, phase, kind: GridKind::Multitask, probs });

        let name = format!("{phase}_single");
        let mut columns = Vec::with_capacity(outcomes.len());
        for (k, outcome) in outcomes.iter().enumerate() {
            log::info!("training {name} for {outcome}");
            let dir = out.join("models").join(&name).join(outcome);
            create_dir(&dir)?;
            let (model, history) = train_deep(dev, &pre, &cfg.train, phase, Mode::Single(k))?;
            outputs.extend(save_deep(&model, &history, &dir)?);
            columns.push(predict_deep(&as_stored(&model)?, val, &pre)?);
        }
        let probs = (0..val.len()).map(|i| columns.iter().map(|c| c[i][0]).collect()).collect();
        models.push(GridModel { name, phase, kind: GridKind::SingleTask, probs });

        let name = format!("{phase}_logistic");
        log::info!("fitting {name}");
        let dir = out.join("models").join(&name);
        create_dir(&dir)?;
        let baseline = LogisticModel::fit(dev, phase, &pre, &cfg.baseline)?;
        let path = dir.join("baseline.json");
        baseline.save(&path)?;
        outputs.push(path.clone());
        let probs = LogisticModel::load(&path)?.predict_cohort(val, &pre)?;
        models.push(GridModel { name, phase, kind: GridKind::Logistic, probs });
    }

    let pred_dir = out.join("predictions");
    create_dir(&pred_dir)?;
    let ids: Vec<String> = val.encounters.iter().map(|e| e.encounter_id.clone()).collect();
    let labels: Vec<Vec<u8>> = val.encounters.iter().map(|e| e.outcomes.clone()).collect();
    let mut reports = Vec::new();
    for m in &models {
        let path = pred_dir.join(format!("{}.csv", m.name));
        write_predictions(&path, &ids, &outcomes, &m.probs)?;
        outputs.push(path);
        reports.push(evaluate_model(&m.name, &outcomes, &m.probs, &labels, cfg.bootstrap, cfg.seed)?);
    }
    let metrics = MetricsReport::new(cfg.bootstrap, cfg.seed, reports);
    let path = out.join("metrics.json");
    metrics.save(&path)?;
    outputs.push(path);
    let path = out.join("table2.csv");
    write_table_csv(&path, &metrics)?;
    outputs.push(path);
    let path = out.join("table2.md");
    std::fs::write(&path, table_markdown(&metrics)).map_err(|e| Error::io(&path, e))?;
    outputs.push(path);

    let find = |name: &str| models.iter().position(|m| m.name == name);
    let nri_report = match (find("preop_multitask"), find("postop_multitask")) {
        (Some(a), Some(b)) => {
            let report = reclassification(&models[a], &models[b], &metrics, &outcomes, &labels, cfg)?;
            let path = out.join("nri.json");
            report.save(&path)?;
            outputs.push(path);
            Some(report)
        }
        _ => None,
    };
    Ok(GridResult { models, metrics, nri: nri_report, outputs })
}

fn save_deep(model: &Model, history: &TrainHistory, dir: &Path) -> Result<Vec<PathBuf>> {
    let ckpt = dir.join("model.ckpt");
    model.save(&ckpt)?;
    let hist = dir.join(HISTORY_FILE);
    write_json(&hist, history)?;
    Ok(vec![ckpt, hist])
}

fn reclassification(
    old: &GridModel,
    new: &GridModel,
    metrics: &MetricsReport,
    outcomes: &[String],
    labels: &[Vec<u8>],
    cfg: &ExperimentConfig,
) -> Result<NriReport> {
    let thresholds = |name: &str| -> Result<Vec<f64>> {
        let report = metrics
            .model(name)
            .ok_or_else(|| Error::Data(format!("no metrics for `{name}`")))?;
        Ok(report.outcomes.iter().map(|o| o.threshold_value()).collect())
    };
    let (t_old, t_new) = (thresholds(&old.name)?, thresholds(&new.name)?);
    let mut results = Vec::new();
    for (k, outcome) in outcomes.iter().enumerate() {
        let col = |m: &GridModel| m.probs.iter().map(|p| p[k]).collect::<Vec<_>>();
        let y: Vec<u8> = labels.iter().map(|l| l[k]).collect();
        let computed = nri(&col(old), &col(new), &y, t_old[k], t_new[k], cfg.bootstrap, cfg.seed);
        match skip_undefined(computed)? {
            Some(result) => results.push(OutcomeNri { outcome: outcome.clone(), result }),
            None => log::warn!("NRI is undefined for {outcome}; left out of nri.json"),
        }
    }
    Ok(NriReport {
        format_version: riskseq_core::evaluation::METRICS_FORMAT_VERSION,
        old_model: old.name.clone(),
        new_model: new.name.clone(),
        n_resamples: cfg.bootstrap,
        seed: cfg.seed,
        outcomes: results,
    })
}

/// `None` for a statistic undefined on these labels, other errors unchanged.
pub fn skip_undefined<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn entry_parts(entry: &MetricEntry) -> [String; 3] {
    match entry {
        MetricEntry::Estimate(e) => [
            e.point.to_string(),
            e.ci_lo.map(|v| v.to_string()).unwrap_or_default(),
            e.ci_hi.map(|v| v.to_string()).unwrap_or_default(),
        ],
        MetricEntry::Undefined { undefined } => [format!("undefined:{}", undefined_name(*undefined)), String::new(), String::new()],
    }
}

fn undefined_name(u: riskseq_core::evaluation::Undefined) -> String {
    serde_json::to_value(u)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// One row per outcome and model; point, lower and upper bound per metric.
pub fn write_table_csv(path: &Path, metrics: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["outcome".to_string(), "model".into(), "n".into(), "prevalence".into(), "threshold".into()];
    for m in METRIC_NAMES {
        header.extend([m.to_string(), format!("{m}_ci_lo"), format!("{m}_ci_hi")]);
    }
    w.write_record(&header)?;
    for (k, outcome) in outcome_names(metrics).iter().enumerate() {
        for model in &metrics.models {
            let o = &model.outcomes[k];
            let mut row = vec![
                outcome.clone(),
                model.model.clone(),
                o.n.to_string(),
                o.prevalence.to_string(),
                o.threshold.map(|t| t.to_string()).unwrap_or_else(|| "inf".into()),
            ];
            for (_, entry) in o.entries() {
                row.extend(entry_parts(entry));
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn outcome_names(metrics: &MetricsReport) -> Vec<String> {
    metrics
        .models
        .first()
        .map(|m| m.outcomes.iter().map(|o| o.outcome.clone()).collect())
        .unwrap_or_default()
}

/// The comparison as a Markdown table with 95% intervals.
pub fn table_markdown(metrics: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Validation metrics ({}; {} resamples, seed {}).\n",
        metrics.ci_method, metrics.n_resamples, metrics.seed
    );
    let _ = writeln!(s, "| Outcome | Model | {} |", METRIC_NAMES.map(heading).join(" | "));
    let _ = writeln!(s, "|---|---|{}", "---|".repeat(METRIC_NAMES.len()));
    for (k, outcome) in outcome_names(metrics).iter().enumerate() {
        for model in &metrics.models {
            let cells: Vec<String> = model.outcomes[k].entries().iter().map(|(_, e)| cell(e)).collect();
            let _ = writeln!(s, "| {outcome} | {} | {} |", model.model, cells.join(" | "));
        }
    }
    s
}

fn heading(metric: &str) -> String {
    match metric {
        "ppv" | "npv" | "auprc" | "auroc" => metric.to_uppercase(),
        other => {
            let mut c = other.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
        }
    }
}

fn cell(entry: &MetricEntry) -> String {
    match entry {
        MetricEntry::Estimate(e) => match e.interval() {
            Some((lo, hi)) => format!("{:.3} ({:.3}-{:.3})", e.point, lo, hi),
            None => format!("{:.3}", e.point),
        },
        MetricEntry::Undefined { undefined } => format!("undefined ({})", undefined_name(*undefined)),
    }
}
