//! Class-weighted logistic regression on the same feature sets as the phase
//! models, with the intraoperative series replaced by summary statistics.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::model::Phase;
use crate::numerics::Tensor;
use crate::preprocess::{summarize_series, summary_feature_names, PreprocessorState, SummaryConfig};
use crate::stats;
use crate::training::{class_weights, ClassWeights};

pub const BASELINE_FORMAT_VERSION: u32 = 1;
pub const OTHER_LEVEL: &str = "other";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Embedded-nominal levels seen fewer times than this in the development
    /// cohort share one "other" column.
    pub rare_level_min: usize,
    pub summary: SummaryConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            l2: 1.0,
            tol: 1e-6,
            max_iter: 5000,
            rare_level_min: 5,
            summary: SummaryConfig::default(),
        }
    }
}

/// One-hot columns of an embedded nominal: kept level ids, then "other".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledNominal {
    pub name: String,
    pub kept: Vec<usize>,
}

/// Column layout of a phase's design matrix, fitted on the development cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub phase: Phase,
    pub columns: Vec<String>,
    pub nominals: Vec<PooledNominal>,
    pub summary: SummaryConfig,
    /// Development mean and standard deviation of each summary column.
    pub summary_mean: Vec<f64>,
    pub summary_std: Vec<f64>,
}

impl DesignLayout {
    pub fn fit(dev: &Cohort, phase: Phase, pre: &PreprocessorState, cfg: &BaselineConfig) -> Result<Self> {
        pre.check_schema(&dev.schema)?;
        let schema = &dev.schema;
        let mut columns = Vec::new();
        let mut nominals = Vec::new();
        let (mut summary_mean, mut summary_std) = (Vec::new(), Vec::new());
        if phase.uses_static() {
            columns.extend(schema.numeric_column_names());
            let ids: Vec<Vec<usize>> = dev.encounters.iter().map(|e| pre.encode_static(e, schema).1).collect();
            for (j, (f, map)) in schema.embedded_features().zip(&pre.embedded).enumerate() {
                let mut counts = vec![0usize; map.len()];
                for row in &ids {
                    counts[row[j]] += 1;
                }
                let kept: Vec<usize> = (0..map.len()).filter(|&i| counts[i] >= cfg.rare_level_min).collect();
                columns.extend(kept.iter().map(|&i| format!("{}={}", f.name, f.levels[i])));
                columns.push(format!("{}={OTHER_LEVEL}", f.name));
                nominals.push(PooledNominal { name: f.name.clone(), kept });
            }
        }
        if phase.uses_series() {
            columns.extend(summary_feature_names(schema, &cfg.summary));
            let raw = raw_summaries(dev, pre, &cfg.summary);
            let width = raw.first().map_or(0, Vec::len);
            for c in 0..width {
                let col: Vec<f64> = raw.iter().map(|r| r[c]).collect();
                let (m, s) = stats::mean_std(&col);
                summary_mean.push(m);
                summary_std.push(s);
            }
        }
        Ok(DesignLayout { phase, columns, nominals, summary: cfg.summary.clone(), summary_mean, summary_std })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// The `[N, width]` design matrix of `cohort`, rows in cohort order.
    pub fn matrix(&self, cohort: &Cohort, pre: &PreprocessorState) -> Result<Tensor> {
        pre.check_schema(&cohort.schema)?;
        let schema = &cohort.schema;
        let rows: Vec<Vec<f64>> = cohort
            .encounters
            .par_iter()
            .map(|enc| {
                let mut row = Vec::with_capacity(self.width());
                if self.phase.uses_static() {
                    let (numeric, ids) = pre.encode_static(enc, schema);
                    row.extend(numeric);
                    for (pool, &id) in self.nominals.iter().zip(&ids) {
                        let mut block = vec![0.0; pool.kept.len() + 1];
                        let slot = pool.kept.binary_search(&id).unwrap_or(pool.kept.len());
                        block[slot] = 1.0;
                        row.extend(block);
                    }
                }
                if self.phase.uses_series() {
                    let summary = summarize_encounter(pre, &pre.resample(enc, schema).values, &self.summary);
                    row.extend(summary.iter().enumerate().map(|(c, &v)| {
                        let s = self.summary_std[c];
                        if s > 0.0 {
                            (v - self.summary_mean[c]) / s
                        } else {
                            0.0
                        }
                    }));
                }
                row
            })
            .collect();
        let width = self.width();
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::Shape(format!("design row has {} columns, layout has {width}", bad.len())));
        }
        Tensor::matrix(rows.len(), width, rows.concat())
    }
}

fn summarize_encounter(pre: &PreprocessorState, values: &[Vec<f64>], cfg: &SummaryConfig) -> Vec<f64> {
    let ranges: Vec<(f64, f64)> = pre.channels.iter().map(|c| c.valid_range).collect();
    summarize_series(values, &ranges, cfg)
}

fn raw_summaries(cohort: &Cohort, pre: &PreprocessorState, cfg: &SummaryConfig) -> Vec<Vec<f64>> {
    cohort
        .encounters
        .par_iter()
        .map(|e| summarize_encounter(pre, &pre.resample(e, &cohort.schema).values, cfg))
        .collect()
}

/// Fitted coefficients for one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

impl LogisticFit {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Class-weighted negative log-likelihood plus `l2·‖w‖²/2` (intercept not
/// penalized). `theta` is the coefficients followed by the intercept.
pub fn logistic_objective(x: &Tensor, y: &[u8], w: ClassWeights, l2: f64, theta: &[f64]) -> (f64, Vec<f64>) {
    let d = x.shape()[1];
    let (coef, b) = theta.split_at(d);
    // Compensated summation keeps line-search decreases near the optimum
    // above the objective's rounding error.
    let mut f = Neumaier::default();
    for c in coef {
        f.add(0.5 * l2 * c * c);
    }
    let mut g: Vec<f64> = coef.iter().map(|c| l2 * c).chain([0.0]).collect();
    for (i, &yi) in y.iter().enumerate() {
        let row = x.row(i);
        let z = b[0] + coef.iter().zip(row).map(|(c, v)| c * v).sum::<f64>();
        let (weight, loss, residual) = if yi == 1 {
            (w.w_pos, softplus(-z), sigmoid(z) - 1.0)
        } else {
            (w.w_neg, softplus(z), sigmoid(z))
        };
        f.add(weight * loss);
        let r = weight * residual;
        for (gj, v) in g.iter_mut().zip(row) {
            *gj += r * v;
        }
        g[d] += r;
    }
    (f.total(), g)
}

#[derive(Default)]
struct Neumaier {
    sum: f64,
    compensation: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        self.compensation += if self.sum.abs() >= v.abs() { (self.sum - t) + v } else { (v - t) + self.sum };
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory curvature pairs kept by the solver.
const LBFGS_MEMORY: usize = 10;

/// L-BFGS with Armijo backtracking; converged when the gradient's ∞-norm
/// drops below `tol`.
pub fn fit_logistic(x: &Tensor, y: &[u8], w: ClassWeights, l2: f64, tol: f64, max_iter: usize) -> Result<LogisticFit> {
    if x.rank() != 2 || x.shape()[0] != y.len() {
        return Err(Error::Shape(format!("design {:?} does not match {} labels", x.shape(), y.len())));
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::Data("logistic fit needs both classes".into()));
    }
    let d = x.shape()[1];
    let mut theta = vec![0.0; d + 1];
    let (mut f, mut g) = logistic_objective(x, y, w, l2, &theta);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    while inf_norm(&g) >= tol && iterations < max_iter {
        iterations += 1;
        // Two-loop recursion for the quasi-Newton direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, dy, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(dy).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match pairs.back() {
            Some((s, dy, _)) => dot(s, dy) / dot(dy, dy),
            None => 1.0 / (1.0 + inf_norm(&g)),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, dy, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(dy, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut slope = -dot(&g, &q);
        if slope >= 0.0 {
            pairs.clear();
            q = g.iter().map(|v| v / (1.0 + inf_norm(&g))).collect();
            slope = -dot(&g, &q);
        }
        let mut step = 1.0;
        let (mut next, mut fn_, mut gn);
        let progressed = loop {
            next = theta.iter().zip(&q).map(|(t, qi)| t - step * qi).collect::<Vec<_>>();
            (fn_, gn) = logistic_objective(x, y, w, l2, &next);
            // The objective is convex, so a direction that is still descending
            // at the trial point has decreased it even where the decrease is
            // below the objective's rounding error.
            if fn_.is_finite() && (fn_ <= f + 1e-4 * step * slope || dot(&gn, &q) >= 0.0) {
                break true;
            }
            if step < 1e-20 {
                break false;
            }
            step *= 0.5;
        };
        if !fn_.is_finite() {
            return Err(Error::Numeric("logistic objective became non-finite".into()));
        }
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let dy: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &dy);
        theta = next;
        f = fn_;
        g = gn;
        if !progressed {
            break;
        }
        if sy > 1e-12 * dot(&dy, &dy).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == LBFGS_MEMORY {
                pairs.pop_front();
            }
            pairs.push_back((s, dy, 1.0 / sy));
        }
    }
    let grad_norm = inf_norm(&g);
    let converged = grad_norm < tol;
    if !converged {
        log::warn!("logistic fit stopped after {iterations} iterations with gradient norm {grad_norm:.3e}");
    }
    let intercept = theta.pop().expect("intercept slot");
    Ok(LogisticFit { coef: theta, intercept, iterations, grad_norm, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTask {
    pub name: String,
    pub outcome_index: usize,
    pub class_weights: ClassWeights,
    pub fit: LogisticFit,
}

/// Contents of `baseline.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub format_version: u32,
    pub schema_hash: String,
    pub config: BaselineConfig,
    pub layout: DesignLayout,
    pub tasks: Vec<BaselineTask>,
}

impl LogisticModel {
    /// Fits one regression per outcome on the development cohort.
    pub fn fit(dev: &Cohort, phase: Phase, pre: &PreprocessorState, cfg: &BaselineConfig) -> Result<Self> {
        let layout = DesignLayout::fit(dev, phase, pre, cfg)?;
        let x = layout.matrix(dev, pre)?;
        let tasks = dev
            .schema
            .outcomes
            .par_iter()
            .enumerate()
            .map(|(k, name)| {
                let y = dev.labels(k);
                let w = class_weights(&y).ok_or_else(|| {
                    Error::Data(format!("outcome `{name}` has a single class in the development cohort"))
                })?;
                let fit = fit_logistic(&x, &y, w, cfg.l2, cfg.tol, cfg.max_iter)?;
                Ok(BaselineTask { name: name.clone(), outcome_index: k, class_weights: w, fit })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LogisticModel {
            format_version: BASELINE_FORMAT_VERSION,
            schema_hash: dev.schema.hash(),
            config: cfg.clone(),
            layout,
            tasks,
        })
    }

    pub fn design(&self, cohort: &Cohort, pre: &PreprocessorState) -> Result<Tensor> {
        if cohort.schema.hash() != self.schema_hash {
            return Err(Error::Schema("baseline was fitted on a different schema".into()));
        }
        self.layout.matrix(cohort, pre)
    }

    pub fn predict_cohort(&self, cohort: &Cohort, pre: &PreprocessorState) -> Result<Vec<Vec<f64>>> {
        predict_logistic(self, &self.design(cohort, pre)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: LogisticModel = serde_json::from_str(&text)?;
        if model.format_version != BASELINE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "baseline format version {} is not supported",
                model.format_version
            )));
        }
        Ok(model)
    }
}

/// Per-encounter probabilities, one column per task.
pub fn predict_logistic(model: &LogisticModel, x: &Tensor) -> Result<Vec<Vec<f64>>> {
    let width = model.layout.width();
    if x.rank() != 2 || x.shape()[1] != width {
        return Err(Error::Shape(format!("design {:?} does not have {width} columns", x.shape())));
    }
    Ok((0..x.shape()[0])
        .map(|i| model.tasks.iter().map(|t| sigmoid(t.fit.logit(x.row(i)))).collect())
        .collect())
}
