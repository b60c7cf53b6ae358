//! Integrated gradients of a postoperative branch logit against the zero
//! input, with cohort-level feature ranking.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InputNodes, Model, Phase};
use crate::numerics::{Tape, Tensor};
use crate::preprocess::EncodedEncounter;
use crate::schema::FeatureSchema;

pub const DEFAULT_STEPS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    pub encounter_id: String,
    pub outcome: String,
    pub steps: usize,
    /// Branch logit at the input and at the zero baseline.
    pub logit: f64,
    pub baseline_logit: f64,
    /// One value per numeric static column.
    pub numeric: Vec<f64>,
    /// One value per embedded nominal, summed over embedding dimensions.
    pub embedded: Vec<f64>,
    /// Per (minute, series column), `[T, 2·channels]`.
    pub series: Tensor,
    /// `(logit − baseline_logit) − Σ attributions`.
    pub completeness_gap: f64,
    /// Named attributions with the matching input value; see [`feature_rows`].
    pub features: Vec<FeatureAttribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature: String,
    pub attribution: f64,
    pub input_value: f64,
}

impl AttributionResult {
    pub fn total(&self) -> f64 {
        self.numeric.iter().sum::<f64>() + self.embedded.iter().sum::<f64>() + self.series.data().iter().sum::<f64>()
    }

    /// Per-channel sums of the value columns, then of the mask columns.
    pub fn channel_sums(&self) -> (Vec<f64>, Vec<f64>) {
        let w = self.series.shape().get(1).copied().unwrap_or(0);
        let c = w / 2;
        let mut sums = vec![0.0; w];
        for t in 0..self.series.shape()[0] {
            for (s, v) in sums.iter_mut().zip(self.series.row(t)) {
                *s += v;
            }
        }
        let masks = sums.split_off(c);
        (sums, masks)
    }
}

/// Inputs of the interpolated point `alpha · x`, as tape leaves.
fn scaled_inputs(tape: &mut Tape, model: &Model, enc: &EncodedEncounter, alpha: f64) -> Result<InputNodes> {
    let mut embeddings = Vec::new();
    for (e, &id) in model.dims.embedded.iter().zip(&enc.embedded_ids) {
        let table = model
            .params
            .get(&format!("embed.{}", e.name))
            .ok_or_else(|| Error::Shape(format!("missing embedding table for `{}`", e.name)))?;
        if id >= e.rows {
            return Err(Error::Shape(format!("id {id} out of range for `{}`", e.name)));
        }
        embeddings.push(tape.leaf(Tensor::vector(table.row(id).iter().map(|v| alpha * v).collect())));
    }
    Ok(InputNodes {
        numeric: Some(tape.leaf(Tensor::vector(enc.numeric_static.iter().map(|v| alpha * v).collect()))),
        embeddings,
        series: Some(tape.leaf(enc.series.map(|v| alpha * v))),
    })
}

/// Branch logit at `alpha · x` and its gradients with respect to the
/// numeric vector, each embedding vector and the series.
fn path_point(
    model: &Model,
    enc: &EncodedEncounter,
    branch: usize,
    alpha: f64,
) -> Result<(f64, Tensor, Vec<Tensor>, Tensor)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let inputs = scaled_inputs(&mut tape, model, enc, alpha)?;
    let g = model.graph(&mut tape, &bound, &inputs)?;
    let logit = g.logits[branch];
    let value = tape.value(logit).item();
    let grads = tape.backward(logit)?;
    let numeric = grads.wrt(inputs.numeric.expect("postop input"));
    let embeddings = inputs.embeddings.iter().map(|&e| grads.wrt(e)).collect();
    let series = grads.wrt(inputs.series.expect("postop input"));
    Ok((value, numeric, embeddings, series))
}

/// Integrated gradients of branch `outcome` with the midpoint rule over
/// `steps` points of the straight path from zero to the encounter.
pub fn integrated_gradients(
    model: &Model,
    schema: &FeatureSchema,
    enc: &EncodedEncounter,
    outcome: &str,
    steps: usize,
) -> Result<AttributionResult> {
    if steps < 1 {
        return Err(Error::Config("integrated gradients needs at least one step".into()));
    }
    if model.config.phase != Phase::Postop {
        return Err(Error::Config(format!(
            "attribution requires a postop checkpoint, got a {} model",
            model.config.phase
        )));
    }
    let branch = model
        .task_position(outcome)
        .ok_or_else(|| Error::Config(format!("model has no branch for outcome `{outcome}`")))?;
    model.check_inputs(enc)?;

    let mut numeric = vec![0.0; enc.numeric_static.len()];
    let mut embedded: Vec<Vec<f64>> = model.dims.embedded.iter().map(|_| vec![0.0; model.config.embed_dim]).collect();
    let mut series = Tensor::zeros(enc.series.shape());
    for j in 0..steps {
        let alpha = (j as f64 + 0.5) / steps as f64;
        let (_, gn, ge, gs) = path_point(model, enc, branch, alpha)?;
        for (a, g) in numeric.iter_mut().zip(gn.data()) {
            *a += g;
        }
        for (acc, g) in embedded.iter_mut().zip(&ge) {
            for (a, v) in acc.iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        series.add_assign(&gs);
    }
    let m = steps as f64;
    let numeric: Vec<f64> = numeric.iter().zip(&enc.numeric_static).map(|(g, x)| x * g / m).collect();
    let embedded: Vec<f64> = embedded
        .iter()
        .zip(model.dims.embedded.iter().zip(&enc.embedded_ids))
        .map(|(g, (e, &id))| {
            let row = model.params.get(&format!("embed.{}", e.name)).expect("checked").row(id);
            g.iter().zip(row).map(|(gi, xi)| xi * gi / m).sum()
        })
        .collect();
    let series = Tensor::new(
        enc.series.shape().to_vec(),
        series.data().iter().zip(enc.series.data()).map(|(g, x)| x * g / m).collect(),
    )?;

    let logit = path_point(model, enc, branch, 1.0)?.0;
    let baseline_logit = path_point(model, enc, branch, 0.0)?.0;
    let mut result = AttributionResult {
        encounter_id: enc.encounter_id.clone(),
        outcome: outcome.to_string(),
        steps,
        logit,
        baseline_logit,
        numeric,
        embedded,
        series,
        completeness_gap: 0.0,
        features: Vec::new(),
    };
    result.completeness_gap = (logit - baseline_logit) - result.total();
    result.features = feature_rows(&result, schema, enc);
    Ok(result)
}

/// Named attributions: every numeric static column, every embedded
/// nominal (input value is the level id), then per channel the summed
/// value-column attribution (input: mean normalized value) and the summed
/// mask-column attribution (input: fraction of observed minutes).
pub fn feature_rows(r: &AttributionResult, schema: &FeatureSchema, enc: &EncodedEncounter) -> Vec<FeatureAttribution> {
    let mut rows = Vec::new();
    for ((name, &a), &x) in schema.numeric_column_names().into_iter().zip(&r.numeric).zip(&enc.numeric_static) {
        rows.push(FeatureAttribution { feature: name, attribution: a, input_value: x });
    }
    for ((f, &a), &id) in schema.embedded_features().zip(&r.embedded).zip(&enc.embedded_ids) {
        rows.push(FeatureAttribution { feature: f.name.clone(), attribution: a, input_value: id as f64 });
    }
    let (values, masks) = r.channel_sums();
    let t = enc.series.shape()[0] as f64;
    let c = schema.channels.len();
    let column_mean = |j: usize| (0..enc.series.shape()[0]).map(|i| enc.series.row(i)[j]).sum::<f64>() / t;
    for (j, ch) in schema.channels.iter().enumerate() {
        rows.push(FeatureAttribution {
            feature: format!("{}:intraop", ch.name),
            attribution: values[j],
            input_value: column_mean(j),
        });
        rows.push(FeatureAttribution {
            feature: format!("{}:intraop_observed", ch.name),
            attribution: masks[j],
            input_value: column_mean(c + j),
        });
    }
    rows
}

/// Attributions for every encounter, in input order.
pub fn attribute_all(
    model: &Model,
    schema: &FeatureSchema,
    encs: &[EncodedEncounter],
    outcome: &str,
    steps: usize,
) -> Result<Vec<AttributionResult>> {
    encs.par_iter()
        .map(|e| integrated_gradients(model, schema, e, outcome, steps))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub mean_abs_attribution: f64,
    pub mean_attribution: f64,
    pub mean_input_value: f64,
}

/// Features ordered by mean absolute attribution, ties by name; at most
/// `top_n` rows.
pub fn rank_features(results: &[AttributionResult], top_n: usize) -> Result<Vec<RankedFeature>> {
    let first = results.first().ok_or_else(|| Error::Data("no attributions to rank".into()))?;
    if results.iter().any(|r| r.outcome != first.outcome) {
        return Err(Error::Data("attributions to rank must share one outcome".into()));
    }
    let mut acc: BTreeMap<&str, (f64, f64, f64)> = BTreeMap::new();
    for r in results {
        for f in &r.features {
            let e = acc.entry(&f.feature).or_default();
            e.0 += f.attribution.abs();
            e.1 += f.attribution;
            e.2 += f.input_value;
        }
    }
    let n = results.len() as f64;
    let mut ranked: Vec<RankedFeature> = acc
        .into_iter()
        .map(|(name, (abs, signed, input))| RankedFeature {
            feature: name.to_string(),
            mean_abs_attribution: abs / n,
            mean_attribution: signed / n,
            mean_input_value: input / n,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.mean_abs_attribution
            .total_cmp(&a.mean_abs_attribution)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    ranked.truncate(top_n);
    Ok(ranked)
}

pub fn write_attributions(path: &Path, results: &[AttributionResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["encounter_id", "outcome", "feature", "attribution", "input_value"])?;
    for r in results {
        for f in &r.features {
            w.write_record([
                r.encounter_id.as_str(),
                r.outcome.as_str(),
                f.feature.as_str(),
                &f.attribution.to_string(),
                &f.input_value.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ranking(path: &Path, outcome: &str, ranked: &[RankedFeature]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["outcome", "rank", "feature", "mean_abs_attribution", "mean_attribution", "mean_input_value"])?;
    for (i, f) in ranked.iter().enumerate() {
        w.write_record([
            outcome,
            &(i + 1).to_string(),
            f.feature.as_str(),
            &f.mean_abs_attribution.to_string(),
            &f.mean_attribution.to_string(),
            &f.mean_input_value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
