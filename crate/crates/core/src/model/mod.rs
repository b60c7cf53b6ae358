//! The preoperative, intraoperative and postoperative networks with their
//! per-outcome branches, evaluated on the [`Tape`].

mod checkpoint;

pub use checkpoint::{
    read_manifest, CheckpointManifest, TensorEntry, CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC,
};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{initialize, sigmoid, NodeId, ParamStore, Tape, Tensor};
use crate::preprocess::EncodedEncounter;
use crate::schema::FeatureSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Preop,
    Intraop,
    Postop,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Preop, Phase::Intraop, Phase::Postop];

    pub fn uses_static(self) -> bool {
        matches!(self, Phase::Preop | Phase::Postop)
    }

    pub fn uses_series(self) -> bool {
        matches!(self, Phase::Intraop | Phase::Postop)
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Preop => "preop",
            Phase::Intraop => "intraop",
            Phase::Postop => "postop",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preop" => Ok(Phase::Preop),
            "intraop" => Ok(Phase::Intraop),
            "postop" => Ok(Phase::Postop),
            other => Err(Error::Config(format!("unknown phase `{other}` (preop, intraop, postop)"))),
        }
    }
}

/// One network for all outcomes, or one network for a single outcome
/// (index into the schema's outcome list).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Multitask,
    Single(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    /// No nonlinearity; makes the network linear in its inputs when biases
    /// and attention scores are zero.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub activation: Activation,
    pub phase: Phase,
    pub mode: Mode,
    /// Separate attention pooling and intraoperative fusion per outcome.
    pub per_task_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 10,
            hidden: 64,
            kernel: 3,
            conv_layers: 7,
            conv_channels: 64,
            activation: Activation::Elu,
            phase: Phase::Postop,
            mode: Mode::Multitask,
            per_task_attention: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("kernel", self.kernel),
            ("conv_layers", self.conv_layers),
            ("conv_channels", self.conv_channels),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.conv_layers > 20 {
            return Err(Error::Config("model.conv_layers must be at most 20".into()));
        }
        Ok(())
    }

    /// Number of past minutes (including the current one) the top
    /// convolution layer sees.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * ((1usize << self.conv_layers) - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddedDim {
    pub name: String,
    /// Table rows: declared levels plus the missing level.
    pub rows: usize,
}

/// Input widths taken from the schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub numeric_width: usize,
    pub series_width: usize,
    pub embedded: Vec<EmbeddedDim>,
}

impl ModelDims {
    pub fn of(schema: &FeatureSchema) -> Self {
        ModelDims {
            numeric_width: schema.numeric_width(),
            series_width: schema.series_width(),
            embedded: schema
                .embedded_features()
                .map(|f| EmbeddedDim { name: f.name.clone(), rows: f.levels.len() })
                .collect(),
        }
    }
}

/// Output probabilities of one encounter, one per branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub phase: Phase,
    pub probs: Vec<f64>,
}

/// A network and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: ModelDims,
    /// Outcome names of the branches, in output order.
    pub task_names: Vec<String>,
    pub schema_hash: String,
    pub params: ParamStore,
}

/// Tape nodes of the inputs of one encounter.
#[derive(Debug, Clone)]
pub struct InputNodes {
    /// `[numeric_width]`
    pub numeric: Option<NodeId>,
    /// Looked-up embedding vectors, `[embed_dim]` each.
    pub embeddings: Vec<NodeId>,
    /// `[T, series_width]`
    pub series: Option<NodeId>,
}

/// Tape nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct Graph {
    pub numeric_hidden: Option<NodeId>,
    pub preop_repr: Option<NodeId>,
    pub conv_outputs: Vec<NodeId>,
    /// Attention contexts, layer-major within each representation.
    pub contexts: Vec<NodeId>,
    /// One shared representation, or one per branch.
    pub intraop_reprs: Vec<NodeId>,
    /// One scalar logit per branch.
    pub logits: Vec<NodeId>,
}

/// Parameter nodes registered on a tape, by name.
pub struct Bound(HashMap<String, NodeId>);

impl Bound {
    pub fn get(&self, name: &str) -> NodeId {
        *self
            .0
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }
}

fn attention_prefix(task: Option<&str>, layer: usize) -> String {
    match task {
        None => format!("intraop.attn{layer}"),
        Some(t) => format!("intraop.{t}.attn{layer}"),
    }
}

fn intraop_fusion_prefix(task: Option<&str>) -> String {
    match task {
        None => "intraop.fusion".into(),
        Some(t) => format!("intraop.{t}.fusion"),
    }
}

impl Model {
    /// Allocates and initializes every parameter of `config` for `schema`.
    pub fn build(config: &ModelConfig, schema: &FeatureSchema, seed: u64) -> Result<Model> {
        config.validate()?;
        let task_names = match config.mode {
            Mode::Multitask => schema.outcomes.clone(),
            Mode::Single(k) => vec![schema
                .outcomes
                .get(k)
                .ok_or_else(|| Error::Config(format!("single-task index {k} out of range")))?
                .clone()],
        };
        let dims = ModelDims::of(schema);
        let shapes = Self::param_shapes(config, &dims, &task_names);
        Ok(Model {
            config: config.clone(),
            dims,
            task_names,
            schema_hash: schema.hash(),
            params: initialize(&shapes, seed),
        })
    }

    /// Name and shape of every parameter.
    pub fn param_shapes(
        config: &ModelConfig,
        dims: &ModelDims,
        task_names: &[String],
    ) -> BTreeMap<String, Vec<usize>> {
        let mut s = BTreeMap::new();
        let h = config.hidden;
        let dense = |s: &mut BTreeMap<String, Vec<usize>>, prefix: &str, d_in: usize, d_out: usize| {
            s.insert(format!("{prefix}.weight"), vec![d_in, d_out]);
            s.insert(format!("{prefix}.bias"), vec![d_out]);
        };
        if config.phase.uses_static() {
            for e in &dims.embedded {
                s.insert(format!("embed.{}", e.name), vec![e.rows, config.embed_dim]);
            }
            dense(&mut s, "preop.numeric", dims.numeric_width, h);
            let mut fusion_in = h;
            if !dims.embedded.is_empty() {
                dense(&mut s, "preop.nominal", dims.embedded.len() * config.embed_dim, h);
                fusion_in += h;
            }
            dense(&mut s, "preop.fusion", fusion_in, h);
        }
        if config.phase.uses_series() {
            let c = config.conv_channels;
            for l in 0..config.conv_layers {
                let c_in = if l == 0 { dims.series_width } else { c };
                s.insert(format!("intraop.conv{l}.kernel"), vec![config.kernel, c_in, c]);
                s.insert(format!("intraop.conv{l}.bias"), vec![c]);
            }
            let owners: Vec<Option<&str>> = if config.per_task_attention {
                task_names.iter().map(|t| Some(t.as_str())).collect()
            } else {
                vec![None]
            };
            for owner in owners {
                for l in 0..config.conv_layers {
                    let p = attention_prefix(owner, l);
                    dense(&mut s, &p, c, c);
                    s.insert(format!("{p}.score"), vec![c]);
                }
                dense(&mut s, &intraop_fusion_prefix(owner), config.conv_layers * c, h);
            }
        }
        let branch_in = match config.phase {
            Phase::Preop | Phase::Intraop => h,
            Phase::Postop => 2 * h,
        };
        for t in task_names {
            dense(&mut s, &format!("branch.{t}.hidden"), branch_in, h);
            dense(&mut s, &format!("branch.{t}.out"), h, 1);
        }
        s
    }

    pub fn phase(&self) -> Phase {
        self.config.phase
    }

    /// Registers every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|(name, t)| (name.clone(), tape.param(name, t.clone())))
                .collect(),
        )
    }

    pub fn check_inputs(&self, enc: &EncodedEncounter) -> Result<()> {
        let phase = self.config.phase;
        if phase.uses_static() {
            if enc.numeric_static.len() != self.dims.numeric_width
                || enc.embedded_ids.len() != self.dims.embedded.len()
            {
                return Err(Error::Shape(format!(
                    "encounter `{}` has {} static values and {} embedded ids; the model expects {} and {}",
                    enc.encounter_id,
                    enc.numeric_static.len(),
                    enc.embedded_ids.len(),
                    self.dims.numeric_width,
                    self.dims.embedded.len()
                )));
            }
        }
        if phase.uses_series() && enc.series.shape()[1] != self.dims.series_width {
            return Err(Error::Shape(format!(
                "series width {} does not match the model's {}",
                enc.series.shape()[1],
                self.dims.series_width
            )));
        }
        Ok(())
    }

    /// Input nodes of `enc`: leaves for the numeric vector and the series,
    /// table lookups for the embedded nominals.
    pub fn inputs(&self, tape: &mut Tape, bound: &Bound, enc: &EncodedEncounter) -> Result<InputNodes> {
        self.check_inputs(enc)?;
        let phase = self.config.phase;
        let mut inputs = InputNodes { numeric: None, embeddings: Vec::new(), series: None };
        if phase.uses_static() {
            inputs.numeric = Some(tape.leaf(Tensor::vector(enc.numeric_static.clone())));
            for (e, &id) in self.dims.embedded.iter().zip(&enc.embedded_ids) {
                let table = bound.get(&format!("embed.{}", e.name));
                inputs.embeddings.push(tape.embedding_lookup(table, id)?);
            }
        }
        if phase.uses_series() {
            inputs.series = Some(tape.leaf(enc.series.clone()));
        }
        Ok(inputs)
    }

    fn activate(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self.config.activation {
            Activation::Elu => tape.elu(x),
            Activation::Identity => x,
        }
    }

    fn dense_act(&self, tape: &mut Tape, bound: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
        let y = tape.dense(
            x,
            bound.get(&format!("{prefix}.weight")),
            bound.get(&format!("{prefix}.bias")),
        )?;
        Ok(self.activate(tape, y))
    }

    /// Records the forward pass for the model's phase.
    pub fn graph(&self, tape: &mut Tape, bound: &Bound, inputs: &InputNodes) -> Result<Graph> {
        let missing = |what: &str| Error::Shape(format!("{} model needs {what} input", self.config.phase));
        let mut g = Graph {
            numeric_hidden: None,
            preop_repr: None,
            conv_outputs: Vec::new(),
            contexts: Vec::new(),
            intraop_reprs: Vec::new(),
            logits: Vec::new(),
        };
        if self.config.phase.uses_static() {
            let numeric = inputs.numeric.ok_or_else(|| missing("numeric"))?;
            let num_h = self.dense_act(tape, bound, "preop.numeric", numeric)?;
            g.numeric_hidden = Some(num_h);
            let mut parts = vec![num_h];
            if !inputs.embeddings.is_empty() {
                let joined = tape.concat(&inputs.embeddings, 0)?;
                parts.push(self.dense_act(tape, bound, "preop.nominal", joined)?);
            }
            let fused_in = tape.concat(&parts, 0)?;
            g.preop_repr = Some(self.dense_act(tape, bound, "preop.fusion", fused_in)?);
        }
        if self.config.phase.uses_series() {
            let mut h = inputs.series.ok_or_else(|| missing("series"))?;
            for l in 0..self.config.conv_layers {
                let y = tape.causal_conv(
                    h,
                    bound.get(&format!("intraop.conv{l}.kernel")),
                    bound.get(&format!("intraop.conv{l}.bias")),
                    1 << l,
                )?;
                h = self.activate(tape, y);
                g.conv_outputs.push(h);
            }
            let owners: Vec<Option<&str>> = if self.config.per_task_attention {
                self.task_names.iter().map(|t| Some(t.as_str())).collect()
            } else {
                vec![None]
            };
            for owner in owners {
                let mut contexts = Vec::with_capacity(g.conv_outputs.len());
                for (l, &layer) in g.conv_outputs.iter().enumerate() {
                    let p = attention_prefix(owner, l);
                    contexts.push(tape.attention_pool(
                        layer,
                        bound.get(&format!("{p}.weight")),
                        bound.get(&format!("{p}.bias")),
                        bound.get(&format!("{p}.score")),
                    )?);
                }
                let joined = tape.concat(&contexts, 0)?;
                g.contexts.extend(contexts);
                g.intraop_reprs
                    .push(self.dense_act(tape, bound, &intraop_fusion_prefix(owner), joined)?);
            }
        }
        for (i, task) in self.task_names.iter().enumerate() {
            let intraop = g.intraop_reprs.get(i).or(g.intraop_reprs.first()).copied();
            let repr = match (g.preop_repr, intraop) {
                (Some(p), Some(q)) => tape.concat(&[p, q], 0)?,
                (Some(p), None) => p,
                (None, Some(q)) => q,
                (None, None) => unreachable!("every phase has a representation"),
            };
            let hidden = self.dense_act(tape, bound, &format!("branch.{task}.hidden"), repr)?;
            let out = format!("branch.{task}.out");
            g.logits.push(tape.dense(
                hidden,
                bound.get(&format!("{out}.weight")),
                bound.get(&format!("{out}.bias")),
            )?);
        }
        Ok(g)
    }

    /// Records a full forward pass of `enc` on a fresh tape.
    pub fn trace(&self, enc: &EncodedEncounter) -> Result<(Tape, Bound, InputNodes, Graph)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let inputs = self.inputs(&mut tape, &bound, enc)?;
        let graph = self.graph(&mut tape, &bound, &inputs)?;
        Ok((tape, bound, inputs, graph))
    }

    /// Branch logits, in `task_names` order.
    pub fn logits(&self, enc: &EncodedEncounter) -> Result<Vec<f64>> {
        let (tape, _, _, g) = self.trace(enc)?;
        Ok(g.logits.iter().map(|&z| tape.value(z).item()).collect())
    }

    pub fn predict(&self, enc: &EncodedEncounter) -> Result<Prediction> {
        let probs = self.logits(enc)?.into_iter().map(sigmoid).collect();
        Ok(Prediction { phase: self.config.phase, probs })
    }

    fn expect_phase(&self, phase: Phase) -> Result<()> {
        if self.config.phase != phase {
            return Err(Error::Config(format!(
                "a {} model cannot run the {phase} forward pass",
                self.config.phase
            )));
        }
        Ok(())
    }

    /// Preoperative representation and branch probabilities.
    pub fn forward_preop(&self, enc: &EncodedEncounter) -> Result<(Tensor, Vec<f64>)> {
        self.expect_phase(Phase::Preop)?;
        let (tape, _, _, g) = self.trace(enc)?;
        let repr = tape.value(g.preop_repr.expect("preop graph")).clone();
        Ok((repr, g.logits.iter().map(|&z| sigmoid(tape.value(z).item())).collect()))
    }

    /// Intraoperative representation(s) and branch probabilities. With
    /// per-outcome attention the representation has one row per branch.
    pub fn forward_intraop(&self, series: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.expect_phase(Phase::Intraop)?;
        let enc = EncodedEncounter {
            encounter_id: String::new(),
            numeric_static: Vec::new(),
            embedded_ids: Vec::new(),
            series: series.clone(),
            labels: Vec::new(),
        };
        let (tape, _, _, g) = self.trace(&enc)?;
        let rows: Vec<f64> = g
            .intraop_reprs
            .iter()
            .flat_map(|&r| tape.value(r).data().to_vec())
            .collect();
        let repr = if g.intraop_reprs.len() == 1 {
            Tensor::vector(rows)
        } else {
            Tensor::matrix(g.intraop_reprs.len(), self.config.hidden, rows)?
        };
        Ok((repr, g.logits.iter().map(|&z| sigmoid(tape.value(z).item())).collect()))
    }

    pub fn forward_postop(&self, enc: &EncodedEncounter) -> Result<Vec<f64>> {
        self.expect_phase(Phase::Postop)?;
        Ok(self.predict(enc)?.probs)
    }

    /// Position of outcome `name` among the branches.
    pub fn task_position(&self, name: &str) -> Option<usize> {
        self.task_names.iter().position(|t| t == name)
    }
}
