//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Numeric arguments select criteria.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use riskseq_cli::experiment::{as_stored, train_deep};
use riskseq_cli::manifest::RunManifest;
use riskseq_cli::pipeline::predict_deep;
use riskseq_core::attribution::{attribute_all, integrated_gradients, rank_features};
use riskseq_core::baseline::{BaselineConfig, LogisticModel};
use riskseq_core::cohort::{cutoff_for_fraction, split_chronological, Cohort};
use riskseq_core::evaluation::*;
use riskseq_core::model::{Activation, Mode, Model, ModelConfig, Phase};
use riskseq_core::numerics::Tensor;
use riskseq_core::preprocess::{EncodedEncounter, PreprocessorState};
use riskseq_core::schema::{schema_with_dims, FeatureSchema};
use riskseq_core::synth::{compact_dims, generate, oracle_auroc, preset, GroundTruth};
use riskseq_core::training::{sample_loss_and_grads, sample_task_loss_values, ClassWeights, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", c1_gradients),
        ("causality and receptive field", c2_causality),
        ("integrated-gradients completeness", c3_completeness),
        ("metric oracles", c4_metric_oracles),
        ("bootstrap behaviour", c5_bootstrap),
        ("NRI oracle and antisymmetry", c6_nri),
        ("deep vs logistic on the nonlinear recipe", c7_deep_vs_logistic),
        ("multitask vs single-task on the rare outcome", c8_multitask),
        ("missingness importance", c9_missingness),
        ("pipeline integrity", c10_pipeline),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({detail}; {secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({detail}; {secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random_encounter(schema: &FeatureSchema, t: usize, seed: u64) -> EncodedEncounter {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = schema.series_width();
    EncodedEncounter {
        encounter_id: format!("e{seed}"),
        numeric_static: (0..schema.numeric_width()).map(|_| rng.random_range(-2.0..2.0)).collect(),
        embedded_ids: schema.embedded_features().map(|f| rng.random_range(0..f.levels.len())).collect(),
        series: Tensor::new(vec![t, w], (0..t * w).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap(),
        labels: (0..9).map(|_| rng.random_range(0..2)).collect(),
    }
}

fn compact_schema() -> FeatureSchema {
    schema_with_dims(&compact_dims()).unwrap()
}

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, for gradients near zero.
const FD_FLOOR: f64 = 1e-6;

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let schema = compact_schema();
    let cfg = ModelConfig {
        hidden: 8,
        conv_layers: 2,
        conv_channels: 6,
        embed_dim: 3,
        phase: Phase::Postop,
        ..Default::default()
    };
    let model = Model::build(&cfg, &schema, 11).map_err(e)?;
    let enc = random_encounter(&schema, 40, 5);
    let weights: Vec<ClassWeights> = (0..9)
        .map(|k| ClassWeights { w_pos: 1.0 + 0.3 * k as f64, w_neg: 0.5 + 0.05 * k as f64 })
        .collect();
    let (_, grads) = sample_loss_and_grads(&model, &enc, &weights).map_err(e)?;
    let loss = |m: &Model| sample_task_loss_values(m, &enc, &weights).unwrap().iter().sum::<f64>();
    let mut probe = model.clone();
    let (mut worst, mut where_, mut checked) = (0.0f64, String::new(), 0);
    for (name, g) in &grads {
        for i in 0..g.len() {
            let orig = model.params.get(name).unwrap().data()[i];
            probe.params.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let up = loss(&probe);
            probe.params.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let down = loss(&probe);
            probe.params.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = g.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            if rel > worst {
                worst = rel;
                where_ = format!("{name}[{i}]");
            }
            checked += 1;
        }
    }
    ensure(checked == model.params.scalar_count(), || "not every parameter was checked".into())?;
    ensure(worst < FD_REL_TOL, || format!("max relative error {worst:.2e} at {where_}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} parameters, max relative error {worst:.2e} < {FD_REL_TOL:e}"))
}

fn c2_causality() -> Outcome {
    let schema = compact_schema();
    let cfg = ModelConfig { phase: Phase::Intraop, ..Default::default() };
    ensure(cfg.conv_layers == 7, || "default stack is not 7 layers".into())?;
    ensure(cfg.receptive_field() == 255, || format!("configured receptive field {}", cfg.receptive_field()))?;
    let model = Model::build(&cfg, &schema, 21).map_err(e)?;
    let t_len = 320;
    let w = schema.series_width();
    let base = random_encounter(&schema, t_len, 22);
    let (tape, _, _, g) = model.trace(&base).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let t = rng.random_range(0..t_len - 1);
        let later = rng.random_range(t + 1..t_len);
        let mut perturbed = base.clone();
        for j in 0..w {
            perturbed.series.data_mut()[later * w + j] += rng.random_range(-3.0..3.0);
        }
        let (tp, _, _, gp) = model.trace(&perturbed).map_err(e)?;
        for (l, (&a, &b)) in g.conv_outputs.iter().zip(&gp.conv_outputs).enumerate() {
            for m in 0..=t {
                ensure(tape.value(a).row(m) == tp.value(b).row(m), || {
                    format!("layer {l} minute {m} changed after perturbing minute {later}")
                })?;
            }
        }
        let top = *g.conv_outputs.last().unwrap();
        let top_p = *gp.conv_outputs.last().unwrap();
        ensure(tape.value(top).row(later) != tp.value(top_p).row(later), || "perturbation had no effect".into())?;
    }
    for t in [0usize, 100, 253, 254, 255, 300, t_len - 1] {
        let (mut tape, _, inputs, g) = model.trace(&base).map_err(e)?;
        let row = tape.row(*g.conv_outputs.last().unwrap(), t).map_err(e)?;
        let s = tape.sum(row);
        let grad = tape.backward(s).map_err(e)?.wrt(inputs.series.unwrap());
        let support: Vec<usize> = (0..t_len).filter(|&m| grad.row(m).iter().any(|&v| v != 0.0)).collect();
        let expected: Vec<usize> = (t.saturating_sub(254)..=t).collect();
        ensure(support == expected, || {
            format!("minute {t}: support {:?}..{:?} ({} minutes)", support.first(), support.last(), support.len())
        })?;
    }
    Ok("20 perturbations exact; top layer sees exactly 255 minutes".into())
}

const IG_STEPS: usize = 256;
const IG_REL_TOL: f64 = 1e-3;
const IG_ABS_TOL: f64 = 1e-6;
const LINEAR_TOL: f64 = 1e-9;

fn logit_of(model: &Model, enc: &EncodedEncounter, outcome: &str) -> f64 {
    model.logits(enc).unwrap()[model.task_position(outcome).unwrap()]
}

/// The input with every numeric and series value zero, and a model whose
/// embedding rows for its nominal levels are zero.
fn zero_baseline(model: &Model, schema: &FeatureSchema, enc: &EncodedEncounter) -> (Model, EncodedEncounter) {
    let mut m = model.clone();
    for (k, f) in schema.embedded_features().enumerate() {
        let table = m.params.get_mut(&format!("embed.{}", f.name)).unwrap();
        let d = table.shape()[1];
        let id = enc.embedded_ids[k];
        table.data_mut()[id * d..(id + 1) * d].fill(0.0);
    }
    let mut z = enc.clone();
    z.numeric_static.fill(0.0);
    z.series.data_mut().fill(0.0);
    (m, z)
}

fn c3_completeness() -> Outcome {
    let schema = compact_schema();
    let cfg = ModelConfig {
        hidden: 16,
        conv_channels: 8,
        conv_layers: 4,
        embed_dim: 4,
        phase: Phase::Postop,
        ..Default::default()
    };
    let model = Model::build(&cfg, &schema, 3).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let enc = random_encounter(&schema, rng.random_range(1..60), 1000 + i);
        let outcome = &schema.outcomes[i as usize % 9];
        let r = integrated_gradients(&model, &schema, &enc, outcome, IG_STEPS).map_err(e)?;
        let fx = logit_of(&model, &enc, outcome);
        let (zm, zx) = zero_baseline(&model, &schema, &enc);
        let f0 = logit_of(&zm, &zx, outcome);
        let total: f64 = r.features.iter().map(|f| f.attribution).sum();
        let gap = (total - (fx - f0)).abs();
        let bound = IG_REL_TOL * (fx - f0).abs() + IG_ABS_TOL;
        ensure(gap < bound, || format!("encounter {i}: gap {gap:.3e} >= {bound:.3e}"))?;
        worst = worst.max(gap / bound);
    }

    // Identity activations and zero attention scores make the network affine.
    let mut linear = Model::build(&ModelConfig { activation: Activation::Identity, ..cfg }, &schema, 4).map_err(e)?;
    let scores: Vec<String> = linear.params.names().filter(|n| n.ends_with(".score")).cloned().collect();
    for n in scores {
        linear.params.get_mut(&n).unwrap().data_mut().fill(0.0);
    }
    let mut linear_worst = 0.0f64;
    for i in 0..5u64 {
        let enc = random_encounter(&schema, 6, 2000 + i);
        let outcome = &schema.outcomes[(2 * i) as usize % 9];
        let r = integrated_gradients(&linear, &schema, &enc, outcome, 7).map_err(e)?;
        let (zm, zx) = zero_baseline(&linear, &schema, &enc);
        let f0 = logit_of(&zm, &zx, outcome);
        let mut compare = |got: f64, oracle: f64, what: String| -> Result<(), String> {
            let diff = (got - oracle).abs();
            linear_worst = linear_worst.max(diff);
            ensure(diff <= LINEAR_TOL * oracle.abs().max(1.0), || format!("{what}: {got} vs w·x {oracle}"))
        };
        for j in 0..enc.numeric_static.len() {
            let mut unit = zx.clone();
            unit.numeric_static[j] = 1.0;
            let w_j = logit_of(&zm, &unit, outcome) - f0;
            compare(r.numeric[j], w_j * enc.numeric_static[j], format!("numeric {j}"))?;
        }
        let width = enc.series.shape()[1];
        for t in 0..enc.series.shape()[0] {
            for j in 0..width {
                let mut unit = zx.clone();
                unit.series.data_mut()[t * width + j] = 1.0;
                let w_tj = logit_of(&zm, &unit, outcome) - f0;
                compare(r.series.row(t)[j], w_tj * enc.series.row(t)[j], format!("series ({t}, {j})"))?;
            }
        }
        for (k, f) in schema.embedded_features().enumerate() {
            // Only this nominal's embedding row is left at its trained value.
            let mut only = zm.clone();
            let table = format!("embed.{}", f.name);
            *only.params.get_mut(&table).unwrap() = linear.params.get(&table).unwrap().clone();
            let oracle = logit_of(&only, &zx, outcome) - f0;
            compare(r.embedded[k], oracle, format!("embedding {}", f.name))?;
        }
    }
    Ok(format!(
        "100 encounters at m={IG_STEPS}, worst gap {worst:.2} of the bound; affine network max |IG - w·x| {linear_worst:.1e}"
    ))
}

fn pairwise_auroc(s: &[f64], y: &[u8]) -> f64 {
    let (mut wins, mut pos, mut neg) = (0.0, 0.0, 0.0);
    for i in 0..s.len() {
        if y[i] == 1 {
            pos += 1.0;
        } else {
            neg += 1.0;
        }
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / (pos * neg)
}

fn counts_at(s: &[f64], y: &[u8], t: f64) -> (f64, f64, f64, f64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (v, l) in s.iter().zip(y) {
        match (*v >= t, *l == 1) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fn_ += 1.0,
        }
    }
    (tp, fp, tn, fn_)
}

fn step_average_precision(s: &[f64], y: &[u8]) -> f64 {
    let mut thresholds = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = y.iter().filter(|&&v| v == 1).count() as f64;
    let (mut prev, mut ap) = (0.0, 0.0);
    for t in thresholds {
        let (tp, fp, _, _) = counts_at(s, y, t);
        let recall = tp / positives;
        ap += (recall - prev) * (tp / (tp + fp));
        prev = recall;
    }
    ap
}

/// Maximal J over observed scores and +inf; the smallest maximizing threshold.
fn scan_youden(s: &[f64], y: &[u8]) -> (f64, f64) {
    let p = y.iter().filter(|&&v| v == 1).count() as f64;
    let n = y.len() as f64 - p;
    let mut candidates: Vec<f64> = s.iter().copied().chain([f64::INFINITY]).collect();
    candidates.sort_by(f64::total_cmp);
    let js: Vec<f64> = candidates
        .iter()
        .map(|&t| {
            let (tp, _, tn, _) = counts_at(s, y, t);
            tp / p + tn / n - 1.0
        })
        .collect();
    let best = js.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let i = js.iter().position(|&j| j == best).unwrap();
    (candidates[i], best)
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

fn c4_metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut instances = 0;
    while instances < 1000 {
        let n = rng.random_range(2..=200);
        let coarse = rng.random_bool(0.5);
        let prevalence = rng.random_range(0.05..0.95);
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(prevalence))).collect();
        if !(y.contains(&0) && y.contains(&1)) {
            continue;
        }
        let s: Vec<f64> = (0..n)
            .map(|_| if coarse { f64::from(rng.random_range(0..12u32)) / 11.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        instances += 1;
        let tag = || format!("instance {instances} (n={n})");
        ensure(auroc(&s, &y).map_err(e)? == pairwise_auroc(&s, &y), || format!("{}: AUROC", tag()))?;
        ensure(auprc(&s, &y).map_err(e)? == step_average_precision(&s, &y), || format!("{}: AUPRC", tag()))?;
        let got = youden_threshold(&s, &y).map_err(e)?;
        let want = scan_youden(&s, &y);
        ensure(got == want, || format!("{}: Youden {got:?} vs {want:?}", tag()))?;
        for t in [got.0, s[rng.random_range(0..n)], rng.random_range(-0.1..1.1)] {
            let m = confusion_metrics(&s, &y, t).map_err(e)?;
            let (tp, fp, tn, fn_) = counts_at(&s, &y, t);
            let pairs = [
                (m.sensitivity.ok(), ratio(tp, tp + fn_)),
                (m.specificity.ok(), ratio(tn, tn + fp)),
                (m.ppv.ok(), ratio(tp, tp + fp)),
                (m.npv.ok(), ratio(tn, tn + fn_)),
                (m.accuracy.ok(), ratio(tp + tn, n as f64)),
            ];
            ensure(pairs.iter().all(|(a, b)| a == b), || format!("{}: confusion metrics at {t}", tag()))?;
        }
    }
    Ok("1000 instances, n <= 200, all exact".into())
}

const COVERAGE_REPS: u64 = 100;
const COVERAGE_MIN: usize = 90;

fn c5_bootstrap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let y: Vec<u8> = (0..500).map(|_| u8::from(rng.random_bool(0.15))).collect();
    let s: Vec<f64> = y.iter().map(|&v| rng.random_range(0.0..1.0) + 0.25 * f64::from(v)).collect();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| evaluate_outcome("x", &s, &y, 1000, 17).unwrap())
    };
    let (a, b, c) = (run(1), run(1), run(4));
    ensure(a == b && a == c, || "intervals differ between identical runs".into())?;
    for (name, entry) in a.entries() {
        ensure(entry.estimate().and_then(|e| e.interval()).is_some(), || format!("{name} has no interval"))?;
    }
    let direct = (bootstrap_ci(auroc, &s, &y, 1000, 17).map_err(e)?, bootstrap_ci(auroc, &s, &y, 1000, 17).map_err(e)?);
    ensure(direct.0 == direct.1, || "bootstrap_ci is not reproducible".into())?;

    // Unit-variance normals shifted by sqrt(2)·Φ⁻¹(0.8) separate with AUROC 0.8.
    let shift = std::f64::consts::SQRT_2 * 0.841_621_233_572_914_2;
    let (pos, neg) = (Normal::new(shift, 1.0).unwrap(), Normal::new(0.0, 1.0).unwrap());
    let mut hits = 0;
    for rep in 0..COVERAGE_REPS {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + rep);
        let labels: Vec<u8> = (0..1000).map(|i| u8::from(i % 2 == 0)).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| if l == 1 { pos.sample(&mut rng) } else { neg.sample(&mut rng) })
            .collect();
        let (lo, hi) = bootstrap_ci(auroc, &scores, &labels, 1000, rep).map_err(e)?;
        if lo <= 0.8 && 0.8 <= hi {
            hits += 1;
        }
    }
    ensure((COVERAGE_MIN..=100).contains(&hits), || format!("coverage {hits}/{COVERAGE_REPS}"))?;
    Ok(format!("bit-identical across runs and thread counts; coverage {hits}/{COVERAGE_REPS}"))
}

fn c6_nri() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for trial in 0..500 {
        // [old class][new class] counts for events and nonevents.
        let table = |rng: &mut ChaCha8Rng| -> [[usize; 2]; 2] {
            [[rng.random_range(0..12), rng.random_range(0..12)], [rng.random_range(0..12), rng.random_range(0..12)]]
        };
        let (ev, ne) = (table(&mut rng), table(&mut rng));
        let total = |t: &[[usize; 2]; 2]| t.iter().flatten().sum::<usize>();
        if total(&ev) == 0 || total(&ne) == 0 {
            continue;
        }
        let (t_old, t_new) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
        let prob = |rng: &mut ChaCha8Rng, t: f64, high: usize| {
            let u: f64 = rng.random_range(0.0..1.0);
            if high == 1 { t + (1.0 - t) * u } else { t * u }
        };
        let mut rows = Vec::new();
        for (label, t) in [(1u8, &ev), (0u8, &ne)] {
            for (a, row) in t.iter().enumerate() {
                for (b, &count) in row.iter().enumerate() {
                    for _ in 0..count {
                        rows.push((prob(&mut rng, t_old, a), prob(&mut rng, t_new, b), label));
                    }
                }
            }
        }
        rows.shuffle(&mut rng);
        let old: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let new: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let y: Vec<u8> = rows.iter().map(|r| r.2).collect();
        let n = rows.len() as f64;
        let f = |v: usize| v as f64;
        let event = (f(ev[0][1]) - f(ev[1][0])) / f(total(&ev));
        let nonevent = (f(ne[1][0]) - f(ne[0][1])) / f(total(&ne));
        let event_pct = 100.0 * (f(ev[0][1]) - f(ev[1][0])) / n;
        let nonevent_pct = 100.0 * (f(ne[1][0]) - f(ne[0][1])) / n;

        let fwd = nri(&old, &new, &y, t_old, t_new, 200, trial).map_err(e)?;
        let got = (fwd.event_component, fwd.nonevent_component, fwd.nri_index.point, fwd.event_pct, fwd.nonevent_pct);
        let want = (event, nonevent, event + nonevent, event_pct, nonevent_pct);
        ensure(got == want, || format!("trial {trial}: {got:?} vs direct count {want:?}"))?;
        ensure(fwd.events == total(&ev) && fwd.n == rows.len(), || format!("trial {trial}: sizes"))?;

        let rev = nri(&new, &old, &y, t_new, t_old, 200, trial).map_err(e)?;
        ensure(
            rev.nri_index.point == -fwd.nri_index.point
                && rev.event_component == -fwd.event_component
                && rev.nonevent_component == -fwd.nonevent_component
                && rev.overall_pct == -fwd.overall_pct
                && rev.p_value == fwd.p_value,
            || format!("trial {trial}: swap is not antisymmetric"),
        )?;
    }
    Ok("500 random reclassification tables exact; swap negates the index".into())
}

/// Training settings of criteria 7-9; `configs/train.toml` ships the same.
fn experiment_train() -> TrainConfig {
    TrainConfig {
        lr: 0.003,
        l2: 1e-4,
        batch: 32,
        patience: 6,
        max_epochs: 60,
        es_fraction: 0.1,
        seed: 0,
        model: ModelConfig { embed_dim: 4, hidden: 32, kernel: 3, conv_layers: 3, conv_channels: 8, ..Default::default() },
        ..Default::default()
    }
}

const BASELINE_L2: f64 = 100.0;
const VALIDATION_FRACTION: f64 = 0.2;
const RECIPE_SEED: u64 = 7;

fn repo_root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

struct Prepared {
    dev: Cohort,
    val: Cohort,
    pre: PreprocessorState,
    truth: GroundTruth,
}

fn prepare(recipe: &str) -> Result<Prepared, String> {
    let spec = preset(recipe).map_err(e)?;
    ensure(spec.seed == RECIPE_SEED, || format!("{recipe} seed is {}", spec.seed))?;
    let (cohort, truth) = generate(&spec).map_err(e)?;
    let (dev, val) = split_chronological(&cohort, cutoff_for_fraction(&cohort, VALIDATION_FRACTION).map_err(e)?);
    let pre = PreprocessorState::fit(&dev, &dev.schema).map_err(e)?;
    Ok(Prepared { dev, val, pre, truth })
}

fn column_auroc(probs: &[Vec<f64>], col: usize, labels: &[u8]) -> Result<f64, String> {
    auroc(&probs.iter().map(|p| p[col]).collect::<Vec<_>>(), labels).map_err(e)
}

fn deep_probs(p: &Prepared, phase: Phase, mode: Mode) -> Result<Vec<Vec<f64>>, String> {
    let (model, _) = train_deep(&p.dev, &p.pre, &experiment_train(), phase, mode).map_err(e)?;
    predict_deep(&as_stored(&model).map_err(e)?, &p.val, &p.pre).map_err(e)
}

const NONLINEAR_MARGIN: f64 = 0.05;
const ORACLE_GAP: f64 = 0.03;

fn c7_deep_vs_logistic() -> Outcome {
    let start = Instant::now();
    let shipped: TrainConfig = toml::from_str(&std::fs::read_to_string(repo_root().join("configs/train.toml")).map_err(e)?)
        .map_err(e)?;
    ensure(shipped == experiment_train(), || "configs/train.toml differs from the pinned settings".into())?;
    let p = prepare("nonlinear")?;
    let (nonlinear, linear) = (0, 1);
    let deep = deep_probs(&p, Phase::Postop, Mode::Multitask)?;
    let cfg = BaselineConfig { l2: BASELINE_L2, ..Default::default() };
    let base = LogisticModel::fit(&p.dev, Phase::Postop, &p.pre, &cfg)
        .and_then(|m| m.predict_cohort(&p.val, &p.pre))
        .map_err(e)?;
    let oracle = oracle_auroc(&p.truth, &p.val).map_err(e)?;
    let auc = |probs: &[Vec<f64>], k: usize| column_auroc(probs, k, &p.val.labels(k));
    let (d0, b0) = (auc(&deep, nonlinear)?, auc(&base, nonlinear)?);
    let (d1, b1, o1) = (auc(&deep, linear)?, auc(&base, linear)?, oracle[linear]);
    let detail = format!(
        "{}: deep {d0:.3} vs logistic {b0:.3}; {}: deep {d1:.3}, logistic {b1:.3}, oracle {o1:.3}",
        p.val.schema.outcomes[nonlinear], p.val.schema.outcomes[linear]
    );
    ensure(d0 - b0 >= NONLINEAR_MARGIN, || format!("margin below {NONLINEAR_MARGIN}: {detail}"))?;
    ensure((o1 - d1).abs() <= ORACLE_GAP && (o1 - b1).abs() <= ORACLE_GAP, || {
        format!("linear outcome not within {ORACLE_GAP} of the oracle: {detail}")
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30 * 60), || format!("took {elapsed:?}"))?;
    Ok(detail)
}

const MULTITASK_SLACK: f64 = 0.01;

fn c8_multitask() -> Outcome {
    let p = prepare("correlated_rare")?;
    let rare = p.dev.schema.outcomes.len() - 1;
    let labels = p.val.labels(rare);
    let prevalence = labels.iter().map(|&v| f64::from(v)).sum::<f64>() / labels.len() as f64;
    let multi = column_auroc(&deep_probs(&p, Phase::Preop, Mode::Multitask)?, rare, &labels)?;
    let single = column_auroc(&deep_probs(&p, Phase::Preop, Mode::Single(rare))?, 0, &labels)?;
    let detail = format!(
        "{} (validation prevalence {prevalence:.3}, seed {RECIPE_SEED}): multitask {multi:.3}, single-task {single:.3}, gap {:+.3}",
        p.dev.schema.outcomes[rare],
        multi - single
    );
    ensure(multi >= single - MULTITASK_SLACK && multi > single, || detail.clone())?;
    Ok(detail)
}

const IG_ENCOUNTERS: usize = 200;
const IG_RANK_STEPS: usize = 32;
const TOP_K: usize = 3;

fn c9_missingness() -> Outcome {
    let p = prepare("missingness")?;
    let outcome = p.dev.schema.outcomes[3].clone();
    let (model, _) = train_deep(&p.dev, &p.pre, &experiment_train(), Phase::Postop, Mode::Multitask).map_err(e)?;
    let model = as_stored(&model).map_err(e)?;
    let encoded = p.pre.encode_cohort(&p.val).map_err(e)?;
    let n = IG_ENCOUNTERS.min(encoded.len());
    let results = attribute_all(&model, &p.dev.schema, &encoded[..n], &outcome, IG_RANK_STEPS).map_err(e)?;
    let ranked = rank_features(&results, TOP_K).map_err(e)?;
    let names: Vec<String> =
        ranked.iter().map(|r| format!("{} {:.3}", r.feature, r.mean_abs_attribution)).collect();
    let detail = format!("{outcome} over {n} encounters, top {TOP_K}: {}", names.join(", "));
    ensure(ranked.iter().any(|r| r.feature == "bmi:observed"), || detail.clone())?;
    Ok(detail)
}

const PIPELINE_N: usize = 2000;

fn c10_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let config = repo_root().join("configs/reproduce.toml");
    let bin = env!("CARGO_BIN_EXE_riskseq");
    let run = |args: &[&str]| -> Result<String, String> {
        let out = Command::new(bin).args(args).current_dir(tmp.path()).output().map_err(e)?;
        let stderr = String::from_utf8_lossy(&out.stderr).to_string();
        ensure(out.status.success(), || format!("`riskseq {}` failed: {stderr}", args.join(" ")))?;
        Ok(String::from_utf8_lossy(&out.stdout).to_string())
    };
    let n = PIPELINE_N.to_string();
    run(&["reproduce", "--all", "--config", config.to_str().unwrap(), "--n", &n, "--out", "report"])?;
    let report = tmp.path().join("report");

    let static_rows = std::fs::read_to_string(report.join("data/static.csv")).map_err(e)?.lines().count() - 1;
    ensure(static_rows == PIPELINE_N, || format!("{static_rows} encounters synthesized"))?;
    let metrics = MetricsReport::load(&report.join("metrics.json")).map_err(e)?;
    metrics.validate().map_err(e)?;
    let deep = metrics.models.iter().filter(|m| !m.model.ends_with("_logistic")).count();
    ensure(deep == 6 && metrics.models.len() == 9, || format!("{} models, {deep} deep", metrics.models.len()))?;
    let mut cells = 0;
    for m in &metrics.models {
        ensure(m.outcomes.len() == 9, || format!("{}: {} outcomes", m.model, m.outcomes.len()))?;
        for o in &m.outcomes {
            for (name, entry) in o.entries() {
                let populated = entry.estimate().and_then(|e| e.interval()).is_some();
                ensure(populated, || format!("{} {} {name} is not populated", m.model, o.outcome))?;
                cells += 1;
            }
        }
    }
    let table = std::fs::read_to_string(report.join("table2.csv")).map_err(e)?;
    ensure(table.lines().count() == 1 + 9 * 9, || "table2.csv does not have 81 rows".into())?;
    ensure(report.join("table2.md").exists() && report.join("nri.json").exists(), || "report files missing".into())?;

    let manifest_path = report.join("reproduce.manifest.json");
    let manifest = RunManifest::load(&manifest_path).map_err(e)?;
    let stdout = run(&["rerun", manifest_path.to_str().unwrap()])?;
    ensure(stdout.contains("byte for byte"), || stdout.clone())?;
    Ok(format!(
        "{cells} metric cells populated (7 metrics x 9 outcomes x 9 models); rerun reproduced {} files",
        manifest.outputs.len()
    ))
}
