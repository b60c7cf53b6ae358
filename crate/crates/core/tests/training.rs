//! Training loop behaviour: convergence, determinism and loss invariants.

mod common;

use common::{random_cohort, small_schema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskseq_core::model::{Mode, Model, ModelConfig, Phase};
use riskseq_core::numerics::{AdamConfig, AdamState, Tensor};
use riskseq_core::preprocess::{EncodedEncounter, PreprocessorState};
use riskseq_core::schema::FeatureSchema;
use riskseq_core::training::*;

fn tiny(phase: Phase) -> ModelConfig {
    ModelConfig {
        hidden: 6,
        conv_channels: 4,
        conv_layers: 2,
        embed_dim: 3,
        phase,
        ..Default::default()
    }
}

fn samples(schema: &FeatureSchema, n: usize, seed: u64) -> Vec<EncodedEncounter> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = schema.series_width();
    (0..n)
        .map(|i| {
            let t = rng.random_range(1..12);
            EncodedEncounter {
                encounter_id: format!("s{i}"),
                numeric_static: (0..schema.numeric_width()).map(|_| rng.random_range(-1.5..1.5)).collect(),
                embedded_ids: schema
                    .embedded_features()
                    .map(|f| rng.random_range(0..f.levels.len()))
                    .collect(),
                series: Tensor::new(vec![t, w], (0..t * w).map(|_| rng.random_range(-1.5..1.5)).collect())
                    .unwrap(),
                // Alternate labels so every task has both classes.
                labels: (0..9).map(|k| ((i + k) % 2) as u8).collect(),
            }
        })
        .collect()
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn overfits_a_single_batch() {
    let s = small_schema();
    let batch = samples(&s, 8, 1);
    let refs: Vec<&EncodedEncounter> = batch.iter().collect();
    let mut model = Model::build(&tiny(Phase::Postop), &s, 2).unwrap();
    let weights = task_class_weights(&model, &batch).unwrap();
    let adam = AdamConfig { lr: 0.01, l2: 0.0, ..Default::default() };
    let mut state = AdamState::new();
    let first = train_step(&mut model, &refs, &weights, &mut state, &adam).unwrap();
    for _ in 1..500 {
        train_step(&mut model, &refs, &weights, &mut state, &adam).unwrap();
    }
    let last = batch_loss_and_grads(&model, &refs, &weights).unwrap().0;
    assert!(last <= 0.1 * first, "loss {first} -> {last}");
}

#[test]
fn per_task_gradients_add_up() {
    let s = small_schema();
    let enc = &samples(&s, 1, 3)[0];
    let model = Model::build(&tiny(Phase::Postop), &s, 5).unwrap();
    let weights = vec![ClassWeights { w_pos: 1.7, w_neg: 0.6 }; 9];
    let (total_loss, total) = sample_loss_and_grads(&model, enc, &weights).unwrap();
    let mut loss_sum = 0.0;
    let mut sum: Option<Vec<(String, Tensor)>> = None;
    for k in 0..9 {
        let only: Vec<ClassWeights> = (0..9)
            .map(|j| if j == k { weights[j] } else { ClassWeights { w_pos: 0.0, w_neg: 0.0 } })
            .collect();
        let (l, g) = sample_loss_and_grads(&model, enc, &only).unwrap();
        loss_sum += l;
        match sum.as_mut() {
            None => sum = Some(g.into_iter().collect()),
            Some(acc) => {
                for (slot, (_, t)) in acc.iter_mut().zip(g) {
                    slot.1.add_assign(&t);
                }
            }
        }
    }
    assert!((loss_sum - total_loss).abs() < 1e-10);
    for (name, t) in sum.unwrap() {
        assert!(close(&t, &total[&name], 1e-10), "{name}");
    }
}

#[test]
fn duplicating_negatives_with_scaled_weight_keeps_summed_loss() {
    let s = small_schema();
    let base = samples(&s, 6, 9);
    let cfg = ModelConfig { mode: Mode::Single(0), ..tiny(Phase::Preop) };
    let model = Model::build(&cfg, &s, 1).unwrap();
    let w = ClassWeights { w_pos: 2.5, w_neg: 0.8 };
    let refs: Vec<&EncodedEncounter> = base.iter().collect();
    let summed = batch_loss_and_grads(&model, &refs, &[w]).unwrap().0 * refs.len() as f64;
    for k in [2usize, 3, 5] {
        let mut dup: Vec<&EncodedEncounter> = Vec::new();
        for e in &base {
            let copies = if e.labels[0] == 0 { k } else { 1 };
            dup.extend(std::iter::repeat_n(e, copies));
        }
        let scaled = ClassWeights { w_pos: w.w_pos, w_neg: w.w_neg / k as f64 };
        let loss = batch_loss_and_grads(&model, &dup, &[scaled]).unwrap().0 * dup.len() as f64;
        assert!((loss - summed).abs() < 1e-12, "k={k}: {loss} vs {summed}");
    }
}

#[test]
fn batch_gradients_do_not_depend_on_thread_count() {
    let s = small_schema();
    let batch = samples(&s, 7, 4);
    let refs: Vec<&EncodedEncounter> = batch.iter().collect();
    let model = Model::build(&tiny(Phase::Postop), &s, 8).unwrap();
    let weights = task_class_weights(&model, &batch).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| batch_loss_and_grads(&model, &refs, &weights).unwrap())
    };
    let (l1, g1) = run(1);
    let (l3, g3) = run(3);
    assert_eq!(l1.to_bits(), l3.to_bits());
    assert_eq!(g1, g3);
}

#[test]
fn fit_is_deterministic_and_returns_best_epoch() {
    let s = small_schema();
    let train = samples(&s, 24, 10);
    let es = samples(&s, 8, 11);
    let cfg = TrainConfig {
        batch: 8,
        max_epochs: 6,
        patience: 2,
        lr: 0.005,
        seed: 3,
        model: tiny(Phase::Postop),
        ..Default::default()
    };
    let build = || Model::build(&cfg.model, &s, cfg.seed).unwrap();
    let (m1, h1) = fit(build(), &train, &es, &cfg).unwrap();
    let (m2, h2) = fit(build(), &train, &es, &cfg).unwrap();
    assert_eq!(h1.without_timing(), h2.without_timing());
    assert_eq!(m1, m2);

    let best = &h1.epochs[h1.best_epoch];
    assert!(h1.epochs.iter().all(|e| e.es_loss >= best.es_loss));
    let weights = task_class_weights(&m1, &train).unwrap();
    let per_task = task_losses(&m1, &es, &weights).unwrap();
    assert_eq!(per_task, best.es_task_loss);
    let mean = per_task.iter().sum::<f64>() / per_task.len() as f64;
    assert_eq!(mean, best.es_loss);
    if h1.stopped_early {
        assert_eq!(h1.epochs.len(), h1.best_epoch + 1 + cfg.patience);
    } else {
        assert_eq!(h1.epochs.len(), cfg.max_epochs);
    }
}

#[test]
fn single_class_task_is_named_in_error() {
    let s = small_schema();
    let mut train = samples(&s, 6, 2);
    for e in &mut train {
        e.labels[3] = 0;
    }
    let model = Model::build(&tiny(Phase::Preop), &s, 0).unwrap();
    let err = task_class_weights(&model, &train).unwrap_err().to_string();
    assert!(err.contains(&s.outcomes[3]), "{err}");
}

#[test]
fn end_to_end_training_on_a_cohort() {
    let s = small_schema();
    let dev = random_cohort(&s, 40, 17);
    let pre = PreprocessorState::fit(&dev, &s).unwrap();
    let cfg = TrainConfig {
        batch: 16,
        max_epochs: 2,
        seed: 1,
        model: tiny(Phase::Intraop),
        ..Default::default()
    };
    let (model, history) = train(&dev, &pre, &cfg).unwrap();
    assert_eq!(history.train_size, 36);
    assert_eq!(history.es_size, 4);
    assert_eq!(history.epochs.len(), 2);
    assert!(history.epochs.iter().all(|e| e.train_loss.is_finite() && e.es_loss.is_finite()));
    assert_eq!(model.task_names.len(), 9);

    let (tr, es) = early_stop_split(&dev, 0.1).unwrap();
    let latest_train = tr.iter().map(|&i| dev.encounters[i].admit_timestamp).max().unwrap();
    assert!(es.iter().all(|&i| dev.encounters[i].admit_timestamp >= latest_train));
}
