//! Synthetic cohorts: planted prevalence, determinism on disk and oracles.

use riskseq_core::cohort::load_cohort_dir;
use riskseq_core::evaluation::auroc;
use riskseq_core::schema::SchemaDims;
use riskseq_core::synth::*;

fn small(name: &str, n: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n,
        seed,
        dims: SchemaDims { continuous: 50, binary: 4, onehot: 3, embedded: vec![25, 30] },
        duration: DurationSpec { median: 25.0, sigma: 0.3, min: 20, max: 40 },
        ..preset(name).unwrap()
    }
}

#[test]
fn null_cohort_has_target_prevalence_and_no_signal() {
    let (cohort, truth) = generate(&small("null", 4000, 1)).unwrap();
    for k in 0..cohort.schema.outcomes.len() {
        let y = cohort.labels(k);
        let prevalence = y.iter().map(|&v| f64::from(v)).sum::<f64>() / y.len() as f64;
        assert!((prevalence - 0.2).abs() <= 0.02, "outcome {k}: {prevalence}");
        // Constant logits carry no ranking information.
        assert_eq!(auroc(&truth.logits_for(k), &y).unwrap(), 0.5);
    }
}

#[test]
fn threshold_rule_without_noise_is_perfectly_ranked_by_truth() {
    let mut spec = small("nonlinear", 600, 2);
    spec.outcomes[1].rule = LabelRule::Threshold;
    let (cohort, truth) = generate(&spec).unwrap();
    let oracle = oracle_auroc(&truth, &cohort).unwrap();
    assert_eq!(oracle[1], 1.0);
    let y = cohort.labels(1);
    let prevalence = y.iter().map(|&v| f64::from(v)).sum::<f64>() / y.len() as f64;
    assert!((prevalence - 0.3).abs() <= 0.01);
}

#[test]
fn default_cohort_carries_signal_for_every_outcome() {
    let (cohort, truth) = generate(&small("default", 3000, 3)).unwrap();
    for (k, a) in oracle_auroc(&truth, &cohort).unwrap().into_iter().enumerate() {
        assert!(a > 0.6, "outcome {k}: oracle AUROC {a}");
    }
}

#[test]
fn missingness_preset_ties_an_outcome_to_bmi_being_recorded() {
    let (cohort, _) = generate(&small("missingness", 3000, 4)).unwrap();
    let recorded: Vec<f64> = cohort
        .encounters
        .iter()
        .map(|e| f64::from(u8::from(e.static_values.contains_key("bmi"))))
        .collect();
    let share = recorded.iter().sum::<f64>() / recorded.len() as f64;
    assert!((share - 0.5).abs() < 0.05, "{share}");
    assert!(auroc(&recorded, &cohort.labels(3)).unwrap() > 0.75);
}

#[test]
fn written_cohorts_are_byte_identical_and_reload() {
    let spec = small("default", 80, 9);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let (cohort, truth) = generate(&spec).unwrap();
        write(&cohort, &truth, d.path()).unwrap();
    }
    for file in ["schema.json", "static.csv", "series.csv", "outcomes.csv", "ground_truth.csv"] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let (cohort, truth) = generate(&spec).unwrap();
    let loaded = load_cohort_dir(dirs[0].path()).unwrap();
    assert_eq!(loaded.encounters, cohort.encounters);
    let read = GroundTruth::read_csv(&dirs[0].path().join("ground_truth.csv")).unwrap();
    assert_eq!(read.logits, truth.logits);
    let ids: Vec<String> = cohort.encounters.iter().map(|e| e.encounter_id.clone()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert!(cohort.encounters.windows(2).all(|w| w[0].admit_timestamp <= w[1].admit_timestamp));
}

#[test]
fn specs_round_trip_and_reject_unknown_fields() {
    let spec = preset("correlated_rare").unwrap();
    let json = serde_json::to_string(&spec).unwrap();
    let back: SynthSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, spec);
    assert!(serde_json::from_str::<SynthSpec>(r#"{"n": 5, "bogus": 1}"#).is_err());
    let mut bad = spec;
    bad.outcomes[8].prevalence = 0.9;
    assert!(generate(&bad).is_err());
}
