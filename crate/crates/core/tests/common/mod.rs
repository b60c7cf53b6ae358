//! Random cohorts over a small schema, shared by integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskseq_core::cohort::{Cohort, RawEncounter, SeriesPoint, StaticValue};
use riskseq_core::schema::{schema_with_dims, FeatureKind, FeatureSchema, SchemaDims};

pub fn small_schema() -> FeatureSchema {
    schema_with_dims(&SchemaDims {
        continuous: 10,
        binary: 4,
        onehot: 3,
        embedded: vec![25, 30],
    })
    .unwrap()
}

pub fn random_cohort(schema: &FeatureSchema, n: usize, seed: u64) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = riskseq_core::cohort::parse_timestamp("2016-01-01T00:00:00").unwrap();
    let encounters = (0..n)
        .map(|i| {
            let mut static_values = BTreeMap::new();
            for f in &schema.features {
                if f.cyclical.is_some() || rng.random_bool(0.3) {
                    continue;
                }
                let v = match f.kind {
                    FeatureKind::Continuous => StaticValue::Number(rng.random_range(-50.0..150.0)),
                    FeatureKind::Binary => StaticValue::Number(f64::from(rng.random_range(0..2u8))),
                    FeatureKind::Nominal => {
                        StaticValue::Level(f.levels[rng.random_range(0..f.levels.len())].clone())
                    }
                };
                static_values.insert(f.name.clone(), v);
            }
            let t = rng.random_range(1..40u32);
            let mut series = Vec::new();
            for _ in 0..rng.random_range(0..60) {
                let channel = rng.random_range(0..schema.channels.len());
                let (lo, hi) = schema.channels[channel].valid_range;
                let span = hi - lo;
                series.push(SeriesPoint {
                    minute: rng.random_range(0..t),
                    channel,
                    // Some readings fall outside the valid range.
                    value: rng.random_range(lo - 0.2 * span..hi + 0.2 * span),
                });
            }
            RawEncounter {
                encounter_id: format!("e{i}"),
                admit_timestamp: base + chrono::Duration::hours(rng.random_range(0..20_000)),
                static_values,
                series,
                outcomes: (0..9).map(|_| rng.random_range(0..2)).collect(),
            }
        })
        .collect();
    Cohort::new(schema.clone(), encounters).unwrap()
}
