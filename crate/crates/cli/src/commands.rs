//! One function per subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use riskseq_core::attribution::{attribute_all, rank_features, write_attributions, write_ranking};
use riskseq_core::baseline::{BaselineConfig, LogisticModel};
use riskseq_core::cohort::{load_cohort_dir, Cohort};
use riskseq_core::error::{Error, Result};
use riskseq_core::evaluation::{auroc, evaluate_model, nri, youden_threshold, MetricsReport, NriReport, OutcomeNri, METRICS_FORMAT_VERSION};
use riskseq_core::model::{read_manifest, Phase};
use riskseq_core::preprocess::PreprocessorState;
use riskseq_core::synth::{self, GroundTruth, SynthSpec};
use riskseq_core::training::TrainConfig;

use crate::cli::*;
use crate::experiment::{run_grid, skip_undefined, train_deep, ExperimentConfig};
use crate::manifest::{sha256_file, Recorder, RunManifest};
use crate::pipeline::*;

fn synth_spec(args: &SynthArgs) -> Result<SynthSpec> {
    let mut spec = match (&args.spec, &args.preset) {
        (Some(path), _) => read_toml(path)?,
        (None, Some(name)) => synth::preset(name)?,
        (None, None) => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.n {
        spec.n = n;
    }
    Ok(spec)
}

pub fn synth(args: &SynthArgs, rec: &mut Recorder) -> Result<()> {
    let spec = synth_spec(args)?;
    if let Some(path) = &args.spec {
        rec.input(path);
    }
    rec.config(&spec)?;
    rec.seed(spec.seed);
    let (cohort, truth) = synth::generate(&spec)?;
    synth::write(&cohort, &truth, &args.out)?;
    rec.output(&args.out);
    println!("wrote {} encounters to {}", cohort.len(), args.out.display());
    Ok(())
}

fn load_data(data: &Path, phase: Phase, rec: &mut Recorder) -> Result<Cohort> {
    let cohort = load_cohort_dir(data)?;
    require_inputs(&cohort, data, phase)?;
    rec.input(data);
    Ok(cohort)
}

pub fn train(args: &TrainArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => {
            rec.input(path);
            read_toml(path)?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let cohort = load_data(&args.data, args.phase, rec)?;
    let mode = parse_task_mode(&args.task_mode, &cohort.schema.outcomes)?;
    cfg.model.phase = args.phase;
    cfg.model.mode = mode;
    cfg.validate()?;
    rec.config(&cfg)?;
    rec.seed(cfg.seed);

    let (dev, _, record) = split(&cohort, &args.split)?;
    ensure_parent(&args.out)?;
    let pre = PreprocessorState::fit(&dev, &cohort.schema)?;
    let (model, history) = train_deep(&dev, &pre, &cfg, args.phase, mode)?;

    let paths = [
        args.out.clone(),
        sibling(&args.out, PREPROCESSOR_FILE),
        sibling(&args.out, HISTORY_FILE),
        sibling(&args.out, SPLIT_FILE),
    ];
    model.save(&paths[0])?;
    pre.save(&paths[1])?;
    write_json(&paths[2], &history)?;
    record.save(&paths[3])?;
    paths.iter().for_each(|p| rec.output(p));

    let best = &history.epochs[history.best_epoch];
    println!(
        "trained {} {} on {} encounters: {} epochs, best epoch {} (early-stop loss {:.4})",
        args.phase,
        mode_label(mode, &cohort.schema.outcomes),
        dev.len(),
        history.epochs.len(),
        best.epoch,
        best.es_loss
    );
    Ok(parent_dir(&args.out))
}

fn load_preprocessor(model: &Path) -> Result<PreprocessorState> {
    let path = sibling(model, PREPROCESSOR_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; train or baseline writes it beside the model",
            path.display()
        )));
    }
    PreprocessorState::load(&path)
}

pub fn evaluate(args: &EvaluateArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let cohort = load_cohort_dir(&args.data)?;
    rec.input(&args.data);
    let predictor = Predictor::load(&args.model, &cohort)?;
    require_inputs(&cohort, &args.data, predictor.phase())?;
    rec.input(&args.model);
    let pre = load_preprocessor(&args.model)?;
    rec.input(sibling(&args.model, PREPROCESSOR_FILE));
    if args.split != SplitName::All {
        rec.input(sibling(&args.model, SPLIT_FILE));
    }
    rec.seed(args.seed);

    let scored = select_split(&cohort, &args.model, args.split)?;
    if scored.is_empty() {
        return Err(Error::Data("the selected split has no encounters".into()));
    }
    let tasks = predictor.task_names();
    let probs = predictor.predict(&scored, &pre)?;
    let labels = labels_for(&scored, &tasks)?;
    let name = args.name.clone().unwrap_or_else(|| predictor.default_name(&cohort.schema.outcomes));
    let report = evaluate_model(&name, &tasks, &probs, &labels, args.bootstrap, args.seed)?;
    let metrics = MetricsReport::new(args.bootstrap, args.seed, vec![report]);
    ensure_parent(&args.out)?;
    metrics.save(&args.out)?;
    rec.output(&args.out);
    if let Some(path) = &args.predictions {
        ensure_parent(path)?;
        let ids: Vec<String> = scored.encounters.iter().map(|e| e.encounter_id.clone()).collect();
        write_predictions(path, &ids, &tasks, &probs)?;
        rec.output(path);
    }

    println!("{name} on {} encounters", scored.len());
    for o in &metrics.models[0].outcomes {
        let show = |e: &riskseq_core::evaluation::MetricEntry| {
            e.estimate().map(|e| format!("{:.3}", e.point)).unwrap_or_else(|| "undefined".into())
        };
        println!("  {:<28} AUROC {}  AUPRC {}", o.outcome, show(&o.auroc), show(&o.auprc));
    }
    Ok(parent_dir(&args.out))
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string()
}

pub fn nri_cmd(args: &NriArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let old = read_predictions(&args.old)?;
    let new = read_predictions(&args.new)?;
    let labels = read_labels(&args.labels)?;
    for p in [&args.old, &args.new, &args.labels] {
        rec.input(p);
    }
    rec.seed(args.seed);
    let new = new.aligned(&old.ids, &args.new.display().to_string())?;
    let labels = labels.aligned(&old.ids, &args.labels.display().to_string())?;
    let outcomes: Vec<&String> = labels
        .columns
        .iter()
        .filter(|c| old.columns.contains(c) && new.columns.contains(c))
        .collect();
    if outcomes.is_empty() {
        return Err(Error::Data("the prediction files share no outcome with the labels".into()));
    }
    let shared = outcomes.len();
    let mut results = Vec::new();
    for outcome in outcomes {
        let y = labels.column(outcome).expect("column exists");
        let (po, pn) = (old.column(outcome).expect("column exists"), new.column(outcome).expect("column exists"));
        let computed = youden_threshold(&po, &y).and_then(|(t_old, _)| {
            let (t_new, _) = youden_threshold(&pn, &y)?;
            nri(&po, &pn, &y, t_old, t_new, args.bootstrap, args.seed)
        });
        let Some(result) = skip_undefined(computed)? else {
            println!("  {outcome:<28} NRI undefined");
            continue;
        };
        println!(
            "  {:<28} NRI {:+.3} (events {:+.3}, non-events {:+.3}, p = {:.3})",
            outcome, result.nri_index.point, result.event_component, result.nonevent_component, result.p_value
        );
        results.push(OutcomeNri { outcome: outcome.clone(), result });
    }
    if results.is_empty() {
        return Err(Error::Data(format!("NRI is undefined for all {shared} shared outcomes")));
    }
    let report = NriReport {
        format_version: METRICS_FORMAT_VERSION,
        old_model: stem(&args.old),
        new_model: stem(&args.new),
        n_resamples: args.bootstrap,
        seed: args.seed,
        outcomes: results,
    };
    ensure_parent(&args.out)?;
    report.save(&args.out)?;
    rec.output(&args.out);
    Ok(parent_dir(&args.out))
}

pub fn attribute(args: &AttributeArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let cohort = load_cohort_dir(&args.data)?;
    rec.input(&args.data);
    let model = match Predictor::load(&args.model, &cohort)? {
        Predictor::Deep(m) if m.phase() == Phase::Postop => m,
        _ => {
            return Err(Error::Config(format!(
                "{} is not a postoperative network; attribution covers postop checkpoints",
                args.model.display()
            )))
        }
    };
    require_inputs(&cohort, &args.data, Phase::Postop)?;
    if !model.task_names.contains(&args.outcome) {
        return Err(Error::Config(format!(
            "the model has no `{}` output (outputs: {})",
            args.outcome,
            model.task_names.join(", ")
        )));
    }
    if args.steps == 0 {
        return Err(Error::Config("--steps must be at least 1".into()));
    }
    rec.input(&args.model);
    let pre = load_preprocessor(&args.model)?;
    let scored = select_split(&cohort, &args.model, args.split)?;
    let mut encoded = pre.encode_cohort(&scored)?;
    if let Some(limit) = args.limit {
        encoded.truncate(limit);
    }
    if encoded.is_empty() {
        return Err(Error::Data("no encounters to attribute".into()));
    }
    let results = attribute_all(&model, &cohort.schema, &encoded, &args.outcome, args.steps)?;
    let ranked = rank_features(&results, args.top)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let paths = [args.out.join("attributions.csv"), args.out.join("ranking.csv")];
    write_attributions(&paths[0], &results)?;
    write_ranking(&paths[1], &args.outcome, &ranked)?;
    paths.iter().for_each(|p| rec.output(p));

    let gap = results.iter().map(|r| r.completeness_gap.abs()).fold(0.0, f64::max);
    println!(
        "attributed {} on {} encounters ({} steps, max completeness gap {gap:.2e})",
        args.outcome,
        results.len(),
        args.steps
    );
    for (i, f) in ranked.iter().take(10).enumerate() {
        println!("  {:>2}. {:<36} {:.4}", i + 1, f.feature, f.mean_abs_attribution);
    }
    Ok(args.out.clone())
}

pub fn baseline(args: &BaselineArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let cfg: BaselineConfig = match &args.config {
        Some(path) => {
            rec.input(path);
            read_toml(path)?
        }
        None => BaselineConfig::default(),
    };
    rec.config(&cfg)?;
    let cohort = load_data(&args.data, args.phase, rec)?;
    let (dev, _, record) = split(&cohort, &args.split)?;
    ensure_parent(&args.out)?;
    let pre = PreprocessorState::fit(&dev, &cohort.schema)?;
    let model = LogisticModel::fit(&dev, args.phase, &pre, &cfg)?;
    let paths = [args.out.clone(), sibling(&args.out, PREPROCESSOR_FILE), sibling(&args.out, SPLIT_FILE)];
    model.save(&paths[0])?;
    pre.save(&paths[1])?;
    record.save(&paths[2])?;
    paths.iter().for_each(|p| rec.output(p));
    println!("fitted {} logistic baseline on {} encounters", args.phase, dev.len());
    Ok(parent_dir(&args.out))
}

pub fn inspect(args: &InspectArgs) -> Result<()> {
    let manifest = read_manifest(&args.checkpoint)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    Ok(())
}

pub fn reproduce(args: &ReproduceArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(path) => {
            rec.input(path);
            read_toml(path)?
        }
        None => ExperimentConfig::default(),
    };
    if args.n.is_some() {
        cfg.n = args.n;
    }
    if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
        return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
    }
    cfg.train.validate()?;
    let phases: Vec<Phase> = if args.all {
        Phase::ALL.to_vec()
    } else {
        Phase::ALL.into_iter().filter(|p| args.phase.contains(p)).collect()
    };
    rec.config(&cfg)?;
    rec.seed(cfg.train.seed);
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let (cohort, truth) = match &args.data {
        Some(data) => {
            let cohort = load_cohort_dir(data)?;
            for &p in &phases {
                require_inputs(&cohort, data, p)?;
            }
            rec.input(data);
            (cohort, None)
        }
        None => {
            let mut spec = synth::preset(&cfg.preset)?;
            spec.n = cfg.n.unwrap_or(spec.n);
            spec.seed = cfg.synth_seed.unwrap_or(spec.seed);
            let (cohort, truth) = synth::generate(&spec)?;
            let dir = args.out.join("data");
            synth::write(&cohort, &truth, &dir)?;
            rec.output(&dir);
            (cohort, Some(truth))
        }
    };
    let split_args = SplitArgs { validation_fraction: cfg.validation_fraction, cutoff: None };
    let (dev, val, record) = split(&cohort, &split_args)?;
    let result = run_grid(&dev, &val, &record, &phases, &cfg, &args.out)?;
    result.outputs.iter().for_each(|p| rec.output(p));
    if let Some(truth) = truth {
        let path = args.out.join("oracle.json");
        write_json(&path, &oracle(&truth, &val)?)?;
        rec.output(&path);
    }
    print!("{}", crate::experiment::table_markdown(&result.metrics));
    Ok(args.out.clone())
}

/// AUROC of the generating logits on the validation split, per outcome;
/// null where an outcome has a single class there.
fn oracle(truth: &GroundTruth, val: &Cohort) -> Result<BTreeMap<String, Option<f64>>> {
    let ids: Vec<String> = val.encounters.iter().map(|e| e.encounter_id.clone()).collect();
    let truth = truth.subset(&ids)?;
    Ok(val
        .schema
        .outcomes
        .iter()
        .enumerate()
        .map(|(k, name)| (name.clone(), auroc(&truth.logits_for(k), &val.labels(k)).ok()))
        .collect())
}

pub fn rerun(args: &RerunArgs) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    let base = PathBuf::from(&manifest.working_dir);
    let changed = |files: &[crate::manifest::FileDigest]| -> Result<Vec<String>> {
        let mut out = Vec::new();
        for f in files {
            let path = base.join(&f.path);
            if !path.exists() || sha256_file(&path)? != f.sha256 {
                out.push(f.path.clone());
            }
        }
        Ok(out)
    };
    let inputs = changed(&manifest.inputs)?;
    if !inputs.is_empty() {
        return Err(Error::Data(format!("inputs differ from the recorded run: {}", inputs.join(", "))));
    }
    let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
    log::info!("re-running `{}` in {}", manifest.args.join(" "), base.display());
    let status = std::process::Command::new(exe)
        .args(&manifest.args)
        .current_dir(&base)
        .status()
        .map_err(|e| Error::io(&base, e))?;
    if !status.success() {
        return Err(Error::Data(format!("the re-run exited with {status}")));
    }
    let outputs = changed(&manifest.outputs)?;
    if !outputs.is_empty() {
        return Err(Error::Data(format!(
            "{} of {} outputs differ from the recorded run: {}",
            outputs.len(),
            manifest.outputs.len(),
            outputs.join(", ")
        )));
    }
    println!("reproduced {} outputs byte for byte", manifest.outputs.len());
    Ok(())
}
