//! The stages behind every subcommand. Each one reads its inputs from disk,
//! writes its outputs, and drops a manifest of content hashes and seeds next
//! to them, so a rerun is checkable byte for byte. The backend response
//! cache never appears in a manifest: deleting it changes how long a run
//! takes, never what it produces.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use riskroute_core::ablate::{run_ablations, AblationBundle, AblationConfig, AblationError};
use riskroute_core::cohort::{
    derive_windows, index_patients, label_cases, match_controls, GdSettings, WindowedMember,
};
use riskroute_core::ensemble::fit_ensemble;
use riskroute_core::eval::{
    evaluate, split_dataset, threshold_sweep, EvalError, MetricsReport, SweepRow,
};
use riskroute_core::icl::{
    build_reliable_set, CachedBackend, LlmBackend, LlmResponse, MockBackend, ReliableSet,
};
use riskroute_core::preprocess::{fit_stats, vectorize_member, PreprocessStats};
use riskroute_core::router::{route_all, IclArm};
use riskroute_core::synth::generate;
use riskroute_core::{CodeDescriptions, Date, FeatureSchema, LabeledSample, RawPatient};

use crate::config::{
    load_grids, load_rules, load_templates, write_rules, BackendKind, BackendSection,
    PipelineConfig, ICL_HEADER_FILE, SUMMARY_TEMPLATE_FILE,
};
use crate::http::HttpBackend;
use crate::io::{
    read_code_maps, read_features_csv, read_json, read_jsonl, read_model_bundle, write_code_maps,
    write_features_csv, write_json, write_jsonl, ModelBundle, PredictionRecord, BUNDLE_VERSION,
    MAP_FILES,
};
use crate::manifest::{hash_files, new_manifest, sha256_bytes, write_manifest, FileHash};
use crate::CliError;

/// Canonical artifact locations inside one output directory. Standalone
/// subcommands override individual fields to read or write elsewhere; the
/// stage functions only ever look at the fields.
#[derive(Debug, Clone)]
pub struct ArtifactPaths {
    pub dir: PathBuf,
    pub raw_patients: PathBuf,
    pub features: PathBuf,
    pub maps_dir: PathBuf,
    pub rules: PathBuf,
    pub cohort: PathBuf,
    pub stats: PathBuf,
    pub samples: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub model: PathBuf,
    pub reliable: PathBuf,
    pub predictions: PathBuf,
    pub metrics: PathBuf,
    pub sweep: PathBuf,
    pub ablation: PathBuf,
}

impl ArtifactPaths {
    pub fn new(dir: &Path) -> Self {
        ArtifactPaths {
            dir: dir.to_path_buf(),
            raw_patients: dir.join("raw_patients.jsonl"),
            features: dir.join("features.csv"),
            maps_dir: dir.join("maps"),
            rules: dir.join("rules.toml"),
            cohort: dir.join("cohort.jsonl"),
            stats: dir.join("stats.json"),
            samples: dir.join("samples.jsonl"),
            train: dir.join("train.jsonl"),
            test: dir.join("test.jsonl"),
            model: dir.join("model.json"),
            reliable: dir.join("reliable.json"),
            predictions: dir.join("predictions.jsonl"),
            metrics: dir.join("metrics.json"),
            sweep: dir.join("sweep.json"),
            ablation: dir.join("ablation.json"),
        }
    }
}

pub fn make_backend(section: &BackendSection) -> Result<Box<dyn LlmBackend>, CliError> {
    match section.kind {
        BackendKind::Mock => Ok(Box::new(MockBackend)),
        BackendKind::Http => {
            if section.url.is_empty() {
                return Err(CliError::validation("backend.kind = \"http\" requires backend.url"));
            }
            Ok(Box::new(HttpBackend::new(section.url.clone(), section.token.clone())))
        }
    }
}

/// Hash of the effective configuration, recorded as the first input of every
/// manifest. The backend token is replaced by a fixed marker first: a secret
/// must not be recoverable from a manifest, yet the manifest should still
/// notice a token appearing or disappearing.
fn config_fingerprint(config: &PipelineConfig) -> Result<FileHash, CliError> {
    let mut scrubbed = config.clone();
    if scrubbed.backend.token.is_some() {
        scrubbed.backend.token = Some(String::from("<set>"));
    }
    let bytes = serde_json::to_vec(&scrubbed)
        .map_err(|e| CliError::validation(format!("fingerprint config: {e}")))?;
    Ok(FileHash { name: String::from("config"), sha256: sha256_bytes(&bytes) })
}

fn finish_manifest(
    config: &PipelineConfig,
    paths: &ArtifactPaths,
    stage: &'static str,
    seeds: &[(&str, u64)],
    inputs: &[(&str, &Path)],
    outputs: &[(&str, &Path)],
) -> Result<(), CliError> {
    let mut manifest = new_manifest(stage, seeds);
    manifest.inputs.push(config_fingerprint(config)?);
    manifest.inputs.extend(hash_files(inputs).map_err(|e| CliError::stage(stage, e))?);
    manifest.outputs = hash_files(outputs).map_err(|e| CliError::stage(stage, e))?;
    write_manifest(&paths.dir, &manifest).map_err(|e| CliError::stage(stage, e))
}

fn ensure_dir(dir: &Path, stage: &'static str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::stage(stage, e))
}

fn require_artifacts(files: &[(&str, &Path)]) -> Result<(), CliError> {
    for (name, path) in files {
        if !path.is_file() {
            return Err(CliError::validation(format!(
                "{name} not found at {}; run the pipeline first",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Manifest label for a configurable input file.
fn file_label(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn load_cache(
    path: Option<&Path>,
    stage: &'static str,
) -> Result<BTreeMap<String, LlmResponse>, CliError> {
    match path {
        Some(p) if p.exists() => read_json(p).map_err(|e| CliError::stage(stage, e)),
        _ => Ok(BTreeMap::new()),
    }
}

fn save_cache(
    path: Option<&Path>,
    cached: &CachedBackend<'_>,
    stage: &'static str,
) -> Result<(), CliError> {
    match path {
        Some(p) => write_json(p, &cached.snapshot()).map_err(|e| CliError::stage(stage, e)),
        None => Ok(()),
    }
}

/// Generates the synthetic dataset: raw patients, the feature table, the
/// code maps, and the case-definition rules matching the planted codes.
pub fn stage_gen_synth(config: &PipelineConfig, paths: &ArtifactPaths) -> Result<(), CliError> {
    ensure_dir(&paths.dir, "gen-synth")?;
    let data = generate(&config.synth).map_err(|e| CliError::stage("gen-synth", e))?;
    write_jsonl(&paths.raw_patients, &data.patients)
        .map_err(|e| CliError::stage("gen-synth", e))?;
    write_features_csv(&paths.features, data.schema.continuous())
        .map_err(|e| CliError::stage("gen-synth", e))?;
    write_code_maps(&paths.maps_dir, &data.maps).map_err(|e| CliError::stage("gen-synth", e))?;
    write_rules(&paths.rules, &data.rule)?;

    let map_paths: Vec<PathBuf> = MAP_FILES.iter().map(|(f, _)| paths.maps_dir.join(f)).collect();
    let mut outputs: Vec<(&str, &Path)> = vec![
        ("raw_patients.jsonl", &paths.raw_patients),
        ("features.csv", &paths.features),
        ("rules.toml", &paths.rules),
    ];
    for ((name, _), p) in MAP_FILES.iter().zip(&map_paths) {
        outputs.push((name, p));
    }
    finish_manifest(config, paths, "gen-synth", &[("synth", config.synth.seed)], &[], &outputs)
}

/// Labels cases, matches controls, and applies the prediction window. The
/// configured qualifying-encounter count overrides whatever the rules file
/// carries, so one rules artifact serves both case definitions.
pub fn stage_build_cohort(config: &PipelineConfig, paths: &ArtifactPaths) -> Result<(), CliError> {
    ensure_dir(&paths.dir, "build-cohort")?;
    let patients: Vec<RawPatient> =
        read_jsonl(&paths.raw_patients).map_err(|e| CliError::stage("build-cohort", e))?;
    let maps = read_code_maps(&paths.maps_dir).map_err(|e| CliError::stage("build-cohort", e))?;
    let mut rule = load_rules(&paths.rules)?;
    rule.min_diagnosis_encounters = config.cohort.cp;

    let patients = index_patients(patients);
    let labeling = label_cases(&patients, &rule).map_err(|e| CliError::stage("build-cohort", e))?;
    let matched =
        match_controls(&patients, &labeling, &maps, config.cohort.ratio, GdSettings::default())
            .map_err(|e| CliError::stage("build-cohort", e))?;
    let members = derive_windows(
        &matched,
        &patients,
        config.cohort.pw_years,
        config.cohort.min_observation_years,
    )
    .map_err(|e| CliError::stage("build-cohort", e))?;
    write_jsonl(&paths.cohort, &members).map_err(|e| CliError::stage("build-cohort", e))?;

    let map_paths: Vec<PathBuf> = MAP_FILES.iter().map(|(f, _)| paths.maps_dir.join(f)).collect();
    let mut inputs: Vec<(&str, &Path)> =
        vec![("raw_patients.jsonl", &paths.raw_patients), ("rules.toml", &paths.rules)];
    for ((name, _), p) in MAP_FILES.iter().zip(&map_paths) {
        inputs.push((name, p));
    }
    finish_manifest(
        config,
        paths,
        "build-cohort",
        &[],
        &inputs,
        &[("cohort.jsonl", &paths.cohort)],
    )
}

/// Rebuilds the schema from the feature table and code maps, fits the
/// normalization statistics on the windowed histories, and vectorizes every
/// cohort member.
pub fn stage_preprocess(config: &PipelineConfig, paths: &ArtifactPaths) -> Result<(), CliError> {
    ensure_dir(&paths.dir, "preprocess")?;
    let members: Vec<WindowedMember> =
        read_jsonl(&paths.cohort).map_err(|e| CliError::stage("preprocess", e))?;
    let features = read_features_csv(&paths.features)
        .map_err(|e| CliError::stage("preprocess", e))?;
    let maps = read_code_maps(&paths.maps_dir).map_err(|e| CliError::stage("preprocess", e))?;
    let schema = FeatureSchema::from_maps(features, &maps)
        .map_err(|e| CliError::stage("preprocess", e))?;

    let histories: Vec<&RawPatient> = members.iter().map(|m| &m.patient).collect();
    let stats = fit_stats(&histories, &schema).map_err(|e| CliError::stage("preprocess", e))?;
    let samples: Vec<LabeledSample> = members
        .iter()
        .map(|m| vectorize_member(m, &stats, &maps))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::stage("preprocess", e))?;

    write_json(&paths.stats, &stats).map_err(|e| CliError::stage("preprocess", e))?;
    write_jsonl(&paths.samples, &samples).map_err(|e| CliError::stage("preprocess", e))?;

    let map_paths: Vec<PathBuf> = MAP_FILES.iter().map(|(f, _)| paths.maps_dir.join(f)).collect();
    let mut inputs: Vec<(&str, &Path)> =
        vec![("cohort.jsonl", &paths.cohort), ("features.csv", &paths.features)];
    for ((name, _), p) in MAP_FILES.iter().zip(&map_paths) {
        inputs.push((name, p));
    }
    finish_manifest(
        config,
        paths,
        "preprocess",
        &[],
        &inputs,
        &[("stats.json", &paths.stats), ("samples.jsonl", &paths.samples)],
    )
}

/// Tunes and fits the ensemble, bundling the model with the schema its
/// features were laid out against. With `split_input` the sample table is
/// first divided into persisted train/test halves and only the training
/// half is fitted; without it the whole input is the training set.
pub fn stage_train(
    config: &PipelineConfig,
    paths: &ArtifactPaths,
    split_input: bool,
) -> Result<(), CliError> {
    ensure_dir(&paths.dir, "train")?;
    let samples: Vec<LabeledSample> =
        read_jsonl(&paths.samples).map_err(|e| CliError::stage("train", e))?;
    let stats: PreprocessStats =
        read_json(&paths.stats).map_err(|e| CliError::stage("train", e))?;
    let (grids, warnings) = load_grids(&config.paths.grids)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let settings = config.fit.to_settings();
    let train = if split_input {
        let (train, test) = split_dataset(&samples, &config.split, settings.seed)
            .map_err(eval_err("train"))?;
        write_jsonl(&paths.train, &train).map_err(|e| CliError::stage("train", e))?;
        write_jsonl(&paths.test, &test).map_err(|e| CliError::stage("train", e))?;
        train
    } else {
        samples
    };
    let ensemble =
        fit_ensemble(&grids, &train, &settings).map_err(|e| CliError::stage("train", e))?;
    let bundle = ModelBundle { version: BUNDLE_VERSION, schema: stats.schema, ensemble };
    write_json(&paths.model, &bundle).map_err(|e| CliError::stage("train", e))?;

    let grids_label = file_label(&config.paths.grids);
    let inputs: Vec<(&str, &Path)> = vec![
        ("samples.jsonl", &paths.samples),
        ("stats.json", &paths.stats),
        (&grids_label, &config.paths.grids),
    ];
    let mut outputs: Vec<(&str, &Path)> = vec![("model.json", &paths.model)];
    if split_input {
        outputs.push(("train.jsonl", &paths.train));
        outputs.push(("test.jsonl", &paths.test));
    }
    finish_manifest(config, paths, "train", &[("fit", settings.seed)], &inputs, &outputs)
}

/// Routes the held-out samples: confident ones take the supervised label,
/// the rest are answered by the language model over retrieved
/// demonstrations. `build_pool` selects between building the demonstration
/// pool from the persisted training half and loading a previously built one.
pub fn stage_route(
    config: &PipelineConfig,
    paths: &ArtifactPaths,
    build_pool: bool,
) -> Result<(), CliError> {
    ensure_dir(&paths.dir, "route")?;
    let bundle = read_model_bundle(&paths.model).map_err(|e| CliError::stage("route", e))?;
    let test: Vec<LabeledSample> =
        read_jsonl(&paths.test).map_err(|e| CliError::stage("route", e))?;
    let descriptions = CodeDescriptions::generic(&bundle.schema);
    let templates = match &config.paths.templates {
        Some(dir) => Some(load_templates(dir)?),
        None => None,
    };
    let backend = make_backend(&config.backend)?;
    let preload = load_cache(config.paths.cache.as_deref(), "route")?;
    let cached = CachedBackend::preloaded(backend.as_ref(), preload);

    let reliable: ReliableSet = if build_pool {
        let train: Vec<LabeledSample> =
            read_jsonl(&paths.train).map_err(|e| CliError::stage("route", e))?;
        let pool = build_reliable_set(
            &train,
            &bundle.ensemble.oof,
            config.route.strategy,
            config.route.tau,
            &cached,
            &bundle.schema,
            &descriptions,
            templates.as_ref(),
        )
        .map_err(|e| CliError::from_icl("route", e))?;
        write_json(&paths.reliable, &pool).map_err(|e| CliError::stage("route", e))?;
        pool
    } else {
        read_json(&paths.reliable).map_err(|e| CliError::stage("route", e))?
    };

    let mut arm = IclArm::new(&reliable, &cached, &bundle.schema, &descriptions);
    arm.k_demos = config.route.k_demos;
    arm.lambda = config.route.lambda;
    arm.templates = templates.as_ref();
    let routed = route_all(&test, &bundle.ensemble, &arm, config.route.sigma)
        .map_err(|e| CliError::from_icl("route", e))?;
    let records: Vec<PredictionRecord> = routed
        .into_iter()
        .zip(&test)
        .map(|(prediction, sample)| PredictionRecord { prediction, actual: sample.label })
        .collect();
    write_jsonl(&paths.predictions, &records).map_err(|e| CliError::stage("route", e))?;
    save_cache(config.paths.cache.as_deref(), &cached, "route")?;

    let template_paths: Vec<PathBuf> = config
        .paths
        .templates
        .as_ref()
        .map(|dir| vec![dir.join(SUMMARY_TEMPLATE_FILE), dir.join(ICL_HEADER_FILE)])
        .unwrap_or_default();
    let mut inputs: Vec<(&str, &Path)> =
        vec![("model.json", &paths.model), ("test.jsonl", &paths.test)];
    if build_pool {
        inputs.push(("train.jsonl", &paths.train));
    } else {
        inputs.push(("reliable.json", &paths.reliable));
    }
    for (name, p) in [SUMMARY_TEMPLATE_FILE, ICL_HEADER_FILE].iter().zip(&template_paths) {
        inputs.push((name, p));
    }
    let mut outputs: Vec<(&str, &Path)> = Vec::new();
    if build_pool {
        outputs.push(("reliable.json", &paths.reliable));
    }
    outputs.push(("predictions.jsonl", &paths.predictions));
    finish_manifest(config, paths, "route", &[], &inputs, &outputs)
}

/// Scores a predictions file. Each record carries its own ground truth, so
/// nothing else is read; the skeletal label rows exist only to drive the
/// coverage checks.
pub fn stage_evaluate(
    config: &PipelineConfig,
    paths: &ArtifactPaths,
) -> Result<MetricsReport, CliError> {
    ensure_dir(&paths.dir, "evaluate")?;
    let records: Vec<PredictionRecord> =
        read_jsonl(&paths.predictions).map_err(|e| CliError::stage("evaluate", e))?;
    let (predictions, labels): (Vec<_>, Vec<_>) = records
        .into_iter()
        .map(|r| {
            let truth = LabeledSample {
                patient_id: r.prediction.sample_id.clone(),
                index_date: Date::from_days(0),
                continuous: Vec::new(),
                categorical: Vec::new(),
                label: r.actual,
            };
            (r.prediction, truth)
        })
        .unzip();
    let report = evaluate(&predictions, &labels).map_err(eval_err("evaluate"))?;
    write_json(&paths.metrics, &report).map_err(|e| CliError::stage("evaluate", e))?;
    finish_manifest(
        config,
        paths,
        "evaluate",
        &[],
        &[("predictions.jsonl", &paths.predictions)],
        &[("metrics.json", &paths.metrics)],
    )?;
    Ok(report)
}

/// All six stages in order against one output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<MetricsReport, CliError> {
    config.check_referenced_files()?;
    let paths = ArtifactPaths::new(&config.paths.out_dir);
    println!("gen-synth: {} patients, seed {}", config.synth.n_patients, config.synth.seed);
    stage_gen_synth(config, &paths)?;
    println!(
        "build-cohort: cp {}, window {}y, ratio 1:{}",
        config.cohort.cp, config.cohort.pw_years, config.cohort.ratio
    );
    stage_build_cohort(config, &paths)?;
    println!("preprocess");
    stage_preprocess(config, &paths)?;
    println!("train: seed {}", config.fit.seed);
    stage_train(config, &paths, true)?;
    println!("route: sigma {}", config.route.sigma);
    stage_route(config, &paths, true)?;
    let report = stage_evaluate(config, &paths)?;
    println!(
        "evaluate: precision {:.4}, recall {:.4}, f1 {:.4}",
        report.precision, report.recall, report.f1
    );
    Ok(report)
}

/// Re-routes the held-out set at several thresholds, reusing the model,
/// pool, and cache of a finished pipeline run.
pub fn run_sweep(
    config: &PipelineConfig,
    sigmas: Option<&[f64]>,
) -> Result<Vec<SweepRow>, CliError> {
    let paths = ArtifactPaths::new(&config.paths.out_dir);
    require_artifacts(&[
        ("model.json", &paths.model),
        ("test.jsonl", &paths.test),
        ("reliable.json", &paths.reliable),
    ])?;
    let bundle = read_model_bundle(&paths.model).map_err(|e| CliError::stage("sweep", e))?;
    let test: Vec<LabeledSample> =
        read_jsonl(&paths.test).map_err(|e| CliError::stage("sweep", e))?;
    let reliable: ReliableSet =
        read_json(&paths.reliable).map_err(|e| CliError::stage("sweep", e))?;
    let descriptions = CodeDescriptions::generic(&bundle.schema);
    let templates = match &config.paths.templates {
        Some(dir) => Some(load_templates(dir)?),
        None => None,
    };
    let backend = make_backend(&config.backend)?;
    let cached =
        CachedBackend::preloaded(backend.as_ref(), load_cache(config.paths.cache.as_deref(), "sweep")?);

    let mut arm = IclArm::new(&reliable, &cached, &bundle.schema, &descriptions);
    arm.k_demos = config.route.k_demos;
    arm.lambda = config.route.lambda;
    arm.templates = templates.as_ref();
    let sigmas: Vec<f64> = sigmas.map_or_else(|| config.report.sigmas.clone(), <[f64]>::to_vec);
    let rows =
        threshold_sweep(&test, &bundle.ensemble, &arm, &sigmas).map_err(eval_err("sweep"))?;
    write_json(&paths.sweep, &rows).map_err(|e| CliError::stage("sweep", e))?;
    save_cache(config.paths.cache.as_deref(), &cached, "sweep")?;
    finish_manifest(
        config,
        &paths,
        "sweep",
        &[],
        &[
            ("model.json", &paths.model),
            ("test.jsonl", &paths.test),
            ("reliable.json", &paths.reliable),
        ],
        &[("sweep.json", &paths.sweep)],
    )?;
    Ok(rows)
}

/// The ablation suite over the preprocessed sample table: repeated
/// splits and fits per arm, each row summarized as mean and standard
/// deviation across repeats.
pub fn run_ablate(config: &PipelineConfig) -> Result<AblationBundle, CliError> {
    let paths = ArtifactPaths::new(&config.paths.out_dir);
    require_artifacts(&[
        ("samples.jsonl", &paths.samples),
        ("stats.json", &paths.stats),
    ])?;
    let samples: Vec<LabeledSample> =
        read_jsonl(&paths.samples).map_err(|e| CliError::stage("ablate", e))?;
    let stats: PreprocessStats =
        read_json(&paths.stats).map_err(|e| CliError::stage("ablate", e))?;
    let (grids, warnings) = load_grids(&config.paths.grids)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let descriptions = CodeDescriptions::generic(&stats.schema);
    let backend = make_backend(&config.backend)?;
    let cached = CachedBackend::preloaded(
        backend.as_ref(),
        load_cache(config.paths.cache.as_deref(), "ablate")?,
    );

    let ablation = AblationConfig {
        grids,
        fit: config.fit.to_settings(),
        split: config.split,
        sigma: config.route.sigma,
        strategy: config.route.strategy,
        tau: config.route.tau,
        k_demos: config.route.k_demos,
        lambda: config.route.lambda,
        repeats: config.report.repeats,
        sigmas: config.report.sigmas.clone(),
    };
    let bundle = run_ablations(&samples, &stats.schema, &descriptions, &cached, &ablation)
        .map_err(ablation_err("ablate"))?;
    write_json(&paths.ablation, &bundle).map_err(|e| CliError::stage("ablate", e))?;
    save_cache(config.paths.cache.as_deref(), &cached, "ablate")?;

    let grids_label = file_label(&config.paths.grids);
    finish_manifest(
        config,
        &paths,
        "ablate",
        &[("fit", config.fit.seed)],
        &[
            ("samples.jsonl", &paths.samples),
            ("stats.json", &paths.stats),
            (&grids_label, &config.paths.grids),
        ],
        &[("ablation.json", &paths.ablation)],
    )?;
    Ok(bundle)
}

/// Backend failures exit differently from ordinary stage failures, so the
/// language-model variant has to be unwrapped wherever it can hide.
fn eval_err(stage: &'static str) -> impl Fn(EvalError) -> CliError {
    move |e| match e {
        EvalError::Icl(inner) => CliError::from_icl(stage, inner),
        other => CliError::stage(stage, other),
    }
}

fn ablation_err(stage: &'static str) -> impl Fn(AblationError) -> CliError {
    move |e| match e {
        AblationError::Icl(inner) => CliError::from_icl(stage, inner),
        AblationError::Eval(EvalError::Icl(inner)) => CliError::from_icl(stage, inner),
        other => CliError::stage(stage, other),
    }
}
