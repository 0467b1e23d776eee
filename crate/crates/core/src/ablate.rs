//! Component ablations: summary text vs raw records, similarity vs random
//! retrieval, the four pool-denoising strategies with routing disabled, the
//! confidence-threshold sweep, and the easy/hard stratified comparison of
//! the ensemble against the language model. Every row aggregates the same
//! metric over seeded repeats, where each repeat re-splits the data and
//! refits the ensemble.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{fit_ensemble, EnsembleError, EnsembleGrids, FitSettings};
use crate::eval::{
    evaluate, split_dataset, summarize_runs, threshold_sweep, EvalError, MetricsReport,
    RunsSummary, SplitConfig, SWEEP_SIGMAS,
};
use crate::icl::{
    build_reliable_set, build_reliable_set_raw, CachedBackend, IclError, LlmBackend,
    ReliableSet, ReliableStrategy, DEFAULT_K_DEMOS, DEFAULT_LAMBDA, DEFAULT_TAU,
};
use crate::router::{
    route_all, stratify_by_confidence, IclArm, QueryText, RetrievalMode, DEFAULT_SIGMA,
};
use crate::sample::LabeledSample;
use crate::schema::{CodeDescriptions, FeatureSchema};

/// Any sigma above 1 disables the supervised path; binary confidences top
/// out at 1, so every sample goes to the model.
pub const SIGMA_ALL_LLM: f64 = 1.01;
/// At 0.5 the supervised path takes everything.
pub const SIGMA_ALL_SL: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum AblationError {
    #[error("repeats must be at least 1")]
    NoRepeats,
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Icl(#[from] IclError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub grids: EnsembleGrids,
    /// Base settings; each repeat runs with `seed + repeat index`.
    pub fit: FitSettings,
    pub split: SplitConfig,
    /// Routing threshold used by every part except the denoising comparison,
    /// which always disables routing.
    pub sigma: f64,
    /// Pool strategy for the non-denoising parts.
    pub strategy: ReliableStrategy,
    pub tau: f64,
    pub k_demos: usize,
    pub lambda: f64,
    pub repeats: u64,
    /// Thresholds for the sweep part.
    pub sigmas: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            grids: EnsembleGrids::default(),
            fit: FitSettings::default(),
            split: SplitConfig::default(),
            sigma: DEFAULT_SIGMA,
            strategy: ReliableStrategy::HighConfidence,
            tau: DEFAULT_TAU,
            k_demos: DEFAULT_K_DEMOS,
            lambda: DEFAULT_LAMBDA,
            repeats: 5,
            sigmas: SWEEP_SIGMAS.to_vec(),
        }
    }
}

/// One arm of one ablation: the metric aggregated over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub summary: RunsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationBundle {
    pub summary_vs_concat: Vec<AblationRow>,
    pub retrieval: Vec<AblationRow>,
    pub denoising: Vec<AblationRow>,
    pub sweep: Vec<AblationRow>,
    pub strata: Vec<AblationRow>,
}

fn arm_for<'a>(
    pool: &'a ReliableSet,
    backend: &'a dyn LlmBackend,
    schema: &'a FeatureSchema,
    descriptions: &'a CodeDescriptions,
    config: &AblationConfig,
) -> IclArm<'a> {
    let mut arm = IclArm::new(pool, backend, schema, descriptions);
    arm.k_demos = config.k_demos;
    arm.lambda = config.lambda;
    arm
}

/// Per-row accumulator keyed by name, preserving first-insertion order.
struct Acc(Vec<(String, Vec<MetricsReport>)>);

impl Acc {
    fn new() -> Self {
        Acc(Vec::new())
    }

    fn push(&mut self, name: &str, report: MetricsReport) {
        match self.0.iter_mut().find(|(n, _)| n == name) {
            Some((_, reports)) => reports.push(report),
            None => self.0.push((String::from(name), alloc::vec![report])),
        }
    }

    fn rows(self) -> Result<Vec<AblationRow>, EvalError> {
        self.0
            .into_iter()
            .map(|(name, reports)| {
                Ok(AblationRow { name, summary: summarize_runs(&reports)? })
            })
            .collect()
    }
}

pub fn run_ablations(
    samples: &[LabeledSample],
    schema: &FeatureSchema,
    descriptions: &CodeDescriptions,
    backend: &dyn LlmBackend,
    config: &AblationConfig,
) -> Result<AblationBundle, AblationError> {
    if config.repeats == 0 {
        return Err(AblationError::NoRepeats);
    }
    let mut a = Acc::new();
    let mut b = Acc::new();
    let mut c = Acc::new();
    let mut d = Acc::new();
    let mut e = Acc::new();

    for repeat in 0..config.repeats {
        let seed = config.fit.seed.wrapping_add(repeat);
        let (train, test) = split_dataset(samples, &config.split, seed)?;
        // Each repeat re-seeds the split, the fit, and the oversampler; the
        // cohort upstream of `samples` stays fixed.
        let mut fit = FitSettings { seed, ..config.fit.clone() };
        if let Some(s) = fit.rebalance.as_mut() {
            s.seed = seed;
        }
        let ensemble = fit_ensemble(&config.grids, &train, &fit)?;
        // One cache per repeat: pool construction and every arm below reuse
        // identical prompts freely.
        let cached = CachedBackend::new(backend);

        let pool = build_reliable_set(
            &train,
            &ensemble.oof,
            config.strategy,
            config.tau,
            &cached,
            schema,
            descriptions,
            None,
        )?;
        let standard = arm_for(&pool, &cached, schema, descriptions, config);

        // (a) Summarized prompts against raw serialized records.
        let pool_raw = build_reliable_set_raw(
            &train,
            &ensemble.oof,
            config.strategy,
            config.tau,
            schema,
            descriptions,
        )?;
        let mut raw = arm_for(&pool_raw, &cached, schema, descriptions, config);
        raw.query_text = QueryText::RawRecord;
        for (name, variant) in [("summarized", &standard), ("raw_record", &raw)] {
            let predictions = route_all(&test, &ensemble, variant, config.sigma)?;
            a.push(name, evaluate(&predictions, &test)?);
        }

        // (b) Similarity retrieval against seeded uniform draws.
        let mut random = arm_for(&pool, &cached, schema, descriptions, config);
        random.retrieval = RetrievalMode::Random { seed };
        for (name, variant) in [("similarity", &standard), ("random", &random)] {
            let predictions = route_all(&test, &ensemble, variant, config.sigma)?;
            b.push(name, evaluate(&predictions, &test)?);
        }

        // (c) Pool denoising strategies, with routing disabled so every test
        // sample exercises the demonstrations.
        for strategy in [
            ReliableStrategy::Full,
            ReliableStrategy::AllCorrect,
            ReliableStrategy::AnyCorrect,
            ReliableStrategy::HighConfidence,
        ] {
            let strategy_pool = build_reliable_set(
                &train,
                &ensemble.oof,
                strategy,
                config.tau,
                &cached,
                schema,
                descriptions,
                None,
            )?;
            let variant = arm_for(&strategy_pool, &cached, schema, descriptions, config);
            let predictions = route_all(&test, &ensemble, &variant, SIGMA_ALL_LLM)?;
            c.push(strategy.name(), evaluate(&predictions, &test)?);
        }

        // (d) Threshold sweep.
        for row in threshold_sweep(&test, &ensemble, &standard, &config.sigmas)? {
            d.push(&alloc::format!("sigma_{:.2}", row.sigma), row.report);
        }

        // (e) Easy/hard strata, each scored by the pure ensemble and the
        // pure model path. A stratum left empty by this repeat's threshold
        // contributes nothing to its rows.
        let (easy, hard) = stratify_by_confidence(&test, &ensemble, config.sigma);
        for (stratum, subset) in [("easy", easy), ("hard", hard)] {
            if subset.is_empty() {
                continue;
            }
            for (path, sigma) in [("avg_sls", SIGMA_ALL_SL), ("llm", SIGMA_ALL_LLM)] {
                let predictions = route_all(&subset, &ensemble, &standard, sigma)?;
                e.push(&alloc::format!("{stratum}_{path}"), evaluate(&predictions, &subset)?);
            }
        }
    }

    Ok(AblationBundle {
        summary_vs_concat: a.rows()?,
        retrieval: b.rows()?,
        denoising: c.rows()?,
        sweep: d.rows()?,
        strata: e.rows()?,
    })
}
