//! One declarative TOML file drives the whole pipeline; hyperparameter
//! grids and prompt templates live in separate editable files it points at.
//!
//! Every section is optional and every field has a default, so an empty
//! file is a valid mock-backend configuration. `${VAR}` interpolation is
//! deliberately limited to `backend.url` and `backend.token`: secrets stay
//! out of committed configs, everything else stays reproducible.

use std::collections::BTreeSet;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use riskroute_core::cohort::CpRule;
use riskroute_core::ensemble::{
    Activation, EnsembleGrids, FitSettings, GbtParams, LrParams, LrSchedule, MlpParams,
    MlpSolver, RebalanceOrder, SmoteSettings,
};
use riskroute_core::eval::{SplitConfig, SWEEP_SIGMAS};
use riskroute_core::icl::{PromptTemplates, ReliableStrategy, DEFAULT_K_DEMOS, DEFAULT_LAMBDA, DEFAULT_TAU};
use riskroute_core::router::DEFAULT_SIGMA;
use riskroute_core::synth::SynthConfig;

use crate::CliError;

pub const SUMMARY_TEMPLATE_FILE: &str = "summary.txt";
pub const ICL_HEADER_FILE: &str = "icl_header.txt";

/// Largest grid (per model) that will ever be materialized, sampled or not.
pub const MAX_GRID_POINTS: usize = 100_000;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsSection,
    pub synth: SynthConfig,
    pub cohort: CohortSection,
    pub split: SplitConfig,
    pub fit: FitSection,
    pub route: RouteSection,
    pub backend: BackendSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Every stage writes its artifacts and manifest here.
    pub out_dir: PathBuf,
    pub grids: PathBuf,
    /// Directory holding `summary.txt` and `icl_header.txt`; omit for the
    /// built-in prompt text.
    pub templates: Option<PathBuf>,
    /// Backend response cache, loaded before routing and saved after.
    pub cache: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            out_dir: PathBuf::from("out"),
            grids: PathBuf::from("configs/grids_desk.toml"),
            templates: None,
            cache: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSection {
    /// Minimum qualifying diagnosis encounters: 1 or 2.
    pub cp: u32,
    /// Years of data before the index date withheld from features: 0, 1 or 3.
    pub pw_years: u32,
    /// Controls matched per case.
    pub ratio: u32,
    pub min_observation_years: f64,
}

impl Default for CohortSection {
    fn default() -> Self {
        CohortSection { cp: 1, pw_years: 0, ratio: 10, min_observation_years: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub cv_folds: usize,
    pub oof_folds: usize,
    pub seed: u64,
    pub smote: bool,
    pub smote_k_neighbors: usize,
    pub smote_target_ratio: f64,
    pub smote_order: RebalanceOrder,
}

impl Default for FitSection {
    fn default() -> Self {
        let fit = FitSettings::default();
        let smote = SmoteSettings::default();
        FitSection {
            cv_folds: fit.cv_folds,
            oof_folds: fit.oof_folds,
            seed: 0,
            smote: true,
            smote_k_neighbors: smote.k_neighbors,
            smote_target_ratio: smote.target_ratio,
            smote_order: RebalanceOrder::BeforeFolds,
        }
    }
}

impl FitSection {
    /// The oversampler reuses the fit seed so one knob re-seeds both.
    pub fn to_settings(&self) -> FitSettings {
        FitSettings {
            cv_folds: self.cv_folds,
            oof_folds: self.oof_folds,
            rebalance: self.smote.then(|| SmoteSettings {
                target_ratio: self.smote_target_ratio,
                k_neighbors: self.smote_k_neighbors,
                seed: self.seed,
            }),
            rebalance_order: self.smote_order,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouteSection {
    /// Minimum averaged-ensemble confidence for the supervised path.
    pub sigma: f64,
    /// Minimum mean out-of-fold true-class probability for the pool.
    pub tau: f64,
    pub k_demos: usize,
    /// Blend between continuous and categorical distance in retrieval.
    pub lambda: f64,
    pub strategy: ReliableStrategy,
}

impl Default for RouteSection {
    fn default() -> Self {
        RouteSection {
            sigma: DEFAULT_SIGMA,
            tau: DEFAULT_TAU,
            k_demos: DEFAULT_K_DEMOS,
            lambda: DEFAULT_LAMBDA,
            strategy: ReliableStrategy::HighConfidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// `${VAR}` pieces are replaced from the environment at load time.
    pub url: String,
    pub token: Option<String>,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection { kind: BackendKind::Mock, url: String::new(), token: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Thresholds the sweep and ablation reports walk through.
    pub sigmas: Vec<f64>,
    pub repeats: u64,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { sigmas: SWEEP_SIGMAS.to_vec(), repeats: 5 }
    }
}

/// Parses, interpolates secrets, resolves relative paths against the config
/// file's directory, and validates. Returns non-fatal warnings.
pub fn load_pipeline_config(path: &Path) -> Result<(PipelineConfig, Vec<String>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("read {}: {e}", path.display())))?;
    let mut config: PipelineConfig = toml::from_str(&text)
        .map_err(|e| CliError::validation(format!("parse {}: {e}", path.display())))?;

    config.backend.url = interpolate_env("backend.url", &config.backend.url)?;
    if let Some(token) = &config.backend.token {
        config.backend.token = Some(interpolate_env("backend.token", token)?);
    }

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    resolve_relative(base, &mut config.paths.out_dir);
    resolve_relative(base, &mut config.paths.grids);
    if let Some(p) = config.paths.templates.as_mut() {
        resolve_relative(base, p);
    }
    if let Some(p) = config.paths.cache.as_mut() {
        resolve_relative(base, p);
    }

    let warnings = config.validate()?;
    Ok((config, warnings))
}

fn resolve_relative(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn interpolate_env(field: &str, raw: &str) -> Result<String, CliError> {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let tail = &rest[start + 2..];
        let Some(end) = tail.find('}') else {
            return Err(CliError::validation(format!(
                "{field}: unterminated ${{...}} in {raw:?}"
            )));
        };
        let name = &tail[..end];
        match env::var(name) {
            Ok(value) => out.push_str(&value),
            Err(_) => {
                return Err(CliError::validation(format!(
                    "{field} references ${{{name}}} but {name} is not set"
                )));
            }
        }
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl PipelineConfig {
    /// Hard errors for values no run can use; warnings for values that run
    /// but degenerate.
    pub fn validate(&self) -> Result<Vec<String>, CliError> {
        let bad = |msg: String| Err(CliError::Validation(msg));
        if !(0.0..=1.0).contains(&self.route.lambda) {
            return bad(format!("route.lambda {} outside [0, 1]", self.route.lambda));
        }
        if !(0.0..=1.0).contains(&self.route.tau) {
            return bad(format!("route.tau {} outside [0, 1]", self.route.tau));
        }
        if self.route.k_demos == 0 {
            return bad("route.k_demos must be at least 1".into());
        }
        if self.cohort.cp != 1 && self.cohort.cp != 2 {
            return bad(format!("cohort.cp {} must be 1 or 2", self.cohort.cp));
        }
        if ![0, 1, 3].contains(&self.cohort.pw_years) {
            return bad(format!("cohort.pw_years {} must be 0, 1 or 3", self.cohort.pw_years));
        }
        if self.cohort.ratio == 0 {
            return bad("cohort.ratio must be at least 1".into());
        }
        if self.fit.cv_folds < 2 || self.fit.oof_folds < 2 {
            return bad("fit.cv_folds and fit.oof_folds must be at least 2".into());
        }
        if !(self.split.train_frac > 0.0 && self.split.train_frac < 1.0) {
            return bad(format!("split.train_frac {} outside (0, 1)", self.split.train_frac));
        }
        if self.report.sigmas.is_empty() {
            return bad("report.sigmas must list at least one threshold".into());
        }
        if self.report.repeats == 0 {
            return bad("report.repeats must be at least 1".into());
        }
        if self.backend.kind == BackendKind::Http && self.backend.url.is_empty() {
            return bad("backend.kind = \"http\" requires backend.url".into());
        }

        let mut warnings = Vec::new();
        if !(self.route.sigma > 0.5 && self.route.sigma <= 1.0) {
            warnings.push(format!(
                "route.sigma {} is outside (0.5, 1.0]; every sample takes one path",
                self.route.sigma
            ));
        }
        Ok(warnings)
    }

    /// The file-existence half of validation, separated so configs can be
    /// checked without touching the filesystem.
    pub fn check_referenced_files(&self) -> Result<(), CliError> {
        if !self.paths.grids.is_file() {
            return Err(CliError::validation(format!(
                "paths.grids {} does not exist",
                self.paths.grids.display()
            )));
        }
        if let Some(dir) = &self.paths.templates {
            for name in [SUMMARY_TEMPLATE_FILE, ICL_HEADER_FILE] {
                if !dir.join(name).is_file() {
                    return Err(CliError::validation(format!(
                        "paths.templates {} is missing {name}",
                        dir.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Case-definition rules as an editable artifact: the qualifying encounter
/// count plus the three code sets.
pub fn load_rules(path: &Path) -> Result<CpRule, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("read {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::validation(format!("parse {}: {e}", path.display())))
}

pub fn write_rules(path: &Path, rule: &CpRule) -> Result<(), CliError> {
    let text = toml::to_string_pretty(rule)
        .map_err(|e| CliError::validation(format!("serialize rules: {e}")))?;
    fs::write(path, text)
        .map_err(|e| CliError::validation(format!("write {}: {e}", path.display())))
}

pub fn load_templates(dir: &Path) -> Result<PromptTemplates, CliError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p)
            .map_err(|e| CliError::validation(format!("read template {}: {e}", p.display())))
    };
    let summary = read(SUMMARY_TEMPLATE_FILE)?;
    if !summary.contains("{record}") {
        return Err(CliError::validation(format!(
            "template {} must contain the {{record}} marker",
            dir.join(SUMMARY_TEMPLATE_FILE).display()
        )));
    }
    let icl_header = read(ICL_HEADER_FILE)?;
    Ok(PromptTemplates { summary, icl_header })
}

/// Grid axes per model. Missing axes collapse to the model default; every
/// section may cap its cartesian product with `max_points`, sampled
/// reproducibly with `sample_seed`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridFile {
    pub lr: LrAxes,
    pub gbt: GbtAxes,
    pub mlp: MlpAxes,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrAxes {
    pub c: Option<Vec<f64>>,
    pub tol: Option<Vec<f64>>,
    pub max_iter: Option<Vec<usize>>,
    pub solver: Option<Vec<String>>,
    pub max_points: Option<usize>,
    pub sample_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtAxes {
    pub n_estimators: Option<Vec<usize>>,
    pub learning_rate: Option<Vec<f64>>,
    pub num_leaves: Option<Vec<usize>>,
    pub max_depth: Option<Vec<i32>>,
    pub min_child_samples: Option<Vec<usize>>,
    pub min_child_weight: Option<Vec<f64>>,
    pub min_split_gain: Option<Vec<f64>>,
    pub subsample: Option<Vec<f64>>,
    pub colsample_bytree: Option<Vec<f64>>,
    pub reg_alpha: Option<Vec<f64>>,
    pub reg_lambda: Option<Vec<f64>>,
    pub boosting_type: Option<Vec<String>>,
    /// Accepted so sweep configs round-trip; training is single-process, so
    /// the axis cannot change anything and is dropped with a warning.
    pub tree_learner: Option<Vec<String>>,
    /// Accepted and dropped likewise: splits scan raw thresholds, there is
    /// no histogram binning to configure.
    pub max_bin: Option<Vec<u32>>,
    pub max_points: Option<usize>,
    pub sample_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpAxes {
    pub hidden_layer_sizes: Option<Vec<Vec<usize>>>,
    pub activation: Option<Vec<Activation>>,
    pub solver: Option<Vec<MlpSolver>>,
    pub alpha: Option<Vec<f64>>,
    pub batch_size: Option<Vec<usize>>,
    pub learning_rate: Option<Vec<LrSchedule>>,
    pub learning_rate_init: Option<Vec<f64>>,
    pub max_iter: Option<Vec<usize>>,
    pub tol: Option<Vec<f64>>,
    pub n_iter_no_change: Option<Vec<usize>>,
    pub momentum: Option<Vec<f64>>,
    pub max_points: Option<usize>,
    pub sample_seed: Option<u64>,
}

pub fn load_grids(path: &Path) -> Result<(EnsembleGrids, Vec<String>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("read {}: {e}", path.display())))?;
    let file: GridFile = toml::from_str(&text)
        .map_err(|e| CliError::validation(format!("parse {}: {e}", path.display())))?;
    let mut warnings = Vec::new();
    let grids = EnsembleGrids {
        lr: expand_lr(&file.lr)?,
        gbt: expand_gbt(&file.gbt, &mut warnings)?,
        mlp: expand_mlp(&file.mlp)?,
    };
    Ok((grids, warnings))
}

fn axis<T: Clone>(name: &str, given: &Option<Vec<T>>, default: T) -> Result<Vec<T>, CliError> {
    match given {
        Some(v) if v.is_empty() => {
            Err(CliError::validation(format!("grid axis {name} is empty")))
        }
        Some(v) => Ok(v.clone()),
        None => Ok(vec![default]),
    }
}

/// Index tuples into the cartesian product of `dims`, in row-major order.
/// With `max_points` below the product size, a reproducible distinct sample
/// is drawn instead of the full enumeration.
fn index_tuples(
    section: &str,
    dims: &[usize],
    max_points: Option<usize>,
    sample_seed: u64,
) -> Result<Vec<Vec<usize>>, CliError> {
    let mut total: u128 = 1;
    for &d in dims {
        total = total.saturating_mul(d as u128);
    }
    let keep: u128 = match max_points {
        None => total,
        Some(0) => {
            return Err(CliError::validation(format!(
                "[{section}] max_points must be positive"
            )));
        }
        Some(mp) => total.min(mp as u128),
    };
    if keep > MAX_GRID_POINTS as u128 {
        let fix = if max_points.is_none() { "set" } else { "lower" };
        return Err(CliError::validation(format!(
            "[{section}] expands to {total} combinations; {fix} max_points (cap {MAX_GRID_POINTS})"
        )));
    }
    let keep = keep as usize;

    let decode = |mut code: u128| -> Vec<usize> {
        let mut idx = vec![0usize; dims.len()];
        for (i, &d) in dims.iter().enumerate().rev() {
            idx[i] = (code % d as u128) as usize;
            code /= d as u128;
        }
        idx
    };

    if keep as u128 == total {
        return Ok((0..keep).map(|code| decode(code as u128)).collect());
    }
    // keep < total, and keep <= 1e5: the rejection loop cannot stall.
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut codes: BTreeSet<u128> = BTreeSet::new();
    while codes.len() < keep {
        codes.insert(rng.random_range(0..total));
    }
    Ok(codes.into_iter().map(decode).collect())
}

fn expand_lr(axes: &LrAxes) -> Result<Vec<LrParams>, CliError> {
    let d = LrParams::default();
    let c = axis("lr.c", &axes.c, d.c)?;
    let tol = axis("lr.tol", &axes.tol, d.tol)?;
    let max_iter = axis("lr.max_iter", &axes.max_iter, d.max_iter)?;
    let solver = axis("lr.solver", &axes.solver, d.solver)?;
    let dims = [c.len(), tol.len(), max_iter.len(), solver.len()];
    let tuples = index_tuples("lr", &dims, axes.max_points, axes.sample_seed.unwrap_or(0))?;
    Ok(tuples
        .into_iter()
        .map(|t| LrParams {
            c: c[t[0]],
            tol: tol[t[1]],
            max_iter: max_iter[t[2]],
            solver: solver[t[3]].clone(),
        })
        .collect())
}

fn expand_gbt(axes: &GbtAxes, warnings: &mut Vec<String>) -> Result<Vec<GbtParams>, CliError> {
    if axes.tree_learner.is_some() {
        warnings.push("gbt.tree_learner has no effect here (single-process training); axis dropped".into());
    }
    if axes.max_bin.is_some() {
        warnings.push("gbt.max_bin has no effect here (no histogram binning); axis dropped".into());
    }
    if let Some(kinds) = &axes.boosting_type {
        for kind in kinds {
            if kind == "dart" {
                return Err(CliError::validation(
                    "gbt.boosting_type \"dart\" is not supported: trees here are plain shrinkage-weighted additions and dropout would silently change them; use \"gbdt\"",
                ));
            }
            if kind != "gbdt" {
                return Err(CliError::validation(format!(
                    "gbt.boosting_type {kind:?} is not supported; only \"gbdt\""
                )));
            }
        }
    }
    let d = GbtParams::default();
    let n_estimators = axis("gbt.n_estimators", &axes.n_estimators, d.n_estimators)?;
    let learning_rate = axis("gbt.learning_rate", &axes.learning_rate, d.learning_rate)?;
    let num_leaves = axis("gbt.num_leaves", &axes.num_leaves, d.num_leaves)?;
    let max_depth = axis("gbt.max_depth", &axes.max_depth, d.max_depth)?;
    let min_child_samples =
        axis("gbt.min_child_samples", &axes.min_child_samples, d.min_child_samples)?;
    let min_child_weight =
        axis("gbt.min_child_weight", &axes.min_child_weight, d.min_child_weight)?;
    let min_split_gain = axis("gbt.min_split_gain", &axes.min_split_gain, d.min_split_gain)?;
    let subsample = axis("gbt.subsample", &axes.subsample, d.subsample)?;
    let colsample_bytree =
        axis("gbt.colsample_bytree", &axes.colsample_bytree, d.colsample_bytree)?;
    let reg_alpha = axis("gbt.reg_alpha", &axes.reg_alpha, d.reg_alpha)?;
    let reg_lambda = axis("gbt.reg_lambda", &axes.reg_lambda, d.reg_lambda)?;
    let dims = [
        n_estimators.len(),
        learning_rate.len(),
        num_leaves.len(),
        max_depth.len(),
        min_child_samples.len(),
        min_child_weight.len(),
        min_split_gain.len(),
        subsample.len(),
        colsample_bytree.len(),
        reg_alpha.len(),
        reg_lambda.len(),
    ];
    let tuples = index_tuples("gbt", &dims, axes.max_points, axes.sample_seed.unwrap_or(0))?;
    Ok(tuples
        .into_iter()
        .map(|t| GbtParams {
            n_estimators: n_estimators[t[0]],
            learning_rate: learning_rate[t[1]],
            num_leaves: num_leaves[t[2]],
            max_depth: max_depth[t[3]],
            min_child_samples: min_child_samples[t[4]],
            min_child_weight: min_child_weight[t[5]],
            min_split_gain: min_split_gain[t[6]],
            subsample: subsample[t[7]],
            colsample_bytree: colsample_bytree[t[8]],
            reg_alpha: reg_alpha[t[9]],
            reg_lambda: reg_lambda[t[10]],
            boosting_type: String::from("gbdt"),
        })
        .collect())
}

fn expand_mlp(axes: &MlpAxes) -> Result<Vec<MlpParams>, CliError> {
    let d = MlpParams::default();
    let hidden = axis("mlp.hidden_layer_sizes", &axes.hidden_layer_sizes, d.hidden_layer_sizes)?;
    let activation = axis("mlp.activation", &axes.activation, d.activation)?;
    let solver = axis("mlp.solver", &axes.solver, d.solver)?;
    let alpha = axis("mlp.alpha", &axes.alpha, d.alpha)?;
    let batch_size = axis("mlp.batch_size", &axes.batch_size, d.batch_size)?;
    let learning_rate = axis("mlp.learning_rate", &axes.learning_rate, d.learning_rate)?;
    let learning_rate_init =
        axis("mlp.learning_rate_init", &axes.learning_rate_init, d.learning_rate_init)?;
    let max_iter = axis("mlp.max_iter", &axes.max_iter, d.max_iter)?;
    let tol = axis("mlp.tol", &axes.tol, d.tol)?;
    let n_iter_no_change =
        axis("mlp.n_iter_no_change", &axes.n_iter_no_change, d.n_iter_no_change)?;
    let momentum = axis("mlp.momentum", &axes.momentum, d.momentum)?;
    let dims = [
        hidden.len(),
        activation.len(),
        solver.len(),
        alpha.len(),
        batch_size.len(),
        learning_rate.len(),
        learning_rate_init.len(),
        max_iter.len(),
        tol.len(),
        n_iter_no_change.len(),
        momentum.len(),
    ];
    let tuples = index_tuples("mlp", &dims, axes.max_points, axes.sample_seed.unwrap_or(0))?;
    Ok(tuples
        .into_iter()
        .map(|t| MlpParams {
            hidden_layer_sizes: hidden[t[0]].clone(),
            activation: activation[t[1]],
            solver: solver[t[2]],
            alpha: alpha[t[3]],
            batch_size: batch_size[t[4]],
            learning_rate: learning_rate[t[5]],
            learning_rate_init: learning_rate_init[t[6]],
            max_iter: max_iter[t[7]],
            tol: tol[t[8]],
            n_iter_no_change: n_iter_no_change[t[9]],
            momentum: momentum[t[10]],
        })
        .collect())
}
