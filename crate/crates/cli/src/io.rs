//! Readers and writers for every on-disk format: JSON-lines datasets, the
//! CSV code maps and feature table, and whole-file JSON artifacts. Parsers
//! are strict; a malformed line names its position and aborts.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use riskroute_core::ensemble::TrainedEnsemble;
use riskroute_core::router::RoutedPrediction;
use riskroute_core::sample::Label;
use riskroute_core::schema::{CodeMaps, ContinuousFeature, FeatureCategory, FeatureSchema};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Jsonl { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
}

fn file_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::File { path: path.display().to_string(), source }
}

fn malformed(path: &Path, message: impl Into<String>) -> FormatError {
    FormatError::Malformed { path: path.display().to_string(), message: message.into() }
}

/// One value per line; blank lines and trailing garbage are rejected so a
/// truncated or concatenated file cannot pass silently.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            return Err(FormatError::Jsonl {
                path: path.display().to_string(),
                line: i + 1,
                message: String::from("blank line"),
            });
        }
        let item = serde_json::from_str(&line).map_err(|e| FormatError::Jsonl {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| file_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| malformed(path, e.to_string()))?;
        writeln!(writer, "{line}").map_err(|e| file_err(path, e))?;
    }
    writer.flush().map_err(|e| file_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))
}

/// Pretty-printed with a trailing newline; rendering is deterministic, so
/// identical values produce identical bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| malformed(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| file_err(path, e))
}

/// One routed prediction joined with the ground-truth label, so a
/// predictions file is scoreable on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(flatten)]
    pub prediction: RoutedPrediction,
    pub actual: Label,
}

pub const BUNDLE_VERSION: u32 = 1;

/// Everything routing needs from training: the fitted ensemble, its
/// out-of-fold table, and the schema the features were laid out against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub schema: FeatureSchema,
    pub ensemble: TrainedEnsemble,
}

pub fn read_model_bundle(path: &Path) -> Result<ModelBundle, FormatError> {
    let bundle: ModelBundle = read_json(path)?;
    if bundle.version != BUNDLE_VERSION {
        return Err(FormatError::Malformed {
            path: path.display().to_string(),
            message: format!(
                "bundle version {} unsupported (expected {BUNDLE_VERSION})",
                bundle.version
            ),
        });
    }
    Ok(bundle)
}

pub const MAP_FILES: [(&str, &str); 3] = [
    ("icd_to_phecode.csv", "icd"),
    ("rxnorm_to_ingredient.csv", "rxnorm"),
    ("cpt_to_ccs.csv", "cpt"),
];

#[derive(Debug, Serialize, Deserialize)]
struct MapRow {
    source_code: String,
    target_code: String,
}

/// Three fixed-name CSVs in one directory, each `source_code,target_code`.
pub fn read_code_maps(dir: &Path) -> Result<CodeMaps, FormatError> {
    let mut tables: [BTreeMap<String, String>; 3] = Default::default();
    for ((file, _), table) in MAP_FILES.iter().zip(tables.iter_mut()) {
        let path = dir.join(file);
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| malformed(&path, e.to_string()))?;
        for row in reader.deserialize() {
            let row: MapRow = row.map_err(|e| malformed(&path, e.to_string()))?;
            if table.insert(row.source_code.clone(), row.target_code).is_some() {
                return Err(malformed(&path, format!("duplicate source code {}", row.source_code)));
            }
        }
    }
    let [icd, rx, cpt] = tables;
    Ok(CodeMaps { icd_to_phecode: icd, rxnorm_to_ingredient: rx, cpt_to_ccs: cpt })
}

pub fn write_code_maps(dir: &Path, maps: &CodeMaps) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    let tables =
        [&maps.icd_to_phecode, &maps.rxnorm_to_ingredient, &maps.cpt_to_ccs];
    for ((file, _), table) in MAP_FILES.iter().zip(tables) {
        let path = dir.join(file);
        let mut writer = csv::Writer::from_path(&path)
            .map_err(|e| malformed(&path, e.to_string()))?;
        for (source, target) in table {
            writer
                .serialize(MapRow { source_code: source.clone(), target_code: target.clone() })
                .map_err(|e| malformed(&path, e.to_string()))?;
        }
        writer.flush().map_err(|e| file_err(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureRow {
    name: String,
    unit: String,
    category: String,
}

/// Continuous feature table: `name,unit,category`, category in {vital, lab}.
pub fn read_features_csv(path: &Path) -> Result<Vec<ContinuousFeature>, FormatError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| malformed(path, e.to_string()))?;
    let mut features = Vec::new();
    for row in reader.deserialize() {
        let row: FeatureRow = row.map_err(|e| malformed(path, e.to_string()))?;
        let category = match row.category.to_ascii_lowercase().as_str() {
            "vital" => FeatureCategory::Vital,
            "lab" => FeatureCategory::Lab,
            other => {
                return Err(malformed(path, format!("unknown feature category {other:?}")))
            }
        };
        features.push(ContinuousFeature { name: row.name, unit: row.unit, category });
    }
    Ok(features)
}

pub fn write_features_csv(path: &Path, features: &[ContinuousFeature]) -> Result<(), FormatError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| malformed(path, e.to_string()))?;
    for f in features {
        let category = match f.category {
            FeatureCategory::Vital => "vital",
            FeatureCategory::Lab => "lab",
        };
        writer
            .serialize(FeatureRow {
                name: f.name.clone(),
                unit: f.unit.clone(),
                category: String::from(category),
            })
            .map_err(|e| malformed(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| file_err(path, e))
}
