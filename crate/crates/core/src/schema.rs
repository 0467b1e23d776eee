//! Feature schema and code translation tables.
//!
//! A `FeatureSchema` fixes the order of continuous features (vitals and labs)
//! and of the three categorical vocabularies (diagnosis groups, medication
//! ingredients, procedure groups). Every dense vector in the pipeline is laid
//! out against one schema instance, so ordering is validated once here and
//! never re-derived.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("duplicate continuous feature name {0:?}")]
    DuplicateFeature(String),
    #[error("duplicate {space} vocabulary code {code:?}")]
    DuplicateCode { space: CodeSpace, code: String },
    #[error("schema has no features")]
    Empty,
}

/// Which clinical stream a continuous feature comes from. Labs are subject to
/// missingness-based filtering; vitals are not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCategory {
    Vital,
    Lab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousFeature {
    pub name: String,
    pub unit: String,
    pub category: FeatureCategory,
}

/// The three categorical code spaces, in vector-layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeSpace {
    Phecode,
    Ingredient,
    Ccs,
}

impl core::fmt::Display for CodeSpace {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            CodeSpace::Phecode => "phecode",
            CodeSpace::Ingredient => "ingredient",
            CodeSpace::Ccs => "ccs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    continuous: Vec<ContinuousFeature>,
    phecodes: Vec<String>,
    ingredients: Vec<String>,
    ccs: Vec<String>,
}

impl FeatureSchema {
    pub fn new(
        continuous: Vec<ContinuousFeature>,
        phecodes: Vec<String>,
        ingredients: Vec<String>,
        ccs: Vec<String>,
    ) -> Result<Self, SchemaError> {
        if continuous.is_empty() && phecodes.is_empty() && ingredients.is_empty() && ccs.is_empty()
        {
            return Err(SchemaError::Empty);
        }
        let mut seen = BTreeMap::new();
        for f in &continuous {
            if seen.insert(f.name.clone(), ()).is_some() {
                return Err(SchemaError::DuplicateFeature(f.name.clone()));
            }
        }
        for (space, vocab) in [
            (CodeSpace::Phecode, &phecodes),
            (CodeSpace::Ingredient, &ingredients),
            (CodeSpace::Ccs, &ccs),
        ] {
            let mut seen = BTreeMap::new();
            for code in vocab {
                if seen.insert(code.clone(), ()).is_some() {
                    return Err(SchemaError::DuplicateCode {
                        space,
                        code: code.clone(),
                    });
                }
            }
        }
        Ok(FeatureSchema {
            continuous,
            phecodes,
            ingredients,
            ccs,
        })
    }

    /// Builds a schema whose categorical vocabularies are the sorted distinct
    /// target codes of the translation maps.
    pub fn from_maps(
        continuous: Vec<ContinuousFeature>,
        maps: &CodeMaps,
    ) -> Result<Self, SchemaError> {
        let distinct = |m: &BTreeMap<String, String>| -> Vec<String> {
            let mut v: Vec<String> = m.values().cloned().collect();
            v.sort();
            v.dedup();
            v
        };
        FeatureSchema::new(
            continuous,
            distinct(&maps.icd_to_phecode),
            distinct(&maps.rxnorm_to_ingredient),
            distinct(&maps.cpt_to_ccs),
        )
    }

    pub fn continuous(&self) -> &[ContinuousFeature] {
        &self.continuous
    }

    pub fn vocabulary(&self, space: CodeSpace) -> &[String] {
        match space {
            CodeSpace::Phecode => &self.phecodes,
            CodeSpace::Ingredient => &self.ingredients,
            CodeSpace::Ccs => &self.ccs,
        }
    }

    pub fn continuous_width(&self) -> usize {
        self.continuous.len()
    }

    pub fn categorical_width(&self) -> usize {
        self.phecodes.len() + self.ingredients.len() + self.ccs.len()
    }

    pub fn continuous_index(&self, name: &str) -> Option<usize> {
        self.continuous.iter().position(|f| f.name == name)
    }

    /// Position of a code inside the concatenated categorical block.
    pub fn categorical_index(&self, space: CodeSpace, code: &str) -> Option<usize> {
        let (vocab, offset) = match space {
            CodeSpace::Phecode => (&self.phecodes, 0),
            CodeSpace::Ingredient => (&self.ingredients, self.phecodes.len()),
            CodeSpace::Ccs => (&self.ccs, self.phecodes.len() + self.ingredients.len()),
        };
        vocab.iter().position(|c| c == code).map(|i| i + offset)
    }

    /// Keeps only the continuous features `keep` says yes to (categorical
    /// vocabularies are never filtered).
    pub fn retain_continuous(&self, keep: impl Fn(&ContinuousFeature) -> bool) -> FeatureSchema {
        FeatureSchema {
            continuous: self.continuous.iter().filter(|f| keep(f)).cloned().collect(),
            phecodes: self.phecodes.clone(),
            ingredients: self.ingredients.clone(),
            ccs: self.ccs.clone(),
        }
    }
}

/// Many-to-one translation tables from raw billing codes to grouped codes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodeMaps {
    pub icd_to_phecode: BTreeMap<String, String>,
    pub rxnorm_to_ingredient: BTreeMap<String, String>,
    pub cpt_to_ccs: BTreeMap<String, String>,
}

impl CodeMaps {
    pub fn map(&self, space: CodeSpace, source: &str) -> Option<&str> {
        let table = match space {
            CodeSpace::Phecode => &self.icd_to_phecode,
            CodeSpace::Ingredient => &self.rxnorm_to_ingredient,
            CodeSpace::Ccs => &self.cpt_to_ccs,
        };
        table.get(source).map(String::as_str)
    }
}

/// Human-readable names for grouped codes, used when rendering a record as
/// text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodeDescriptions {
    pub phecode: BTreeMap<String, String>,
    pub ingredient: BTreeMap<String, String>,
    pub ccs: BTreeMap<String, String>,
}

impl CodeDescriptions {
    /// Deterministic fallback descriptions covering every code in the schema.
    pub fn generic(schema: &FeatureSchema) -> Self {
        use alloc::format;
        let fill = |space: CodeSpace, noun: &str| -> BTreeMap<String, String> {
            schema
                .vocabulary(space)
                .iter()
                .map(|c| (c.clone(), format!("{noun} {c}")))
                .collect()
        };
        CodeDescriptions {
            phecode: fill(CodeSpace::Phecode, "condition"),
            ingredient: fill(CodeSpace::Ingredient, "medication"),
            ccs: fill(CodeSpace::Ccs, "procedure"),
        }
    }

    pub fn describe(&self, space: CodeSpace, code: &str) -> Option<&str> {
        let table = match space {
            CodeSpace::Phecode => &self.phecode,
            CodeSpace::Ingredient => &self.ingredient,
            CodeSpace::Ccs => &self.ccs,
        };
        table.get(code).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn feat(name: &str, category: FeatureCategory) -> ContinuousFeature {
        ContinuousFeature {
            name: name.to_string(),
            unit: "u".to_string(),
            category,
        }
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        let dup = FeatureSchema::new(
            alloc::vec![feat("age", FeatureCategory::Vital), feat("age", FeatureCategory::Lab)],
            alloc::vec![],
            alloc::vec![],
            alloc::vec![],
        );
        assert_eq!(dup.unwrap_err(), SchemaError::DuplicateFeature("age".to_string()));

        let dup_code = FeatureSchema::new(
            alloc::vec![],
            alloc::vec!["480".to_string(), "480".to_string()],
            alloc::vec![],
            alloc::vec![],
        );
        assert!(matches!(dup_code, Err(SchemaError::DuplicateCode { .. })));

        assert_eq!(
            FeatureSchema::new(alloc::vec![], alloc::vec![], alloc::vec![], alloc::vec![]),
            Err(SchemaError::Empty)
        );
    }

    #[test]
    fn categorical_layout_is_phecode_ingredient_ccs() {
        let schema = FeatureSchema::new(
            alloc::vec![feat("age", FeatureCategory::Vital)],
            alloc::vec!["480".to_string(), "401".to_string()],
            alloc::vec!["ing_a".to_string()],
            alloc::vec!["ccs_1".to_string(), "ccs_2".to_string()],
        )
        .unwrap();
        assert_eq!(schema.categorical_width(), 5);
        assert_eq!(schema.categorical_index(CodeSpace::Phecode, "401"), Some(1));
        assert_eq!(schema.categorical_index(CodeSpace::Ingredient, "ing_a"), Some(2));
        assert_eq!(schema.categorical_index(CodeSpace::Ccs, "ccs_2"), Some(4));
        assert_eq!(schema.categorical_index(CodeSpace::Ccs, "nope"), None);
        assert_eq!(schema.continuous_index("age"), Some(0));
    }

    #[test]
    fn vocabularies_from_maps_are_sorted_distinct_targets() {
        let mut maps = CodeMaps::default();
        maps.icd_to_phecode.insert("G30.9".to_string(), "290".to_string());
        maps.icd_to_phecode.insert("J18.9".to_string(), "480".to_string());
        maps.icd_to_phecode.insert("J18.0".to_string(), "480".to_string());
        maps.cpt_to_ccs.insert("E0110".to_string(), "113".to_string());
        let schema = FeatureSchema::from_maps(
            alloc::vec![feat("age", FeatureCategory::Vital)],
            &maps,
        )
        .unwrap();
        assert_eq!(schema.vocabulary(CodeSpace::Phecode), ["290", "480"]);
        assert_eq!(schema.vocabulary(CodeSpace::Ingredient), [] as [&str; 0]);
        assert_eq!(schema.vocabulary(CodeSpace::Ccs), ["113"]);
    }

    #[test]
    fn generic_descriptions_cover_schema() {
        let mut maps = CodeMaps::default();
        maps.icd_to_phecode.insert("J18.9".to_string(), "480".to_string());
        let schema =
            FeatureSchema::from_maps(alloc::vec![feat("age", FeatureCategory::Vital)], &maps)
                .unwrap();
        let desc = CodeDescriptions::generic(&schema);
        assert_eq!(desc.describe(CodeSpace::Phecode, "480"), Some("condition 480"));
        assert_eq!(desc.describe(CodeSpace::Ingredient, "x"), None);
    }
}
