use std::path::Path;

use indexmap::IndexMap;
use serde::Deserialize;

use super::FactorSpec;
use crate::error::{MaihdaError, Result};

/// Column mapping and factor declarations read from a TOML config file.
///
/// ```toml
/// outcome = "score"      # outcome column
/// id = "student"         # optional unit id column
/// cohort = "age11"       # optional cohort label
///
/// [factors]              # key = column name, in stratum enumeration order
/// term = ["Autumn", "Spring", "Summer"]
/// eth = { categories = ["Black", "White", "Asian"], reference = "White" }
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub outcome: String,
    pub id: Option<String>,
    pub cohort: Option<String>,
    pub factors: Vec<FactorSpec>,
}

/// A parsed config file: the data section plus the optional `[simulation]` table.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub data: DataConfig,
    pub simulation: Option<toml::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    outcome: String,
    id: Option<String>,
    cohort: Option<String>,
    factors: IndexMap<String, RawFactor>,
    simulation: Option<toml::Value>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawFactor {
    List(Vec<String>),
    Table {
        categories: Vec<String>,
        reference: Option<String>,
    },
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| MaihdaError::Config(e.to_string()))?;
        if raw.factors.is_empty() {
            return Err(MaihdaError::Config("no factors declared".into()));
        }
        let factors = raw
            .factors
            .into_iter()
            .map(|(name, f)| match f {
                RawFactor::List(cats) => FactorSpec::new(name, cats),
                RawFactor::Table {
                    categories,
                    reference,
                } => {
                    let spec = FactorSpec::new(name, categories)?;
                    match reference {
                        Some(r) => spec.with_reference(&r),
                        None => Ok(spec),
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if factors.iter().any(|f| f.name() == raw.outcome) {
            return Err(MaihdaError::Config(format!(
                "column '{}' is both outcome and factor",
                raw.outcome
            )));
        }
        Ok(Self {
            data: DataConfig {
                outcome: raw.outcome,
                id: raw.id,
                cohort: raw.cohort,
                factors,
            },
            simulation: raw.simulation,
        })
    }

    pub fn read(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| MaihdaError::io(path, e))?;
        Ok((Self::parse(&text)?, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ordered_factors_and_reference() {
        let cfg = ConfigFile::parse(
            r#"
            outcome = "y"
            [factors]
            zeta = ["a", "b"]
            alpha = { categories = ["p", "q", "r"], reference = "q" }
            "#,
        )
        .unwrap();
        let names: Vec<_> = cfg.data.factors.iter().map(|f| f.name()).collect();
        assert_eq!(names, ["zeta", "alpha"]);
        assert_eq!(cfg.data.factors[1].reference_label(), "q");
        assert!(cfg.simulation.is_none());
    }

    #[test]
    fn rejects_bad_reference_and_unknown_keys() {
        let bad_ref =
            "outcome = \"y\"\n[factors]\nf = { categories = [\"a\",\"b\"], reference = \"c\" }";
        assert!(matches!(
            ConfigFile::parse(bad_ref),
            Err(MaihdaError::Config(_))
        ));
        let unknown = "outcome = \"y\"\nweight = \"w\"\n[factors]\nf = [\"a\",\"b\"]";
        assert!(ConfigFile::parse(unknown).is_err());
    }
}
