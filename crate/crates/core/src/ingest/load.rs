use std::io::Read;
use std::path::Path;

use super::{CohortDataset, DataConfig, FactorSpec};
use crate::error::{MaihdaError, Result};

/// Which CSV columns hold the outcome, the optional unit id and the factors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub outcome: String,
    pub id: Option<String>,
    pub cohort: Option<String>,
}

impl From<&DataConfig> for Schema {
    fn from(cfg: &DataConfig) -> Self {
        Self {
            outcome: cfg.outcome.clone(),
            id: cfg.id.clone(),
            cohort: cfg.cohort.clone(),
        }
    }
}

/// A row dropped during ingestion because a required field was missing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub column: String,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: CohortDataset,
    pub rejected: Vec<RejectedRow>,
}

impl LoadedDataset {
    pub fn rejected_count(&self) -> usize {
        self.rejected.len()
    }
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f == "NA"
}

pub fn load_dataset(path: &Path, schema: &Schema, factors: &[FactorSpec]) -> Result<LoadedDataset> {
    let file = std::fs::File::open(path).map_err(|e| MaihdaError::io(path, e))?;
    let label = schema.cohort.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    read_dataset(file, &label, schema, factors)
}

/// Reads comma-separated UTF-8 data with a header row.
///
/// Rows with an empty (or `NA`) outcome or factor field are rejected and
/// reported. An unknown category label or a non-numeric outcome is an error.
pub fn read_dataset<R: Read>(
    reader: R,
    cohort_label: &str,
    schema: &Schema,
    factors: &[FactorSpec],
) -> Result<LoadedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| MaihdaError::MissingColumn(name.to_string()))
    };
    let outcome_col = column(&schema.outcome)?;
    let id_col = schema.id.as_deref().map(column).transpose()?;
    let factor_cols = factors
        .iter()
        .map(|f| column(f.name()))
        .collect::<Result<Vec<_>>>()?;

    let mut dataset = CohortDataset::new(cohort_label, factors.to_vec());
    let mut rejected = Vec::new();
    let mut codes = vec![0u32; factors.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |c: usize| record.get(c).unwrap_or("");

        let missing = factor_cols
            .iter()
            .zip(factors)
            .map(|(&c, f)| (c, f.name()))
            .chain(std::iter::once((outcome_col, schema.outcome.as_str())))
            .find(|&(c, _)| is_missing(field(c)));
        if let Some((_, name)) = missing {
            rejected.push(RejectedRow {
                row,
                column: name.to_string(),
            });
            continue;
        }

        for ((code, &c), f) in codes.iter_mut().zip(&factor_cols).zip(factors) {
            let label = field(c).trim();
            *code = f
                .code_of(label)
                .ok_or_else(|| MaihdaError::UnknownCategory {
                    row,
                    column: f.name().to_string(),
                    label: label.to_string(),
                })?;
        }
        let raw = field(outcome_col).trim();
        let y = raw
            .parse::<f64>()
            .ok()
            .filter(|y| y.is_finite())
            .ok_or_else(|| MaihdaError::NonNumericOutcome {
                row,
                column: schema.outcome.clone(),
                value: raw.to_string(),
            })?;
        let id = match id_col {
            Some(c) => field(c).trim().to_string(),
            None => row.to_string(),
        };
        dataset.push_coded(id, &codes, y)?;
    }
    Ok(LoadedDataset { dataset, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factors() -> Vec<FactorSpec> {
        vec![
            FactorSpec::new("term", ["Autumn", "Spring", "Summer"]).unwrap(),
            FactorSpec::new("fsm", ["No", "Yes"]).unwrap(),
        ]
    }

    fn schema() -> Schema {
        Schema {
            outcome: "y".into(),
            id: Some("id".into()),
            cohort: None,
        }
    }

    #[test]
    fn reads_valid_rows() {
        let csv = "id,term,fsm,y\n1,Autumn,No,1.5\n2,Spring,Yes,2\n3,Summer,No,-1\n\
                   4,Autumn,Yes,0\n5,Spring,No,3.25\n6,Summer,Yes,1e-3\n";
        let out = read_dataset(csv.as_bytes(), "c", &schema(), &factors()).unwrap();
        assert_eq!(out.dataset.len(), 6);
        assert_eq!(out.rejected_count(), 0);
        assert_eq!(out.dataset.unit_ids()[4], "5");
        assert_eq!(out.dataset.outcome()[5], 1e-3);
    }

    #[test]
    fn empty_outcome_is_rejected_and_counted() {
        let csv = "id,term,fsm,y\n1,Autumn,No,1\n2,Spring,Yes,\n3,Summer,No,2\n4,Autumn,Yes,3\n";
        let out = read_dataset(csv.as_bytes(), "c", &schema(), &factors()).unwrap();
        assert_eq!(out.dataset.len(), 3);
        assert_eq!(
            out.rejected,
            vec![RejectedRow {
                row: 2,
                column: "y".into()
            }]
        );
    }

    #[test]
    fn unknown_label_is_an_error() {
        let csv = "id,term,fsm,y\n1,Winter,No,1\n";
        let err = read_dataset(csv.as_bytes(), "c", &schema(), &factors()).unwrap_err();
        assert!(
            matches!(err, MaihdaError::UnknownCategory { row: 1, ref label, .. } if label == "Winter")
        );
    }

    #[test]
    fn non_numeric_outcome_and_missing_column() {
        let csv = "id,term,fsm,y\n1,Autumn,No,abc\n";
        let err = read_dataset(csv.as_bytes(), "c", &schema(), &factors()).unwrap_err();
        assert!(matches!(err, MaihdaError::NonNumericOutcome { .. }));
        let csv = "id,term,y\n1,Autumn,1\n";
        let err = read_dataset(csv.as_bytes(), "c", &schema(), &factors()).unwrap_err();
        assert!(matches!(err, MaihdaError::MissingColumn(ref c) if c == "fsm"));
    }
}
