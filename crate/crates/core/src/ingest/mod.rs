//! Cohort ingestion and intersectional strata.

mod config;
mod load;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MaihdaError, Result};

pub use config::{ConfigFile, DataConfig};
pub use load::{load_dataset, read_dataset, LoadedDataset, RejectedRow, Schema};

/// Default minimum stratum size for reporting.
pub const DEFAULT_SUPPRESSION_THRESHOLD: usize = 10;

/// A named categorical factor with ordered categories.
///
/// Category order fixes stratum enumeration. The reference category is the one
/// left out of dummy coding; it defaults to the first category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpec {
    name: String,
    categories: Vec<String>,
    reference: usize,
}

impl FactorSpec {
    pub fn new<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let name = name.into();
        let categories: Vec<String> = categories.into_iter().map(Into::into).collect();
        if name.trim().is_empty() {
            return Err(MaihdaError::Config("factor name is empty".into()));
        }
        if categories.len() < 2 {
            return Err(MaihdaError::Config(format!(
                "factor '{name}' needs at least 2 categories, got {}",
                categories.len()
            )));
        }
        for (i, c) in categories.iter().enumerate() {
            if c.trim().is_empty() {
                return Err(MaihdaError::Config(format!(
                    "factor '{name}' has an empty category label"
                )));
            }
            if categories[..i].contains(c) {
                return Err(MaihdaError::Config(format!(
                    "factor '{name}' lists category '{c}' twice"
                )));
            }
        }
        Ok(Self {
            name,
            categories,
            reference: 0,
        })
    }

    pub fn with_reference(mut self, label: &str) -> Result<Self> {
        self.reference = self.code_of(label).ok_or_else(|| {
            MaihdaError::Config(format!(
                "reference '{label}' is not a category of factor '{}'",
                self.name
            ))
        })? as usize;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn reference_label(&self) -> &str {
        &self.categories[self.reference]
    }

    pub fn label(&self, code: u32) -> &str {
        &self.categories[code as usize]
    }

    pub fn code_of(&self, label: &str) -> Option<u32> {
        self.categories
            .iter()
            .position(|c| c == label)
            .map(|i| i as u32)
    }

    /// Non-reference category codes in category order.
    pub fn contrast_codes(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.categories.len() as u32).filter(move |&c| c as usize != self.reference)
    }
}

/// Unit-level cohort data, stored column-wise with factor values as category codes.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDataset {
    cohort_label: String,
    factors: Vec<FactorSpec>,
    unit_ids: Vec<String>,
    codes: Vec<Vec<u32>>,
    outcome: Vec<f64>,
}

impl CohortDataset {
    pub fn new(cohort_label: impl Into<String>, factors: Vec<FactorSpec>) -> Self {
        let codes = vec![Vec::new(); factors.len()];
        Self {
            cohort_label: cohort_label.into(),
            factors,
            unit_ids: Vec::new(),
            codes,
            outcome: Vec::new(),
        }
    }

    /// Appends a row given one category label per factor.
    pub fn push_row(
        &mut self,
        unit_id: impl Into<String>,
        labels: &[&str],
        outcome: f64,
    ) -> Result<()> {
        if labels.len() != self.factors.len() {
            return Err(MaihdaError::InvalidInput(format!(
                "expected {} factor values, got {}",
                self.factors.len(),
                labels.len()
            )));
        }
        let row = self.len() + 1;
        let codes = labels
            .iter()
            .zip(&self.factors)
            .map(|(label, f)| {
                f.code_of(label)
                    .ok_or_else(|| MaihdaError::UnknownCategory {
                        row,
                        column: f.name().to_string(),
                        label: label.to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        self.push_coded(unit_id, &codes, outcome)
    }

    /// Appends a row given category codes.
    pub fn push_coded(
        &mut self,
        unit_id: impl Into<String>,
        codes: &[u32],
        outcome: f64,
    ) -> Result<()> {
        if codes.len() != self.factors.len() {
            return Err(MaihdaError::InvalidInput(format!(
                "expected {} factor codes, got {}",
                self.factors.len(),
                codes.len()
            )));
        }
        if !outcome.is_finite() {
            return Err(MaihdaError::InvalidInput(format!(
                "outcome {outcome} is not finite"
            )));
        }
        for (c, f) in codes.iter().zip(&self.factors) {
            if *c as usize >= f.len() {
                return Err(MaihdaError::InvalidInput(format!(
                    "code {c} out of range for factor '{}'",
                    f.name()
                )));
            }
        }
        for (col, c) in self.codes.iter_mut().zip(codes) {
            col.push(*c);
        }
        self.unit_ids.push(unit_id.into());
        self.outcome.push(outcome);
        Ok(())
    }

    pub fn cohort_label(&self) -> &str {
        &self.cohort_label
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// Category codes of factor `f`, one per row.
    pub fn factor_codes(&self, f: usize) -> &[u32] {
        &self.codes[f]
    }

    pub fn row_codes(&self, row: usize) -> Vec<u32> {
        self.codes.iter().map(|col| col[row]).collect()
    }

    /// Replaces the outcome column. Lengths must match and values must be finite.
    pub fn with_outcome(mut self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.outcome.len() {
            return Err(MaihdaError::InvalidInput(format!(
                "outcome length {} does not match {} rows",
                outcome.len(),
                self.outcome.len()
            )));
        }
        if outcome.iter().any(|y| !y.is_finite()) {
            return Err(MaihdaError::InvalidInput("non-finite outcome".into()));
        }
        self.outcome = outcome;
        Ok(self)
    }
}

/// Assignment of rows to observed factor combinations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumIndex {
    combos: Vec<Vec<u32>>,
    lookup: BTreeMap<Vec<u32>, usize>,
    assignment: Vec<usize>,
}

impl StratumIndex {
    /// Number of strata J.
    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    /// Category codes of stratum `j` (0-based).
    pub fn combo(&self, j: usize) -> &[u32] {
        &self.combos[j]
    }

    pub fn combos(&self) -> &[Vec<u32>] {
        &self.combos
    }

    /// 0-based stratum of a factor combination, if observed.
    pub fn position(&self, combo: &[u32]) -> Option<usize> {
        self.lookup.get(combo).copied()
    }

    /// 0-based stratum per dataset row.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn labels(&self, j: usize, factors: &[FactorSpec]) -> Vec<String> {
        self.combos[j]
            .iter()
            .zip(factors)
            .map(|(&c, f)| f.label(c).to_string())
            .collect()
    }
}

/// Per-stratum sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    /// 1-based stratum id.
    pub stratum_id: usize,
    pub n: usize,
    pub sum_y: f64,
    pub sum_y2: f64,
    pub mean_y: f64,
    /// Sum of squared deviations from the stratum mean, accumulated in a second pass.
    pub ss_within: f64,
    pub suppressed: bool,
}

/// Assigns every row a stratum. Only observed combinations get ids, numbered
/// 1..J in lexicographic order of category codes.
pub fn build_strata(dataset: &CohortDataset) -> StratumIndex {
    let mut lookup: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for row in 0..dataset.len() {
        lookup.entry(dataset.row_codes(row)).or_insert(0);
    }
    let mut combos = Vec::with_capacity(lookup.len());
    for (j, (combo, id)) in lookup.iter_mut().enumerate() {
        *id = j;
        combos.push(combo.clone());
    }
    let assignment = (0..dataset.len())
        .map(|row| lookup[&dataset.row_codes(row)])
        .collect();
    StratumIndex {
        combos,
        lookup,
        assignment,
    }
}

pub fn summarize_strata(
    dataset: &CohortDataset,
    index: &StratumIndex,
    suppression_threshold: usize,
) -> Vec<StratumSummary> {
    let j_count = index.len();
    let mut n = vec![0usize; j_count];
    let mut sum = vec![0.0; j_count];
    let mut sum2 = vec![0.0; j_count];
    for (&j, &y) in index.assignment.iter().zip(dataset.outcome()) {
        n[j] += 1;
        sum[j] += y;
        sum2[j] += y * y;
    }
    let mean: Vec<f64> = sum.iter().zip(&n).map(|(s, &k)| s / k as f64).collect();
    let mut ss = vec![0.0; j_count];
    for (&j, &y) in index.assignment.iter().zip(dataset.outcome()) {
        let d = y - mean[j];
        ss[j] += d * d;
    }
    (0..j_count)
        .map(|j| StratumSummary {
            stratum_id: j + 1,
            n: n[j],
            sum_y: sum[j],
            sum_y2: sum2[j],
            mean_y: mean[j],
            ss_within: ss[j],
            suppressed: n[j] < suppression_threshold,
        })
        .collect()
}
