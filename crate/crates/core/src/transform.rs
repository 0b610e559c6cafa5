//! Outcome transforms and stratum-level design matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MaihdaError, Result};
use crate::ingest::{FactorSpec, StratumIndex};
use crate::stats;

/// Rescales to sample mean 0 and sample SD 1 (n-1 denominator).
pub fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(MaihdaError::InvalidInput(
            "standardization needs at least 2 values".into(),
        ));
    }
    let m = stats::mean(values);
    let sd = stats::sample_variance(values).sqrt();
    if !sd.is_finite() || sd <= 0.0 {
        return Err(MaihdaError::InvalidInput(
            "cannot standardize: standard deviation is zero".into(),
        ));
    }
    Ok(values.iter().map(|v| (v - m) / sd).collect())
}

/// Blom rank-based inverse normal scores, `Φ⁻¹((r - 3/8) / (n + 1/4))` with
/// tie-averaged ranks `r`.
pub fn normal_scores(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(MaihdaError::InvalidInput(
            "normal scores need at least 2 values".into(),
        ));
    }
    let n = values.len() as f64;
    Ok(stats::average_ranks(values)
        .into_iter()
        .map(|r| {
            let p = (r - 0.375) / (n + 0.25);
            // Φ⁻¹(1/2) is exactly 0; keep ties at the median exact.
            if p == 0.5 {
                0.0
            } else {
                stats::inverse_normal_cdf(p)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    Blom,
}

/// Default outcome pipeline: optional rank normalization, then z-standardization.
pub fn prepare_outcome(values: &[f64], normalization: Normalization) -> Result<Vec<f64>> {
    match normalization {
        Normalization::None => standardize(values),
        Normalization::Blom => standardize(&normal_scores(values)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Intercept,
    /// Dummy for `category` of factor number `factor`.
    Main {
        factor: usize,
        category: u32,
    },
    /// Product of two main-effect dummies.
    Interaction {
        a: (usize, u32),
        b: (usize, u32),
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignColumn {
    pub name: String,
    pub kind: ColumnKind,
}

/// Stratum-level design: one row per stratum, intercept first, then reference-coded
/// dummies, then optional interaction dummies.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    columns: Vec<DesignColumn>,
    values: DMatrix<f64>,
}

fn main_name(f: &FactorSpec, category: u32) -> String {
    format!("{}={}", f.name(), f.label(category))
}

impl DesignMatrix {
    pub fn columns(&self) -> &[DesignColumn] {
        &self.columns
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, j: usize) -> Vec<f64> {
        self.values.row(j).iter().copied().collect()
    }

    fn column_of(&self, kind: ColumnKind) -> Option<usize> {
        self.columns.iter().position(|c| c.kind == kind)
    }

    /// Columns that are linear combinations of earlier columns.
    pub fn collinear_columns(&self) -> Vec<String> {
        // Modified Gram-Schmidt in column order; a column whose residual norm
        // collapses relative to its original norm is dependent.
        let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
        let mut dependent = Vec::new();
        for (k, col) in self.values.column_iter().enumerate() {
            let mut v = col.clone_owned();
            let norm0 = v.norm();
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
            let norm = v.norm();
            if norm0 == 0.0 || norm <= 1e-9 * norm0 {
                dependent.push(self.columns[k].name.clone());
            } else {
                basis.push(v / norm);
            }
        }
        dependent
    }

    pub fn check_full_rank(&self) -> Result<()> {
        let dependent = self.collinear_columns();
        if dependent.is_empty() {
            Ok(())
        } else {
            Err(MaihdaError::RankDeficient { columns: dependent })
        }
    }
}

/// Intercept-only design for `strata` rows.
pub fn intercept_design(strata: usize) -> DesignMatrix {
    DesignMatrix {
        columns: vec![DesignColumn {
            name: "intercept".into(),
            kind: ColumnKind::Intercept,
        }],
        values: DMatrix::from_element(strata, 1, 1.0),
    }
}

/// Intercept plus reference-coded dummies for the listed factors.
pub fn factor_design(
    index: &StratumIndex,
    factors: &[FactorSpec],
    include: &[usize],
) -> DesignMatrix {
    let mut columns = vec![DesignColumn {
        name: "intercept".into(),
        kind: ColumnKind::Intercept,
    }];
    for &f in include {
        for c in factors[f].contrast_codes() {
            columns.push(DesignColumn {
                name: main_name(&factors[f], c),
                kind: ColumnKind::Main {
                    factor: f,
                    category: c,
                },
            });
        }
    }
    let values = DMatrix::from_fn(index.len(), columns.len(), |j, k| match columns[k].kind {
        ColumnKind::Intercept => 1.0,
        ColumnKind::Main { factor, category } => f64::from(index.combo(j)[factor] == category),
        ColumnKind::Interaction { .. } => unreachable!(),
    });
    DesignMatrix { columns, values }
}

/// Main-effects design over every factor: `p = 1 + Σ(K_f - 1)`.
pub fn main_effects_design(index: &StratumIndex, factors: &[FactorSpec]) -> DesignMatrix {
    let all: Vec<usize> = (0..factors.len()).collect();
    factor_design(index, factors, &all)
}

/// Appends the `(K_a - 1)(K_b - 1)` product dummies of two factors already
/// present in `design` as main effects.
pub fn with_interaction(
    design: &DesignMatrix,
    factors: &[FactorSpec],
    factor_a: usize,
    factor_b: usize,
) -> Result<DesignMatrix> {
    if factor_a == factor_b {
        return Err(MaihdaError::InvalidInput(
            "interaction needs two distinct factors".into(),
        ));
    }
    let (fa, fb) = match (factors.get(factor_a), factors.get(factor_b)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(MaihdaError::InvalidInput(
                "factor index out of range".into(),
            ))
        }
    };
    let mut columns = design.columns.clone();
    let mut new_cols = Vec::new();
    for ca in fa.contrast_codes() {
        for cb in fb.contrast_codes() {
            let find = |factor, category| {
                design
                    .column_of(ColumnKind::Main { factor, category })
                    .ok_or_else(|| {
                        MaihdaError::InvalidInput(format!(
                            "design has no main-effect column for factor '{}'",
                            factors[factor].name()
                        ))
                    })
            };
            let (ka, kb) = (find(factor_a, ca)?, find(factor_b, cb)?);
            new_cols.push(
                design
                    .values
                    .column(ka)
                    .component_mul(&design.values.column(kb)),
            );
            columns.push(DesignColumn {
                name: format!("{}#{}", main_name(fa, ca), main_name(fb, cb)),
                kind: ColumnKind::Interaction {
                    a: (factor_a, ca),
                    b: (factor_b, cb),
                },
            });
        }
    }
    let p0 = design.ncols();
    let mut values = design
        .values
        .clone()
        .resize_horizontally(columns.len(), 0.0);
    for (i, col) in new_cols.into_iter().enumerate() {
        values.set_column(p0 + i, &col);
    }
    Ok(DesignMatrix { columns, values })
}

/// Every unordered pair of factor indices, in lexicographic order.
pub fn factor_pairs(n_factors: usize) -> Vec<(usize, usize)> {
    (0..n_factors)
        .flat_map(|a| (a + 1..n_factors).map(move |b| (a, b)))
        .collect()
}
