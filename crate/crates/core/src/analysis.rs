//! MAIHDA workflow: unadjusted and main-effects models, VPC/PCV, stratum
//! tables, covariate scans and cross-cohort comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MaihdaError, Result};
use crate::ingest::{
    build_strata, summarize_strata, CohortDataset, FactorSpec, StratumIndex, StratumSummary,
};
use crate::lmm::{self, FitResult, Method, StratumEffect, VarianceComponents};
use crate::stats;
use crate::transform::{
    factor_design, factor_pairs, intercept_design, main_effects_design, with_interaction,
    DesignMatrix,
};

/// Default |û| above which a significant effect counts as meaningful, in outcome SD units.
pub const DEFAULT_MEANINGFUL_THRESHOLD: f64 = 0.1;

/// Identifies a fitted model; serialized as its display string, for example
/// `model1`, `model2+fsm*ethnicity` or `single(sen)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ModelTag {
    Model1,
    Model2,
    Model2Interaction { a: String, b: String },
    Single { factor: String },
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelTag::Model1 => f.write_str("model1"),
            ModelTag::Model2 => f.write_str("model2"),
            ModelTag::Model2Interaction { a, b } => write!(f, "model2+{a}*{b}"),
            ModelTag::Single { factor } => write!(f, "single({factor})"),
        }
    }
}

impl FromStr for ModelTag {
    type Err = MaihdaError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || MaihdaError::InvalidInput(format!("unknown model tag '{s}'"));
        match s {
            "model1" => return Ok(ModelTag::Model1),
            "model2" => return Ok(ModelTag::Model2),
            _ => {}
        }
        if let Some(pair) = s.strip_prefix("model2+") {
            let (a, b) = pair.split_once('*').ok_or_else(bad)?;
            return Ok(ModelTag::Model2Interaction {
                a: a.to_string(),
                b: b.to_string(),
            });
        }
        let factor = s
            .strip_prefix("single(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        Ok(ModelTag::Single {
            factor: factor.to_string(),
        })
    }
}

impl Serialize for ModelTag {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelTag {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Variance partition coefficient `σu² / (σu² + σe²)`.
pub fn vpc(vc: &VarianceComponents) -> f64 {
    vc.sigma2_u / (vc.sigma2_u + vc.sigma2_e)
}

/// Proportional change in stratum variance relative to `baseline`.
pub fn pcv(baseline_sigma2_u: f64, comparison_sigma2_u: f64) -> Result<f64> {
    if !baseline_sigma2_u.is_finite() || baseline_sigma2_u <= 0.0 {
        return Err(MaihdaError::InvalidInput(format!(
            "PCV baseline stratum variance must be positive, got {baseline_sigma2_u}"
        )));
    }
    Ok((baseline_sigma2_u - comparison_sigma2_u) / baseline_sigma2_u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pcv {
    pub baseline: ModelTag,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaihdaModelResult {
    pub tag: ModelTag,
    pub fit: FitResult,
    pub effects: Vec<StratumEffect>,
    pub vpc: f64,
    pub pcv: Option<Pcv>,
}

impl MaihdaModelResult {
    fn with_pcv(mut self, baseline: &MaihdaModelResult) -> Self {
        self.pcv = pcv(baseline.fit.vc.sigma2_u, self.fit.vc.sigma2_u)
            .ok()
            .map(|value| Pcv {
                baseline: baseline.tag.clone(),
                value,
            });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScanStatus {
    Fitted,
    RankDeficient { columns: Vec<String> },
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub tag: ModelTag,
    /// `a*b` for pairs, the factor name for single-covariate rows.
    pub label: String,
    pub status: ScanStatus,
    pub fit: Option<FitResult>,
    pub vpc: Option<f64>,
    pub pcv: Option<f64>,
    pub baseline: ModelTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableOrder {
    #[default]
    ByMean,
    ByEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumTableRow {
    pub stratum_id: usize,
    pub labels: Vec<String>,
    pub n: usize,
    pub observed_mean: f64,
    pub predicted_mean: f64,
    pub u_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// 1 = lowest; ties share the average rank.
    pub rank: f64,
    pub significant: bool,
    pub meaningful: bool,
}

/// Reported strata of one model, suppressed strata excluded, sorted by rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumTable {
    pub order: TableOrder,
    pub rows: Vec<StratumTableRow>,
    pub suppressed_count: usize,
    pub n_strata: usize,
}

impl StratumTable {
    /// Highest-ranked `k` rows, best first.
    pub fn top(&self, k: usize) -> Vec<&StratumTableRow> {
        self.rows.iter().rev().take(k).collect()
    }

    /// Lowest-ranked `k` rows, worst first.
    pub fn bottom(&self, k: usize) -> Vec<&StratumTableRow> {
        self.rows.iter().take(k).collect()
    }

    pub fn share_significant(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.significant).count() as f64 / self.rows.len() as f64
    }
}

pub fn stratum_table(
    result: &MaihdaModelResult,
    summaries: &[StratumSummary],
    labels: &[Vec<String>],
    order: TableOrder,
    meaningful_threshold: f64,
) -> StratumTable {
    let kept: Vec<usize> = (0..summaries.len())
        .filter(|&j| !summaries[j].suppressed)
        .collect();
    let key: Vec<f64> = kept
        .iter()
        .map(|&j| match order {
            TableOrder::ByMean => result.effects[j].predicted_mean,
            TableOrder::ByEffect => result.effects[j].u_hat,
        })
        .collect();
    let ranks = stats::average_ranks(&key);
    let mut rows: Vec<StratumTableRow> = kept
        .iter()
        .zip(ranks)
        .map(|(&j, rank)| {
            let e = &result.effects[j];
            let significant = e.significant();
            StratumTableRow {
                stratum_id: summaries[j].stratum_id,
                labels: labels[j].clone(),
                n: summaries[j].n,
                observed_mean: summaries[j].mean_y,
                predicted_mean: e.predicted_mean,
                u_hat: e.u_hat,
                se: e.se_u,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
                rank,
                significant,
                meaningful: significant && e.u_hat.abs() > meaningful_threshold,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.rank
            .total_cmp(&b.rank)
            .then(a.stratum_id.cmp(&b.stratum_id))
    });
    StratumTable {
        order,
        rows,
        suppressed_count: summaries.len() - kept.len(),
        n_strata: summaries.len(),
    }
}

/// Fraction of values at or above `threshold`.
pub fn benchmark_share(values: &[f64], threshold: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(MaihdaError::InvalidInput(
            "benchmark share of no strata".into(),
        ));
    }
    Ok(values.iter().filter(|&&v| v >= threshold).count() as f64 / values.len() as f64)
}

/// Strata, summaries and labels of one cohort, ready for model fitting.
#[derive(Debug, Clone)]
pub struct Analysis {
    factors: Vec<FactorSpec>,
    index: StratumIndex,
    summaries: Vec<StratumSummary>,
    labels: Vec<Vec<String>>,
    method: Method,
}

impl Analysis {
    pub fn new(dataset: &CohortDataset, method: Method, suppression_threshold: usize) -> Self {
        let index = build_strata(dataset);
        let summaries = summarize_strata(dataset, &index, suppression_threshold);
        let factors = dataset.factors().to_vec();
        let labels = (0..index.len())
            .map(|j| index.labels(j, &factors))
            .collect();
        Self {
            factors,
            index,
            summaries,
            labels,
            method,
        }
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn index(&self) -> &StratumIndex {
        &self.index
    }

    pub fn summaries(&self) -> &[StratumSummary] {
        &self.summaries
    }

    pub fn labels(&self) -> &[Vec<String>] {
        &self.labels
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn fit_design(&self, tag: ModelTag, design: &DesignMatrix) -> Result<MaihdaModelResult> {
        let fit = lmm::fit(&self.summaries, design, self.method)?;
        let effects = lmm::eb_predict(&fit, &self.summaries, design);
        Ok(MaihdaModelResult {
            tag,
            vpc: vpc(&fit.vc),
            fit,
            effects,
            pcv: None,
        })
    }

    pub fn model1(&self) -> Result<MaihdaModelResult> {
        self.fit_design(ModelTag::Model1, &intercept_design(self.index.len()))
    }

    pub fn main_effects_design(&self) -> DesignMatrix {
        main_effects_design(&self.index, &self.factors)
    }

    /// Main-effects model with PCV against `model1`.
    pub fn model2(&self, model1: &MaihdaModelResult) -> Result<MaihdaModelResult> {
        Ok(self
            .fit_design(ModelTag::Model2, &self.main_effects_design())?
            .with_pcv(model1))
    }

    fn scan_row(
        &self,
        tag: ModelTag,
        label: String,
        design: Result<DesignMatrix>,
        baseline: &MaihdaModelResult,
    ) -> ScanRow {
        let outcome = design.and_then(|d| self.fit_design(tag.clone(), &d));
        let (status, fit, v, p) = match outcome {
            Ok(r) => {
                let r = r.with_pcv(baseline);
                (
                    ScanStatus::Fitted,
                    Some(r.fit),
                    Some(r.vpc),
                    r.pcv.map(|p| p.value),
                )
            }
            Err(MaihdaError::RankDeficient { columns }) => {
                (ScanStatus::RankDeficient { columns }, None, None, None)
            }
            Err(e) => (
                ScanStatus::Failed {
                    message: e.to_string(),
                },
                None,
                None,
                None,
            ),
        };
        ScanRow {
            tag,
            label,
            status,
            fit,
            vpc: v,
            pcv: p,
            baseline: baseline.tag.clone(),
        }
    }

    /// Main effects plus one pairwise interaction at a time, PCV against
    /// `model2`, sorted by descending PCV. Failed pairs are flagged and sorted last.
    pub fn interaction_scan(&self, model2: &MaihdaModelResult) -> Vec<ScanRow> {
        let main = self.main_effects_design();
        let rows: Vec<ScanRow> = factor_pairs(self.factors.len())
            .into_par_iter()
            .map(|(a, b)| {
                let (na, nb) = (
                    self.factors[a].name().to_string(),
                    self.factors[b].name().to_string(),
                );
                let label = format!("{na}*{nb}");
                let tag = ModelTag::Model2Interaction { a: na, b: nb };
                self.scan_row(
                    tag,
                    label,
                    with_interaction(&main, &self.factors, a, b),
                    model2,
                )
            })
            .collect();
        sort_by_pcv(rows)
    }

    /// One factor's main effects at a time, PCV against `model1`, sorted by descending PCV.
    pub fn single_covariate_scan(&self, model1: &MaihdaModelResult) -> Vec<ScanRow> {
        let rows: Vec<ScanRow> = (0..self.factors.len())
            .into_par_iter()
            .map(|f| {
                let name = self.factors[f].name().to_string();
                let tag = ModelTag::Single {
                    factor: name.clone(),
                };
                let design = factor_design(&self.index, &self.factors, &[f]);
                self.scan_row(tag, name, Ok(design), model1)
            })
            .collect();
        sort_by_pcv(rows)
    }

    pub fn stratum_table(
        &self,
        result: &MaihdaModelResult,
        order: TableOrder,
        meaningful_threshold: f64,
    ) -> StratumTable {
        stratum_table(
            result,
            &self.summaries,
            &self.labels,
            order,
            meaningful_threshold,
        )
    }
}

fn sort_by_pcv(mut rows: Vec<ScanRow>) -> Vec<ScanRow> {
    rows.sort_by(|a, b| match (a.pcv, b.pcv) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    rows
}

pub fn fit_model1(dataset: &CohortDataset, method: Method) -> Result<MaihdaModelResult> {
    Analysis::new(dataset, method, 0).model1()
}

pub fn fit_model2(dataset: &CohortDataset, method: Method) -> Result<MaihdaModelResult> {
    let analysis = Analysis::new(dataset, method, 0);
    analysis.model2(&analysis.model1()?)
}

pub fn interaction_scan(dataset: &CohortDataset, method: Method) -> Result<Vec<ScanRow>> {
    let analysis = Analysis::new(dataset, method, 0);
    let m1 = analysis.model1()?;
    Ok(analysis.interaction_scan(&analysis.model2(&m1)?))
}

pub fn single_covariate_scan(dataset: &CohortDataset, method: Method) -> Result<Vec<ScanRow>> {
    let analysis = Analysis::new(dataset, method, 0);
    Ok(analysis.single_covariate_scan(&analysis.model1()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    #[default]
    UHat,
    Rank,
}

/// The per-stratum values a cohort comparison needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparableStratum {
    pub labels: Vec<String>,
    pub u_hat: f64,
    pub rank: f64,
}

impl From<&StratumTableRow> for ComparableStratum {
    fn from(r: &StratumTableRow) -> Self {
        Self {
            labels: r.labels.clone(),
            u_hat: r.u_hat,
            rank: r.rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumDifference {
    pub labels: Vec<String>,
    pub a: f64,
    pub b: f64,
    /// `b - a`
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortComparison {
    pub quantity: Quantity,
    pub n_matched: usize,
    pub pearson: f64,
    pub spearman: f64,
    pub differences: Vec<StratumDifference>,
    pub largest_increase: Option<StratumDifference>,
    pub largest_decrease: Option<StratumDifference>,
}

/// Matches strata by factor-label tuple and correlates the chosen quantity.
/// Inputs should already exclude suppressed strata.
pub fn compare_cohorts(
    a: &[ComparableStratum],
    b: &[ComparableStratum],
    quantity: Quantity,
) -> Result<CohortComparison> {
    let value = |s: &ComparableStratum| match quantity {
        Quantity::UHat => s.u_hat,
        Quantity::Rank => s.rank,
    };
    let in_b: BTreeMap<&[String], &ComparableStratum> =
        b.iter().map(|s| (s.labels.as_slice(), s)).collect();
    let mut matched: Vec<(&ComparableStratum, &ComparableStratum)> = a
        .iter()
        .filter_map(|sa| in_b.get(sa.labels.as_slice()).map(|sb| (sa, *sb)))
        .collect();
    matched.sort_by(|x, y| x.0.labels.cmp(&y.0.labels));
    if matched.len() < 3 {
        return Err(MaihdaError::InvalidInput(format!(
            "need at least 3 strata present in both cohorts, found {}",
            matched.len()
        )));
    }
    let xs: Vec<f64> = matched.iter().map(|(sa, _)| value(sa)).collect();
    let ys: Vec<f64> = matched.iter().map(|(_, sb)| value(sb)).collect();
    let differences: Vec<StratumDifference> = matched
        .iter()
        .map(|(sa, sb)| StratumDifference {
            labels: sa.labels.clone(),
            a: value(sa),
            b: value(sb),
            difference: value(sb) - value(sa),
        })
        .collect();
    let largest_increase = differences
        .iter()
        .filter(|d| d.difference > 0.0)
        .max_by(|x, y| x.difference.total_cmp(&y.difference))
        .cloned();
    let largest_decrease = differences
        .iter()
        .filter(|d| d.difference < 0.0)
        .min_by(|x, y| x.difference.total_cmp(&y.difference))
        .cloned();
    Ok(CohortComparison {
        quantity,
        n_matched: matched.len(),
        pearson: stats::pearson(&xs, &ys),
        spearman: stats::spearman(&xs, &ys),
        differences,
        largest_increase,
        largest_decrease,
    })
}
