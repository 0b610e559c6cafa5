//! Machine-readable reports and plot data.
//!
//! A [`ReportDocument`] serializes to JSON twice over: the top-level fields carry
//! every floating-point number rounded to 6 significant digits, and the same
//! document at full precision sits under `"raw"`. [`ReportDocument::from_json`]
//! reads the `"raw"` copy back. Suppressed strata never enter a report; they
//! appear only in the `suppressed_count` fields.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::analysis::{
    CohortComparison, MaihdaModelResult, ModelTag, ScanRow, ScanStatus, StratumTable,
    StratumTableRow, TableOrder,
};
use crate::error::{MaihdaError, Result};
use crate::lmm::{Method, OlsResult};
use crate::stats::{self, sig6};
use crate::transform::Normalization;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything needed to regenerate a report. No paths and no timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_digest: Option<String>,
    /// Digests of report files a comparison was built from.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_digests: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<Settings>,
    #[serde(default)]
    pub n_units: usize,
    #[serde(default)]
    pub n_strata: usize,
    #[serde(default)]
    pub suppressed_count: usize,
    #[serde(default)]
    pub rejected_rows: usize,
}

impl Metadata {
    pub fn new(command: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            cohort: None,
            seed: None,
            config_digest: None,
            data_digest: None,
            input_digests: Vec::new(),
            settings: None,
            n_units: 0,
            n_strata: 0,
            suppressed_count: 0,
            rejected_rows: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub outcome: String,
    pub normalize: Normalization,
    pub method: Method,
    pub suppression_threshold: usize,
    pub meaningful_threshold: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub benchmarks: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceTable {
    pub sigma2_u: Estimate,
    pub sigma2_e: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcvLine {
    pub baseline: ModelTag,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBlock {
    pub model: ModelTag,
    pub method: Method,
    pub coefficients: Vec<Coefficient>,
    pub variance: VarianceTable,
    pub vpc: f64,
    pub pcv: Option<PcvLine>,
    pub deviance: f64,
    pub converged: bool,
    pub boundary: bool,
    pub iterations: usize,
}

fn coefficients(names: &[String], estimates: &[f64], ses: &[f64]) -> Vec<Coefficient> {
    names
        .iter()
        .zip(estimates.iter().zip(ses))
        .map(|(name, (&estimate, &se))| Coefficient {
            name: name.clone(),
            estimate,
            se,
        })
        .collect()
}

impl ModelBlock {
    pub fn from_result(result: &MaihdaModelResult) -> Self {
        let fit = &result.fit;
        Self {
            model: result.tag.clone(),
            method: fit.method,
            coefficients: coefficients(
                &fit.fixed.names,
                &fit.fixed.estimates,
                &fit.fixed.standard_errors,
            ),
            variance: VarianceTable {
                sigma2_u: Estimate {
                    estimate: fit.vc.sigma2_u,
                    se: fit.vc_standard_errors.sigma2_u,
                },
                sigma2_e: Estimate {
                    estimate: fit.vc.sigma2_e,
                    se: fit.vc_standard_errors.sigma2_e,
                },
            },
            vpc: result.vpc,
            pcv: result.pcv.as_ref().map(|p| PcvLine {
                baseline: p.baseline.clone(),
                value: p.value,
            }),
            deviance: fit.deviance,
            converged: fit.converged,
            boundary: fit.boundary,
            iterations: fit.iterations,
        }
    }
}

/// A stratum table as reported: factor names plus the unsuppressed rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumBlock {
    pub model: ModelTag,
    pub order: TableOrder,
    pub factors: Vec<String>,
    pub n_strata: usize,
    pub suppressed_count: usize,
    pub share_significant: f64,
    pub rows: Vec<StratumTableRow>,
}

impl StratumBlock {
    pub fn new(model: ModelTag, factors: Vec<String>, table: StratumTable) -> Self {
        Self {
            model,
            order: table.order,
            factors,
            n_strata: table.n_strata,
            suppressed_count: table.suppressed_count,
            share_significant: table.share_significant(),
            rows: table.rows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkQuantity {
    UHat,
    PredictedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkLine {
    pub model: ModelTag,
    pub quantity: BenchmarkQuantity,
    pub threshold: f64,
    /// Fraction of reported strata at or above the threshold.
    pub share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    Pairs,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanLine {
    pub model: ModelTag,
    pub label: String,
    /// `fitted`, `rank-deficient` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub sigma2_u: Option<Estimate>,
    pub sigma2_e: Option<Estimate>,
    pub vpc: Option<f64>,
    pub pcv: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<Coefficient>,
}

impl From<&ScanRow> for ScanLine {
    fn from(row: &ScanRow) -> Self {
        let (status, detail) = match &row.status {
            ScanStatus::Fitted => ("fitted", None),
            ScanStatus::RankDeficient { columns } => (
                "rank-deficient",
                Some(format!("collinear: {}", columns.join(", "))),
            ),
            ScanStatus::Failed { message } => ("failed", Some(message.clone())),
        };
        let fit = row.fit.as_ref();
        Self {
            model: row.tag.clone(),
            label: row.label.clone(),
            status: status.to_string(),
            detail,
            sigma2_u: fit.map(|f| Estimate {
                estimate: f.vc.sigma2_u,
                se: f.vc_standard_errors.sigma2_u,
            }),
            sigma2_e: fit.map(|f| Estimate {
                estimate: f.vc.sigma2_e,
                se: f.vc_standard_errors.sigma2_e,
            }),
            vpc: row.vpc,
            pcv: row.pcv,
            coefficients: fit
                .map(|f| coefficients(&f.fixed.names, &f.fixed.estimates, &f.fixed.standard_errors))
                .unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanBlock {
    pub kind: ScanKind,
    pub baseline: ModelTag,
    pub baseline_sigma2_u: f64,
    pub rows: Vec<ScanLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsBlock {
    pub model: ModelTag,
    pub coefficients: Vec<Coefficient>,
    pub residual_variance: Estimate,
    pub n_units: usize,
    pub df_residual: usize,
}

impl OlsBlock {
    pub fn new(model: ModelTag, ols: &OlsResult) -> Self {
        Self {
            model,
            coefficients: coefficients(&ols.names, &ols.estimates, &ols.standard_errors),
            residual_variance: Estimate {
                estimate: ols.residual_variance,
                se: Some(ols.residual_variance_se),
            },
            n_units: ols.n_units,
            df_residual: ols.df_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonBlock {
    pub cohort_a: String,
    pub cohort_b: String,
    pub model: ModelTag,
    #[serde(flatten)]
    pub comparison: CohortComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub metadata: Metadata,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<ModelBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strata: Vec<StratumBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub benchmarks: Vec<BenchmarkLine>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scans: Vec<ScanBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ols: Vec<OlsBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonBlock>,
}

fn round_numbers(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(sig6).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

impl ReportDocument {
    pub fn new(metadata: Metadata) -> Self {
        Self {
            metadata,
            models: Vec::new(),
            strata: Vec::new(),
            benchmarks: Vec::new(),
            scans: Vec::new(),
            ols: Vec::new(),
            comparison: None,
        }
    }

    pub fn strata_for(&self, model: &ModelTag) -> Option<&StratumBlock> {
        self.strata.iter().find(|b| &b.model == model)
    }

    /// Pretty JSON with rounded numbers and a full-precision `"raw"` copy.
    pub fn to_json(&self) -> Result<String> {
        let raw = serde_json::to_value(self)?;
        let mut doc = raw.clone();
        round_numbers(&mut doc);
        if let Value::Object(map) = &mut doc {
            map.insert("raw".into(), raw);
        }
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text)?;
        let raw = doc
            .get_mut("raw")
            .map(Value::take)
            .ok_or_else(|| MaihdaError::InvalidInput("report has no \"raw\" block".into()))?;
        Ok(serde_json::from_value(raw)?)
    }
}

/// 6 significant digits; exponent notation for magnitudes below 1e-4.
fn fmt6(x: f64) -> String {
    let r = sig6(x);
    if r != 0.0 && r.abs() < 1e-4 {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

/// Stratum table as CSV, one column per factor.
pub fn write_stratum_csv<W: Write>(block: &StratumBlock, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["rank".to_string(), "stratum_id".to_string()];
    header.extend(block.factors.iter().cloned());
    header.extend(
        [
            "n",
            "observed_mean",
            "predicted_mean",
            "u_hat",
            "se",
            "ci_low",
            "ci_high",
            "significant",
            "meaningful",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in &block.rows {
        let mut rec = vec![format!("{}", r.rank), r.stratum_id.to_string()];
        rec.extend(r.labels.iter().cloned());
        rec.push(r.n.to_string());
        rec.extend(
            [
                r.observed_mean,
                r.predicted_mean,
                r.u_hat,
                r.se,
                r.ci_low,
                r.ci_high,
            ]
            .map(fmt6),
        );
        rec.push(r.significant.to_string());
        rec.push(r.meaningful.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| MaihdaError::io("<csv output>", e))?;
    Ok(())
}

/// One caterpillar point: stratum effect with its 95% interval, ranked by effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaterpillarPoint {
    pub rank: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn caterpillar_points(block: &StratumBlock) -> Vec<CaterpillarPoint> {
    let effects: Vec<f64> = block.rows.iter().map(|r| r.u_hat).collect();
    let mut points: Vec<CaterpillarPoint> = stats::average_ranks(&effects)
        .into_iter()
        .zip(&block.rows)
        .map(|(rank, r)| CaterpillarPoint {
            rank,
            estimate: r.u_hat,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
        })
        .collect();
    points.sort_by(|a, b| a.rank.total_cmp(&b.rank));
    points
}

pub fn write_caterpillar_csv<W: Write>(points: &[CaterpillarPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "estimate", "ci_low", "ci_high"])?;
    for p in points {
        w.write_record([
            format!("{}", p.rank),
            fmt6(p.estimate),
            fmt6(p.ci_low),
            fmt6(p.ci_high),
        ])?;
    }
    w.flush().map_err(|e| MaihdaError::io("<csv output>", e))?;
    Ok(())
}

/// Minimal SVG caterpillar: interval bars and points against rank, with a zero line.
pub fn caterpillar_svg(points: &[CaterpillarPoint], title: &str) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const M: f64 = 40.0;
    let lo = points.iter().map(|p| p.ci_low).fold(0.0f64, f64::min);
    let hi = points.iter().map(|p| p.ci_high).fold(0.0f64, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = points.len().max(1) as f64;
    let x = |rank: f64| M + (rank - 0.5) / n * (W - 2.0 * M);
    let y = |v: f64| H - M - (v - lo) / span * (H - 2.0 * M);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <text x=\"{M}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <line x1=\"{M}\" y1=\"{z:.2}\" x2=\"{:.2}\" y2=\"{z:.2}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n",
        title.replace('&', "&amp;").replace('<', "&lt;"),
        W - M,
        z = y(0.0),
    );
    for p in points {
        let px = x(p.rank);
        svg.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#4477aa\"/>\
             <circle cx=\"{px:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"#222\"/>\n",
            y(p.ci_low),
            y(p.ci_high),
            y(p.estimate)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-stratum effects of two models side by side, keyed by factor labels.
pub fn write_model_scatter_csv<W: Write>(a: &StratumBlock, b: &StratumBlock, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = a.factors.clone();
    header.extend(
        [
            "n",
            "observed_mean",
            "predicted_mean_a",
            "predicted_mean_b",
            "u_hat_a",
            "u_hat_b",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    let mut rows: Vec<&StratumTableRow> = a.rows.iter().collect();
    rows.sort_by_key(|r| r.stratum_id);
    for ra in rows {
        let Some(rb) = b.rows.iter().find(|r| r.labels == ra.labels) else {
            continue;
        };
        let mut rec = ra.labels.clone();
        rec.push(ra.n.to_string());
        rec.extend(
            [
                ra.observed_mean,
                ra.predicted_mean,
                rb.predicted_mean,
                ra.u_hat,
                rb.u_hat,
            ]
            .map(fmt6),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| MaihdaError::io("<csv output>", e))?;
    Ok(())
}

pub fn write_scan_csv<W: Write>(block: &ScanBlock, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "label",
        "status",
        "sigma2_u",
        "sigma2_u_se",
        "sigma2_e",
        "vpc",
        "pcv",
    ])?;
    let opt = |x: Option<f64>| x.map(fmt6).unwrap_or_default();
    for r in &block.rows {
        w.write_record([
            r.label.clone(),
            r.status.clone(),
            opt(r.sigma2_u.map(|e| e.estimate)),
            opt(r.sigma2_u.and_then(|e| e.se)),
            opt(r.sigma2_e.map(|e| e.estimate)),
            opt(r.vpc),
            opt(r.pcv),
        ])?;
    }
    w.flush().map_err(|e| MaihdaError::io("<csv output>", e))?;
    Ok(())
}

pub fn write_comparison_csv<W: Write>(block: &ComparisonBlock, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stratum", "a", "b", "difference"])?;
    for d in &block.comparison.differences {
        w.write_record([d.labels.join("|"), fmt6(d.a), fmt6(d.b), fmt6(d.difference)])?;
    }
    w.flush().map_err(|e| MaihdaError::io("<csv output>", e))?;
    Ok(())
}

pub fn write_ols_csv<W: Write>(blocks: &[OlsBlock], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "term", "estimate", "se"])?;
    for b in blocks {
        for c in &b.coefficients {
            w.write_record([
                b.model.to_string(),
                c.name.clone(),
                fmt6(c.estimate),
                fmt6(c.se),
            ])?;
        }
        w.write_record([
            b.model.to_string(),
            "residual_variance".into(),
            fmt6(b.residual_variance.estimate),
            b.residual_variance.se.map(fmt6).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| MaihdaError::io("<csv output>", e))?;
    Ok(())
}
