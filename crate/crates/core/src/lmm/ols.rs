use serde::{Deserialize, Serialize};

use super::{Method, Problem};
use crate::error::Result;
use crate::ingest::StratumSummary;
use crate::transform::DesignMatrix;

/// Single-level (unit-level) least squares fit on a stratum-level design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsResult {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// RSS / (N - p).
    pub residual_variance: f64,
    /// Large-sample SE of the residual variance, `s² sqrt(2 / (N - p))`.
    pub residual_variance_se: f64,
    pub n_units: usize,
    pub df_residual: usize,
}

/// OLS of the unit outcomes on the design expanded to unit level.
///
/// Every unit of stratum j shares the row `x_j`, so `X'X = Σ n_j x_j x_j'`,
/// `X'y = Σ x_j Σy` and `RSS = SSW + Σ n_j (ȳ_j - x_j'β)²` are exact.
pub fn ols_fit(summaries: &[StratumSummary], design: &DesignMatrix) -> Result<OlsResult> {
    design.check_full_rank()?;
    let problem = Problem::new(summaries, design, Method::Ml)?;
    let p = problem.p();
    let n = problem.n_total;
    if n <= p as f64 {
        return Err(crate::MaihdaError::InvalidInput(format!(
            "{n} units cannot support {p} coefficients"
        )));
    }
    let (beta, rss) = problem.ols_rss()?;
    let df = n - p as f64;
    let s2 = rss / df;
    // (X'X)⁻¹ is the GLS covariance with σu² = 0 and σe² = 1.
    let eval = problem.evaluate(0.0, 1.0, false)?;
    Ok(OlsResult {
        names: design.names(),
        estimates: beta.iter().copied().collect(),
        standard_errors: (0..p)
            .map(|k| (s2 * eval.beta_cov[(k, k)]).sqrt())
            .collect(),
        residual_variance: s2,
        residual_variance_se: s2 * (2.0 / df).sqrt(),
        n_units: n as usize,
        df_residual: df as usize,
    })
}
