//! Two-level random-intercept linear mixed model.
//!
//! `y_ij = x_j'β + u_j + e_ij`, `u_j ~ N(0, σu²)`, `e_ij ~ N(0, σe²)`, with
//! covariates constant within a stratum. Variance components are estimated by
//! REML (default) or ML with β profiled out, fixed effects by GLS, and stratum
//! effects by empirical Bayes.

mod deviance;
mod ols;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MaihdaError, Result};
use crate::ingest::StratumSummary;
use crate::stats::Z95;
use crate::transform::DesignMatrix;

pub(crate) use deviance::Problem;
pub use ols::{ols_fit, OlsResult};

/// Relative deviance change at which the optimizer stops.
pub const DEVIANCE_TOLERANCE: f64 = 1e-10;
/// Bound on the log-SD gradient, scaled by `max(1, |deviance|)`, for a fit to
/// count as converged.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 200;
/// Largest remaining Newton step in `(log σu, log σe)` accepted at convergence.
pub const STEP_TOLERANCE: f64 = 1e-8;

/// `σu² / σe²` below which the optimizer treats the estimate as the boundary.
const BOUNDARY_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Reml,
    Ml,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Reml => "reml",
            Method::Ml => "ml",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2_u: f64,
    pub sigma2_e: f64,
}

impl VarianceComponents {
    pub fn new(sigma2_u: f64, sigma2_e: f64) -> Result<Self> {
        if !sigma2_e.is_finite() || sigma2_e <= 0.0 {
            return Err(MaihdaError::InvalidInput(format!(
                "sigma2_e must be positive, got {sigma2_e}"
            )));
        }
        if !sigma2_u.is_finite() || sigma2_u < 0.0 {
            return Err(MaihdaError::InvalidInput(format!(
                "sigma2_u must be non-negative, got {sigma2_u}"
            )));
        }
        Ok(Self { sigma2_u, sigma2_e })
    }
}

/// Standard errors of the variance components; `None` where unavailable
/// (the stratum variance at the boundary).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VcStandardErrors {
    pub sigma2_u: Option<f64>,
    pub sigma2_e: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffects {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// Row-major p×p covariance `(X'V⁻¹X)⁻¹`.
    pub covariance: Vec<f64>,
    pub standard_errors: Vec<f64>,
}

impl FixedEffects {
    fn from_parts(names: Vec<String>, beta: &nalgebra::DVector<f64>, cov: &DMatrix<f64>) -> Self {
        let p = beta.len();
        Self {
            names,
            estimates: beta.iter().copied().collect(),
            covariance: (0..p * p).map(|i| cov[(i / p, i % p)]).collect(),
            standard_errors: (0..p).map(|k| cov[(k, k)].max(0.0).sqrt()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        let k = self.names.iter().position(|n| n == name)?;
        Some((self.estimates[k], self.standard_errors[k]))
    }

    /// `x'β` for a design row.
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.estimates).map(|(x, b)| x * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub vc: VarianceComponents,
    pub vc_standard_errors: VcStandardErrors,
    pub fixed: FixedEffects,
    pub deviance: f64,
    pub converged: bool,
    pub iterations: usize,
    /// The stratum variance estimate sits on the boundary `σu² = 0`.
    pub boundary: bool,
    /// Deviance gradient in `(log σu, log σe)` at the estimate; the first entry
    /// is the `σu²` derivative (one-sided) at the boundary.
    pub gradient: [f64; 2],
    pub n_units: usize,
    pub n_strata: usize,
}

/// Empirical Bayes prediction for one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEffect {
    pub stratum_id: usize,
    pub u_hat: f64,
    /// Comparative standard error `sqrt(σu² (1 - λ))`.
    pub se_u: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `x_j'β`
    pub fixed_part: f64,
    pub predicted_mean: f64,
    pub raw_residual_mean: f64,
    pub shrinkage_factor: f64,
}

impl StratumEffect {
    pub fn significant(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

/// `λ = σu² / (σu² + σe²/n)`.
pub fn shrinkage_factor(vc: &VarianceComponents, n: usize) -> f64 {
    let n = n as f64;
    n * vc.sigma2_u / (vc.sigma2_e + n * vc.sigma2_u)
}

/// −2 × profiled (restricted) log-likelihood at fixed variance components.
pub fn profiled_deviance(
    summaries: &[StratumSummary],
    design: &DesignMatrix,
    vc: &VarianceComponents,
    method: Method,
) -> Result<f64> {
    let problem = Problem::new(summaries, design, method)?;
    Ok(problem.evaluate(vc.sigma2_u, vc.sigma2_e, false)?.deviance)
}

/// GLS fixed effects at fixed variance components.
pub fn gls_fixed_effects(
    summaries: &[StratumSummary],
    design: &DesignMatrix,
    vc: &VarianceComponents,
) -> Result<FixedEffects> {
    let problem = Problem::new(summaries, design, Method::Reml)?;
    let eval = problem.evaluate(vc.sigma2_u, vc.sigma2_e, false)?;
    Ok(FixedEffects::from_parts(
        design.names(),
        &eval.beta,
        &eval.beta_cov,
    ))
}

/// Newton iteration in `t = (log σu, log σe)` with exact Hessian, Levenberg
/// damping when it is indefinite, and backtracking.
struct Newton<'a> {
    problem: &'a Problem,
}

struct Interior {
    a: f64,
    b: f64,
    deviance: f64,
    iterations: usize,
    converged: bool,
    hit_boundary: bool,
}

fn solve2(h: [[f64; 2]; 2], g: [f64; 2]) -> Option<[f64; 2]> {
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    if !(h[0][0] > 0.0 && det > 0.0) {
        return None;
    }
    Some([
        -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
        -(h[0][0] * g[1] - h[1][0] * g[0]) / det,
    ])
}

fn scaled_gradient(g: [f64; 2], deviance: f64) -> f64 {
    g[0].abs().max(g[1].abs()) / deviance.abs().max(1.0)
}

impl Newton<'_> {
    fn run(&self, a0: f64, b0: f64) -> Result<Interior> {
        let mut t = [0.5 * a0.ln(), 0.5 * b0.ln()];
        let var = |t: [f64; 2]| ((2.0 * t[0]).exp(), (2.0 * t[1]).exp());
        let (a, b) = var(t);
        let mut eval = self.problem.evaluate(a, b, true)?;
        let mut iterations = 0;
        let mut converged = false;
        let mut hit_boundary = false;

        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let (a, b) = var(t);
            let (g, h) = eval.log_sd_derivatives(a, b);

            let mut step = None;
            let mut mu = 0.0;
            for _ in 0..60 {
                let hd = [[h[0][0] + mu, h[0][1]], [h[1][0], h[1][1] + mu]];
                if let Some(s) = solve2(hd, g) {
                    step = Some(s);
                    break;
                }
                mu = if mu == 0.0 {
                    1e-6 * (h[0][0].abs() + h[1][1].abs()).max(1.0)
                } else {
                    mu * 10.0
                };
            }
            let mut step =
                step.ok_or_else(|| MaihdaError::Numerical("no descent direction".into()))?;
            let longest = step[0].abs().max(step[1].abs());
            if longest > 2.0 {
                step = [step[0] * 2.0 / longest, step[1] * 2.0 / longest];
            }

            let slope = g[0] * step[0] + g[1] * step[1];
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..50 {
                let trial = [t[0] + scale * step[0], t[1] + scale * step[1]];
                let (ta, tb) = var(trial);
                if tb > 0.0 && tb.is_finite() && ta.is_finite() {
                    if let Ok(e) = self.problem.evaluate(ta, tb, false) {
                        if e.deviance <= eval.deviance + 1e-4 * scale * slope.min(0.0) {
                            accepted = Some((trial, e.deviance));
                            break;
                        }
                    }
                }
                scale *= 0.5;
            }
            let Some((trial, dev)) = accepted else {
                // No decrease representable in floating point: stationary.
                converged = scaled_gradient(g, eval.deviance) < GRADIENT_TOLERANCE;
                break;
            };
            let change = (eval.deviance - dev).abs();
            t = trial;
            let (a, b) = var(t);
            eval = self.problem.evaluate(a, b, true)?;
            if a < BOUNDARY_RATIO * b {
                hit_boundary = true;
                break;
            }
            let (g, h) = eval.log_sd_derivatives(a, b);
            let next_step = solve2(h, g).map_or(f64::INFINITY, |s| s[0].abs().max(s[1].abs()));
            if change <= DEVIANCE_TOLERANCE * eval.deviance.abs().max(1.0)
                && scaled_gradient(g, eval.deviance) < GRADIENT_TOLERANCE
                && next_step < STEP_TOLERANCE
            {
                converged = true;
                break;
            }
        }
        let (a, b) = var(t);
        Ok(Interior {
            a,
            b,
            deviance: eval.deviance,
            iterations,
            converged,
            hit_boundary,
        })
    }
}

/// Fits the model, minimizing the profiled deviance over `σu² ≥ 0, σe² > 0`.
pub fn fit(
    summaries: &[StratumSummary],
    design: &DesignMatrix,
    method: Method,
) -> Result<FitResult> {
    let problem = Problem::new(summaries, design, method)?;
    let (jn, p) = (problem.strata(), problem.p());
    design.check_full_rank()?;
    let needed = match method {
        Method::Reml => p + 1,
        Method::Ml => p.max(2),
    };
    if jn < needed {
        return Err(MaihdaError::TooFewStrata {
            strata: jn,
            columns: p,
        });
    }
    let n_total = problem.n_total;
    if n_total <= jn as f64 {
        return Err(MaihdaError::InvalidInput(
            "every stratum has a single unit; within-stratum variance is not identified".into(),
        ));
    }
    if !problem.ss_within.is_finite() || problem.ss_within <= 0.0 {
        return Err(MaihdaError::Numerical(
            "outcome is constant within every stratum".into(),
        ));
    }

    // Boundary candidate σu² = 0 has a closed-form σe².
    let (_, rss) = problem.ols_rss()?;
    let b_boundary = match method {
        Method::Reml => rss / (n_total - p as f64),
        Method::Ml => rss / n_total,
    };
    let boundary_eval = problem.evaluate(0.0, b_boundary, true)?;

    // Interior start: pooled within variance and a moment estimate of σu².
    let b0 = problem.ss_within / (n_total - jn as f64);
    let (beta_ols, _) = problem.ols_rss()?;
    let between = (0..jn)
        .map(|j| {
            let e = problem.mean[j] - (problem.x.row(j) * &beta_ols)[0];
            e * e - b0 / problem.n[j]
        })
        .sum::<f64>()
        / (jn - p).max(1) as f64;
    let a0 = between.max(0.05 * b0);
    let interior = Newton { problem: &problem }.run(a0, b0)?;

    let use_boundary = interior.hit_boundary || boundary_eval.deviance <= interior.deviance;
    let (a, b, iterations) = if use_boundary {
        (0.0, b_boundary, interior.iterations)
    } else {
        (interior.a, interior.b, interior.iterations)
    };
    let eval = problem.evaluate(a, b, true)?;
    let (gradient, converged) = if use_boundary {
        // KKT: one-sided σu² derivative non-negative, σe² stationary.
        let g = [eval.grad[0], 2.0 * b * eval.grad[1]];
        let scale = eval.deviance.abs().max(1.0);
        let ok = g[0] >= -GRADIENT_TOLERANCE * scale && g[1].abs() < GRADIENT_TOLERANCE * scale;
        (g, ok)
    } else {
        let (g, _) = eval.log_sd_derivatives(a, b);
        (g, interior.converged)
    };

    let vc = VarianceComponents {
        sigma2_u: a,
        sigma2_e: b,
    };
    let vc_standard_errors = standard_errors_at(&problem, &vc)?;
    Ok(FitResult {
        method,
        vc,
        vc_standard_errors,
        fixed: FixedEffects::from_parts(design.names(), &eval.beta, &eval.beta_cov),
        deviance: eval.deviance,
        converged,
        iterations,
        boundary: use_boundary,
        gradient,
        n_units: n_total as usize,
        n_strata: jn,
    })
}

/// Observed-information standard errors: the deviance Hessian in
/// `(log σu, log σe)` gives `cov(t) = 2 H⁻¹`, mapped to the variance scale by
/// `dσ²/d log σ = 2σ²`.
fn standard_errors_at(problem: &Problem, vc: &VarianceComponents) -> Result<VcStandardErrors> {
    let (a, b) = (vc.sigma2_u, vc.sigma2_e);
    let eval = problem.evaluate(a, b, true)?;
    let (_, h) = eval.log_sd_derivatives(a, b);
    if a <= 0.0 {
        let se_e = (h[1][1] > 0.0).then(|| 2.0 * b * (2.0 / h[1][1]).sqrt());
        return Ok(VcStandardErrors {
            sigma2_u: None,
            sigma2_e: se_e,
        });
    }
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    if !(h[0][0] > 0.0 && det > 0.0) {
        return Ok(VcStandardErrors {
            sigma2_u: None,
            sigma2_e: None,
        });
    }
    let cov00 = 2.0 * h[1][1] / det;
    let cov11 = 2.0 * h[0][0] / det;
    Ok(VcStandardErrors {
        sigma2_u: Some(2.0 * a * cov00.sqrt()),
        sigma2_e: Some(2.0 * b * cov11.sqrt()),
    })
}

/// Variance-component standard errors of a fit, recomputed from the data.
pub fn vc_standard_errors(
    summaries: &[StratumSummary],
    design: &DesignMatrix,
    fit: &FitResult,
) -> Result<VcStandardErrors> {
    let problem = Problem::new(summaries, design, fit.method)?;
    standard_errors_at(&problem, &fit.vc)
}

/// Shrunken stratum effects `û_j = λ_j (ȳ_j - x_j'β)` with comparative SEs.
pub fn eb_predict(
    fit: &FitResult,
    summaries: &[StratumSummary],
    design: &DesignMatrix,
) -> Vec<StratumEffect> {
    summaries
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let fixed_part = fit.fixed.linear_predictor(&design.row(j));
            let raw = s.mean_y - fixed_part;
            let lambda = shrinkage_factor(&fit.vc, s.n);
            let u_hat = lambda * raw;
            let se_u = (fit.vc.sigma2_u * (1.0 - lambda)).max(0.0).sqrt();
            StratumEffect {
                stratum_id: s.stratum_id,
                u_hat,
                se_u,
                ci_low: u_hat - Z95 * se_u,
                ci_high: u_hat + Z95 * se_u,
                fixed_part,
                predicted_mean: fixed_part + u_hat,
                raw_residual_mean: raw,
                shrinkage_factor: lambda,
            }
        })
        .collect()
}
