//! Profiled Gaussian deviance of the random-intercept model, with exact first
//! and second derivatives in the variance components.
//!
//! Stratum j has covariance `σe² I + σu² 11'` and a stratum-level covariate row
//! `x_j`. With `d_j = σe² + n_j σu²` and `w_j = n_j / d_j`:
//!
//! * `log|V| = (N - J) log σe² + Σ log d_j`
//! * `X'V⁻¹X = Σ w_j x_j x_j'` and `X'V⁻¹y = Σ w_j ȳ_j x_j`
//! * `r'V⁻¹r = SSW / σe² + Σ w_j (ȳ_j - x_j'β)²`
//!
//! so one evaluation costs O(J p²) regardless of the number of units.

use nalgebra::{DMatrix, DVector};

use super::Method;
use crate::error::{MaihdaError, Result};
use crate::ingest::StratumSummary;
use crate::transform::DesignMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Stratum-level data a deviance evaluation needs.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub x: DMatrix<f64>,
    pub n: Vec<f64>,
    pub mean: Vec<f64>,
    pub ss_within: f64,
    pub n_total: f64,
    pub method: Method,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub deviance: f64,
    pub beta: DVector<f64>,
    /// `(X'V⁻¹X)⁻¹`
    pub beta_cov: DMatrix<f64>,
    /// Gradient in `(σu², σe²)`.
    pub grad: [f64; 2],
    /// Hessian in `(σu², σe²)`.
    pub hess: [[f64; 2]; 2],
}

impl Evaluation {
    /// Gradient and Hessian with respect to `(log σu, log σe)`.
    pub fn log_sd_derivatives(&self, a: f64, b: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let g = [2.0 * a * self.grad[0], 2.0 * b * self.grad[1]];
        let h01 = 4.0 * a * b * self.hess[0][1];
        let h = [
            [4.0 * a * a * self.hess[0][0] + 4.0 * a * self.grad[0], h01],
            [h01, 4.0 * b * b * self.hess[1][1] + 4.0 * b * self.grad[1]],
        ];
        (g, h)
    }
}

impl Problem {
    pub fn new(
        summaries: &[StratumSummary],
        design: &DesignMatrix,
        method: Method,
    ) -> Result<Self> {
        if summaries.len() != design.nrows() {
            return Err(MaihdaError::InvalidInput(format!(
                "design has {} rows but there are {} strata",
                design.nrows(),
                summaries.len()
            )));
        }
        if summaries.iter().any(|s| s.n == 0) {
            return Err(MaihdaError::InvalidInput("empty stratum".into()));
        }
        Ok(Self {
            x: design.values().clone(),
            n: summaries.iter().map(|s| s.n as f64).collect(),
            mean: summaries.iter().map(|s| s.mean_y).collect(),
            ss_within: summaries.iter().map(|s| s.ss_within).sum(),
            n_total: summaries.iter().map(|s| s.n as f64).sum(),
            method,
        })
    }

    pub fn strata(&self) -> usize {
        self.n.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Weighted normal equations for given stratum weights.
    fn normal_equations(&self, w: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.p();
        let mut m = DMatrix::zeros(p, p);
        let mut c = DVector::zeros(p);
        for (j, &wj) in w.iter().enumerate() {
            let xj = self.x.row(j);
            for r in 0..p {
                let xr = xj[r];
                if xr == 0.0 {
                    continue;
                }
                c[r] += wj * self.mean[j] * xr;
                for s in 0..p {
                    m[(r, s)] += wj * xr * xj[s];
                }
            }
        }
        (m, c)
    }

    fn weighted_gram(&self, w: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let p = self.p();
        let mut m = DMatrix::zeros(p, p);
        for j in 0..self.strata() {
            let wj = w(j);
            let xj = self.x.row(j);
            for r in 0..p {
                if xj[r] == 0.0 {
                    continue;
                }
                for s in 0..p {
                    m[(r, s)] += wj * xj[r] * xj[s];
                }
            }
        }
        m
    }

    /// Deviance (and optionally derivatives) at `σu² = a`, `σe² = b`.
    #[allow(clippy::needless_range_loop)]
    pub fn evaluate(&self, a: f64, b: f64, derivatives: bool) -> Result<Evaluation> {
        if !b.is_finite() || b <= 0.0 {
            return Err(MaihdaError::InvalidInput(format!(
                "within-stratum variance must be positive, got {b}"
            )));
        }
        if !a.is_finite() || a < 0.0 {
            return Err(MaihdaError::InvalidInput(format!(
                "between-stratum variance must be non-negative, got {a}"
            )));
        }
        let jn = self.strata();
        let p = self.p();
        let d: Vec<f64> = self.n.iter().map(|&n| b + n * a).collect();
        let w: Vec<f64> = self.n.iter().zip(&d).map(|(n, d)| n / d).collect();

        let (m, c) = self.normal_equations(&w);
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| MaihdaError::Numerical("X'V⁻¹X is not positive definite".into()))?;
        let beta = chol.solve(&c);
        let beta_cov = chol.inverse();
        let resid: Vec<f64> = (0..jn)
            .map(|j| self.mean[j] - (self.x.row(j) * &beta)[0])
            .collect();

        let quad = self.ss_within / b + (0..jn).map(|j| w[j] * resid[j] * resid[j]).sum::<f64>();
        let logdet_v = (self.n_total - jn as f64) * b.ln() + d.iter().map(|d| d.ln()).sum::<f64>();
        let deviance = match self.method {
            Method::Ml => self.n_total * LN_2PI + logdet_v + quad,
            Method::Reml => {
                let logdet_m = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                (self.n_total - p as f64) * LN_2PI + logdet_v + logdet_m + quad
            }
        };

        let mut eval = Evaluation {
            deviance,
            beta,
            beta_cov,
            grad: [0.0; 2],
            hess: [[0.0; 2]; 2],
        };
        if !derivatives {
            return Ok(eval);
        }

        // dw/dσu², dw/dσe² and second derivatives, per stratum.
        let w1 = |j: usize, k: usize| {
            let (n, d) = (self.n[j], d[j]);
            if k == 0 {
                -n * n / (d * d)
            } else {
                -n / (d * d)
            }
        };
        let w2 = |j: usize, k: usize, l: usize| {
            let (n, d) = (self.n[j], d[j]);
            2.0 * n.powi(3 - (k + l) as i32) / (d * d * d)
        };

        let within_df = self.n_total - jn as f64;
        let mut grad = [
            d.iter().zip(&self.n).map(|(d, n)| n / d).sum::<f64>(),
            within_df / b + d.iter().map(|d| 1.0 / d).sum::<f64>(),
        ];
        let mut hess = [[0.0; 2]; 2];
        for k in 0..2 {
            for l in 0..2 {
                hess[k][l] = -(0..jn)
                    .map(|j| self.n[j].powi(2 - (k + l) as i32) / (d[j] * d[j]))
                    .sum::<f64>();
            }
        }
        hess[1][1] -= within_df / (b * b);

        // Quadratic form, profiled over β.
        grad[1] -= self.ss_within / (b * b);
        hess[1][1] += 2.0 * self.ss_within / (b * b * b);
        let g_vec: Vec<DVector<f64>> = (0..2)
            .map(|k| {
                let mut g = DVector::zeros(p);
                for j in 0..jn {
                    g += self.x.row(j).transpose() * (w1(j, k) * resid[j]);
                }
                g
            })
            .collect();
        let minv_g: Vec<DVector<f64>> = g_vec.iter().map(|g| chol.solve(g)).collect();
        for k in 0..2 {
            grad[k] += (0..jn).map(|j| w1(j, k) * resid[j] * resid[j]).sum::<f64>();
            for l in 0..2 {
                hess[k][l] += (0..jn)
                    .map(|j| w2(j, k, l) * resid[j] * resid[j])
                    .sum::<f64>();
                hess[k][l] -= 2.0 * g_vec[k].dot(&minv_g[l]);
            }
        }

        if self.method == Method::Reml {
            let m1: Vec<DMatrix<f64>> = (0..2).map(|k| self.weighted_gram(|j| w1(j, k))).collect();
            let minv_m1: Vec<DMatrix<f64>> = m1.iter().map(|mk| &eval.beta_cov * mk).collect();
            for k in 0..2 {
                grad[k] += minv_m1[k].trace();
                for l in 0..2 {
                    let mkl = self.weighted_gram(|j| w2(j, k, l));
                    hess[k][l] += (&eval.beta_cov * mkl).trace();
                    hess[k][l] -= (&minv_m1[k] * &minv_m1[l]).trace();
                }
            }
        }

        eval.grad = grad;
        eval.hess = hess;
        Ok(eval)
    }

    /// Residual sum of squares of unit-level OLS on the stratum design.
    pub fn ols_rss(&self) -> Result<(DVector<f64>, f64)> {
        let (m, c) = self.normal_equations(&self.n);
        let chol = m
            .cholesky()
            .ok_or_else(|| MaihdaError::Numerical("X'X is not positive definite".into()))?;
        let beta = chol.solve(&c);
        let between = (0..self.strata())
            .map(|j| {
                let e = self.mean[j] - (self.x.row(j) * &beta)[0];
                self.n[j] * e * e
            })
            .sum::<f64>();
        Ok((beta, self.ss_within + between))
    }
}
