//! Intersectional MAIHDA (multilevel analysis of individual heterogeneity and
//! discriminatory accuracy).
//!
//! Units are grouped into intersectional strata, the cross-product cells of a
//! set of categorical factors. Two random-intercept linear mixed models are fit
//! on the strata: an unadjusted model (intercept only) and a model adjusted for
//! the main effects of every factor. The stratum random effects of the first
//! model quantify total between-stratum inequality; those of the second capture
//! the interaction (non-additive) part.
//!
//! The pipeline is:
//!
//! 1. [`ingest`] loads a CSV cohort, validates factor labels and builds strata
//!    with per-stratum sufficient statistics.
//! 2. [`transform`] standardizes the outcome and builds stratum-level design
//!    matrices.
//! 3. [`lmm`] fits the model by REML or ML from the sufficient statistics and
//!    produces GLS fixed effects and empirical Bayes stratum effects.
//! 4. [`analysis`] orchestrates the unadjusted/adjusted models, VPC/PCV, stratum
//!    tables, scans and cross-cohort comparisons.
//! 5. [`report`] and [`cli`] write JSON/CSV reports and plot data.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod ingest;
pub mod lmm;
pub mod report;
pub mod sim;
pub mod stats;
pub mod transform;

pub use error::{MaihdaError, Result};
