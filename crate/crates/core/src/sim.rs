//! Synthetic cohorts with known ground truth.
//!
//! Random numbers come from ChaCha20 seeded with `seed_from_u64`; normal
//! variates use the ziggurat sampler of `rand_distr::StandardNormal`. Draw
//! order is fixed: stratum sizes (when drawn), then one `u_j` per stratum in
//! stratum order, then unit residuals stratum by stratum. Output is bitwise
//! reproducible for a given seed and build.

use std::io::Write;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MaihdaError, Result};
use crate::ingest::{build_strata, CohortDataset, ConfigFile, FactorSpec, Schema};
use crate::transform::main_effects_design;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StratumSizes {
    Explicit(Vec<usize>),
    /// Integer sizes `round(exp(U(ln min, ln max)))`.
    LogUniform {
        min: usize,
        max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedInteraction {
    /// Factor names `(a, b)`.
    pub factors: [String; 2],
    /// Category labels `(a, b)`.
    pub categories: [String; 2],
    /// Shift in outcome units added to every stratum holding both categories.
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(skip)]
    pub factors: Vec<FactorSpec>,
    pub seed: u64,
    pub sigma2_u: f64,
    pub sigma2_e: f64,
    pub sizes: StratumSizes,
    /// Main-effects coefficients by design column name (`intercept`,
    /// `factor=category`); omitted columns are zero.
    #[serde(default)]
    pub beta: IndexMap<String, f64>,
    #[serde(default, rename = "interaction")]
    pub interactions: Vec<InjectedInteraction>,
}

impl SimConfig {
    /// Reads the `[simulation]` table of a config file.
    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        let table = cfg
            .simulation
            .clone()
            .ok_or_else(|| MaihdaError::Config("config has no [simulation] table".into()))?;
        let mut sim: SimConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| MaihdaError::Config(format!("[simulation]: {e}")))?;
        sim.factors = cfg.data.factors.clone();
        sim.validate()?;
        Ok(sim)
    }

    fn cells(&self) -> usize {
        self.factors.iter().map(FactorSpec::len).product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MaihdaError::Config(m));
        if self.factors.is_empty() {
            return bad("simulation needs at least one factor".into());
        }
        if !(self.sigma2_u >= 0.0 && self.sigma2_u.is_finite()) {
            return bad(format!("sigma2_u must be >= 0, got {}", self.sigma2_u));
        }
        if !(self.sigma2_e >= 0.0 && self.sigma2_e.is_finite()) {
            return bad(format!("sigma2_e must be >= 0, got {}", self.sigma2_e));
        }
        match &self.sizes {
            StratumSizes::Explicit(v) => {
                if v.len() != self.cells() {
                    return bad(format!(
                        "{} sizes given for {} strata",
                        v.len(),
                        self.cells()
                    ));
                }
                if v.contains(&0) {
                    return bad("stratum sizes must be >= 1".into());
                }
            }
            StratumSizes::LogUniform { min, max } => {
                if *min < 1 || max < min {
                    return bad(format!("invalid size range [{min}, {max}]"));
                }
            }
        }
        let names: Vec<String> = self.design_names();
        for k in self.beta.keys() {
            if !names.contains(k) {
                return bad(format!("beta names unknown column '{k}'"));
            }
        }
        for inj in &self.interactions {
            self.resolve(inj)?;
        }
        Ok(())
    }

    fn design_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.factors.iter().flat_map(|f| {
                f.contrast_codes()
                    .map(move |c| format!("{}={}", f.name(), f.label(c)))
            }))
            .collect()
    }

    /// `(factor index, category code)` for both sides of an interaction.
    fn resolve(&self, inj: &InjectedInteraction) -> Result<[(usize, u32); 2]> {
        let one = |k: usize| -> Result<(usize, u32)> {
            let f = self
                .factors
                .iter()
                .position(|f| f.name() == inj.factors[k])
                .ok_or_else(|| {
                    MaihdaError::Config(format!("unknown factor '{}'", inj.factors[k]))
                })?;
            let c = self.factors[f].code_of(&inj.categories[k]).ok_or_else(|| {
                MaihdaError::Config(format!(
                    "factor '{}' has no category '{}'",
                    inj.factors[k], inj.categories[k]
                ))
            })?;
            Ok((f, c))
        };
        let pair = [one(0)?, one(1)?];
        if pair[0].0 == pair[1].0 {
            return Err(MaihdaError::Config(
                "interaction needs two distinct factors".into(),
            ));
        }
        Ok(pair)
    }
}

/// Generating truth for one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueStratum {
    pub labels: Vec<String>,
    pub n: usize,
    /// `x_j'β`
    pub fixed_mean: f64,
    /// Sum of injected interaction shifts.
    pub shift: f64,
    pub u: f64,
    /// `fixed_mean + shift + u`
    pub mean: f64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: CohortDataset,
    pub strata: Vec<TrueStratum>,
}

/// Category codes of every cell of the factor cross product, lexicographic.
pub fn all_cells(factors: &[FactorSpec]) -> Vec<Vec<u32>> {
    let mut cells = vec![Vec::new()];
    for f in factors {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                (0..f.len() as u32).map(move |c| {
                    let mut v = prefix.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    cells
}

/// Stratum means without the random draw: `x_j'β + shifts`.
pub fn deterministic_means(config: &SimConfig) -> Result<Vec<(f64, f64)>> {
    let cells = all_cells(&config.factors);
    let mut probe = CohortDataset::new("", config.factors.clone());
    for c in &cells {
        probe.push_coded("", c, 0.0)?;
    }
    let design = main_effects_design(&build_strata(&probe), &config.factors);
    let beta: Vec<f64> = design
        .names()
        .iter()
        .map(|n| config.beta.get(n).copied().unwrap_or(0.0))
        .collect();
    let injected = config
        .interactions
        .iter()
        .map(|inj| Ok((config.resolve(inj)?, inj.shift)))
        .collect::<Result<Vec<_>>>()?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(j, cell)| {
            let fixed: f64 = design.row(j).iter().zip(&beta).map(|(x, b)| x * b).sum();
            let shift: f64 = injected
                .iter()
                .filter(|([(fa, ca), (fb, cb)], _)| cell[*fa] == *ca && cell[*fb] == *cb)
                .map(|(_, s)| s)
                .sum();
            (fixed, shift)
        })
        .collect())
}

pub fn generate_with_truth(config: &SimConfig, cohort_label: &str) -> Result<Simulation> {
    config.validate()?;
    let cells = all_cells(&config.factors);
    let means = deterministic_means(config)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    let sizes: Vec<usize> = match &config.sizes {
        StratumSizes::Explicit(v) => v.clone(),
        StratumSizes::LogUniform { min, max } => {
            let (lo, hi) = ((*min as f64).ln(), (*max as f64).ln());
            (0..cells.len())
                .map(|_| {
                    let u: f64 = rng.random();
                    ((lo + u * (hi - lo)).exp().round() as usize).clamp(*min, *max)
                })
                .collect()
        }
    };
    let sd_u = config.sigma2_u.sqrt();
    let sd_e = config.sigma2_e.sqrt();
    let u: Vec<f64> = (0..cells.len())
        .map(|_| sd_u * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut dataset = CohortDataset::new(cohort_label, config.factors.clone());
    let mut strata = Vec::with_capacity(cells.len());
    let mut unit = 0usize;
    for (j, cell) in cells.iter().enumerate() {
        let (fixed_mean, shift) = means[j];
        let mean = fixed_mean + shift + u[j];
        for _ in 0..sizes[j] {
            unit += 1;
            let e: f64 = rng.sample(StandardNormal);
            dataset.push_coded(unit.to_string(), cell, mean + sd_e * e)?;
        }
        strata.push(TrueStratum {
            labels: cell
                .iter()
                .zip(&config.factors)
                .map(|(&c, f)| f.label(c).to_string())
                .collect(),
            n: sizes[j],
            fixed_mean,
            shift,
            u: u[j],
            mean,
        });
    }
    Ok(Simulation { dataset, strata })
}

pub fn generate(config: &SimConfig) -> Result<CohortDataset> {
    Ok(generate_with_truth(config, "simulated")?.dataset)
}

/// Writes a dataset in the CSV layout [`crate::ingest::read_dataset`] reads:
/// id column, factor columns, outcome column.
pub fn write_dataset<W: Write>(dataset: &CohortDataset, schema: &Schema, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let id = schema.id.as_deref().unwrap_or("id");
    let mut header = vec![id.to_string()];
    header.extend(dataset.factors().iter().map(|f| f.name().to_string()));
    header.push(schema.outcome.clone());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for row in 0..dataset.len() {
        record.clear();
        record.push(dataset.unit_ids()[row].clone());
        for (f, spec) in dataset.factors().iter().enumerate() {
            record.push(spec.label(dataset.factor_codes(f)[row]).to_string());
        }
        record.push(format!("{}", dataset.outcome()[row]));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| MaihdaError::io("<csv output>", e))?;
    Ok(())
}
