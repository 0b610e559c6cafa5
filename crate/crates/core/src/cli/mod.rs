//! The `maihda` command-line driver.
//!
//! Subcommands mirror the supplementary Stata workflow: `fit` runs the
//! unadjusted and adjusted models, `scan` the interaction or single-covariate
//! scans, `ols` the single-level comparators, `simulate` writes a synthetic
//! cohort and `compare` correlates stratum effects across two reports.
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{
    compare_cohorts, Analysis, ComparableStratum, MaihdaModelResult, ModelTag, Quantity,
    TableOrder, DEFAULT_MEANINGFUL_THRESHOLD,
};
use crate::error::{MaihdaError, Result};
use crate::ingest::{load_dataset, ConfigFile, FactorSpec, Schema, DEFAULT_SUPPRESSION_THRESHOLD};
use crate::lmm::{ols_fit, Method};
use crate::report::{
    self, BenchmarkLine, BenchmarkQuantity, ComparisonBlock, Metadata, ModelBlock, OlsBlock,
    ReportDocument, ScanBlock, ScanKind, ScanLine, Settings, StratumBlock,
};
use crate::sim::{generate_with_truth, write_dataset, SimConfig, TrueStratum};
use crate::transform::{intercept_design, prepare_outcome, Normalization};

#[derive(Parser, Debug)]
#[command(
    name = "maihda",
    version,
    about = "Intersectional MAIHDA with random-intercept mixed models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the unadjusted and main-effects models and write the report.
    Fit(FitArgs),
    /// Add each two-way interaction (--pairs) or each factor alone (--single).
    Scan(ScanArgs),
    /// Single-level OLS comparators, unadjusted and adjusted.
    Ols(DataArgs),
    /// Generate a synthetic cohort from the [simulation] table of a config.
    Simulate(SimulateArgs),
    /// Correlate stratum effects of two fit reports.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormalizeArg {
    None,
    Blom,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Reml,
    Ml,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PlotArg {
    Caterpillar,
    Scatter,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Model1,
    Model2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum QuantityArg {
    UHat,
    Rank,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Cohort CSV file.
    #[arg(long)]
    data: PathBuf,
    /// TOML config declaring the outcome column and the factors.
    #[arg(long)]
    config: PathBuf,
    /// Outcome column, overriding the config.
    #[arg(long)]
    outcome: Option<String>,
    /// Rank-based normal scores before standardizing.
    #[arg(long, value_enum, default_value = "none")]
    normalize: NormalizeArg,
    #[arg(long, value_enum, default_value = "reml")]
    method: MethodArg,
    /// Strata smaller than this are left out of every table and plot file.
    #[arg(long = "suppress", default_value_t = DEFAULT_SUPPRESSION_THRESHOLD)]
    suppress: usize,
    /// Seed recorded in the report; defaults to the config's simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; without it the JSON report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Report the share of strata at or above this value (repeatable).
    #[arg(long = "benchmark", allow_negative_numbers = true)]
    benchmarks: Vec<f64>,
    /// |effect| a significant stratum must exceed to be flagged meaningful.
    #[arg(long, default_value_t = DEFAULT_MEANINGFUL_THRESHOLD)]
    meaningful: f64,
    #[arg(long, value_enum)]
    plot: Vec<PlotArg>,
    /// Also render caterpillar plots as SVG.
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Debug)]
#[group(id = "scan_kind", required = true, multiple = false, args = ["pairs", "single"])]
struct ScanArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    pairs: bool,
    #[arg(long)]
    single: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving cohort.csv and truth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    report_a: PathBuf,
    report_b: PathBuf,
    #[arg(long, value_enum, default_value = "model1")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "u_hat")]
    quantity: QuantityArg,
    #[arg(long, value_enum)]
    plot: Option<PlotArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Scan(a) => cmd_scan(&a),
        Command::Ols(a) => cmd_ols(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Compare(a) => cmd_compare(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Prepared {
    analysis: Analysis,
    metadata: Metadata,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| MaihdaError::io(path, e))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MaihdaError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| MaihdaError::io(&path, e))
}

fn simulation_seed(config: &ConfigFile) -> Option<u64> {
    let seed = config.simulation.as_ref()?.get("seed")?.as_integer()?;
    u64::try_from(seed).ok()
}

fn prepare(
    args: &DataArgs,
    command: &str,
    meaningful: f64,
    benchmarks: &[f64],
) -> Result<Prepared> {
    let (config, config_text) = ConfigFile::read(&args.config)?;
    let data_bytes = read_bytes(&args.data)?;
    let mut schema = Schema::from(&config.data);
    if let Some(outcome) = &args.outcome {
        schema.outcome = outcome.clone();
    }
    let loaded = load_dataset(&args.data, &schema, &config.data.factors)?;
    let rejected_rows = loaded.rejected_count();
    let normalize = match args.normalize {
        NormalizeArg::None => Normalization::None,
        NormalizeArg::Blom => Normalization::Blom,
    };
    let method = match args.method {
        MethodArg::Reml => Method::Reml,
        MethodArg::Ml => Method::Ml,
    };
    let outcome = prepare_outcome(loaded.dataset.outcome(), normalize)?;
    let dataset = loaded.dataset.with_outcome(outcome)?;
    let analysis = Analysis::new(&dataset, method, args.suppress);

    let mut metadata = Metadata::new(command);
    metadata.cohort = Some(dataset.cohort_label().to_string());
    metadata.seed = args.seed.or_else(|| simulation_seed(&config));
    metadata.config_digest = Some(report::sha256_hex(config_text.as_bytes()));
    metadata.data_digest = Some(report::sha256_hex(&data_bytes));
    metadata.settings = Some(Settings {
        outcome: schema.outcome,
        normalize,
        method,
        suppression_threshold: args.suppress,
        meaningful_threshold: meaningful,
        benchmarks: benchmarks.to_vec(),
    });
    metadata.n_units = dataset.len();
    metadata.n_strata = analysis.summaries().len();
    metadata.suppressed_count = analysis.summaries().iter().filter(|s| s.suppressed).count();
    metadata.rejected_rows = rejected_rows;
    Ok(Prepared { analysis, metadata })
}

fn factor_names(factors: &[FactorSpec]) -> Vec<String> {
    factors.iter().map(|f| f.name().to_string()).collect()
}

fn emit_report(doc: &ReportDocument, out: Option<&Path>) -> Result<()> {
    let json = doc.to_json()?;
    match out {
        Some(dir) => {
            write_file(dir, "report.json", json.as_bytes())?;
            println!("wrote {}", dir.join("report.json").display());
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn summary_line(m: &MaihdaModelResult) -> String {
    let mut line = format!(
        "{:<8} sigma2_u={:.4} sigma2_e={:.4} vpc={:.4}",
        m.tag.to_string(),
        m.fit.vc.sigma2_u,
        m.fit.vc.sigma2_e,
        m.vpc
    );
    if let Some(p) = &m.pcv {
        line.push_str(&format!(" pcv={:.4}", p.value));
    }
    if m.fit.boundary {
        line.push_str(" (boundary)");
    }
    line
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let out = args.data.out.as_deref();
    if out.is_none() && (!args.plot.is_empty() || args.svg) {
        return Err(MaihdaError::Usage("--plot and --svg need --out".into()));
    }
    let Prepared { analysis, metadata } =
        prepare(&args.data, "fit", args.meaningful, &args.benchmarks)?;
    let m1 = analysis.model1()?;
    let m2 = analysis.model2(&m1)?;
    let factors = factor_names(analysis.factors());
    let t1 = StratumBlock::new(
        ModelTag::Model1,
        factors.clone(),
        analysis.stratum_table(&m1, TableOrder::ByMean, args.meaningful),
    );
    let t2 = StratumBlock::new(
        ModelTag::Model2,
        factors,
        analysis.stratum_table(&m2, TableOrder::ByEffect, args.meaningful),
    );

    let mut doc = ReportDocument::new(metadata);
    for &threshold in &args.benchmarks {
        for quantity in [BenchmarkQuantity::UHat, BenchmarkQuantity::PredictedMean] {
            let values: Vec<f64> = t1
                .rows
                .iter()
                .map(|r| match quantity {
                    BenchmarkQuantity::UHat => r.u_hat,
                    BenchmarkQuantity::PredictedMean => r.predicted_mean,
                })
                .collect();
            doc.benchmarks.push(BenchmarkLine {
                model: ModelTag::Model1,
                quantity,
                threshold,
                share: crate::analysis::benchmark_share(&values, threshold)?,
            });
        }
    }
    doc.models = vec![ModelBlock::from_result(&m1), ModelBlock::from_result(&m2)];
    doc.strata = vec![t1, t2];

    if out.is_some() {
        println!("{}", summary_line(&m1));
        println!("{}", summary_line(&m2));
    }
    emit_report(&doc, out)?;
    let Some(dir) = out else { return Ok(()) };
    for block in &doc.strata {
        let tag = block.model.to_string();
        let mut buf = Vec::new();
        report::write_stratum_csv(block, &mut buf)?;
        write_file(dir, &format!("strata_{tag}.csv"), &buf)?;
        if args.plot.contains(&PlotArg::Caterpillar) || args.svg {
            let points = report::caterpillar_points(block);
            if args.plot.contains(&PlotArg::Caterpillar) {
                let mut buf = Vec::new();
                report::write_caterpillar_csv(&points, &mut buf)?;
                write_file(dir, &format!("caterpillar_{tag}.csv"), &buf)?;
            }
            if args.svg {
                let title = format!("{tag}: stratum effects with 95% intervals");
                write_file(
                    dir,
                    &format!("caterpillar_{tag}.svg"),
                    report::caterpillar_svg(&points, &title).as_bytes(),
                )?;
            }
        }
    }
    if args.plot.contains(&PlotArg::Scatter) {
        let mut buf = Vec::new();
        report::write_model_scatter_csv(&doc.strata[0], &doc.strata[1], &mut buf)?;
        write_file(dir, "scatter_model1_model2.csv", &buf)?;
    }
    Ok(())
}

fn cmd_scan(args: &ScanArgs) -> Result<()> {
    let Prepared { analysis, metadata } =
        prepare(&args.data, "scan", DEFAULT_MEANINGFUL_THRESHOLD, &[])?;
    let m1 = analysis.model1()?;
    let mut doc = ReportDocument::new(metadata);
    let (kind, baseline, rows) = if args.pairs {
        let m2 = analysis.model2(&m1)?;
        let rows = analysis.interaction_scan(&m2);
        doc.models = vec![ModelBlock::from_result(&m1), ModelBlock::from_result(&m2)];
        (ScanKind::Pairs, m2, rows)
    } else {
        let rows = analysis.single_covariate_scan(&m1);
        doc.models = vec![ModelBlock::from_result(&m1)];
        (ScanKind::Single, m1, rows)
    };
    let block = ScanBlock {
        kind,
        baseline: baseline.tag.clone(),
        baseline_sigma2_u: baseline.fit.vc.sigma2_u,
        rows: rows.iter().map(ScanLine::from).collect(),
    };
    let out = args.data.out.as_deref();
    if out.is_some() {
        for r in &block.rows {
            let pcv = r
                .pcv
                .map(|p| format!("{p:.4}"))
                .unwrap_or_else(|| "-".into());
            println!("{:<24} {:<15} pcv={pcv}", r.label, r.status);
        }
    }
    doc.scans.push(block);
    emit_report(&doc, out)?;
    if let Some(dir) = out {
        let block = &doc.scans[0];
        let name = match block.kind {
            ScanKind::Pairs => "scan_pairs.csv",
            ScanKind::Single => "scan_single.csv",
        };
        let mut buf = Vec::new();
        report::write_scan_csv(block, &mut buf)?;
        write_file(dir, name, &buf)?;
    }
    Ok(())
}

fn cmd_ols(args: &DataArgs) -> Result<()> {
    let Prepared { analysis, metadata } = prepare(args, "ols", DEFAULT_MEANINGFUL_THRESHOLD, &[])?;
    let unadjusted = ols_fit(
        analysis.summaries(),
        &intercept_design(analysis.summaries().len()),
    )?;
    let adjusted = ols_fit(analysis.summaries(), &analysis.main_effects_design())?;
    let mut doc = ReportDocument::new(metadata);
    doc.ols = vec![
        OlsBlock::new(ModelTag::Model1, &unadjusted),
        OlsBlock::new(ModelTag::Model2, &adjusted),
    ];
    emit_report(&doc, args.out.as_deref())?;
    if let Some(dir) = &args.out {
        let mut buf = Vec::new();
        report::write_ols_csv(&doc.ols, &mut buf)?;
        write_file(dir, "ols.csv", &buf)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FactorTruth<'a> {
    name: &'a str,
    categories: &'a [String],
    reference: &'a str,
}

#[derive(Serialize)]
struct Truth<'a> {
    factors: Vec<FactorTruth<'a>>,
    #[serde(flatten)]
    config: &'a SimConfig,
    strata: &'a [TrueStratum],
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let (config, _) = ConfigFile::read(&args.config)?;
    let mut sim = SimConfig::from_config(&config)?;
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    let label = config
        .data
        .cohort
        .clone()
        .unwrap_or_else(|| "simulated".into());
    let simulation = generate_with_truth(&sim, &label)?;
    let mut csv = Vec::new();
    write_dataset(&simulation.dataset, &Schema::from(&config.data), &mut csv)?;
    write_file(&args.out, "cohort.csv", &csv)?;
    let truth = Truth {
        factors: sim
            .factors
            .iter()
            .map(|f| FactorTruth {
                name: f.name(),
                categories: f.categories(),
                reference: f.reference_label(),
            })
            .collect(),
        config: &sim,
        strata: &simulation.strata,
    };
    let mut json = serde_json::to_string_pretty(&truth)?;
    json.push('\n');
    write_file(&args.out, "truth.json", json.as_bytes())?;
    println!(
        "wrote {} units in {} strata to {}",
        simulation.dataset.len(),
        simulation.strata.len(),
        args.out.join("cohort.csv").display()
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<(ReportDocument, String)> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| MaihdaError::InvalidInput(format!("{} is not UTF-8", path.display())))?;
    let doc = ReportDocument::from_json(&text)?;
    Ok((doc, report::sha256_hex(text.as_bytes())))
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    match (args.plot, &args.out) {
        (Some(PlotArg::Caterpillar), _) => {
            return Err(MaihdaError::Usage(
                "compare supports --plot scatter only".into(),
            ))
        }
        (Some(_), None) => return Err(MaihdaError::Usage("--plot needs --out".into())),
        _ => {}
    }
    let model = match args.model {
        ModelArg::Model1 => ModelTag::Model1,
        ModelArg::Model2 => ModelTag::Model2,
    };
    let quantity = match args.quantity {
        QuantityArg::UHat => Quantity::UHat,
        QuantityArg::Rank => Quantity::Rank,
    };
    let (a, digest_a) = read_report(&args.report_a)?;
    let (b, digest_b) = read_report(&args.report_b)?;
    let strata = |doc: &ReportDocument, path: &Path| -> Result<Vec<ComparableStratum>> {
        let block = doc.strata_for(&model).ok_or_else(|| {
            MaihdaError::InvalidInput(format!("{} has no {model} stratum table", path.display()))
        })?;
        Ok(block.rows.iter().map(ComparableStratum::from).collect())
    };
    let comparison = compare_cohorts(
        &strata(&a, &args.report_a)?,
        &strata(&b, &args.report_b)?,
        quantity,
    )?;
    let mut metadata = Metadata::new("compare");
    metadata.input_digests = vec![digest_a, digest_b];
    let mut doc = ReportDocument::new(metadata);
    let cohort = |d: &ReportDocument| d.metadata.cohort.clone().unwrap_or_default();
    doc.comparison = Some(ComparisonBlock {
        cohort_a: cohort(&a),
        cohort_b: cohort(&b),
        model,
        comparison,
    });
    let out = args.out.as_deref();
    if out.is_some() {
        let c = &doc.comparison.as_ref().unwrap().comparison;
        println!(
            "matched={} pearson={:.4} spearman={:.4}",
            c.n_matched, c.pearson, c.spearman
        );
    }
    emit_report(&doc, out)?;
    if let (Some(dir), Some(_)) = (out, args.plot) {
        let mut buf = Vec::new();
        report::write_comparison_csv(doc.comparison.as_ref().unwrap(), &mut buf)?;
        write_file(dir, "comparison.csv", &buf)?;
    }
    Ok(())
}
