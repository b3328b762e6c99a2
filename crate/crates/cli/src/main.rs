//! Command-line front end: fit a classifier from CSV data, score new data
//! against a saved artifact, materialize synthetic scenarios, and run
//! Monte-Carlo benchmarks.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use raedda_core::error::RaeddaError;
use raedda_core::model::ALL_MODELS;
use raedda_core::selection::{search, FitApproach, SearchFit, SearchGrid, SearchOutcome};
use raedda_core::simulation::{
    generate_scenario, run_monte_carlo, trimming_levels, Contamination,
    CovarianceScenario, MethodConfig, Proportions, ScenarioSpec, TestLabel,
};
use raedda_core::transductive::{ConstraintSpec, FitConfig};
use raedda_core::{
    class_display_name, load_combined, load_datasets, LabeledDataset, ModelArtifact,
    ModelName, UnlabeledDataset,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_ESTIMATION: u8 = 3;

#[derive(Parser)]
#[command(name = "raedda", about = "Robust classification with hidden-class discovery")]
struct Cli {
    /// Worker-thread cap for restarts, grid cells and replicates
    /// (default: RAEDDA_JOBS or all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a classifier and write artifact + classification CSV
    Fit(FitArgs),
    /// Classify new rows with a saved artifact
    Predict(PredictArgs),
    /// Write one synthetic scenario replicate to disk
    Simulate(SimulateArgs),
    /// Run seeded Monte-Carlo replicates and write metric tables
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Training CSV (requires --test); mutually exclusive with --data
    #[arg(long, requires = "test", conflicts_with = "data")]
    train: Option<PathBuf>,
    /// Test CSV with unlabeled rows
    #[arg(long)]
    test: Option<PathBuf>,
    /// Combined CSV where "?" in the label column marks test rows
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "class")]
    label_column: String,
    #[arg(long, value_enum, default_value = "transductive")]
    approach: ApproachArg,
    #[arg(long, default_value_t = 0.0)]
    alpha_l: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha_u: f64,
    /// Eigenvalue-ratio cap: a number, or "auto:MULT"
    #[arg(long, default_value = "auto:1.0")]
    c: String,
    /// Covariance model name, or "search" for all fourteen
    #[arg(long, default_value = "search")]
    model: String,
    /// Total class count E, or "search:MAX" to scan G..=MAX
    #[arg(long, default_value = "search:4")]
    classes: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    n_init: usize,
    #[arg(long, default_value_t = 30)]
    n_init_hidden: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Output artifact JSON path
    #[arg(long, default_value = "artifact.json")]
    out_artifact: PathBuf,
    /// Output per-test-row classification CSV path
    #[arg(long, default_value = "classification.csv")]
    out_classification: PathBuf,
    /// Output RBIC ranking CSV (written when searching)
    #[arg(long)]
    out_ranking: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "predictions.csv")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    #[arg(long, default_value = "eii")]
    scenario: String,
    #[arg(long, default_value = "equal")]
    proportions: String,
    #[arg(long, default_value = "none")]
    contamination: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Directory receiving train.csv, test.csv, truth.csv
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Number of Monte-Carlo replicates
    #[arg(long, default_value_t = 5)]
    b: usize,
    #[arg(long, value_enum, default_value = "transductive")]
    approach: ApproachArg,
    /// Models in the per-replicate grid (comma-separated), or "all"
    #[arg(long, default_value = "all")]
    models: String,
    /// Largest class count scanned (grid is G..=MAX)
    #[arg(long, default_value_t = 4)]
    max_classes: usize,
    /// Trimming-level multipliers applied to the contamination-matched
    /// levels (comma-separated)
    #[arg(long, default_value = "1.0")]
    trim_multipliers: String,
    /// Constraint multipliers applied to the observed eigenvalue ratio
    /// (comma-separated)
    #[arg(long, default_value = "1.0")]
    c_multipliers: String,
    #[arg(long, default_value_t = 10)]
    n_init: usize,
    #[arg(long, default_value_t = 10)]
    n_init_hidden: usize,
    /// Long-format per-replicate metrics CSV
    #[arg(long, default_value = "benchmark.csv")]
    out: PathBuf,
    /// Aggregate quartile table CSV
    #[arg(long, default_value = "benchmark_summary.csv")]
    out_summary: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum ApproachArg {
    Transductive,
    Inductive,
}

impl From<ApproachArg> for FitApproach {
    fn from(a: ApproachArg) -> Self {
        match a {
            ApproachArg::Transductive => FitApproach::Transductive,
            ApproachArg::Inductive => FitApproach::Inductive,
        }
    }
}

fn config_err(msg: String) -> RaeddaError {
    RaeddaError::ConfigError(msg)
}

fn parse_constraint(text: &str) -> Result<ConstraintSpec, RaeddaError> {
    if let Some(mult) = text.strip_prefix("auto:") {
        let multiplier: f64 = mult
            .parse()
            .map_err(|_| config_err(format!("bad constraint multiplier '{mult}'")))?;
        return Ok(ConstraintSpec::Auto { multiplier });
    }
    if text == "auto" {
        return Ok(ConstraintSpec::Auto { multiplier: 1.0 });
    }
    let value: f64 = text
        .parse()
        .map_err(|_| config_err(format!("bad constraint '{text}'")))?;
    Ok(ConstraintSpec::Fixed(value))
}

fn parse_models(text: &str) -> Result<Vec<ModelName>, RaeddaError> {
    if text == "search" || text == "all" {
        return Ok(ALL_MODELS.to_vec());
    }
    text.split(',')
        .map(|t| {
            ALL_MODELS
                .iter()
                .copied()
                .find(|m| format!("{m:?}").eq_ignore_ascii_case(t.trim()))
                .ok_or_else(|| config_err(format!("unknown model '{t}'")))
        })
        .collect()
}

fn parse_classes(text: &str, g: usize) -> Result<Vec<usize>, RaeddaError> {
    if let Some(max) = text.strip_prefix("search:") {
        let max: usize = max
            .parse()
            .map_err(|_| config_err(format!("bad class bound '{max}'")))?;
        if max < g {
            return Err(config_err(format!(
                "search bound {max} below the {g} observed classes"
            )));
        }
        return Ok((g..=max).collect());
    }
    let e: usize = text
        .parse()
        .map_err(|_| config_err(format!("bad class count '{text}'")))?;
    Ok(vec![e])
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>, RaeddaError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| config_err(format!("bad number '{t}'")))
        })
        .collect()
}

fn parse_scenario(args: &ScenarioArgs) -> Result<ScenarioSpec, RaeddaError> {
    let covariance_scenario = match args.scenario.to_lowercase().as_str() {
        "eii" => CovarianceScenario::Eii,
        "eei" => CovarianceScenario::Eei,
        "evv" => CovarianceScenario::Evv,
        "vvv" => CovarianceScenario::Vvv,
        "vvv-overlap" => CovarianceScenario::VvvOverlap,
        other => return Err(config_err(format!("unknown scenario '{other}'"))),
    };
    let proportions = match args.proportions.to_lowercase().as_str() {
        "equal" => Proportions::Equal,
        "unequal" => Proportions::Unequal,
        other => return Err(config_err(format!("unknown proportions '{other}'"))),
    };
    let contamination = match args.contamination.to_lowercase().as_str() {
        "none" => Contamination::None,
        "low" => Contamination::Low,
        "medium" => Contamination::Medium,
        "high" => Contamination::High,
        other => return Err(config_err(format!("unknown contamination '{other}'"))),
    };
    Ok(ScenarioSpec {
        covariance_scenario,
        proportions,
        contamination,
        seed: args.seed,
    })
}

fn write_ranking(path: &Path, outcome: &SearchOutcome) -> Result<(), RaeddaError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "classes", "c", "rbic", "loglik", "converged"])?;
    for cell in &outcome.table {
        w.write_record([
            format!("{:?}", cell.model),
            cell.e.to_string(),
            cell.c.to_string(),
            cell.rbic.to_string(),
            cell.loglik.to_string(),
            cell.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_classification(
    path: &Path,
    classification: &[usize],
    posteriors: impl Fn(usize) -> f64,
    trimmed: &[bool],
    g: usize,
    class_names: &[String],
) -> Result<(), RaeddaError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "class", "max_posterior", "trimmed"])?;
    for (i, &k) in classification.iter().enumerate() {
        w.write_record([
            i.to_string(),
            class_display_name(k, g, class_names),
            posteriors(i).to_string(),
            trimmed[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<(), RaeddaError> {
    let (labeled, unlabeled): (LabeledDataset, UnlabeledDataset) = match (&args.data, &args.train, &args.test)
    {
        (Some(combined), None, _) => load_combined(combined, &args.label_column)?,
        (None, Some(train), Some(test)) => load_datasets(train, test, &args.label_column)?,
        _ => {
            return Err(config_err(
                "provide either --data or both --train and --test".into(),
            ))
        }
    };
    let config = FitConfig {
        alpha_l: args.alpha_l,
        alpha_u: args.alpha_u,
        c: parse_constraint(&args.c)?,
        n_init: args.n_init,
        n_init_hidden: args.n_init_hidden,
        max_iter: args.max_iter,
        epsilon: args.epsilon,
        seed: args.seed,
    };
    let models = parse_models(&args.model)?;
    let e_range = parse_classes(&args.classes, labeled.g)?;
    let searching = args.model == "search" || args.classes.starts_with("search");
    let grid = SearchGrid {
        e_range,
        models,
        c_values: vec![config.c.clone()],
    };
    let outcome = search(&grid, &labeled, &unlabeled, &config, args.approach.into())?;
    if searching {
        if let Some(path) = &args.out_ranking {
            write_ranking(path, &outcome)?;
        }
    }
    let m = unlabeled.m();
    match &outcome.best {
        SearchFit::Transductive(fit) => {
            let artifact = ModelArtifact::from_transductive(fit, &labeled, &config);
            artifact.save(&args.out_artifact)?;
            let trimmed: Vec<bool> = fit.trimming.phi.iter().map(|&k| !k).collect();
            write_classification(
                &args.out_classification,
                &fit.classification,
                |i| {
                    fit.posteriors
                        .row(i)
                        .iter()
                        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                },
                &trimmed,
                labeled.g,
                &labeled.class_names,
            )?;
        }
        SearchFit::Inductive(ind) => {
            let artifact = ModelArtifact::from_inductive(ind, &labeled, &config);
            artifact.save(&args.out_artifact)?;
            let trimmed: Vec<bool> =
                ind.fit.trimming.phi[..m].iter().map(|&k| !k).collect();
            write_classification(
                &args.out_classification,
                &ind.test_classification,
                |i| {
                    ind.fit
                        .posteriors
                        .row(i)
                        .iter()
                        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                },
                &trimmed,
                labeled.g,
                &labeled.class_names,
            )?;
        }
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<(), RaeddaError> {
    let artifact = ModelArtifact::load(&args.artifact)?;
    let mut reader = csv::Reader::from_path(&args.data)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        for (c, field) in record.iter().enumerate() {
            row.push(field.trim().parse().map_err(|_| RaeddaError::ParseError {
                row: r + 2,
                column: c + 1,
                message: format!("'{field}' is not a finite number"),
            })?);
        }
        rows.push(row);
    }
    let p = artifact.p;
    if let Some(bad) = rows.iter().position(|r| r.len() != p) {
        return Err(RaeddaError::ShapeError(format!(
            "row {} has {} features, artifact expects {p}",
            bad + 2,
            rows[bad].len()
        )));
    }
    let y = nalgebra::DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let predictions = artifact.predict(&y)?;
    let mut w = csv::Writer::from_path(&args.out)?;
    w.write_record(["row", "class", "max_posterior", "outlier"])?;
    for (i, pred) in predictions.iter().enumerate() {
        w.write_record([
            i.to_string(),
            pred.class_name.clone(),
            pred.max_posterior.to_string(),
            pred.outlier.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), RaeddaError> {
    let spec = parse_scenario(&args.scenario)?;
    let (labeled, unlabeled, truth) = generate_scenario(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let p = labeled.p();
    let feature_header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();

    let mut w = csv::Writer::from_path(args.out_dir.join("train.csv"))?;
    let mut header = feature_header.clone();
    header.push("class".into());
    w.write_record(&header)?;
    for i in 0..labeled.n() {
        let mut rec: Vec<String> =
            (0..p).map(|j| labeled.x[(i, j)].to_string()).collect();
        rec.push(labeled.class_names[labeled.labels[i]].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(args.out_dir.join("test.csv"))?;
    w.write_record(&feature_header)?;
    for i in 0..unlabeled.m() {
        let rec: Vec<String> = (0..p).map(|j| unlabeled.y[(i, j)].to_string()).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(args.out_dir.join("truth.csv"))?;
    w.write_record(["set", "row", "truth"])?;
    for (i, label) in truth.test_labels.iter().enumerate() {
        let text = match label {
            TestLabel::Group(g) => format!("group_{}", g + 1),
            TestLabel::Outlier => "outlier".into(),
        };
        w.write_record(["test", &i.to_string(), &text])?;
    }
    for &i in &truth.mislabeled_train {
        w.write_record(["train", &i.to_string(), "mislabeled"])?;
    }
    for &i in &truth.train_outliers {
        w.write_record(["train", &i.to_string(), "outlier"])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<(), RaeddaError> {
    let spec = parse_scenario(&args.scenario)?;
    let models = parse_models(&args.models)?;
    let trim_multipliers = parse_f64_list(&args.trim_multipliers)?;
    let c_multipliers = parse_f64_list(&args.c_multipliers)?;
    let ([n1, n2], [m1, m2, m3]) = spec.proportions.sizes();
    let (q_l, q_u) = spec.contamination.counts();
    let n = n1 + n2 + q_l;
    let m = m1 + m2 + m3 + q_u;
    let g = 2;

    let mut long = csv::Writer::from_path(&args.out)?;
    long.write_record([
        "trim_multiplier",
        "c_multiplier",
        "replicate",
        "pct_label_noise",
        "pct_hidden_group",
        "ari",
        "pct_novelty",
    ])?;
    let mut summary = csv::Writer::from_path(&args.out_summary)?;
    summary.write_record([
        "trim_multiplier",
        "c_multiplier",
        "metric",
        "q1",
        "median",
        "q3",
        "failures",
        "extra_groups_mode",
    ])?;

    for &tm in &trim_multipliers {
        for &cm in &c_multipliers {
            let (alpha_l, alpha_u) = trimming_levels(q_l, q_u, n, m, tm);
            let method = MethodConfig {
                grid: SearchGrid {
                    e_range: (g..=args.max_classes).collect(),
                    models: models.clone(),
                    c_values: vec![ConstraintSpec::Auto { multiplier: cm }],
                },
                config: FitConfig {
                    alpha_l,
                    alpha_u,
                    c: ConstraintSpec::Auto { multiplier: cm },
                    n_init: args.n_init,
                    n_init_hidden: args.n_init_hidden,
                    ..FitConfig::default()
                },
                approach: args.approach.into(),
            };
            let report = run_monte_carlo(&spec, &method, args.b, spec.seed)?;
            for (rep, metrics) in report.replicates.iter().enumerate() {
                if let Some(mtr) = metrics {
                    long.write_record([
                        tm.to_string(),
                        cm.to_string(),
                        rep.to_string(),
                        mtr.pct_label_noise.to_string(),
                        mtr.pct_hidden_group.to_string(),
                        mtr.ari.to_string(),
                        mtr.pct_novelty.to_string(),
                    ])?;
                }
            }
            let modal_extra = report
                .hidden_count_histogram
                .iter()
                .max_by_key(|(_, &count)| count)
                .map(|(&h, _)| h)
                .unwrap_or(0);
            let rows = [
                ("pct_label_noise", report.summary.pct_label_noise),
                ("pct_hidden_group", report.summary.pct_hidden_group),
                ("ari", report.summary.ari),
                ("pct_novelty", report.summary.pct_novelty),
            ];
            for (name, q) in rows {
                summary.write_record([
                    tm.to_string(),
                    cm.to_string(),
                    name.to_string(),
                    q.q1.to_string(),
                    q.median.to_string(),
                    q.q3.to_string(),
                    report.failures.len().to_string(),
                    modal_extra.to_string(),
                ])?;
            }
        }
    }
    long.flush()?;
    summary.flush()?;
    Ok(())
}

fn exit_code(err: &RaeddaError) -> u8 {
    match err {
        RaeddaError::ParseError { .. }
        | RaeddaError::ConfigError(_)
        | RaeddaError::SchemaVersion(_)
        | RaeddaError::EmptyTrainingClass
        | RaeddaError::EmptyInput(_)
        | RaeddaError::InvalidConstraint(_)
        | RaeddaError::Io(_)
        | RaeddaError::Csv(_)
        | RaeddaError::Json(_) => EXIT_CONFIG,
        _ => EXIT_ESTIMATION,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .or_else(|| {
            std::env::var("RAEDDA_JOBS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let result = match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            eprintln!("error: {err}");
            if code == EXIT_ESTIMATION {
                if let Ok(mut f) = std::fs::File::create("raedda-diagnostics.txt") {
                    let _ = writeln!(f, "{err}");
                }
            }
            ExitCode::from(code)
        }
    }
}
