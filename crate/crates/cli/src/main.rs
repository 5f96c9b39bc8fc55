use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use neurovnn::io::{self, IoError};
use neurovnn::linalg::LinalgError;
use neurovnn::pipeline::{PipelineError, PipelineOutput};
use neurovnn::synth::SynthError;
use neurovnn::training::{self, TrainError};
use neurovnn::vnn::VnnError;
use neurovnn::{Cohort, PipelineConfig, SynthConfig, TrainConfig, VnnModel};

#[derive(Parser)]
#[command(name = "neurovnn", version, about = "Covariance neural networks for brain-age-gap estimation")]
struct Cli {
    /// Overrides the seed of the synthetic or training config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort CSV and its ground truth.
    Simulate {
        /// Synthetic cohort config (JSON); defaults to the acceptance config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Train a model on the control rows of a cohort.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        /// Training config (JSON); missing fields take their defaults.
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        out_report: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Value of the `group` column that marks control subjects.
        #[arg(long, default_value = "HC")]
        hc_group: String,
    },
    /// Write raw age estimates for every subject of a cohort.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bias-corrected Δ-Age for a control and a disease cohort.
    DeltaAge(PipelineArgs),
    /// Regional and eigenvector-level characterization of Δ-Age.
    Explain(PipelineArgs),
    /// Every pipeline report in one output directory.
    Report(PipelineArgs),
}

#[derive(clap::Args)]
struct PipelineArgs {
    #[arg(long)]
    model: PathBuf,
    /// Control cohort CSV; its covariance replaces the model's.
    #[arg(long)]
    hc: PathBuf,
    #[arg(long)]
    disease: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Keep only rows of this group from the control file.
    #[arg(long)]
    hc_group: Option<String>,
    /// Keep only rows of this group from the disease file.
    #[arg(long)]
    disease_group: Option<String>,
    /// Pipeline config (JSON).
    #[arg(long)]
    pipeline_config: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

fn numeric_linalg(e: &LinalgError) -> bool {
    matches!(e, LinalgError::NoConvergence { .. } | LinalgError::NonFinite(..))
}

fn numeric_vnn(e: &VnnError) -> bool {
    matches!(e, VnnError::Linalg(l) if numeric_linalg(l))
}

fn classify(numeric: bool, message: String) -> Failure {
    Failure {
        code: if numeric { 3 } else { 2 },
        message,
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let numeric = matches!(&e, IoError::Model(v) if numeric_vnn(v));
        classify(numeric, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let numeric = match &e {
            TrainError::Linalg(l) => numeric_linalg(l),
            TrainError::Vnn(v) => numeric_vnn(v),
            _ => false,
        };
        classify(numeric, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let numeric = match &e {
            PipelineError::Linalg(l) => numeric_linalg(l),
            PipelineError::Vnn(v) => numeric_vnn(v),
            _ => false,
        };
        classify(numeric, e.to_string())
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        Failure::input(e.to_string())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_for_model(path: &Path, model: &VnnModel, group: Option<&str>) -> Result<Cohort, Failure> {
    let cohort = io::load_cohort_csv_with_labels(path, model.region_labels())?;
    let cohort = match group {
        Some(g) => cohort.filter_group(g),
        None => cohort,
    };
    if cohort.is_empty() {
        return Err(Failure::input(format!("{}: no subjects selected", path.display())));
    }
    Ok(cohort)
}

fn simulate(
    config: Option<&Path>,
    out: &Path,
    truth_out: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let mut config: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => neurovnn::default_acceptance_config(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let (cohort, truth) = neurovnn::generate_cohort(&config)?;
    io::save_cohort_csv(&cohort, out)?;
    if let Some(p) = truth_out {
        io::write_json(&truth, p)?;
    }
    println!(
        "wrote {} subjects ({} {}, {} {}) to {}",
        cohort.len(),
        config.n_hc,
        config.hc_group,
        config.n_disease,
        config.disease_group,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    cohort: &Path,
    train_config: Option<&Path>,
    out_model: &Path,
    out_report: Option<&Path>,
    max_epochs: Option<usize>,
    hc_group: &str,
    seed: Option<u64>,
    verbose: bool,
) -> Result<(), Failure> {
    let mut config: TrainConfig = match train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(e) = max_epochs {
        config.max_epochs = e;
    }
    let cohort = io::load_cohort_csv(cohort)?;
    let hc = cohort.filter_group(hc_group);
    if hc.is_empty() {
        return Err(Failure::input(format!("cohort has no rows with group `{hc_group}`")));
    }
    let (model, report) = training::train(&hc, &config)?;
    io::save_model(&model, out_model)?;
    if let Some(p) = out_report {
        io::write_json(&report, p)?;
    }
    if verbose {
        for (epoch, loss) in report.epoch_train_loss.iter().enumerate() {
            println!(
                "epoch {:>3}  train loss {loss:.4}  validation MAE {:.4}",
                epoch + 1,
                report.validation_mae[epoch + 1]
            );
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let (n_train, n_val, n_test) = report.split_sizes;
    println!(
        "trained on {n_train} subjects ({n_val} validation, {n_test} test), {} parameters",
        model.parameter_count()
    );
    println!(
        "selected epoch {} of {}, validation MAE {:.3}",
        report.selected_epoch,
        report.epochs_run,
        report.best_validation_mae()
    );
    if let Some(t) = &report.test {
        match t.pearson_r {
            Some(r) => println!("test MAE {:.3}, Pearson r {r:.3}", t.mae),
            None => println!("test MAE {:.3}", t.mae),
        }
    }
    println!("model written to {}", out_model.display());
    Ok(())
}

fn predict(model: &Path, cohort: &Path, out: &Path) -> Result<(), Failure> {
    let model = io::load_model(model)?;
    let cohort = load_for_model(cohort, &model, None)?;
    let predictions = training::predict(&model, &cohort)?;
    let mut text = String::from("subject_id,group,age,prediction\n");
    for (s, p) in cohort.subjects().iter().zip(&predictions) {
        text.push_str(&format!("{},{},{},{}\n", s.subject_id, s.group, s.age, p));
    }
    io::write_text_file(&text, out)?;
    println!("wrote {} predictions to {}", predictions.len(), out.display());
    Ok(())
}

#[derive(Clone, Copy)]
enum Outputs {
    DeltaAge,
    Explain,
    All,
}

fn pipeline(args: &PipelineArgs, outputs: Outputs) -> Result<(), Failure> {
    let model = io::load_model(&args.model)?;
    let hc = load_for_model(&args.hc, &model, args.hc_group.as_deref())?;
    let disease = load_for_model(&args.disease, &model, args.disease_group.as_deref())?;
    let config: PipelineConfig = match &args.pipeline_config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    let output = neurovnn::run_pipeline(&model, &hc, &disease, &config)?;
    write_outputs(&output, &args.out, outputs)?;
    summarize(&output, outputs);
    Ok(())
}

fn write_outputs(output: &PipelineOutput, dir: &Path, outputs: Outputs) -> Result<(), IoError> {
    match outputs {
        Outputs::All => io::export_reports(output, dir),
        Outputs::DeltaAge => {
            create_dir(dir)?;
            io::write_json(&output.delta_age, &dir.join("delta_age.json"))
        }
        Outputs::Explain => {
            create_dir(dir)?;
            io::export_region_map(&output.regions, &dir.join("regions.csv"))?;
            io::write_json(&output.regions, &dir.join("regions.json"))?;
            io::write_json(&output.explainability, &dir.join("explainability.json"))
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })
}

fn summarize(output: &PipelineOutput, outputs: Outputs) {
    let d = &output.delta_age;
    println!(
        "HC       n={:<4} Δ-Age {:.3} ± {:.3} years",
        d.hc.n, d.hc.mean_delta_age, d.hc.std_delta_age
    );
    println!(
        "disease  n={:<4} Δ-Age {:.3} ± {:.3} years",
        d.disease.n, d.disease.mean_delta_age, d.disease.std_delta_age
    );
    println!("F = {:.4}, p = {:.3e}", d.group_test.f_value, d.group_test.p_raw);
    if matches!(outputs, Outputs::DeltaAge) {
        return;
    }
    let significant = output.regions.significant_regions();
    let labels: Vec<&str> = significant
        .iter()
        .map(|&i| output.regions.rows[i].region_label.as_str())
        .collect();
    println!(
        "{} of {} regions significant at α = {}: {}",
        labels.len(),
        output.regions.n_tests,
        output.regions.alpha,
        if labels.is_empty() { "none".to_string() } else { labels.join(" ") }
    );
    let flagged = output.explainability.flagged();
    println!(
        "{} eigenvectors flagged at p ≤ {}: {:?}",
        flagged.len(),
        output.explainability.p_threshold,
        flagged
    );
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::input(format!("THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::input(format!("cannot configure thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match &cli.command {
        Command::Simulate {
            config,
            out,
            truth_out,
        } => simulate(config.as_deref(), out, truth_out.as_deref(), cli.seed),
        Command::Train {
            cohort,
            train_config,
            out_model,
            out_report,
            max_epochs,
            hc_group,
        } => train(
            cohort,
            train_config.as_deref(),
            out_model,
            out_report.as_deref(),
            *max_epochs,
            hc_group,
            cli.seed,
            cli.verbose,
        ),
        Command::Predict { model, cohort, out } => predict(model, cohort, out),
        Command::DeltaAge(args) => pipeline(args, Outputs::DeltaAge),
        Command::Explain(args) => pipeline(args, Outputs::Explain),
        Command::Report(args) => pipeline(args, Outputs::All),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
