//! `birnn`: glucose-insulin modeling experiments from the command line.
//!
//! Subcommands wrap the library operations; `run` chains the full experiment
//! (generate, simulate, fit-linear, train, evaluate) from one JSON config.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use birnn_core::error::{Error, Result};
use birnn_core::io::{
    read_checkpoint, read_inputs_csv, read_params_json, read_trace_csv, write_checkpoint,
    write_history_csv, write_scenario_csv, write_scenario_events, write_trace_csv,
    write_trajectory_csv, Checkpoint, Provenance, CHECKPOINT_FORMAT,
};
use birnn_core::loss::build_episode;
use birnn_core::scenario::ScenarioConfig;
use birnn_core::train::TrainConfig;

use config::{ExperimentConfig, Layout};
use pipeline::{evaluate_artifacts, run_pipeline, Stage};

#[derive(Parser)]
#[command(name = "birnn", version, about = "Glucose-insulin modeling: linear baseline and biologically informed GRU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a randomized meal/bolus scenario from a JSON config.
    Generate(GenerateArgs),
    /// Simulate the virtual patient over a scenario CSV.
    Simulate(SimulateArgs),
    /// Identify linear model parameters from recorded data.
    FitLinear(FitLinearArgs),
    /// Train the network against an identified linear model.
    Train(TrainArgs),
    /// Compare checkpoints against the linear baseline on test data.
    Evaluate(EvaluateArgs),
    /// Roll out a checkpoint or a parameter set on an input CSV.
    SimulateModel(SimulateModelArgs),
    /// Run the full experiment pipeline from one config.
    Run(RunArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for scenario.csv and events.json.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Virtual patient config JSON.
    #[arg(long)]
    patient: PathBuf,
    /// Scenario CSV (t_min,u,r).
    #[arg(long)]
    scenario: PathBuf,
    /// Output trace CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitLinearArgs {
    /// Scenario CSV; repeat for multiple recordings.
    #[arg(long, required = true)]
    scenario: Vec<PathBuf>,
    /// Matching trace CSV with measured glucose; same count as --scenario.
    #[arg(long, required = true)]
    trace: Vec<PathBuf>,
    /// Ridge regularization weight.
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    /// Output parameter JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory with train_scenario.csv, train_trace.csv,
    /// val_scenario.csv and val_trace.csv.
    #[arg(long)]
    data: PathBuf,
    /// Identified linear model parameters JSON.
    #[arg(long)]
    patient_params: PathBuf,
    /// Train config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output checkpoint JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional history CSV path (defaults next to the checkpoint).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of *.ckpt.json checkpoints.
    #[arg(long)]
    ckpts: PathBuf,
    /// Directory of *.params.json linear fits.
    #[arg(long)]
    linear: PathBuf,
    /// Data directory (scenarios/, traces/, patients/).
    #[arg(long)]
    data: PathBuf,
    /// Output report directory.
    #[arg(long)]
    out: PathBuf,
    /// Accept artifacts with mismatched config hashes.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SimulateModelArgs {
    /// Checkpoint JSON or linear parameter JSON.
    #[arg(long)]
    model: PathBuf,
    /// Input CSV (t_min,u,r).
    #[arg(long)]
    inputs: PathBuf,
    /// Output trajectory CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output root directory.
    #[arg(long)]
    out: PathBuf,
    /// Start from this stage, reusing earlier artifacts
    /// (generate | simulate | fit-linear | train | evaluate).
    #[arg(long)]
    stage: Option<String>,
    /// Suppress stage progress output.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::FitLinear(args) => cmd_fit_linear(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::SimulateModel(args) => cmd_simulate_model(args),
        Command::Run(args) => cmd_run(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut config: ScenarioConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let scenario = birnn_core::scenario::generate_scenario(&config)?;
    std::fs::create_dir_all(&args.out)?;
    let prov = Provenance { config_hash: None, seed: Some(config.seed) };
    write_scenario_csv(&args.out.join("scenario.csv"), &scenario, &prov)?;
    write_scenario_events(&args.out.join("events.json"), &scenario, None)?;
    println!(
        "wrote {} minutes, {} meals, {} boluses to {}",
        scenario.len_min(),
        scenario.meal_log.len(),
        scenario.bolus_log.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let patient: birnn_core::patient::VirtualPatientConfig = read_json(&args.patient)?;
    let (inputs, prov) = read_inputs_csv(&args.scenario)?;
    let scenario = birnn_core::scenario::Scenario {
        inputs,
        meal_log: vec![],
        bolus_log: vec![],
        prng: String::new(),
        seed: 0,
    };
    let trace = birnn_core::patient::simulate_patient(&patient, &scenario)?;
    write_trace_csv(&args.out, &trace, &Provenance { seed: Some(patient.seed), ..prov })?;
    println!("wrote {} minutes to {}", trace.states.len(), args.out.display());
    Ok(())
}

fn cmd_fit_linear(args: FitLinearArgs) -> Result<()> {
    if args.scenario.len() != args.trace.len() {
        return Err(Error::InvalidConfig(format!(
            "{} --scenario vs {} --trace arguments",
            args.scenario.len(),
            args.trace.len()
        )));
    }
    let mut recordings = Vec::with_capacity(args.scenario.len());
    for (s, t) in args.scenario.iter().zip(&args.trace) {
        let (inputs, _) = read_inputs_csv(s)?;
        let (trace, _) = read_trace_csv(t)?;
        recordings.push(birnn_core::ident::Recording {
            inputs,
            glucose: trace.measured_glucose,
        });
    }
    let params = birnn_core::ident::fit_rls(&recordings, 1.0, args.ridge)?;
    birnn_core::io::write_params_json(&args.out, &params)?;
    println!("wrote identified parameters to {}", args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    for name in [
        "train_scenario.csv",
        "train_trace.csv",
        "val_scenario.csv",
        "val_trace.csv",
    ] {
        if !args.data.join(name).exists() {
            return Err(Error::InvalidConfig(format!(
                "stage train: missing {} in {}",
                name,
                args.data.display()
            )));
        }
    }
    let linear = read_params_json(&args.patient_params)?;
    let config: TrainConfig = read_json(&args.config)?;
    let (train_inputs, _) = read_inputs_csv(&args.data.join("train_scenario.csv"))?;
    let (train_trace, _) = read_trace_csv(&args.data.join("train_trace.csv"))?;
    let (val_inputs, _) = read_inputs_csv(&args.data.join("val_scenario.csv"))?;
    let (val_trace, _) = read_trace_csv(&args.data.join("val_trace.csv"))?;

    let train_eps = [build_episode(train_inputs, train_trace.measured_glucose, &linear)?];
    let val_eps = [build_episode(val_inputs, val_trace.measured_glucose, &linear)?];
    let outcome = birnn_core::train::train(&config, &train_eps, &val_eps, &linear)?;

    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        n_hu: config.n_hu,
        seed: config.seed,
        init: birnn_core::gru::INIT_SCHEME.into(),
        train_config: config.clone(),
        model_params: linear,
        standardizer: outcome.standardizer.clone(),
        weights: outcome.best,
        best_iter: outcome.best_iter,
        best_val_mse: outcome.best_val_mse,
        config_hash: None,
    };
    write_checkpoint(&args.out, &ckpt)?;
    let history_path = args
        .history
        .unwrap_or_else(|| args.out.with_extension("history.csv"));
    write_history_csv(&history_path, &outcome.history, &Provenance::default())?;
    println!(
        "best validation MSE {} at iteration {}; checkpoint {}",
        outcome.best_val_mse,
        outcome.best_iter,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    // Patient ids from the checkpoint directory, sorted for determinism.
    let mut ids = vec![];
    for entry in std::fs::read_dir(&args.ckpts)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", args.ckpts.display())))?
    {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".ckpt.json") {
            ids.push(stem.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no *.ckpt.json files in {}",
            args.ckpts.display()
        )));
    }

    let layout = Layout {
        data: args.data.clone(),
        ckpts: args.ckpts.clone(),
        report: args.out.clone(),
    };
    evaluate_with_linear_dir(&layout, &args.linear, &ids, args.force)?;
    println!("wrote report to {}", args.out.join("report.json").display());
    Ok(())
}

/// The pipeline keeps linear fits under data/linear; the standalone command
/// accepts any directory and stages the fits into place when they differ.
fn evaluate_with_linear_dir(layout: &Layout, linear_dir: &PathBuf, ids: &[String], force: bool) -> Result<()> {
    let default_dir = layout.linear();
    if default_dir != *linear_dir {
        std::fs::create_dir_all(&default_dir)?;
        for id in ids {
            let src = linear_dir.join(format!("{id}.params.json"));
            if !src.exists() {
                return Err(Error::InvalidConfig(format!("missing linear fit {}", src.display())));
            }
            std::fs::copy(&src, layout.linear_params(id))?;
        }
    }
    evaluate_artifacts(layout, ids, None, force)
}

fn cmd_simulate_model(args: SimulateModelArgs) -> Result<()> {
    let (inputs, prov) = read_inputs_csv(&args.inputs)?;
    let text = std::fs::read_to_string(&args.model)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", args.model.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;

    let (states, params) = if value.get("format").is_some() {
        let ckpt = read_checkpoint(&args.model)?;
        let predicted = birnn_core::loss::predict_states(&ckpt.weights, &inputs, &ckpt.standardizer)?;
        let states: Vec<birnn_core::compartmental::PatientState> = predicted
            .iter()
            .map(|y| birnn_core::compartmental::PatientState { y: *y })
            .collect();
        (states, ckpt.model_params)
    } else {
        let params = read_params_json(&args.model)?;
        let model = birnn_core::compartmental::build_linear_model(&params, 1.0)?;
        let y0 = birnn_core::compartmental::equilibrium_state(&params)?;
        let states = birnn_core::compartmental::simulate(&model, &y0, &inputs);
        (states, params)
    };
    write_trajectory_csv(&args.out, &states, &inputs, &params, &prov)?;
    println!("wrote {} rows to {}", states.len(), args.out.display());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    let first = match &args.stage {
        Some(s) => Stage::parse(s)?,
        None => Stage::Generate,
    };
    std::fs::create_dir_all(&args.out)?;
    run_pipeline(&config, &args.out, first, args.quiet)?;
    let layout = Layout::new(&args.out, &config.paths);
    if !args.quiet {
        eprintln!("[{}] done; report at {}", config.name, layout.report_json().display());
    }
    Ok(())
}
