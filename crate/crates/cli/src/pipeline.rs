//! End-to-end experiment pipeline: generate, simulate, fit-linear, train,
//! evaluate. Every stage reads its inputs from the artifacts on disk and
//! writes its outputs back, so a run can resume from any stage. All artifacts
//! are stamped with the config hash; identical configs reproduce identical
//! bytes.

use std::fs;
use std::path::Path;

use birnn_core::error::{Error, Result};
use birnn_core::eval::{evaluate_cohort, PatientModel, PatientTestData};
use birnn_core::ident::{fit_rls, Recording};
use birnn_core::io::{
    read_checkpoint, read_inputs_csv, read_params_json, read_trace_csv, write_checkpoint,
    write_eval_traces_csv, write_history_csv, write_params_json, write_report_json,
    write_scenario_csv, write_scenario_events, write_trace_csv, Checkpoint, Provenance,
    CHECKPOINT_FORMAT,
};
use birnn_core::loss::build_episode;
use birnn_core::patient::{generate_cohort, simulate_patient, VirtualPatientConfig};
use birnn_core::scenario::generate_scenario;
use birnn_core::train::train;

use crate::config::{patient_id, ExperimentConfig, Layout};

pub const SCENARIO_SETS: [&str; 3] = ["train", "validation", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Simulate,
    FitLinear,
    Train,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Generate,
        Stage::Simulate,
        Stage::FitLinear,
        Stage::Train,
        Stage::Evaluate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Simulate => "simulate",
            Stage::FitLinear => "fit-linear",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .iter()
            .find(|st| st.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown stage `{s}`; expected one of generate, simulate, fit-linear, train, evaluate"
                ))
            })
    }
}

fn stage_err(stage: Stage, err: Error) -> Error {
    match err {
        Error::Io(e) => Error::InvalidConfig(format!("stage {}: {e}", stage.name())),
        other => Error::InvalidConfig(format!("stage {}: {other}", stage.name())),
    }
}

/// Runs the pipeline from `first_stage` to the end.
pub fn run_pipeline(
    config: &ExperimentConfig,
    out_root: &Path,
    first_stage: Stage,
    quiet: bool,
) -> Result<()> {
    config.validate()?;
    let layout = Layout::new(out_root, &config.paths);
    let hash = config.hash();

    for stage in Stage::ALL {
        if stage < first_stage {
            continue;
        }
        if !quiet {
            eprintln!("[{}] stage {}", config.name, stage.name());
        }
        let result = match stage {
            Stage::Generate => stage_generate(config, &layout, &hash),
            Stage::Simulate => stage_simulate(config, &layout, &hash),
            Stage::FitLinear => stage_fit_linear(config, &layout),
            Stage::Train => stage_train(config, &layout, &hash),
            Stage::Evaluate => stage_evaluate(config, &layout, &hash, false),
        };
        result.map_err(|e| stage_err(stage, e))?;
    }
    Ok(())
}

fn scenario_for(config: &ExperimentConfig, set: &str) -> birnn_core::scenario::ScenarioConfig {
    match set {
        "train" => config.protocols.train.clone(),
        "validation" => config.protocols.validation.clone(),
        _ => config.protocols.test.clone(),
    }
}

fn stage_generate(config: &ExperimentConfig, layout: &Layout, hash: &str) -> Result<()> {
    fs::create_dir_all(layout.scenarios())?;
    for set in SCENARIO_SETS {
        let scenario_config = scenario_for(config, set);
        let scenario = generate_scenario(&scenario_config)?;
        let prov = Provenance {
            config_hash: Some(hash.to_string()),
            seed: Some(scenario_config.seed),
        };
        write_scenario_csv(&layout.scenario_csv(set), &scenario, &prov)?;
        write_scenario_events(&layout.scenario_events(set), &scenario, Some(hash.to_string()))?;
    }
    Ok(())
}

fn load_scenario_inputs(
    layout: &Layout,
    set: &str,
) -> Result<(Vec<birnn_core::compartmental::ModelInput>, Provenance)> {
    let path = layout.scenario_csv(set);
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "missing scenario artifact {} (run the generate stage first)",
            path.display()
        )));
    }
    read_inputs_csv(&path)
}

fn stage_simulate(config: &ExperimentConfig, layout: &Layout, hash: &str) -> Result<()> {
    let cohort = generate_cohort(
        &config.cohort.template,
        config.cohort.n_patients,
        config.cohort.spread_frac,
        config.cohort.seed,
    )?;
    let mut scenarios = Vec::with_capacity(SCENARIO_SETS.len());
    for set in SCENARIO_SETS {
        let (inputs, _) = load_scenario_inputs(layout, set)?;
        scenarios.push(birnn_core::scenario::Scenario {
            inputs,
            meal_log: vec![],
            bolus_log: vec![],
            prng: String::new(),
            seed: 0,
        });
    }
    fs::create_dir_all(layout.patients())?;
    for (i, patient) in cohort.iter().enumerate() {
        let id = patient_id(i);
        fs::write(
            layout.patient_json(&id),
            serde_json::to_string_pretty(patient)? + "\n",
        )?;
        fs::create_dir_all(layout.traces().join(&id))?;
        for (set, scenario) in SCENARIO_SETS.iter().zip(&scenarios) {
            let trace = simulate_patient(patient, scenario)?;
            let prov = Provenance {
                config_hash: Some(hash.to_string()),
                seed: Some(patient.seed),
            };
            write_trace_csv(&layout.trace_csv(&id, set), &trace, &prov)?;
        }
    }
    Ok(())
}

fn stage_fit_linear(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    fs::create_dir_all(layout.linear())?;
    let (train_inputs, _) = load_scenario_inputs(layout, "train")?;
    for i in 0..config.cohort.n_patients {
        let id = patient_id(i);
        let trace_path = layout.trace_csv(&id, "train");
        if !trace_path.exists() {
            return Err(Error::InvalidConfig(format!(
                "missing trace artifact {} (run the simulate stage first)",
                trace_path.display()
            )));
        }
        let (trace, _) = read_trace_csv(&trace_path)?;
        let recording = Recording {
            inputs: train_inputs.clone(),
            glucose: trace.measured_glucose,
        };
        let params = fit_rls(&[recording], 1.0, config.rls.ridge)?;
        write_params_json(&layout.linear_params(&id), &params)?;
    }
    Ok(())
}

fn stage_train(config: &ExperimentConfig, layout: &Layout, hash: &str) -> Result<()> {
    fs::create_dir_all(&layout.ckpts)?;
    let (train_inputs, _) = load_scenario_inputs(layout, "train")?;
    let (val_inputs, _) = load_scenario_inputs(layout, "validation")?;
    for i in 0..config.cohort.n_patients {
        let id = patient_id(i);
        let params_path = layout.linear_params(&id);
        if !params_path.exists() {
            return Err(Error::InvalidConfig(format!(
                "missing linear fit {} (run the fit-linear stage first)",
                params_path.display()
            )));
        }
        let linear = read_params_json(&params_path)?;
        let (train_trace, _) = read_trace_csv(&layout.trace_csv(&id, "train"))?;
        let (val_trace, _) = read_trace_csv(&layout.trace_csv(&id, "validation"))?;

        let train_eps = [build_episode(train_inputs.clone(), train_trace.measured_glucose, &linear)?];
        let val_eps = [build_episode(val_inputs.clone(), val_trace.measured_glucose, &linear)?];

        let outcome = train(&config.train, &train_eps, &val_eps, &linear)?;
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            n_hu: config.train.n_hu,
            seed: config.train.seed,
            init: birnn_core::gru::INIT_SCHEME.into(),
            train_config: config.train.clone(),
            model_params: linear,
            standardizer: outcome.standardizer.clone(),
            weights: outcome.best,
            best_iter: outcome.best_iter,
            best_val_mse: outcome.best_val_mse,
            config_hash: Some(hash.to_string()),
        };
        write_checkpoint(&layout.checkpoint(&id), &ckpt)?;
        let prov = Provenance {
            config_hash: Some(hash.to_string()),
            seed: Some(config.train.seed),
        };
        write_history_csv(&layout.history(&id), &outcome.history, &prov)?;
    }
    Ok(())
}

fn stage_evaluate(config: &ExperimentConfig, layout: &Layout, hash: &str, force: bool) -> Result<()> {
    let ids: Vec<String> = (0..config.cohort.n_patients).map(patient_id).collect();
    evaluate_artifacts(
        layout,
        &ids,
        Some(hash.to_string()),
        force,
    )
}

/// Shared by the pipeline stage and the standalone `evaluate` subcommand.
/// When `expected_hash` is `None` the consistency of the artifacts' own
/// stamps is still enforced unless `force` is set.
pub fn evaluate_artifacts(
    layout: &Layout,
    ids: &[String],
    expected_hash: Option<String>,
    force: bool,
) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::DegenerateData("no patients to evaluate".into()));
    }
    let (test_inputs, test_prov) = load_scenario_inputs(layout, "test")?;

    let mut seen_hash: Option<String> = expected_hash.clone();
    let mut check = |hash: Option<&String>, what: &str| -> Result<()> {
        if force {
            return Ok(());
        }
        if let Some(h) = hash {
            match &seen_hash {
                Some(prev) if prev != h => Err(Error::InvalidConfig(format!(
                    "config hash mismatch in {what}: {h} vs {prev} (use --force to override)"
                ))),
                Some(_) => Ok(()),
                None => {
                    seen_hash = Some(h.clone());
                    Ok(())
                }
            }
        } else {
            Ok(())
        }
    };
    check(test_prov.config_hash.as_ref(), "test scenario")?;

    let mut models = Vec::with_capacity(ids.len());
    let mut data = Vec::with_capacity(ids.len());
    for id in ids {
        let ckpt_path = layout.checkpoint(id);
        if !ckpt_path.exists() {
            return Err(Error::InvalidConfig(format!(
                "missing checkpoint {} (run the train stage first)",
                ckpt_path.display()
            )));
        }
        let ckpt = read_checkpoint(&ckpt_path)?;
        check(ckpt.config_hash.as_ref(), "checkpoint")?;
        let linear = read_params_json(&layout.linear_params(id))?;
        let (trace, trace_prov) = read_trace_csv(&layout.trace_csv(id, "test"))?;
        check(trace_prov.config_hash.as_ref(), "test trace")?;
        let patient_text = fs::read_to_string(layout.patient_json(id))?;
        let patient: VirtualPatientConfig = serde_json::from_str(&patient_text)?;

        models.push(PatientModel {
            id: id.clone(),
            gru: ckpt.weights,
            standardizer: ckpt.standardizer,
            linear_params: linear,
        });
        data.push(PatientTestData {
            inputs: test_inputs.clone(),
            trace,
            true_params: patient.base_params,
        });
    }

    let (report, traces) = evaluate_cohort(&models, &data, seen_hash.clone())?;
    fs::create_dir_all(layout.report.join("traces"))?;
    write_report_json(&layout.report_json(), &report)?;
    for (id, trace) in ids.iter().zip(&traces) {
        let prov = Provenance {
            config_hash: seen_hash.clone(),
            seed: None,
        };
        write_eval_traces_csv(&layout.eval_trace_csv(id), trace, &prov)?;
    }
    Ok(())
}
