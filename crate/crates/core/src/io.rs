//! Artifact formats shared between the library and the CLI.
//!
//! CSV files may start with `# key=value` provenance comment lines (config
//! hash and seeds); readers here skip them. Floats are written with Rust's
//! shortest round-trip formatting, so rereading an artifact reproduces the
//! exact values.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compartmental::{iob, ra, ModelInput, ModelParams, PatientState};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, PatientTraces};
use crate::gru::GruParams;
use crate::patient::GroundTruthTrace;
use crate::scenario::Scenario;
use crate::standardize::Standardizer;
use crate::train::{HistoryRow, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "birnn-checkpoint/v1";

/// Provenance stamp carried at the top of CSV artifacts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

impl Provenance {
    fn comment_line(&self) -> Option<String> {
        let mut parts = vec![];
        if let Some(h) = &self.config_hash {
            parts.push(format!("config_hash={h}"));
        }
        if let Some(s) = self.seed {
            parts.push(format!("seed={s}"));
        }
        if parts.is_empty() {
            None
        } else {
            Some(format!("# {}", parts.join(" ")))
        }
    }

    fn parse(line: &str) -> Provenance {
        let mut p = Provenance::default();
        for token in line.trim_start_matches('#').split_whitespace() {
            if let Some(h) = token.strip_prefix("config_hash=") {
                p.config_hash = Some(h.to_string());
            } else if let Some(s) = token.strip_prefix("seed=") {
                p.seed = s.parse().ok();
            }
        }
        p
    }
}

fn open_skipping_comments(path: &Path) -> Result<(Vec<String>, Provenance)> {
    let file = fs::File::open(path)?;
    let mut prov = Provenance::default();
    let mut lines = vec![];
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.starts_with('#') {
            let parsed = Provenance::parse(&line);
            if parsed.config_hash.is_some() || parsed.seed.is_some() {
                prov = parsed;
            }
            continue;
        }
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    Ok((lines, prov))
}

fn expect_header(lines: &[String], want: &str, path: &Path) -> Result<()> {
    match lines.first() {
        Some(h) if h.trim() == want => Ok(()),
        Some(h) => Err(Error::ShapeMismatch(format!(
            "{}: header `{h}`, expected `{want}`",
            path.display()
        ))),
        None => Err(Error::DegenerateData(format!("{}: empty file", path.display()))),
    }
}

fn parse_f64(field: &str, path: &Path, line_no: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::ShapeMismatch(format!(
            "{}: line {line_no}: `{field}` is not a number",
            path.display()
        ))
    })
}

// ---- ModelParams JSON ----

pub fn write_params_json(path: &Path, params: &ModelParams) -> Result<()> {
    let json = serde_json::to_string_pretty(params)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_params_json(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path)?;
    let params: ModelParams = serde_json::from_str(&text)?;
    params.validate()?;
    Ok(params)
}

// ---- Scenario: CSV inputs + JSON event log ----

pub const SCENARIO_HEADER: &str = "t_min,u,r";

pub fn write_scenario_csv(path: &Path, scenario: &Scenario, prov: &Provenance) -> Result<()> {
    let mut out = fs::File::create(path)?;
    if let Some(c) = prov.comment_line() {
        writeln!(out, "{c}")?;
    }
    writeln!(out, "{SCENARIO_HEADER}")?;
    for (t, inp) in scenario.inputs.iter().enumerate() {
        writeln!(out, "{t},{},{}", inp.u, inp.r)?;
    }
    Ok(())
}

pub fn read_inputs_csv(path: &Path) -> Result<(Vec<ModelInput>, Provenance)> {
    let (lines, prov) = open_skipping_comments(path)?;
    expect_header(&lines, SCENARIO_HEADER, path)?;
    let mut inputs = Vec::with_capacity(lines.len().saturating_sub(1));
    for (i, line) in lines.iter().enumerate().skip(1) {
        let mut fields = line.split(',');
        let mut next = |name: &str| -> Result<&str> {
            fields.next().ok_or_else(|| {
                Error::ShapeMismatch(format!("{}: line {i}: missing {name}", path.display()))
            })
        };
        let _t = next("t_min")?;
        let u = parse_f64(next("u")?, path, i)?;
        let r = parse_f64(next("r")?, path, i)?;
        inputs.push(ModelInput { u, r });
    }
    if inputs.is_empty() {
        return Err(Error::DegenerateData(format!("{}: no input rows", path.display())));
    }
    Ok((inputs, prov))
}

/// Event log (realized meals and boluses with their draws) as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioEvents {
    pub prng: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub meals: Vec<crate::scenario::RealizedMeal>,
    pub boluses: Vec<crate::scenario::RealizedBolus>,
}

pub fn write_scenario_events(path: &Path, scenario: &Scenario, config_hash: Option<String>) -> Result<()> {
    let events = ScenarioEvents {
        prng: scenario.prng.clone(),
        seed: scenario.seed,
        config_hash,
        meals: scenario.meal_log.clone(),
        boluses: scenario.bolus_log.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&events)? + "\n")?;
    Ok(())
}

// ---- Ground truth trace CSV ----

pub const TRACE_HEADER: &str = "t_min,glucose_meas,y1,y2,y3,y4,y5,p2_eff";

pub fn write_trace_csv(path: &Path, trace: &GroundTruthTrace, prov: &Provenance) -> Result<()> {
    let mut out = fs::File::create(path)?;
    if let Some(c) = prov.comment_line() {
        writeln!(out, "{c}")?;
    }
    writeln!(out, "{TRACE_HEADER}")?;
    for (t, st) in trace.states.iter().enumerate() {
        writeln!(
            out,
            "{t},{},{},{},{},{},{},{}",
            trace.measured_glucose[t], st.y[0], st.y[1], st.y[2], st.y[3], st.y[4], trace.p2_eff[t]
        )?;
    }
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<(GroundTruthTrace, Provenance)> {
    let (lines, prov) = open_skipping_comments(path)?;
    expect_header(&lines, TRACE_HEADER, path)?;
    let mut states = vec![];
    let mut measured = vec![];
    let mut p2 = vec![];
    for (i, line) in lines.iter().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::ShapeMismatch(format!(
                "{}: line {i}: {} fields, expected 8",
                path.display(),
                fields.len()
            )));
        }
        measured.push(parse_f64(fields[1], path, i)?);
        let mut y = [0.0; 5];
        for (j, yv) in y.iter_mut().enumerate() {
            *yv = parse_f64(fields[2 + j], path, i)?;
        }
        states.push(PatientState { y });
        p2.push(parse_f64(fields[7], path, i)?);
    }
    if states.is_empty() {
        return Err(Error::DegenerateData(format!("{}: no trace rows", path.display())));
    }
    Ok((
        GroundTruthTrace {
            states,
            measured_glucose: measured,
            p2_eff: p2,
        },
        prov,
    ))
}

// ---- Linear-model trajectory CSV (simulate-model on params) ----

pub const TRAJECTORY_HEADER: &str = "t_min,y1,y2,y3,y4,y5,u,r,iob,ra";

pub fn write_trajectory_csv(
    path: &Path,
    states: &[PatientState],
    inputs: &[ModelInput],
    params: &ModelParams,
    prov: &Provenance,
) -> Result<()> {
    if states.len() != inputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} states vs {} inputs",
            states.len(),
            inputs.len()
        )));
    }
    let mut out = fs::File::create(path)?;
    if let Some(c) = prov.comment_line() {
        writeln!(out, "{c}")?;
    }
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for (t, (st, inp)) in states.iter().zip(inputs).enumerate() {
        writeln!(
            out,
            "{t},{},{},{},{},{},{},{},{},{}",
            st.y[0],
            st.y[1],
            st.y[2],
            st.y[3],
            st.y[4],
            inp.u,
            inp.r,
            iob(st, params),
            ra(st, params)
        )?;
    }
    Ok(())
}

// ---- Checkpoint JSON ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub n_hu: usize,
    pub seed: u64,
    pub init: String,
    pub train_config: TrainConfig,
    pub model_params: ModelParams,
    pub standardizer: Standardizer,
    pub weights: GruParams,
    pub best_iter: usize,
    pub best_val_mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, serde_json::to_string(ckpt)? + "\n")?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::InvalidConfig(format!(
            "{}: format `{}`, expected `{CHECKPOINT_FORMAT}`",
            path.display(),
            ckpt.format
        )));
    }
    ckpt.weights.validate()?;
    Ok(ckpt)
}

// ---- Training history CSV ----

pub const HISTORY_HEADER: &str = "iter,loss,L_D,L_B,L_A,val_mse,clipped";

pub fn write_history_csv(path: &Path, history: &[HistoryRow], prov: &Provenance) -> Result<()> {
    let mut out = fs::File::create(path)?;
    if let Some(c) = prov.comment_line() {
        writeln!(out, "{c}")?;
    }
    writeln!(out, "{HISTORY_HEADER}")?;
    for row in history {
        let val = row.val_mse.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.iter,
            row.loss,
            row.l_d,
            row.l_b,
            row.l_a,
            val,
            u8::from(row.clipped)
        )?;
    }
    Ok(())
}

// ---- Evaluation report and traces ----

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<EvalReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub const EVAL_TRACE_HEADER: &str =
    "t_min,glucose_true,glucose_birnn,glucose_linear,iob_true,iob_birnn,iob_linear,ra_true,ra_birnn,ra_linear";

pub fn write_eval_traces_csv(path: &Path, traces: &PatientTraces, prov: &Provenance) -> Result<()> {
    let mut out = fs::File::create(path)?;
    if let Some(c) = prov.comment_line() {
        writeln!(out, "{c}")?;
    }
    writeln!(out, "{EVAL_TRACE_HEADER}")?;
    for t in 0..traces.glucose_true.len() {
        writeln!(
            out,
            "{t},{},{},{},{},{},{},{},{},{}",
            traces.glucose_true[t],
            traces.glucose_birnn[t],
            traces.glucose_linear[t],
            traces.iob_true[t],
            traces.iob_birnn[t],
            traces.iob_linear[t],
            traces.ra_true[t],
            traces.ra_birnn[t],
            traces.ra_linear[t]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patient::nominal_params;
    use crate::scenario::{generate_scenario, nominal_protocols};

    #[test]
    fn params_json_round_trip_with_documented_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let p = nominal_params();
        write_params_json(&path, &p).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        for key in ["\"p0\"", "\"p1\"", "\"p5\"", "\"G_b\"", "\"U_b\""] {
            assert!(text.contains(key), "missing {key} in {text}");
        }
        let back = read_params_json(&path).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn scenario_csv_round_trip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.csv");
        let (mut cfg, _, _) = nominal_protocols();
        cfg.days = 1;
        let scenario = generate_scenario(&cfg).unwrap();
        let prov = Provenance {
            config_hash: Some("abc123".into()),
            seed: Some(cfg.seed),
        };
        write_scenario_csv(&path, &scenario, &prov).unwrap();
        let (inputs, read_prov) = read_inputs_csv(&path).unwrap();
        assert_eq!(inputs.len(), scenario.inputs.len());
        for (a, b) in inputs.iter().zip(&scenario.inputs) {
            assert_eq!(a.u, b.u);
            assert_eq!(a.r, b.r);
        }
        assert_eq!(read_prov.config_hash.as_deref(), Some("abc123"));
        assert_eq!(read_prov.seed, Some(cfg.seed));
    }

    #[test]
    fn trace_csv_round_trip() {
        use crate::patient::{simulate_patient, VirtualPatientConfig};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let (mut cfg, _, _) = nominal_protocols();
        cfg.days = 1;
        let scenario = generate_scenario(&cfg).unwrap();
        let patient = VirtualPatientConfig {
            base_params: nominal_params(),
            circadian_amplitude_frac: 0.2,
            circadian_phase_min: 180.0,
            nonlinearity_gain: 0.3,
            cgm_noise_std_mgdl: 2.0,
            seed: 5,
        };
        let trace = simulate_patient(&patient, &scenario).unwrap();
        write_trace_csv(&path, &trace, &Provenance::default()).unwrap();
        let (back, _) = read_trace_csv(&path).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn checkpoint_round_trip_and_format_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            n_hu: 4,
            seed: 9,
            init: crate::gru::INIT_SCHEME.into(),
            train_config: TrainConfig::default(),
            model_params: nominal_params(),
            standardizer: Standardizer::identity(),
            weights: crate::gru::init_params(4, 9).unwrap(),
            best_iter: 15,
            best_val_mse: 0.125,
            config_hash: None,
        };
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);

        let mut bad = ckpt;
        bad.format = "other/v9".into();
        write_checkpoint(&path, &bad).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn history_csv_empty_val_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let rows = vec![
            HistoryRow { iter: 1, loss: 1.5, l_d: 1.0, l_b: 0.25, l_a: 0.25, val_mse: None, clipped: true },
            HistoryRow { iter: 2, loss: 1.25, l_d: 0.8, l_b: 0.2, l_a: 0.25, val_mse: Some(0.9), clipped: false },
        ];
        write_history_csv(&path, &rows, &Provenance::default()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], HISTORY_HEADER);
        assert_eq!(lines[1], "1,1.5,1,0.25,0.25,,1");
        assert_eq!(lines[2], "2,1.25,0.8,0.2,0.25,0.9,0");
    }
}
