//! Experiment configuration: one JSON file drives the whole pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use birnn_core::error::{Error, Result};
use birnn_core::patient::VirtualPatientConfig;
use birnn_core::scenario::ScenarioConfig;
use birnn_core::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n_patients: usize,
    /// Uniform +/- fraction applied to each patient's physiology.
    pub spread_frac: f64,
    pub seed: u64,
    pub template: VirtualPatientConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub train: ScenarioConfig,
    pub validation: ScenarioConfig,
    pub test: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlsConfig {
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    pub data_dir: String,
    pub ckpt_dir: String,
    pub report_dir: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "data".into(),
            ckpt_dir: "ckpts".into(),
            report_dir: "report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub cohort: CohortConfig,
    pub protocols: ProtocolConfig,
    pub rls: RlsConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohort.n_patients == 0 {
            return Err(Error::InvalidConfig("cohort must have at least one patient".into()));
        }
        if !(0.0..1.0).contains(&self.cohort.spread_frac) {
            return Err(Error::InvalidConfig(format!(
                "cohort spread must lie in [0, 1), got {}",
                self.cohort.spread_frac
            )));
        }
        self.cohort.template.validate()?;
        self.protocols.train.validate()?;
        self.protocols.validation.validate()?;
        self.protocols.test.validate()?;
        if !(self.rls.ridge >= 0.0) {
            return Err(Error::InvalidConfig("ridge weight must be non-negative".into()));
        }
        self.train.validate()
    }

    /// Hash of the canonical (reserialized) config; stamps every artifact.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

/// Output layout rooted at `--out`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub data: PathBuf,
    pub ckpts: PathBuf,
    pub report: PathBuf,
}

impl Layout {
    pub fn new(root: &Path, paths: &PathsConfig) -> Self {
        Layout {
            data: root.join(&paths.data_dir),
            ckpts: root.join(&paths.ckpt_dir),
            report: root.join(&paths.report_dir),
        }
    }

    pub fn scenarios(&self) -> PathBuf {
        self.data.join("scenarios")
    }

    pub fn patients(&self) -> PathBuf {
        self.data.join("patients")
    }

    pub fn traces(&self) -> PathBuf {
        self.data.join("traces")
    }

    pub fn linear(&self) -> PathBuf {
        self.data.join("linear")
    }

    pub fn scenario_csv(&self, set: &str) -> PathBuf {
        self.scenarios().join(format!("{set}.csv"))
    }

    pub fn scenario_events(&self, set: &str) -> PathBuf {
        self.scenarios().join(format!("{set}.events.json"))
    }

    pub fn patient_json(&self, id: &str) -> PathBuf {
        self.patients().join(format!("{id}.json"))
    }

    pub fn trace_csv(&self, id: &str, set: &str) -> PathBuf {
        self.traces().join(id).join(format!("{set}.csv"))
    }

    pub fn linear_params(&self, id: &str) -> PathBuf {
        self.linear().join(format!("{id}.params.json"))
    }

    pub fn checkpoint(&self, id: &str) -> PathBuf {
        self.ckpts.join(format!("{id}.ckpt.json"))
    }

    pub fn history(&self, id: &str) -> PathBuf {
        self.ckpts.join(format!("{id}.history.csv"))
    }

    pub fn report_json(&self) -> PathBuf {
        self.report.join("report.json")
    }

    pub fn eval_trace_csv(&self, id: &str) -> PathBuf {
        self.report.join("traces").join(format!("{id}.csv"))
    }
}

pub fn patient_id(index: usize) -> String {
    format!("patient_{index:02}")
}
