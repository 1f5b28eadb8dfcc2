//! Experiment configuration: JSON parsing, overrides and validation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vireid_lab::eval::Shot;
use vireid_lab::train::{LossKind, SyntheticSpec, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub shot: Shot,
    /// Gallery draws for single-shot evaluation.
    pub trials: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            shot: Shot::Single,
            trials: 10,
            seed: 0,
        }
    }
}

/// One choice on a grid axis: a single loss or a group of losses (possibly
/// empty, meaning "add nothing").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridOption {
    One(LossKind),
    Many(Vec<LossKind>),
}

impl GridOption {
    fn losses(&self) -> &[LossKind] {
        match self {
            GridOption::One(l) => std::slice::from_ref(l),
            GridOption::Many(ls) => ls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Axes of the loss grid; every cell selects one option per axis. With
    /// no axes the experiment is the single cell `train.losses`.
    #[serde(default)]
    pub grid: Vec<Vec<GridOption>>,
    #[serde(default)]
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Replaces the synthetic, training and evaluation seeds.
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                CliError::Config(inner.to_string())
            } else {
                CliError::Config(format!("{path}: {inner}"))
            }
        })
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.synthetic.seed = seed;
            self.train.seed = seed;
            self.eval.seed = seed;
        }
        if let Some(dir) = &overrides.output_dir {
            self.output_dir = dir.clone();
        }
    }

    /// Loss selection of every grid cell, in row-major order of the axes.
    pub fn cells(&self) -> Vec<Vec<LossKind>> {
        if self.grid.is_empty() {
            return vec![self.train.losses.clone()];
        }
        let mut cells: Vec<Vec<LossKind>> = vec![Vec::new()];
        for axis in &self.grid {
            cells = cells
                .iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |opt| {
                        let mut c = prefix.clone();
                        c.extend_from_slice(opt.losses());
                        c
                    })
                })
                .collect();
        }
        cells
    }

    pub fn cell_config(&self, losses: &[LossKind]) -> TrainConfig {
        TrainConfig {
            losses: losses.to_vec(),
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |e: vireid_lab::Error| match e {
            vireid_lab::Error::InvalidConfig(msg) => CliError::Config(msg),
            other => CliError::Config(other.to_string()),
        };
        self.synthetic.validate().map_err(invalid)?;
        for (i, axis) in self.grid.iter().enumerate() {
            if axis.is_empty() {
                return Err(CliError::Config(format!("grid[{i}] has no options")));
            }
        }
        for cell in self.cells() {
            self.cell_config(&cell).validate().map_err(|e| {
                let names: Vec<&str> = cell.iter().map(|l| l.as_str()).collect();
                match invalid(e) {
                    CliError::Config(msg) if !self.grid.is_empty() => {
                        CliError::Config(format!("grid cell [{}]: {msg}", names.join(", ")))
                    }
                    other => other,
                }
            })?;
        }
        let spec = self.train.spec;
        if self.synthetic.identities < spec.p() {
            return Err(CliError::Config(format!(
                "synthetic.identities ({}) must be at least train.spec.p ({})",
                self.synthetic.identities,
                spec.p()
            )));
        }
        if self.synthetic.samples_per_modality < spec.k() {
            return Err(CliError::Config(format!(
                "synthetic.samples_per_modality ({}) must be at least train.spec.k ({})",
                self.synthetic.samples_per_modality,
                spec.k()
            )));
        }
        if self.eval.shot == Shot::Single && self.eval.trials == 0 {
            return Err(CliError::Config("eval.trials must be at least 1".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(CliError::Config("output_dir must not be empty".into()));
        }
        Ok(())
    }
}
