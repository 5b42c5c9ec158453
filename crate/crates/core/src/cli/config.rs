use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Rescale;
use crate::ensemble::Scheme;
use crate::error::{Error, Result};
use crate::models::Architecture;
use crate::preprocess::PreprocessConfig;
use crate::training::TrainConfig;

/// Everything a command needs, resolved from defaults, a JSON file and
/// command-line flags (in increasing priority).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root: raw images for `preprocess`, preprocessed ones otherwise.
    pub input: Option<PathBuf>,
    /// Validation tree for `train`; the training tree is reused when absent.
    pub val_input: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub mode: Scheme,
    /// Side length of the square images written by `preprocess`.
    pub output_size: usize,
    pub rescale: Rescale,
    pub preprocess: PreprocessConfig,
    pub architecture: Architecture,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            val_input: None,
            manifest: None,
            image: None,
            out: PathBuf::from("out"),
            seed: 0,
            mode: Scheme::Cascade,
            output_size: 200,
            rescale: Rescale::None,
            preprocess: PreprocessConfig::default(),
            architecture: Architecture::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub val_input: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub mode: Option<Scheme>,
    pub max_epochs: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    pub fn resolve(file: Option<&Path>, over: Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(over);
        Ok(cfg)
    }

    pub fn apply(&mut self, over: Overrides) {
        let Overrides {
            seed,
            out,
            input,
            val_input,
            manifest,
            image,
            mode,
            max_epochs,
        } = over;
        if let Some(v) = seed {
            self.seed = v;
        }
        if let Some(v) = out {
            self.out = v;
        }
        if input.is_some() {
            self.input = input;
        }
        if val_input.is_some() {
            self.val_input = val_input;
        }
        if manifest.is_some() {
            self.manifest = manifest;
        }
        if image.is_some() {
            self.image = image;
        }
        if let Some(v) = mode {
            self.mode = v;
        }
        if let Some(v) = max_epochs {
            self.train.max_epochs = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_size == 0 {
            return Err(Error::config("output_size must be positive"));
        }
        self.preprocess.validate()?;
        self.train.validate()
    }

    pub(crate) fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::config(format!("--{flag} is required for this command")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file = r#"{"seed": 3, "out": "a", "train": {"max_epochs": 9}}"#;
        let mut cfg = RunConfig::from_json(file).unwrap();
        assert_eq!(cfg.output_size, 200);
        assert_eq!(cfg.train.patience, 50);
        cfg.apply(Overrides {
            seed: Some(5),
            max_epochs: Some(2),
            ..Default::default()
        });
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.out, PathBuf::from("a"));
        assert_eq!(cfg.train.max_epochs, 2);
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"sed": 1}"#), Err(Error::Format(_))));
        let arch = r#"{"architecture": {"family": "small_inception", "input_hw": [32, 32], "width_divisor": 8}}"#;
        let cfg = RunConfig::from_json(arch).unwrap();
        assert_eq!(cfg.architecture.input_hw(), (32, 32));
    }
}
