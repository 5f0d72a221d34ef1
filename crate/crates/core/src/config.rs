use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset_dir, MissingnessSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{comparison_methods, Instrument, Method};
use crate::training::TrainConfig;

/// Environment variable overriding the training seed.
pub const SEED_ENV: &str = "MCDBN_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory holding `series.csv` and `events.csv`. When absent the
    /// synthetic generator supplies the data.
    pub data: Option<PathBuf>,
}

/// Everything a run needs, read from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
    pub missingness: MissingnessSpec,
    /// Methods compared by `evaluate` without a model.
    pub methods: Vec<Method>,
    /// Synthetic instrument used by single-dataset commands.
    pub instrument: usize,
    pub paths: Paths,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synthetic: SyntheticSpec::default(),
            missingness: MissingnessSpec::default(),
            methods: comparison_methods(),
            instrument: 0,
            paths: Paths::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synthetic.validate()?;
        self.missingness.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if self.paths.data.is_none() && self.instrument >= self.synthetic.instruments {
            return Err(Error::Config(format!(
                "instrument {} is outside the {} synthetic instruments",
                self.instrument, self.synthetic.instruments
            )));
        }
        Ok(())
    }

    /// The dataset that single-dataset commands work on: the CSV pair under
    /// `paths.data` as found, or synthetic instrument `instrument` with the
    /// configured missingness applied.
    pub fn dataset(&self) -> Result<Instrument> {
        match &self.paths.data {
            Some(dir) => Instrument::new(0, load_dataset_dir(dir)?, None, None, 0, &self.train),
            None => Instrument::synthetic(
                &self.synthetic,
                self.instrument,
                &self.missingness,
                &self.train,
            ),
        }
    }

    /// Compact JSON with object keys in sorted order.
    pub fn canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&value)?)
    }

    /// FNV-1a 64 of the canonical JSON, as 16 lowercase hex digits.
    pub fn hash(&self) -> Result<String> {
        let mut h = FnvHasher::default();
        h.write(self.canonical_json()?.as_bytes());
        Ok(format!("{:016x}", h.finish()))
    }

    /// Applies the seed precedence: flag, then the environment value, then
    /// the configured seed.
    pub fn resolve_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<()> {
        if let Some(seed) = flag {
            self.train.seed = seed;
        } else if let Some(text) = env {
            self.train.seed = text.trim().parse().map_err(|_| {
                Error::Config(format!("{SEED_ENV}=`{text}` is not an unsigned integer"))
            })?;
        }
        Ok(())
    }
}
