//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys are rejected.
//! Every key has a default, so an empty file is a valid configuration.

use std::fs;
use std::path::{Path, PathBuf};

use hgtul::data::{InputFormat, SplitPolicy, SplitRatios};
use hgtul::error::ConfigError;
use hgtul::synth::SynthConfig;
use hgtul::{Ablation, PrepConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub prep: PrepConfig,
    pub synth: SynthConfig,
    pub input: Option<PathBuf>,
    pub input_format: InputFormat,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Raw variant string; parsed by the command that uses it.
    pub variant: String,
    pub repeat: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            prep: PrepConfig::default(),
            synth: SynthConfig::default(),
            input: None,
            input_format: InputFormat::CanonicalTsv,
            data_dir: None,
            checkpoint: None,
            variant: "full".into(),
            repeat: 1,
        }
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::Parse {
        line,
        msg: format!("{key}: cannot parse {v:?}"),
    })
}

fn ratios(line: usize, v: &str) -> Result<SplitRatios, ConfigError> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    let [t, va, te] = parts.as_slice() else {
        return Err(ConfigError::Parse {
            line,
            msg: format!("split_ratios: expected train:valid:test, got {v:?}"),
        });
    };
    Ok(SplitRatios {
        train: num(line, "split_ratios", t)?,
        valid: num(line, "split_ratios", va)?,
        test: num(line, "split_ratios", te)?,
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
                line,
                msg: "expected key = value".into(),
            })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, hgtul::Error> {
        let text =
            fs::read_to_string(path).map_err(|e| hgtul::error::ArtifactError::io(path, e))?;
        Ok(Self::parse(&text)?)
    }

    /// Applies one setting. `line` is only used in error messages.
    pub fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "dim" => t.dim = num(line, key, v)?,
            "layers" => t.layers = num(line, key, v)?,
            "epochs" => t.epochs = num(line, key, v)?,
            "batch_size" => t.batch_size = num(line, key, v)?,
            "dropout" => t.dropout = num(line, key, v)?,
            "weight_decay" => t.weight_decay = num(line, key, v)?,
            "lr_init" => t.lr_init = num(line, key, v)?,
            "lr_min" => t.lr_min = num(line, key, v)?,
            "lr_factor" => t.lr_factor = num(line, key, v)?,
            "plateau_patience" => t.plateau_patience = num(line, key, v)?,
            "early_stop_patience" => t.early_stop_patience = num(line, key, v)?,
            "theta_t" => {
                t.theta_t = num(line, key, v)?;
                self.prep.theta_t = t.theta_t;
            }
            "seed" => t.seed = num(line, key, v)?,
            "min_user_checkins" => self.prep.filter.min_user_checkins = num(line, key, v)?,
            "min_poi_visits" => self.prep.filter.min_poi_visits = num(line, key, v)?,
            "split_ratios" => self.prep.ratios = ratios(line, v)?,
            "split_policy" => {
                self.prep.policy = v
                    .parse::<SplitPolicy>()
                    .map_err(|msg| ConfigError::Parse { line, msg })?
            }
            "split_seed" => self.prep.split_seed = num(line, key, v)?,
            "utc_offset_secs" => self.prep.utc_offset_secs = num(line, key, v)?,
            "input" => self.input = Some(PathBuf::from(v)),
            "input_format" => {
                self.input_format = v
                    .parse::<InputFormat>()
                    .map_err(|msg| ConfigError::Parse { line, msg })?
            }
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "variant" => self.variant = v.to_string(),
            "repeat" => self.repeat = num(line, key, v)?,
            "synth_users" => s.n_users = num(line, key, v)?,
            "synth_pois" => s.n_pois = num(line, key, v)?,
            "synth_weeks" => s.weeks = num(line, key, v)?,
            "synth_checkins_min" => s.checkins_per_week.0 = num(line, key, v)?,
            "synth_checkins_max" => s.checkins_per_week.1 = num(line, key, v)?,
            "synth_concentration" => s.preference_concentration = num(line, key, v)?,
            "synth_imbalance" => s.imbalance_exponent = num(line, key, v)?,
            "synth_seed" => s.seed = num(line, key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, msg: String| ConfigError::Invalid {
            key: key.to_string(),
            msg,
        };
        self.train
            .validate()
            .map_err(|e| invalid("training", e.to_string()))?;
        if self.repeat == 0 {
            return Err(invalid("repeat", "must be at least 1".into()));
        }
        let r = self.prep.ratios;
        if r.train == 0 || r.train + r.valid + r.test == 0 {
            return Err(invalid(
                "split_ratios",
                "train share must be positive".into(),
            ));
        }
        if self.prep.filter.min_user_checkins == 0 || self.prep.filter.min_poi_visits == 0 {
            return Err(invalid(
                "min_user_checkins/min_poi_visits",
                "must be at least 1".into(),
            ));
        }
        self.synth.validate().map_err(|m| invalid("synth", m))?;
        Ok(())
    }

    /// The configured variant as a single (possibly combined) ablation.
    pub fn ablation(&self) -> Result<Ablation, hgtul::Error> {
        Ok(self.variant.parse::<Ablation>()?)
    }
}
