//! Pipeline configuration, one TOML section per stage. Every field has a
//! default, so an empty file runs the whole pipeline on synthetic data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calendar::{DayType, DayTypeCalendar};
use crate::error::{Error, Result};
use crate::ingest::GridSpec;
use crate::motif::MotifParams;
use crate::saak::{SaakConfig, DEFAULT_REDUCE_DIM, DEFAULT_VARIANCE_THRESHOLD};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSettings {
    /// Event CSV; when absent the `synth` stage provides one.
    pub events: Option<PathBuf>,
    /// Usage events or pre-aggregated `app_category,state,count` rows.
    pub usage: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaakSettings {
    pub variance_threshold: f64,
    pub reduce_dim: usize,
    pub log_scale: bool,
}

impl Default for SaakSettings {
    fn default() -> Self {
        SaakSettings {
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            reduce_dim: DEFAULT_REDUCE_DIM,
            log_scale: false,
        }
    }
}

impl SaakSettings {
    pub fn saak_config(&self) -> SaakConfig {
        SaakConfig {
            variance_threshold: self.variance_threshold,
            log_scale: self.log_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSettings {
    /// Levels written as state series and hierarchy levels.
    pub ks: Vec<usize>,
    /// Level used downstream (motifs, validation, report).
    pub primary_k: usize,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        ClusterSettings {
            ks: vec![3, 7, 11],
            primary_k: 11,
        }
    }
}

impl ClusterSettings {
    /// Sorted, deduplicated levels including the primary one.
    pub fn levels(&self) -> Vec<usize> {
        let mut ks = self.ks.clone();
        ks.push(self.primary_k);
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub ring_groups: Vec<DayType>,
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings {
            ring_groups: DayType::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Artifact root; relative paths resolve against the config file.
    pub output_dir: Option<PathBuf>,
    pub input: InputSettings,
    /// Grid for real inputs; defaults to the synthetic grid.
    pub grid: Option<GridSpec>,
    /// Calendar for real inputs; defaults to the synthetic calendar.
    pub calendar: Option<DayTypeCalendar>,
    pub synth: SynthConfig,
    pub saak: SaakSettings,
    pub cluster: ClusterSettings,
    pub motif: MotifParams,
    pub report: ReportSettings,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file and resolve its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingInput(path.to_path_buf()))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        resolve(&mut cfg.output_dir);
        resolve(&mut cfg.input.events);
        resolve(&mut cfg.input.usage);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.events.is_none() {
            self.synth.validate()?;
        } else if self.grid.is_none() {
            return Err(Error::InvalidConfig("[grid] is required with input.events".into()));
        }
        if let Some(g) = &self.grid {
            g.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        if !(self.saak.variance_threshold >= 0.0 && self.saak.variance_threshold < 1.0) {
            return Err(Error::InvalidConfig("saak.variance_threshold must lie in [0, 1)".into()));
        }
        if self.saak.reduce_dim == 0 {
            return Err(Error::InvalidConfig("saak.reduce_dim must be positive".into()));
        }
        if self.cluster.levels().contains(&0) {
            return Err(Error::InvalidConfig("cluster levels must be positive".into()));
        }
        self.motif.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn output_root(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid.clone().unwrap_or_else(|| self.synth.grid())
    }

    pub fn day_calendar(&self) -> DayTypeCalendar {
        self.calendar.clone().unwrap_or_else(|| self.synth.calendar())
    }
}
