//! Run configuration: named presets overlaid with a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterConfig};
use crate::analysis::BenchConfig;
use crate::backbone::llm::LlmConfig;
use crate::backbone::tfm::TfmConfig;
use crate::downstream::{BenchmarkConfig, ProbeConfig, DEFAULT_MISSING_THRESHOLD};
use crate::error::{Result, T2lError};
use crate::pipeline::backbone_dims;
use crate::synthgen::SynthConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub n_lags: usize,
    /// Held-out samples used by the correlation study.
    pub samples: usize,
    pub bench: BenchConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            n_lags: 10,
            samples: 500,
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub missing_threshold: f64,
    pub benchmark: BenchmarkConfig,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig {
            missing_threshold: DEFAULT_MISSING_THRESHOLD,
            benchmark: BenchmarkConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Batch size used when extracting embeddings.
    pub embed_batch: usize,
    pub synthgen: SynthConfig,
    pub tfm: TfmConfig,
    pub llm: LlmConfig,
    pub adapter: AdapterConfig,
    pub trainer: TrainConfig,
    pub probe: ProbeConfig,
    pub downstream: DownstreamConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    PaperShape,
}

impl Preset {
    pub const NAMES: [&'static str; 2] = ["desk", "paper-shape"];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Preset::Desk),
            "paper-shape" => Ok(Preset::PaperShape),
            other => Err(T2lError::UnknownStrategy {
                kind: "preset",
                name: other.to_string(),
                available: Self::NAMES.join(", "),
            }),
        }
    }

    pub fn config(self) -> RunConfig {
        match self {
            Preset::Desk => RunConfig::desk(),
            Preset::PaperShape => RunConfig::paper_shape(),
        }
    }
}

impl RunConfig {
    /// Reduced widths that train on a laptop CPU.
    pub fn desk() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            embed_batch: 16,
            synthgen: SynthConfig::default(),
            tfm: TfmConfig::desk(),
            llm: LlmConfig::desk(),
            adapter: AdapterConfig::default(),
            trainer: TrainConfig::desk(),
            probe: ProbeConfig::default(),
            downstream: DownstreamConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    /// Full tensor shapes of the reference architecture.
    pub fn paper_shape() -> Self {
        RunConfig {
            tfm: TfmConfig::paper_shape(),
            llm: LlmConfig::paper_shape(),
            trainer: TrainConfig::default(),
            ..Self::desk()
        }
    }

    /// Overlay `path` on `preset`. Tables merge key by key; everything else
    /// replaces the preset value.
    pub fn load(preset: Preset, path: Option<&Path>) -> Result<Self> {
        let mut config = preset.config();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| T2lError::io(path, e))?;
            config = config.overlay(&text).map_err(|message| T2lError::Config {
                path: path.display().to_string(),
                message,
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Merge a TOML document into this config. The document is checked
    /// against the schema on its own first so errors carry its line numbers.
    pub fn overlay(&self, text: &str) -> std::result::Result<Self, String> {
        toml::from_str::<RunConfig>(text).map_err(|e| e.to_string())?;
        let user: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut base = toml::Table::try_from(self).map_err(|e| e.to_string())?;
        merge(&mut base, user);
        toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    /// Replace every data, training and evaluation seed. Backbone and
    /// adapter initialization seeds are left alone.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synthgen.seed = seed;
        self.trainer.seed = seed;
        self.downstream.benchmark.seed = seed;
        self.analysis.bench.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let section = |name: &str, r: Result<()>| {
            r.map_err(|e| T2lError::invalid(format!("[{name}] {e}")))
        };
        section("synthgen", self.synthgen.validate())?;
        section("tfm", self.tfm.validate())?;
        section("llm", self.llm.validate())?;
        section("adapter", self.adapter.validate())?;
        section("trainer", self.trainer.validate())?;
        section("probe", self.probe.validate())?;
        section("downstream.benchmark", self.downstream.benchmark.validate())?;
        section("analysis.bench", self.analysis.bench.validate())?;
        if !(self.downstream.missing_threshold > 0.0 && self.downstream.missing_threshold <= 1.0) {
            return Err(T2lError::invalid("[downstream] missing_threshold must lie in (0, 1]"));
        }
        if self.analysis.n_lags == 0 || self.analysis.samples < 3 {
            return Err(T2lError::invalid("[analysis] needs n_lags >= 1 and samples >= 3"));
        }
        if self.embed_batch == 0 {
            return Err(T2lError::invalid("embed_batch must be at least 1"));
        }
        if self.adapter.num_classes != self.synthgen.periods.len() {
            return Err(T2lError::invalid(format!(
                "[adapter] num_classes {} differs from the {} synthgen periods",
                self.adapter.num_classes,
                self.synthgen.periods.len()
            )));
        }
        section("adapter", Adapter::new(&self.adapter, backbone_dims(&self.tfm, &self.llm)).map(|_| ()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
