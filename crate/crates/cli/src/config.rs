//! TOML run configuration and flag overrides.

use std::path::Path;

use clap::Args;
use flowgraph::corpus::FilterOptions;
use flowgraph::encoder::FeatureSource;
use flowgraph::gnn::GnnKind;
use flowgraph::graph::{Structure, WindowPolicy};
use flowgraph::model::{StcConfig, TrainConfig};
use flowgraph::synth::SynthConfig;
use flowgraph::tensor::Precision;
use flowgraph::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_HASH_DIM: usize = 256;

/// Everything a run can be configured with. Every section is optional in
/// the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Seeds the split, training, synthesis and baselines.
    pub seed: u64,
    /// `hash`, `hash:<dim>` or `file:<dir>`.
    pub features: String,
    pub hash_dim: usize,
    pub hash_seed: u64,
    pub filter: FilterOptions,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub stc: StcConfig,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            seed: 0,
            features: "hash".into(),
            hash_dim: DEFAULT_HASH_DIM,
            hash_seed: 0,
            filter: FilterOptions::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            stc: StcConfig::default(),
        }
    }
}

#[derive(Args, Clone, Debug, Default, Serialize)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML configuration file; flags take precedence over its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<std::path::PathBuf>,
    /// Directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: std::path::PathBuf,
    /// Candidate window: 3, 4, 5 or all.
    #[arg(long, global = true)]
    pub window: Option<String>,
    /// semi-complete or linear.
    #[arg(long, global = true)]
    pub structure: Option<String>,
    /// none, gcn or gat.
    #[arg(long, global = true)]
    pub gnn: Option<String>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    /// hash, hash:<dim> or file:<dir>.
    #[arg(long, global = true)]
    pub features: Option<String>,
    /// f32 or f64.
    #[arg(long, global = true)]
    pub precision: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Reads the config file named by `global`, if any, and applies the
    /// flags on top.
    pub fn resolve(global: &GlobalArgs) -> Result<Self> {
        let mut config = match &global.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        config.apply(global)?;
        Ok(config)
    }

    fn apply(&mut self, global: &GlobalArgs) -> Result<()> {
        if let Some(seed) = global.seed {
            self.seed = seed;
        }
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        let model = &mut self.train.model;
        if let Some(w) = &global.window {
            model.window = w.parse::<WindowPolicy>()?;
        }
        if let Some(s) = &global.structure {
            model.structure = s.parse::<Structure>()?;
        }
        if let Some(g) = &global.gnn {
            model.gnn.kind = g.parse::<GnnKind>()?;
            if model.gnn.kind == GnnKind::None && global.layers.is_none() {
                model.gnn.layers = 0;
            }
        }
        if let Some(l) = global.layers {
            model.gnn.layers = l;
        }
        if let Some(p) = &global.precision {
            model.precision = p.parse::<Precision>()?;
        }
        if let Some(f) = &global.features {
            self.features = f.clone();
        }
        self.feature_source()?;
        Ok(())
    }

    pub fn feature_source(&self) -> Result<FeatureSource> {
        FeatureSource::parse(&self.features, self.hash_dim, self.hash_seed)
    }
}
