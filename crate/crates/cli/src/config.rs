//! Optional TOML defaults. Each table mirrors one subcommand's flags; a flag
//! given on the command line always wins.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Run on one thread.
    pub sequential: Option<bool>,
    pub cfg: CfgSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub embed: EmbedSection,
    pub index: IndexSection,
    pub siblings: SiblingSection,
    pub contradictions: ContradictionSection,
    pub analyze: AnalyzeSection,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfgSection {
    pub strip_metadata: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub write_index: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub model: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub size: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiblingSection {
    pub max_distance: Option<f64>,
    pub step: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContradictionSection {
    pub eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub models: Option<PathBuf>,
    pub indices: Option<PathBuf>,
    pub rpc: Option<String>,
    pub timeout_secs: Option<f64>,
    pub vuln: Option<Vec<String>>,
    pub no_siblings: Option<bool>,
    pub max_distance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub models: Option<PathBuf>,
    pub indices: Option<PathBuf>,
    pub mode: Option<String>,
    pub vuln: Option<Vec<String>>,
    pub test_split: Option<bool>,
    pub json: Option<bool>,
    pub max_distance: Option<f64>,
}

pub fn load(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
