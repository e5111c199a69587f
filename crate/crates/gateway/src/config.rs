//! TOML configuration shared by every subcommand and the server.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tears::pipeline::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// Directory holding every artifact of a run.
    pub workdir: PathBuf,
    pub data: DataConfig,
    pub experiment: ExperimentConfig,
    pub summaries: SummaryConfig,
    pub server: ServerConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            workdir: PathBuf::from("tears-run"),
            data: DataConfig::default(),
            experiment: ExperimentConfig::default(),
            summaries: SummaryConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl GatewayConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// The planted-preference generator.
    #[default]
    Synthetic,
    /// Ratings and item files on disk.
    Files,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    /// `::`-separated `.dat` files without headers.
    #[default]
    Movielens,
    /// Comma-separated files with a header row.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub ratings: Option<PathBuf>,
    pub items: Option<PathBuf>,
    pub format: FileFormat,
    pub min_user_ratings: usize,
    pub min_item_ratings: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            ratings: None,
            items: None,
            format: FileFormat::Movielens,
            min_user_ratings: 5,
            min_item_ratings: 1,
        }
    }
}

impl DataConfig {
    /// Label used in metric tables.
    pub fn source_name(&self) -> String {
        match (self.source, &self.ratings) {
            (DataSource::Files, Some(p)) => p.file_stem().map_or("files".into(), |s| s.to_string_lossy().into_owned()),
            (DataSource::Files, None) => "files".into(),
            (DataSource::Synthetic, _) => "synthetic".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// The network-free template answerer.
    #[default]
    Offline,
    /// An OpenAI-compatible endpoint configured through the environment.
    Openai,
    /// Replays recorded completions byte for byte.
    Canned,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    pub provider: ProviderKind,
    /// Recorded completions for the canned provider.
    pub canned: Option<PathBuf>,
    /// Where to save every request and response issued by this run.
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub addr: String,
    pub default_alpha: f64,
    pub default_k: usize,
    pub max_k: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { addr: "127.0.0.1:8080".into(), default_alpha: 0.5, default_k: 20, max_k: 1000 }
    }
}

/// File layout inside the working directory.
#[derive(Debug, Clone)]
pub struct Workdir(pub PathBuf);

impl Workdir {
    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
    pub fn dataset(&self) -> PathBuf {
        self.path("dataset.json")
    }
    pub fn split(&self) -> PathBuf {
        self.path("split.json")
    }
    pub fn summaries(&self) -> PathBuf {
        self.path("summaries.jsonl")
    }
    pub fn model(&self) -> PathBuf {
        self.path("model.json")
    }
    pub fn genre_model(&self) -> PathBuf {
        self.path("genre_model.json")
    }
    pub fn store(&self) -> PathBuf {
        self.path("summary_store.jsonl")
    }
    pub fn bench(&self) -> PathBuf {
        self.path("bench")
    }
    pub fn manifests(&self) -> PathBuf {
        self.path("manifests")
    }
}
