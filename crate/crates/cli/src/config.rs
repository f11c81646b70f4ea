//! TOML run configuration.
//!
//! ```toml
//! prompts_dir = "prompts/v1"
//!
//! [gateway]
//! endpoint = "https://api.openai.com/v1"
//! model = "o4-mini"
//!
//! [kie]
//! n_samples = 5
//!
//! [qa]
//! max_concurrency = 4
//!
//! [judge]
//! use_model = false
//! ```
//!
//! Every section is optional. `MODEL_ENDPOINT` and `MODEL_API_KEY` override
//! the gateway section.

use std::path::{Path, PathBuf};

use anyhow::Context;
use form57_core::gateway::GatewayConfig;
use form57_core::kie::KiePipelineConfig;
use form57_core::prompts::PromptSet;
use form57_core::qa::QaConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    /// Ask the model whether free-text answers match; otherwise token
    /// overlap decides.
    pub use_model: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Template directory; the built-in set when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    pub gateway: GatewayConfig,
    pub kie: KiePipelineConfig,
    pub qa: QaConfig,
    pub judge: JudgeConfig,
}

impl RunConfig {
    pub fn from_toml_str(raw: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(raw)?;
        cfg.kie.check()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults when `None`) and applies environment overrides.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                let mut cfg = Self::from_toml_str(&raw)
                    .with_context(|| format!("invalid config {}", p.display()))?;
                // Relative template paths are resolved against the config file.
                if let (Some(dir), Some(base)) = (cfg.prompts_dir.as_mut(), p.parent()) {
                    if dir.is_relative() {
                        *dir = base.join(&*dir);
                    }
                }
                cfg
            }
            None => Self::default(),
        };
        cfg.gateway = cfg.gateway.apply_env();
        Ok(cfg)
    }

    pub fn prompts(&self) -> anyhow::Result<PromptSet> {
        match &self.prompts_dir {
            Some(dir) => PromptSet::load_dir(dir)
                .with_context(|| format!("cannot load prompts from {}", dir.display())),
            None => Ok(PromptSet::builtin()),
        }
    }
}
