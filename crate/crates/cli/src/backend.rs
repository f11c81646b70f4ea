use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::Context;
use form57_core::gateway::{
    GatewayConfig, ModelGateway, OpenAiCompatible, ScriptedBackend, ScriptedTape,
};

/// `live` or `scripted:<tape.json>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Live,
    Scripted(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s == "live" => Ok(BackendSpec::Live),
            Some(("scripted", path)) if !path.is_empty() => Ok(BackendSpec::Scripted(path.into())),
            _ => Err(format!("expected `live` or `scripted:<tape>`, got `{s}`")),
        }
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Live => f.write_str("live"),
            BackendSpec::Scripted(p) => write!(f, "scripted:{}", p.display()),
        }
    }
}

impl BackendSpec {
    pub fn open(&self, gateway: &GatewayConfig) -> anyhow::Result<Arc<dyn ModelGateway>> {
        Ok(match self {
            BackendSpec::Live => Arc::new(OpenAiCompatible::new(gateway.clone())?),
            BackendSpec::Scripted(path) => {
                let tape = ScriptedTape::load(path)
                    .with_context(|| format!("cannot load tape {}", path.display()))?;
                Arc::new(ScriptedBackend::with_id(
                    format!("scripted:{}", path.display()),
                    tape,
                ))
            }
        })
    }
}
