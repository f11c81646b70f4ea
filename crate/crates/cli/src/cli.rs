use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use form57_core::qa::BatchingMode;

use crate::backend::BackendSpec;

#[derive(Debug, Parser)]
#[command(
    name = "form57",
    version,
    about = "Transcribe Form 57, fill it from news articles, link and score the results"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transcribe a form image into T_final.json and G_final.json.
    Transcribe(TranscribeArgs),
    /// Fill one form per article.
    Extract(ExtractArgs),
    /// Match articles to FRA records.
    Link(LinkArgs),
    /// Score filled forms against linked records and print the summary tables.
    Evaluate(EvaluateArgs),
    /// Serve the review API over a state directory.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model backend: `live` or `scripted:<tape.json>`.
    #[arg(long, default_value = "live")]
    pub backend: BackendSpec,
}

#[derive(Debug, Clone, Args)]
pub struct TranscribeArgs {
    /// Form image (PNG or JPEG).
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Samples per phase; overrides the config.
    #[arg(long)]
    pub samples: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    /// Directory of `{id}.txt` and `{id}.meta.json` files.
    #[arg(long)]
    pub articles: PathBuf,
    /// Form transcription; the bundled Form 57 when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Field grouping; the bundled grouping when absent.
    #[arg(long)]
    pub grouping: Option<PathBuf>,
    #[arg(long, default_value = "group")]
    pub mode: BatchingMode,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct LinkArgs {
    #[arg(long)]
    pub articles: PathBuf,
    /// FRA incident export.
    #[arg(long)]
    pub records: PathBuf,
    /// Filled forms used where article metadata lacks a cue.
    #[arg(long)]
    pub forms: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// `NAME=DIR` or `NAME/KIE_MODEL=DIR`. Repeating a name adds a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineArg {
    pub name: String,
    pub kie_model: Option<String>,
    pub forms: PathBuf,
}

impl FromStr for PipelineArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (label, dir) = s
            .split_once('=')
            .filter(|(l, d)| !l.trim().is_empty() && !d.is_empty())
            .ok_or_else(|| format!("expected NAME=DIR or NAME/KIE_MODEL=DIR, got `{s}`"))?;
        let (name, kie_model) = match label.split_once('/') {
            Some((n, m)) if !n.trim().is_empty() && !m.trim().is_empty() => {
                (n.trim().to_string(), Some(m.trim().to_string()))
            }
            Some(_) => return Err(format!("empty pipeline name or KIE model in `{label}`")),
            None => (label.trim().to_string(), None),
        };
        Ok(Self {
            name,
            kie_model,
            forms: dir.into(),
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long = "pipeline", required = true)]
    pub pipelines: Vec<PipelineArg>,
    /// Linkage report from `link`.
    #[arg(long)]
    pub linkage: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    /// Directory of `{id}.answerable.json` files.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Answer-place to FRA column mapping; the bundled one when absent.
    #[arg(long)]
    pub crosswalk: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub state_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8057")]
    pub bind: SocketAddr,
    #[command(flatten)]
    pub common: Common,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipeline_argument_forms() {
        let p: PipelineArg = "grouped/o4-mini=runs/g1".parse().unwrap();
        assert_eq!(
            (p.name.as_str(), p.kie_model.as_deref()),
            ("grouped", Some("o4-mini"))
        );
        let p: PipelineArg = "single=runs/s1".parse().unwrap();
        assert_eq!(p.kie_model, None);
        assert!("single".parse::<PipelineArg>().is_err());
        assert!("/m=d".parse::<PipelineArg>().is_err());
    }

    #[test]
    fn command_line_parses() {
        let cli = Cli::try_parse_from([
            "form57",
            "extract",
            "--articles",
            "a",
            "--out",
            "o",
            "--mode",
            "all",
            "--backend",
            "scripted:t.json",
        ])
        .unwrap();
        let Command::Extract(args) = cli.command else {
            panic!()
        };
        assert_eq!(args.mode, BatchingMode::All);
        assert_eq!(args.common.backend, BackendSpec::Scripted("t.json".into()));
    }
}
