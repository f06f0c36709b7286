//! Run settings from a flat TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use late_core::LinkKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
    Both,
}

/// Either `"iv,cf:probit"` or `["iv", "cf:probit"]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum NameList {
    Joined(String),
    List(Vec<String>),
}

impl NameList {
    fn into_vec(self) -> Vec<String> {
        match self {
            NameList::Joined(s) => split_names(&s),
            NameList::List(v) => v.into_iter().map(|s| s.trim().to_string()).collect(),
        }
    }
}

fn split_names(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()
}

/// Contents of a config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub dgp: Option<PathBuf>,
    pub n: Option<usize>,
    pub estimators: Option<NameList>,
    pub link: Option<String>,
    pub poly_order: Option<usize>,
    pub eta: Option<f64>,
    pub xi: Option<f64>,
    pub bootstrap: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl FileConfig {
    /// Parses a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input, &mut cfg.dgp, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Command-line flags; any flag given overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV data with columns y, d, z and optional x1..xm
    #[arg(long, conflicts_with = "dgp")]
    pub input: Option<PathBuf>,
    /// TOML data-generating spec to simulate instead of reading a CSV
    #[arg(long)]
    pub dgp: Option<PathBuf>,
    /// Sample size when simulating
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated estimator names, e.g. iv,cf:probit,telser
    #[arg(long)]
    pub estimators: Option<String>,
    /// Default link for estimators given without one
    #[arg(long)]
    pub link: Option<String>,
    #[arg(long)]
    pub poly_order: Option<usize>,
    /// Half-spread for the defier model
    #[arg(long)]
    pub eta: Option<f64>,
    /// Fixed combination weight in [0, 1]; estimated by bootstrap if absent
    #[arg(long)]
    pub xi: Option<f64>,
    /// Bootstrap replicates for the combination estimator
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; the JSON report goes to stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Csv(PathBuf),
    Dgp(PathBuf),
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    #[serde(skip)]
    pub source: Source,
    pub n: usize,
    pub estimators: Vec<String>,
    pub link: LinkKind,
    pub poly_order: Option<usize>,
    pub eta: Option<f64>,
    pub xi: Option<f64>,
    pub bootstrap: usize,
    pub seed: u64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub format: Format,
}

pub const DEFAULT_N: usize = 1000;
pub const DEFAULT_BOOTSTRAP: usize = 200;

impl Settings {
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let input = flags.input.clone().or(if flags.dgp.is_some() { None } else { file.input });
        let dgp = flags.dgp.clone().or(if flags.input.is_some() { None } else { file.dgp });
        let source = match (input, dgp) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either input or dgp, not both".into())),
            (Some(p), None) => Source::Csv(p),
            (None, Some(p)) => Source::Dgp(p),
            (None, None) => return Err(CliError::Config("no data source: set input or dgp".into())),
        };
        let estimators = match &flags.estimators {
            Some(s) => split_names(s),
            None => file.estimators.map(NameList::into_vec).unwrap_or_else(|| vec!["iv".into(), "cf".into()]),
        };
        if estimators.is_empty() {
            return Err(CliError::Config("estimator list is empty".into()));
        }
        let link_name = flags.link.clone().or(file.link).unwrap_or_else(|| "probit".into());
        let link: LinkKind = link_name.parse().map_err(|e: late_core::Error| CliError::Config(e.to_string()))?;
        if link == LinkKind::Custom {
            return Err(CliError::Config("custom links are not available from the command line".into()));
        }
        let xi = flags.xi.or(file.xi);
        if let Some(x) = xi {
            if !(0.0..=1.0).contains(&x) {
                return Err(CliError::Config(format!("xi = {x} must lie in [0, 1]")));
            }
        }
        let eta = flags.eta.or(file.eta);
        if let Some(e) = eta {
            if !(e > 0.0) {
                return Err(CliError::Config(format!("eta = {e} must be positive")));
            }
        }
        Ok(Settings {
            source,
            n: flags.n.or(file.n).unwrap_or(DEFAULT_N),
            estimators,
            link,
            poly_order: flags.poly_order.or(file.poly_order),
            eta,
            xi,
            bootstrap: flags.bootstrap.or(file.bootstrap).unwrap_or(DEFAULT_BOOTSTRAP),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            out: flags.out.clone().or(file.out),
            format: flags.format.or(file.format).unwrap_or_default(),
        })
    }
}
