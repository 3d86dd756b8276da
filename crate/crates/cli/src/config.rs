//! The run configuration: defaults, an optional TOML/JSON file, the
//! `PHENO_SEED` environment variable and command-line flags, applied in that
//! order.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use huecontour::learn::HyperParams;
use huecontour::{GeneratorConfig, SchemeName, SubsetMode};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "PHENO_SEED";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Bad configuration or input; the process exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand that wrote this file; informational.
    pub command: String,
    pub seed: u64,
    #[serde(with = "as_text")]
    pub scheme: SchemeName,
    #[serde(with = "as_text")]
    pub subset: SubsetMode,
    pub plots: usize,
    pub timepoints: usize,
    /// Synthetic image (width, height).
    pub image_size: (u32, u32),
    pub generator: GeneratorConfig,
    pub hyperparams: HyperParams,
    /// SMOTE neighbour count; `None` disables oversampling.
    pub smote_k: Option<usize>,
    pub hierarchical: bool,
    /// Modes compared by a subset study; empty means none.
    #[serde(with = "as_text_list")]
    pub subset_study: Vec<SubsetMode>,
    pub manifest: Option<PathBuf>,
    /// Directory holding `histograms.csv` and `exg.csv` from `ingest`.
    pub features: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Colormap CSV (`index,r,g,b`); the built-in batlow table otherwise.
    pub colormap: Option<PathBuf>,
    pub write_grids: bool,
    pub out: PathBuf,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            seed: 42,
            scheme: SchemeName::SevenClass,
            subset: SubsetMode::All8,
            plots: 700,
            timepoints: 8,
            image_size: (60, 200),
            generator: GeneratorConfig::default(),
            hyperparams: HyperParams::default(),
            smote_k: Some(huecontour::learn::smote::DEFAULT_K_NEIGHBORS),
            hierarchical: false,
            subset_study: Vec::new(),
            manifest: None,
            features: None,
            split: None,
            checkpoint: None,
            colormap: None,
            write_grids: true,
            out: PathBuf::from("out"),
            workers: None,
        }
    }
}

impl RunConfig {
    /// Reads a `.toml` or `.json` file; missing fields keep their defaults.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let parsed = match ext.as_str() {
            "toml" => toml::from_str(&text).map_err(|e| e.to_string()),
            "json" => serde_json::from_str(&text).map_err(|e| e.to_string()),
            _ => return Err(config_error(format!("{}: config must be .toml or .json", path.display()))),
        };
        parsed.map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    /// Applies `PHENO_SEED` when set.
    pub fn apply_env(&mut self) -> anyhow::Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| config_error(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.generator.validate().map_err(|e| config_error(e.to_string()))?;
        self.hyperparams.validate().map_err(|e| config_error(e.to_string()))?;
        if self.workers == Some(0) {
            return Err(config_error("workers must be at least 1"));
        }
        if self.smote_k == Some(0) {
            return Err(config_error("smote_k must be at least 1"));
        }
        if self.hierarchical && self.scheme != SchemeName::SevenClass {
            return Err(config_error("the hierarchical model needs the seven-class scheme"));
        }
        Ok(())
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_to(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(RUN_CONFIG_FILE);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Parses a value through `FromStr`, reporting failure as a config error.
pub fn parse_text<T>(s: &str) -> anyhow::Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    s.parse().map_err(|e: T::Err| config_error(e.to_string()))
}

/// `all` or a comma-separated list of subset modes.
pub fn parse_modes(s: &str) -> anyhow::Result<Vec<SubsetMode>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(SubsetMode::ALL.to_vec());
    }
    s.split(',').map(|m| parse_text(m)).collect()
}

mod as_text {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

mod as_text_list {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_string()))
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Vec<T>, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|s| s.parse().map_err(de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig {
            scheme: SchemeName::FourClassSecond,
            subset_study: vec![SubsetMode::All8, SubsetMode::Last3],
            ..RunConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"four-second\""));
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 9\nscheme = \"five\"\n[hyperparams]\nepochs = 3\n").unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scheme, SchemeName::FiveClass);
        assert_eq!(cfg.hyperparams.epochs, 3);
        assert_eq!(cfg.hyperparams.batch_size, HyperParams::default().batch_size);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "sed = 9\n").unwrap();
        let err = RunConfig::from_file(&path).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn mode_lists() {
        assert_eq!(parse_modes("all").unwrap().len(), 7);
        assert_eq!(parse_modes("all8,last3").unwrap(), vec![SubsetMode::All8, SubsetMode::Last3]);
        assert!(parse_modes("all9").is_err());
    }
}
