//! Declarative pipeline configuration: one JSON file drives every
//! subcommand. Credentials are the only values interpolated from the
//! environment (`${ODX_API_KEY}`, or the `ODX_API_KEY` variable as an
//! override for live endpoints).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use odx_core::error::{Error, Result};
use odx_core::eval::{CostModel, FailurePolicy};
use odx_core::predict::{HyperGrid, LlmConfig};
use odx_core::serialize::{CodeDictionary, FieldMask, PromptFormat, Templates};
use odx_core::synth::GeneratorConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub dictionary: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            dictionary: None,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Master seed; all pipeline randomness derives from it.
    pub seed: u64,
    pub window_days: u32,
    pub max_visits: usize,
    pub format: PromptFormat,
    /// Comma-separated component mask: any of `dx`, `proc`, `rx`.
    pub mask: String,
    pub min_support: u32,
    pub generator: GeneratorConfig,
    pub forest_grid: HyperGrid,
    pub boost_grid: HyperGrid,
    pub llm: LlmConfig,
    pub cost_model: CostModel,
    pub failure_policy: FailurePolicy,
    pub parallelism: Option<usize>,
    pub allow_any_window: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            seed: 7,
            window_days: 7,
            max_visits: 30,
            format: PromptFormat::DetailedDescriptive,
            mask: "dx,proc,rx".into(),
            min_support: 50,
            generator: GeneratorConfig::default(),
            forest_grid: HyperGrid::default_forest(),
            boost_grid: HyperGrid::default_boosted(),
            llm: LlmConfig::default(),
            cost_model: CostModel::default(),
            failure_policy: FailurePolicy::ScoreAsNegative,
            parallelism: None,
            allow_any_window: false,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => PipelineConfig::default(),
        };
        config.interpolate_credentials();
        Ok(config)
    }

    /// `ODX_API_KEY` wins when set, filling a `${ODX_API_KEY}`
    /// placeholder if the config uses one; an unresolvable placeholder
    /// clears the credential rather than leaking it to the wire.
    fn interpolate_credentials(&mut self) {
        match std::env::var("ODX_API_KEY").ok() {
            Some(key) => {
                self.llm.api_key = Some(match &self.llm.api_key {
                    Some(value) if value.contains("${ODX_API_KEY}") => {
                        value.replace("${ODX_API_KEY}", &key)
                    }
                    _ => key,
                });
            }
            None => {
                if self
                    .llm
                    .api_key
                    .as_deref()
                    .is_some_and(|v| v.contains("${ODX_API_KEY}"))
                {
                    self.llm.api_key = None;
                }
            }
        }
    }

    /// Finish validation after CLI overrides are applied.
    pub fn finalize(&mut self) -> Result<()> {
        // one master seed drives generation and training
        self.generator.seed = self.seed;
        if !self.allow_any_window && !matches!(self.window_days, 7 | 30) {
            return Err(Error::Config(format!(
                "window {} days is outside {{7, 30}} (pass --allow-any-window to override)",
                self.window_days
            )));
        }
        if self.window_days == 0 {
            return Err(Error::Config("window must be at least 1 day".into()));
        }
        if self.max_visits == 0 {
            return Err(Error::Config("max_visits must be at least 1".into()));
        }
        self.field_mask()?;
        self.generator.validate()?;
        self.llm.validate()?;
        self.cost_model.validate()?;
        if let Some(path) = &self.paths.dictionary {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "dictionary {} does not exist",
                    path.display()
                )));
            }
        }
        if let Some(path) = &self.paths.templates_dir {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "templates directory {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn field_mask(&self) -> Result<FieldMask> {
        FieldMask::parse(&self.mask)
    }

    pub fn dictionary(&self) -> Result<CodeDictionary> {
        match &self.paths.dictionary {
            Some(path) => CodeDictionary::from_json_file(path),
            None => Ok(CodeDictionary::synthetic_default()),
        }
    }

    pub fn templates(&self) -> Result<Templates> {
        match &self.paths.templates_dir {
            Some(dir) => Templates::from_dir(dir),
            None => Ok(Templates::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let mut config = PipelineConfig::default();
        config.finalize().unwrap();
        assert_eq!(config.generator.seed, config.seed);
    }

    #[test]
    fn rejects_odd_windows_unless_allowed() {
        let mut config = PipelineConfig {
            window_days: 14,
            ..PipelineConfig::default()
        };
        assert!(config.finalize().is_err());
        config.allow_any_window = true;
        config.finalize().unwrap();
    }

    #[test]
    fn loads_overrides_from_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(
            &path,
            r#"{ "seed": 42, "window_days": 30, "mask": "dx,rx", "format": "summarized-code" }"#,
        )
        .unwrap();
        let mut config = PipelineConfig::load(Some(&path)).unwrap();
        config.finalize().unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.generator.seed, 42);
        assert_eq!(config.format, PromptFormat::SummarizedCode);
        let mask = config.field_mask().unwrap();
        assert!(mask.diagnoses && !mask.procedures && mask.prescriptions);
    }

    #[test]
    fn env_key_interpolates_into_credentials() {
        // placeholder form
        let mut config = PipelineConfig::default();
        config.llm.api_key = Some("${ODX_API_KEY}".into());
        std::env::set_var("ODX_API_KEY", "sk-test");
        config.interpolate_credentials();
        assert_eq!(config.llm.api_key.as_deref(), Some("sk-test"));
        std::env::remove_var("ODX_API_KEY");
    }
}
