//! Deployment configuration: one TOML file describing the registry and
//! every facility it serves.
//!
//! ```toml
//! [registry]
//! listen = "127.0.0.1:7070"
//! token = "console-secret"
//! data_dir = "data/registry"
//!
//! [[facilities]]
//! id = "F1"
//! mode = "u2u"
//! facility_type = "restaurant"
//! listen = "127.0.0.1:7071"
//! token = "f1-secret"
//! pool = 200
//!
//! [[facilities]]
//! id = "F2"
//! mode = "location"
//! listen = "127.0.0.1:7072"
//! layout = "layouts/f2.json"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use fctrace_core::positioning::{FacilityLayout, PathLossModel};
use fctrace_core::trace::FacilityType;
use fctrace_core::{FacilityConfig, FacilityId, FacilityMode, RetentionPolicy};
use serde::{Deserialize, Serialize};

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "FT_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("no config file: pass --config or set {CONFIG_ENV}")]
    Missing,
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

fn default_registry_listen() -> String {
    "127.0.0.1:7070".into()
}

fn default_pool() -> usize {
    64
}

fn default_horizon() -> u64 {
    RetentionPolicy::TWO_WEEKS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrySection {
    #[serde(default = "default_registry_listen")]
    pub listen: String,
    /// Address clients use; `http://{listen}` when absent.
    #[serde(default)]
    pub url: Option<String>,
    /// Bearer token required from clients.
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Seeds pseudonym generation for reproducible runs.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_horizon")]
    pub retention_horizon: u64,
}

impl Default for RegistrySection {
    fn default() -> Self {
        RegistrySection {
            listen: default_registry_listen(),
            url: None,
            token: None,
            data_dir: None,
            seed: None,
            retention_horizon: default_horizon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacilitySection {
    pub id: FacilityId,
    pub mode: FacilityMode,
    #[serde(default)]
    pub facility_type: FacilityType,
    pub listen: String,
    #[serde(default)]
    pub url: Option<String>,
    /// Bearer token the registry presents to this facility.
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default = "default_pool")]
    pub pool: usize,
    /// Layout JSON file, relative to the config file.
    #[serde(default)]
    pub layout: Option<PathBuf>,
    #[serde(default)]
    pub model: PathLossModel,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_horizon")]
    pub retention_horizon: u64,
}

impl FacilitySection {
    pub fn url(&self) -> String {
        self.url.clone().unwrap_or_else(|| format!("http://{}", self.listen))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub registry: RegistrySection,
    #[serde(default)]
    pub facilities: Vec<FacilitySection>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

impl Config {
    /// `explicit`, else the file named by [`CONFIG_ENV`].
    pub fn locate(explicit: Option<&Path>) -> Result<PathBuf, ConfigError> {
        match explicit {
            Some(p) => Ok(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).map(PathBuf::from).ok_or(ConfigError::Missing),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        RetentionPolicy::new(self.registry.retention_horizon).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (i, f) in self.facilities.iter().enumerate() {
            if self.facilities[..i].iter().any(|o| o.id == f.id) {
                return Err(ConfigError::Invalid(format!("facility {} configured twice", f.id)));
            }
            if f.mode != FacilityMode::U2u && f.layout.is_none() {
                return Err(ConfigError::Invalid(format!("facility {} needs a layout for {:?} mode", f.id, f.mode)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn registry_url(&self) -> String {
        self.registry.url.clone().unwrap_or_else(|| format!("http://{}", self.registry.listen))
    }

    pub fn facility(&self, id: &FacilityId) -> Result<&FacilitySection, ConfigError> {
        self.facilities
            .iter()
            .find(|f| &f.id == id)
            .ok_or_else(|| ConfigError::Invalid(format!("facility {id} is not in the config")))
    }

    pub fn retention(&self) -> RetentionPolicy {
        RetentionPolicy::new(self.registry.retention_horizon).expect("validated")
    }

    /// The core facility configuration, reading the layout file if any.
    pub fn facility_config(&self, f: &FacilitySection) -> Result<FacilityConfig, ConfigError> {
        let mut c = FacilityConfig::new(f.id.clone(), f.mode).with_type(f.facility_type).with_pool(f.pool);
        c.model = f.model;
        c.retention = RetentionPolicy::new(f.retention_horizon).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(p) = &f.layout {
            let path = self.resolve(p);
            let text = fs::read_to_string(&path).map_err(|source| ConfigError::Read { path: path.clone(), source })?;
            let layout: FacilityLayout =
                serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            c = c.with_layout(layout);
        }
        c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(c)
    }
}
