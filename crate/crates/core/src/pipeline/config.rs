use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::budget::{subset_size, BudgetMode, Proportions};
use crate::cluster::DbscanConfig;
use crate::filter::FilterConfig;
use crate::{Error, Metric, Result};

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($(#[$vmeta:meta])* $variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($(#[$vmeta])* $variant),+
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(
    /// How a schedule is judged against the segment deadline.
    ConstraintMode {
        /// Every stage must finish within its own slot.
        #[default]
        Strict => "strict",
        /// Stages may overrun their slot as long as each training run ends
        /// within `max_in_flight` segments of its collection start.
        Relaxed => "relaxed",
    }
);

keyword_enum!(
    /// Source of the SDS stage duration.
    Measure {
        #[default]
        Model => "model",
        /// Wall-clock time of the selection on this host.
        Real => "real",
    }
);

keyword_enum!(
    Execution {
        #[default]
        Sequential => "sequential",
        Concurrent => "concurrent",
    }
);

/// Every knob of a single pipeline run. Serialized as a flat TOML table;
/// filter and clustering keys sit at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub tau_minutes: u32,
    /// Instances per identity; the subset size is `K * num_identities`.
    #[serde(rename = "K")]
    pub instances_per_identity: u64,
    #[serde(rename = "E")]
    pub epochs: u64,
    #[serde(rename = "I")]
    pub iterations: u64,
    pub memory: bool,
    pub retention_minutes: u32,
    pub num_identities: u64,
    pub metric: Metric,
    pub budget_mode: Proportions,
    pub redistribute: bool,
    pub seed: u64,
    pub constraint: ConstraintMode,
    pub max_in_flight: u32,
    pub measure: Measure,
    pub execution: Execution,
    pub global_reid: bool,
    pub reid_threshold: f64,
    pub reid_momentum: f64,
    #[serde(flatten)]
    pub filter: FilterConfig,
    #[serde(flatten)]
    pub dbscan: DbscanConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau_minutes: 20,
            instances_per_identity: 20,
            epochs: 2,
            iterations: 500,
            memory: false,
            retention_minutes: 60,
            num_identities: 10,
            metric: Metric::Euclidean,
            budget_mode: Proportions::Oracle,
            redistribute: false,
            seed: 0,
            constraint: ConstraintMode::Strict,
            max_in_flight: 3,
            measure: Measure::Model,
            execution: Execution::Sequential,
            global_reid: true,
            reid_threshold: 0.5,
            reid_momentum: 0.9,
            filter: FilterConfig::default(),
            dbscan: DbscanConfig::default(),
        }
    }
}

/// Keys accepted in a config table.
pub fn config_keys() -> Vec<String> {
    let table =
        toml::Table::try_from(PipelineConfig::default()).expect("config serializes to a table");
    table.keys().cloned().collect()
}

fn reject_unknown(table: &toml::Table, known: &[String]) -> Result<()> {
    match table.keys().find(|k| !known.contains(k)) {
        Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
        None => Ok(()),
    }
}

impl PipelineConfig {
    pub fn budget_mode(&self) -> BudgetMode {
        if self.memory {
            BudgetMode::Memory
        } else {
            BudgetMode::Standard
        }
    }

    /// Total subset size `k`.
    pub fn k(&self) -> u64 {
        subset_size(self.instances_per_identity, self.num_identities)
    }

    pub fn tau_seconds(&self) -> f64 {
        self.tau_minutes as f64 * 60.0
    }

    /// Minutes of history the selection stage may look at.
    pub fn effective_retention(&self) -> u32 {
        if self.memory {
            self.retention_minutes
        } else {
            self.tau_minutes
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_minutes", self.tau_minutes as u64),
            ("K", self.instances_per_identity),
            ("E", self.epochs),
            ("I", self.iterations),
            ("num_identities", self.num_identities),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.memory && self.retention_minutes < self.tau_minutes {
            return Err(Error::Config(
                "retention_minutes must cover at least one segment".into(),
            ));
        }
        if self.max_in_flight < 3 {
            return Err(Error::Config(
                "max_in_flight must be at least 3 (collect, sds, train)".into(),
            ));
        }
        if !(self.reid_threshold >= 0.0) {
            return Err(Error::Config("reid_threshold must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.reid_momentum) {
            return Err(Error::Config("reid_momentum must lie in [0, 1)".into()));
        }
        self.filter.validate()?;
        self.dbscan.validate()
    }

    /// Builds a config from a flat table, rejecting unknown keys.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        reject_unknown(&table, &config_keys())?;
        let cfg: Self = table.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(toml::from_str(text)?)
    }

    /// Reads `path` (if any) and applies `overrides` on top, key by key.
    pub fn load(path: Option<&Path>, overrides: toml::Table) -> Result<Self> {
        let mut table = match path {
            Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
            None => toml::Table::new(),
        };
        table.extend(overrides);
        Self::from_table(table)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses a command-line `key=value` pair into a TOML value, guessing the
/// type the way a config file would (`true`, numbers, otherwise a string).
pub fn parse_override(pair: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = pair
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}
