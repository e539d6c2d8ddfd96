//! Flat key-value run configuration (TOML).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use coloc_core::model::{ForestHyperparams, MaxFeatures};
use coloc_core::profiles::FeatureSet;
use coloc_core::simulator::{ClusterConfig, Policy, Stratum};
use coloc_core::Error;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Serializes a value through its `Display` / `FromStr` pair.
mod text {
    use super::*;

    pub fn serialize<T: fmt::Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: fmt::Display,
        D: Deserializer<'de>,
    {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Where simulated queues come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueKind {
    Random,
    Stratified(Stratum),
}

impl fmt::Display for QueueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueueKind::Random => f.write_str("random"),
            QueueKind::Stratified(s) => s.fmt(f),
        }
    }
}

impl FromStr for QueueKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s.trim().eq_ignore_ascii_case("random") {
            Ok(QueueKind::Random)
        } else {
            s.parse().map(QueueKind::Stratified).map_err(|_| {
                Error::InvalidParameter(format!("unknown queue kind `{s}` (expected random, low, medium or high)"))
            })
        }
    }
}

/// Scheduling decisions come from the trained model or from the oracle itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Model,
    Oracle,
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorKind::Model => "model",
            PredictorKind::Oracle => "oracle",
        })
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "model" => Ok(PredictorKind::Model),
            "oracle" => Ok(PredictorKind::Oracle),
            other => Err(Error::InvalidParameter(format!(
                "unknown predictor `{other}` (expected model or oracle)"
            ))),
        }
    }
}

/// Comma-separated policy list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyList(pub Vec<Policy>);

impl fmt::Display for PolicyList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(Policy::as_str).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for PolicyList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Policy::parse_list(s).map(PolicyList)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(with = "text")]
    pub feature_set: FeatureSet,

    pub n_estimators: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub holdout: f64,
    pub folds: usize,
    pub budget: usize,

    pub apps: usize,
    pub n_servers: usize,
    pub jobs_per_server_scale: usize,
    pub queues: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queue_size: Option<usize>,
    #[serde(with = "text")]
    pub queue_kind: QueueKind,
    #[serde(with = "text")]
    pub policies: PolicyList,
    #[serde(with = "text")]
    pub predictor: PredictorKind,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub profiles: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub colocations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queue: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = ForestHyperparams::default();
        let cluster = ClusterConfig::default();
        RunConfig {
            seed: 0,
            feature_set: FeatureSet::default(),
            n_estimators: hp.n_estimators,
            max_features: hp.max_features,
            min_samples_split: hp.min_samples_split,
            bootstrap: hp.bootstrap,
            holdout: 0.3,
            folds: 5,
            budget: 30,
            apps: 32,
            n_servers: cluster.n_servers,
            jobs_per_server_scale: cluster.jobs_per_server_scale,
            queues: 20,
            queue_size: None,
            queue_kind: QueueKind::Random,
            policies: PolicyList(Policy::ALL.to_vec()),
            predictor: PredictorKind::Model,
            profiles: None,
            colocations: None,
            oracle: None,
            dataset: None,
            model: None,
            queue: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::InvalidParameter(m) => Error::InvalidParameter(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hyperparams(&self) -> ForestHyperparams {
        ForestHyperparams {
            n_estimators: self.n_estimators,
            max_features: self.max_features,
            min_samples_split: self.min_samples_split,
            bootstrap: self.bootstrap,
            seed: self.seed,
        }
    }

    pub fn cluster(&self) -> ClusterConfig {
        ClusterConfig {
            n_servers: self.n_servers,
            jobs_per_server_scale: self.jobs_per_server_scale,
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue_size.unwrap_or_else(|| self.cluster().queue_len())
    }

    /// Existing input path from the config, or an error naming the missing key.
    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Error> {
        let path = value.as_deref().ok_or_else(|| {
            Error::InvalidParameter(format!("missing `--{}` (or `{key}` in the config file)", key.replace('_', "-")))
        })?;
        if !path.is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{key} file `{}` not found", path.display()),
            )));
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_losslessly() {
        let cfg = RunConfig {
            seed: 9,
            max_features: MaxFeatures::Fraction(0.25),
            queue_kind: QueueKind::Stratified(Stratum::High),
            policies: PolicyList(vec![Policy::Fifo, Policy::Greedy]),
            queue_size: Some(12),
            model: Some(PathBuf::from("runs/model.json")),
            holdout: 0.1 + 0.2,
            ..Default::default()
        };
        let back = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::parse("seed = 3\nfeature_set = \"all+full\"\nqueue_kind = \"low\"\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.feature_set.pair_len(), 288);
        assert_eq!(cfg.n_estimators, 22);
        assert!(RunConfig::parse("sede = 3").is_err());
        assert!(RunConfig::parse("policies = \"fifo,nope\"").is_err());
    }
}
