use std::path::{Path, PathBuf};

use hetgas::gasmodel::{ChargeSampling, GasSpec, WeightSpec};
use hetgas::inverse::StepControl;
use hetgas::minimizer::AnnealSchedule;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::exit::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub gas: GasSpec,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// When present, `gas.charge_law` is replaced by the reconstructed law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<InverseConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n: usize,
    pub seed: u64,
    pub replicas: usize,
    pub schedule: AnnealSchedule,
    pub sampling: ChargeSampling,
    pub trace_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 1000,
            seed: 0,
            replicas: 1,
            schedule: AnnealSchedule::default(),
            sampling: ChargeSampling::Iid,
            trace_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Radial,
    NearestNeighbor,
    Correlation,
    Ordering,
}

/// Coordinate that charges are ranked against by the ordering metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrderingCoordinate {
    Radius,
    AbsAxis { axis: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub observables: Vec<Observable>,
    pub bins: usize,
    /// Reference radii as fractions of the support radius.
    pub r0: Vec<f64>,
    /// Annulus width as a fraction of the support radius.
    pub correlation_width: f64,
    /// Largest blown-up distance of the correlation grid.
    pub correlation_max: f64,
    pub correlation_bins: usize,
    pub nn_bins: usize,
    pub profile_points: usize,
    pub ordering_coordinate: OrderingCoordinate,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            observables: vec![
                Observable::Radial,
                Observable::NearestNeighbor,
                Observable::Correlation,
                Observable::Ordering,
            ],
            bins: 32,
            r0: vec![0.2, 0.5, 0.8],
            correlation_width: 0.1,
            correlation_max: 4.0,
            correlation_bins: 40,
            nn_bins: 50,
            profile_points: 512,
            ordering_coordinate: OrderingCoordinate::Radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetChoice {
    Fig7,
    Parabolic,
    Power { dimension: usize, exponent: f64 },
    Csv { path: PathBuf, dimension: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseConfig {
    pub target: TargetChoice,
    /// Defaults to `gas.weight`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightSpec>,
    #[serde(default)]
    pub control: StepControl,
    /// Simulate `run.replicas` gases with the reconstructed law.
    #[serde(default)]
    pub roundtrip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv],
        }
    }
}

impl ScenarioConfig {
    /// Parses TOML, or JSON when the path ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.gas.validate().map_err(|e| ConfigError(format!("gas: {e}")))?;
        self.run.schedule.validate().map_err(|e| ConfigError(format!("run.schedule: {e}")))?;
        if self.run.n < 2 {
            return Err(ConfigError(format!("run.n must be at least 2, got {}", self.run.n)));
        }
        if self.analysis.bins == 0 || self.analysis.correlation_bins == 0 || self.analysis.nn_bins == 0 {
            return Err(ConfigError("analysis bin counts must be positive".into()));
        }
        if self.analysis.r0.iter().any(|r| !(*r > 0.0)) || !(self.analysis.correlation_width > 0.0) {
            return Err(ConfigError("analysis.r0 and analysis.correlation_width must be positive".into()));
        }
        if let OrderingCoordinate::AbsAxis { axis } = self.analysis.ordering_coordinate {
            if axis >= self.gas.dimension {
                return Err(ConfigError(format!("ordering axis {axis} out of range")));
            }
        }
        Ok(())
    }

    /// Applies `key.path=value` overrides; values parse as JSON, falling back
    /// to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = serde_json::to_value(self).map_err(|e| ConfigError(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override '{item}' is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key, value)?;
        }
        let config: Self = serde_json::from_value(tree).map_err(|e| ConfigError(format!("after overrides: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(ConfigError(format!("empty segment in override key '{key}'")));
        }
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => return Err(ConfigError(format!("override key '{key}' descends into a non-table"))),
        };
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[gas]
dimension = 2
charge_law = { form = "uniform", min = 1.0, max = 2.0 }
weight = { family = "linear" }
"#;

    #[test]
    fn minimal_toml_uses_defaults() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.run.n, 1000);
        assert_eq!(c.analysis.bins, 32);
        assert_eq!(c.gas.weight, WeightSpec::Linear);
    }

    #[test]
    fn unknown_and_missing_keys_are_reported() {
        let err = ScenarioConfig::from_toml(&format!("{MINIMAL}\n[run]\nbogus = 1\n")).unwrap_err();
        assert!(err.0.contains("bogus"), "{err:?}");
        let err = ScenarioConfig::from_toml("[gas]\ncharge_law = { form = \"uniform\", min = 1.0, max = 2.0 }\n").unwrap_err();
        assert!(err.0.contains("dimension"), "{err:?}");
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        let o = c
            .with_overrides(&["run.n=250".into(), "gas.weight.family=inverse".into(), "analysis.r0=[0.3]".into()])
            .unwrap();
        assert_eq!(o.run.n, 250);
        assert_eq!(o.gas.weight, WeightSpec::Inverse);
        assert_eq!(o.analysis.r0, vec![0.3]);
        assert!(c.with_overrides(&["run.n".into()]).is_err());
        assert!(c.with_overrides(&["run.n=1".into()]).is_err());
    }
}
