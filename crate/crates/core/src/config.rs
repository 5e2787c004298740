//! Experiment configuration files.
//!
//! Configs are flat `section.key = value` lines (TOML dotted keys):
//!
//! ```text
//! model.h11 = 2
//! model.h12 = 4
//! model.h21 = 3
//! model.h22 = 6
//! model.skew = "identity"
//! analysis.n_grid = [100, 200, 400]
//! analysis.eps = 0.05
//! analysis.seed = 7
//! ```
//!
//! A run manifest (JSON with a `config` object) is accepted as well, so a
//! run can be repeated from its own manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UrnError};
use crate::model::{ReplacementMatrix, SkewSpec, UrnConfig};
use crate::sa::{Drift, NoiseSource, SaProblem, StepSchedule};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sa: Option<SaSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub h11: f64,
    pub h12: f64,
    pub h21: f64,
    pub h22: f64,
    /// `identity`, `power`, `mirror_power` or `table`.
    #[serde(default = "default_skew")]
    pub skew: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skew_p: Option<f64>,
    /// `[[x, f(x)], ...]` for table skews.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skew_knots: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub skew_concave: bool,
    pub y1: f64,
    pub y2: f64,
}

fn default_skew() -> String {
    "identity".into()
}

/// One value or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    /// Overrides the fitted conditional-mean constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_inclusion: Option<f64>,
    /// TOML integers stop at `i64::MAX`; larger seeds may be written as
    /// decimal strings.
    #[serde(
        default,
        deserialize_with = "seed_value",
        skip_serializing_if = "Option::is_none"
    )]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    #[serde(default)]
    pub exact_ci: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaSection {
    /// `urn` (uses the model section), `tanh`, `linear` or `zero`.
    #[serde(default = "default_problem")]
    pub problem: String,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub center: f64,
    /// `zero`, `rademacher` or `uniform`.
    #[serde(default = "default_noise")]
    pub noise: String,
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default = "one")]
    pub gamma_scale: f64,
    #[serde(default)]
    pub gamma_offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default)]
    pub bounded: bool,
}

impl Default for SaSection {
    fn default() -> Self {
        Self {
            problem: default_problem(),
            scale: 1.0,
            center: 0.0,
            noise: default_noise(),
            noise_scale: 1.0,
            gamma_scale: 1.0,
            gamma_offset: 0.0,
            x0: None,
            bounded: false,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SeedRepr {
    Int(u64),
    Text(String),
}

fn seed_value<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Option<u64>, D::Error> {
    match Option::<SeedRepr>::deserialize(d)? {
        None => Ok(None),
        Some(SeedRepr::Int(v)) => Ok(Some(v)),
        Some(SeedRepr::Text(s)) => s.trim().parse().map(Some).map_err(|_| {
            serde::de::Error::custom(format!("seed `{s}` is not an unsigned 64-bit integer"))
        }),
    }
}

fn default_problem() -> String {
    "urn".into()
}

fn default_noise() -> String {
    "rademacher".into()
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

#[derive(Deserialize)]
struct ManifestConfig {
    config: ExperimentConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| UrnError::InvalidConfig(e.to_string()))
    }

    pub fn parse_manifest(text: &str) -> Result<Self> {
        serde_json::from_str::<ManifestConfig>(text)
            .map(|m| m.config)
            .map_err(|e| UrnError::InvalidConfig(e.to_string()))
    }

    /// Reads a key-value config, or a manifest when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UrnError::InvalidConfig(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::parse_manifest(&text)
        } else {
            Self::parse(&text)
        }
    }

    pub fn model(&self) -> Result<&ModelSection> {
        self.model
            .as_ref()
            .ok_or_else(|| UrnError::InvalidConfig("missing model section".into()))
    }

    pub fn eps_values(&self) -> Vec<f64> {
        self.analysis
            .eps
            .as_ref()
            .map(OneOrMany::values)
            .unwrap_or_default()
    }
}

impl ModelSection {
    pub fn matrix(&self) -> Result<ReplacementMatrix> {
        ReplacementMatrix::new(self.h11, self.h12, self.h21, self.h22)
    }

    pub fn skew_spec(&self) -> Result<SkewSpec> {
        let exponent = || {
            self.skew_p.ok_or_else(|| {
                UrnError::InvalidConfig(format!("skew `{}` needs model.skew_p", self.skew))
            })
        };
        match self.skew.as_str() {
            "identity" => Ok(SkewSpec::identity()),
            "power" => SkewSpec::power(exponent()?),
            "mirror_power" => SkewSpec::mirror_power(exponent()?),
            "table" => {
                let knots = self.skew_knots.as_ref().ok_or_else(|| {
                    UrnError::InvalidConfig("table skew needs model.skew_knots".into())
                })?;
                SkewSpec::table(
                    knots.iter().map(|k| (k[0], k[1])).collect(),
                    self.skew_concave,
                )
            }
            other => Err(UrnError::InvalidConfig(format!(
                "unknown skew family `{other}`"
            ))),
        }
    }

    /// Structurally sound urn; the model conditions are not enforced.
    pub fn urn_unchecked(&self) -> Result<UrnConfig> {
        UrnConfig::unchecked(self.matrix()?, self.skew_spec()?, (self.y1, self.y2))
    }
}

impl SaSection {
    /// Synthetic problem and its declared zero; `None` for the urn problem.
    pub fn synthetic(&self) -> Result<Option<(SaProblem, f64)>> {
        let drift = match self.problem.as_str() {
            "urn" => return Ok(None),
            "tanh" => Drift::Tanh {
                scale: self.scale,
                center: self.center,
            },
            "linear" => Drift::Linear {
                slope: self.scale,
                center: self.center,
            },
            "zero" => Drift::Zero,
            other => {
                return Err(UrnError::InvalidConfig(format!(
                    "unknown sa problem `{other}`"
                )))
            }
        };
        let noise = match self.noise.as_str() {
            "zero" => NoiseSource::Zero,
            "rademacher" => NoiseSource::Rademacher {
                scale: self.noise_scale,
            },
            "uniform" => NoiseSource::Uniform {
                half_width: self.noise_scale,
            },
            other => return Err(UrnError::InvalidConfig(format!("unknown noise `{other}`"))),
        };
        let schedule = StepSchedule::harmonic(self.gamma_scale, self.gamma_offset)?;
        let x0 = self.x0.unwrap_or(self.center);
        let problem = SaProblem::synthetic(drift, schedule, noise, x0, self.bounded)?;
        Ok(Some((problem, self.center)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPER: &str = "
model.h11 = 2
model.h12 = 4
model.h21 = 3
model.h22 = 6
model.y1 = 1
model.y2 = 1
analysis.n = 10
analysis.eps = [0.05, 0.1]
analysis.seed = \"18446744073709551615\"
";

    #[test]
    fn dotted_keys_parse() {
        let c = ExperimentConfig::parse(PAPER).unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.matrix().unwrap().h2(), 10.0);
        assert_eq!(m.skew_spec().unwrap(), SkewSpec::identity());
        assert_eq!(c.eps_values(), vec![0.05, 0.1]);
        assert_eq!(c.analysis.seed, Some(u64::MAX));
        assert!(m.urn_unchecked().unwrap().validate().passed());
    }

    #[test]
    fn scalar_eps_and_table_skew() {
        let c = ExperimentConfig::parse(
            "model.h11 = 1\nmodel.h12 = 2\nmodel.h21 = 3\nmodel.h22 = 4\nmodel.y1 = 1\nmodel.y2 = 1\n\
             model.skew = \"table\"\nmodel.skew_knots = [[0, 0], [0.5, 0.3], [1, 1]]\nanalysis.eps = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.eps_values(), vec![0.1]);
        assert_eq!(
            c.model().unwrap().skew_spec().unwrap().family_name(),
            "table"
        );
    }

    #[test]
    fn malformed_and_unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("model.h11 = ").is_err());
        assert!(ExperimentConfig::parse("analysis.trails = 5").is_err());
        let c = ExperimentConfig::parse("model.h11 = 1\nmodel.h12 = 1\nmodel.h21 = 1\nmodel.h22 = 1\nmodel.y1 = 1\nmodel.y2 = 1\nmodel.skew = \"power\"").unwrap();
        assert!(c.model().unwrap().skew_spec().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let c = ExperimentConfig::parse(PAPER).unwrap();
        let manifest = serde_json::json!({ "tool": "urnld", "config": c });
        let back = ExperimentConfig::parse_manifest(&manifest.to_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn synthetic_sa_section() {
        let c = ExperimentConfig::parse("sa.problem = \"tanh\"\nsa.scale = 2\n").unwrap();
        let (p, x_star) = c.sa.unwrap().synthetic().unwrap().unwrap();
        assert_eq!(x_star, 0.0);
        assert_eq!(p.constants.k_gl, Some(2.0));
        assert_eq!(p.constants.k_u, 1.0);
    }
}
