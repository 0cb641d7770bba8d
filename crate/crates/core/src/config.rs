//! Scenario files, the built-in registry and run configuration.
//!
//! A scenario file is TOML. Unknown keys are rejected everywhere. Values
//! resolve as command-line flags, then file, then built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bsde::{Driver, RegressionBasis, Scenario, Terminal};
use crate::error::{Error, Result};
use crate::geometry::{ConvexTube, Poly};
use crate::grid::TimeGrid;
use crate::noise::{ForwardSpec, LevyNoiseSpec};
use crate::penalty::PenaltyLevel;

pub const DEFAULT_STEPS: usize = 256;
pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_PENALTY: u64 = 64;
pub const DEFAULT_REPLICATIONS: usize = 5;
pub const DEFAULT_N_LIST: [u64; 8] = [4, 8, 16, 32, 64, 128, 256, 512];

const BUILTIN: &[(&str, &str)] = &[
    ("constant", include_str!("../scenarios/constant.toml")),
    ("martingale", include_str!("../scenarios/martingale.toml")),
    ("binding-1d", include_str!("../scenarios/binding-1d.toml")),
    (
        "shrinking-ball-jumps",
        include_str!("../scenarios/shrinking-ball-jumps.toml"),
    ),
    (
        "expanding-ball",
        include_str!("../scenarios/expanding-ball.toml"),
    ),
    (
        "linear-driver",
        include_str!("../scenarios/linear-driver.toml"),
    ),
    (
        "constant-driver",
        include_str!("../scenarios/constant-driver.toml"),
    ),
];

/// Names of the built-in scenarios.
pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

/// TOML text of a built-in scenario.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TubeConfig {
    /// `[lo(t), hi(t)]`, polynomial endpoints in ascending coefficients.
    Interval {
        lo_poly: Vec<f64>,
        hi_poly: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius_poly: Vec<f64>,
    },
    Halfspaces {
        faces: Vec<FaceConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceConfig {
    pub normal: Vec<f64>,
    pub offset_poly: Vec<f64>,
}

impl TubeConfig {
    pub fn build(&self, horizon: f64) -> Result<ConvexTube> {
        let tube = match self {
            TubeConfig::Interval { lo_poly, hi_poly } => ConvexTube::interval(
                Poly::new(lo_poly.clone()),
                Poly::new(hi_poly.clone()),
                horizon,
            ),
            TubeConfig::Ball {
                center,
                radius_poly,
            } => ConvexTube::ball(center.clone(), Poly::new(radius_poly.clone()), horizon),
            TubeConfig::Halfspaces { faces } => ConvexTube::halfspaces(
                faces
                    .iter()
                    .map(|f| (f.normal.clone(), Poly::new(f.offset_poly.clone())))
                    .collect(),
                horizon,
            ),
        };
        tube.map_err(|e| Error::Config(format!("tube: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub brownian_dim: usize,
    #[serde(default)]
    pub marks: Vec<Vec<f64>>,
    #[serde(default)]
    pub intensities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub x0: Vec<f64>,
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
    #[serde(default)]
    pub drift_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub jump_map: Option<Vec<Vec<f64>>>,
}

impl ForwardConfig {
    fn build(&self, noise: &LevyNoiseSpec) -> ForwardSpec {
        let mut f = ForwardSpec::frozen(self.x0.clone(), noise);
        if let Some(v) = &self.drift {
            f.drift = v.clone();
        }
        f.drift_matrix = self.drift_matrix.clone();
        if let Some(v) = &self.sigma {
            f.sigma = v.clone();
        }
        if let Some(v) = &self.jump_map {
            f.jump_map = v.clone();
        }
        f
    }
}

/// Parsed scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    pub horizon: f64,
    pub steps: Option<usize>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub n_penalty: Option<u64>,
    pub n_list: Option<Vec<u64>>,
    pub replications: Option<usize>,
    pub basis: Option<RegressionBasis>,
    pub lipschitz: Option<f64>,
    pub tube: TubeConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub forward: ForwardConfig,
    pub terminal: Terminal,
    pub driver: Driver,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds and validates the scenario on a grid with `steps` steps.
    pub fn scenario(&self, fallback_name: &str, steps: usize) -> Result<Scenario> {
        let grid = TimeGrid::new(self.horizon, steps).map_err(|e| Error::Config(e.to_string()))?;
        let tube = self.tube.build(self.horizon)?;
        let noise = LevyNoiseSpec::new(
            self.noise.brownian_dim,
            self.noise.marks.clone(),
            self.noise.intensities.clone(),
        )
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
        let forward = self.forward.build(&noise);
        Scenario::new(
            self.name
                .clone()
                .unwrap_or_else(|| fallback_name.to_string()),
            tube,
            grid,
            noise,
            forward,
            self.terminal.clone(),
            self.driver.clone(),
            self.lipschitz,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Validate,
    Solve,
    Sweep,
    Diagnose,
}

/// Where the scenario comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioSource {
    Builtin(String),
    File(PathBuf),
}

/// Values given on the command line; `None` defers to the file and defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub steps: Option<usize>,
    pub paths: Option<usize>,
    pub n_penalty: Option<u64>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub basis_degree: Option<usize>,
}

/// Fully resolved run parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub scenario: String,
    pub steps: usize,
    pub paths: usize,
    pub n_penalty: PenaltyLevel,
    pub n_list: Vec<PenaltyLevel>,
    pub seed: u64,
    pub replications: usize,
    pub out_dir: PathBuf,
    pub basis: RegressionBasis,
    /// Hex SHA-256 of the resolved scenario file and run parameters.
    pub config_hash: String,
}

fn positive<T: PartialEq + Default + std::fmt::Display>(name: &str, v: T) -> Result<T> {
    if v == T::default() {
        return Err(Error::Config(format!("{name} must be positive")));
    }
    Ok(v)
}

/// Resolves a scenario and its run parameters.
pub fn parse_config(
    command: Command,
    source: &ScenarioSource,
    overrides: &Overrides,
) -> Result<(RunConfig, Scenario)> {
    let (label, text) = match source {
        ScenarioSource::Builtin(name) => {
            let text = builtin_source(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown scenario `{name}` (built-in: {})",
                    builtin_names().collect::<Vec<_>>().join(", ")
                ))
            })?;
            (name.clone(), text.to_string())
        }
        ScenarioSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into());
            (label, text)
        }
    };
    let file = ScenarioFile::parse(&text)?;
    let steps = positive(
        "steps",
        overrides.steps.or(file.steps).unwrap_or(DEFAULT_STEPS),
    )?;
    let paths = positive(
        "paths",
        overrides.paths.or(file.paths).unwrap_or(DEFAULT_PATHS),
    )?;
    let seed = overrides.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let replications = positive(
        "replications",
        overrides
            .replications
            .or(file.replications)
            .unwrap_or(DEFAULT_REPLICATIONS),
    )?;
    let n_penalty = PenaltyLevel::new(
        overrides
            .n_penalty
            .or(file.n_penalty)
            .unwrap_or(DEFAULT_PENALTY),
    )
    .map_err(|_| Error::Config("n-penalty must be positive".into()))?;
    let n_list = file
        .n_list
        .clone()
        .unwrap_or_else(|| DEFAULT_N_LIST.to_vec())
        .into_iter()
        .map(|n| {
            PenaltyLevel::new(n)
                .map_err(|_| Error::Config("n_list entries must be positive".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut basis = file.basis.unwrap_or_default();
    if let Some(deg) = overrides.basis_degree {
        basis = RegressionBasis::Polynomial {
            degree: positive("basis-degree", deg)?,
        };
    }
    let out_dir = overrides
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));

    let scenario = file.scenario(&label, steps)?;

    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&file).expect("scenario file serializes"));
    hasher.update(
        serde_json::to_vec(&(
            command,
            steps,
            paths,
            n_penalty,
            &n_list,
            seed,
            replications,
            basis,
        ))
        .expect("run parameters serialize"),
    );
    let config_hash = hex::encode(hasher.finalize());

    Ok((
        RunConfig {
            command,
            scenario: scenario.name.clone(),
            steps,
            paths,
            n_penalty,
            n_list,
            seed,
            replications,
            out_dir,
            basis,
            config_hash,
        },
        scenario,
    ))
}

/// Provenance record written next to every set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub code_version: String,
    pub command: Command,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Manifest {
    pub fn new(run: &RunConfig) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            command: run.command,
            scenario: run.scenario.clone(),
            config_hash: run.config_hash.clone(),
            seed: run.seed,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builtin(name: &str) -> ScenarioSource {
        ScenarioSource::Builtin(name.into())
    }

    #[test]
    fn constant_resolves_with_defaults() {
        let (run, sc) =
            parse_config(Command::Solve, &builtin("constant"), &Overrides::default()).unwrap();
        assert_eq!((run.steps, run.paths, run.seed), (256, 10_000, 1));
        assert_eq!(sc.grid.steps(), 256);
        assert_eq!(run.config_hash.len(), 64);
    }

    #[test]
    fn flags_override_file_values() {
        let ov = Overrides {
            n_penalty: Some(64),
            steps: Some(32),
            ..Default::default()
        };
        let (run, sc) = parse_config(Command::Solve, &builtin("binding-1d"), &ov).unwrap();
        assert_eq!(run.n_penalty.get(), 64);
        assert_eq!(sc.grid.steps(), 32);
        let (file_run, _) = parse_config(
            Command::Solve,
            &builtin("binding-1d"),
            &Overrides::default(),
        )
        .unwrap();
        assert_ne!(file_run.config_hash, run.config_hash);
    }

    #[test]
    fn misspelled_key_is_named() {
        let text = builtin_source("shrinking-ball-jumps")
            .unwrap()
            .replace("radius_poly", "radiusp_oly");
        let err = ScenarioFile::parse(&text).unwrap_err().to_string();
        assert!(err.contains("radiusp_oly"), "{err}");
    }

    #[test]
    fn expanding_tube_is_a_config_error() {
        let err = parse_config(
            Command::Validate,
            &builtin("expanding-ball"),
            &Overrides::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn every_other_builtin_validates() {
        for name in builtin_names().filter(|n| *n != "expanding-ball") {
            let ov = Overrides {
                steps: Some(16),
                ..Default::default()
            };
            parse_config(Command::Validate, &builtin(name), &ov)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn zero_overrides_are_rejected() {
        let ov = Overrides {
            paths: Some(0),
            ..Default::default()
        };
        assert!(parse_config(Command::Solve, &builtin("constant"), &ov).is_err());
    }
}
