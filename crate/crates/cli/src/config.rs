//! `cfg/1` experiment configuration.
//!
//! A config names the command, a master seed, an optional environment and
//! a command-specific `params` object. Parsing rejects unknown keys and the
//! echoed config carries every default.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use twistlab::critical::SearchWindow;
use twistlab::environment::{EnvSpec, FourierObservable, StationaryObservable};
use twistlab::genfun::GenfunSpec;
use twistlab::isotopy::{DecomposeOptions, MoserOptions, StationaryHamiltonian};
use twistlab::rice::DensityOptions;
use twistlab::twist::VerifyOptions;

use crate::error::CliError;

pub const CONFIG_SCHEMA: &str = "cfg/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    EnvSample,
    TwistBuild,
    TwistVerify,
    FixedPoints,
    Density,
    Decompose,
    Moser,
    Flow,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::EnvSample => "env-sample",
            Command::TwistBuild => "twist-build",
            Command::TwistVerify => "twist-verify",
            Command::FixedPoints => "fixed-points",
            Command::Density => "density",
            Command::Decompose => "decompose",
            Command::Moser => "moser",
            Command::Flow => "flow",
        };
        f.write_str(s)
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema: String,
    #[serde(default)]
    command: Option<Command>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    env: Option<EnvSpec>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    params: Option<serde_json::Value>,
}

/// A validated configuration with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema: String,
    pub command: Command,
    pub seed: u64,
    pub env: Option<EnvSpec>,
    pub output_dir: PathBuf,
    pub params: Params,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    EnvSample(EnvSampleParams),
    TwistBuild(TwistBuildParams),
    TwistVerify(TwistVerifyParams),
    FixedPoints(FixedPointParams),
    Density(DensityParams),
    Decompose(DecomposeParams),
    Moser(MoserParams),
    Flow(FlowParams),
}

/// Rectangular `(q, p)` sample grid, endpoints included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_q_range")]
    pub q_range: [f64; 2],
    #[serde(default = "default_nq")]
    pub nq: usize,
    #[serde(default = "default_np")]
    pub np: usize,
}

fn default_q_range() -> [f64; 2] {
    [-5.0, 5.0]
}
fn default_nq() -> usize {
    41
}
fn default_np() -> usize {
    21
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { q_range: default_q_range(), nq: default_nq(), np: default_np() }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<[f64; 2]> {
        let step = |lo: f64, hi: f64, n: usize, i: usize| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64;
        let mut out = Vec::with_capacity(self.nq * self.np);
        for i in 0..self.nq {
            for j in 0..self.np {
                out.push([step(self.q_range[0], self.q_range[1], self.nq, i), step(-1.0, 1.0, self.np, j)]);
            }
        }
        out
    }
}

/// A strip map assembled from library pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapSpec {
    /// Twist generated by a seed function.
    Genfun { genfun: GenfunSpec },
    /// `(q + s p, p)`.
    Shear { s: f64 },
    Identity,
    /// `(q + p, p + c (1 − p²))`; not area preserving for `c ≠ 0`.
    BoundaryBulge { c: f64 },
    /// Time-`t` map of a stationary Hamiltonian.
    Flow {
        hamiltonian: StationaryHamiltonian,
        #[serde(default = "default_t")]
        t: f64,
        #[serde(default = "default_dt")]
        dt: f64,
    },
    Inverse { map: Box<MapSpec> },
    /// Index 0 applied first.
    Compose { maps: Vec<MapSpec> },
}

fn default_t() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSampleParams {
    /// Window on which Poisson points are materialised.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistBuildParams {
    pub map: MapSpec,
    #[serde(default)]
    pub grid: GridSpec,
}

/// Tolerances for `twist-verify`; the sample seed comes from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyParams {
    #[serde(default = "default_q_range")]
    pub q_range: [f64; 2],
    #[serde(default = "default_det_tol")]
    pub det_tol: f64,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
    #[serde(default = "default_boundary_tol")]
    pub stationarity_tol: f64,
    #[serde(default = "default_h")]
    pub h: f64,
}

fn default_det_tol() -> f64 {
    1e-4
}
fn default_boundary_tol() -> f64 {
    1e-8
}
fn default_h() -> f64 {
    twistlab::twist::JACOBIAN_STEP
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            q_range: default_q_range(),
            det_tol: default_det_tol(),
            boundary_tol: default_boundary_tol(),
            stationarity_tol: default_boundary_tol(),
            h: default_h(),
        }
    }
}

impl VerifyParams {
    pub fn options(&self, seed: u64) -> VerifyOptions {
        VerifyOptions {
            q_range: self.q_range,
            det_tol: self.det_tol,
            boundary_tol: self.boundary_tol,
            stationarity_tol: self.stationarity_tol,
            h: self.h,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistVerifyParams {
    pub map: MapSpec,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub tolerances: VerifyParams,
}

fn default_samples() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointParams {
    /// Generating functions, index 0 applied first; signs alternate
    /// starting negative, or a single positive factor.
    pub factors: Vec<GenfunSpec>,
    pub window: SearchWindow,
    /// Window half-widths for the growth census; the largest one is searched.
    #[serde(default)]
    pub census: Option<Vec<f64>>,
    /// Samples of the action graph `(q, I(q))` for single-factor chains.
    #[serde(default = "default_psi_samples")]
    pub psi_samples: usize,
}

fn default_psi_samples() -> usize {
    2001
}

/// Scalar process for `density`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProcessSpec {
    Observable { observable: StationaryObservable },
    /// `Σ a_k cos 2πθ_k`.
    Trigonometric { amplitudes: Vec<f64> },
    /// Random amplitudes and frequencies drawn from the run seed; the
    /// environment defaults to the matching torus with a random phase.
    RandomTrigonometric { modes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityParams {
    pub process: ProcessSpec,
    pub options: DensityOptions,
    #[serde(default)]
    pub hypothesis: bool,
    /// Environments averaged by the hypothesis diagnostics.
    #[serde(default = "default_hypothesis_samples")]
    pub hypothesis_samples: usize,
    /// Window half-width scanned per environment by the diagnostics.
    #[serde(default = "default_hypothesis_ell")]
    pub hypothesis_ell: f64,
    /// The `(q, ψ)` graph covers `[−psi_window, psi_window]`.
    #[serde(default = "default_psi_window")]
    pub psi_window: f64,
    #[serde(default = "default_psi_samples")]
    pub psi_samples: usize,
}

fn default_hypothesis_samples() -> usize {
    50
}
fn default_hypothesis_ell() -> f64 {
    2.0
}
fn default_psi_window() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeParams {
    pub hamiltonian: StationaryHamiltonian,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Step count; chosen from `target_delta` when absent.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_target_delta")]
    pub target_delta: f64,
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    #[serde(default)]
    pub sampling: DecomposeOptions,
    /// Grid for the recomposition check.
    #[serde(default)]
    pub check: GridSpec,
    #[serde(default = "default_recompose_tol")]
    pub recompose_tol: f64,
}

fn default_target_delta() -> f64 {
    0.5
}
fn default_max_n() -> usize {
    64
}
fn default_recompose_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoserParams {
    /// Density defect `η = 1 − ρ¹` with no `q`-mean mode.
    pub eta: FourierObservable,
    #[serde(default)]
    pub options: MoserOptions,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Grid for `|det DΛ^t − 1|`.
    #[serde(default = "default_moser_grid")]
    pub det_grid: GridSpec,
    #[serde(default = "default_laplacian_tol")]
    pub laplacian_tol: f64,
    #[serde(default = "default_neumann_tol")]
    pub neumann_tol: f64,
    #[serde(default = "default_det_tol")]
    pub det_tol: f64,
}

fn default_times() -> Vec<f64> {
    vec![0.5, 1.0]
}
fn default_moser_grid() -> GridSpec {
    GridSpec { q_range: [0.0, 1.0], nq: 5, np: 5 }
}
fn default_laplacian_tol() -> f64 {
    1e-5
}
fn default_neumann_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    pub hamiltonian: StationaryHamiltonian,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Period of the sampled map `Λ^{0,t}`.
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_flow_starts")]
    pub starts: GridSpec,
    #[serde(default = "default_symplectic_tol")]
    pub symplectic_tol: f64,
}

fn default_iterations() -> usize {
    100
}
fn default_flow_starts() -> GridSpec {
    GridSpec { q_range: [0.0, 0.0], nq: 1, np: 11 }
}
fn default_symplectic_tol() -> f64 {
    1e-10
}

fn typed<T: DeserializeOwned>(value: serde_json::Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." { prefix.to_string() } else { format!("{prefix}.{inner}") };
        CliError::Config { path, message: e.into_inner().to_string() }
    })
}

impl ExperimentConfig {
    /// Parses a config for `command`.
    pub fn parse(text: &str, command: Command) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
        if raw.schema != CONFIG_SCHEMA {
            return Err(CliError::Config {
                path: "schema".into(),
                message: format!("expected {CONFIG_SCHEMA:?}, got {:?}", raw.schema),
            });
        }
        if let Some(c) = raw.command {
            if c != command {
                return Err(CliError::Config {
                    path: "command".into(),
                    message: format!("config is for {c}, invoked as {command}"),
                });
            }
        }
        let value = raw.params.unwrap_or_else(|| serde_json::Value::Object(Default::default()));
        let params = match command {
            Command::EnvSample => Params::EnvSample(typed(value, "params")?),
            Command::TwistBuild => Params::TwistBuild(typed(value, "params")?),
            Command::TwistVerify => Params::TwistVerify(typed(value, "params")?),
            Command::FixedPoints => Params::FixedPoints(typed(value, "params")?),
            Command::Density => Params::Density(typed(value, "params")?),
            Command::Decompose => Params::Decompose(typed(value, "params")?),
            Command::Moser => Params::Moser(typed(value, "params")?),
            Command::Flow => Params::Flow(typed(value, "params")?),
        };
        Ok(Self { schema: raw.schema, command, seed: raw.seed, env: raw.env, output_dir: raw.output_dir, params })
    }

    pub fn load(path: &Path, command: Command) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::ConfigIo { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text, command)
    }

    /// The environment spec, or a config error naming `env`.
    pub fn env_spec(&self) -> Result<&EnvSpec, CliError> {
        self.env.as_ref().ok_or_else(|| CliError::Config {
            path: "env".into(),
            message: format!("command {} needs an environment", self.command),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": "cfg/1",
        "env": {"kind": "quasi-periodic", "v": [1.0, 1.4142135623730951], "phase": [0.0, 0.0]},
        "params": {"factors": [{"seed": {"terms": [{"profile": {"kind": "linear", "c": 1.0}}]}}],
                   "window": {"ell": 5.0, "grid": 0.01}}
    }"#;

    #[test]
    fn defaults_are_materialised() {
        let cfg = ExperimentConfig::parse(MINIMAL, Command::FixedPoints).unwrap();
        let echo = serde_json::to_value(&cfg).unwrap();
        assert_eq!(echo["output_dir"], "out");
        assert_eq!(echo["seed"], 0);
        assert_eq!(echo["params"]["psi_samples"], 2001);
        assert_eq!(echo["params"]["window"]["t_max"], 200.0);
        assert_eq!(echo["params"]["factors"][0]["sign"], "positive");
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let text = MINIMAL.replace("\"grid\": 0.01", "\"grid\": 0.01, \"gird\": 1");
        match ExperimentConfig::parse(&text, Command::FixedPoints).unwrap_err() {
            CliError::Config { path, message } => {
                assert!(path.starts_with("params.window"), "{path}");
                assert!(message.contains("gird"), "{message}");
            }
            e => panic!("{e}"),
        }
        let text = MINIMAL.replace("\"schema\": \"cfg/1\",", "\"schema\": \"cfg/1\", \"sed\": 3,");
        assert!(matches!(ExperimentConfig::parse(&text, Command::FixedPoints), Err(CliError::Config { .. })));
    }

    #[test]
    fn schema_and_command_are_checked() {
        let text = MINIMAL.replace("cfg/1", "cfg/2");
        assert!(matches!(ExperimentConfig::parse(&text, Command::FixedPoints), Err(CliError::Config { path, .. }) if path == "schema"));
        let text = MINIMAL.replace("\"schema\": \"cfg/1\",", "\"schema\": \"cfg/1\", \"command\": \"density\",");
        assert!(matches!(ExperimentConfig::parse(&text, Command::FixedPoints), Err(CliError::Config { path, .. }) if path == "command"));
    }

    #[test]
    fn grid_points_cover_the_strip() {
        let g = GridSpec { q_range: [0.0, 1.0], nq: 3, np: 2 };
        assert_eq!(g.points(), vec![[0.0, -1.0], [0.0, 1.0], [0.5, -1.0], [0.5, 1.0], [1.0, -1.0], [1.0, 1.0]]);
    }
}
