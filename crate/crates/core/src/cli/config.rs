//! Strict JSON experiment configuration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datadriven::SignalSpec;
use crate::error::{Error, Result};
use crate::matops::SymMatrix;
use crate::policy_iteration::{Decay, DisturbanceSpec};
use crate::riccati::{LqrCost, LtiSystem, DEFAULT_ARE_MAX_ITER, DEFAULT_ARE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "are", alias = "solve-are")]
    Are,
    #[serde(rename = "pi-exact")]
    PiExact,
    #[serde(rename = "pi-robust")]
    PiRobust,
    #[serde(rename = "pi-data")]
    PiData,
    #[serde(rename = "fig1")]
    Fig1,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Are => "are",
            Mode::PiExact => "pi-exact",
            Mode::PiRobust => "pi-robust",
            Mode::PiData => "pi-data",
            Mode::Fig1 => "fig1",
        }
    }
}

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Stopping threshold on successive value matrices.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest accepted ARE residual (Frobenius) for `solve-are`.
    pub residual_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_ARE_TOL,
            max_iter: DEFAULT_ARE_MAX_ITER,
            residual_tol: 1e-10,
        }
    }
}

/// Initial gain: `"auto"` (any stabilizing gain), `"near"` (seeded
/// perturbation of the optimal gain) or an explicit `m x n` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainConfig {
    Named(GainKind),
    Explicit(Rows),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainKind {
    Auto,
    Near,
}

impl Default for GainConfig {
    fn default() -> Self {
        GainConfig::Named(GainKind::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceConfig {
    None,
    FixedNorm {
        norm_bound: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Decaying {
        norm_bound: f64,
        decay: Decay,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl DisturbanceConfig {
    pub fn resolve(&self, master: u64) -> DisturbanceSpec {
        let derived = derive_seed(master, SeedSalt::GainDisturbance);
        match *self {
            DisturbanceConfig::None => DisturbanceSpec::None,
            DisturbanceConfig::FixedNorm { norm_bound, seed } => DisturbanceSpec::FixedNorm {
                norm_bound,
                seed: seed.unwrap_or(derived),
            },
            DisturbanceConfig::Decaying { norm_bound, decay, seed } => DisturbanceSpec::Decaying {
                norm_bound,
                decay,
                seed: seed.unwrap_or(derived),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub amplitude: f64,
    pub count: usize,
    pub range: [f64; 2],
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SignalConfig {
    pub fn resolve(&self, master: u64, salt: SeedSalt) -> SignalSpec {
        SignalSpec {
            amplitude: self.amplitude,
            count: self.count,
            range: self.range,
            seed: self.seed.unwrap_or_else(|| derive_seed(master, salt)),
        }
    }
}

pub fn default_input_signal() -> SignalConfig {
    SignalConfig {
        amplitude: 0.2,
        count: 100,
        range: [-500.0, 500.0],
        seed: None,
    }
}

pub fn default_disturbance_signal(amplitude: f64) -> SignalConfig {
    SignalConfig {
        amplitude,
        count: 50,
        range: [-100.0, 100.0],
        seed: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(rename = "M")]
    pub samples: usize,
    pub dt: f64,
    pub substeps: usize,
    /// Defaults to a vector of ones.
    pub x0: Option<Vec<f64>>,
    pub input: SignalConfig,
    /// Additive state disturbance `w(t)`; absent means the nominal plant.
    pub disturbance: Option<SignalConfig>,
    /// Write the trajectory data bundle next to the trace.
    pub save_bundle: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples: 140,
            dt: 0.1,
            substeps: crate::datadriven::DEFAULT_SUBSTEPS,
            x0: None,
            input: default_input_signal(),
            disturbance: None,
            save_bundle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig1Config {
    /// Disturbance scales; the first is the small one.
    pub xi: [f64; 2],
    /// Spectral norm of the near-gain perturbation relative to `||K*||_2`.
    pub near_scale: f64,
    pub far_gain: GainConfig,
    pub n_iter: usize,
    /// Frequency content of `w(t)`; its amplitude is replaced by each `xi`.
    pub disturbance: SignalConfig,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self {
            xi: [0.01, 0.5],
            near_scale: 0.05,
            far_gain: GainConfig::Named(GainKind::Auto),
            n_iter: 20,
            disturbance: default_disturbance_signal(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Required except for `fig1`, which defaults to the stirred-tank plant.
    #[serde(default)]
    pub system: Option<SystemConfig>,
    /// Defaults to identity weights.
    #[serde(default)]
    pub cost: Option<CostConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub k1: GainConfig,
    #[serde(default = "default_near_scale")]
    pub near_scale: f64,
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default)]
    pub disturbance: Option<DisturbanceConfig>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub fig1: Option<Fig1Config>,
    #[serde(default)]
    pub output: Option<String>,
}

fn default_seed() -> u64 {
    1
}

fn default_near_scale() -> f64 {
    0.05
}

fn default_n_iter() -> usize {
    30
}

#[derive(Debug, Clone, Copy)]
pub enum SeedSalt {
    Input = 1,
    StateDisturbance = 2,
    NearGain = 3,
    GainDisturbance = 4,
}

/// Splitmix64 of `master` and a per-use salt.
pub fn derive_seed(master: u64, salt: SeedSalt) -> u64 {
    let mut z = master
        .wrapping_add((salt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn matrix_from_rows(rows: &Rows, name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Dimension(format!("{name} must be a non-empty matrix")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{name} has ragged rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

pub fn stirred_tank_system() -> SystemConfig {
    SystemConfig {
        a: vec![vec![-21.0, -20.0], vec![9.0, 8.0]],
        b: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Builds and checks the plant and cost (controllability, observability,
    /// weight definiteness, dimensions).
    pub fn problem(&self) -> Result<(LtiSystem, LqrCost)> {
        let sys_cfg = match (&self.system, self.mode) {
            (Some(s), _) => s.clone(),
            (None, Mode::Fig1) => stirred_tank_system(),
            (None, _) => {
                return Err(Error::InvalidArgument(format!(
                    "mode {} requires a \"system\" block",
                    self.mode.name()
                )))
            }
        };
        let a = matrix_from_rows(&sys_cfg.a, "A")?;
        let b = matrix_from_rows(&sys_cfg.b, "B")?;
        let sys = LtiSystem::new(a, b)?;
        let cost = match &self.cost {
            Some(c) => {
                let q = SymMatrix::new(matrix_from_rows(&c.q, "Q")?)?;
                let r = SymMatrix::new(matrix_from_rows(&c.r, "R")?)?;
                LqrCost::new(q, r)?
            }
            None => LqrCost::identity(sys.n(), sys.m()),
        };
        cost.check_against(&sys)?;
        Ok((sys, cost))
    }

    pub fn data_config(&self) -> DataConfig {
        self.data.clone().unwrap_or_default()
    }

    pub fn x0(&self, n: usize) -> Result<DVector<f64>> {
        match &self.data_config().x0 {
            None => Ok(DVector::from_element(n, 1.0)),
            Some(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(Error::Dimension(format!("x0 has length {}, expected {n}", v.len()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys() {
        let text = r#"{"mode": "are", "system": {"A": [[-1]], "B": [[1]]}, "bogus": 1}"#;
        assert!(ExperimentConfig::parse(text).is_err());
        let text = r#"{"mode": "are", "system": {"A": [[-1]], "B": [[1]], "C": [[1]]}}"#;
        assert!(ExperimentConfig::parse(text).is_err());
        let text = r#"{"mode": "pi-robust", "system": {"A": [[-1]], "B": [[1]]},
                       "disturbance": {"mode": "fixed_norm", "norm_bound": 0.1, "extra": 2}}"#;
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn parses_gain_variants() {
        let base = r#"{"mode": "pi-exact", "system": {"A": [[-1]], "B": [[1]]}, "k1": K}"#;
        let auto = ExperimentConfig::parse(&base.replace('K', "\"auto\"")).unwrap();
        assert_eq!(auto.k1, GainConfig::Named(GainKind::Auto));
        let near = ExperimentConfig::parse(&base.replace('K', "\"near\"")).unwrap();
        assert_eq!(near.k1, GainConfig::Named(GainKind::Near));
        let explicit = ExperimentConfig::parse(&base.replace('K', "[[0.5]]")).unwrap();
        assert_eq!(explicit.k1, GainConfig::Explicit(vec![vec![0.5]]));
    }

    #[test]
    fn fig1_defaults_to_stirred_tank() {
        let cfg = ExperimentConfig::parse(r#"{"mode": "fig1"}"#).unwrap();
        let (sys, cost) = cfg.problem().unwrap();
        assert_eq!(sys.a()[(0, 1)], -20.0);
        assert_eq!(sys.b(), &DMatrix::identity(2, 2));
        assert_eq!(cost.q(), &SymMatrix::identity(2));
    }

    #[test]
    fn zero_input_matrix_fails_controllability() {
        let cfg = ExperimentConfig::parse(
            r#"{"mode": "fig1", "system": {"A": [[-21, -20], [9, 8]], "B": [[0, 0], [0, 0]]}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.problem(), Err(Error::Uncontrollable { .. })));
    }

    #[test]
    fn ragged_matrix_rejected() {
        assert!(matrix_from_rows(&vec![vec![1.0, 2.0], vec![3.0]], "A").is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, SeedSalt::Input);
        let b = derive_seed(1, SeedSalt::StateDisturbance);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(1, SeedSalt::Input));
    }
}
