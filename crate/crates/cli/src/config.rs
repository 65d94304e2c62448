//! Run configuration. Every section has defaults and rejects unknown keys;
//! the resolved configuration, defaults included, is what gets hashed and
//! stored in the manifest.

use std::path::Path;

use num_complex::Complex64;
use randnls::counting::{CountQuery, DEFAULT_BUDGET};
use randnls::field::ModelParams;
use randnls::norms::{Exponent, NormKind, NormSpec};
use randnls::probes::{
    ChaosTailConfig, CoefficientGrowthConfig, LinearChaosConfig, LpDecayConfig, SolutionProbeConfig,
    StrichartzConfig, TrilinearConfig, TrilinearTerm,
};
use randnls::solver::PicardConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub params: ModelParams,
    pub run: RunConfig,
    pub picard: PicardConfig,
    pub count: CountConfig,
    pub norm: NormConfig,
    pub probe: ProbeConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            params: ModelParams::new(3, 1.0, 0.0, 0.5, 8, 0.02).expect("default parameters are valid"),
            run: RunConfig::default(),
            picard: PicardConfig::default(),
            count: CountConfig::default(),
            norm: NormConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// First seed; runs cover `seed .. seed + samples`.
    pub seed: u64,
    pub samples: usize,
    /// Force every Gaussian coefficient to zero.
    pub zero_data: bool,
    /// Trapezoid steps on `[0, δ]` for `evolve` and `norm`.
    pub time_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            samples: 1,
            zero_data: false,
            time_steps: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountConfig {
    /// Refuse enumerations whose estimated cost exceeds this.
    pub budget: u64,
    pub queries: Vec<CountQuery>,
}

impl Default for CountConfig {
    fn default() -> Self {
        CountConfig {
            budget: DEFAULT_BUDGET as u64,
            queries: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormConfig {
    pub norms: Vec<NormSpec>,
}

impl Default for NormConfig {
    fn default() -> Self {
        let mut l4 = NormSpec::new(NormKind::LpLq);
        l4.p = Exponent::Finite(4.0);
        l4.q = Exponent::Finite(4.0);
        NormConfig {
            norms: vec![NormSpec::new(NormKind::Hs), l4, NormSpec::new(NormKind::XsProxy)],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub coefficient_growth: CoefficientGrowthConfig,
    pub linear_chaos_tail: LinearChaosSection,
    pub random_lp_decay: LpDecayConfig,
    pub trilinear_chaos_tail: ChaosTailSection,
    pub strichartz_scaling: StrichartzConfig,
    pub trilinear_estimate: TrilinearConfig,
    pub gauge_and_solution: GaugeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearChaosSection {
    pub coefficients: Vec<Complex64>,
    pub settings: LinearChaosConfig,
}

impl Default for LinearChaosSection {
    fn default() -> Self {
        LinearChaosSection {
            coefficients: vec![Complex64::new(1.0, 0.0)],
            settings: LinearChaosConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaosTailSection {
    pub terms: Vec<TrilinearTerm>,
    pub settings: ChaosTailConfig,
}

impl Default for ChaosTailSection {
    fn default() -> Self {
        ChaosTailSection {
            terms: vec![TrilinearTerm {
                modes: [vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]],
                coeff: Complex64::new(1.0, 0.0),
            }],
            settings: ChaosTailConfig::default(),
        }
    }
}

/// Thresholds of the solution probe; the Picard settings and the zero-data
/// switch come from `[picard]` and `[run]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaugeSection {
    pub contraction_within: usize,
    pub contraction_fraction: f64,
    pub agreement_tol: f64,
    pub residual_factor: f64,
    pub max_failure_fraction: f64,
}

impl Default for GaugeSection {
    fn default() -> Self {
        let d = SolutionProbeConfig::default();
        GaugeSection {
            contraction_within: d.contraction_within,
            contraction_fraction: d.contraction_fraction,
            agreement_tol: d.agreement_tol,
            residual_factor: d.residual_factor,
            max_failure_fraction: d.max_failure_fraction,
        }
    }
}

impl Config {
    pub fn solution_probe(&self) -> SolutionProbeConfig {
        let g = &self.probe.gauge_and_solution;
        SolutionProbeConfig {
            picard: self.picard.clone(),
            zero_data: self.run.zero_data,
            contraction_within: g.contraction_within,
            contraction_fraction: g.contraction_fraction,
            agreement_tol: g.agreement_tol,
            residual_factor: g.residual_factor,
            max_failure_fraction: g.max_failure_fraction,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Field-level checks beyond what parsing enforces.
    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, r: randnls::Result<()>| r.map_err(|e| CliError::Config(format!("{name}: {e}")));
        field("params", self.params.validate())?;
        field("picard", self.picard.validate())?;
        for (i, n) in self.norm.norms.iter().enumerate() {
            field(&format!("norm.norms[{i}]"), n.validate())?;
        }
        if self.run.samples == 0 {
            return Err(CliError::Config("run.samples: must be at least 1".into()));
        }
        if self.run.time_steps == 0 {
            return Err(CliError::Config("run.time_steps: must be at least 1".into()));
        }
        if self.run.seed > i64::MAX as u64 - self.run.samples as u64 {
            return Err(CliError::Config("run.seed: seed range must stay below 2^63".into()));
        }
        Ok(())
    }
}
