//! Run configuration: the problem, the input condition and run options in one
//! JSON document.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use vlq_core::problem::{ConstantVector, CostSpec, Dims, GridSpec, KernelSet, VectorFnSpec};
use vlq_core::riccati::Scheme;
use vlq_core::{build_input, build_problem, InputSpec, ProblemConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub n_paths: usize,
    /// Bound for identities that hold exactly on the grid. First-order
    /// comparisons are reported without a bound.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Largest lifted dimension for the dynamic program and the exact moment
    /// propagation.
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_ladder")]
    pub sweep: Vec<usize>,
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_cap() -> usize {
    2000
}

fn default_ladder() -> Vec<usize> {
    vec![8, 16, 32, 64]
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            n_paths: 0,
            tolerance: default_tolerance(),
            scheme: Scheme::Direct,
            cap: default_cap(),
            checkpoints: Vec::new(),
            sweep: default_ladder(),
        }
    }
}

/// The whole document. `input` defaults to `phi1 = 1` from node 0 with
/// `phi2 = phi1(T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dims: Dims,
    pub grid: GridSpec,
    #[serde(default = "KernelSet::zero")]
    pub kernels: KernelSet,
    pub cost: CostSpec,
    #[serde(default)]
    pub input: Option<InputSpec>,
    #[serde(default)]
    pub run: RunOptions,
}

impl RunConfig {
    pub fn problem(&self) -> ProblemConfig {
        ProblemConfig {
            dims: self.dims.clone(),
            grid: self.grid.clone(),
            kernels: self.kernels.clone(),
            cost: self.cost.clone(),
        }
    }

    pub fn input_spec(&self) -> InputSpec {
        self.input.clone().unwrap_or_else(|| InputSpec {
            tau_index: 0,
            phi1: VectorFnSpec::Constant(ConstantVector { value: vec![1.0; self.dims.d] }),
            phi2: None,
        })
    }

    /// Same document on a different step count.
    pub fn with_steps(&self, n: usize) -> Self {
        let mut out = self.clone();
        out.grid.n = n;
        out
    }
}

/// Parses and validates a configuration: unknown keys, malformed values and
/// parameter preconditions are all rejected here.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).context("invalid configuration")?;
    let problem = build_problem(&cfg.problem()).context("invalid problem")?;
    build_input(&cfg.input_spec(), &problem).context("invalid input")?;
    let run = &cfg.run;
    anyhow::ensure!(run.tolerance > 0.0, "run: tolerance must be positive");
    anyhow::ensure!(run.sweep.iter().all(|&n| n > 0), "run: sweep entries must be positive");
    Ok(cfg)
}
