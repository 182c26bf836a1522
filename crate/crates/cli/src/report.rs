//! The JSON run report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use vlq_core::riccati::Residuals;
use vlq_core::ProblemInstance;

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Digest {
    pub d: usize,
    pub l: usize,
    pub horizon: f64,
    pub n: usize,
    pub dt: f64,
    /// Families of A, B, C, D.
    pub kernels: [String; 4],
}

impl Digest {
    pub fn of(p: &ProblemInstance) -> Self {
        Self { d: p.d, l: p.l, horizon: p.grid.horizon(), n: p.n(), dt: p.dt(), kernels: p.families.clone() }
    }
}

/// One quantity against its reference. `tolerance = None` marks an
/// informational entry that never fails the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub oracle: f64,
    pub deviation: f64,
    pub tolerance: Option<f64>,
    pub pass: bool,
}

impl Check {
    /// Passes when `deviation <= tolerance`.
    pub fn bound(name: &str, value: f64, oracle: f64, deviation: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, oracle, deviation, tolerance: Some(tolerance), pass: deviation <= tolerance }
    }

    pub fn absolute(name: &str, value: f64, oracle: f64, tolerance: f64) -> Self {
        Self::bound(name, value, oracle, (value - oracle).abs(), tolerance)
    }

    pub fn relative(name: &str, value: f64, oracle: f64, tolerance: f64) -> Self {
        Self::bound(name, value, oracle, (value - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE), tolerance)
    }

    pub fn info(name: &str, value: f64, oracle: f64) -> Self {
        Self { name: name.into(), value, oracle, deviation: (value - oracle).abs(), tolerance: None, pass: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    pub regular: bool,
    pub strongly_regular: bool,
    pub lambda_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub value: f64,
    pub oracle: f64,
    pub error: f64,
    /// `log2(error(N/2) / error(N))`, absent on the first row.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub columns: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    /// The resolved configuration; rerunning it reproduces the report.
    pub config: RunConfig,
    pub digest: Digest,
    pub seed: u64,
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<Residuals>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regularity: Option<Regularity>,
    pub values: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub convergence: Vec<ConvergenceRow>,
    pub artifacts: Vec<Artifact>,
    pub timing_ms: BTreeMap<String, f64>,
    pub pass: bool,
}

impl RunReport {
    pub fn new(command: &str, config: &RunConfig, problem: &ProblemInstance, threads: usize) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            digest: Digest::of(problem),
            seed: config.run.seed,
            threads,
            residuals: None,
            regularity: None,
            values: BTreeMap::new(),
            checks: Vec::new(),
            convergence: Vec::new(),
            artifacts: Vec::new(),
            timing_ms: BTreeMap::new(),
            pass: true,
        }
    }

    pub fn check(&mut self, c: Check) {
        self.pass &= c.pass;
        self.checks.push(c);
    }

    pub fn value(&mut self, name: &str, v: f64) {
        self.values.insert(name.into(), v);
    }

    pub fn get_check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}
