//! Problem model: dimensions, grid, kernels, cost weights and input condition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{KernelField, NodeField};
use crate::grid::TimeGrid;
use crate::kernels::{sample_named, KernelSpec, MatrixSpec, ScalarFn};
use crate::linalg::{asymmetry, min_eig_sym, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d: usize,
    pub l: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSet {
    #[serde(rename = "A", default)]
    pub a: KernelSpec,
    #[serde(rename = "B", default)]
    pub b: KernelSpec,
    #[serde(rename = "C", default)]
    pub c: KernelSpec,
    #[serde(rename = "D", default)]
    pub d: KernelSpec,
}

impl KernelSet {
    pub fn zero() -> Self {
        Self { a: KernelSpec::Zero, b: KernelSpec::Zero, c: KernelSpec::Zero, d: KernelSpec::Zero }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightTable {
    pub table: Vec<MatrixSpec>,
}

/// A running weight: a constant (scalar means a multiple of the identity) or
/// one block per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Constant(MatrixSpec),
    Table(WeightTable),
}

impl WeightSpec {
    pub fn scalar(x: f64) -> Self {
        WeightSpec::Constant(MatrixSpec::Scalar(x))
    }

    fn materialize(&self, n: usize, dim: usize, what: &str) -> Result<NodeField> {
        match self {
            WeightSpec::Constant(m) => Ok(NodeField::constant(n, &symmetrize(&m.scaled_identity(dim, what)?))),
            WeightSpec::Table(t) => {
                if t.table.len() != n + 1 {
                    return Err(Error::Dimension(format!(
                        "{what}: table needs {} nodes, got {}",
                        n + 1,
                        t.table.len()
                    )));
                }
                let mut f = NodeField::zeros(n, dim, dim);
                for (k, m) in t.table.iter().enumerate() {
                    f.set(k, &symmetrize(&m.scaled_identity(dim, what)?));
                }
                Ok(f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(rename = "Q")]
    pub q: WeightSpec,
    #[serde(rename = "R")]
    pub r: WeightSpec,
    #[serde(rename = "G")]
    pub g: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dims: Dims,
    pub grid: GridSpec,
    /// Omitted kernels are zero.
    #[serde(default = "KernelSet::zero")]
    pub kernels: KernelSet,
    pub cost: CostSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub d: usize,
    pub l: usize,
    pub grid: TimeGrid,
    pub a: KernelField,
    pub b: KernelField,
    pub c: KernelField,
    pub d_ker: KernelField,
    pub q: NodeField,
    pub r: NodeField,
    pub g: DMatrix<f64>,
    /// Kernel family names for A, B, C, D as configured.
    pub families: [String; 4],
}

pub fn build_problem(config: &ProblemConfig) -> Result<ProblemInstance> {
    let (d, l) = (config.dims.d, config.dims.l);
    if d == 0 || l == 0 {
        return Err(Error::Dimension(format!("dimensions must be positive, got d = {d}, l = {l}")));
    }
    let grid = TimeGrid::new(config.grid.horizon, config.grid.n)?;
    let n = grid.n();
    let k = &config.kernels;
    let a = sample_named(&k.a, &grid, d, d, "kernel A")?;
    let b = sample_named(&k.b, &grid, d, l, "kernel B")?;
    let c = sample_named(&k.c, &grid, d, d, "kernel C")?;
    let d_ker = sample_named(&k.d, &grid, d, l, "kernel D")?;
    let q = config.cost.q.materialize(n, d, "cost Q")?;
    let r = config.cost.r.materialize(n, l, "cost R")?;
    let g = symmetrize(&config.cost.g.scaled_identity(d, "cost G")?);
    let families = [k.a.family(), k.b.family(), k.c.family(), k.d.family()].map(String::from);
    Ok(ProblemInstance { d, l, grid, a, b, c, d_ker, q, r, g, families })
}

impl ProblemInstance {
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    /// Explicit-table config that rebuilds this instance.
    pub fn to_config(&self) -> ProblemConfig {
        let n = self.n();
        let table = |f: &NodeField| {
            WeightSpec::Table(WeightTable {
                table: (0..=n).map(|k| MatrixSpec::from_matrix(&f.get(k).into_owned())).collect(),
            })
        };
        ProblemConfig {
            dims: Dims { d: self.d, l: self.l },
            grid: GridSpec { horizon: self.grid.horizon(), n },
            kernels: KernelSet {
                a: KernelSpec::from_field(&self.a),
                b: KernelSpec::from_field(&self.b),
                c: KernelSpec::from_field(&self.c),
                d: KernelSpec::from_field(&self.d_ker),
            },
            cost: CostSpec { q: table(&self.q), r: table(&self.r), g: MatrixSpec::from_matrix(&self.g) },
        }
    }

    /// Noise-free in the state equation.
    pub fn is_deterministic(&self) -> bool {
        self.c.is_zero() && self.d_ker.is_zero()
    }
}

/// Free-term profile of the input condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorFnSpec {
    Constant(ConstantVector),
    /// `vector * f(t)`
    Profile(ProfileVector),
    /// One vector per node `0..=N`.
    Table(TableVector),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantVector {
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileVector {
    pub vector: Vec<f64>,
    pub f: ScalarFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableVector {
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    #[serde(default)]
    pub tau_index: usize,
    pub phi1: VectorFnSpec,
    /// Defaults to `phi1(T)`.
    #[serde(default)]
    pub phi2: Option<Vec<f64>>,
}

/// `(tau, phi1, phi2)`: start node, free term on nodes `k0..=N` and the
/// terminal seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputCondition {
    pub k0: usize,
    pub phi1: Vec<DVector<f64>>,
    pub phi2: DVector<f64>,
}

impl InputCondition {
    /// `phi1` holds one vector per node `k0..=N`; entry `k` is `phi1[k - k0]`.
    pub fn new(k0: usize, phi1: Vec<DVector<f64>>, phi2: DVector<f64>) -> Self {
        Self { k0, phi1, phi2 }
    }

    /// Constant free term with the classical seed `phi2 = phi1(T)`.
    pub fn constant(problem: &ProblemInstance, k0: usize, x: &DVector<f64>) -> Self {
        let phi1 = vec![x.clone(); problem.n() + 1 - k0];
        Self { k0, phi1, phi2: x.clone() }
    }

    pub fn phi1_at(&self, k: usize) -> &DVector<f64> {
        &self.phi1[k - self.k0]
    }

    pub fn check(&self, problem: &ProblemInstance) -> Result<()> {
        let n = problem.n();
        if self.k0 >= n {
            return Err(Error::InvalidParameter(format!("start index {} must be below N = {n}", self.k0)));
        }
        if self.phi1.len() != n + 1 - self.k0 {
            return Err(Error::Dimension(format!(
                "phi1 needs {} nodes from k0 = {}, got {}",
                n + 1 - self.k0,
                self.k0,
                self.phi1.len()
            )));
        }
        if self.phi1.iter().any(|v| v.len() != problem.d) || self.phi2.len() != problem.d {
            return Err(Error::Dimension(format!("input vectors must have length d = {}", problem.d)));
        }
        if self.phi1.iter().chain(std::iter::once(&self.phi2)).any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("input condition".into()));
        }
        Ok(())
    }
}

pub fn build_input(spec: &InputSpec, problem: &ProblemInstance) -> Result<InputCondition> {
    let n = problem.n();
    let d = problem.d;
    let k0 = spec.tau_index;
    if k0 >= n {
        return Err(Error::InvalidParameter(format!("tau_index {k0} must be below N = {n}")));
    }
    let check_len = |v: &[f64], what: &str| -> Result<()> {
        if v.len() == d {
            Ok(())
        } else {
            Err(Error::Dimension(format!("{what}: expected length {d}, got {}", v.len())))
        }
    };
    let phi1: Vec<DVector<f64>> = match &spec.phi1 {
        VectorFnSpec::Constant(c) => {
            check_len(&c.value, "phi1")?;
            vec![DVector::from_column_slice(&c.value); n + 1 - k0]
        }
        VectorFnSpec::Profile(p) => {
            check_len(&p.vector, "phi1")?;
            let v = DVector::from_column_slice(&p.vector);
            (k0..=n).map(|k| &v * p.f.eval(problem.grid.node(k))).collect()
        }
        VectorFnSpec::Table(t) => {
            if t.values.len() != n + 1 {
                return Err(Error::Dimension(format!("phi1 table needs {} nodes, got {}", n + 1, t.values.len())));
            }
            for v in &t.values {
                check_len(v, "phi1")?;
            }
            t.values[k0..].iter().map(|v| DVector::from_column_slice(v)).collect()
        }
    };
    let phi2 = match &spec.phi2 {
        Some(v) => {
            check_len(v, "phi2")?;
            DVector::from_column_slice(v)
        }
        None => phi1.last().expect("non-empty").clone(),
    };
    let input = InputCondition { k0, phi1, phi2 };
    input.check(problem)?;
    Ok(input)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `max_j (dt sum_{i>j} |F(t_i, t_j)|_F^2)^(1/2)` for A, B, C, D.
    pub kernel_column_norms: [f64; 4],
    pub q_asymmetry: f64,
    pub r_asymmetry: f64,
    pub g_asymmetry: f64,
    /// `min_k lambda_min(R(t_k))`
    pub lambda: f64,
    pub q_min_eig: f64,
    pub g_min_eig: f64,
    pub h4_satisfied: bool,
}

fn column_norm(f: &KernelField, dt: f64) -> f64 {
    let n = f.n();
    (0..n)
        .map(|j| (dt * (j + 1..=n).map(|i| f.get(i, j).norm_squared()).sum::<f64>()).sqrt())
        .fold(0.0, f64::max)
}

pub fn validate_assumptions(problem: &ProblemInstance) -> AssumptionReport {
    let n = problem.n();
    let dt = problem.dt();
    let over_nodes = |f: &NodeField, g: &dyn Fn(&DMatrix<f64>) -> f64, init: f64, pick: fn(f64, f64) -> f64| {
        (0..=n).map(|k| g(&f.get(k).into_owned())).fold(init, pick)
    };
    let lambda = over_nodes(&problem.r, &min_eig_sym, f64::INFINITY, f64::min);
    let q_min_eig = over_nodes(&problem.q, &min_eig_sym, f64::INFINITY, f64::min);
    let g_min_eig = min_eig_sym(&problem.g);
    let tol = 1e-12;
    AssumptionReport {
        kernel_column_norms: [
            column_norm(&problem.a, dt),
            column_norm(&problem.b, dt),
            column_norm(&problem.c, dt),
            column_norm(&problem.d_ker, dt),
        ],
        q_asymmetry: over_nodes(&problem.q, &asymmetry, 0.0, f64::max),
        r_asymmetry: over_nodes(&problem.r, &asymmetry, 0.0, f64::max),
        g_asymmetry: asymmetry(&problem.g),
        lambda,
        q_min_eig,
        g_min_eig,
        h4_satisfied: lambda > 0.0 && q_min_eig >= -tol && g_min_eig >= -tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn zero_config(n: usize) -> ProblemConfig {
        ProblemConfig {
            dims: Dims { d: 1, l: 1 },
            grid: GridSpec { horizon: 1.0, n },
            kernels: KernelSet::zero(),
            cost: CostSpec { q: WeightSpec::scalar(0.0), r: WeightSpec::scalar(1.0), g: MatrixSpec::Scalar(0.0) },
        }
    }

    #[test]
    fn zero_problem_materializes_zero_fields() {
        let p = build_problem(&zero_config(4)).unwrap();
        assert!(p.a.is_zero() && p.b.is_zero() && p.c.is_zero() && p.d_ker.is_zero());
        assert!((0..=4).all(|k| p.r.get(k)[(0, 0)] == 1.0 && p.q.get(k)[(0, 0)] == 0.0));
        let rep = validate_assumptions(&p);
        assert!(rep.h4_satisfied);
        assert_eq!(rep.lambda, 1.0);
    }

    #[test]
    fn nonsymmetric_weight_is_symmetrized_idempotently() {
        let mut cfg = zero_config(4);
        cfg.dims = Dims { d: 2, l: 1 };
        cfg.cost.q = WeightSpec::Constant(MatrixSpec::Rows(vec![vec![1.0, 0.4], vec![0.0, 2.0]]));
        cfg.cost.g = MatrixSpec::Rows(vec![vec![0.0, 1.0], vec![0.5, 0.0]]);
        let p = build_problem(&cfg).unwrap();
        assert_eq!(p.q.get(3).into_owned(), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]));
        assert_eq!(p.g, DMatrix::from_row_slice(2, 2, &[0.0, 0.75, 0.75, 0.0]));
        let again = build_problem(&p.to_config()).unwrap();
        assert_eq!(again.q, p.q);
        assert_eq!(again.r, p.r);
        assert_eq!(again.g, p.g);
        assert_eq!(again.a, p.a);
    }

    #[test]
    fn fractional_b_matches_sampler() {
        let mut cfg = zero_config(4);
        cfg.kernels.b = KernelSpec::fractional(1.0, 0.75);
        let p = build_problem(&cfg).unwrap();
        let direct = crate::kernels::sample_kernel(&KernelSpec::fractional(1.0, 0.75), &p.grid, 1, 1).unwrap();
        assert_eq!(p.b, direct);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let mut cfg = zero_config(4);
        cfg.dims.d = 0;
        assert!(matches!(build_problem(&cfg), Err(Error::Dimension(_))));
        let mut cfg = zero_config(4);
        cfg.cost.g = MatrixSpec::Rows(vec![vec![1.0, 0.0]]);
        assert!(build_problem(&cfg).is_err());
        let mut cfg = zero_config(4);
        cfg.cost.q = WeightSpec::Table(WeightTable { table: vec![MatrixSpec::Scalar(1.0); 3] });
        assert!(build_problem(&cfg).is_err());
        let mut cfg = zero_config(4);
        cfg.cost.r = WeightSpec::scalar(f64::NAN);
        assert!(matches!(build_problem(&cfg), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_r_violates_h4() {
        let mut cfg = zero_config(4);
        cfg.cost.r = WeightSpec::scalar(0.0);
        let rep = validate_assumptions(&build_problem(&cfg).unwrap());
        assert!(!rep.h4_satisfied);
        assert_eq!(rep.lambda, 0.0);
    }

    #[test]
    fn two_by_two_q_eigenvalue() {
        let mut cfg = zero_config(4);
        cfg.dims = Dims { d: 2, l: 2 };
        cfg.cost.q = WeightSpec::Constant(MatrixSpec::Rows(vec![vec![1.0, 0.1], vec![0.1, 1.0]]));
        let rep = validate_assumptions(&build_problem(&cfg).unwrap());
        // eigenvalues of [[a, b], [b, a]] are a -/+ b
        assert!((rep.q_min_eig - 0.9).abs() < 1e-14);
        assert!(rep.h4_satisfied);
    }

    #[test]
    fn column_norm_of_constant_kernel() {
        let mut cfg = zero_config(4);
        cfg.kernels.a = KernelSpec::scalar_constant(2.0);
        let rep = validate_assumptions(&build_problem(&cfg).unwrap());
        // column j = 0 has four entries of 2: sqrt(0.25 * 4 * 4) = 2
        assert!((rep.kernel_column_norms[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn input_defaults_and_validation() {
        let p = build_problem(&zero_config(4)).unwrap();
        let spec = InputSpec {
            tau_index: 1,
            phi1: VectorFnSpec::Profile(ProfileVector { vector: vec![2.0], f: ScalarFn::Poly { coeffs: vec![0.0, 1.0] } }),
            phi2: None,
        };
        let inp = build_input(&spec, &p).unwrap();
        assert_eq!(inp.phi1.len(), 4);
        assert_eq!(inp.phi1_at(2)[0], 1.0);
        assert_eq!(inp.phi2[0], 2.0);
        let bad = InputSpec { tau_index: 4, ..spec.clone() };
        assert!(build_input(&bad, &p).is_err());
        let bad = InputSpec { phi2: Some(vec![1.0, 2.0]), ..spec };
        assert!(build_input(&bad, &p).is_err());
    }
}
