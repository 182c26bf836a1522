//! Parametric kernel families and their sampling on the triangle.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::KernelField;
use crate::grid::TimeGrid;

/// Scalar profile used by separable and convolution kernels and by inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFn {
    Constant { value: f64 },
    /// `scale * exp(rate * x)`
    Exp { scale: f64, rate: f64 },
    /// `sum_n coeffs[n] * x^n`
    Poly { coeffs: Vec<f64> },
    /// `scale * cos(freq * x + phase)`
    Cos { scale: f64, freq: f64, phase: f64 },
}

impl ScalarFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Constant { value } => *value,
            ScalarFn::Exp { scale, rate } => scale * (rate * x).exp(),
            ScalarFn::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            ScalarFn::Cos { scale, freq, phase } => scale * (freq * x + phase).cos(),
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        let ok = match self {
            ScalarFn::Constant { value } => value.is_finite(),
            ScalarFn::Exp { scale, rate } => scale.is_finite() && rate.is_finite(),
            ScalarFn::Poly { coeffs } => coeffs.iter().all(|c| c.is_finite()),
            ScalarFn::Cos { scale, freq, phase } => scale.is_finite() && freq.is_finite() && phase.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

/// A matrix given either as a scalar or as row-major nested arrays.
///
/// A scalar fills every entry of the requested shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixSpec::Rows(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Materializes the matrix, filling a scalar across the whole shape.
    pub fn filled(&self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixSpec::Scalar(x) => DMatrix::from_element(rows, cols, *x),
            MatrixSpec::Rows(r) => rows_to_matrix(r, rows, cols, what)?,
        };
        finite(m, what)
    }

    /// Materializes the matrix, reading a scalar as a multiple of the identity.
    pub fn scaled_identity(&self, n: usize, what: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixSpec::Scalar(x) => DMatrix::identity(n, n) * *x,
            MatrixSpec::Rows(r) => rows_to_matrix(r, n, n, what)?,
        };
        finite(m, what)
    }
}

fn finite(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(m)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn rows_to_matrix(r: &[Vec<f64>], rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if r.len() != rows || r.iter().any(|row| row.len() != cols) {
        let got_cols = r.first().map_or(0, Vec::len);
        return Err(Error::Dimension(format!(
            "{what}: expected {rows}x{cols}, got {}x{got_cols}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| r[i][j]))
}

fn unit() -> MatrixSpec {
    MatrixSpec::Scalar(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantParams {
    pub matrix: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparableParams {
    #[serde(default = "unit")]
    pub matrix: MatrixSpec,
    pub g: ScalarFn,
    pub h: ScalarFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvolutionParams {
    #[serde(default = "unit")]
    pub matrix: MatrixSpec,
    pub k: ScalarFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FractionalParams {
    #[serde(default = "unit")]
    pub matrix: MatrixSpec,
    pub c: f64,
    #[serde(rename = "H")]
    pub hurst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableParams {
    /// Blocks in row-major triangle order: `i = 1..=N`, then `j = 0..i`.
    pub values: Vec<MatrixSpec>,
    #[serde(default)]
    pub cell_averaged: bool,
}

/// Kernel family on the triangle `s < t`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    #[default]
    Zero,
    /// `M`
    Constant(ConstantParams),
    /// `M g(t) h(s)`
    Separable(SeparableParams),
    /// `M k(t - s)`
    Convolution(ConvolutionParams),
    /// `M c (t - s)^(H - 1/2)`, always cell-averaged in `s`.
    Fractional(FractionalParams),
    Table(TableParams),
}

impl KernelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Zero => "zero",
            KernelSpec::Constant(_) => "constant",
            KernelSpec::Separable(_) => "separable",
            KernelSpec::Convolution(_) => "convolution",
            KernelSpec::Fractional(_) => "fractional",
            KernelSpec::Table(_) => "table",
        }
    }

    pub fn constant(m: &DMatrix<f64>) -> Self {
        KernelSpec::Constant(ConstantParams { matrix: MatrixSpec::from_matrix(m) })
    }

    pub fn scalar_constant(x: f64) -> Self {
        KernelSpec::Constant(ConstantParams { matrix: MatrixSpec::Scalar(x) })
    }

    pub fn fractional(c: f64, hurst: f64) -> Self {
        KernelSpec::Fractional(FractionalParams { matrix: unit(), c, hurst })
    }

    pub fn from_field(f: &KernelField) -> Self {
        let mut values = Vec::with_capacity(f.n() * (f.n() + 1) / 2);
        for i in 1..=f.n() {
            for j in 0..i {
                values.push(MatrixSpec::from_matrix(&f.get(i, j).into_owned()));
            }
        }
        KernelSpec::Table(TableParams { values, cell_averaged: f.cell_averaged })
    }

    /// Parameter checks that do not depend on the grid.
    pub fn check(&self, what: &str) -> Result<()> {
        match self {
            KernelSpec::Separable(p) => {
                p.g.check(what)?;
                p.h.check(what)
            }
            KernelSpec::Convolution(p) => p.k.check(what),
            KernelSpec::Fractional(p) => {
                if !p.c.is_finite() || !p.hurst.is_finite() {
                    return Err(Error::NonFinite(what.to_string()));
                }
                if p.hurst <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "{what}: fractional kernel requires H > 0, got H = {}",
                        p.hurst
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Cell average of `(t_i - s)^(H - 1/2)` over `s` in `[t_j, t_{j+1}]`.
pub fn fractional_cell_average(hurst: f64, i: usize, j: usize, dt: f64) -> f64 {
    let p = hurst + 0.5;
    let hi = ((i - j) as f64 * dt).powf(p);
    let lo = ((i - j - 1) as f64 * dt).powf(p);
    (hi - lo) / (p * dt)
}

/// Materializes a kernel spec as a `rows x cols` field on the grid.
pub fn sample_kernel(spec: &KernelSpec, grid: &TimeGrid, rows: usize, cols: usize) -> Result<KernelField> {
    sample_named(spec, grid, rows, cols, "kernel")
}

pub(crate) fn sample_named(
    spec: &KernelSpec,
    grid: &TimeGrid,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<KernelField> {
    spec.check(what)?;
    let n = grid.n();
    let dt = grid.dt();
    let field = match spec {
        KernelSpec::Zero => KernelField::zeros(n, rows, cols),
        KernelSpec::Constant(p) => {
            let m = p.matrix.filled(rows, cols, what)?;
            KernelField::from_fn(n, rows, cols, |_, _| m.clone())
        }
        KernelSpec::Separable(p) => {
            let m = p.matrix.filled(rows, cols, what)?;
            KernelField::from_fn(n, rows, cols, |i, j| &m * (p.g.eval(grid.node(i)) * p.h.eval(grid.node(j))))
        }
        KernelSpec::Convolution(p) => {
            let m = p.matrix.filled(rows, cols, what)?;
            KernelField::from_fn(n, rows, cols, |i, j| &m * p.k.eval((i - j) as f64 * dt))
        }
        KernelSpec::Fractional(p) => {
            let m = p.matrix.filled(rows, cols, what)?;
            let mut f = KernelField::from_fn(n, rows, cols, |i, j| &m * (p.c * fractional_cell_average(p.hurst, i, j, dt)));
            f.cell_averaged = true;
            f
        }
        KernelSpec::Table(p) => {
            let expected = n * (n + 1) / 2;
            if p.values.len() != expected {
                return Err(Error::Dimension(format!(
                    "{what}: table needs {expected} blocks for N = {n}, got {}",
                    p.values.len()
                )));
            }
            let mut f = KernelField::zeros(n, rows, cols);
            let mut it = p.values.iter();
            for i in 1..=n {
                for j in 0..i {
                    let m = it.next().expect("length checked").filled(rows, cols, what)?;
                    f.set(i, j, &m);
                }
            }
            f.cell_averaged = p.cell_averaged;
            f
        }
    };
    if !field.is_finite() {
        return Err(Error::NonFinite(format!("{what}: sampled kernel")));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    /// Composite Gauss-Legendre (5 points) on a graded mesh towards the
    /// endpoint singularity; independent of the closed form.
    fn quad_power(a: f64, lo: f64, hi: f64, tip: f64) -> f64 {
        const X: [f64; 5] = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
        const W: [f64; 5] = [0.236_926_885_056_189_1, 0.478_628_670_499_366_5, 0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1];
        // integrate u^a over [tip - hi, tip - lo], graded towards the lower
        // end where the integrand is singular when `hi = tip`
        let (u0, u1) = (tip - hi, tip - lo);
        let mut edges = vec![u1];
        let mut h = (u1 - u0) / 2.0;
        while h > 1e-40 * (u1 - u0) {
            edges.push(u0 + h);
            h /= 2.0;
        }
        edges.push(u0);
        edges.reverse();
        let mut total = 0.0;
        for w in edges.windows(2) {
            // four panels per cell keep each panel well away from the tip
            let step = (w[1] - w[0]) / 4.0;
            for p in 0..4 {
                let a0 = w[0] + p as f64 * step;
                let (c, r) = (a0 + step / 2.0, step / 2.0);
                total += r * X.iter().zip(W.iter()).map(|(x, wt)| wt * (c - r * x).powf(a)).sum::<f64>();
            }
        }
        total
    }

    #[test]
    fn constant_family_fills_triangle() {
        let f = sample_kernel(&KernelSpec::scalar_constant(2.0), &grid(1.0, 3), 1, 1).unwrap();
        assert_eq!(f.as_slice().len(), 6);
        assert!(f.as_slice().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn fractional_half_is_identically_one() {
        let f = sample_kernel(&KernelSpec::fractional(1.0, 0.5), &grid(1.0, 5), 1, 1).unwrap();
        assert!(f.as_slice().iter().all(|&x| (x - 1.0).abs() < 1e-15));
        assert!(f.cell_averaged);
    }

    #[test]
    fn fractional_three_quarters_matches_antiderivative_and_quadrature() {
        let g = grid(1.0, 4);
        let f = sample_kernel(&KernelSpec::fractional(1.0, 0.75), &g, 1, 1).unwrap();
        let expected = (0.5f64.powf(1.25) - 0.25f64.powf(1.25)) / (1.25 * 0.25);
        assert!((f.get(2, 0)[(0, 0)] - expected).abs() < 1e-15);
        for i in 1..=4 {
            for j in 0..i {
                let q = quad_power(0.25, g.node(j), g.node(j + 1), g.node(i)) / g.dt();
                assert!((f.get(i, j)[(0, 0)] - q).abs() < 1e-10, "({i},{j})");
            }
        }
    }

    #[test]
    fn singular_fractional_matches_quadrature() {
        let g = grid(1.0, 8);
        let f = sample_kernel(&KernelSpec::fractional(0.7, 0.1), &g, 1, 1).unwrap();
        for i in 1..=8 {
            for j in 0..i {
                let q = 0.7 * quad_power(-0.4, g.node(j), g.node(j + 1), g.node(i)) / g.dt();
                assert!((f.get(i, j)[(0, 0)] - q).abs() < 1e-9 * q.abs().max(1.0), "({i},{j})");
            }
        }
    }

    #[test]
    fn rejects_nonpositive_hurst_and_bad_tables() {
        let g = grid(1.0, 3);
        assert!(matches!(
            sample_kernel(&KernelSpec::fractional(1.0, -0.1), &g, 1, 1),
            Err(Error::InvalidParameter(_))
        ));
        assert!(sample_kernel(&KernelSpec::fractional(1.0, 0.0), &g, 1, 1).is_err());
        let short = KernelSpec::Table(TableParams { values: vec![MatrixSpec::Scalar(1.0); 5], cell_averaged: false });
        assert!(matches!(sample_kernel(&short, &g, 1, 1), Err(Error::Dimension(_))));
        let wrong = KernelSpec::Table(TableParams {
            values: vec![MatrixSpec::Rows(vec![vec![1.0, 2.0]]); 6],
            cell_averaged: false,
        });
        assert!(sample_kernel(&wrong, &g, 1, 1).is_err());
    }

    #[test]
    fn nonsingular_families_are_pointwise_under_refinement() {
        let specs = [
            KernelSpec::Separable(SeparableParams {
                matrix: MatrixSpec::Rows(vec![vec![0.3, -1.1], vec![2.0, 0.7]]),
                g: ScalarFn::Exp { scale: 1.3, rate: -0.7 },
                h: ScalarFn::Cos { scale: 0.5, freq: 2.1, phase: 0.3 },
            }),
            KernelSpec::Convolution(ConvolutionParams {
                matrix: MatrixSpec::Scalar(1.0),
                k: ScalarFn::Poly { coeffs: vec![0.2, -1.0, 0.35] },
            }),
        ];
        for spec in &specs {
            let coarse = sample_kernel(spec, &grid(1.7, 6), 2, 2).unwrap();
            let fine = sample_kernel(spec, &grid(1.7, 12), 2, 2).unwrap();
            for i in 1..=6 {
                for j in 0..i {
                    assert_eq!(coarse.get(i, j), fine.get(2 * i, 2 * j));
                }
            }
        }
    }

    #[test]
    fn table_round_trips_through_spec() {
        let g = grid(1.0, 4);
        let spec = KernelSpec::fractional(1.3, 0.2);
        let f = sample_kernel(&spec, &g, 1, 1).unwrap();
        let back = sample_kernel(&KernelSpec::from_field(&f), &g, 1, 1).unwrap();
        assert_eq!(f, back);
    }
}
