//! CSV tables. Floats use 17 significant digits so they round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DMatrix;

use vlq_core::feedback::Strategy;
use vlq_core::{KernelField, NodeField, PyramidField, RiccatiSolution, SquareField, TimeGrid};

use crate::report::Artifact;

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn entry_columns(name: &str, rows: usize, cols: usize) -> Vec<String> {
    (0..rows).flat_map(|r| (0..cols).map(move |c| format!("{name}_{r}_{c}"))).collect()
}

fn push_entries(line: &mut Vec<String>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            line.push(fmt(m[(r, c)]));
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(index: &[&str], name: &str, shape: (usize, usize)) -> Self {
        let mut header: Vec<String> = index.iter().map(|s| s.to_string()).collect();
        header.extend(entry_columns(name, shape.0, shape.1));
        Self { header, rows: Vec::new() }
    }

    fn row(&mut self, index: &[String], m: &DMatrix<f64>) {
        let mut line = index.to_vec();
        push_entries(&mut line, m);
        self.rows.push(line);
    }

    fn write(&self, dir: &Path, file: &str) -> Result<Artifact> {
        let path = dir.join(file);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()?;
        Ok(Artifact { file: file.into(), columns: self.header.join(",") })
    }
}

fn node_table(name: &str, f: &NodeField, grid: &TimeGrid) -> Table {
    let mut t = Table::new(&["k", "t"], name, f.shape());
    for k in 0..=f.n() {
        t.row(&[k.to_string(), fmt(grid.node(k))], &f.get(k).into_owned());
    }
    t
}

/// Entries `(i, k)` with `i > k`.
fn triangle_table(name: &str, f: &KernelField, grid: &TimeGrid) -> Table {
    let mut t = Table::new(&["i", "k", "t_i", "t_k"], name, f.shape());
    for k in 0..f.n() {
        for i in k + 1..=f.n() {
            t.row(&[i.to_string(), k.to_string(), fmt(grid.node(i)), fmt(grid.node(k))], &f.get(i, k).into_owned());
        }
    }
    t
}

fn square_table(name: &str, f: &SquareField) -> Table {
    let mut t = Table::new(&["r", "k"], name, f.shape());
    for k in 0..=f.n() {
        for r in 0..=f.n() {
            t.row(&[r.to_string(), k.to_string()], &f.get(r, k).into_owned());
        }
    }
    t
}

/// Stored half `k < j <= i <= N`; the upper half is the block transpose.
fn pyramid_table(name: &str, f: &PyramidField) -> Table {
    let d = f.dim();
    let mut t = Table::new(&["i", "j", "k"], name, (d, d));
    for k in 0..f.n() {
        for j in k + 1..=f.n() {
            for i in j..=f.n() {
                t.row(&[i.to_string(), j.to_string(), k.to_string()], &f.get(i, j, k));
            }
        }
    }
    t
}

/// Writes the solution and strategy tables under `dir`.
pub fn write_solution(dir: &Path, sol: &RiccatiSolution, strategy: Option<&Strategy>, grid: &TimeGrid) -> Result<Vec<Artifact>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut out = vec![
        node_table("p1", &sol.p1, grid).write(dir, "p1.csv")?,
        node_table("p2", &sol.p2, grid).write(dir, "p2.csv")?,
        triangle_table("p3", &sol.p3, grid).write(dir, "p3.csv")?,
        pyramid_table("p4", &sol.p4).write(dir, "p4.csv")?,
        node_table("rhat", &sol.rhat, grid).write(dir, "rhat.csv")?,
    ];
    if let Some(s) = strategy {
        out.push(node_table("theta1", &s.theta1, grid).write(dir, "theta1.csv")?);
        out.push(square_table("theta2", &s.theta2).write(dir, "theta2.csv")?);
        out.push(node_table("theta3", &s.theta3, grid).write(dir, "theta3.csv")?);
        out.push(node_table("v", &s.v, grid).write(dir, "v.csv")?);
    }
    Ok(out)
}
