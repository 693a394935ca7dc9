//! File formats: chain and field JSON, spectrum and profile CSV.
//!
//! CSV files are UTF-8 with a header row and `.` as decimal separator.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::functional_calculus::{stolz_contains, StolzDomain};
use crate::measure_markov::{MarkovOperator, SpectralDecomposition, WeightedSpace};
use crate::vector_spaces::VectorField;

/// `{"n", "mu", "matrix", "root"}`; `root` is an optional nested chain with `root² = matrix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub n: usize,
    pub mu: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<Box<ChainFile>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return invalid(format!("{what} row {i} has {} entries, expected {ncols}", r.len()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ChainFile {
    pub fn from_operator(op: &MarkovOperator) -> Self {
        Self {
            n: op.len(),
            mu: op.space().mu().to_vec(),
            matrix: rows(op.matrix()),
            root: op.root().map(|r| Box::new(Self::from_operator(r))),
        }
    }

    /// Rebuild the operator, re-checking every invariant.
    pub fn to_operator(&self) -> Result<MarkovOperator> {
        if self.mu.len() != self.n || self.matrix.len() != self.n {
            return invalid(format!(
                "n = {} but mu has {} entries and matrix {} rows",
                self.n,
                self.mu.len(),
                self.matrix.len()
            ));
        }
        let space = WeightedSpace::new(&self.mu)?;
        let op = MarkovOperator::new(space, from_rows(&self.matrix, self.n, "matrix")?)?;
        match &self.root {
            Some(root) => op.with_root(root.to_operator()?),
            None => Ok(op),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `{"n", "d", "values"}` with one row of `d` values per atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldFile {
    pub n: usize,
    pub d: usize,
    pub values: Vec<Vec<f64>>,
}

impl FieldFile {
    pub fn from_field(f: &VectorField) -> Self {
        Self { n: f.len(), d: f.dim(), values: rows(f.values()) }
    }

    pub fn to_field(&self, space: &WeightedSpace) -> Result<VectorField> {
        if self.n != space.len() || self.values.len() != self.n {
            return invalid(format!(
                "field has n = {} and {} rows but the chain has {} atoms",
                self.n,
                self.values.len(),
                space.len()
            ));
        }
        VectorField::new(space.clone(), from_rows(&self.values, self.d, "field")?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn io(e: std::io::Error) -> LabError {
    LabError::InvalidInput(format!("write failed: {e}"))
}

/// Spectrum CSV `re,im,in_stolz,gamma`, one row per eigenvalue; returns the number outside the domain.
pub fn write_spectrum_csv(dec: &SpectralDecomposition, domain: &StolzDomain, mut out: impl Write) -> Result<usize> {
    writeln!(out, "re,im,in_stolz,gamma").map_err(io)?;
    let mut outside = 0;
    for &lam in dec.eigenvalues() {
        let inside = stolz_contains(domain, lam.into());
        outside += usize::from(!inside);
        writeln!(out, "{lam:e},{:e},{},{:e}", 0.0, u8::from(inside), domain.gamma()).map_err(io)?;
    }
    Ok(outside)
}

/// Boundary of `B_γ` as CSV `re,im`.
pub fn write_boundary_csv(domain: &StolzDomain, points: usize, mut out: impl Write) -> Result<()> {
    writeln!(out, "re,im").map_err(io)?;
    for z in domain.boundary_polyline(points) {
        writeln!(out, "{:e},{:e}", z.re, z.im).map_err(io)?;
    }
    Ok(())
}

/// Two-column CSV with the given header names.
pub fn write_pairs_csv(header: (&str, &str), pairs: &[(f64, f64)], mut out: impl Write) -> Result<()> {
    writeln!(out, "{},{}", header.0, header.1).map_err(io)?;
    for (x, y) in pairs {
        writeln!(out, "{x:e},{y:e}").map_err(io)?;
    }
    Ok(())
}
