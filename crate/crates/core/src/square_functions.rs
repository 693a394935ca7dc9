//! Square functions: vertical g-functions, the discrete square function of a
//! Markov operator, and the norm-level Hytönen–Naor difference functional.
//!
//! Time integrals run over a [`TimeGrid`]; per-time work is parallel but the
//! sums are taken sequentially in grid order so results do not depend on the
//! thread count.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::measure_markov::{spectral, MarkovOperator, WeightedSpace};
use crate::semigroup_calculus::{derivative_multiplier, FracParams, GridKernel, Semigroup, TimeGrid};
use crate::vector_spaces::{lp_scalar_norm, x_norm, BanachParams, VectorField};

/// Nonnegative function on `Ω`, with the numerical error budget it was computed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseFunction {
    mu: Vec<f64>,
    values: Vec<f64>,
    /// Truncation bound of the sum or integral, per unit amplitude.
    pub error_budget: f64,
}

impl PointwiseFunction {
    pub fn new(space: &WeightedSpace, values: Vec<f64>, error_budget: f64) -> Result<Self> {
        if values.len() != space.len() {
            return invalid(format!("{} values for {} atoms", values.len(), space.len()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return invalid(format!("pointwise square functions are nonnegative, got {v}"));
        }
        Ok(Self { mu: space.mu().to_vec(), values, error_budget })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// `(Σ_i μ_i G(ω_i)^p)^{1/p}`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_scalar_norm(&self.mu, &self.values, p)
    }

    /// CSV with header `atom,value`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "atom,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i},{v:e}")?;
        }
        Ok(())
    }
}

/// Which time family a g-function integrates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SquareKernel {
    /// `t^k ∂^k T_t`.
    Heat,
    /// `t^k ∂^k M^α_t`.
    Fractional(Complex64),
    /// `t^k ∂^k P_t`.
    Poisson,
}

impl SquareKernel {
    fn grid_kernel(self) -> GridKernel {
        match self {
            Self::Heat => GridKernel::Heat,
            Self::Poisson => GridKernel::Poisson,
            Self::Fractional(a) => GridKernel::Fractional { re: a.re, im: a.im },
        }
    }
}

/// `G(ω) = (∫_0^∞ ‖t^k ∂^k M^α_t f(ω)‖_X^q dt/t)^{1/q}`; `α = 0` is the heat g-function.
pub fn g_function(
    sg: &Semigroup,
    f: &VectorField,
    alpha: Complex64,
    k: u32,
    q: f64,
    grid: &TimeGrid,
) -> Result<PointwiseFunction> {
    let kernel = if alpha == Complex64::new(0.0, 0.0) { SquareKernel::Heat } else { SquareKernel::Fractional(alpha) };
    g_function_with(sg, f, kernel, k, q, grid)
}

pub fn g_function_with(
    sg: &Semigroup,
    f: &VectorField,
    kernel: SquareKernel,
    k: u32,
    q: f64,
    grid: &TimeGrid,
) -> Result<PointwiseFunction> {
    if k == 0 {
        return invalid("g-functions need k ≥ 1");
    }
    if !(q > 1.0) {
        return invalid(format!("q must exceed 1, got {q}"));
    }
    sg.check_field(f)?;
    grid.check(sg, kernel.grid_kernel(), k, q)?;
    let dec = sg.decomposition();
    let coeffs = dec.coefficients(f.values());
    let a = sg.generator_eigenvalues();
    let frac = match kernel {
        SquareKernel::Fractional(alpha) => Some(FracParams::new(alpha, k)?),
        _ => None,
    };
    let n = f.len();
    let per_time: Vec<Vec<f64>> = grid
        .points
        .par_iter()
        .map(|&t| {
            let rows: Vec<f64> = match (kernel, frac) {
                (SquareKernel::Fractional(_), Some(params)) => {
                    let mult: Vec<Complex64> = a.iter().map(|&aj| params.multiplier(t * aj)).collect();
                    let re = apply_rows(dec.eigenvectors(), &coeffs, |j| mult[j].re);
                    let im = apply_rows(dec.eigenvectors(), &coeffs, |j| mult[j].im);
                    (0..n)
                        .map(|i| {
                            let row = re.row(i).iter().zip(im.row(i).iter()).map(|(x, y)| x.hypot(*y)).collect::<Vec<_>>();
                            x_norm(row, q).powf(q)
                        })
                        .collect()
                }
                _ => {
                    let m = |j: usize| match kernel {
                        SquareKernel::Poisson => derivative_multiplier(a[j].sqrt(), k, t),
                        _ => derivative_multiplier(a[j], k, t),
                    };
                    let vals = apply_rows(dec.eigenvectors(), &coeffs, m);
                    vals.row_iter().map(|r| x_norm(r.iter().copied(), q).powf(q)).collect()
                }
            };
            rows
        })
        .collect();
    let mut acc = vec![0.0; n];
    for (row, w) in per_time.iter().zip(&grid.weights) {
        for (s, v) in acc.iter_mut().zip(row) {
            *s += w * v;
        }
    }
    let values = acc.into_iter().map(|s| s.powf(1.0 / q)).collect();
    PointwiseFunction::new(f.space(), values, grid.tail_bound)
}

/// `(t, ‖t^k ∂^k K_t f‖_{L_p(Ω;X)})` at every grid point, for plotting the integrand.
pub fn g_profile(
    sg: &Semigroup,
    f: &VectorField,
    kernel: SquareKernel,
    k: u32,
    params: &BanachParams,
    grid: &TimeGrid,
) -> Result<Vec<(f64, f64)>> {
    sg.check_field(f)?;
    grid.points
        .par_iter()
        .map(|&t| {
            let norm = match kernel {
                SquareKernel::Heat => sg.apply(f, |a| derivative_multiplier(a, k, t))?.norm(params.p, params.q),
                SquareKernel::Poisson => sg.apply(f, |a| derivative_multiplier(a.sqrt(), k, t))?.norm(params.p, params.q),
                SquareKernel::Fractional(alpha) => sg.frac_m_derivative(alpha, k, t, f)?.norm(params.p, params.q),
            };
            Ok((t, norm))
        })
        .collect()
}

fn apply_rows(vectors: &DMatrix<f64>, coeffs: &DMatrix<f64>, m: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let mut scaled = coeffs.clone();
    for j in 0..scaled.nrows() {
        scaled.row_mut(j).scale_mut(m(j));
    }
    vectors * scaled
}

/// Truncation of the discrete square function and its tail bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTruncation {
    pub terms: usize,
    /// `Σ_{n>N} n^{q−1} λ*^{q(n−1)}`, the tail per unit amplitude.
    pub tail_bound: f64,
    pub second_modulus: f64,
}

const MAX_DISCRETE_TERMS: usize = 50_000_000;

/// Smallest admissible `N` for the geometric tail with ratio `λ*`.
pub fn discrete_truncation(second_modulus: f64, q: f64, tol: f64) -> Result<DiscreteTruncation> {
    let lam = second_modulus;
    if lam >= 1.0 {
        return Err(LabError::TruncationFailure(format!(
            "non-fixed eigenvalue of modulus {lam}; the discrete square function does not converge geometrically"
        )));
    }
    if lam == 0.0 {
        return Ok(DiscreteTruncation { terms: 16, tail_bound: 0.0, second_modulus: lam });
    }
    let start = (tol * (1.0 - lam * lam)).ln() / (2.0 * lam.ln());
    let mut n = (start.ceil().max(16.0)) as usize;
    loop {
        let tail = discrete_tail(lam, q, n);
        if tail <= tol {
            return Ok(DiscreteTruncation { terms: n, tail_bound: tail, second_modulus: lam });
        }
        n = n + n / 2 + 1;
        if n > MAX_DISCRETE_TERMS {
            return Err(LabError::TruncationFailure(format!("λ* = {lam} needs more than {MAX_DISCRETE_TERMS} terms")));
        }
    }
}

/// `Σ_{n>N} n^{q−1} x^{n−1}` with `x = λ^q`, summed until the terms are negligible.
fn discrete_tail(lam: f64, q: f64, terms: usize) -> f64 {
    let x = lam.powf(q);
    let ln_x = x.ln();
    let mut sum = 0.0;
    let mut n = terms + 1;
    loop {
        let term = ((q - 1.0) * (n as f64).ln() + (n - 1) as f64 * ln_x).exp();
        sum += term;
        // past the maximum of n^{q−1} x^n the terms decrease geometrically
        if (n as f64) > (q - 1.0) / -ln_x && term <= 1e-18 * sum.max(1e-300) {
            break;
        }
        if term == 0.0 {
            break;
        }
        n += 1;
    }
    sum
}

/// `(Σ_{n=1}^N n^{q−1} ‖(Tⁿ − Tⁿ⁻¹) f(ω)‖_X^q)^{1/q}` with iterates by repeated application.
pub fn discrete_square(t_op: &MarkovOperator, f: &VectorField, q: f64, tol: f64) -> Result<PointwiseFunction> {
    if !(q > 1.0) {
        return invalid(format!("q must exceed 1, got {q}"));
    }
    if f.space() != t_op.space() {
        return invalid("field does not live on the operator's space");
    }
    let dec = spectral(t_op)?;
    let trunc = discrete_truncation(dec.second_modulus(), q, tol)?;
    let mut prev = f.values().clone();
    let mut acc = vec![0.0; f.len()];
    for n in 1..=trunc.terms {
        let next = t_op.matrix() * &prev;
        let diff = &next - &prev;
        let weight = (n as f64).powf(q - 1.0);
        for (i, s) in acc.iter_mut().enumerate() {
            *s += weight * x_norm(diff.row(i).iter().copied(), q).powf(q);
        }
        prev = next;
    }
    let values = acc.into_iter().map(|s| s.powf(1.0 / q)).collect();
    PointwiseFunction::new(f.space(), values, trunc.tail_bound)
}

/// `(∫_0^∞ ‖(T_t − T_{3t}) f‖^q_{L_q(Ω;X)} dt/t)^{1/q}` (norm-level) on a `k = 1` heat grid.
pub fn hn_functional(sg: &Semigroup, f: &VectorField, q: f64, grid: &TimeGrid) -> Result<f64> {
    Ok(hn_functional_with_budget(sg, f, q, grid)?.0)
}

/// [`hn_functional`] together with its tail bound per unit amplitude (`2^q` times the grid's).
pub fn hn_functional_with_budget(sg: &Semigroup, f: &VectorField, q: f64, grid: &TimeGrid) -> Result<(f64, f64)> {
    if !(q > 1.0) {
        return invalid(format!("q must exceed 1, got {q}"));
    }
    sg.check_field(f)?;
    grid.check(sg, GridKernel::Heat, 1, q)?;
    let dec = sg.decomposition();
    let coeffs = dec.coefficients(f.values());
    let a = sg.generator_eigenvalues();
    let mu = f.space().mu();
    let per_time: Vec<f64> = grid
        .points
        .par_iter()
        .map(|&t| {
            let vals = apply_rows(dec.eigenvectors(), &coeffs, |j| (-t * a[j]).exp() - (-3.0 * t * a[j]).exp());
            let rows: Vec<f64> = vals.row_iter().map(|r| x_norm(r.iter().copied(), q)).collect();
            lp_scalar_norm(mu, &rows, q).powf(q)
        })
        .collect();
    let total: f64 = per_time.iter().zip(&grid.weights).map(|(v, w)| v * w).sum();
    Ok((total.powf(1.0 / q), 2f64.powf(q) * grid.tail_bound))
}
