//! Finite weighted measure spaces and symmetric Markovian operators.
//!
//! A [`MarkovOperator`] is a row-stochastic matrix `T` that is reversible with
//! respect to the atom masses `μ` (`μ_i T_ij = μ_j T_ji`), i.e. a positive,
//! unital operator that is self-adjoint on `L_2(μ)` and contractive on every
//! `L_p(μ)`. All spectral work goes through [`SpectralDecomposition`], which
//! diagonalizes `D^{1/2} T D^{-1/2}` and maps the eigenbasis back so that it
//! is orthonormal in `L_2(μ)`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::seed::rng_from;

/// Row-sum, reversibility and positivity tolerance for operators.
pub const OPERATOR_TOL: f64 = 1e-12;
/// Eigenvalues within this distance of 1 span the fixed-point space.
pub const FIXED_CLUSTER_TOL: f64 = 1e-10;
/// Eigenvalues further than this outside `[-1, 1]` mean the operator is not a contraction.
pub const SPECTRUM_SLACK: f64 = 1e-9;

/// Finite atomic measure space `(Ω, μ)` with strictly positive masses.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSpace {
    mu: Arc<[f64]>,
}

impl WeightedSpace {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return invalid("a weighted space needs at least one atom");
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return invalid(format!("atom {i} has non-positive mass {w}"));
        }
        Ok(Self { mu: weights.into() })
    }

    pub fn uniform(n: usize) -> Self {
        Self { mu: vec![1.0; n.max(1)].into() }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn total_mass(&self) -> f64 {
        self.mu.iter().sum()
    }
}

/// Build a weighted space from positive atom masses.
pub fn make_space(weights: &[f64]) -> Result<WeightedSpace> {
    WeightedSpace::new(weights)
}

/// Residuals of the three structural invariants of a Markov operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorResiduals {
    pub row_sum: f64,
    pub detailed_balance: f64,
    pub negativity: f64,
}

impl OperatorResiduals {
    pub fn max(&self) -> f64 {
        self.row_sum.max(self.detailed_balance).max(self.negativity)
    }
}

/// Symmetric Markovian operator on a finite weighted space.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovOperator {
    space: WeightedSpace,
    matrix: DMatrix<f64>,
    root: Option<Box<MarkovOperator>>,
}

impl MarkovOperator {
    /// Validate and wrap a matrix.
    pub fn new(space: WeightedSpace, matrix: DMatrix<f64>) -> Result<Self> {
        let n = space.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return invalid(format!(
                "matrix is {}x{} but the space has {n} atoms",
                matrix.nrows(),
                matrix.ncols()
            ));
        }
        let op = Self { space, matrix, root: None };
        op.validate()?;
        Ok(op)
    }

    /// Attach a Markovian square root `S` with `S² = T`.
    pub fn with_root(mut self, root: MarkovOperator) -> Result<Self> {
        if root.space != self.space {
            return invalid("root lives on a different space");
        }
        let sq = &root.matrix * &root.matrix;
        let err = (&sq - &self.matrix).amax();
        if err > 1e-10 {
            return Err(LabError::InvariantViolation { invariant: "root squared equals operator".into(), residual: err });
        }
        self.root = Some(Box::new(root));
        Ok(self)
    }

    /// `T_ij = K_ij / Σ_j K_ij` with `μ_i = Σ_j K_ij` for a symmetric nonnegative kernel.
    pub fn from_kernel(kernel: &DMatrix<f64>) -> Result<Self> {
        let n = kernel.nrows();
        if kernel.ncols() != n || n == 0 {
            return invalid("kernel must be a non-empty square matrix");
        }
        let asym = (kernel - kernel.transpose()).amax();
        if asym > 0.0 {
            return invalid(format!("kernel is not symmetric (max asymmetry {asym:e})"));
        }
        if kernel.iter().any(|&k| !(k >= 0.0 && k.is_finite())) {
            return invalid("kernel has negative or non-finite entries");
        }
        let mu: Vec<f64> = kernel.row_iter().map(|r| r.sum()).collect();
        let space = WeightedSpace::new(&mu)?;
        let matrix = DMatrix::from_fn(n, n, |i, j| kernel[(i, j)] / mu[i]);
        Self::new(space, matrix)
    }

    pub fn identity(space: WeightedSpace) -> Self {
        let n = space.len();
        Self { space, matrix: DMatrix::identity(n, n), root: None }
    }

    pub fn space(&self) -> &WeightedSpace {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn root(&self) -> Option<&MarkovOperator> {
        self.root.as_deref()
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn residuals(&self) -> OperatorResiduals {
        let n = self.len();
        let mu = self.space.mu();
        let mut res = OperatorResiduals { row_sum: 0.0, detailed_balance: 0.0, negativity: 0.0 };
        for i in 0..n {
            res.row_sum = res.row_sum.max((self.matrix.row(i).sum() - 1.0).abs());
            for j in 0..n {
                let t = self.matrix[(i, j)];
                res.negativity = res.negativity.max(-t);
                res.detailed_balance =
                    res.detailed_balance.max((mu[i] * t - mu[j] * self.matrix[(j, i)]).abs());
            }
        }
        res
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix.iter().any(|x| !x.is_finite()) {
            return invalid("matrix has non-finite entries");
        }
        let r = self.residuals();
        let checks = [
            ("row sums equal 1", r.row_sum),
            ("detailed balance", r.detailed_balance),
            ("entrywise nonnegative", r.negativity),
        ];
        for (name, residual) in checks {
            if residual > OPERATOR_TOL {
                return Err(LabError::InvariantViolation { invariant: name.into(), residual });
            }
        }
        Ok(())
    }
}

/// Sparsity pattern of the random symmetric kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainModel {
    Dense,
    Graph,
    BirthDeath,
    Cycle,
}

impl std::str::FromStr for ChainModel {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "graph" => Ok(Self::Graph),
            "birth_death" | "birth-death" => Ok(Self::BirthDeath),
            "cycle" => Ok(Self::Cycle),
            other => invalid(format!("unknown chain model '{other}'")),
        }
    }
}

/// A generated operator plus whether zero rows had to be boosted on the diagonal.
#[derive(Debug, Clone)]
pub struct GeneratedChain {
    pub operator: MarkovOperator,
    pub boosted: bool,
}

/// Nearest-neighbour kernel on the cycle `Z_n` with the given edge weights (`weights[i]` joins `i` and `i+1`).
pub fn cycle_kernel(weights: &[f64]) -> DMatrix<f64> {
    let n = weights.len();
    let mut k = DMatrix::zeros(n, n);
    for (i, &w) in weights.iter().enumerate() {
        let j = (i + 1) % n;
        if i == j {
            k[(i, i)] += w;
        } else {
            k[(i, j)] += w;
            k[(j, i)] += w;
        }
    }
    k
}

/// Draw a random reversible Markov operator of the given size.
pub fn random_reversible(space_size: usize, seed: u64, model: ChainModel) -> Result<GeneratedChain> {
    if space_size < 2 {
        return invalid(format!("space_size must be at least 2, got {space_size}"));
    }
    let n = space_size;
    let mut rng = rng_from(seed);
    let mut k = DMatrix::<f64>::zeros(n, n);
    match model {
        ChainModel::Dense => {
            for i in 0..n {
                for j in i..n {
                    let w: f64 = rng.random();
                    k[(i, j)] = w;
                    k[(j, i)] = w;
                }
            }
        }
        ChainModel::Graph => {
            let p = (3.0 * (n as f64).ln() / n as f64).clamp(0.15, 1.0);
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < p {
                        let w = rng.random_range(0.1..1.0);
                        k[(i, j)] = w;
                        k[(j, i)] = w;
                    }
                }
            }
        }
        ChainModel::BirthDeath => {
            for i in 0..n {
                k[(i, i)] = rng.random::<f64>();
                if i + 1 < n {
                    let w = rng.random_range(0.1..1.0);
                    k[(i, i + 1)] = w;
                    k[(i + 1, i)] = w;
                }
            }
        }
        ChainModel::Cycle => {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            k = cycle_kernel(&w);
        }
    }
    let mut boosted = false;
    for i in 0..n {
        if k.row(i).sum() <= 0.0 {
            k[(i, i)] = 1.0;
            boosted = true;
        }
    }
    Ok(GeneratedChain { operator: MarkovOperator::from_kernel(&k)?, boosted })
}

/// `T = S²`, remembering `S` as the root.
pub fn square(s: &MarkovOperator) -> MarkovOperator {
    let matrix = s.matrix() * s.matrix();
    MarkovOperator { space: s.space.clone(), matrix, root: Some(Box::new(s.clone())) }
}

/// Eigen-decomposition of a reversible operator, orthonormal in `L_2(μ)`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    space: WeightedSpace,
    eigenvalues: Vec<f64>,
    /// Column `j` is the eigenvector of `eigenvalues[j]`.
    eigenvectors: DMatrix<f64>,
}

/// Diagonalize `T` through the symmetrization `D^{1/2} T D^{-1/2}`.
pub fn spectral(t: &MarkovOperator) -> Result<SpectralDecomposition> {
    let n = t.len();
    let mu = t.space.mu();
    let sq: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
    let b = DMatrix::from_fn(n, n, |i, j| {
        let bij = sq[i] * t.matrix[(i, j)] / sq[j];
        let bji = sq[j] * t.matrix[(j, i)] / sq[i];
        0.5 * (bij + bji)
    });
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &j) in order.iter().enumerate() {
        let lam = eig.eigenvalues[j];
        if !(lam.abs() <= 1.0 + SPECTRUM_SLACK) {
            return Err(LabError::InvariantViolation {
                invariant: "spectrum inside [-1, 1] (contraction)".into(),
                residual: lam.abs() - 1.0,
            });
        }
        eigenvalues.push(lam.clamp(-1.0, 1.0));
        let u = eig.eigenvectors.column(j);
        // sign convention: largest-magnitude entry positive
        let pivot = u.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            eigenvectors[(i, col)] = sign * u[i] / sq[i];
        }
    }
    Ok(SpectralDecomposition { space: t.space.clone(), eigenvalues, eigenvectors })
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn space(&self) -> &WeightedSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Whether eigenvalue `j` belongs to the fixed-point cluster around 1.
    pub fn is_fixed(&self, j: usize) -> bool {
        (self.eigenvalues[j] - 1.0).abs() <= FIXED_CLUSTER_TOL
    }

    /// Largest `|λ|` over eigenvalues outside the fixed cluster (0 when there are none).
    pub fn second_modulus(&self) -> f64 {
        (0..self.len()).filter(|&j| !self.is_fixed(j)).map(|j| self.eigenvalues[j].abs()).fold(0.0, f64::max)
    }

    /// `L_2(μ)` coefficients `⟨v_j, f⟩_μ`, one row per eigenvector, one column per coordinate.
    pub fn coefficients(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        let mu = self.space.mu();
        let weighted = DMatrix::from_fn(values.nrows(), values.ncols(), |i, c| mu[i] * values[(i, c)]);
        self.eigenvectors.tr_mul(&weighted)
    }

    /// Apply the spectral multiplier `m(λ_j)` given as a slice indexed like the eigenvalues.
    pub fn apply_multiplier(&self, multiplier: &[f64], values: &DMatrix<f64>) -> DMatrix<f64> {
        let mut coeffs = self.coefficients(values);
        for (j, &m) in multiplier.iter().enumerate() {
            coeffs.row_mut(j).scale_mut(m);
        }
        &self.eigenvectors * coeffs
    }

    /// Complex multiplier; returns `(real part, imaginary part)` of the image.
    pub fn apply_complex_multiplier(
        &self,
        multiplier: &[Complex64],
        values: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let coeffs = self.coefficients(values);
        let mut re = coeffs.clone();
        let mut im = coeffs;
        for (j, m) in multiplier.iter().enumerate() {
            re.row_mut(j).scale_mut(m.re);
            im.row_mut(j).scale_mut(m.im);
        }
        (&self.eigenvectors * re, &self.eigenvectors * im)
    }

    /// Dense matrix of the operator `Σ_j m_j v_j v_j^* D`.
    pub fn operator_matrix(&self, multiplier: &[f64]) -> DMatrix<f64> {
        let mu = self.space.mu();
        let n = self.len();
        let mut scaled = self.eigenvectors.clone();
        for (j, &m) in multiplier.iter().enumerate() {
            scaled.column_mut(j).scale_mut(m);
        }
        let vt_d = DMatrix::from_fn(n, n, |j, i| self.eigenvectors[(i, j)] * mu[i]);
        scaled * vt_d
    }

    /// Complex version of [`Self::operator_matrix`].
    pub fn complex_operator_matrix(&self, multiplier: &[Complex64]) -> DMatrix<Complex64> {
        let mu = self.space.mu();
        let n = self.len();
        DMatrix::from_fn(n, n, |r, c| {
            (0..n).map(|j| multiplier[j] * self.eigenvectors[(r, j)] * self.eigenvectors[(c, j)] * mu[c]).sum()
        })
    }

    /// `max |T - Σ λ_j v_j v_j^* D|`.
    pub fn reconstruction_error(&self, t: &MarkovOperator) -> f64 {
        (self.operator_matrix(&self.eigenvalues) - t.matrix()).amax()
    }
}

/// One-step Rota dilation of `T = S²` on `Ω × Ω` with `ν(x, y) = μ(x) S(x, y)`.
///
/// Atoms with `S(x, y) = 0` carry no mass and are dropped, so the big space
/// keeps strictly positive weights. Functions on the big space are matrices
/// with one row per retained pair.
#[derive(Debug, Clone)]
pub struct RotaDilation {
    big_space: WeightedSpace,
    pairs: Vec<(usize, usize)>,
    base_len: usize,
    first_mass: Vec<f64>,
    second_mass: Vec<f64>,
    first_rep: Vec<usize>,
}

pub fn rota_dilation(s: &MarkovOperator) -> RotaDilation {
    let n = s.len();
    let mu = s.space.mu();
    let mut pairs = Vec::new();
    let mut nu = Vec::new();
    for (x, &mass) in mu.iter().enumerate() {
        for y in 0..n {
            let w = mass * s.matrix[(x, y)];
            if w > 0.0 {
                pairs.push((x, y));
                nu.push(w);
            }
        }
    }
    let mut first_mass = vec![0.0; n];
    let mut second_mass = vec![0.0; n];
    let mut first_rep = vec![usize::MAX; n];
    for (idx, (&(x, y), &w)) in pairs.iter().zip(&nu).enumerate() {
        first_mass[x] += w;
        second_mass[y] += w;
        if first_rep[x] == usize::MAX {
            first_rep[x] = idx;
        }
    }
    RotaDilation {
        big_space: WeightedSpace { mu: nu.into() },
        pairs,
        base_len: n,
        first_mass,
        second_mass,
        first_rep,
    }
}

impl RotaDilation {
    pub fn big_space(&self) -> &WeightedSpace {
        &self.big_space
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    fn conditional(&self, values: &DMatrix<f64>, key: impl Fn(usize, usize) -> usize, mass: &[f64]) -> DMatrix<f64> {
        let d = values.ncols();
        let nu = self.big_space.mu();
        let mut sums = DMatrix::<f64>::zeros(self.base_len, d);
        for (idx, &(x, y)) in self.pairs.iter().enumerate() {
            let k = key(x, y);
            for c in 0..d {
                sums[(k, c)] += nu[idx] * values[(idx, c)];
            }
        }
        DMatrix::from_fn(self.pairs.len(), d, |idx, c| {
            let (x, y) = self.pairs[idx];
            let k = key(x, y);
            sums[(k, c)] / mass[k]
        })
    }

    /// Conditional expectation onto functions of the first coordinate.
    pub fn ea(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        self.conditional(values, |x, _| x, &self.first_mass)
    }

    /// Conditional expectation onto functions of the second coordinate.
    pub fn eb(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        self.conditional(values, |_, y| y, &self.second_mass)
    }

    /// `F(x, y) = f(x)`.
    pub fn lift(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.pairs.len(), values.ncols(), |idx, c| values[(self.pairs[idx].0, c)])
    }

    /// Read a first-coordinate function back on `Ω`.
    pub fn restrict_first(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.base_len, values.ncols(), |x, c| values[(self.first_rep[x], c)])
    }

    /// `𝔼_𝒜 𝔼_ℬ` applied to the lift of `f`, read back on `Ω`.
    pub fn compose_on(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        self.restrict_first(&self.ea(&self.eb(&self.lift(values))))
    }
}

/// Spectral projection onto the fixed-point space of `T`.
#[derive(Debug, Clone)]
pub struct FixedPointProjection {
    matrix: DMatrix<f64>,
    rank: usize,
}

impl FixedPointProjection {
    pub fn from_decomposition(dec: &SpectralDecomposition) -> Self {
        let mult: Vec<f64> = (0..dec.len()).map(|j| if dec.is_fixed(j) { 1.0 } else { 0.0 }).collect();
        let rank = mult.iter().filter(|&&m| m == 1.0).count();
        Self { matrix: dec.operator_matrix(&mult), rank }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn apply(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        &self.matrix * values
    }
}

pub fn fixed_point_projection(t: &MarkovOperator) -> Result<FixedPointProjection> {
    Ok(FixedPointProjection::from_decomposition(&spectral(t)?))
}
