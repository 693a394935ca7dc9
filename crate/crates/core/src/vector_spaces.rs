//! Target spaces `X = ℓ_q^d` and the mixed norms of `L_p(Ω; X)`.
//!
//! Operator norms on `L_p(Ω; X)` are estimated from below by multi-start
//! ascent: each restart alternates a Boyd-type power step (norming functional,
//! adjoint, norming functional of the dual) with random local perturbations,
//! and keeps a candidate only when the norm ratio increases. The returned
//! value is therefore always attained by an explicit field and never exceeds
//! the true operator norm.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measure_markov::WeightedSpace;
use crate::seed::{rng_from, stable_hash};

/// Exponents of `L_p(Ω; ℓ_q^d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanachParams {
    pub p: f64,
    pub q: f64,
    pub d: usize,
}

impl BanachParams {
    pub fn new(p: f64, q: f64, d: usize) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) || !(q > 1.0 && q.is_finite()) {
            return invalid(format!("exponents must lie in (1, ∞), got p = {p}, q = {q}"));
        }
        if d == 0 {
            return invalid("dimension d must be at least 1");
        }
        Ok(Self { p, q, d })
    }

    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn q_conj(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    /// The dual exponents `(p', q')`.
    pub fn dual(&self) -> Self {
        Self { p: self.p_conj(), q: self.q_conj(), d: self.d }
    }

    /// Power-type exponent `max(p, q, 2)` used for the convexity constant of `L_p(Ω; ℓ_q^d)`.
    pub fn renorming_exponent(&self) -> f64 {
        self.p.max(self.q).max(2.0)
    }
}

/// A function `f: Ω → ℝ^d`, one row per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    space: WeightedSpace,
    values: DMatrix<f64>,
}

impl VectorField {
    pub fn new(space: WeightedSpace, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != space.len() {
            return invalid(format!("field has {} rows but the space has {} atoms", values.nrows(), space.len()));
        }
        if values.ncols() == 0 {
            return invalid("field dimension must be at least 1");
        }
        Ok(Self { space, values })
    }

    pub fn zeros(space: WeightedSpace, d: usize) -> Self {
        let n = space.len();
        Self { space, values: DMatrix::zeros(n, d.max(1)) }
    }

    /// Scalar field (`d = 1`).
    pub fn scalar(space: WeightedSpace, values: &[f64]) -> Result<Self> {
        Self::new(space, DMatrix::from_column_slice(values.len(), 1, values))
    }

    /// Standard normal entries.
    pub fn random(space: WeightedSpace, d: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let n = space.len();
        let values = DMatrix::from_fn(n, d.max(1), |_, _| rng.sample::<f64, _>(StandardNormal));
        Self { space, values }
    }

    pub fn space(&self) -> &WeightedSpace {
        &self.space
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same space, new values.
    pub fn with_values(&self, values: DMatrix<f64>) -> Self {
        debug_assert_eq!(values.nrows(), self.space.len());
        Self { space: self.space.clone(), values }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.with_values(&self.values * c)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.with_values(&self.values - &other.values)
    }

    /// `‖f‖_{L_p(Ω; ℓ_q^d)}`.
    pub fn norm(&self, p: f64, q: f64) -> f64 {
        mixed_norm(self.space.mu(), &self.values, p, q)
    }

    /// Pointwise `‖f(ω)‖_{ℓ_q}`.
    pub fn pointwise_norms(&self, q: f64) -> Vec<f64> {
        self.values.row_iter().map(|r| x_norm(r.iter().copied(), q)).collect()
    }
}

/// A function `f: Ω → ℂ^d`; produced by complex multipliers and contour integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVectorField {
    space: WeightedSpace,
    values: DMatrix<Complex64>,
}

impl ComplexVectorField {
    pub fn new(space: WeightedSpace, values: DMatrix<Complex64>) -> Result<Self> {
        if values.nrows() != space.len() {
            return invalid(format!("field has {} rows but the space has {} atoms", values.nrows(), space.len()));
        }
        Ok(Self { space, values })
    }

    pub fn from_parts(space: WeightedSpace, re: &DMatrix<f64>, im: &DMatrix<f64>) -> Self {
        let values = DMatrix::from_fn(re.nrows(), re.ncols(), |i, c| Complex64::new(re[(i, c)], im[(i, c)]));
        Self { space, values }
    }

    pub fn space(&self) -> &WeightedSpace {
        &self.space
    }

    pub fn values(&self) -> &DMatrix<Complex64> {
        &self.values
    }

    pub fn re(&self) -> VectorField {
        VectorField { space: self.space.clone(), values: self.values.map(|z| z.re) }
    }

    pub fn im(&self) -> VectorField {
        VectorField { space: self.space.clone(), values: self.values.map(|z| z.im) }
    }

    /// Largest imaginary entry relative to the largest entry (absolute when the field vanishes).
    pub fn imaginary_residual(&self) -> f64 {
        let im = self.values.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
        let scale = self.values.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if scale > 1.0 { im / scale } else { im }
    }

    /// Real part, provided the imaginary residual is below `tol`.
    pub fn into_real(self, tol: f64) -> Result<VectorField> {
        let residual = self.imaginary_residual();
        if residual > tol {
            return Err(crate::error::LabError::InvariantViolation {
                invariant: "real-valued result".into(),
                residual,
            });
        }
        Ok(self.re())
    }

    /// Pointwise `‖f(ω)‖_{ℓ_q}` with complex moduli.
    pub fn pointwise_norms(&self, q: f64) -> Vec<f64> {
        self.values.row_iter().map(|r| x_norm(r.iter().map(|z| z.norm()), q)).collect()
    }

    pub fn norm(&self, p: f64, q: f64) -> f64 {
        mixed_norm(self.space.mu(), &self.values, p, q)
    }
}

/// `(Σ |v_j|^q)^{1/q}`, scaled to avoid overflow.
pub fn x_norm(v: impl IntoIterator<Item = f64> + Clone, q: f64) -> f64 {
    let scale = v.clone().into_iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    if q == 2.0 {
        return scale * v.into_iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt();
    }
    scale * v.into_iter().map(|x| (x.abs() / scale).powf(q)).sum::<f64>().powf(1.0 / q)
}

/// `(Σ_i μ_i g_i^p)^{1/p}` for nonnegative `g`.
pub fn lp_scalar_norm(mu: &[f64], g: &[f64], p: f64) -> f64 {
    let scale = g.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * mu.iter().zip(g).map(|(m, x)| m * (x.abs() / scale).powf(p)).sum::<f64>().powf(1.0 / p)
}

fn mixed_norm<T: ComplexField<RealField = f64> + Copy>(mu: &[f64], values: &DMatrix<T>, p: f64, q: f64) -> f64 {
    let rows: Vec<f64> = values.row_iter().map(|r| x_norm(r.iter().map(|z| z.modulus()), q)).collect();
    lp_scalar_norm(mu, &rows, p)
}

/// `‖f‖_{L_p(Ω; X)}` with `X = ℓ_q^d`.
pub fn lp_norm(f: &VectorField, params: &BanachParams) -> f64 {
    f.norm(params.p, params.q)
}

/// `Σ_i μ_i ⟨f(ω_i), g(ω_i)⟩` (coordinate pairing of `ℓ_q` and `ℓ_{q'}`).
pub fn duality_pairing(f: &VectorField, g: &VectorField) -> Result<f64> {
    if f.space != g.space {
        return invalid("fields live on different spaces");
    }
    if f.dim() != g.dim() {
        return invalid(format!("dimension mismatch: {} vs {}", f.dim(), g.dim()));
    }
    let mu = f.space.mu();
    Ok((0..f.len()).map(|i| mu[i] * f.values.row(i).dot(&g.values.row(i))).sum())
}

/// `(m ⊗ Id_X) f`: `m` acts on every coordinate column.
pub fn apply(m: &DMatrix<f64>, f: &VectorField) -> Result<VectorField> {
    if m.nrows() != f.len() || m.ncols() != f.len() {
        return invalid(format!("operator is {}x{} but the field has {} atoms", m.nrows(), m.ncols(), f.len()));
    }
    Ok(f.with_values(m * &f.values))
}

/// Restart and step budget of the operator-norm ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    pub restarts: usize,
    pub steps: usize,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self { restarts: 32, steps: 200 }
    }
}

/// Scalars the ascent can work over (real fields, or complex fields for resolvents).
pub trait FieldScalar: ComplexField<RealField = f64> + Copy + Send + Sync {
    fn normal(rng: &mut ChaCha8Rng) -> Self;
    /// `|z|^{e} · z/|z|` (zero at zero).
    fn signed_power(self, e: f64) -> Self;
}

impl FieldScalar for f64 {
    fn normal(rng: &mut ChaCha8Rng) -> Self {
        rng.sample(StandardNormal)
    }

    fn signed_power(self, e: f64) -> Self {
        if self == 0.0 {
            0.0
        } else {
            self.signum() * self.abs().powf(e)
        }
    }
}

impl FieldScalar for Complex64 {
    fn normal(rng: &mut ChaCha8Rng) -> Self {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    fn signed_power(self, e: f64) -> Self {
        let r = self.norm();
        if r == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            self * r.powf(e - 1.0)
        }
    }
}

/// Norming element of `g` in the dual space: `⟨g, J(g)⟩_μ = ‖g‖_{p,q}`, `‖J(g)‖_{p',q'} = 1`.
fn norming<T: FieldScalar>(mu: &[f64], g: &DMatrix<T>, p: f64, q: f64) -> DMatrix<T> {
    let total = mixed_norm(mu, g, p, q);
    let mut out = DMatrix::from_element(g.nrows(), g.ncols(), T::zero());
    if total == 0.0 || !total.is_finite() {
        return out;
    }
    for i in 0..g.nrows() {
        let row_norm = x_norm(g.row(i).iter().map(|z| z.modulus()), q);
        if row_norm == 0.0 {
            continue;
        }
        // factors normalized by the total norm to stay in range
        let row_factor = (row_norm / total).powf(p - q) / total.powf(q - 1.0);
        for c in 0..g.ncols() {
            out[(i, c)] = g[(i, c)].signed_power(q - 1.0).scale(row_factor);
        }
    }
    out
}

fn adjoint_apply<T: FieldScalar>(m: &DMatrix<T>, mu: &[f64], h: &DMatrix<T>) -> DMatrix<T> {
    // M* = D^{-1} M^H D
    let dh = DMatrix::from_fn(h.nrows(), h.ncols(), |i, c| h[(i, c)].scale(mu[i]));
    let mut z = m.adjoint() * dh;
    for i in 0..z.nrows() {
        let inv = 1.0 / mu[i];
        for c in 0..z.ncols() {
            z[(i, c)] = z[(i, c)].scale(inv);
        }
    }
    z
}

struct Ascent<'a, T: FieldScalar> {
    m: &'a DMatrix<T>,
    mu: &'a [f64],
    p: f64,
    q: f64,
}

impl<T: FieldScalar> Ascent<'_, T> {
    fn ratio(&self, f: &DMatrix<T>) -> f64 {
        let den = mixed_norm(self.mu, f, self.p, self.q);
        if den == 0.0 {
            return 0.0;
        }
        mixed_norm(self.mu, &(self.m * f), self.p, self.q) / den
    }

    fn power_step(&self, f: &DMatrix<T>) -> DMatrix<T> {
        let g = self.m * f;
        let h = norming(self.mu, &g, self.p, self.q);
        let z = adjoint_apply(self.m, self.mu, &h);
        let pc = self.p / (self.p - 1.0);
        let qc = self.q / (self.q - 1.0);
        norming(self.mu, &z, pc, qc)
    }

    fn start(&self, restart: usize, rng: &mut ChaCha8Rng, d: usize) -> DMatrix<T> {
        let n = self.mu.len();
        match restart {
            0 => {
                let dir: Vec<T> = (0..d).map(|_| T::normal(rng)).collect();
                DMatrix::from_fn(n, d, |_, c| dir[c])
            }
            1 => {
                let atom = rng.random_range(0..n);
                let dir: Vec<T> = (0..d).map(|_| T::normal(rng)).collect();
                DMatrix::from_fn(n, d, |i, c| if i == atom { dir[c] } else { T::zero() })
            }
            _ => DMatrix::from_fn(n, d, |_, _| T::normal(rng)),
        }
    }

    fn run(&self, restart: usize, steps: usize, seed: u64, d: usize) -> f64 {
        let mut rng = rng_from(seed);
        let mut f = self.start(restart, &mut rng, d);
        let mut best = self.ratio(&f);
        let mut sigma = 0.3;
        let mut use_power = true;
        for _ in 0..steps {
            if use_power {
                let cand = self.power_step(&f);
                let r = self.ratio(&cand);
                if r > best * (1.0 + 1e-14) {
                    best = r;
                    f = cand;
                    continue;
                }
                use_power = false;
            }
            let scale = mixed_norm(self.mu, &f, self.p, self.q).max(f64::MIN_POSITIVE)
                / (self.mu.iter().sum::<f64>().powf(1.0 / self.p) * (d as f64).powf(1.0 / self.q));
            let cand = DMatrix::from_fn(f.nrows(), d, |i, c| f[(i, c)] + T::normal(&mut rng).scale(sigma * scale));
            let r = self.ratio(&cand);
            if r > best {
                best = r;
                f = cand;
                sigma = (sigma * 1.5).min(2.0);
                use_power = true;
            } else {
                sigma = (sigma * 0.6).max(1e-6);
            }
        }
        best
    }
}

/// Lower bound on `‖m‖_{L_p(Ω;X) → L_p(Ω;X)}`, generic over real or complex matrices.
pub fn estimate_norm_with<T: FieldScalar>(
    m: &DMatrix<T>,
    space: &WeightedSpace,
    params: &BanachParams,
    config: AscentConfig,
    seed: u64,
) -> Result<f64> {
    let n = space.len();
    if m.nrows() != n || m.ncols() != n {
        return invalid(format!("operator is {}x{} but the space has {n} atoms", m.nrows(), m.ncols()));
    }
    if config.restarts == 0 {
        return invalid("at least one restart is required");
    }
    let ascent = Ascent { m, mu: space.mu(), p: params.p, q: params.q };
    let best = (0..config.restarts)
        .into_par_iter()
        .map(|r| ascent.run(r, config.steps, stable_hash(seed, r as u64), params.d))
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// Lower bound on the operator norm of a real map with `trials` restarts of the default step budget.
pub fn estimate_operator_norm(
    m: &DMatrix<f64>,
    space: &WeightedSpace,
    params: &BanachParams,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let config = AscentConfig { restarts: trials, ..AscentConfig::default() };
    estimate_norm_with(m, space, params, config, seed)
}

/// Outcome of the uniform-convexity probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityEstimate {
    pub q: f64,
    pub delta: f64,
    pub trials: usize,
}

/// Smallest `‖(x−y)/2‖ / max(‖x‖, ‖y‖)` probed; closer pairs lose the numerator to cancellation.
const MIN_SEPARATION: f64 = 1e-3;

fn convexity_ratio(x: &[f64], y: &[f64], q: f64) -> Option<f64> {
    let scale = x_norm(x.iter().copied(), q).max(x_norm(y.iter().copied(), q));
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    let x: Vec<f64> = x.iter().map(|v| v / scale).collect();
    let y: Vec<f64> = y.iter().map(|v| v / scale).collect();
    let half_gap = x_norm(x.iter().zip(&y).map(|(a, b)| 0.5 * (a - b)), q);
    if half_gap < MIN_SEPARATION {
        return None;
    }
    let mid = x_norm(x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)), q);
    let num = 0.5 * (x_norm(x.iter().copied(), q).powf(q) + x_norm(y.iter().copied(), q).powf(q)) - mid.powf(q);
    Some(num / half_gap.powf(q))
}

/// Smallest observed `(½(‖x‖^q+‖y‖^q) − ‖(x+y)/2‖^q) / ‖(x−y)/2‖^q` over random pairs in `ℓ_q^d`,
/// locally refined; an upper estimate of the best convexity constant, clamped to `[0, 1]`.
pub fn convexity_modulus_probe(q: f64, d: usize, trials: usize, seed: u64) -> Result<ConvexityEstimate> {
    if !(q >= 2.0 && q.is_finite()) {
        return invalid(format!("power-type convexity needs q ≥ 2, got {q}"));
    }
    if d == 0 || trials == 0 {
        return invalid("d and trials must be positive");
    }
    let best = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(stable_hash(seed, t as u64));
            let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mut y: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mut cur = convexity_ratio(&x, &y, q).unwrap_or(f64::INFINITY);
            let mut sigma = 0.3;
            for _ in 0..100 {
                let xn: Vec<f64> = x.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                let yn: Vec<f64> = y.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                match convexity_ratio(&xn, &yn, q) {
                    Some(r) if r < cur => {
                        cur = r;
                        x = xn;
                        y = yn;
                        sigma *= 1.3;
                    }
                    _ => sigma *= 0.7,
                }
            }
            cur
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(ConvexityEstimate { q, delta: best.clamp(0.0, 1.0), trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_markov::{random_reversible, square, ChainModel, MarkovOperator};
    use approx::assert_relative_eq;

    fn half() -> WeightedSpace {
        WeightedSpace::new(&[0.5, 0.5]).unwrap()
    }

    #[test]
    fn x_norm_examples() {
        assert_eq!(x_norm([3.0, 4.0], 2.0), 5.0);
        assert_eq!(x_norm([0.0, 0.0], 3.0), 0.0);
        assert_relative_eq!(x_norm([1.0, 1.0], 4.0), 2f64.powf(0.25), epsilon = 1e-15);
        assert_relative_eq!(x_norm([1e200, 1e200], 3.0), 1e200 * 2f64.powf(1.0 / 3.0), max_relative = 1e-14);
    }

    #[test]
    fn lp_norm_examples() {
        let f = VectorField::new(half(), DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
        for p in [1.5, 2.0, 7.0] {
            for q in [1.2, 2.0, 5.0] {
                assert_relative_eq!(f.norm(p, q), 1.0, epsilon = 1e-15);
            }
        }
        let g = VectorField::scalar(half(), &[1.0, -1.0]).unwrap();
        assert_relative_eq!(g.norm(2.0, 2.0), 1.0, epsilon = 1e-15);
        let h = VectorField::scalar(half(), &[2.0, 0.0]).unwrap();
        assert_relative_eq!(h.norm(3.0, 2.0), 4f64.powf(1.0 / 3.0), epsilon = 1e-15);
    }

    #[test]
    fn pairing_examples_and_errors() {
        let f = VectorField::scalar(half(), &[1.0, 0.0]).unwrap();
        assert_relative_eq!(duality_pairing(&f, &f).unwrap(), 0.5);
        let g = VectorField::scalar(half(), &[0.0, 3.0]).unwrap();
        assert_eq!(duality_pairing(&f, &g).unwrap(), 0.0);
        let wide = VectorField::zeros(half(), 2);
        assert!(duality_pairing(&f, &wide).is_err());
    }

    #[test]
    fn holder_inequality_on_random_pairs() {
        let space = WeightedSpace::new(&[0.3, 1.2, 0.7, 2.0, 0.1]).unwrap();
        let params = BanachParams::new(3.0, 1.5, 3).unwrap();
        let dual = params.dual();
        for s in 0..1000u64 {
            let f = VectorField::random(space.clone(), 3, stable_hash(s, 0));
            let g = VectorField::random(space.clone(), 3, stable_hash(s, 1));
            let lhs = duality_pairing(&f, &g).unwrap().abs();
            let rhs = lp_norm(&f, &params) * lp_norm(&g, &dual);
            assert!(lhs <= rhs * (1.0 + 1e-12), "trial {s}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn apply_examples() {
        let t = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        let f = VectorField::scalar(half(), &[1.0, -1.0]).unwrap();
        let out = apply(&t, &f).unwrap();
        assert_relative_eq!(out.values()[(0, 0)], 0.5);
        assert_relative_eq!(out.values()[(1, 0)], -0.5);
        let c = VectorField::new(half(), DMatrix::from_row_slice(2, 2, &[1.5, -2.0, 1.5, -2.0])).unwrap();
        assert!((apply(&t, &c).unwrap().values() - c.values()).amax() < 1e-15);
        assert_eq!(apply(&DMatrix::identity(2, 2), &f).unwrap(), f);
        assert!(apply(&DMatrix::identity(3, 3), &f).is_err());
    }

    #[test]
    fn identity_norm_is_exactly_one() {
        let space = WeightedSpace::new(&[0.2, 0.3, 0.5]).unwrap();
        for (p, q) in [(2.0, 2.0), (1.5, 4.0), (5.0, 1.3)] {
            let params = BanachParams::new(p, q, 2).unwrap();
            let est = estimate_operator_norm(&DMatrix::identity(3, 3), &space, &params, 4, 1).unwrap();
            assert_eq!(est, 1.0);
        }
    }

    #[test]
    fn markov_operator_norm_is_one() {
        let t = random_reversible(6, 9, ChainModel::Dense).unwrap().operator;
        for (p, q, d) in [(2.0, 2.0, 1), (3.0, 1.5, 2), (1.5, 4.0, 3)] {
            let params = BanachParams::new(p, q, d).unwrap();
            let est = estimate_operator_norm(t.matrix(), t.space(), &params, 8, 3).unwrap();
            assert!((1.0 - 1e-6..=1.0 + 1e-9).contains(&est), "({p},{q},{d}): {est}");
        }
    }

    #[test]
    fn two_point_i_minus_t_matches_spectral_norm() {
        let t = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        let m = DMatrix::identity(2, 2) - t;
        let params = BanachParams::new(2.0, 2.0, 1).unwrap();
        let est = estimate_operator_norm(&m, &WeightedSpace::uniform(2), &params, 4, 0).unwrap();
        assert_relative_eq!(est, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn complex_estimate_matches_spectral_resolvent() {
        let s = random_reversible(5, 4, ChainModel::Dense).unwrap().operator;
        let t = square(&s);
        let z = Complex64::new(-0.3, 0.8);
        let tc = t.matrix().map(|x| Complex64::new(x, 0.0));
        let res = (DMatrix::identity(5, 5).scale(1.0).map(|x: f64| Complex64::new(x, 0.0)) * z - tc)
            .try_inverse()
            .unwrap();
        let dec = crate::measure_markov::spectral(&t).unwrap();
        let exact = dec.eigenvalues().iter().map(|&l| 1.0 / (z - l).norm()).fold(0.0, f64::max);
        let params = BanachParams::new(2.0, 2.0, 1).unwrap();
        let est = estimate_norm_with(&res, t.space(), &params, AscentConfig::default(), 5).unwrap();
        assert!(est <= exact * (1.0 + 1e-9));
        assert!(est >= exact * (1.0 - 1e-6), "{est} vs {exact}");
    }

    #[test]
    fn estimate_is_monotone_in_restarts() {
        let t = random_reversible(7, 2, ChainModel::Graph).unwrap().operator;
        let m = DMatrix::identity(7, 7) - t.matrix();
        let params = BanachParams::new(3.0, 1.5, 2).unwrap();
        let small = estimate_operator_norm(&m, t.space(), &params, 3, 17).unwrap();
        let large = estimate_operator_norm(&m, t.space(), &params, 12, 17).unwrap();
        assert!(large >= small);
        // deterministic
        assert_eq!(small, estimate_operator_norm(&m, t.space(), &params, 3, 17).unwrap());
    }

    #[test]
    fn positive_maps_have_the_scalar_norm() {
        for s in 0..50u64 {
            let g = random_reversible(5, 100 + s, ChainModel::Dense).unwrap();
            let t: &MarkovOperator = &g.operator;
            // a positive, non-Markovian map: 0.5·T + 0.8·diag
            let m = t.matrix() * 0.5 + DMatrix::from_diagonal(&nalgebra::DVector::from_fn(5, |i, _| 0.2 * i as f64));
            let cfg = AscentConfig { restarts: 12, steps: 150 };
            let scalar = BanachParams::new(3.0, 1.7, 1).unwrap();
            let vector = BanachParams::new(3.0, 1.7, 3).unwrap();
            let a = estimate_norm_with(&m, t.space(), &scalar, cfg, s).unwrap();
            let b = estimate_norm_with(&m, t.space(), &vector, cfg, s).unwrap();
            assert!((a - b).abs() <= 0.02 * a, "instance {s}: scalar {a} vector {b}");
        }
    }

    #[test]
    fn convexity_probe() {
        let e2 = convexity_modulus_probe(2.0, 5, 50, 1).unwrap();
        assert_relative_eq!(e2.delta, 1.0, epsilon = 1e-12);
        let e4 = convexity_modulus_probe(4.0, 8, 50, 1).unwrap();
        assert!(e4.delta >= 0.9, "{}", e4.delta);
        assert!(convexity_modulus_probe(1.5, 3, 10, 0).is_err());
        // degenerate pair is excluded, not 0/0
        assert!(convexity_ratio(&[1.0, 2.0], &[1.0, 2.0], 3.0).is_none());
        for (d, seed) in [(1, 0), (1, 8), (3, 5)] {
            let e = convexity_modulus_probe(2.0, d, 256, seed).unwrap();
            assert_relative_eq!(e.delta, 1.0, epsilon = 1e-9);
        }
        let r = convexity_ratio(&[1.0, -0.5], &[0.2, 0.9], 3.0).unwrap();
        assert_relative_eq!(convexity_ratio(&[1e6, -0.5e6], &[0.2e6, 0.9e6], 3.0).unwrap(), r, max_relative = 1e-12);
    }

    #[test]
    fn lp_norm_homogeneous_and_subadditive() {
        let space = WeightedSpace::new(&[1.0, 0.5, 2.5, 0.25]).unwrap();
        for s in 0..200u64 {
            let a = VectorField::random(space.clone(), 3, stable_hash(s, 10));
            let b = VectorField::random(space.clone(), 3, stable_hash(s, 11));
            let (p, q) = (1.0 + (s % 5) as f64 * 0.7, 1.0 + (s % 3) as f64 * 1.3 + 0.1);
            let sum = a.with_values(a.values() + b.values());
            assert!(a.norm(p, q) + b.norm(p, q) - sum.norm(p, q) >= -1e-12);
            assert_relative_eq!(a.scale(-2.5).norm(p, q), 2.5 * a.norm(p, q), max_relative = 1e-14);
        }
    }

    #[test]
    fn columns_commute_with_apply() {
        let t = random_reversible(6, 1, ChainModel::BirthDeath).unwrap().operator;
        let f = VectorField::random(t.space().clone(), 4, 3);
        let out = apply(t.matrix(), &f).unwrap();
        for c in 0..4 {
            let col = t.matrix() * f.values().column(c);
            assert_eq!(out.values().column(c), col);
        }
    }
}
