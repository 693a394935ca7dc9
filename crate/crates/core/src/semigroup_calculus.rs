//! The diffusion semigroup `T_t = e^{-tA}`, `A = I − T`, and operators built from it.
//!
//! Everything is evaluated through the spectral decomposition of `T`: an
//! operator is a multiplier `m(a_j)` on the eigencomponents. Quadrature only
//! enters where an integral formula itself is under test (Poisson
//! subordination, the fractional averages `M^α_t`) and in the time grids used
//! to discretize `∫_0^∞ · dt/t`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::measure_markov::{spectral, MarkovOperator, SpectralDecomposition, WeightedSpace};
use crate::quadrature::{gauss_jacobi, gauss_laguerre, gauss_legendre, mapped};
use crate::special::{factorial, recip_gamma, upper_gamma};
use crate::vector_spaces::{ComplexVectorField, VectorField};

/// Largest `|Im α|` accepted by the fractional averages.
pub const MAX_IMAG_ALPHA: f64 = 4.0;

const GENERATOR_SLACK: f64 = 1e-12;

/// `{T_t}` with generator eigenvalues `a_j = 1 − λ_j`.
#[derive(Debug, Clone)]
pub struct Semigroup {
    decomposition: SpectralDecomposition,
    generator: Vec<f64>,
}

/// The semigroup `e^{t(T−1)}` of a Markov operator.
pub fn heat(t_op: &MarkovOperator) -> Result<Semigroup> {
    Semigroup::from_decomposition(spectral(t_op)?)
}

impl Semigroup {
    pub fn from_decomposition(decomposition: SpectralDecomposition) -> Result<Self> {
        let mut generator = Vec::with_capacity(decomposition.len());
        for (j, &lam) in decomposition.eigenvalues().iter().enumerate() {
            let a = 1.0 - lam;
            if a < -GENERATOR_SLACK {
                return Err(LabError::InvariantViolation { invariant: "nonnegative generator".into(), residual: -a });
            }
            generator.push(if decomposition.is_fixed(j) { 0.0 } else { a.clamp(0.0, 2.0) });
        }
        Ok(Self { decomposition, generator })
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomposition
    }

    pub fn generator_eigenvalues(&self) -> &[f64] {
        &self.generator
    }

    pub fn space(&self) -> &WeightedSpace {
        self.decomposition.space()
    }

    pub fn len(&self) -> usize {
        self.generator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generator.is_empty()
    }

    /// Smallest positive generator eigenvalue.
    pub fn spectral_gap(&self) -> Option<f64> {
        self.generator.iter().copied().filter(|&a| a > 0.0).reduce(f64::min)
    }

    pub fn max_rate(&self) -> f64 {
        self.generator.iter().copied().fold(0.0, f64::max)
    }

    pub(crate) fn check_field(&self, f: &VectorField) -> Result<()> {
        if f.space() != self.space() {
            return invalid("field does not live on the semigroup's space");
        }
        Ok(())
    }

    /// Apply the real multiplier `m(a_j)`.
    pub fn apply(&self, f: &VectorField, m: impl Fn(f64) -> f64) -> Result<VectorField> {
        self.check_field(f)?;
        let mult: Vec<f64> = self.generator.iter().map(|&a| m(a)).collect();
        Ok(f.with_values(self.decomposition.apply_multiplier(&mult, f.values())))
    }

    /// Apply the complex multiplier `m(a_j)`.
    pub fn apply_complex(&self, f: &VectorField, m: impl Fn(f64) -> Complex64) -> Result<ComplexVectorField> {
        self.check_field(f)?;
        let mult: Vec<Complex64> = self.generator.iter().map(|&a| m(a)).collect();
        let (re, im) = self.decomposition.apply_complex_multiplier(&mult, f.values());
        Ok(ComplexVectorField::from_parts(f.space().clone(), &re, &im))
    }

    /// The fixed-point projection `𝖥f` (limit of `T_t f`).
    pub fn fixed_part(&self, f: &VectorField) -> Result<VectorField> {
        self.apply(f, |a| if a == 0.0 { 1.0 } else { 0.0 })
    }

    /// `f − 𝖥f`.
    pub fn mean_free(&self, f: &VectorField) -> Result<VectorField> {
        self.apply(f, |a| if a == 0.0 { 0.0 } else { 1.0 })
    }

    /// `T_t f`.
    pub fn evolve(&self, t: f64, f: &VectorField) -> Result<VectorField> {
        if !(t >= 0.0 && t.is_finite()) {
            return invalid(format!("time must be nonnegative, got {t}"));
        }
        if t == 0.0 {
            self.check_field(f)?;
            return Ok(f.clone());
        }
        self.apply(f, |a| heat_multiplier(a, t))
    }

    /// `t^k ∂^k T_t f`.
    pub fn derivative(&self, k: u32, t: f64, f: &VectorField) -> Result<VectorField> {
        if !(t > 0.0 && t.is_finite()) {
            return invalid(format!("time must be positive, got {t}"));
        }
        if k == 0 {
            return invalid("derivative order must be at least 1");
        }
        self.apply(f, |a| derivative_multiplier(a, k, t))
    }

    /// `P_t f = e^{-t√A} f`, exactly or through the subordination integral.
    pub fn poisson_subordinate(&self, t: f64, f: &VectorField, mode: SubordinationMode) -> Result<VectorField> {
        if !(t > 0.0 && t.is_finite()) {
            return invalid(format!("time must be positive, got {t}"));
        }
        if let SubordinationMode::GaussLaguerre(0) = mode {
            return invalid("Gauss-Laguerre needs at least one node");
        }
        self.apply(f, |a| mode.multiplier(a, t))
    }

    /// `t^k ∂^k M^α_t f`; `k = 0` gives `M^α_t f` itself.
    pub fn frac_m_derivative(&self, alpha: Complex64, k: u32, t: f64, f: &VectorField) -> Result<ComplexVectorField> {
        if !(t > 0.0 && t.is_finite()) {
            return invalid(format!("time must be positive, got {t}"));
        }
        let params = FracParams::new(alpha, k)?;
        self.apply_complex(f, |a| params.multiplier(t * a))
    }

    /// `M^α_t f = (1/Γ(α)) ∫_0^1 (1−s)^{α−1} T_{ts} f ds`, continued to all `α` by recursion.
    pub fn frac_m(&self, alpha: Complex64, t: f64, f: &VectorField) -> Result<ComplexVectorField> {
        self.frac_m_derivative(alpha, 0, t, f)
    }
}

pub fn heat_multiplier(a: f64, t: f64) -> f64 {
    (-t * a).exp()
}

/// `(−ta)^k e^{−ta}`.
pub fn derivative_multiplier(a: f64, k: u32, t: f64) -> f64 {
    let x = t * a;
    if x == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (-x).powi(k as i32) * (-x).exp()
}

/// How `P_t` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubordinationMode {
    /// `e^{−t√a}` directly.
    Exact,
    /// Subordination integral in the variable `u = ln s`, trapezoid rule.
    Quadrature,
    /// Subordination integral by generalized Gauss–Laguerre with the given node count.
    GaussLaguerre(usize),
}

impl SubordinationMode {
    pub fn multiplier(self, a: f64, t: f64) -> f64 {
        match self {
            Self::Exact => (-t * a.sqrt()).exp(),
            Self::Quadrature => subordination_trapezoid(a, t),
            Self::GaussLaguerre(n) => subordination_laguerre(a, t, n),
        }
    }
}

/// `π^{-1/2} ∫_0^∞ s^{-1/2} e^{-s} e^{-a t²/(4s)} ds` with `s = e^u`.
///
/// The integrand in `u` decays double-exponentially on the right and like
/// `e^{u/2}` on the left, so the trapezoid rule converges geometrically.
fn subordination_trapezoid(a: f64, t: f64) -> f64 {
    let c = a * t * t / 4.0;
    let peak = c.sqrt();
    let lo = -75.0;
    let hi = (2.0 * peak + 45.0).ln();
    let h = (1.0 / 16.0f64).min(0.25 / (2.0 * peak + 1.0).sqrt());
    let n = ((hi - lo) / h).ceil() as usize;
    let h = (hi - lo) / n as f64;
    let mut sum = 0.0;
    for i in 0..=n {
        let u = lo + i as f64 * h;
        let s = u.exp();
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        sum += w * (0.5 * u - s - c / s).exp();
    }
    sum * h / PI.sqrt()
}

fn subordination_laguerre(a: f64, t: f64, n: usize) -> f64 {
    let rule = gauss_laguerre(n, -0.5);
    let c = a * t * t / 4.0;
    rule.nodes.iter().zip(&rule.weights).map(|(s, w)| w * (-c / s).exp()).sum::<f64>() / PI.sqrt()
}

/// How the multiplier of `t^k ∂^k M^α_t` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
enum FracPlan {
    /// `α = −m`: `M^{−m}_t = t^m ∂^m T_t`, closed form.
    NonPositiveInteger(u32),
    /// `Re α > 0`: the averaging integral directly.
    Integral { recip_gamma: Complex64 },
    /// `Re α ≤ 0`: the integral at `β = α + steps`, then the downward recursion.
    Recursion { beta: Complex64, recip_gamma: Complex64, steps: u32 },
}

/// Parameters of `t^k ∂^k M^α_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracParams {
    alpha: Complex64,
    k: u32,
    plan: FracPlan,
}

impl FracParams {
    pub fn new(alpha: Complex64, k: u32) -> Result<Self> {
        if !(alpha.re.is_finite() && alpha.im.is_finite()) {
            return invalid("α must be finite");
        }
        if alpha.im.abs() > MAX_IMAG_ALPHA {
            return invalid(format!("|Im α| must be at most {MAX_IMAG_ALPHA}, got {}", alpha.im.abs()));
        }
        let plan = if alpha.im == 0.0 && alpha.re <= 0.0 && alpha.re == alpha.re.round() {
            FracPlan::NonPositiveInteger((-alpha.re) as u32)
        } else if alpha.re > 0.0 {
            FracPlan::Integral { recip_gamma: recip_gamma(alpha) }
        } else {
            // land on Re β ≥ 1/2 so that Γ(β) stays moderate
            let steps = (0.5 - alpha.re).ceil() as u32;
            let beta = alpha + steps as f64;
            FracPlan::Recursion { beta, recip_gamma: recip_gamma(beta), steps }
        };
        Ok(Self { alpha, k, plan })
    }

    pub fn alpha(&self) -> Complex64 {
        self.alpha
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// `x^k (d/dx)^k m_α(x)` at `x = t·a`.
    pub fn multiplier(&self, x: f64) -> Complex64 {
        match self.plan {
            FracPlan::NonPositiveInteger(m) => Complex64::from(integer_order_multiplier(m, self.k, x)),
            FracPlan::Integral { recip_gamma } => scaled_derivative(self.alpha, recip_gamma, self.k, x),
            FracPlan::Recursion { beta, recip_gamma, steps } => {
                let mut v: Vec<Complex64> =
                    (0..=steps).map(|j| scaled_derivative(beta, recip_gamma, self.k + j, x)).collect();
                // D_j(γ − 1) = (j + γ) D_j(γ) + D_{j+1}(γ)
                for s in 0..steps {
                    let level = beta - s as f64;
                    for j in 0..(steps - s) as usize {
                        v[j] = (self.k as f64 + j as f64 + level) * v[j] + v[j + 1];
                    }
                }
                v[0]
            }
        }
    }
}

/// `x^k (d/dx)^k [(−x)^m e^{−x}]`.
fn integer_order_multiplier(m: u32, k: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if m == 0 && k == 0 { 1.0 } else { 0.0 };
    }
    let sign_m = if m % 2 == 0 { 1.0 } else { -1.0 };
    let mut sum = 0.0;
    for j in 0..=k.min(m) {
        let binom = factorial(k) / (factorial(j) * factorial(k - j));
        let falling = factorial(m) / factorial(m - j);
        let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
        sum += binom * falling * sign * x.powi((m + k - j) as i32);
    }
    sign_m * sum * (-x).exp()
}

/// `D_j(β, x) = (x^j/Γ(β)) ∫_0^1 (1−s)^{β−1} (−s)^j e^{−xs} ds` for `Re β > 0`.
fn scaled_derivative(beta: Complex64, recip_gamma: Complex64, j: u32, x: f64) -> Complex64 {
    if j > 0 && x == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
    sign * x.powi(j as i32) * recip_gamma * averaging_integral(beta, j, x)
}

const PANEL_NODES: usize = 32;
const ENDPOINT_NODES: usize = 24;

/// `∫_0^1 (1−s)^{β−1} s^j e^{−xs} ds` for `Re β > 0`, `x ≥ 0`.
///
/// `[0, 1/2]` is split into panels growing geometrically from width `1/x`, so
/// the `e^{−xs}` layer at the origin is resolved. On `[1/2, 1]` we work in
/// `u = 1 − s` with panels shrinking geometrically toward `u = 0`; the last
/// panel `[0, ε]` is done by Gauss–Jacobi with weight `u^{β−1}` for real `β`,
/// and by the termwise-integrated Taylor series of the smooth factor when `β`
/// is complex (the weight `u^{i Im β}` oscillates without bound there).
pub fn averaging_integral(beta: Complex64, j: u32, x: f64) -> Complex64 {
    let gl = gauss_legendre(PANEL_NODES);
    let jf = j as f64;
    let bm1 = beta - 1.0;
    let mut total = Complex64::new(0.0, 0.0);

    // s ∈ [0, 1/2]
    let s_cut = if x > 0.0 { 0.5f64.min((60.0 + 4.0 * jf) / x) } else { 0.5 };
    let mut lo = 0.0;
    let mut width = if x > 2.0 { 1.0 / x } else { 0.5 };
    while lo < s_cut {
        let hi = (lo + width).min(s_cut);
        for (s, w) in mapped(&gl, lo, hi) {
            let log_real = jf * s.ln() - x * s;
            total += w * (bm1 * (-s).ln_1p() + log_real).exp();
        }
        lo = hi;
        width *= 2.0;
    }

    // u = 1 − s ∈ [0, 1/2]; the factor e^{−x(1−u)} ≤ e^{−x/2}
    if x <= 160.0 {
        let eps = 1e-3 / x.max(1.0);
        let mut hi = 0.5;
        while hi > eps {
            let lo = (hi * 0.5).max(eps);
            let pieces = ((x * (hi - lo)) / 4.0).ceil().max(1.0) as usize;
            let step = (hi - lo) / pieces as f64;
            for p in 0..pieces {
                let a = lo + p as f64 * step;
                for (u, w) in mapped(&gl, a, a + step) {
                    let log_real = jf * (-u).ln_1p() - x * (1.0 - u);
                    total += w * (bm1 * u.ln() + log_real).exp();
                }
            }
            hi = lo;
        }
        total += endpoint_piece(beta, j, x, eps);
    }
    total
}

/// `∫_0^ε u^{β−1} (1−u)^j e^{−x(1−u)} du`.
fn endpoint_piece(beta: Complex64, j: u32, x: f64, eps: f64) -> Complex64 {
    let jf = j as f64;
    if beta.im == 0.0 {
        let rule = gauss_jacobi(ENDPOINT_NODES, 0.0, beta.re - 1.0);
        let half = 0.5 * eps;
        let sum: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(y, w)| {
                let u = half * (1.0 + y);
                w * (jf * (-u).ln_1p() - x * (1.0 - u)).exp()
            })
            .sum();
        return Complex64::from(half.powf(beta.re) * sum);
    }
    // Taylor coefficients of (1−u)^j e^{xu}
    const TERMS: usize = 10;
    let mut coeffs = [0.0f64; TERMS];
    for (n, c) in coeffs.iter_mut().enumerate() {
        for i in 0..=n.min(j as usize) {
            let binom = factorial(j) / (factorial(i as u32) * factorial(j - i as u32));
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            *c += binom * sign * x.powi((n - i) as i32) / factorial((n - i) as u32);
        }
    }
    let ln_eps = eps.ln();
    let sum: Complex64 = coeffs
        .iter()
        .enumerate()
        .map(|(n, &c)| {
            let e = beta + n as f64;
            c * (e * ln_eps).exp() / e
        })
        .sum();
    sum * (-x).exp()
}

/// What a time grid discretizes: the rates and the shape of the integrand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridKernel {
    /// `(ta)^k e^{−ta}`.
    Heat,
    /// `(t√a)^k e^{−t√a}`.
    Poisson,
    /// `t^k ∂^k M^α_t`, decaying like `1/(ta)`.
    Fractional { re: f64, im: f64 },
    /// `φ(tA)` with `|φ(x)| ≲ min(x^s, x^{−s})`.
    Hinf { decay: f64 },
}

/// Log-uniform quadrature for `∫_0^∞ · dt/t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Bound on the discarded `∫ |integrand|^q dt/t` per unit component.
    pub tail_bound: f64,
    pub k: u32,
    pub q: f64,
    pub density: usize,
    pub kernel: GridKernel,
    /// Smallest and largest positive rate the grid was built for.
    pub rate_min: f64,
    pub rate_max: f64,
}

impl TimeGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    /// Whether the grid's truncation covers every decaying component of `sg`.
    pub fn covers(&self, sg: &Semigroup) -> bool {
        let rate = |a: f64| if self.kernel == GridKernel::Poisson { a.sqrt() } else { a };
        match sg.spectral_gap() {
            None => true,
            Some(gap) => {
                rate(gap) >= self.rate_min * (1.0 - 1e-9) && rate(sg.max_rate()) <= self.rate_max * (1.0 + 1e-9)
            }
        }
    }

    pub(crate) fn check(&self, sg: &Semigroup, kernel: GridKernel, k: u32, q: f64) -> Result<()> {
        if self.kernel != kernel || self.k != k || self.q != q {
            return invalid(format!(
                "grid was built for {:?}, k = {}, q = {}; requested {:?}, k = {k}, q = {q}",
                self.kernel, self.k, self.q, kernel
            ));
        }
        if !self.covers(sg) {
            return invalid("grid rates do not cover the semigroup's spectrum");
        }
        Ok(())
    }
}

pub const DEFAULT_DENSITY: usize = 64;

/// Grid for `∫_0^∞ |(ta)^k e^{−ta}|^q dt/t` over the spectrum of `sg`.
pub fn make_time_grid(sg: &Semigroup, k: u32, q: f64, tol: f64, density: usize) -> Result<TimeGrid> {
    make_time_grid_for(sg, GridKernel::Heat, k, q, tol, density)
}

/// Grid for the given integrand shape.
pub fn make_time_grid_for(
    sg: &Semigroup,
    kernel: GridKernel,
    k: u32,
    q: f64,
    tol: f64,
    density: usize,
) -> Result<TimeGrid> {
    if !(tol > 0.0) || density == 0 || !(q > 0.0) {
        return invalid("tolerance, density and q must be positive");
    }
    let Some(gap) = sg.spectral_gap() else {
        return invalid("no decaying component; square functions vanish");
    };
    let (rate_min, rate_max) = match kernel {
        GridKernel::Poisson => (gap.sqrt(), sg.max_rate().sqrt()),
        _ => (gap, sg.max_rate()),
    };
    let (x_lo, x_hi, lower, upper) = match kernel {
        GridKernel::Heat | GridKernel::Poisson => {
            if k == 0 {
                return invalid("the heat-type grid needs k ≥ 1");
            }
            exponential_tails(k, q, tol)
        }
        GridKernel::Fractional { re, im } => fractional_tails(Complex64::new(re, im), k, q, tol)?,
        GridKernel::Hinf { decay } => {
            if !(decay > 0.0) {
                return invalid("H^∞ grids need a positive decay exponent");
            }
            power_tails(decay, q, tol)
        }
    };
    let t_min = x_lo / rate_max;
    let t_max_req = x_hi / rate_min;
    let h = std::f64::consts::LN_10 / density as f64;
    let steps = ((t_max_req / t_min).ln() / h).ceil().max(1.0) as usize;
    let ln_min = t_min.ln();
    let points: Vec<f64> = (0..=steps).map(|i| (ln_min + i as f64 * h).exp()).collect();
    let mut weights = vec![h; steps + 1];
    weights[0] = 0.5 * h;
    weights[steps] = 0.5 * h;
    Ok(TimeGrid {
        t_min,
        t_max: *points.last().unwrap(),
        points,
        weights,
        tail_bound: lower + upper,
        k,
        q,
        density,
        kernel,
        rate_min,
        rate_max,
    })
}

/// Cut-offs `x_lo, x_hi` in the scaled variable `x = t·rate` and their tail bounds.
fn exponential_tails(k: u32, q: f64, tol: f64) -> (f64, f64, f64, f64) {
    let s = q * k as f64;
    // ∫_0^{x} y^{s} e^{-qy} dy/y ≤ x^s / s
    let x_lo = (1e-4f64).min((0.5 * tol * s).powf(1.0 / s));
    let lower = x_lo.powf(s) / s;
    // ∫_x^∞ y^{s} e^{-qy} dy/y = q^{-s} Γ(s, qx), decreasing in x
    let upper_at = |x: f64| q.powf(-s) * upper_gamma(s, q * x);
    let x_hi = bisect_decreasing(upper_at, 0.5 * tol);
    (x_lo, x_hi, lower, upper_at(x_hi))
}

/// Tails of `min(x^s, x^{−s})^q`, symmetric in `ln x`.
fn power_tails(s: f64, q: f64, tol: f64) -> (f64, f64, f64, f64) {
    let e = q * s;
    let x_lo = (0.5 * tol * e).powf(1.0 / e).min(1e-2);
    let tail = x_lo.powf(e) / e;
    (x_lo, 1.0 / x_lo, tail, tail)
}

/// Tails for `D_k(α, x)`: `|D_k| ≲ |k!/Γ(α+k+1)| x^k` near 0 and `Σ_n |(1−α)_n| (n+1)_k / (|Γ(α)| x^{n+1})` at infinity.
fn fractional_tails(alpha: Complex64, k: u32, q: f64, tol: f64) -> Result<(f64, f64, f64, f64)> {
    let params = FracParams::new(alpha, k)?;
    if let FracPlan::NonPositiveInteger(m) = params.plan {
        let order = m + k;
        if order == 0 {
            return invalid("M^0 itself does not decay at 0; use k ≥ 1");
        }
        // x^k ∂^k [(−x)^m e^{−x}] is a sum of at most 2^k terms x^j e^{−x}, max(m, k) ≤ j ≤ m + k
        let c = (2.0f64).powi(k as i32) * factorial(m + k);
        let tol = tol / c.powf(q);
        let (lo, _, lower, _) = exponential_tails(m.max(k), q, tol);
        let (_, hi, _, upper) = exponential_tails(order, q, tol);
        return Ok((lo, hi, lower * c.powf(q), upper * c.powf(q)));
    }
    if k == 0 {
        return invalid("M^α square functions need k ≥ 1");
    }
    let near = (factorial(k) * recip_gamma(alpha + (k + 1) as f64).norm()).max(1e-300);
    let s = q * k as f64;
    let x_lo = (1e-4f64).min((0.5 * tol * s).powf(1.0 / s) / near.powf(1.0 / k as f64));
    let lower = (near * x_lo.powi(k as i32)).powf(q) / s;
    let rg = recip_gamma(alpha).norm();
    let envelope = |x: f64| {
        let mut poch = 1.0;
        let mut rising_k = factorial(k);
        let mut sum = 0.0;
        for n in 0..4u32 {
            sum += poch * rising_k / x.powi(n as i32 + 1);
            poch *= (Complex64::from(1.0 + n as f64) - alpha).norm();
            rising_k *= (n + 1 + k) as f64 / (n + 1) as f64;
        }
        rg * sum + x.powi(k as i32) * (-0.5 * x).exp() * factorial(k + 4)
    };
    // x·envelope(x) is decreasing once the exponential part is gone, so the tail is ≤ envelope(X)^q / q
    let upper_at = |x: f64| envelope(x).powf(q) / q;
    let x_hi = bisect_decreasing(upper_at, 0.5 * tol).max(200.0 + 4.0 * k as f64);
    Ok((x_lo, x_hi, lower, upper_at(x_hi)))
}

/// Smallest `x` (to relative precision) with `f(x) ≤ target`, for `f` eventually decreasing.
fn bisect_decreasing(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let mut hi = 1.0;
    while f(hi) > target {
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    let mut lo = hi / 2.0;
    if f(lo) <= target {
        lo = 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_markov::{random_reversible, square, ChainModel};
    use crate::seed::stable_hash;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn two_point() -> MarkovOperator {
        MarkovOperator::new(WeightedSpace::uniform(2), DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75])).unwrap()
    }

    fn random_square(n: usize, seed: u64) -> MarkovOperator {
        square(&random_reversible(n, seed, ChainModel::Dense).unwrap().operator)
    }

    /// 1/Γ(z) by upward recurrence to Re z ≥ 12, then the Stirling series.
    fn recip_gamma_oracle(z: Complex64) -> Complex64 {
        let mut prod = Complex64::new(1.0, 0.0);
        let mut w = z;
        while w.re < 12.0 {
            prod *= w;
            w += 1.0;
        }
        let w2 = w * w;
        let series = 1.0 / (12.0 * w) - 1.0 / (360.0 * w * w2) + 1.0 / (1260.0 * w * w2 * w2)
            - 1.0 / (1680.0 * w * w2 * w2 * w2);
        let ln_gamma = (w - 0.5) * w.ln() - w + 0.5 * (2.0 * PI).ln() + series;
        prod * (-ln_gamma).exp()
    }

    /// D_k(α, x) = (−x)^k e^{−x} Σ_n Σ_i C(k,i)(−1)^i x^n/n! · r_{i+n}, where
    /// r_m = 1/(Γ(α)(α+m)) = (α)_m/Γ(α+m+1) is entire in α.
    fn series_oracle(alpha: Complex64, k: u32, x: f64) -> Complex64 {
        // direct products while α + m + 1 may still hit a pole, the stable ratio afterwards
        let mut r: Vec<Complex64> = (0..12u32)
            .map(|m| (0..m).map(|j| alpha + j as f64).product::<Complex64>() * recip_gamma_oracle(alpha + (m + 1) as f64))
            .collect();
        for m in 11..(200 + k) {
            let next = r[m as usize] * (alpha + m as f64) / (alpha + (m + 1) as f64);
            r.push(next);
        }
        let mut total = Complex64::new(0.0, 0.0);
        let mut xn_over_fact = 1.0;
        for n in 0..200u32 {
            if n > 0 {
                xn_over_fact *= x / n as f64;
            }
            for i in 0..=k {
                let binom = factorial(k) / (factorial(i) * factorial(k - i));
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                total += binom * sign * xn_over_fact * r[(i + n) as usize];
            }
        }
        (-x).powi(k as i32) * (-x).exp() * total
    }

    #[test]
    fn identity_operator_gives_identity_semigroup() {
        let sg = heat(&MarkovOperator::identity(WeightedSpace::uniform(4))).unwrap();
        let f = VectorField::random(sg.space().clone(), 2, 1);
        for t in [0.0, 0.5, 10.0] {
            assert!((sg.evolve(t, &f).unwrap().values() - f.values()).amax() < 1e-14);
        }
        assert!(make_time_grid(&sg, 1, 2.0, 1e-10, 64).is_err());
    }

    #[test]
    fn two_point_heat_multiplier() {
        let sg = heat(&two_point()).unwrap();
        assert_relative_eq!(sg.generator_eigenvalues()[1], 0.5, epsilon = 1e-14);
        let f = VectorField::scalar(sg.space().clone(), &[1.0, -1.0]).unwrap();
        let out = sg.evolve(1.0, &f).unwrap();
        assert_relative_eq!(out.values()[(0, 0)], 0.606_530_659_712_633_4, epsilon = 1e-14);
    }

    #[test]
    fn long_time_limit_is_fixed_projection() {
        let sg = heat(&random_square(8, 3)).unwrap();
        let f = VectorField::random(sg.space().clone(), 3, 4);
        let t = 50.0 / sg.spectral_gap().unwrap();
        let diff = sg.evolve(t, &f).unwrap().sub(&sg.fixed_part(&f).unwrap());
        assert!(diff.values().amax() < 1e-8);
    }

    #[test]
    fn evolve_rejects_negative_time() {
        let sg = heat(&two_point()).unwrap();
        let f = VectorField::scalar(sg.space().clone(), &[1.0, 0.0]).unwrap();
        assert!(sg.evolve(-1.0, &f).is_err());
        assert!(sg.derivative(1, 0.0, &f).is_err());
        assert!(sg.poisson_subordinate(0.0, &f, SubordinationMode::Exact).is_err());
    }

    #[test]
    fn semigroup_law_and_contractivity() {
        for s in 0..20u64 {
            let sg = heat(&random_square(7, stable_hash(s, 0))).unwrap();
            let f = VectorField::random(sg.space().clone(), 3, stable_hash(s, 1));
            let (a, b) = (0.3 + s as f64 * 0.1, 1.7);
            let lhs = sg.evolve(a, &sg.evolve(b, &f).unwrap()).unwrap();
            let rhs = sg.evolve(a + b, &f).unwrap();
            assert!((lhs.values() - rhs.values()).amax() < 1e-12);
            for (p, q) in [(2.0, 2.0), (1.5, 3.0), (4.0, 1.2)] {
                assert!(lhs.norm(p, q) <= f.norm(p, q) * (1.0 + 1e-12));
                let pt = sg.poisson_subordinate(a, &f, SubordinationMode::Exact).unwrap();
                assert!(pt.norm(p, q) <= f.norm(p, q) * (1.0 + 1e-12));
            }
            // ∂T_{t+s} = ∂T_t T_s
            let d1 = sg.derivative(1, a + b, &f).unwrap().scale(1.0 / (a + b));
            let d2 = sg.derivative(1, a, &sg.evolve(b, &f).unwrap()).unwrap().scale(1.0 / a);
            assert!((d1.values() - d2.values()).amax() < 1e-12);
        }
    }

    #[test]
    fn derivative_examples() {
        assert_relative_eq!(derivative_multiplier(0.5, 1, 2.0), -(-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(derivative_multiplier(0.0, 3, 2.0), 0.0);
        let sg = heat(&random_square(6, 11)).unwrap();
        let f = sg.fixed_part(&VectorField::random(sg.space().clone(), 2, 1)).unwrap();
        assert!(sg.derivative(2, 1.3, &f).unwrap().values().amax() < 1e-12);
    }

    #[test]
    fn k_power_rescaling_identity() {
        let sg = heat(&random_square(9, 5)).unwrap();
        let f = VectorField::random(sg.space().clone(), 2, 6);
        for k in 1..=3u32 {
            for t in [0.1, 1.0, 7.0] {
                let direct = sg.derivative(k, t, &f).unwrap();
                let mut it = f.clone();
                for _ in 0..k {
                    it = sg.derivative(1, t / k as f64, &it).unwrap();
                }
                let composed = it.scale((k as f64).powi(k as i32));
                assert!((direct.values() - composed.values()).amax() < 1e-12, "k = {k}, t = {t}");
            }
        }
    }

    #[test]
    fn subordination_matches_exponential() {
        for a in [0.0, 1e-6, 0.03, 0.5, 1.0, 1.9, 2.0] {
            for t in [0.01, 0.1, 1.0, 10.0, 100.0] {
                let exact = SubordinationMode::Exact.multiplier(a, t);
                let quad = SubordinationMode::Quadrature.multiplier(a, t);
                assert!((quad - exact).abs() <= 1e-12 * exact.max(1e-300) + 1e-300, "a={a} t={t}: {quad} vs {exact}");
            }
        }
        assert_relative_eq!(SubordinationMode::Quadrature.multiplier(1.0, 1.0), (-1.0f64).exp(), max_relative = 1e-13);
        assert_relative_eq!(SubordinationMode::GaussLaguerre(64).multiplier(0.0, 3.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn gauss_laguerre_subordination_error_is_measurable() {
        // the kernel e^{-c/s} is not smooth at s = 0, so the Laguerre rule converges slowly
        let exact = SubordinationMode::Exact.multiplier(1.0, 1.0);
        let gl = SubordinationMode::GaussLaguerre(64).multiplier(1.0, 1.0);
        let err = (gl - exact).abs() / exact;
        assert!(err < 1e-2 && err > 1e-9, "{err}");
    }

    #[test]
    fn poisson_semigroup_law() {
        let sg = heat(&random_square(6, 8)).unwrap();
        let f = VectorField::random(sg.space().clone(), 2, 2);
        let m = SubordinationMode::Exact;
        let lhs = sg.poisson_subordinate(0.4, &sg.poisson_subordinate(1.1, &f, m).unwrap(), m).unwrap();
        let rhs = sg.poisson_subordinate(1.5, &f, m).unwrap();
        assert!((lhs.values() - rhs.values()).amax() < 1e-12);
    }

    #[test]
    fn frac_multiplier_examples() {
        let one = FracParams::new(Complex64::from(1.0), 0).unwrap();
        let v = one.multiplier(1.0);
        assert_relative_eq!(v.re, 1.0 - (-1.0f64).exp(), epsilon = 1e-13);
        assert!(v.im.abs() < 1e-15);
        for x in [0.0, 0.3, 4.0, 90.0] {
            let zero = FracParams::new(Complex64::from(0.0), 0).unwrap().multiplier(x);
            assert_eq!(zero.re, (-x).exp());
            let m1 = FracParams::new(Complex64::from(-1.0), 0).unwrap().multiplier(x);
            assert_relative_eq!(m1.re, derivative_multiplier(1.0, 1, x), epsilon = 1e-15);
        }
        assert!(FracParams::new(Complex64::new(1.0, 5.0), 0).is_err());
    }

    #[test]
    fn frac_multiplier_matches_series_oracle() {
        let alphas = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(2.5, 0.0),
            Complex64::new(0.03, 0.0),
            Complex64::new(1.0, 1.0),
            Complex64::new(0.2, -3.5),
            Complex64::new(-0.5, 0.0),
            Complex64::new(-1.3, 0.7),
            Complex64::new(0.0, 1.0),
            Complex64::new(-2.0, 0.0),
        ];
        for alpha in alphas {
            for k in 0..=3u32 {
                let params = FracParams::new(alpha, k).unwrap();
                for x in [0.0, 0.01, 0.7, 3.0, 12.0] {
                    let got = params.multiplier(x);
                    let want = series_oracle(alpha, k, x);
                    let err = (got - want).norm();
                    assert!(err < 1e-11 * want.norm().max(1.0), "α={alpha} k={k} x={x}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn frac_large_argument_asymptotics() {
        // m_α(x) → 1/(Γ(α) x) (1 + (1−α)/x + …)
        let alpha = Complex64::new(0.7, 0.4);
        let params = FracParams::new(alpha, 0).unwrap();
        let x = 5e4;
        let got = params.multiplier(x);
        let lead = recip_gamma_oracle(alpha) / x * (1.0 + (1.0 - alpha) / x);
        assert!((got - lead).norm() < 1e-8 * lead.norm());
    }

    #[test]
    fn frac_recursion_identity() {
        for alpha in [Complex64::from(0.0), Complex64::from(1.0), Complex64::from(-1.0), Complex64::new(1.0, 1.0)] {
            for k in 0..=3u32 {
                for x in [0.05, 1.0, 8.0, 40.0] {
                    let lhs = FracParams::new(alpha - 1.0, k).unwrap().multiplier(x);
                    let a = FracParams::new(alpha, k).unwrap().multiplier(x);
                    let b = FracParams::new(alpha, k + 1).unwrap().multiplier(x);
                    let rhs = (k as f64 + alpha) * a + b;
                    assert!((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()), "α={alpha} k={k} x={x}");
                }
            }
        }
    }

    #[test]
    fn fractional_integrals_compose() {
        // M^{α+β}_t = (1/Γ(β)) ∫_0^1 (1−s)^{β−1} s^α M^α_{ts} ds
        for (alpha, beta) in [(1.0, 1.0), (0.5, 0.5)] {
            let pa = FracParams::new(Complex64::from(alpha), 0).unwrap();
            let pab = FracParams::new(Complex64::from(alpha + beta), 0).unwrap();
            for x in [0.2, 2.0, 15.0] {
                // s = sin²φ turns (1−s)^{β−1} s^α ds into 2 cos^{2β−1}φ sin^{2α+1}φ dφ
                let rule = gauss_legendre(200);
                let mut sum = 0.0;
                for (phi, w) in mapped(&rule, 0.0, PI / 2.0) {
                    let (sn, cs) = phi.sin_cos();
                    let s = sn * sn;
                    sum += w * 2.0 * cs.powf(2.0 * beta - 1.0) * sn.powf(2.0 * alpha + 1.0) * pa.multiplier(x * s).re;
                }
                let lhs = sum * recip_gamma(Complex64::from(beta)).re;
                assert_relative_eq!(lhs, pab.multiplier(x).re, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn time_grid_tail_bounds() {
        let op = MarkovOperator::new(WeightedSpace::uniform(2), DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75])).unwrap();
        let sg = heat(&op).unwrap();
        let grid = make_time_grid(&sg, 1, 2.0, 1e-10, 64).unwrap();
        assert!(grid.tail_bound <= 1e-10);
        // Γ(2, 2·0.5·t)/4 = 5e-11 ⇒ t ≈ 25.3
        assert!(grid.t_max > 25.0 && grid.t_max < 26.0, "{}", grid.t_max);
        assert!(grid.points.windows(2).all(|w| w[0] < w[1]));
        assert!(grid.t_min < grid.t_max);
    }

    #[test]
    fn trapezoid_in_log_time_converges_fast() {
        // ∫ (ta e^{−ta})² dt/t = 1/4 for every a > 0
        let sg = heat(&random_square(6, 2)).unwrap();
        let mut errs = Vec::new();
        for density in [2, 4, 8] {
            let grid = make_time_grid(&sg, 1, 2.0, 1e-14, density).unwrap();
            let a = sg.spectral_gap().unwrap();
            let s: f64 = grid.iter().map(|(t, w)| w * derivative_multiplier(a, 1, t).powi(2)).sum();
            errs.push((s - 0.25).abs());
        }
        assert!(errs[1] <= errs[0] / 4.0 && errs[2] <= (errs[1] / 4.0).max(1e-13), "{errs:?}");
    }

    #[test]
    fn fractional_grid_reaches_far() {
        let sg = heat(&random_square(5, 1)).unwrap();
        let grid = make_time_grid_for(&sg, GridKernel::Fractional { re: 1.0, im: 0.0 }, 1, 2.0, 1e-8, 32).unwrap();
        assert!(grid.tail_bound <= 1e-8);
        assert!(grid.t_max * sg.spectral_gap().unwrap() > 1e3);
        assert!(grid.check(&sg, GridKernel::Heat, 1, 2.0).is_err());
    }
}
