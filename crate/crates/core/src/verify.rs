//! Executable checks of the identities and inequalities, and constant sweeps
//! over randomized instance families.
//!
//! Every sweep draws its instances from an [`InstanceFamily`]: trial `i` uses
//! the size `sizes[i % sizes.len()]` and the seed `stable_hash(master_seed, i)`,
//! so a report can be replayed bit for bit. Trials run in parallel and are
//! reduced in trial order.
//!
//! Inequality ratios are built from norms that are either exact or estimated
//! from below, so an inequality PASS means "not refuted at the sampled
//! resolution".

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{E, PI};
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::functional_calculus::{
    algebraic_condition, algebraic_constant, calibrate_gamma, default_scan_grid, hinf_apply_contour,
    hinf_apply_spectral, resolvent_bound_scan, resolvent_constant_l2, stolz_contains, test_function, Contour,
    HinfFunction, StolzDomain, TestFunction,
};
use crate::measure_markov::{random_reversible, rota_dilation, spectral, square, ChainModel, MarkovOperator};
use crate::seed::stable_hash;
use crate::semigroup_calculus::{
    heat, make_time_grid, make_time_grid_for, GridKernel, Semigroup, SubordinationMode, TimeGrid, DEFAULT_DENSITY,
};
use crate::special::factorial;
use crate::square_functions::{discrete_square, g_function_with, hn_functional_with_budget, SquareKernel};
use crate::vector_spaces::{estimate_norm_with, lp_scalar_norm, AscentConfig, BanachParams, ConvexityEstimate, VectorField};

/// Tail tolerance of the time grids used by the sweeps.
pub const GRID_TOL: f64 = 1e-10;
/// Tail tolerance of the discrete square function in the sweeps.
pub const DISCRETE_TOL: f64 = 1e-12;
/// Largest admissible least-squares slope of per-size maxima against `ln(size)`.
pub const TREND_SLOPE_LIMIT: f64 = 0.05;

const FIELD_STREAM: u64 = 0x0066_6965_6c64;

/// Randomized family of squared reversible chains with random fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFamily {
    pub model: ChainModel,
    pub sizes: Vec<usize>,
    pub params: BanachParams,
    pub trials: usize,
    pub master_seed: u64,
}

/// One trial of a family: the root `S`, `T = S²` and the derived seed.
#[derive(Debug, Clone)]
pub struct Instance {
    pub index: usize,
    pub size: usize,
    pub seed: u64,
    pub operator: MarkovOperator,
}

impl Instance {
    pub fn root(&self) -> &MarkovOperator {
        self.operator.root().expect("instances are squares")
    }

    /// Standard normal field with `d` columns, seeded from the trial.
    pub fn field(&self, d: usize) -> VectorField {
        VectorField::random(self.operator.space().clone(), d, stable_hash(self.seed, FIELD_STREAM))
    }
}

impl InstanceFamily {
    pub fn new(model: ChainModel, sizes: Vec<usize>, params: BanachParams, trials: usize, master_seed: u64) -> Result<Self> {
        if trials == 0 {
            return invalid("a family needs at least one trial");
        }
        if sizes.is_empty() || sizes.iter().any(|&n| n < 2) {
            return invalid("sizes must be nonempty and each at least 2");
        }
        Ok(Self { model, sizes, params, trials, master_seed })
    }

    pub fn trial_seed(&self, index: usize) -> u64 {
        stable_hash(self.master_seed, index as u64)
    }

    pub fn instance(&self, index: usize) -> Result<Instance> {
        let size = self.sizes[index % self.sizes.len()];
        let seed = self.trial_seed(index);
        let root = random_reversible(size, seed, self.model)?.operator;
        Ok(Instance { index, size, seed, operator: square(&root) })
    }

    /// Same family with other Banach parameters.
    pub fn with_params(&self, params: BanachParams) -> Self {
        Self { params, ..self.clone() }
    }
}

/// Summary statistics of a list of ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub max: f64,
    pub mean: f64,
    /// Nearest-rank 95th percentile, raised to the mean if it falls below it.
    pub p95: f64,
    pub min: f64,
    pub count: usize,
}

impl RatioStats {
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { max: 0.0, mean: 0.0, p95: 0.0, min: 0.0, count: 0 };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self { max: sorted[n - 1], mean, p95: sorted[rank - 1].max(mean), min: sorted[0], count: n }
    }
}

/// Largest ratio observed at one size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub max: f64,
    pub count: usize,
}

/// One point of a reported sequence, e.g. `(n, n‖Tⁿ(T−1)‖)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: f64,
    pub value: f64,
}

/// Outcome of one check or sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub family: Option<InstanceFamily>,
    pub stats: RatioStats,
    pub per_size: Vec<SizeSummary>,
    pub trend_slope: Option<f64>,
    pub series: Vec<SeriesPoint>,
    pub error_budget: BTreeMap<String, f64>,
    /// Trials whose ratio was `0/0` and therefore left out.
    pub skipped: usize,
    pub criterion: String,
    pub pass: bool,
    pub seed: u64,
    pub notes: Vec<String>,
}

impl ConstantReport {
    fn new(name: &str, criterion: &str, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
            family: None,
            stats: RatioStats::from_values(&[]),
            per_size: Vec::new(),
            trend_slope: None,
            series: Vec::new(),
            error_budget: BTreeMap::new(),
            skipped: 0,
            criterion: criterion.to_string(),
            pass: false,
            seed,
            notes: Vec::new(),
        }
    }

    fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

const LOWER_BOUND_NOTE: &str = "norms of L_p(Ω;X) operators are estimated from below; PASS means not refuted at sampled resolution";

/// Least-squares slope of the per-size maxima against `ln(size)`; `None` with fewer than two sizes.
pub fn size_trend_slope(per_size: &[SizeSummary]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = per_size.iter().filter(|s| s.count > 0).map(|s| ((s.size as f64).ln(), s.max)).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Per-trial outcome: `None` for a skipped `0/0` ratio, plus a numerical error budget.
struct Sample {
    size: usize,
    value: Option<f64>,
    budget: f64,
}

fn sweep(
    family: &InstanceFamily,
    eval: impl Fn(&Instance) -> Result<(Option<f64>, f64)> + Sync,
) -> Result<Vec<Sample>> {
    (0..family.trials)
        .into_par_iter()
        .map(|i| {
            let inst = family.instance(i)?;
            let (value, budget) = eval(&inst)?;
            Ok(Sample { size: inst.size, value, budget })
        })
        .collect()
}

/// Fill statistics, per-size maxima, the trend slope and the skip count.
fn summarize(mut report: ConstantReport, family: &InstanceFamily, samples: &[Sample], budget_key: &str) -> ConstantReport {
    let values: Vec<f64> = samples.iter().filter_map(|s| s.value).collect();
    report.stats = RatioStats::from_values(&values);
    report.skipped = samples.len() - values.len();
    let mut sizes = family.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    report.per_size = sizes
        .iter()
        .map(|&size| {
            let vals: Vec<f64> = samples.iter().filter(|s| s.size == size).filter_map(|s| s.value).collect();
            SizeSummary { size, max: vals.iter().copied().fold(0.0, f64::max), count: vals.len() }
        })
        .collect();
    report.trend_slope = size_trend_slope(&report.per_size);
    let budget = samples.iter().map(|s| s.budget).fold(0.0, f64::max);
    report.error_budget.insert(budget_key.to_string(), budget);
    report.family = Some(family.clone());
    report
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

/// `f · 2^{−e}` with `2^e ≤ max|f| < 2^{e+1}`; rescaling `f` by a power of two leaves the result unchanged.
fn pow2_normalized(f: &VectorField) -> VectorField {
    let m = f.values().amax();
    if m == 0.0 || !m.is_normal() {
        return f.clone();
    }
    let e = ((m.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    f.scale(2f64.powi(-e))
}

fn l2_squared(f: &VectorField) -> f64 {
    let n = f.norm(2.0, 2.0);
    n * n
}

// ---------------------------------------------------------------------------
// identities

/// Relative residual of `Σ μ G_{2,k}(f)² = 4^{−k}(2k−1)! ‖f − 𝖥f‖²_{L_2}`
/// (absolute when `f` lies in the fixed space).
pub fn check_l2_identity(sg: &Semigroup, f: &VectorField, k: u32, grid: &TimeGrid) -> Result<f64> {
    if k == 0 {
        return invalid("the identity needs k ≥ 1");
    }
    let g = g_function_with(sg, f, SquareKernel::Heat, k, 2.0, grid)?;
    let lhs = g.lp_norm(2.0).powi(2);
    let constant = factorial(2 * k - 1) / 4f64.powi(k as i32);
    let rhs = constant * l2_squared(&sg.mean_free(f)?);
    let scale = l2_squared(f);
    if rhs <= 1e-20 * scale || scale == 0.0 {
        return Ok((lhs - rhs).abs());
    }
    Ok((lhs - rhs).abs() / rhs)
}

/// Relative residual of `‖f − 𝖥f‖²_{L_2} = Σ_n n ‖Tⁿ⁻¹(1 − T²) f‖²_{L_2}`, summed by repeated
/// application until the geometric tail is below `1e−14` of the total.
pub fn check_discrete_l2_identity(t_op: &MarkovOperator, f: &VectorField) -> Result<f64> {
    if f.space() != t_op.space() {
        return invalid("field does not live on the operator's space");
    }
    let dec = spectral(t_op)?;
    let lam = dec.second_modulus();
    if lam >= 1.0 {
        return Err(LabError::TruncationFailure(format!("non-fixed eigenvalue of modulus {lam}")));
    }
    let sg = Semigroup::from_decomposition(dec)?;
    let lhs = l2_squared(&sg.mean_free(f)?);
    let m = t_op.matrix();
    let mut term = f.values() - m * (m * f.values());
    let mut sum = 0.0;
    let mut n = 1usize;
    let ratio = lam * lam;
    loop {
        let norm = l2_squared(&f.with_values(term.clone()));
        sum += n as f64 * norm;
        // remaining Σ_{j>n} j ρ^{j−n} ‖term‖² ≤ ‖term‖² ρ (n+1) / (1−ρ)²
        let tail = norm * ratio * (n + 1) as f64 / (1.0 - ratio).powi(2);
        if tail <= 1e-14 * sum.max(f64::MIN_POSITIVE) || norm == 0.0 {
            break;
        }
        term = m * term;
        n += 1;
        if n > 50_000_000 {
            return Err(LabError::TruncationFailure("discrete identity did not converge".into()));
        }
    }
    let scale = l2_squared(f);
    if lhs <= 1e-20 * scale || scale == 0.0 {
        return Ok((lhs - sum).abs());
    }
    Ok((lhs - sum).abs() / lhs)
}

/// `max|P_t f (mode) − e^{−t√A} f| / max|e^{−t√A} f|` on the mean-free part of `f`.
pub fn check_subordination(sg: &Semigroup, f: &VectorField, t: f64, mode: SubordinationMode) -> Result<f64> {
    let g = sg.mean_free(f)?;
    let exact = sg.poisson_subordinate(t, &g, SubordinationMode::Exact)?;
    let approx = sg.poisson_subordinate(t, &g, mode)?;
    let scale = max_abs(exact.values());
    let diff = max_abs(&(approx.values() - exact.values()));
    Ok(if scale == 0.0 { diff } else { diff / scale })
}

/// `max_x |(𝔼_𝒜𝔼_ℬ lift f)(x) − (S²f)(x)|` for the Rota dilation of `s`.
pub fn check_rota(s: &MarkovOperator, f: &VectorField) -> Result<f64> {
    if f.space() != s.space() {
        return invalid("field does not live on the operator's space");
    }
    let rota = rota_dilation(s);
    let via_dilation = rota.compose_on(f.values());
    let direct = s.matrix() * (s.matrix() * f.values());
    Ok(max_abs(&(via_dilation - direct)))
}

/// Contour-versus-spectral residual of `φ(A) f`, relative to `max|f|`; the imaginary residual of
/// the contour result is folded in.
pub fn check_contour_calculus(sg: &Semigroup, phi: &HinfFunction, contour: &Contour, f: &VectorField) -> Result<f64> {
    let by_contour = hinf_apply_contour(sg, phi, contour, f)?;
    let by_spectrum = hinf_apply_spectral(sg, phi, f)?;
    let diff = (by_contour.values() - by_spectrum.values()).map(|z| z.norm()).max();
    let scale = max_abs(f.values()).max(f64::MIN_POSITIVE);
    Ok(diff.max(by_contour.imaginary_residual()) / scale)
}

/// Residual of `t^k ∂^k T_t = k^k ((t/k) ∂ T_{t/k})^k`, relative to `max|f|`.
pub fn check_rescaling_identity(sg: &Semigroup, f: &VectorField, k: u32, t: f64) -> Result<f64> {
    let direct = sg.derivative(k, t, f)?;
    let mut composed = f.clone();
    for _ in 0..k {
        composed = sg.derivative(1, t / k as f64, &composed)?;
    }
    let composed = composed.scale((k as f64).powi(k as i32));
    Ok(max_abs(&(direct.values() - composed.values())) / max_abs(f.values()).max(f64::MIN_POSITIVE))
}

/// Residual of `t^k∂^k M^{α−1}_t = (k+α) t^k∂^k M^α_t + t^{k+1}∂^{k+1} M^α_t`, relative to `max|f|`.
pub fn check_recursion(sg: &Semigroup, f: &VectorField, alpha: Complex64, k: u32, t: f64) -> Result<f64> {
    let lhs = sg.frac_m_derivative(alpha - 1.0, k, t, f)?;
    let d_k = sg.frac_m_derivative(alpha, k, t, f)?;
    let d_k1 = sg.frac_m_derivative(alpha, k + 1, t, f)?;
    let rhs = d_k.values().map(|z| z * (alpha + k as f64)) + d_k1.values();
    let diff = (lhs.values() - rhs).map(|z| z.norm()).max();
    Ok(diff / max_abs(f.values()).max(f64::MIN_POSITIVE))
}

fn identity_report(name: &str, limit: f64, family: &InstanceFamily, samples: &[Sample], budget_key: &str) -> ConstantReport {
    let mut report = summarize(ConstantReport::new(name, &format!("max residual < {limit:e}"), family.master_seed), family, samples, budget_key);
    report.trend_slope = None;
    report.pass = report.skipped == 0 && report.stats.max < limit;
    report.param("limit", limit)
}

/// L_2 isometry for each `k` in `ks` on scalar fields of every instance; the ratio is the worst residual.
pub fn verify_l2_identity(family: &InstanceFamily, ks: &[u32]) -> Result<ConstantReport> {
    if ks.is_empty() {
        return invalid("need at least one derivative order");
    }
    let samples = sweep(family, |inst| {
        let sg = heat(&inst.operator)?;
        let f = inst.field(1);
        let mut worst: f64 = 0.0;
        let mut budget: f64 = 0.0;
        for &k in ks {
            let grid = make_time_grid(&sg, k, 2.0, GRID_TOL, DEFAULT_DENSITY)?;
            worst = worst.max(check_l2_identity(&sg, &f, k, &grid)?);
            budget = budget.max(grid.tail_bound);
        }
        Ok((Some(worst), budget))
    })?;
    let mut report = identity_report("l2_identity", 1e-6, family, &samples, "grid_tail");
    report.params.insert("k_max".into(), *ks.iter().max().unwrap() as f64);
    report.params.insert("k_min".into(), *ks.iter().min().unwrap() as f64);
    Ok(report)
}

/// Discrete polarization identity on scalar fields.
pub fn verify_discrete_identity(family: &InstanceFamily) -> Result<ConstantReport> {
    let samples = sweep(family, |inst| Ok((Some(check_discrete_l2_identity(&inst.operator, &inst.field(1))?), 0.0)))?;
    Ok(identity_report("discrete_l2_identity", 1e-8, family, &samples, "series_tail"))
}

/// Quadrature subordination against `e^{−t√A}` for each `t` in `times`.
pub fn verify_subordination(family: &InstanceFamily, times: &[f64], mode: SubordinationMode) -> Result<ConstantReport> {
    let samples = sweep(family, |inst| {
        let sg = heat(&inst.operator)?;
        let f = inst.field(family.params.d);
        let mut worst: f64 = 0.0;
        for &t in times {
            worst = worst.max(check_subordination(&sg, &f, t, mode)?);
        }
        Ok((Some(worst), 0.0))
    })?;
    Ok(identity_report("subordination", 1e-6, family, &samples, "quadrature"))
}

/// Rota dilation of each root `S`.
pub fn verify_rota(family: &InstanceFamily) -> Result<ConstantReport> {
    let samples = sweep(family, |inst| Ok((Some(check_rota(inst.root(), &inst.field(family.params.d))?), 0.0)))?;
    Ok(identity_report("rota_dilation", 1e-12, family, &samples, "none"))
}

/// Contour calculus for `φ_n` (`n ∈ {1, 4, 16}`) on `L_{π/3}` and `ψ(tA)` for `t ∈ {0.5, 2}`.
pub fn verify_contour_calculus(family: &InstanceFamily, nodes_per_segment: usize) -> Result<ConstantReport> {
    let contour = Contour::stolz_boundary(PI / 3.0, nodes_per_segment, 1e-12)?;
    let q_conj = family.params.q_conj();
    let mut phis: Vec<HinfFunction> = Vec::new();
    for n in [1, 4, 16] {
        phis.push(test_function(TestFunction::PhiN { n, q_conj })?);
    }
    let psi = test_function(TestFunction::Psi)?;
    phis.push(psi.scaled(0.5));
    phis.push(psi.scaled(2.0));
    let samples = sweep(family, |inst| {
        let sg = heat(&inst.operator)?;
        let f = inst.field(family.params.d);
        let mut worst: f64 = 0.0;
        for phi in &phis {
            worst = worst.max(check_contour_calculus(&sg, phi, &contour, &f)?);
        }
        Ok((Some(worst), 0.0))
    })?;
    let report = identity_report("contour_calculus", 1e-8, family, &samples, "quadrature");
    Ok(report.param("nodes_per_segment", contour.nodes_per_segment as f64).param("theta", PI / 3.0))
}

/// `k^k` rescaling (`k ≤ 3`) and the `M^α` recursion (`α ∈ {0, 1, −1, 1+i}`, `k ≤ 3`) at `t ∈ {0.5, 2}`.
pub fn verify_semigroup_identities(family: &InstanceFamily) -> Result<ConstantReport> {
    let alphas = [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), Complex64::new(1.0, 1.0)];
    let samples = sweep(family, |inst| {
        let sg = heat(&inst.operator)?;
        let f = inst.field(family.params.d);
        let mut worst: f64 = 0.0;
        for t in [0.5, 2.0] {
            for k in 1..=3 {
                worst = worst.max(check_rescaling_identity(&sg, &f, k, t)?);
            }
            for alpha in alphas {
                for k in 0..=3 {
                    worst = worst.max(check_recursion(&sg, &f, alpha, k, t)?);
                }
            }
        }
        Ok((Some(worst), 0.0))
    })?;
    Ok(identity_report("semigroup_identities", 1e-10, family, &samples, "quadrature"))
}

// ---------------------------------------------------------------------------
// square-function inequalities

/// Which square function an inequality sweep uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquareVariant {
    /// `t^k ∂^k T_t`.
    Continuous,
    /// `n^{1/q'} (Tⁿ − Tⁿ⁻¹)`; `k` is ignored.
    Discrete,
    /// `t^k ∂^k P_t`.
    Poisson,
}

impl std::str::FromStr for SquareVariant {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Self::Continuous),
            "discrete" => Ok(Self::Discrete),
            "poisson" => Ok(Self::Poisson),
            other => invalid(format!("unknown square-function variant '{other}'")),
        }
    }
}

impl SquareVariant {
    fn label(self) -> &'static str {
        match self {
            Self::Continuous => "continuous",
            Self::Discrete => "discrete",
            Self::Poisson => "poisson",
        }
    }
}

/// Pointwise square function of `f` and its error budget.
fn square_function(
    t_op: &MarkovOperator,
    sg: &Semigroup,
    f: &VectorField,
    k: u32,
    q: f64,
    variant: SquareVariant,
) -> Result<(Vec<f64>, f64)> {
    if sg.spectral_gap().is_none() {
        return Ok((vec![0.0; f.len()], 0.0));
    }
    let g = match variant {
        SquareVariant::Continuous => {
            let grid = make_time_grid(sg, k, q, GRID_TOL, DEFAULT_DENSITY)?;
            g_function_with(sg, f, SquareKernel::Heat, k, q, &grid)?
        }
        SquareVariant::Poisson => {
            let grid = make_time_grid_for(sg, GridKernel::Poisson, k, q, GRID_TOL, DEFAULT_DENSITY)?;
            g_function_with(sg, f, SquareKernel::Poisson, k, q, &grid)?
        }
        SquareVariant::Discrete => discrete_square(t_op, f, q, DISCRETE_TOL)?,
    };
    let budget = g.error_budget;
    Ok((g.values().to_vec(), budget))
}

/// `‖G(f)‖_{L_p} / ‖f‖_{L_p(Ω;X)}`; `None` when `f = 0`.
pub fn cotype_ratio(
    t_op: &MarkovOperator,
    f: &VectorField,
    params: &BanachParams,
    k: u32,
    variant: SquareVariant,
) -> Result<(Option<f64>, f64)> {
    let sg = heat(t_op)?;
    let f = pow2_normalized(f);
    let den = f.norm(params.p, params.q);
    if den == 0.0 {
        return Ok((None, 0.0));
    }
    let (g, budget) = square_function(t_op, &sg, &f, k, params.q, variant)?;
    Ok((Some(lp_scalar_norm(f.space().mu(), &g, params.p) / den), budget))
}

/// Continuous and Poisson: `(‖f‖ − ‖𝖥f‖) / ‖G(f)‖`.
/// Discrete: `‖f‖ / ‖(‖𝖥f‖_X^q + Σ n^{q−1}‖(Tⁿ − Tⁿ⁻¹)f‖_X^q)^{1/q}‖`. `None` for `0/0`.
pub fn type_ratio(
    t_op: &MarkovOperator,
    f: &VectorField,
    params: &BanachParams,
    k: u32,
    variant: SquareVariant,
) -> Result<(Option<f64>, f64)> {
    let sg = heat(t_op)?;
    let f = pow2_normalized(f);
    let (p, q) = (params.p, params.q);
    let norm_f = f.norm(p, q);
    let fixed = sg.fixed_part(&f)?;
    let (g, budget) = square_function(t_op, &sg, &f, k, q, variant)?;
    let mu = f.space().mu();
    let (num, den) = match variant {
        SquareVariant::Discrete => {
            let combined: Vec<f64> = fixed
                .pointwise_norms(q)
                .iter()
                .zip(&g)
                .map(|(a, b)| (a.powf(q) + b.powf(q)).powf(1.0 / q))
                .collect();
            (norm_f, lp_scalar_norm(mu, &combined, p))
        }
        _ => ((norm_f - fixed.norm(p, q)).max(0.0), lp_scalar_norm(mu, &g, p)),
    };
    if den == 0.0 {
        if num > 1e-12 * norm_f.max(f64::MIN_POSITIVE) {
            return Err(LabError::Inconsistency(format!(
                "square function vanishes but ‖f‖ − ‖𝖥f‖ = {num:e} (variant {})",
                variant.label()
            )));
        }
        return Ok((None, budget));
    }
    Ok((Some(num / den), budget))
}

fn inequality_report(mut report: ConstantReport) -> ConstantReport {
    let finite = report.stats.max.is_finite();
    let trend_ok = report.trend_slope.is_none_or(|s| s <= TREND_SLOPE_LIMIT);
    report.pass = finite && trend_ok;
    report.notes.push(LOWER_BOUND_NOTE.to_string());
    report
}

/// Sweep of `‖G(f)‖_{L_p} / ‖f‖_{L_p(Ω;X)}` over mean-free random fields.
pub fn verify_cotype_inequality(family: &InstanceFamily, k: u32, variant: SquareVariant) -> Result<ConstantReport> {
    let params = family.params;
    if params.q < 2.0 {
        return invalid(format!("ℓ_q^d has cotype q only for q ≥ 2, got q = {}", params.q));
    }
    if k == 0 && variant != SquareVariant::Discrete {
        return invalid("continuous square functions need k ≥ 1");
    }
    let samples = sweep(family, |inst| {
        let sg = heat(&inst.operator)?;
        let f = sg.mean_free(&inst.field(params.d))?;
        cotype_ratio(&inst.operator, &f, &params, k, variant)
    })?;
    let name = format!("cotype_{}", variant.label());
    let criterion = format!("finite ratios and size-trend slope ≤ {TREND_SLOPE_LIMIT}");
    let report = summarize(ConstantReport::new(&name, &criterion, family.master_seed), family, &samples, "truncation");
    Ok(inequality_report(report.param("k", k as f64)))
}

/// Sweep of the type ratio over mean-free random fields; requires `1 < q ≤ 2`.
pub fn verify_type_inequality(family: &InstanceFamily, k: u32, variant: SquareVariant) -> Result<ConstantReport> {
    let params = family.params;
    if params.q > 2.0 {
        return invalid(format!("the type regime needs q ≤ 2, got q = {}", params.q));
    }
    if k == 0 && variant != SquareVariant::Discrete {
        return invalid("continuous square functions need k ≥ 1");
    }
    let samples = sweep(family, |inst| {
        let sg = heat(&inst.operator)?;
        let f = sg.mean_free(&inst.field(params.d))?;
        type_ratio(&inst.operator, &f, &params, k, variant)
    })?;
    let name = format!("type_{}", variant.label());
    let criterion = format!("finite ratios and size-trend slope ≤ {TREND_SLOPE_LIMIT}");
    let report = summarize(ConstantReport::new(&name, &criterion, family.master_seed), family, &samples, "truncation");
    Ok(inequality_report(report.param("k", k as f64)))
}

/// Sweep of `(∫ ‖(T_t − T_{3t}) f‖^q_{L_q(Ω;X)} dt/t)^{1/q} / ‖f‖_{L_q(Ω;X)}` over mean-free fields.
pub fn verify_hn_functional(family: &InstanceFamily) -> Result<ConstantReport> {
    let q = family.params.q;
    let samples = sweep(family, |inst| {
        let sg = heat(&inst.operator)?;
        let f = pow2_normalized(&sg.mean_free(&inst.field(family.params.d))?);
        let den = f.norm(q, q);
        if den == 0.0 || sg.spectral_gap().is_none() {
            return Ok((None, 0.0));
        }
        let grid = make_time_grid(&sg, 1, q, GRID_TOL, DEFAULT_DENSITY)?;
        let (value, budget) = hn_functional_with_budget(&sg, &f, q, &grid)?;
        Ok((Some(value / den), budget))
    })?;
    let criterion = format!("finite ratios and size-trend slope ≤ {TREND_SLOPE_LIMIT}");
    let mut report = summarize(ConstantReport::new("hn_functional", &criterion, family.master_seed), family, &samples, "grid_tail");
    report.notes.push("norm-level functional in L_q(Ω;X); p is not used".into());
    Ok(inequality_report(report))
}

// ---------------------------------------------------------------------------
// operator bounds

/// `min(3/2, 2(1 − δ/2^{q̃})^{1/q̃})`.
pub fn contraction_bound(renorming_exponent: f64, delta: f64) -> f64 {
    let q = renorming_exponent;
    (2.0 * (1.0 - delta / 2f64.powf(q)).powf(1.0 / q)).min(1.5)
}

/// `‖I − T‖` on `L_2(μ)`: `max_j |1 − λ_j|`.
fn contraction_l2(t_op: &MarkovOperator) -> Result<f64> {
    Ok(spectral(t_op)?.eigenvalues().iter().map(|l| (1.0 - l).abs()).fold(0.0, f64::max))
}

fn i_minus(t_op: &MarkovOperator) -> DMatrix<f64> {
    DMatrix::identity(t_op.len(), t_op.len()) - t_op.matrix()
}

/// Estimated `‖I − T‖_{L_p(Ω;X)}` against the convexity bound.
pub fn verify_contraction_bound(
    t_op: &MarkovOperator,
    params: &BanachParams,
    delta: &ConvexityEstimate,
    ascent: AscentConfig,
    seed: u64,
) -> Result<ConstantReport> {
    let q = params.renorming_exponent();
    let bound = contraction_bound(q, delta.delta);
    let estimate = estimate_norm_with(&i_minus(t_op), t_op.space(), params, ascent, seed)?;
    let mut report = ConstantReport::new("contraction_bound", "estimate ≤ bound + 1e-6", seed)
        .param("bound", bound)
        .param("delta", delta.delta)
        .param("renorming_exponent", q)
        .param("p", params.p)
        .param("q", params.q)
        .param("d", params.d as f64)
        .param("l2_norm", contraction_l2(t_op)?);
    report.stats = RatioStats::from_values(&[estimate]);
    report.pass = estimate <= bound + 1e-6;
    report.notes.push(LOWER_BOUND_NOTE.to_string());
    Ok(report)
}

/// [`verify_contraction_bound`] over a family; the exact `L_2` value is recorded alongside.
pub fn verify_contraction_family(
    family: &InstanceFamily,
    delta: &ConvexityEstimate,
    ascent: AscentConfig,
) -> Result<ConstantReport> {
    let params = family.params;
    let q = params.renorming_exponent();
    let bound = contraction_bound(q, delta.delta);
    let l2: Vec<f64> = (0..family.trials)
        .into_par_iter()
        .map(|i| contraction_l2(&family.instance(i)?.operator))
        .collect::<Result<_>>()?;
    let samples = sweep(family, |inst| {
        let est = estimate_norm_with(&i_minus(&inst.operator), inst.operator.space(), &params, ascent, inst.seed)?;
        Ok((Some(est), 0.0))
    })?;
    let l2_max = l2.iter().copied().fold(0.0, f64::max);
    let mut report = summarize(ConstantReport::new("contraction_bound", "max estimate ≤ bound + 1e-6", family.master_seed), family, &samples, "none")
        .param("bound", bound)
        .param("delta", delta.delta)
        .param("renorming_exponent", q)
        .param("l2_max", l2_max);
    report.trend_slope = None;
    report.pass = report.stats.max <= bound + 1e-6;
    report.notes.push(LOWER_BOUND_NOTE.to_string());
    Ok(report)
}

/// Options of the resolvent scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub radii: usize,
    pub angles: usize,
    pub ascent: AscentConfig,
    /// Instances of a family on which the ascent estimate is run (all get the `L_2` value).
    pub estimated_instances: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { radii: 12, angles: 24, ascent: AscentConfig { restarts: 8, steps: 100 }, estimated_instances: 4 }
    }
}

fn calibrated(c: f64) -> Result<StolzDomain> {
    static CACHE: OnceLock<Mutex<HashMap<u64, StolzDomain>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(d) = cache.lock().unwrap().get(&c.to_bits()) {
        return Ok(*d);
    }
    let domain = calibrate_gamma(c)?;
    cache.lock().unwrap().insert(c.to_bits(), domain);
    Ok(domain)
}

struct StolzOutcome {
    failures: usize,
    l2_constant: f64,
    estimated: Option<f64>,
}

fn stolz_outcome(
    t_op: &MarkovOperator,
    c: f64,
    domain: &StolzDomain,
    grid: &[Complex64],
    params: &BanachParams,
    estimate: Option<(AscentConfig, u64)>,
) -> Result<StolzOutcome> {
    let dec = spectral(t_op)?;
    let mut failures = 0;
    for &lam in dec.eigenvalues() {
        let z = Complex64::from(lam);
        if !algebraic_condition(c, z)? || !stolz_contains(domain, z) {
            failures += 1;
        }
    }
    let l2_constant = grid
        .iter()
        .filter(|z| !stolz_contains(domain, **z))
        .map(|&z| resolvent_constant_l2(&dec, z))
        .fold(0.0, f64::max);
    let estimated = match estimate {
        Some((ascent, seed)) => Some(resolvent_bound_scan(t_op, domain, params, grid, ascent, seed)?.constant),
        None => None,
    };
    Ok(StolzOutcome { failures, l2_constant, estimated })
}

/// Stolz membership of the spectrum for `γ` calibrated from `c = (q̃/(2δ))^{1/q̃}`, with the
/// empirical resolvent constant `sup |1−z| ‖(z−T)^{−1}‖` over the scan grid.
pub fn verify_spectrum_stolz(
    t_op: &MarkovOperator,
    params: &BanachParams,
    delta: &ConvexityEstimate,
    scan: ScanOptions,
    seed: u64,
) -> Result<ConstantReport> {
    let c = algebraic_constant(params.renorming_exponent(), delta.delta)?;
    let domain = calibrated(c)?;
    let grid = default_scan_grid(scan.radii, scan.angles);
    let out = stolz_outcome(t_op, c, &domain, &grid, params, Some((scan.ascent, seed)))?;
    let estimated = out.estimated.unwrap_or(0.0);
    let mut report = ConstantReport::new("spectrum_stolz", "no spectral point outside the calibrated Stolz domain", seed)
        .param("c", c)
        .param("gamma", domain.gamma())
        .param("failures", out.failures as f64)
        .param("resolvent_constant_l2", out.l2_constant)
        .param("resolvent_constant", estimated);
    report.stats = RatioStats::from_values(&[estimated]);
    report.pass = out.failures == 0 && estimated.is_finite();
    report.notes.push(LOWER_BOUND_NOTE.to_string());
    Ok(report)
}

/// [`verify_spectrum_stolz`] over a family; ratios are the per-instance `L_2` resolvent constants.
pub fn verify_stolz_family(family: &InstanceFamily, delta: &ConvexityEstimate, scan: ScanOptions) -> Result<ConstantReport> {
    let params = family.params;
    let c = algebraic_constant(params.renorming_exponent(), delta.delta)?;
    let domain = calibrated(c)?;
    let grid = default_scan_grid(scan.radii, scan.angles);
    let outcomes: Vec<(usize, StolzOutcome)> = (0..family.trials)
        .into_par_iter()
        .map(|i| {
            let inst = family.instance(i)?;
            let estimate = (i < scan.estimated_instances).then_some((scan.ascent, inst.seed));
            Ok((inst.size, stolz_outcome(&inst.operator, c, &domain, &grid, &params, estimate)?))
        })
        .collect::<Result<_>>()?;
    let failures: usize = outcomes.iter().map(|(_, o)| o.failures).sum();
    let estimated = outcomes.iter().filter_map(|(_, o)| o.estimated).fold(0.0, f64::max);
    let samples: Vec<Sample> =
        outcomes.iter().map(|(size, o)| Sample { size: *size, value: Some(o.l2_constant), budget: 0.0 }).collect();
    let mut report = summarize(
        ConstantReport::new("spectrum_stolz", "no spectral point outside the calibrated Stolz domain", family.master_seed),
        family,
        &samples,
        "none",
    )
    .param("c", c)
    .param("gamma", domain.gamma())
    .param("failures", failures as f64)
    .param("resolvent_constant", estimated)
    .param("scan_points", grid.len() as f64);
    report.trend_slope = None;
    report.pass = failures == 0 && report.stats.max.is_finite() && estimated.is_finite();
    report.notes.push("ratios are |1−z|‖(z−T)^{-1}‖ on L_2(μ) (exact for self-adjoint T)".into());
    report.notes.push(LOWER_BOUND_NOTE.to_string());
    Ok(report)
}

/// Options of the analyticity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticityOptions {
    pub ascent: AscentConfig,
    /// Points per decade of the time samples for `sup_t ‖t∂T_t‖`.
    pub time_density: usize,
}

impl Default for AnalyticityOptions {
    fn default() -> Self {
        Self { ascent: AscentConfig { restarts: 8, steps: 100 }, time_density: 4 }
    }
}

/// `1, 2, 4, …` up to `n_max`, with `n_max` itself appended.
pub fn power_schedule(n_max: usize) -> Vec<usize> {
    let mut ns: Vec<usize> = std::iter::successors(Some(1usize), |n| n.checked_mul(2)).take_while(|&n| n <= n_max).collect();
    if ns.last() != Some(&n_max) {
        ns.push(n_max);
    }
    ns
}

/// `max_j max_{1≤n≤n_max} n |λ_j|ⁿ |1 − λ_j|`, the `L_2` value of `sup_n n‖Tⁿ(T−1)‖`.
pub fn ritt_sup_l2(eigenvalues: &[f64], n_max: usize) -> f64 {
    let value = |lam: f64, n: usize| n as f64 * lam.abs().powi(n as i32) * (1.0 - lam).abs();
    eigenvalues
        .iter()
        .map(|&lam| {
            let r = lam.abs();
            if r == 0.0 || r >= 1.0 {
                return value(lam, 1).max(if r >= 1.0 { value(lam, n_max) } else { 0.0 });
            }
            // n rⁿ is unimodal with its maximum at −1/ln r
            let peak = (-1.0 / r.ln()).clamp(1.0, n_max as f64);
            [peak.floor() as usize, peak.ceil() as usize, 1, n_max]
                .iter()
                .map(|&n| value(lam, n.clamp(1, n_max)))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Index from which the sequence is non-increasing (relative slack `1e−6`).
fn decreasing_from(values: &[f64]) -> usize {
    let mut i = values.len().saturating_sub(1);
    while i > 0 && values[i] <= values[i - 1] * (1.0 + 1e-6) + 1e-15 {
        i -= 1;
    }
    i
}

/// `n ‖Tⁿ(T−1)‖` for `n ∈ {1, 2, 4, …, n_max}` and `sup_t ‖t∂T_t‖` over sampled times.
pub fn verify_analyticity(
    t_op: &MarkovOperator,
    params: &BanachParams,
    n_max: usize,
    opts: AnalyticityOptions,
    seed: u64,
) -> Result<ConstantReport> {
    if n_max < 16 {
        return invalid(format!("n_max must be at least 16, got {n_max}"));
    }
    let dec = spectral(t_op)?;
    let ns = power_schedule(n_max);
    let space = t_op.space();
    let values: Vec<f64> = ns
        .par_iter()
        .map(|&n| {
            let mult: Vec<f64> = (0..dec.len())
                .map(|j| if dec.is_fixed(j) { 0.0 } else { dec.eigenvalues()[j].powi(n as i32) * (dec.eigenvalues()[j] - 1.0) })
                .collect();
            let m = dec.operator_matrix(&mult);
            Ok(n as f64 * estimate_norm_with(&m, space, params, opts.ascent, stable_hash(seed, n as u64))?)
        })
        .collect::<Result<_>>()?;
    let sg = Semigroup::from_decomposition(dec.clone())?;
    let (time_sup, time_sup_l2) = match sg.spectral_gap() {
        None => (0.0, 0.0),
        Some(_) => {
            let grid = make_time_grid(&sg, 1, 2.0, 1e-6, opts.time_density.max(1))?;
            let sups: Vec<f64> = grid
                .points
                .par_iter()
                .enumerate()
                .map(|(i, &t)| {
                    let mult: Vec<f64> = sg.generator_eigenvalues().iter().map(|&a| -t * a * (-t * a).exp()).collect();
                    let m = dec.operator_matrix(&mult);
                    estimate_norm_with(&m, space, params, opts.ascent, stable_hash(seed ^ 0x7469_6d65, i as u64))
                })
                .collect::<Result<_>>()?;
            (sups.into_iter().fold(0.0, f64::max), (-1.0f64).exp())
        }
    };
    let start = decreasing_from(&values);
    let bounded = values.iter().all(|v| v.is_finite());
    let mut report = ConstantReport::new("analyticity", "bounded and eventually non-increasing n‖Tⁿ(T−1)‖", seed)
        .param("n_max", n_max as f64)
        .param("n0", ns[start] as f64)
        .param("ritt_sup_l2", ritt_sup_l2(dec.eigenvalues(), n_max))
        .param("time_sup", time_sup)
        .param("time_sup_l2", time_sup_l2)
        .param("p", params.p)
        .param("q", params.q)
        .param("d", params.d as f64);
    report.series = ns.iter().zip(&values).map(|(&n, &v)| SeriesPoint { x: n as f64, value: v }).collect();
    report.stats = RatioStats::from_values(&values);
    report.pass = bounded && time_sup.is_finite() && (start + 1 < values.len() || values.len() == 1);
    report.notes.push(format!("L_2 oracle for sup_n is approached by e^-1 = {:.6} as the spectrum nears 1", 1.0 / E));
    report.notes.push(LOWER_BOUND_NOTE.to_string());
    Ok(report)
}

/// [`verify_analyticity`] over a family; ratios are `max_n n‖Tⁿ(T−1)‖` per instance.
pub fn verify_analyticity_family(family: &InstanceFamily, n_max: usize, opts: AnalyticityOptions) -> Result<ConstantReport> {
    let reports: Vec<(usize, ConstantReport)> = (0..family.trials)
        .into_par_iter()
        .map(|i| {
            let inst = family.instance(i)?;
            Ok((inst.size, verify_analyticity(&inst.operator, &family.params, n_max, opts, inst.seed)?))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<Sample> =
        reports.iter().map(|(size, r)| Sample { size: *size, value: Some(r.stats.max), budget: 0.0 }).collect();
    let failures = reports.iter().filter(|(_, r)| !r.pass).count();
    let time_sup = reports.iter().map(|(_, r)| r.params["time_sup"]).fold(0.0, f64::max);
    let ritt = reports.iter().map(|(_, r)| r.params["ritt_sup_l2"]).fold(0.0, f64::max);
    let mut report = summarize(
        ConstantReport::new("analyticity", "every instance bounded and eventually non-increasing", family.master_seed),
        family,
        &samples,
        "none",
    )
    .param("n_max", n_max as f64)
    .param("failures", failures as f64)
    .param("time_sup", time_sup)
    .param("ritt_sup_l2", ritt);
    report.trend_slope = None;
    report.pass = failures == 0;
    report.notes.push(LOWER_BOUND_NOTE.to_string());
    Ok(report)
}

// ---------------------------------------------------------------------------
// McIntosh comparison

/// Time grid for `∫ ‖φ(tA) y‖^q dt/t` with `|φ(x)| ≲ min(x^s, x^{−s})`.
pub fn hinf_time_grid(sg: &Semigroup, decay: f64, q: f64, tol: f64, density: usize) -> Result<TimeGrid> {
    make_time_grid_for(sg, GridKernel::Hinf { decay }, 0, q, tol, density)
}

/// `∫_0^∞ ψ(x) dx/x` along the positive axis, by the trapezoid rule in `ln x`.
pub fn ray_mean(psi: &HinfFunction, tol: f64) -> f64 {
    let e = psi.decay.max(1e-3);
    let x_lo = (tol * e).powf(1.0 / e).min(1e-2);
    let h = std::f64::consts::LN_10 / 64.0;
    let steps = (2.0 * (1.0 / x_lo).ln() / h).ceil() as usize;
    let ln_lo = x_lo.ln();
    (0..=steps)
        .map(|i| {
            let w = if i == 0 || i == steps { 0.5 * h } else { h };
            w * psi.eval(Complex64::from((ln_lo + i as f64 * h).exp())).re
        })
        .sum()
}

/// `(Σ_grid w ‖φ(tA) y‖^q_{L_p(Ω;X)})^{1/q}`.
fn hinf_square(sg: &Semigroup, phi: &HinfFunction, y: &VectorField, params: &BanachParams, q: f64, grid: &TimeGrid) -> Result<f64> {
    let per_time: Vec<f64> = grid
        .points
        .par_iter()
        .map(|&t| Ok(hinf_apply_spectral(sg, &phi.scaled(t), y)?.norm(params.p, params.q).powf(q)))
        .collect::<Result<_>>()?;
    Ok(per_time.iter().zip(&grid.weights).map(|(v, w)| v * w).sum::<f64>().powf(1.0 / q))
}

/// Ratio of the `φ` and `ψ` square functions `(∫‖φ(tA)y‖^q dt/t)^{1/q}` over random `y`.
///
/// `y` is drawn from `L_p(Ω; ℓ_q^d)` with the family's `p, q, d`, trials and seed; its size and
/// model are not used. `q` is the outer exponent of the square functions.
pub fn verify_mcintosh(
    sg: &Semigroup,
    phi: &HinfFunction,
    psi: &HinfFunction,
    family: &InstanceFamily,
    q: f64,
    grid: &TimeGrid,
) -> Result<ConstantReport> {
    let mean = ray_mean(psi, 1e-12);
    if !(mean.abs() > 1e-8) {
        return Err(LabError::PreconditionViolation(format!(
            "∫ψ(t)dt/t = {mean:e} vanishes for {}",
            psi.label
        )));
    }
    for f in [phi, psi] {
        let tail = |r: f64| f.eval(Complex64::from(r)).norm() * r.powf(f.decay);
        if !(tail(1e6) <= 10.0 * tail(1e4) + 1e-12) {
            return Err(LabError::PreconditionViolation(format!(
                "{} does not decay like |z|^-{} along the positive axis",
                f.label, f.decay
            )));
        }
    }
    if !grid.covers(sg) {
        return invalid("grid rates do not cover the semigroup's spectrum");
    }
    let params = family.params;
    let ratios: Vec<Option<f64>> = (0..family.trials)
        .into_par_iter()
        .map(|i| {
            let y = pow2_normalized(&VectorField::random(sg.space().clone(), params.d, family.trial_seed(i)));
            let den = hinf_square(sg, psi, &y, &params, q, grid)?;
            let num = hinf_square(sg, phi, &y, &params, q, grid)?;
            Ok((den > 0.0).then(|| num / den))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = ratios.iter().filter_map(|r| *r).collect();
    let mut report = ConstantReport::new("mcintosh", "finite ratios", family.master_seed)
        .param("psi_mean", mean)
        .param("q", q)
        .param("size", sg.len() as f64);
    report.stats = RatioStats::from_values(&values);
    report.skipped = ratios.len() - values.len();
    report.error_budget.insert("grid_tail".into(), grid.tail_bound);
    report.family = Some(family.clone());
    report.pass = values.iter().all(|v| v.is_finite());
    report.notes.push(format!("φ = {}, ψ = {}", phi.label, psi.label));
    report.notes.push("grid tail assumes |φ(x)| ≤ min(x^s, x^-s); it is an estimate".into());
    Ok(report)
}
