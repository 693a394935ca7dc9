//! Gaussian quadrature rules (Golub-Welsch) and the log-substituted trapezoid rule.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::special::ln_gamma;

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Family {
    Legendre,
    /// Exponents stored as bit patterns for hashing.
    Jacobi(u64, u64),
    Laguerre(u64),
}

type RuleCache = Mutex<HashMap<(Family, usize), Arc<Rule>>>;

fn cache() -> &'static RuleCache {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cached(family: Family, n: usize, build: impl FnOnce() -> Rule) -> Arc<Rule> {
    if let Some(rule) = cache().lock().unwrap().get(&(family, n)) {
        return rule.clone();
    }
    let rule = Arc::new(build());
    cache().lock().unwrap().insert((family, n), rule.clone());
    rule
}

/// Golub-Welsch: eigen-decomposition of the Jacobi matrix of the three-term recurrence.
fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> Rule {
    let n = diag.len();
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = diag[i];
        if i + 1 < n {
            jac[(i, i + 1)] = off[i];
            jac[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| (eig.eigenvalues[j], mu0 * eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss-Legendre on `[-1, 1]`, nodes polished by Newton on `P_n`.
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    assert!(n >= 1);
    cached(Family::Legendre, n, || {
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            // Tricomi initial guess, descending order.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d.is_finite() {
                dp = d;
            }
            nodes.push(x);
            weights.push(2.0 / ((1.0 - x * x) * dp * dp));
        }
        nodes.reverse();
        weights.reverse();
        Rule { nodes, weights }
    })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Jacobi on `[-1, 1]` for the weight `(1-x)^alpha (1+x)^beta`.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> Arc<Rule> {
    assert!(n >= 1 && alpha > -1.0 && beta > -1.0);
    cached(Family::Jacobi(alpha.to_bits(), beta.to_bits()), n, || {
        let ab = alpha + beta;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        diag[0] = (beta - alpha) / (ab + 2.0);
        for (k, d) in diag.iter_mut().enumerate().skip(1) {
            let k = k as f64;
            let s = 2.0 * k + ab;
            *d = (beta * beta - alpha * alpha) / (s * (s + 2.0));
        }
        for (i, o) in off.iter_mut().enumerate() {
            let k = (i + 1) as f64;
            let s = 2.0 * k + ab;
            *o = if i == 0 {
                (4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))).sqrt()
            } else {
                (4.0 * k * (k + alpha) * (k + beta) * (k + ab) / (s * s * (s + 1.0) * (s - 1.0))).sqrt()
            };
        }
        let mu0 = ((ab + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
            - ln_gamma(ab + 2.0))
        .exp();
        golub_welsch(&diag, &off, mu0)
    })
}

/// Generalized Gauss-Laguerre on `[0, ∞)` for the weight `x^alpha e^{-x}`.
pub fn gauss_laguerre(n: usize, alpha: f64) -> Arc<Rule> {
    assert!(n >= 1 && alpha > -1.0);
    cached(Family::Laguerre(alpha.to_bits()), n, || {
        let diag: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + alpha + 1.0).collect();
        let off: Vec<f64> = (1..n).map(|k| (k as f64 * (k as f64 + alpha)).sqrt()).collect();
        golub_welsch(&diag, &off, ln_gamma(alpha + 1.0).exp())
    })
}

/// Map a rule on `[-1, 1]` to `[a, b]`, returning `(node, weight)` pairs.
pub fn mapped(rule: &Rule, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.nodes.iter().zip(&rule.weights).map(move |(&x, &w)| (mid + half * x, half * w))
}
