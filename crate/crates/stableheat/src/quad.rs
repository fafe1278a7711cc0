//! Gaussian quadrature rules and barycentric interpolation.
//!
//! Rules come from the Golub-Welsch algorithm: nodes are the eigenvalues of
//! the symmetric Jacobi matrix of the three-term recurrence for the
//! orthogonal polynomials of the weight, and weights are `mu0` times the
//! squared first components of the normalized eigenvectors. Orders stay
//! small (n <= 64), so a dense symmetric eigensolve is adequate.
//!
//! Gauss-Jacobi rules carry the endpoint weight
//! $(1-x)^{a}(1+x)^{b}$ on $[-1,1]$ and are the workhorse for integrands
//! with known algebraic endpoint singularities: the singular factor is
//! absorbed into the rule and the caller supplies only the smooth part.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::gamma;

/// Nodes and weights of a quadrature rule on some interval.
///
/// `sum_i weights[i] * f(nodes[i])` approximates the weighted integral of
/// `f`; the weight function and interval depend on the constructor.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Applies the rule to `f`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

fn golub_welsch(diag: &[f64], offdiag: &[f64], mu0: f64) -> GaussRule {
    let n = diag.len();
    assert!(n >= 1, "quadrature order must be positive");
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag[i];
    }
    for i in 0..n - 1 {
        m[(i, i + 1)] = offdiag[i];
        m[(i + 1, i)] = offdiag[i];
    }
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// n-point Gauss-Legendre rule on [-1, 1] (weight 1).
pub fn gauss_legendre(n: usize) -> GaussRule {
    let diag = vec![0.0; n];
    let offdiag: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&diag, &offdiag, 2.0)
}

/// n-point Gauss-Legendre rule mapped to [lo, hi].
pub fn gauss_legendre_on(n: usize, lo: f64, hi: f64) -> GaussRule {
    let mut rule = gauss_legendre(n);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    for x in &mut rule.nodes {
        *x = mid + half * *x;
    }
    for w in &mut rule.weights {
        *w *= half;
    }
    rule
}

/// n-point Gauss-Jacobi rule on [-1, 1] for the weight
/// $(1-x)^{exp\_hi} (1+x)^{exp\_lo}$, with both exponents > -1.
pub fn gauss_jacobi(n: usize, exp_hi: f64, exp_lo: f64) -> GaussRule {
    let (a, b) = (exp_hi, exp_lo);
    assert!(a > -1.0 && b > -1.0, "jacobi exponents must exceed -1");
    let mut diag = vec![(b - a) / (a + b + 2.0)];
    for k in 1..n {
        let k = k as f64;
        diag.push((b * b - a * a) / ((2.0 * k + a + b) * (2.0 * k + 2.0 + a + b)));
    }
    let mut offdiag = Vec::with_capacity(n.saturating_sub(1));
    if n > 1 {
        let s = 4.0 * (a + 1.0) * (b + 1.0) / ((a + b + 2.0).powi(2) * (a + b + 3.0));
        offdiag.push(s.sqrt());
    }
    for k in 2..n {
        let k = k as f64;
        let t = 2.0 * k + a + b;
        let s = 4.0 * k * (k + a) * (k + b) * (k + a + b) / (t * t * (t * t - 1.0));
        offdiag.push(s.sqrt());
    }
    let mu0 = 2f64.powf(a + b + 1.0) * gamma(a + 1.0) * gamma(b + 1.0) / gamma(a + b + 2.0);
    golub_welsch(&diag, &offdiag, mu0)
}

/// n-point Gauss-Jacobi rule mapped to [lo, hi] for the weight
/// $(hi-x)^{exp\_hi} (x-lo)^{exp\_lo}$.
///
/// `sum_i w_i f(x_i)` approximates
/// $\int_{lo}^{hi} (hi-x)^{exp\_hi} (x-lo)^{exp\_lo} f(x)\,dx$.
pub fn gauss_jacobi_on(n: usize, exp_hi: f64, exp_lo: f64, lo: f64, hi: f64) -> GaussRule {
    let mut rule = gauss_jacobi(n, exp_hi, exp_lo);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let scale = half.powf(exp_hi + exp_lo + 1.0);
    for x in &mut rule.nodes {
        *x = mid + half * *x;
    }
    for w in &mut rule.weights {
        *w *= scale;
    }
    rule
}

/// Composite Gauss-Legendre integration over [a, b] with geometric panel
/// refinement toward both endpoints.
///
/// Intended for integrands analytic in the interior but merely Holder at the
/// ends (|x-a|^s kinks, logarithms); `levels` halvings bring the innermost
/// panel to relative width 2^-levels, and the endpoints themselves are never
/// evaluated.
pub fn graded_integral(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, levels: usize, n: usize) -> f64 {
    assert!(b > a && levels >= 1);
    let base = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let mut panel = |lo: f64, hi: f64, acc: &mut f64| {
        let half = 0.5 * (hi - lo);
        let m = 0.5 * (hi + lo);
        for (&u, &w) in base.nodes.iter().zip(&base.weights) {
            *acc += half * w * f(m + half * u);
        }
    };
    let mut acc = 0.0;
    let width = mid - a;
    let mut hi = mid;
    for j in 0..levels {
        let lo = if j + 1 == levels {
            a
        } else {
            a + width * 0.5f64.powi(j as i32 + 1)
        };
        panel(lo, hi, &mut acc);
        hi = lo;
    }
    let width = b - mid;
    let mut lo = mid;
    for j in 0..levels {
        let hi = if j + 1 == levels {
            b
        } else {
            b - width * 0.5f64.powi(j as i32 + 1)
        };
        panel(lo, hi, &mut acc);
        lo = hi;
    }
    acc
}

/// Computes $\int_{lo}^\infty r^{-p}\cos(f r)\,dr$ for p > 1, f > 0, lo > 0.
///
/// Half-period Gauss panels up to a large radius R, then a four-term
/// integration-by-parts asymptotic expansion of the remainder; the truncated
/// term is bounded by $p(p+1)(p+2)\,R^{-p-3}/f^4$, far below 1e-12 for the
/// panel count used here.
pub fn osc_power_cos(p: f64, f: f64, lo: f64) -> f64 {
    osc_power_tail(p, f, lo, false)
}

/// Computes $\int_{lo}^\infty r^{-p}\sin(f r)\,dr$ for p > 1, f > 0, lo > 0,
/// by the same panel-plus-expansion scheme as [`osc_power_cos`].
pub fn osc_power_sin(p: f64, f: f64, lo: f64) -> f64 {
    osc_power_tail(p, f, lo, true)
}

fn osc_power_tail(p: f64, f: f64, lo: f64, sine: bool) -> f64 {
    assert!(p > 1.0, "tail exponent must exceed 1");
    assert!(f > 0.0 && lo > 0.0);
    let half_period = std::f64::consts::PI / f;
    let base = gauss_legendre(10);
    let mut acc = 0.0;
    let mut a = lo;
    // grow panel widths geometrically away from lo (the power factor is
    // steepest there), then march in half-period steps
    let mut width = (0.5 * lo).min(half_period);
    let mut full_panels = 0usize;
    while full_panels < 600 {
        let b = a + width;
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (&u, &w) in base.nodes.iter().zip(&base.weights) {
            let r = mid + half * u;
            let osc = if sine { (f * r).sin() } else { (f * r).cos() };
            acc += half * w * r.powf(-p) * osc;
        }
        a = b;
        if width >= half_period {
            full_panels += 1;
        } else {
            width = (2.0 * width).min(half_period);
        }
    }
    let big_r = a;
    let (s, c) = (f * big_r).sin_cos();
    let tail = if sine {
        c * big_r.powf(-p) / f + p * s * big_r.powf(-p - 1.0) / f.powi(2)
            - p * (p + 1.0) * c * big_r.powf(-p - 2.0) / f.powi(3)
            - p * (p + 1.0) * (p + 2.0) * s * big_r.powf(-p - 3.0) / f.powi(4)
    } else {
        -s * big_r.powf(-p) / f + p * c * big_r.powf(-p - 1.0) / f.powi(2)
            + p * (p + 1.0) * s * big_r.powf(-p - 2.0) / f.powi(3)
            - p * (p + 1.0) * (p + 2.0) * c * big_r.powf(-p - 3.0) / f.powi(4)
    };
    acc + tail
}

/// Chebyshev-Lobatto points on [lo, hi], ascending. Cluster at the ends;
/// the natural node set for barycentric interpolation.
pub fn chebyshev_lobatto(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(n >= 1);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    if n == 1 {
        return vec![mid];
    }
    (0..n)
        .map(|j| {
            let theta = std::f64::consts::PI * (n - 1 - j) as f64 / (n - 1) as f64;
            mid + half * theta.cos()
        })
        .collect()
}

/// Barycentric interpolation weights for an arbitrary set of distinct
/// nodes. Differences are scaled by 4/(span) to keep the products in
/// floating range.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    assert!(n >= 1);
    let span = nodes[n - 1] - nodes[0];
    let c = if span > 0.0 { 4.0 / span } else { 1.0 };
    (0..n)
        .map(|j| {
            let mut p = 1.0;
            for k in 0..n {
                if k != j {
                    p *= (nodes[j] - nodes[k]) * c;
                }
            }
            1.0 / p
        })
        .collect()
}

/// Evaluates the barycentric interpolant of `values` at `x`.
pub fn barycentric_eval(nodes: &[f64], weights: &[f64], values: &[f64], x: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..nodes.len() {
        let dx = x - nodes[j];
        if dx == 0.0 {
            return values[j];
        }
        let t = weights[j] / dx;
        num += t * values[j];
        den += t;
    }
    num / den
}
