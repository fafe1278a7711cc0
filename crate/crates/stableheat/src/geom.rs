//! Low-dimensional vector helpers and sphere quadrature.
//!
//! Points are plain `[f64; 3]` regardless of the active dimension `d <= 3`;
//! trailing components beyond `d` stay zero, which keeps dot products and
//! norms dimension-agnostic.

use rand::Rng;
use rand_distr::StandardNormal;

pub type Point = [f64; 3];

pub const ZERO: Point = [0.0; 3];

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Point, c: f64) -> Point {
    [c * a[0], c * a[1], c * a[2]]
}

/// Surface measure of the unit sphere S^{d-1}: 2 (counting measure on
/// {-1, +1}), 2 pi, 4 pi.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => std::f64::consts::TAU,
        3 => 2.0 * std::f64::consts::TAU,
        _ => panic!("dimension must be 1, 2, or 3"),
    }
}

/// Quadrature rule for the surface integral over S^{d-1}, antipodally
/// symmetric so odd integrands cancel to rounding error. `n` steers the
/// order in d >= 2 and is ignored for d = 1.
pub fn sphere_rule(d: usize, n: usize) -> Vec<(Point, f64)> {
    match d {
        1 => vec![([1.0, 0.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.0)],
        2 => {
            let n = n.max(4) & !1;
            let w = std::f64::consts::TAU / n as f64;
            (0..n)
                .map(|k| {
                    let th = std::f64::consts::TAU * k as f64 / n as f64;
                    ([th.cos(), th.sin(), 0.0], w)
                })
                .collect()
        }
        3 => {
            let n = n.max(4);
            let polar = crate::quad::gauss_legendre(n);
            let naz = 2 * n;
            let waz = std::f64::consts::TAU / naz as f64;
            let mut out = Vec::with_capacity(n * naz);
            for (&u, &wu) in polar.nodes.iter().zip(&polar.weights) {
                let su = (1.0 - u * u).max(0.0).sqrt();
                for k in 0..naz {
                    let phi = std::f64::consts::TAU * k as f64 / naz as f64;
                    out.push(([su * phi.cos(), su * phi.sin(), u], wu * waz));
                }
            }
            out
        }
        _ => panic!("dimension must be 1, 2, or 3"),
    }
}

/// Draws a uniformly distributed unit direction in dimension `d`.
pub fn sample_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Point {
    match d {
        1 => {
            if rng.random::<bool>() {
                [1.0, 0.0, 0.0]
            } else {
                [-1.0, 0.0, 0.0]
            }
        }
        2 => {
            let th: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            [th.cos(), th.sin(), 0.0]
        }
        3 => loop {
            let g: Point = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let r = norm(g);
            if r > 1e-12 {
                return scale(g, 1.0 / r);
            }
        },
        _ => panic!("dimension must be 1, 2, or 3"),
    }
}
