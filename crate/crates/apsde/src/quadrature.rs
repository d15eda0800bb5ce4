//! Gauss-Hermite quadrature against the standard normal density.

use crate::error::{Error, Result};

/// Nodes and weights such that `sum(w_i * g(u_i))` approximates
/// `E[g(U)]` for `U ~ N(0, 1)`. Exact for polynomials of degree below `2n`.
pub fn gauss_hermite_normal(n: usize) -> Result<Vec<(f64, f64)>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "quadrature order must be at least 2, got {n}"
        )));
    }
    let (nodes, weights) = gauss_hermite_physicists(n);
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    Ok(nodes
        .into_iter()
        .zip(weights)
        .map(|(t, v)| (std::f64::consts::SQRT_2 * t, v * inv_sqrt_pi))
        .collect())
}

/// Nodes and weights of the n-point rule for `integral exp(-t^2) g(t) dt`.
///
/// Newton iteration on the orthonormal Hermite recurrence; the asymptotic
/// initial guesses are the classical ones from Stroud and Secrest.
fn gauss_hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut t = 0.0f64;
    for i in 0..m {
        t = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => t - 1.14 * nf.powf(0.426) / t,
            2 => 1.86 * t - 0.86 * nodes[0],
            3 => 1.91 * t - 0.91 * nodes[1],
            _ => 2.0 * t - nodes[i - 2],
        };
        let mut dp = 0.0;
        for _ in 0..100 {
            // Orthonormal Hermite values at t.
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = t * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            dp = (2.0 * nf).sqrt() * p2;
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = t;
        nodes[n - 1 - i] = -t;
        weights[i] = 2.0 / (dp * dp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}
