//! Deterministic counter-based Gaussian stream.
//!
//! Each `(seed, trajectory_id, counter)` triple maps to one standard normal
//! draw through a stateless mixing function, so trajectories can be generated
//! in any order (or in parallel) with bit-identical results. The counter
//! advances by one per draw.

/// Splitmix64 finalizer: a bijective avalanche mix on 64-bit words.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_SALT: u64 = 0xa076_1d64_78bd_642f;

/// A stream of independent standard normal variates identified by a seed and
/// a trajectory id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaussianStream {
    base: u64,
    counter: u64,
}

impl GaussianStream {
    pub fn new(seed: u64, trajectory_id: u64) -> Self {
        let base = mix64(seed ^ mix64(trajectory_id ^ STREAM_SALT));
        Self { base, counter: 0 }
    }

    /// Number of draws consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Next standard normal draw.
    pub fn next_gaussian(&mut self) -> f64 {
        let z = mix64(
            self.base
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        );
        self.counter += 1;
        // Uniform strictly inside (0, 1): 53 high bits plus a half-ulp offset.
        let u = ((z >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
        inverse_normal_cdf(u)
    }

    /// Fills `out` with consecutive draws.
    pub fn next_gaussian_vec(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_gaussian();
        }
    }

    /// Discards `n` draws, keeping the counter aligned with streams that
    /// consumed them.
    pub fn skip(&mut self, n: u64) {
        self.counter += n;
    }
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// absolute error about 1.15e-9 on (0, 1); this accuracy is part of the
/// bit-exact reproducibility contract).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
