//! Monte Carlo estimation: expectations of observables at the final time,
//! weak-error tables over `(dt, eps)` grids, order fitting, and coupled
//! pathwise gaps between a scheme and its limiting scheme.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::ModelEntry;
use crate::rng::GaussianStream;
use crate::schemes::{simulate_endpoint, SchemeId, SchemeParams};

/// A scalar function of the slow state, evaluated at the final time.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl Observable {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Observable({})", self.name)
    }
}

/// Built-in observables: `identity`, `sin2pix`, `cos2pix` (first slow
/// coordinate; the trigonometric ones are periodic, hence bounded on the
/// torus).
pub fn lookup_observable(name: &str) -> Result<Observable> {
    match name {
        "identity" => Ok(Observable::new("identity", |x: &[f64]| x[0])),
        "sin2pix" => Ok(Observable::new("sin2pix", |x: &[f64]| {
            (std::f64::consts::TAU * x[0]).sin()
        })),
        "cos2pix" => Ok(Observable::new("cos2pix", |x: &[f64]| {
            (std::f64::consts::TAU * x[0]).cos()
        })),
        other => Err(Error::UnknownObservable(other.into())),
    }
}

/// Result of a Monte Carlo mean: estimate, standard error, and the number of
/// non-finite trajectories that were discarded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    pub failures: usize,
}

/// Monte Carlo estimate of `E[phi(X_N)]` over `samples` independent
/// trajectories with ids `0..samples`.
///
/// Per-trajectory values are reduced in ascending trajectory-id order
/// regardless of the worker count, so the result is bitwise deterministic.
/// Trajectories that blow up are discarded; more than 0.1% of them is a run
/// failure.
pub fn estimate_expectation(
    scheme: SchemeId,
    entry: &ModelEntry,
    observable: &Observable,
    params: &SchemeParams,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "at least 2 samples are required, got {samples}"
        )));
    }
    scheme.check_compatible(entry)?;
    params.validate()?;

    let values: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|id| {
            let mut stream = GaussianStream::new(seed, id);
            match simulate_endpoint(scheme, entry, params, &mut stream) {
                Ok(state) => {
                    let v = observable.eval(&state.x);
                    if v.is_finite() {
                        v
                    } else {
                        f64::NAN
                    }
                }
                Err(_) => f64::NAN,
            }
        })
        .collect();

    let failures = values.iter().filter(|v| !v.is_finite()).count();
    if failures * 1000 > samples {
        return Err(Error::NumericalFailure(format!(
            "{failures} of {samples} trajectories were non-finite (limit is 0.1%)"
        )));
    }
    let good = samples - failures;
    let mut sum = 0.0;
    for v in &values {
        if v.is_finite() {
            sum += v;
        }
    }
    let mean = sum / good as f64;
    let mut ss = 0.0;
    for v in &values {
        if v.is_finite() {
            ss += (v - mean) * (v - mean);
        }
    }
    let std_error = (ss / (good as f64 - 1.0)).sqrt() / (good as f64).sqrt();
    Ok(Estimate {
        mean,
        std_error,
        samples: good,
        failures,
    })
}

/// How the reference expectation for a weak-error cell is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceSpec {
    /// Same scheme and `eps`, with the step size divided by `factor`
    /// relative to the finest grid step.
    SelfRefined { factor: usize },
    /// A fixed (typically `eps`-free) scheme at the given step size.
    Scheme { scheme: SchemeId, dt: f64 },
}

/// One `(dt, eps)` cell of a weak-error table.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorRow {
    pub dt: f64,
    pub eps: f64,
    pub scheme: SchemeId,
    pub reference_scheme: SchemeId,
    pub estimate: f64,
    pub std_error: f64,
    pub error: f64,
    pub error_std: f64,
    pub samples: usize,
}

/// Shared configuration for table computations.
#[derive(Debug, Clone, PartialEq)]
pub struct TableConfig {
    pub t_final: f64,
    pub samples: usize,
    pub seed: u64,
    pub theta: f64,
    pub theta2: f64,
    pub quad_nodes: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            samples: 100_000,
            seed: 0,
            theta: 1.0,
            theta2: 1.0,
            quad_nodes: 32,
        }
    }
}

impl TableConfig {
    fn params(&self, dt: f64, eps: f64) -> Result<SchemeParams> {
        let steps = (self.t_final / dt).round() as usize;
        if steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "dt = {dt} exceeds the final time T = {}",
                self.t_final
            )));
        }
        let mut p = SchemeParams::new(dt, eps, steps)?
            .with_theta(self.theta)?
            .with_theta2(self.theta2)?;
        p.quad_nodes = self.quad_nodes;
        Ok(p)
    }
}

/// Weak-error table: for each `(dt, eps)` cell, `|E phi| - E phi_ref|` with a
/// combined standard error. All cells share the same seed, so they are
/// coupled through common random numbers.
pub fn weak_error_table(
    scheme: SchemeId,
    reference: &ReferenceSpec,
    entry: &ModelEntry,
    observable: &Observable,
    dt_grid: &[f64],
    eps_grid: &[f64],
    config: &TableConfig,
) -> Result<Vec<WeakErrorRow>> {
    if dt_grid.is_empty() || eps_grid.is_empty() {
        return Err(Error::InvalidParameter(
            "dt and eps grids must be non-empty".into(),
        ));
    }
    let min_dt = dt_grid.iter().cloned().fold(f64::INFINITY, f64::min);

    // An eps-free reference is computed once and shared by every row.
    let shared_ref = match reference {
        ReferenceSpec::Scheme {
            scheme: ref_scheme,
            dt,
        } => {
            let p = config.params(*dt, 1.0)?;
            Some((
                *ref_scheme,
                estimate_expectation(
                    *ref_scheme,
                    entry,
                    observable,
                    &p,
                    config.samples,
                    config.seed,
                )?,
            ))
        }
        ReferenceSpec::SelfRefined { .. } => None,
    };

    let mut rows = Vec::with_capacity(dt_grid.len() * eps_grid.len());
    for &eps in eps_grid {
        let per_eps_ref = match reference {
            ReferenceSpec::SelfRefined { factor } => {
                let dt_ref = min_dt / *factor as f64;
                let p = config.params(dt_ref, eps)?;
                Some((
                    scheme,
                    estimate_expectation(
                        scheme,
                        entry,
                        observable,
                        &p,
                        config.samples,
                        config.seed,
                    )?,
                ))
            }
            ReferenceSpec::Scheme { .. } => None,
        };
        let (ref_scheme, ref_est) = per_eps_ref
            .as_ref()
            .or(shared_ref.as_ref())
            .expect("one reference branch always applies");
        for &dt in dt_grid {
            let p = config.params(dt, eps)?;
            let est =
                estimate_expectation(scheme, entry, observable, &p, config.samples, config.seed)?;
            rows.push(WeakErrorRow {
                dt,
                eps,
                scheme,
                reference_scheme: *ref_scheme,
                estimate: est.mean,
                std_error: est.std_error,
                error: (est.mean - ref_est.mean).abs(),
                error_std: (est.std_error * est.std_error + ref_est.std_error * ref_est.std_error)
                    .sqrt(),
                samples: est.samples,
            });
        }
    }
    Ok(rows)
}

/// Which grid variable an order fit regresses against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitAxis {
    Dt,
    Eps,
}

/// Result of a log-log least-squares order fit.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Rows used by the fit.
    pub used: usize,
    /// Rows excluded because the error was within 3 standard errors of zero.
    pub excluded: usize,
}

/// Ordinary least squares of `log2(error)` against `log2(dt)` (or
/// `log2(eps)`). Cells whose error is statistically indistinguishable from
/// Monte Carlo noise (`error <= 3 error_std`) are excluded; at least three
/// usable rows are required.
pub fn fit_order(rows: &[WeakErrorRow], axis: FitAxis) -> Result<OrderFit> {
    let mut pts = Vec::new();
    let mut excluded = 0usize;
    for row in rows {
        if row.error > 3.0 * row.error_std && row.error > 0.0 {
            let x = match axis {
                FitAxis::Dt => row.dt.log2(),
                FitAxis::Eps => row.eps.log2(),
            };
            pts.push((x, row.error.log2()));
        } else {
            excluded += 1;
        }
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "order fit needs at least 3 rows with error above the noise floor, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "order fit needs at least two distinct grid values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(OrderFit {
        slope,
        intercept,
        r_squared,
        used: pts.len(),
        excluded,
    })
}

/// One entry of a coupled limit-gap measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitGapRow {
    pub eps: f64,
    pub gap: f64,
    pub gap_std: f64,
}

/// Mean pathwise endpoint gap `E max_i |X_N^eps[i] - X_N[i]|` between an
/// eps-dependent scheme and its limiting scheme, under common noise draws
/// (same seed and trajectory ids), per `eps`.
pub fn coupled_limit_gap(
    scheme: SchemeId,
    limiting_scheme: SchemeId,
    entry: &ModelEntry,
    params: &SchemeParams,
    eps_list: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<LimitGapRow>> {
    scheme.check_compatible(entry)?;
    limiting_scheme.check_compatible(entry)?;
    let mut out = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mut p = params.clone();
        p.eps = eps;
        p.validate()?;
        let gaps: Vec<f64> = (0..samples as u64)
            .into_par_iter()
            .map(|id| {
                let mut s1 = GaussianStream::new(seed, id);
                let mut s2 = GaussianStream::new(seed, id);
                let a = simulate_endpoint(scheme, entry, &p, &mut s1);
                let b = simulate_endpoint(limiting_scheme, entry, &p, &mut s2);
                match (a, b) {
                    (Ok(sa), Ok(sb)) => {
                        sa.x.iter()
                            .zip(sb.x.iter())
                            .map(|(u, v)| (u - v).abs())
                            .fold(0.0, f64::max)
                    }
                    _ => f64::NAN,
                }
            })
            .collect();
        let failures = gaps.iter().filter(|g| !g.is_finite()).count();
        if failures * 1000 > samples {
            return Err(Error::NumericalFailure(format!(
                "{failures} of {samples} coupled trajectories were non-finite at eps = {eps}"
            )));
        }
        let good = (samples - failures) as f64;
        let mean = gaps.iter().filter(|g| g.is_finite()).sum::<f64>() / good;
        let ss: f64 = gaps
            .iter()
            .filter(|g| g.is_finite())
            .map(|g| (g - mean) * (g - mean))
            .sum();
        let gap_std = (ss / (good - 1.0)).sqrt() / good.sqrt();
        out.push(LimitGapRow {
            eps,
            gap: mean,
            gap_std,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::lookup;

    #[test]
    fn observable_registry() {
        assert!((lookup_observable("identity").unwrap().eval(&[0.3]) - 0.3).abs() < 1e-15);
        assert!((lookup_observable("sin2pix").unwrap().eval(&[0.25]) - 1.0).abs() < 1e-15);
        assert!((lookup_observable("cos2pix").unwrap().eval(&[0.5]) + 1.0).abs() < 1e-15);
        assert!(lookup_observable("cube").is_err());
    }

    #[test]
    fn constant_observable_has_zero_std_error() {
        let entry = lookup("avg-ex").unwrap();
        let obs = Observable::new("const", |_: &[f64]| 2.5);
        let p = SchemeParams::new(0.004, 0.01, 5).unwrap();
        let est = estimate_expectation(SchemeId::ApAveraging, &entry, &obs, &p, 500, 0).unwrap();
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.failures, 0);
    }

    #[test]
    fn one_step_limit_averaging_mean() {
        // After one step from x0 = 1: E[x'] = 1 + dt * b_bar(1) = 1 + dt/sqrt(2).
        let entry = lookup("avg-ex").unwrap();
        let obs = lookup_observable("identity").unwrap();
        let p = SchemeParams::new(0.004, 1.0, 1).unwrap();
        let est =
            estimate_expectation(SchemeId::LimitAveraging, &entry, &obs, &p, 40_000, 3).unwrap();
        let expect = 1.0 + 0.004 * std::f64::consts::FRAC_1_SQRT_2;
        assert!(
            (est.mean - expect).abs() < 3.0 * est.std_error,
            "mean {} vs {expect} (se {})",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn one_step_limit_diffusion_line_mean() {
        // x' = x(1 + sqrt(dt) gamma + dt gamma^2/2), so E[x'] = x0 (1 + dt/2)...
        // with x0 = 1: 1 + dt/2.
        let entry = lookup("diff-ex1-line").unwrap();
        let obs = lookup_observable("identity").unwrap();
        let p = SchemeParams::new(0.01, 1.0, 1).unwrap();
        let est =
            estimate_expectation(SchemeId::LimitDiffusion, &entry, &obs, &p, 40_000, 5).unwrap();
        let expect = 1.0 + 0.005;
        assert!(
            (est.mean - expect).abs() < 3.0 * est.std_error,
            "mean {} vs {expect} (se {})",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn estimate_requires_two_samples() {
        let entry = lookup("avg-ex").unwrap();
        let obs = lookup_observable("identity").unwrap();
        let p = SchemeParams::new(0.004, 0.01, 1).unwrap();
        assert!(matches!(
            estimate_expectation(SchemeId::ApAveraging, &entry, &obs, &p, 1, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn self_reference_cell_has_zero_error() {
        let entry = lookup("avg-ex").unwrap();
        let obs = lookup_observable("sin2pix").unwrap();
        let config = TableConfig {
            t_final: 0.064,
            samples: 200,
            ..TableConfig::default()
        };
        // With factor 1, the reference is the scheme itself at the same dt
        // and seed, so the error must vanish identically.
        let rows = weak_error_table(
            SchemeId::ApAveraging,
            &ReferenceSpec::SelfRefined { factor: 1 },
            &entry,
            &obs,
            &[0.016],
            &[0.5],
            &config,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].error, 0.0);
    }

    #[test]
    fn fit_order_synthetic_slopes() {
        let synth = |order: f64| -> Vec<WeakErrorRow> {
            (4..=10)
                .map(|k| {
                    let dt = 2f64.powi(-k);
                    WeakErrorRow {
                        dt,
                        eps: 1.0,
                        scheme: SchemeId::ApAveraging,
                        reference_scheme: SchemeId::ApAveraging,
                        estimate: 0.0,
                        std_error: 0.0,
                        error: 0.7 * dt.powf(order),
                        error_std: 1e-12,
                        samples: 100,
                    }
                })
                .collect()
        };
        for order in [1.0, 0.5, 0.0] {
            let fit = fit_order(&synth(order), FitAxis::Dt).unwrap();
            assert!(
                (fit.slope - order).abs() < 1e-9,
                "order {order}: slope {}",
                fit.slope
            );
            assert!(fit.r_squared > 1.0 - 1e-9 || order == 0.0);
            assert_eq!(fit.used, 7);
        }
    }

    #[test]
    fn fit_order_excludes_noise_dominated_cells() {
        let mut rows = Vec::new();
        for k in 4..=10 {
            let dt = 2f64.powi(-k);
            rows.push(WeakErrorRow {
                dt,
                eps: 1.0,
                scheme: SchemeId::ApAveraging,
                reference_scheme: SchemeId::ApAveraging,
                estimate: 0.0,
                std_error: 0.0,
                error: dt,
                // Three cells sit below the 3-sigma noise floor.
                error_std: if k >= 8 { dt } else { 1e-12 },
                samples: 100,
            });
        }
        let fit = fit_order(&rows, FitAxis::Dt).unwrap();
        assert_eq!(fit.used, 4);
        assert_eq!(fit.excluded, 3);

        // All rows excluded -> insufficient data.
        for row in &mut rows {
            row.error_std = row.error;
        }
        assert!(matches!(
            fit_order(&rows, FitAxis::Dt),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn coupled_gap_of_scheme_with_itself_is_zero() {
        let entry = lookup("diff-ex1").unwrap();
        let p = SchemeParams::new(0.01, 1.0, 20).unwrap();
        let rows = coupled_limit_gap(
            SchemeId::ApDiffusion,
            SchemeId::ApDiffusion,
            &entry,
            &p,
            &[0.5, 0.25],
            100,
            0,
        )
        .unwrap();
        for row in rows {
            assert_eq!(row.gap, 0.0, "eps = {}", row.eps);
        }
    }

    #[test]
    fn std_error_scales_with_sample_count() {
        let entry = lookup("avg-ex").unwrap();
        let obs = lookup_observable("sin2pix").unwrap();
        let p = SchemeParams::new(0.01, 0.1, 10).unwrap();
        let small =
            estimate_expectation(SchemeId::ApAveraging, &entry, &obs, &p, 4_000, 1).unwrap();
        let large =
            estimate_expectation(SchemeId::ApAveraging, &entry, &obs, &p, 16_000, 1).unwrap();
        let ratio = small.std_error / large.std_error;
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "4x samples should halve the standard error, ratio {ratio}"
        );
    }
}
