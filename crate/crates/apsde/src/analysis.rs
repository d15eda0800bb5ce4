//! Infinitesimal generators, the closed-form perturbed test functions of the
//! diffusion regime, and the generator-gap diagnostic.
//!
//! The diagnostic checks the defining property of the asymptotic-preserving
//! construction at the level of generators: with `phi_eps = phi + eps phi_1 +
//! eps^2 phi_2` built from the cell-problem solution, the residual
//! `L_eps phi_eps - L phi` is bounded by `C (eps |m| + eps^2 m^2)` uniformly
//! in `eps`. All operations here are scalar (`d = 1`), matching the registry.

use crate::error::{Error, Result};
use crate::models::{AveragingModel, DiffusionModel, Model};

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;
type XmFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A scalar test function with analytic derivatives up to third order.
pub struct TestFunctionBundle {
    pub name: String,
    phi: Box<ScalarFn>,
    d1: Box<ScalarFn>,
    d2: Box<ScalarFn>,
    d3: Box<ScalarFn>,
}

impl TestFunctionBundle {
    pub fn new(
        name: impl Into<String>,
        phi: Box<ScalarFn>,
        d1: Box<ScalarFn>,
        d2: Box<ScalarFn>,
        d3: Box<ScalarFn>,
    ) -> Self {
        Self {
            name: name.into(),
            phi,
            d1,
            d2,
            d3,
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        (self.phi)(x)
    }

    pub fn d1(&self, x: f64) -> f64 {
        (self.d1)(x)
    }

    pub fn d2(&self, x: f64) -> f64 {
        (self.d2)(x)
    }

    pub fn d3(&self, x: f64) -> f64 {
        (self.d3)(x)
    }
}

const TAU: f64 = std::f64::consts::TAU;

/// Built-in test functions: `identity`, `sin2pix`, `cos2pix`, `constant`.
pub fn test_function(name: &str) -> Result<TestFunctionBundle> {
    Ok(match name {
        "identity" => TestFunctionBundle::new(
            "identity",
            Box::new(|x| x),
            Box::new(|_| 1.0),
            Box::new(|_| 0.0),
            Box::new(|_| 0.0),
        ),
        "sin2pix" => TestFunctionBundle::new(
            "sin2pix",
            Box::new(|x| (TAU * x).sin()),
            Box::new(|x| TAU * (TAU * x).cos()),
            Box::new(|x| -TAU * TAU * (TAU * x).sin()),
            Box::new(|x| -TAU * TAU * TAU * (TAU * x).cos()),
        ),
        "cos2pix" => TestFunctionBundle::new(
            "cos2pix",
            Box::new(|x| (TAU * x).cos()),
            Box::new(|x| -TAU * (TAU * x).sin()),
            Box::new(|x| -TAU * TAU * (TAU * x).cos()),
            Box::new(|x| TAU * TAU * TAU * (TAU * x).sin()),
        ),
        "constant" => TestFunctionBundle::new(
            "constant",
            Box::new(|_| 1.0),
            Box::new(|_| 0.0),
            Box::new(|_| 0.0),
            Box::new(|_| 0.0),
        ),
        other => Err(Error::UnknownObservable(other.into()))?,
    })
}

/// A scalar test function of `(x, m)` with the partial derivatives the
/// generators act on.
pub struct XmBundle {
    pub phi: Box<XmFn>,
    pub dx: Box<XmFn>,
    pub dxx: Box<XmFn>,
    pub dm: Box<XmFn>,
    pub dmm: Box<XmFn>,
}

/// Builds an [`XmBundle`] from individual derivative closures.
pub fn xm_from_parts(
    phi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    dx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    dxx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    dm: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    dmm: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> XmBundle {
    XmBundle {
        phi: Box::new(phi),
        dx: Box::new(dx),
        dxx: Box::new(dxx),
        dm: Box::new(dm),
        dmm: Box::new(dmm),
    }
}

/// Full generator of the averaging regime applied to a test function:
/// `(1/eps) L_OU + L_0` with `L_OU = -m dm + h^2 dmm` and
/// `L_0 = b dx + (1/2) sigma^2 dxx`.
pub fn generator_avg_apply(
    model: &AveragingModel,
    bundle: &XmBundle,
    x: f64,
    m: f64,
    eps: f64,
) -> Result<f64> {
    if model.d != 1 {
        return Err(Error::UnsupportedDimension(
            "generator evaluation is scalar-only".into(),
        ));
    }
    let xs = [x];
    let h = model.h(&xs);
    let b = model.b(&xs, m)[0];
    let sigma = model.sigma(&xs, m);
    let s2: f64 = sigma.iter().map(|s| s * s).sum();
    let ou = -m * (bundle.dm)(x, m) + h * h * (bundle.dmm)(x, m);
    let l0 = b * (bundle.dx)(x, m) + 0.5 * s2 * (bundle.dxx)(x, m);
    Ok(ou / eps + l0)
}

/// Full generator of the diffusion regime applied to a test function:
/// `(1/eps^2) L_OU + (1/eps) L_1 + L_0` with
/// `L_OU = -f m dm + (1/2) f^2 h^2 dmm`, `L_1 = m sigma dx + f g dm`,
/// `L_0 = b dx`.
pub fn generator_diff_apply(
    model: &DiffusionModel,
    bundle: &XmBundle,
    x: f64,
    m: f64,
    eps: f64,
) -> Result<f64> {
    if model.d != 1 {
        return Err(Error::UnsupportedDimension(
            "generator evaluation is scalar-only".into(),
        ));
    }
    let xs = [x];
    let f = model.f_checked(&xs)?;
    let g = model.g(&xs);
    let h = model.h(&xs);
    let b = model.b(&xs)[0];
    let sigma = model.sigma(&xs)[0];
    let dm = (bundle.dm)(x, m);
    let ou = -f * m * dm + 0.5 * f * f * h * h * (bundle.dmm)(x, m);
    let l1 = m * sigma * (bundle.dx)(x, m) + f * g * dm;
    let l0 = b * (bundle.dx)(x, m);
    Ok(ou / (eps * eps) + l1 / eps + l0)
}

/// Generator of the limiting equation applied to an `x`-only test function.
///
/// Averaging regime: `b_bar phi' + (1/2) sigma_bar^2 phi''` with
/// quadrature-averaged coefficients. Diffusion regime: the drift is the
/// Ito-form limiting drift and the diffusion coefficient is `h sigma`.
pub fn limiting_generator_apply(
    model: &Model,
    bundle: &TestFunctionBundle,
    x: f64,
    quadrature_order: usize,
) -> Result<f64> {
    match model {
        Model::Averaging(m) => {
            if m.d != 1 {
                return Err(Error::UnsupportedDimension(
                    "generator evaluation is scalar-only".into(),
                ));
            }
            let xs = [x];
            let drift = m.averaged_drift(&xs, quadrature_order)?[0];
            let diff = if m.has_slow_noise() {
                m.averaged_diffusion(&xs, quadrature_order)?
            } else {
                0.0
            };
            Ok(drift * bundle.d1(x) + 0.5 * diff * diff * bundle.d2(x))
        }
        Model::Diffusion(m) => {
            if m.d != 1 {
                return Err(Error::UnsupportedDimension(
                    "generator evaluation is scalar-only".into(),
                ));
            }
            let xs = [x];
            let drift = m.limiting_drift(&xs)?[0];
            let amp = m.h(&xs) * m.sigma(&xs)[0];
            Ok(drift * bundle.d1(x) + 0.5 * amp * amp * bundle.d2(x))
        }
    }
}

/// `s = sigma/f` and its first two derivatives, from the analytic bundle.
fn cell_ratio(model: &DiffusionModel, x: f64) -> Result<(f64, f64, f64)> {
    let derivs = model.derivatives()?;
    let xs = [x];
    let f = model.f_checked(&xs)?;
    let sigma = model.sigma(&xs)[0];
    let ds = (derivs.dsigma)(&xs)[0];
    let df = (derivs.df)(&xs)[0];
    let d2s = derivs
        .d2sigma
        .as_ref()
        .ok_or_else(|| Error::MissingCapability("second derivative of sigma missing".into()))?(
        &xs
    );
    let d2f = derivs
        .d2f
        .as_ref()
        .ok_or_else(|| Error::MissingCapability("second derivative of f missing".into()))?(
        &xs
    );
    let s = sigma / f;
    let s1 = ds / f - sigma * df / (f * f);
    let s2 = d2s / f - 2.0 * ds * df / (f * f) - sigma * d2f / (f * f)
        + 2.0 * sigma * df * df / (f * f * f);
    Ok((s, s1, s2))
}

/// Perturbed test function of the diffusion regime:
/// `phi_eps = phi + eps m s phi' + eps^2 (m^2/2) s (s phi')'` with
/// `s = sigma/f`.
pub fn perturbed_phi_diff(
    model: &DiffusionModel,
    bundle: &TestFunctionBundle,
    x: f64,
    m: f64,
    eps: f64,
) -> Result<f64> {
    if model.d != 1 {
        return Err(Error::UnsupportedDimension(
            "perturbed test functions are scalar-only".into(),
        ));
    }
    let (s, s1, _) = cell_ratio(model, x)?;
    let q = s1 * bundle.d1(x) + s * bundle.d2(x); // (s phi')'
    let phi1 = m * s * bundle.d1(x);
    let phi2 = 0.5 * m * m * s * q;
    Ok(bundle.phi(x) + eps * phi1 + eps * eps * phi2)
}

/// Applies the full diffusion generator to the perturbed test function
/// `phi_eps` at `(x, m)`, using analytic derivatives throughout.
pub fn generator_on_perturbed_phi(
    model: &DiffusionModel,
    bundle: &TestFunctionBundle,
    x: f64,
    m: f64,
    eps: f64,
) -> Result<f64> {
    let (s, s1, s2) = cell_ratio(model, x)?;
    let p1 = bundle.d1(x);
    let p2 = bundle.d2(x);
    let p3 = bundle.d3(x);
    let q = s1 * p1 + s * p2;
    let q1 = s2 * p1 + 2.0 * s1 * p2 + s * p3;

    // Partial derivatives of phi_eps = phi + eps m s phi' + eps^2 (m^2/2) s q.
    let dm = eps * s * p1 + eps * eps * m * s * q;
    let dmm = eps * eps * s * q;
    let dx = p1 + eps * m * q + eps * eps * 0.5 * m * m * (s1 * q + s * q1);

    let xs = [x];
    let f = model.f_checked(&xs)?;
    let g = model.g(&xs);
    let h = model.h(&xs);
    let b = model.b(&xs)[0];
    let sigma = model.sigma(&xs)[0];

    let ou = -f * m * dm + 0.5 * f * f * h * h * dmm;
    let l1 = m * sigma * dx + f * g * dm;
    let l0 = b * dx;
    Ok(ou / (eps * eps) + l1 / eps + l0)
}

/// Per-`eps` maximum of the normalized generator residual
/// `|L_eps phi_eps - L phi| / (eps |m| + eps^2 m^2)` over the grid.
/// Grid points whose denominator is below `1e-12` are skipped.
pub fn generator_gap(
    model_ref: &Model,
    bundle: &TestFunctionBundle,
    x_grid: &[f64],
    m_grid: &[f64],
    eps_list: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let model = match model_ref {
        Model::Diffusion(m) => m,
        Model::Averaging(_) => {
            return Err(Error::MissingCapability(
                "the generator-gap diagnostic is only available in the diffusion regime".into(),
            ))
        }
    };
    let mut out = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mut max_gap = 0.0f64;
        for &x in x_grid {
            let l_limit = limiting_generator_apply(model_ref, bundle, x, 32)?;
            for &m in m_grid {
                let denom = eps * m.abs() + eps * eps * m * m;
                if denom < 1e-12 {
                    continue;
                }
                let l_eps = generator_on_perturbed_phi(model, bundle, x, m, eps)?;
                max_gap = max_gap.max((l_eps - l_limit).abs() / denom);
            }
        }
        out.push((eps, max_gap));
    }
    Ok(out)
}
