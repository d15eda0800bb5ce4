//! Slow-fast SDE model families and the built-in model registry.
//!
//! Two families are supported. In the averaging regime the slow component
//! follows `dX = b(X, m) dt + sigma(X, m) dB` while the fast component is an
//! Ornstein-Uhlenbeck process relaxing on time scale `eps`. In the diffusion
//! approximation regime the slow drift carries a `m/eps` factor and the fast
//! component relaxes on time scale `eps^2` with state-dependent rate `f`.

use std::fmt;
use std::sync::Arc;

use smallvec::{smallvec, SmallVec};

use crate::error::{Error, Result};
use crate::quadrature::gauss_hermite_normal;

/// Slow-component vector. Registry models use `d = 1`; the inline capacity
/// keeps trajectory loops allocation-free for small `d`.
pub type Slow = SmallVec<[f64; 2]>;

/// Small dense matrix stored row-major (`d x D` diffusion blocks, Jacobians).
pub type Mat = SmallVec<[f64; 4]>;

/// Domain of the slow component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Flat torus: coordinates identified mod 1.
    Torus,
    /// The real line.
    Line,
}

/// The pair `(x, m)` of slow and fast components.
///
/// The slow state is stored unwrapped even on the torus so that trajectory
/// output is continuous; apply [`wrap_torus`] for display or comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub x: Slow,
    pub m: f64,
}

impl SystemState {
    pub fn new(x: Slow, m: f64) -> Self {
        Self { x, m }
    }

    pub fn is_finite(&self) -> bool {
        self.m.is_finite() && self.x.iter().all(|v| v.is_finite())
    }
}

/// Canonical torus representative: each coordinate mapped to `[0, 1)`.
/// On the line the input is returned unchanged.
pub fn wrap_torus(x: &[f64], domain: Domain) -> Result<Slow> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidState(format!(
            "non-finite slow state {x:?} cannot be wrapped"
        )));
    }
    Ok(match domain {
        Domain::Torus => x.iter().map(|v| v.rem_euclid(1.0)).collect(),
        Domain::Line => x.iter().copied().collect(),
    })
}

type XmVecFn = dyn Fn(&[f64], f64) -> Slow + Send + Sync;
type XmMatFn = dyn Fn(&[f64], f64) -> Mat + Send + Sync;
type XVecFn = dyn Fn(&[f64]) -> Slow + Send + Sync;
type XMatFn = dyn Fn(&[f64]) -> Mat + Send + Sync;
type XScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Coefficient bundle for the averaging regime:
/// slow drift `b(x, m)`, slow diffusion `sigma(x, m)` (`d x D`, `None`
/// meaning identically zero), and fast noise amplitude `h(x)`.
pub struct AveragingModel {
    pub d: usize,
    /// Wiener dimension `D` of the slow noise.
    pub noise_dim: usize,
    pub domain: Domain,
    b: Box<XmVecFn>,
    sigma: Option<Box<XmMatFn>>,
    h: Box<XScalarFn>,
}

impl AveragingModel {
    pub fn new(
        d: usize,
        noise_dim: usize,
        domain: Domain,
        b: Box<XmVecFn>,
        sigma: Option<Box<XmMatFn>>,
        h: Box<XScalarFn>,
    ) -> Self {
        assert!(d > 0 && noise_dim > 0);
        Self {
            d,
            noise_dim,
            domain,
            b,
            sigma,
            h,
        }
    }

    pub fn b(&self, x: &[f64], m: f64) -> Slow {
        (self.b)(x, m)
    }

    /// Row-major `d x D` diffusion block; zero matrix when absent.
    pub fn sigma(&self, x: &[f64], m: f64) -> Mat {
        match &self.sigma {
            Some(s) => s(x, m),
            None => smallvec![0.0; self.d * self.noise_dim],
        }
    }

    pub fn has_slow_noise(&self) -> bool {
        self.sigma.is_some()
    }

    pub fn h(&self, x: &[f64]) -> f64 {
        (self.h)(x)
    }

    /// Averaged drift `integral b(x, m) dnu^x(m)` with `nu^x = N(0, h(x)^2)`,
    /// computed by `n`-node Gauss-Hermite quadrature.
    pub fn averaged_drift(&self, x: &[f64], quadrature_order: usize) -> Result<Slow> {
        let rule = gauss_hermite_normal(quadrature_order)?;
        let h = self.h(x);
        let mut out: Slow = smallvec![0.0; self.d];
        for (u, w) in rule {
            let bv = self.b(x, h * u);
            for (acc, v) in out.iter_mut().zip(bv.iter()) {
                *acc += w * v;
            }
        }
        Ok(out)
    }

    /// Averaged diffusion amplitude `sigma_bar(x)` for `d = 1`:
    /// the square root of `integral sigma sigma^T dnu^x`.
    pub fn averaged_diffusion(&self, x: &[f64], quadrature_order: usize) -> Result<f64> {
        if self.d != 1 {
            return Err(Error::UnsupportedDimension(format!(
                "averaged diffusion is only available for d = 1, model has d = {}",
                self.d
            )));
        }
        let rule = gauss_hermite_normal(quadrature_order)?;
        let h = self.h(x);
        let mut acc = 0.0;
        for (u, w) in rule {
            let row = self.sigma(x, h * u);
            let ss: f64 = row.iter().map(|s| s * s).sum();
            acc += w * ss;
        }
        Ok(acc.max(0.0).sqrt())
    }
}

/// Analytic derivative bundle for a diffusion-regime model. The first
/// derivatives are required by the reference scheme and the limiting drift;
/// the second derivatives (scalar, `d = 1` only) feed the generator-gap
/// diagnostic.
pub struct DiffusionDerivatives {
    /// Jacobian `dsigma_i/dx_j`, row-major `d x d`.
    pub dsigma: Box<XMatFn>,
    /// Gradient of `f`.
    pub df: Box<XVecFn>,
    /// `sigma''` for `d = 1`.
    pub d2sigma: Option<Box<XScalarFn>>,
    /// `f''` for `d = 1`.
    pub d2f: Option<Box<XScalarFn>>,
}

/// Coefficient bundle for the diffusion approximation regime:
/// `dX = b dt + sigma m / eps dt`,
/// `dm = f(X) (-m/eps^2 dt + g/eps dt + h/eps dbeta)`.
pub struct DiffusionModel {
    pub d: usize,
    pub domain: Domain,
    b: Box<XVecFn>,
    sigma: Box<XVecFn>,
    f: Box<XScalarFn>,
    g: Box<XScalarFn>,
    h: Box<XScalarFn>,
    derivatives: Option<DiffusionDerivatives>,
}

impl DiffusionModel {
    /// Builds the model, rejecting relaxation rates that are not strictly
    /// positive (checked on a 1024-point grid of the unit cell).
    pub fn new(
        d: usize,
        domain: Domain,
        b: Box<XVecFn>,
        sigma: Box<XVecFn>,
        f: Box<XScalarFn>,
        g: Box<XScalarFn>,
        h: Box<XScalarFn>,
        derivatives: Option<DiffusionDerivatives>,
    ) -> Result<Self> {
        assert!(d > 0);
        let model = Self {
            d,
            domain,
            b,
            sigma,
            f,
            g,
            h,
            derivatives,
        };
        if d == 1 {
            let min_f = (0..1024)
                .map(|i| model.f(&[i as f64 / 1024.0]))
                .fold(f64::INFINITY, f64::min);
            if !(min_f > 0.0) {
                return Err(Error::ModelViolation(format!(
                    "relaxation rate f must be strictly positive, grid minimum is {min_f}"
                )));
            }
        }
        Ok(model)
    }

    pub fn b(&self, x: &[f64]) -> Slow {
        (self.b)(x)
    }

    pub fn sigma(&self, x: &[f64]) -> Slow {
        (self.sigma)(x)
    }

    pub fn f(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn g(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }

    pub fn h(&self, x: &[f64]) -> f64 {
        (self.h)(x)
    }

    pub fn derivatives(&self) -> Result<&DiffusionDerivatives> {
        self.derivatives.as_ref().ok_or_else(|| {
            Error::MissingCapability("model has no analytic derivative bundle".into())
        })
    }

    /// Checked evaluation of `f`, for use inside scheme steps.
    pub fn f_checked(&self, x: &[f64]) -> Result<f64> {
        let v = self.f(x);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::ModelViolation(format!(
                "relaxation rate f(x) = {v} at x = {x:?} is not strictly positive"
            )))
        }
    }

    /// Drift of the limiting SDE:
    /// `b + g sigma + (h^2/2) (sigma . grad) sigma - (h^2/(2f)) (sigma . grad f) sigma`.
    pub fn limiting_drift(&self, x: &[f64]) -> Result<Slow> {
        let derivs = self.derivatives()?;
        let f = self.f_checked(x)?;
        let g = self.g(x);
        let h = self.h(x);
        let sigma = self.sigma(x);
        let b = self.b(x);
        let jac = (derivs.dsigma)(x);
        let df = (derivs.df)(x);
        let h2 = h * h;
        // sigma . grad f
        let sdf: f64 = sigma.iter().zip(df.iter()).map(|(s, d)| s * d).sum();
        let mut out: Slow = smallvec![0.0; self.d];
        for i in 0..self.d {
            // (sigma . grad) sigma_i
            let advect: f64 = (0..self.d).map(|j| sigma[j] * jac[i * self.d + j]).sum();
            out[i] = b[i] + g * sigma[i] + 0.5 * h2 * advect - 0.5 * h2 / f * sdf * sigma[i];
        }
        Ok(out)
    }
}

/// A registered model of either family.
#[derive(Clone)]
pub enum Model {
    Averaging(Arc<AveragingModel>),
    Diffusion(Arc<DiffusionModel>),
}

impl Model {
    pub fn d(&self) -> usize {
        match self {
            Model::Averaging(m) => m.d,
            Model::Diffusion(m) => m.d,
        }
    }

    /// Number of slow Wiener components consumed per step (the `Gamma` draw).
    pub fn noise_dim(&self) -> usize {
        match self {
            Model::Averaging(m) => m.noise_dim,
            Model::Diffusion(_) => 1,
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            Model::Averaging(m) => m.domain,
            Model::Diffusion(m) => m.domain,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Model::Averaging(_) => "averaging",
            Model::Diffusion(_) => "diffusion",
        }
    }
}

impl fmt::Debug for Model {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(fm, "Model({})", self.family())
    }
}

/// A named model together with its initial condition.
#[derive(Clone, Debug)]
pub struct ModelEntry {
    pub name: String,
    pub model: Model,
    pub x0: Slow,
    pub m0: f64,
}

const TWO_PI: f64 = std::f64::consts::TAU;

fn avg_ex() -> ModelEntry {
    let model = AveragingModel::new(
        1,
        1,
        Domain::Torus,
        Box::new(|x: &[f64], m: f64| smallvec![(TWO_PI * x[0]).cos() * (-0.5 * m * m).exp()]),
        None,
        Box::new(|_| 1.0),
    );
    ModelEntry {
        name: "avg-ex".into(),
        model: Model::Averaging(Arc::new(model)),
        x0: smallvec![1.0],
        m0: 0.0,
    }
}

fn diff_ex1() -> ModelEntry {
    let model = DiffusionModel::new(
        1,
        Domain::Torus,
        Box::new(|_: &[f64]| smallvec![0.0]),
        Box::new(|x: &[f64]| smallvec![(TWO_PI * x[0]).cos()]),
        Box::new(|_| 1.0),
        Box::new(|_| 0.0),
        Box::new(|_| 1.0),
        Some(DiffusionDerivatives {
            dsigma: Box::new(|x: &[f64]| smallvec![-TWO_PI * (TWO_PI * x[0]).sin()]),
            df: Box::new(|_: &[f64]| smallvec![0.0]),
            d2sigma: Some(Box::new(|x: &[f64]| {
                -TWO_PI * TWO_PI * (TWO_PI * x[0]).cos()
            })),
            d2f: Some(Box::new(|_| 0.0)),
        }),
    )
    .expect("builtin model is valid");
    ModelEntry {
        name: "diff-ex1".into(),
        model: Model::Diffusion(Arc::new(model)),
        x0: smallvec![1.0],
        m0: 0.0,
    }
}

fn diff_ex1_line() -> ModelEntry {
    let model = DiffusionModel::new(
        1,
        Domain::Line,
        Box::new(|_: &[f64]| smallvec![0.0]),
        Box::new(|x: &[f64]| smallvec![x[0]]),
        Box::new(|_| 1.0),
        Box::new(|_| 0.0),
        Box::new(|_| 1.0),
        Some(DiffusionDerivatives {
            dsigma: Box::new(|_: &[f64]| smallvec![1.0]),
            df: Box::new(|_: &[f64]| smallvec![0.0]),
            d2sigma: Some(Box::new(|_| 0.0)),
            d2f: Some(Box::new(|_| 0.0)),
        }),
    )
    .expect("builtin model is valid");
    ModelEntry {
        name: "diff-ex1-line".into(),
        model: Model::Diffusion(Arc::new(model)),
        x0: smallvec![1.0],
        m0: 0.0,
    }
}

fn diff_ex2() -> ModelEntry {
    let model = DiffusionModel::new(
        1,
        Domain::Torus,
        Box::new(|_: &[f64]| smallvec![0.0]),
        Box::new(|_: &[f64]| smallvec![1.0]),
        Box::new(|x: &[f64]| (TWO_PI * x[0]).cos() + 1.5),
        Box::new(|_| 0.0),
        Box::new(|_| 1.0),
        Some(DiffusionDerivatives {
            dsigma: Box::new(|_: &[f64]| smallvec![0.0]),
            df: Box::new(|x: &[f64]| smallvec![-TWO_PI * (TWO_PI * x[0]).sin()]),
            d2sigma: Some(Box::new(|_| 0.0)),
            d2f: Some(Box::new(|x: &[f64]| {
                -TWO_PI * TWO_PI * (TWO_PI * x[0]).cos()
            })),
        }),
    )
    .expect("builtin model is valid");
    ModelEntry {
        name: "diff-ex2".into(),
        model: Model::Diffusion(Arc::new(model)),
        x0: smallvec![1.0],
        m0: 0.0,
    }
}

/// All built-in models.
pub fn registry() -> Vec<ModelEntry> {
    vec![avg_ex(), diff_ex1(), diff_ex1_line(), diff_ex2()]
}

/// Looks up a built-in model by name.
pub fn lookup(name: &str) -> Result<ModelEntry> {
    match name {
        "avg-ex" => Ok(avg_ex()),
        "diff-ex1" => Ok(diff_ex1()),
        "diff-ex1-line" => Ok(diff_ex1_line()),
        "diff-ex2" => Ok(diff_ex2()),
        other => Err(Error::UnknownModel(other.into())),
    }
}
