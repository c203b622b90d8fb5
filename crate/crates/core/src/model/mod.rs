//! Time-varying model data `(A_t, B_t, Q_t, R_t)`, the providers that supply
//! it, and the uniform observability/controllability checks.

mod io;
mod unicycle;

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use io::{ModelFile, ModelKind, StepRecord};
pub use unicycle::{unicycle_model, unicycle_nominal, UnicycleNominal, UnicycleParams};

use crate::error::{Error, Result};
use crate::linalg::{self, RCOND_MIN};
use crate::spd;

/// One step of model data. `Q^{1/2}` and `R^{1/2}` are computed once on
/// construction since every lifted block and every simulated step needs them.
#[derive(Clone, PartialEq)]
pub struct StepData {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    q_sqrt: DMatrix<f64>,
    r_sqrt: DMatrix<f64>,
}

impl StepData {
    /// Validates shapes, `Q = Qᵀ ⪰ 0` and `R = Rᵀ ≻ 0`. Invertibility of `A`
    /// is a hypothesis checked by [`check_assumptions`], not a construction
    /// invariant, so singular `A` is accepted here.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput(
                "model dimensions must be positive".into(),
            ));
        }
        linalg::expect_shape(&a, n, n, "A", None)?;
        linalg::expect_shape(&b, n, m, "B", None)?;
        linalg::expect_shape(&q, n, n, "Q", None)?;
        linalg::expect_shape(&r, m, m, "R", None)?;
        let q = spd::symmetric_checked(&q, "Q")?;
        let r = spd::symmetric_checked(&r, "R")?;
        let q_sqrt = spd::spd_sqrt(&q)?;
        if !spd::is_strictly_pd(&r) {
            return Err(Error::NotPositiveDefinite {
                what: "R".into(),
                min_eig: spd::lambda_min(&r),
            });
        }
        let r_sqrt = spd::spd_sqrt(&r)?;
        Ok(StepData {
            a,
            b,
            q,
            r,
            q_sqrt,
            r_sqrt,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn q_sqrt(&self) -> &DMatrix<f64> {
        &self.q_sqrt
    }

    pub fn r_sqrt(&self) -> &DMatrix<f64> {
        &self.r_sqrt
    }

    /// `(n, m)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.a.nrows(), self.b.ncols())
    }
}

impl fmt::Debug for StepData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StepData")
            .field("A", &linalg::to_rows(&self.a))
            .field("B", &linalg::to_rows(&self.b))
            .field("Q", &linalg::to_rows(&self.q))
            .field("R", &linalg::to_rows(&self.r))
            .finish()
    }
}

impl Serialize for StepData {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StepRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StepData {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        StepRecord::deserialize(d)?
            .into_step()
            .map_err(serde::de::Error::custom)
    }
}

/// Anything that can hand out model data by absolute time index.
pub trait ModelSource: Sync {
    /// `(n, m)`.
    fn dims(&self) -> (usize, usize);

    fn step(&self, t: usize) -> Result<Cow<'_, StepData>>;

    /// Period `N` when `step(t) = step(t mod N)`.
    fn period(&self) -> Option<usize> {
        None
    }

    /// One past the last available index, for finite sources.
    fn end(&self) -> Option<usize> {
        None
    }
}

type StepFn = dyn Fn(usize) -> StepData + Send + Sync;

/// Supplier of `(A_t, B_t, Q_t, R_t)` for `t ∈ ℕ₀`.
#[derive(Clone)]
pub enum ModelProvider {
    /// Finite sequence; indices past the end are unavailable.
    Explicit(Vec<StepData>),
    /// `step(t) = steps[t mod N]`.
    Periodic(Vec<StepData>),
    /// Deterministic callback of `t`.
    Generator {
        dims: (usize, usize),
        f: Arc<StepFn>,
    },
}

impl fmt::Debug for ModelProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelProvider::Explicit(s) => write!(f, "Explicit({} steps)", s.len()),
            ModelProvider::Periodic(s) => write!(f, "Periodic(N={})", s.len()),
            ModelProvider::Generator { dims, .. } => {
                write!(f, "Generator(n={}, m={})", dims.0, dims.1)
            }
        }
    }
}

fn common_dims(steps: &[StepData]) -> Result<(usize, usize)> {
    let first = steps
        .first()
        .ok_or_else(|| Error::InvalidInput("model needs at least one step".into()))?
        .dims();
    for (t, s) in steps.iter().enumerate() {
        if s.dims() != first {
            return Err(Error::dims(
                "step data",
                Some(t),
                format!("n={}, m={}", first.0, first.1),
                format!("n={}, m={}", s.dims().0, s.dims().1),
            ));
        }
    }
    Ok(first)
}

impl ModelProvider {
    pub fn explicit(steps: Vec<StepData>) -> Result<Self> {
        common_dims(&steps)?;
        Ok(ModelProvider::Explicit(steps))
    }

    pub fn periodic(steps: Vec<StepData>) -> Result<Self> {
        common_dims(&steps)?;
        Ok(ModelProvider::Periodic(steps))
    }

    /// Single step repeated forever.
    pub fn stationary(step: StepData) -> Self {
        ModelProvider::Periodic(vec![step])
    }

    pub fn generator(
        n: usize,
        m: usize,
        f: impl Fn(usize) -> StepData + Send + Sync + 'static,
    ) -> Self {
        ModelProvider::Generator {
            dims: (n, m),
            f: Arc::new(f),
        }
    }

    /// Stored steps for explicit and periodic providers.
    pub fn steps(&self) -> Option<&[StepData]> {
        match self {
            ModelProvider::Explicit(s) | ModelProvider::Periodic(s) => Some(s),
            ModelProvider::Generator { .. } => None,
        }
    }
}

impl ModelSource for ModelProvider {
    fn dims(&self) -> (usize, usize) {
        match self {
            ModelProvider::Explicit(s) | ModelProvider::Periodic(s) => s[0].dims(),
            ModelProvider::Generator { dims, .. } => *dims,
        }
    }

    fn step(&self, t: usize) -> Result<Cow<'_, StepData>> {
        match self {
            ModelProvider::Explicit(s) => {
                s.get(t)
                    .map(Cow::Borrowed)
                    .ok_or_else(|| Error::Unavailable {
                        t,
                        reason: format!("explicit model has {} steps", s.len()),
                    })
            }
            ModelProvider::Periodic(s) => Ok(Cow::Borrowed(&s[t % s.len()])),
            ModelProvider::Generator { dims, f } => {
                let step = f(t);
                if step.dims() != *dims {
                    return Err(Error::dims(
                        "generated step",
                        Some(t),
                        format!("n={}, m={}", dims.0, dims.1),
                        format!("n={}, m={}", step.dims().0, step.dims().1),
                    ));
                }
                Ok(Cow::Owned(step))
            }
        }
    }

    fn period(&self) -> Option<usize> {
        match self {
            ModelProvider::Periodic(s) => Some(s.len()),
            _ => None,
        }
    }

    fn end(&self) -> Option<usize> {
        match self {
            ModelProvider::Explicit(s) => Some(s.len()),
            _ => None,
        }
    }
}

impl<S: ModelSource + ?Sized> ModelSource for &S {
    fn dims(&self) -> (usize, usize) {
        (**self).dims()
    }
    fn step(&self, t: usize) -> Result<Cow<'_, StepData>> {
        (**self).step(t)
    }
    fn period(&self) -> Option<usize> {
        (**self).period()
    }
    fn end(&self) -> Option<usize> {
        (**self).end()
    }
}

/// Range of base times `[start, start + len)` over which a sup/inf over `t`
/// is evaluated. `exact` is set only when the window covers a full period of
/// a periodic model, in which case the extremes are exact rather than a
/// finite-window estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub len: usize,
    pub exact: bool,
}

impl Window {
    pub fn finite(start: usize, len: usize) -> Self {
        Window {
            start,
            len,
            exact: false,
        }
    }

    /// Use the requested window, or one period for periodic sources. Sources
    /// with neither get an error because the check would be meaningless.
    pub fn resolve(source: &impl ModelSource, requested: Option<Window>) -> Result<Window> {
        match (requested, source.period()) {
            (Some(w), Some(p)) => Ok(Window {
                exact: w.len >= p,
                ..w
            }),
            (Some(w), None) => Ok(Window { exact: false, ..w }),
            (None, Some(p)) => Ok(Window {
                start: 0,
                len: p,
                exact: true,
            }),
            (None, None) => Err(Error::InvalidInput(
                "a finite window is required for non-periodic models".into(),
            )),
        }
    }

    pub fn iter(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// `Φ_{s,t} = A_{s−1} ⋯ A_t`, with `Φ_{t,t} = I`.
pub fn transition(source: &impl ModelSource, t: usize, s: usize) -> Result<DMatrix<f64>> {
    if s < t {
        return Err(Error::Precondition(format!(
            "transition needs s ≥ t (got t={t}, s={s})"
        )));
    }
    let n = source.dims().0;
    let mut phi = DMatrix::identity(n, n);
    for j in t..s {
        let step = source.step(j)?;
        linalg::expect_shape(step.a(), n, n, "A", Some(j))?;
        phi = step.a() * phi;
    }
    Ok(phi)
}

/// Observability and controllability Gramians over `[t, t+d)`.
pub fn gramians(
    source: &impl ModelSource,
    t: usize,
    d: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if d == 0 {
        return Err(Error::Precondition("gramians need d ≥ 1".into()));
    }
    let n = source.dims().0;
    let mut obs = DMatrix::zeros(n, n);
    let mut ctr = DMatrix::zeros(n, n);
    let mut phi = DMatrix::identity(n, n);
    for s in t..t + d {
        let step = source.step(s)?;
        obs += phi.transpose() * step.q() * &phi;
        let pb = &phi * step.b();
        ctr += &pb * pb.transpose();
        phi = step.a() * phi;
    }
    Ok((linalg::symmetrize(&obs), linalg::symmetrize(&ctr)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionTolerances {
    /// Minimum reciprocal condition number for `A_t` and `R_t`.
    pub rcond_min: f64,
    /// Gramian minimum eigenvalues must exceed this.
    pub eps_gram: f64,
}

impl Default for AssumptionTolerances {
    fn default() -> Self {
        AssumptionTolerances {
            rcond_min: RCOND_MIN,
            eps_gram: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum AssumptionFailure {
    SingularA { t: usize, rcond: f64 },
    SingularR { t: usize, rcond: f64 },
    Observability { t: usize, min_eig: f64 },
    Controllability { t: usize, min_eig: f64 },
}

impl fmt::Display for AssumptionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssumptionFailure::SingularA { t, rcond } => {
                write!(f, "A_{t} singular (rcond {rcond:.3e})")
            }
            AssumptionFailure::SingularR { t, rcond } => {
                write!(f, "R_{t} singular (rcond {rcond:.3e})")
            }
            AssumptionFailure::Observability { t, min_eig } => {
                write!(
                    f,
                    "observability Gramian at t={t} has min eigenvalue {min_eig:.3e}"
                )
            }
            AssumptionFailure::Controllability { t, min_eig } => {
                write!(
                    f,
                    "controllability Gramian at t={t} has min eigenvalue {min_eig:.3e}"
                )
            }
        }
    }
}

/// Outcome of the bounded-data and uniform observability/controllability checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramianReport {
    pub d: usize,
    pub c_obs: f64,
    pub c_ctr: f64,
    pub window: Window,
    pub failures: Vec<AssumptionFailure>,
    pub pass: bool,
}

/// Check invertibility of `A_t`, `R_t` and positivity of both Gramians for
/// every `t` in the window. Gramians at `t` reach `d − 1` steps past the window.
pub fn check_assumptions(
    source: &impl ModelSource,
    d: usize,
    window: Window,
    tol: &AssumptionTolerances,
) -> Result<GramianReport> {
    if d == 0 {
        return Err(Error::Precondition("check_assumptions needs d ≥ 1".into()));
    }
    let mut failures = Vec::new();
    let mut c_obs = f64::INFINITY;
    let mut c_ctr = f64::INFINITY;
    for t in window.iter() {
        let step = source.step(t)?;
        let rc_a = linalg::rcond(step.a());
        if !(rc_a >= tol.rcond_min) {
            failures.push(AssumptionFailure::SingularA { t, rcond: rc_a });
        }
        let rc_r = linalg::rcond(step.r());
        if !(rc_r >= tol.rcond_min) {
            failures.push(AssumptionFailure::SingularR { t, rcond: rc_r });
        }
        let (obs, ctr) = gramians(source, t, d)?;
        let lo_obs = spd::lambda_min(&obs);
        let lo_ctr = spd::lambda_min(&ctr);
        if !(lo_obs > tol.eps_gram) {
            failures.push(AssumptionFailure::Observability { t, min_eig: lo_obs });
        }
        if !(lo_ctr > tol.eps_gram) {
            failures.push(AssumptionFailure::Controllability { t, min_eig: lo_ctr });
        }
        c_obs = c_obs.min(lo_obs);
        c_ctr = c_ctr.min(lo_ctr);
    }
    Ok(GramianReport {
        d,
        c_obs,
        c_ctr,
        window,
        pass: failures.is_empty(),
        failures,
    })
}
