//! Closed-loop simulation, the performance functional `J_α`, finite-horizon
//! gain measurement and disturbance ensembles.
//!
//! Disturbances enter the model with an identity input matrix. Where the
//! physical disturbance enters scaled (as `h·w` for the unicycle), gains in
//! the physical units are the model-unit gains times that scale.

mod operator;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use operator::{empirical_gain, ClosedLoopOperator, GainEstimate, GainMethod, PowerOptions};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelSource;
use crate::riccati::dissipation_terms;
use crate::spd::{riemannian_distance, SpdMatrix};

/// Trajectory from `x_0 = 0` under `u_t = −K_t x_t`.
///
/// `z_t = [Q_t^{1/2} x_t; R_t^{1/2} u_t]` for `t < N`; the terminal output
/// `Q_N^{1/2} x_N` is kept separately. Partial sums run over `s ≤ t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub horizon: usize,
    pub alpha: f64,
    #[serde(with = "linalg::vector_seq")]
    pub x: Vec<DVector<f64>>,
    #[serde(with = "linalg::vector_seq")]
    pub u: Vec<DVector<f64>>,
    #[serde(with = "linalg::vector_seq")]
    pub w: Vec<DVector<f64>>,
    #[serde(with = "linalg::vector_seq")]
    pub z: Vec<DVector<f64>>,
    #[serde(with = "linalg::vector")]
    pub z_terminal: DVector<f64>,
    pub zz: Vec<f64>,
    pub ww: Vec<f64>,
    /// Running `J_α = Σ zᵀz − α² Σ wᵀw`.
    pub j: Vec<f64>,
}

impl ClosedLoopTrace {
    pub fn j_alpha(&self) -> f64 {
        self.j.last().copied().unwrap_or(0.0)
    }

    pub fn max_partial_j(&self) -> f64 {
        self.j.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn partial_sums_nonpositive(&self) -> bool {
        self.j.iter().all(|j| *j <= 0.0)
    }
}

fn check_gains(source: &impl ModelSource, gains: &[DMatrix<f64>], horizon: usize) -> Result<()> {
    if gains.len() < horizon {
        return Err(Error::InvalidInput(format!(
            "gains cover {} steps, need {horizon}",
            gains.len()
        )));
    }
    let (n, m) = source.dims();
    for (t, k) in gains.iter().enumerate().take(horizon) {
        linalg::expect_shape(k, m, n, "K", Some(t))?;
    }
    Ok(())
}

/// Simulate `x_{t+1} = A_t x_t + B_t u_t + w_t` for `N = w.len()` steps.
pub fn simulate(
    source: &impl ModelSource,
    gains: &[DMatrix<f64>],
    w: &[DVector<f64>],
    alpha: f64,
) -> Result<ClosedLoopTrace> {
    let horizon = w.len();
    check_gains(source, gains, horizon)?;
    let (n, _) = source.dims();
    let mut tr = ClosedLoopTrace {
        horizon,
        alpha,
        x: Vec::with_capacity(horizon + 1),
        u: Vec::with_capacity(horizon),
        w: w.to_vec(),
        z: Vec::with_capacity(horizon),
        z_terminal: DVector::zeros(n),
        zz: Vec::with_capacity(horizon),
        ww: Vec::with_capacity(horizon),
        j: Vec::with_capacity(horizon),
    };
    let mut x = DVector::zeros(n);
    let (mut zz, mut ww) = (0.0, 0.0);
    for (t, wt) in w.iter().enumerate() {
        if wt.len() != n {
            return Err(Error::dims("w", Some(t), n, wt.len()));
        }
        let step = source.step(t)?;
        let u = -(&gains[t] * &x);
        let zx = step.q_sqrt() * &x;
        let zu = step.r_sqrt() * &u;
        let z = DVector::from_iterator(zx.len() + zu.len(), zx.iter().chain(zu.iter()).copied());
        zz += z.norm_squared();
        ww += wt.norm_squared();
        let next = step.a() * &x + step.b() * &u + wt;
        tr.x.push(std::mem::replace(&mut x, next));
        tr.u.push(u);
        tr.z.push(z);
        tr.zz.push(zz);
        tr.ww.push(ww);
        tr.j.push(zz - alpha * alpha * ww);
    }
    tr.z_terminal = source.step(horizon)?.q_sqrt() * &x;
    tr.x.push(x);
    Ok(tr)
}

/// Simulate every disturbance of an ensemble concurrently.
pub fn simulate_many(
    source: &impl ModelSource,
    gains: &[DMatrix<f64>],
    ensemble: &[Vec<DVector<f64>>],
    alpha: f64,
) -> Result<Vec<ClosedLoopTrace>> {
    ensemble
        .par_iter()
        .map(|w| simulate(source, gains, w, alpha))
        .collect()
}

/// Seeded unit-energy disturbances `w_t ∝ r^t ξ_t`, `ξ_t` standard normal.
pub fn disturbance_ensemble(
    seed: u64,
    count: usize,
    horizon: usize,
    n: usize,
    taper: f64,
) -> Vec<Vec<DVector<f64>>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut w: Vec<DVector<f64>> = (0..horizon)
                .map(|t| {
                    let scale = taper.powi(t as i32);
                    DVector::from_fn(n, |_, _| {
                        let xi: f64 = StandardNormal.sample(&mut rng);
                        scale * xi
                    })
                })
                .collect();
            let energy: f64 = w.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
            if energy > 0.0 {
                w.iter_mut().for_each(|v| *v /= energy);
            }
            w
        })
        .collect()
}

/// Per-step terms of `zᵀz − α²wᵀw + x⁺ᵀXx⁺ = xᵀR_α(X)x + u-term + w-term`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationRow {
    pub t: usize,
    pub supply: f64,
    pub value: f64,
    pub u_term: f64,
    pub w_term: f64,
    pub relative_residual: f64,
    /// `x_tᵀX_t x_t − x_tᵀR_α(X_{t+1})x_t` when `X_t` is known; telescoping
    /// the identity needs it nonnegative.
    pub storage_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationReport {
    pub alpha: f64,
    pub rows: Vec<DissipationRow>,
    pub max_relative_residual: f64,
    pub max_partial_j: f64,
    pub partial_sums_nonpositive: bool,
    /// Steps where the identity could not be evaluated or a sign condition
    /// failed. Reported, never raised.
    pub flags: Vec<String>,
}

impl DissipationReport {
    pub fn residuals_within(&self, tol: f64) -> bool {
        self.max_relative_residual <= tol
    }
}

/// Evaluate the completion-of-squares identity along a trace. `xs[t]` is the
/// matrix used as `X_{t+1}` at step `t`.
pub fn dissipation_check(
    source: &impl ModelSource,
    trace: &ClosedLoopTrace,
    xs: &[SpdMatrix],
    alpha: f64,
) -> DissipationReport {
    let mut rows = Vec::with_capacity(trace.horizon);
    let mut flags = Vec::new();
    if xs.len() < trace.horizon {
        flags.push(format!(
            "matrices cover {} steps, trace has {}",
            xs.len(),
            trace.horizon
        ));
    }
    for t in 0..trace.horizon.min(xs.len()) {
        let step = match source.step(t) {
            Ok(s) => s,
            Err(e) => {
                flags.push(format!("t={t}: {e}"));
                continue;
            }
        };
        let x = &trace.x[t];
        match dissipation_terms(&step, alpha, &xs[t], x, &trace.u[t], &trace.w[t]) {
            Ok(d) => {
                let storage_gap = (t > 0).then(|| x.dot(&(xs[t - 1].matrix() * x)) - d.value);
                if let Some(g) = storage_gap {
                    let scale = d.value.abs().max(1e-300);
                    if g < -1e-8 * scale {
                        flags.push(format!("t={t}: storage decrease fails (gap {g:.3e})"));
                    }
                }
                rows.push(DissipationRow {
                    t,
                    supply: d.supply,
                    value: d.value,
                    u_term: d.u_term,
                    w_term: d.w_term,
                    relative_residual: d.relative_residual(),
                    storage_gap,
                });
            }
            Err(e) => flags.push(format!("t={t}: {e}")),
        }
    }
    let max_partial_j = trace.max_partial_j();
    let partial_sums_nonpositive = trace.partial_sums_nonpositive();
    if !partial_sums_nonpositive {
        flags.push(format!("partial sums of J_α reach {max_partial_j:.3e} > 0"));
    }
    let max_relative_residual = rows.iter().map(|r| r.relative_residual).fold(0.0, f64::max);
    DissipationReport {
        alpha,
        rows,
        max_relative_residual,
        max_partial_j,
        partial_sums_nonpositive,
        flags,
    }
}

/// Gain measurement for export: `{empirical, certified, units, N, iterations, converged}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub empirical: f64,
    pub certified: f64,
    pub units: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl GainReport {
    /// Report in units where the disturbance enters as `scale·w`.
    pub fn new(
        est: &GainEstimate,
        certified_model_units: f64,
        scale: f64,
        units: impl Into<String>,
    ) -> Self {
        GainReport {
            empirical: est.gain * scale,
            certified: certified_model_units * scale,
            units: units.into(),
            n: est.horizon,
            iterations: est.iterations,
            converged: est.converged,
        }
    }

    pub fn within_certified(&self, tol: f64) -> bool {
        self.empirical <= self.certified + tol
    }
}

/// Per-`t` distances `δ(X_t, P_t)` and their maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub values: Vec<f64>,
    pub max: f64,
    pub argmax: usize,
}

pub fn measure_delta(xs: &[SpdMatrix], ps: &[SpdMatrix]) -> Result<DeltaReport> {
    if xs.len() != ps.len() {
        return Err(Error::dims(
            "measure_delta sequences",
            None,
            ps.len(),
            xs.len(),
        ));
    }
    let values = xs
        .iter()
        .zip(ps)
        .map(|(x, p)| riemannian_distance(x, p))
        .collect::<Result<Vec<_>>>()?;
    let (argmax, max) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    Ok(DeltaReport {
        values,
        max,
        argmax,
    })
}
