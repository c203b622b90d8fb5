//! Finite-preview approximant `X_{t+1}`, the receding-horizon gain schedule
//! and the streaming controller.
//!
//! Block `(k|t+1)` covers `[t+1+dk, t+1+d(k+1))`. `X_{t+1}` applies the
//! lifted Riccati operators of blocks `T−1, …, 0` to the terminal matrix of
//! block `T`, so it reads model data on `[t+1, t+1+d(T+1))`.

mod streaming;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use streaming::{
    ControllerConfig, ControllerSnapshot, ControllerState, PreviewBuffer, StreamingController,
};

use crate::error::{Error, Result};
use crate::lifting::{
    contraction_stats, lift_block, lifted_riccati, transform_block, BlockCache, TransformedBlock,
};
use crate::linalg;
use crate::model::ModelSource;
use crate::riccati::{self, RiccatiSolution};
use crate::spd::{riemannian_distance, SpdMatrix};

fn block(
    source: &impl ModelSource,
    cache: Option<&BlockCache>,
    t: usize,
    k: usize,
    d: usize,
    gamma: f64,
) -> Result<std::sync::Arc<TransformedBlock>> {
    match cache {
        Some(c) => c.block(source, t, k, d, gamma),
        None => Ok(std::sync::Arc::new(transform_block(
            lift_block(source, t, k, d)?,
            gamma,
        )?)),
    }
    .map_err(|e| e.at_block(t, k))
}

fn check_preview(d: usize, gamma: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidInput("d must be at least 1".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "gamma must be positive and finite (got {gamma})"
        )));
    }
    Ok(())
}

/// `X̃_{t+1} = Q̃ + Ãᵀ(B̃R̃⁻¹B̃ᵀ)⁻¹Ã` of block `(T|t+1)`.
pub fn terminal_matrix(
    source: &impl ModelSource,
    t: usize,
    d: usize,
    horizon: usize,
    gamma: f64,
) -> Result<SpdMatrix> {
    check_preview(d, gamma)?;
    block(source, None, t + 1, horizon, d, gamma)?.terminal()
}

/// `X_{t+1}` together with the product of the per-block contraction factors
/// `ρ̃_{k|t+1}`, `k < T`, when requested.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Approximant {
    pub t: usize,
    pub x: SpdMatrix,
    pub rho_product: Option<f64>,
}

/// `X_{t+1} = R̃_{0|t+1} ∘ ⋯ ∘ R̃_{T−1|t+1}(X̃_{t+1})`, composed from
/// `k = T−1` down to `0`. Every intermediate iterate is validated PD.
pub fn approximant(
    source: &impl ModelSource,
    t: usize,
    d: usize,
    horizon: usize,
    gamma: f64,
) -> Result<SpdMatrix> {
    approximant_with(source, None, t, d, horizon, gamma, false).map(|a| a.x)
}

pub fn approximant_with(
    source: &impl ModelSource,
    cache: Option<&BlockCache>,
    t: usize,
    d: usize,
    horizon: usize,
    gamma: f64,
    with_rho: bool,
) -> Result<Approximant> {
    check_preview(d, gamma)?;
    let mut x = block(source, cache, t + 1, horizon, d, gamma)?.terminal()?;
    let mut rho_product = with_rho.then_some(1.0);
    for k in (0..horizon).rev() {
        let tb = block(source, cache, t + 1, k, d, gamma)?;
        x = lifted_riccati(&tb, &x).map_err(|e| e.at_block(t + 1, k))?;
        if let Some(r) = rho_product.as_mut() {
            let stats = match cache {
                Some(c) => c.stats(source, t + 1, k, d, gamma)?,
                None => contraction_stats(&tb)?,
            };
            *r *= stats.rho;
        }
    }
    Ok(Approximant { t, x, rho_product })
}

/// Schedule parameters. `t_chosen` is the certificate's sufficient horizon;
/// a smaller `horizon` marks the schedule advisory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub d: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub beta: f64,
    pub t_chosen: Option<usize>,
    /// Required margin `ε` in `X_{t+1} ⪯ ((γ+β)² − ε)I`.
    pub epsilon: f64,
}

impl ScheduleConfig {
    pub fn new(d: usize, horizon: usize, gamma: f64, beta: f64) -> Self {
        ScheduleConfig {
            d,
            horizon,
            gamma,
            beta,
            t_chosen: None,
            epsilon: 0.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.gamma + self.beta
    }

    pub fn advisory(&self) -> bool {
        self.t_chosen.is_none_or(|tc| self.horizon < tc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub t: usize,
    #[serde(with = "linalg::rows")]
    pub gain: DMatrix<f64>,
    pub lambda_min_x: f64,
    pub lambda_max_x: f64,
    /// `(γ+β)² − λ_max(X_{t+1})`.
    pub margin: f64,
    /// `δ(X_{t+1}, P_{t+1})` when a baseline is supplied.
    pub delta_to_baseline: Option<f64>,
    /// Whether `P_{t+1} ≺ X_{t+1}` holds strictly; `None` without a baseline.
    pub dominates_baseline: Option<bool>,
    pub rho_product: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainSchedule {
    pub config: ScheduleConfig,
    pub advisory: bool,
    pub rows: Vec<ScheduleRow>,
    /// `log(η·λ̲ + 1)` with `λ̲ = inf_t λ_min(P_t)`, when a baseline is supplied.
    pub delta_threshold: Option<f64>,
    pub max_delta: Option<f64>,
}

impl GainSchedule {
    pub fn gains(&self) -> Vec<DMatrix<f64>> {
        self.rows.iter().map(|r| r.gain.clone()).collect()
    }

    /// Theorem-4 sufficient condition on every row, when measurable.
    pub fn sufficient_condition_holds(&self) -> Option<bool> {
        Some(self.max_delta? <= self.delta_threshold?)
    }
}

/// Gain `K_{γ+β,t}(X_{t+1})` and its diagnostics at one `t`.
pub fn schedule_row(
    source: &impl ModelSource,
    cache: Option<&BlockCache>,
    cfg: &ScheduleConfig,
    t: usize,
    baseline: Option<&RiccatiSolution>,
) -> Result<ScheduleRow> {
    let ap = approximant_with(
        source,
        cache,
        t,
        cfg.d,
        cfg.horizon,
        cfg.gamma,
        baseline.is_some(),
    )?;
    row_from_approximant(&*source.step(t)?, cfg, ap, baseline)
}

pub(crate) fn row_from_approximant(
    step: &crate::model::StepData,
    cfg: &ScheduleConfig,
    ap: Approximant,
    baseline: Option<&RiccatiSolution>,
) -> Result<ScheduleRow> {
    let t = ap.t;
    let alpha = cfg.alpha();
    let margin = alpha * alpha - ap.x.eig_max();
    if !(margin > cfg.epsilon) {
        return Err(Error::Infeasible(format!(
            "at t={t}: X_{{t+1}} ≺ (γ+β)²I fails (margin {margin:.6e} ≤ ε={:.3e}); T={} may be below the sufficient horizon",
            cfg.epsilon, cfg.horizon
        )));
    }
    let gain = riccati::feedback_gain(step, alpha, &ap.x)
        .map_err(|e| Error::Infeasible(format!("gain at t={t}: {e}")))?;
    let (delta, dominates) = match baseline {
        Some(b) => {
            let p = b.at(t + 1);
            (
                Some(riemannian_distance(&ap.x, p)?),
                Some(crate::spd::ordering_lt(p.matrix(), ap.x.matrix(), 0.0)),
            )
        }
        None => (None, None),
    };
    Ok(ScheduleRow {
        t,
        gain,
        lambda_min_x: ap.x.eig_min(),
        lambda_max_x: ap.x.eig_max(),
        margin,
        delta_to_baseline: delta,
        dominates_baseline: dominates,
        rho_product: ap.rho_product,
    })
}

/// Gains over `range`, computed in parallel over `t` and returned in order.
pub fn gain_schedule(
    source: &impl ModelSource,
    range: std::ops::Range<usize>,
    cfg: &ScheduleConfig,
    baseline: Option<&RiccatiSolution>,
    cache: Option<&BlockCache>,
) -> Result<GainSchedule> {
    check_preview(cfg.d, cfg.gamma)?;
    if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "beta must be finite and ≥ 0 (got {})",
            cfg.beta
        )));
    }
    let rows = range
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|t| schedule_row(source, cache, cfg, t, baseline))
        .collect::<Result<Vec<_>>>()?;
    let delta_threshold =
        baseline.map(|b| (riccati::eta(cfg.gamma, cfg.beta) * b.lambda_min_inf).ln_1p());
    let max_delta = baseline.map(|_| {
        rows.iter()
            .filter_map(|r| r.delta_to_baseline)
            .fold(0.0, f64::max)
    });
    Ok(GainSchedule {
        config: *cfg,
        advisory: cfg.advisory(),
        rows,
        delta_threshold,
        max_delta,
    })
}

/// Infinite-preview gains `K_{γ,t}(P_{t+1})` from a periodic baseline.
pub fn baseline_gains(
    source: &impl ModelSource,
    sol: &RiccatiSolution,
    range: std::ops::Range<usize>,
) -> Result<Vec<DMatrix<f64>>> {
    range
        .map(|t| riccati::feedback_gain(&*source.step(t)?, sol.gamma, sol.at(t + 1)))
        .collect()
}
