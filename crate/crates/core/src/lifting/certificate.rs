//! Preview-horizon certificate: the constants `κ̲, δ̄, ρ̄, η` and the
//! sufficient number of lifted preview blocks `T̄`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{contraction_stats, lift_block, transform_block, ContractionStats};
use crate::error::{Error, Result};
use crate::model::{ModelSource, Window};
use crate::riccati::eta;
use crate::spd::PD_REL_MARGIN;

/// Extreme values of the part-2 quantities on one block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockExtremes {
    /// Base time of the block.
    pub t: usize,
    /// Singular values of `R̃`.
    pub r_sv_min: f64,
    pub r_sv_max: f64,
    /// Eigenvalues of `B̃R̃⁻¹B̃ᵀ`.
    pub s_min: f64,
    pub s_max: f64,
    /// Eigenvalues of `Q̃`.
    pub q_min: f64,
    pub q_max: f64,
}

/// Uniform bounds over the window for conditions 2a (`R̃`), 2b (`B̃R̃⁻¹B̃ᵀ`)
/// and 2c (`Q̃`), with the base time attaining each lower extreme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Part2Report {
    pub pass: bool,
    pub r_sv_min: f64,
    pub r_sv_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub t_r_sv_min: usize,
    pub t_s_min: usize,
    pub t_q_min: usize,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreviewCertificate {
    pub d: usize,
    pub gamma: f64,
    pub beta: f64,
    pub n: usize,
    pub window: Window,
    /// `κ̲ = min_t λ_min(Q̃_{0|t})`.
    pub kappa_lo: f64,
    /// `δ̄ = √n · log(max_t λ_max(Q̃ + ÃᵀS⁻¹Ã) / λ_min(Q̃))`, ratio taken per block.
    pub delta_up: f64,
    /// `√n · log(max_t λ_max(Q̃ + ÃᵀS⁻¹Ã) / min_t λ_min(Q̃))`, extremes taken
    /// separately. Never smaller than `delta_up`; diagnostic only.
    pub delta_up_split: f64,
    /// `ρ̄ = max_t 1/(1 + ω̃_t)`.
    pub rho_up: f64,
    pub omega_min: f64,
    pub eta: f64,
    /// `α̲ = η·κ̲`.
    pub alpha_lo: f64,
    pub t_bar: f64,
    /// Smallest admissible integer `T > T̄`, at least 1.
    pub t_chosen: Option<usize>,
    /// `d(⌈T̄⌉ + 1)`, with `⌈T̄⌉` floored at zero.
    pub preview_steps: Option<usize>,
    /// `d(T_chosen + 1)`, the model data actually consumed per step.
    pub preview_steps_chosen: Option<usize>,
    pub t_delta_max: usize,
    pub t_rho_max: usize,
    pub part2: Part2Report,
    pub feasible: bool,
    pub reasons: Vec<String>,
}

impl PreviewCertificate {
    /// `ρ̄ᵀ·δ̄`, the bound on `δ(X_{t+1}, P_{t+1})` after `T` lifted blocks.
    pub fn bound_at(&self, t: usize) -> f64 {
        self.rho_up.powi(t as i32) * self.delta_up
    }

    /// `log(η·λ̲ + 1)`, the distance below which the finite-preview policy
    /// meets the `γ + β` bound.
    pub fn delta_threshold(&self, lambda_lo: f64) -> f64 {
        (self.eta * lambda_lo).ln_1p()
    }

    /// Same certificate for another `β`. `κ̲`, `δ̄` and `ρ̄` do not depend
    /// on `β`, so no block is re-evaluated.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "need finite beta ≥ 0 (got {beta})"
            )));
        }
        let mut c = self.clone();
        c.beta = beta;
        c.settle();
        Ok(c)
    }

    /// Fill the `β`-dependent fields, feasibility and reasons.
    fn settle(&mut self) {
        self.eta = eta(self.gamma, self.beta);
        self.alpha_lo = self.eta * self.kappa_lo;
        let mut reasons = Vec::new();
        if !self.window.exact {
            reasons.push(format!(
                "extremes taken over the finite window [{}, {}) only",
                self.window.start,
                self.window.start + self.window.len
            ));
        }
        let mut feasible = self.part2.pass;
        if !self.part2.pass {
            reasons.push(format!(
                "part 2 fails on {} block(s)",
                self.part2.failures.len()
            ));
        }
        if !(self.kappa_lo > 0.0) {
            feasible = false;
            reasons.push(format!("κ̲ = {:.3e} is not positive", self.kappa_lo));
        }
        if !(self.rho_up < 1.0) {
            feasible = false;
            reasons.push(format!("ρ̄ = {:.6} is not below 1", self.rho_up));
        }
        if !(self.eta > 0.0) {
            feasible = false;
            reasons.push("β must be positive for a finite preview bound".into());
        }
        self.t_bar = if feasible {
            preview_bound(self.rho_up, self.delta_up, self.alpha_lo)
        } else {
            f64::NAN
        };
        self.t_chosen = t_chosen(self.t_bar);
        self.preview_steps = self
            .t_bar
            .is_finite()
            .then(|| self.d * (self.t_bar.ceil().max(0.0) as usize + 1));
        self.preview_steps_chosen = self.t_chosen.map(|t| self.d * (t + 1));
        self.feasible = feasible;
        self.reasons = reasons;
    }
}

/// `T̄ = log(log(α̲ + 1)/δ̄) / log ρ̄`, natural logarithms.
pub fn preview_bound(rho_up: f64, delta_up: f64, alpha_lo: f64) -> f64 {
    (alpha_lo.ln_1p() / delta_up).ln() / rho_up.ln()
}

/// Smallest integer strictly above `T̄`, at least 1. `None` for non-finite `T̄`.
pub fn t_chosen(t_bar: f64) -> Option<usize> {
    if !t_bar.is_finite() {
        return None;
    }
    if t_bar < 0.0 {
        return Some(1);
    }
    Some((t_bar.floor() as usize + 1).max(1))
}

struct BlockEval {
    t: usize,
    ext: super::BlockExtremes,
    stats: Option<ContractionStats>,
    terminal_max: Option<f64>,
    failure: Option<String>,
}

fn eval_block(source: &impl ModelSource, t: usize, d: usize, gamma: f64) -> Result<BlockEval> {
    let tb = match transform_block(lift_block(source, t, 0, d)?, gamma) {
        Ok(tb) => tb,
        Err(e) if e.is_feasibility() => {
            let nan = f64::NAN;
            let ext = BlockExtremes {
                t,
                r_sv_min: 0.0,
                r_sv_max: nan,
                s_min: nan,
                s_max: nan,
                q_min: nan,
                q_max: nan,
            };
            return Ok(BlockEval {
                t,
                ext,
                stats: None,
                terminal_max: None,
                failure: Some(e.to_string()),
            });
        }
        Err(e) => return Err(e),
    };
    let ext = tb.extremes();
    let mut failure = None;
    let part2_ok = [
        ext.r_sv_min / ext.r_sv_max,
        ext.s_min / ext.s_max,
        ext.q_min / ext.q_max,
    ]
    .iter()
    .all(|r| *r > PD_REL_MARGIN);
    let (stats, terminal_max) = if part2_ok {
        match (contraction_stats(&tb), tb.terminal()) {
            (Ok(s), Ok(x)) => (Some(s), Some(x.eig_max())),
            (Err(e), _) | (_, Err(e)) => {
                failure = Some(e.to_string());
                (None, None)
            }
        }
    } else {
        failure = Some(format!(
            "part 2 fails at t={t}: σ(R̃) ∈ [{:.3e}, {:.3e}], λ(B̃R̃⁻¹B̃ᵀ) ∈ [{:.3e}, {:.3e}], λ(Q̃) ∈ [{:.3e}, {:.3e}]",
            ext.r_sv_min, ext.r_sv_max, ext.s_min, ext.s_max, ext.q_min, ext.q_max
        ));
        (None, None)
    };
    Ok(BlockEval {
        t,
        ext,
        stats,
        terminal_max,
        failure,
    })
}

/// Evaluate every block `(t, 0)` for `t` in the window in parallel, then
/// reduce in window order.
pub fn certificate(
    source: &impl ModelSource,
    d: usize,
    gamma: f64,
    beta: f64,
    window: Option<Window>,
) -> Result<PreviewCertificate> {
    if d == 0 {
        return Err(Error::InvalidInput("d must be at least 1".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "need finite gamma > 0 and beta ≥ 0 (got {gamma}, {beta})"
        )));
    }
    let window = Window::resolve(source, window)?;
    let evals = window
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|t| eval_block(source, t, d, gamma))
        .collect::<Result<Vec<_>>>()?;

    let mut part2 = Part2Report {
        pass: true,
        r_sv_min: f64::INFINITY,
        r_sv_max: 0.0,
        s_min: f64::INFINITY,
        s_max: f64::NEG_INFINITY,
        q_min: f64::INFINITY,
        q_max: f64::NEG_INFINITY,
        t_r_sv_min: window.start,
        t_s_min: window.start,
        t_q_min: window.start,
        failures: Vec::new(),
    };
    let mut ratio_max = f64::NEG_INFINITY;
    let mut terminal_max = f64::NEG_INFINITY;
    let mut rho_up = f64::NEG_INFINITY;
    let mut omega_min = f64::INFINITY;
    let (mut t_delta_max, mut t_rho_max) = (window.start, window.start);
    for e in &evals {
        let x = &e.ext;
        if x.r_sv_min < part2.r_sv_min {
            part2.r_sv_min = x.r_sv_min;
            part2.t_r_sv_min = e.t;
        }
        if x.s_min < part2.s_min {
            part2.s_min = x.s_min;
            part2.t_s_min = e.t;
        }
        if x.q_min < part2.q_min {
            part2.q_min = x.q_min;
            part2.t_q_min = e.t;
        }
        part2.r_sv_max = part2.r_sv_max.max(x.r_sv_max);
        part2.s_max = part2.s_max.max(x.s_max);
        part2.q_max = part2.q_max.max(x.q_max);
        if let Some(f) = &e.failure {
            part2.pass = false;
            part2.failures.push(f.clone());
        }
        if let (Some(s), Some(tm)) = (e.stats, e.terminal_max) {
            let ratio = tm / x.q_min;
            if ratio > ratio_max {
                ratio_max = ratio;
                t_delta_max = e.t;
            }
            terminal_max = terminal_max.max(tm);
            let rho = 1.0 / (1.0 + s.omega);
            if rho > rho_up {
                rho_up = rho;
                t_rho_max = e.t;
            }
            omega_min = omega_min.min(s.omega);
        }
    }

    let n = source.dims().0;
    let sqrt_n = (n as f64).sqrt();
    let kappa_lo = part2.q_min;
    let mut cert = PreviewCertificate {
        d,
        gamma,
        beta,
        n,
        window,
        kappa_lo,
        delta_up: sqrt_n * ratio_max.ln(),
        delta_up_split: sqrt_n * (terminal_max / kappa_lo).ln(),
        rho_up,
        omega_min,
        eta: f64::NAN,
        alpha_lo: f64::NAN,
        t_bar: f64::NAN,
        t_chosen: None,
        preview_steps: None,
        preview_steps_chosen: None,
        t_delta_max,
        t_rho_max,
        part2,
        feasible: false,
        reasons: Vec::new(),
    };
    cert.settle();
    Ok(cert)
}
