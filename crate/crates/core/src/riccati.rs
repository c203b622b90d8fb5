//! Per-step ℓ2-gain Riccati operator, the associated feedback gains, and the
//! periodic baseline solver.
//!
//! `gamma = f64::INFINITY` selects the LQR limit throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, solve_sym_checked};
use crate::model::{ModelSource, StepData};
use crate::spd::{self, riemannian_distance, SpdMatrix, PD_REL_MARGIN};

/// Baseline gain bound `γ`, performance-loss tolerance `β` and the margin `ε`
/// used in strict-inequality checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainParams {
    pub gamma: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl GainParams {
    pub fn new(gamma: f64, beta: f64, epsilon: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(beta >= 0.0) || !(epsilon > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "need gamma > 0, finite beta ≥ 0, epsilon > 0 (got {gamma}, {beta}, {epsilon})"
            )));
        }
        Ok(GainParams {
            gamma,
            beta,
            epsilon,
        })
    }

    /// Gain bound `γ + β` targeted by the finite-preview policy.
    pub fn alpha(&self) -> f64 {
        self.gamma + self.beta
    }

    /// `η = γ⁻² − (γ+β)⁻²`.
    pub fn eta(&self) -> f64 {
        eta(self.gamma, self.beta)
    }
}

pub fn eta(gamma: f64, beta: f64) -> f64 {
    gamma.powi(-2) - (gamma + beta).powi(-2)
}

fn inv_sq(gamma: f64) -> f64 {
    if gamma.is_infinite() {
        0.0
    } else {
        gamma.powi(-2)
    }
}

/// `R_γ(P) = Q + AᵀPA − Lᵀ M_γ⁻¹ L` with `L = [B I]ᵀPA` and
/// `M_γ = [[R + BᵀPB, BᵀP], [PB, P − γ²I]]`.
///
/// `M_γ` is eliminated block by block: `R + BᵀPB` first, then the Schur
/// complement of the disturbance block, so a singular `M_γ` is reported
/// against the block that failed.
pub fn riccati_step(step: &StepData, gamma: f64, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, _) = step.dims();
    linalg::expect_shape(p, n, n, "P", None)?;
    let (a, b) = (step.a(), step.b());
    let pa = p * a;
    let pb = p * b;
    let lu = b.transpose() * &pa;
    let m11 = step.r() + b.transpose() * &pb;
    let m11_inv_lu = solve_sym_checked(&m11, &lu, "R + BᵀPB block of M_γ")?;
    let mut out = step.q() + a.transpose() * &pa - lu.transpose() * &m11_inv_lu;
    if gamma.is_finite() {
        let m11_inv_bp = solve_sym_checked(&m11, &pb.transpose(), "R + BᵀPB block of M_γ")?;
        let schur = p - DMatrix::identity(n, n) * gamma * gamma - &pb * m11_inv_bp;
        let v = &pa - &pb * &m11_inv_lu;
        let sv = solve_sym_checked(
            &linalg::symmetrize(&schur),
            &v,
            "disturbance-block Schur complement of M_γ",
        )?;
        out -= v.transpose() * sv;
    }
    Ok(linalg::symmetrize(&out))
}

/// Checks `P ≺ γ²I` with the scale-free margin.
fn below_gamma_sq(p: &SpdMatrix, gamma: f64) -> bool {
    gamma.is_infinite() || p.eig_max() < gamma * gamma * (1.0 - PD_REL_MARGIN)
}

/// `Q + Aᵀ(P⁻¹ − γ⁻²I + BR⁻¹Bᵀ)⁻¹A`, valid for `0 ≺ P ≺ γ²I`.
pub fn riccati_step_alt(step: &StepData, gamma: f64, p: &SpdMatrix) -> Result<DMatrix<f64>> {
    let (n, _) = step.dims();
    if p.dim() != n {
        return Err(Error::dims("P", None, n, p.dim()));
    }
    if !below_gamma_sq(p, gamma) {
        return Err(Error::Precondition(format!(
            "alternative Riccati form needs P ≺ γ²I (λ_max(P)={:.6e}, γ²={:.6e})",
            p.eig_max(),
            gamma * gamma
        )));
    }
    let b = step.b();
    let brb = b * spd::sym_solve(step.r(), &b.transpose())?;
    let inner = p.inverse().matrix() - DMatrix::identity(n, n) * inv_sq(gamma) + brb;
    let a = step.a();
    let x = spd::sym_solve(&linalg::symmetrize(&inner), a)?;
    Ok(linalg::symmetrize(&(step.q() + a.transpose() * x)))
}

/// LQR gain `(R + BᵀXB)⁻¹BᵀXA`.
pub fn lqr_gain(step: &StepData, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = step.b();
    let xb = x * b;
    let grad = linalg::symmetrize(&(step.r() + b.transpose() * &xb));
    spd::sym_solve(&grad, &(xb.transpose() * step.a()))
}

/// `K_α(X) = ∇⁻¹BᵀWA` with `W = (X⁻¹ − α⁻²I)⁻¹` and `∇ = R + BᵀWB`.
pub fn feedback_gain(step: &StepData, alpha: f64, x: &SpdMatrix) -> Result<DMatrix<f64>> {
    let n = x.dim();
    check_gain_domain(step, alpha, x)?;
    let shifted = x.inverse().matrix() - DMatrix::identity(n, n) * inv_sq(alpha);
    let w = spd::spd_inverse(&linalg::symmetrize(&shifted)).map_err(|_| margin_error(x, alpha))?;
    gain_from_w(step, &w)
}

/// Same gain through `W = X + X(α²I − X)⁻¹X`.
pub fn feedback_gain_schur(step: &StepData, alpha: f64, x: &SpdMatrix) -> Result<DMatrix<f64>> {
    let n = x.dim();
    check_gain_domain(step, alpha, x)?;
    let w = if alpha.is_infinite() {
        x.matrix().clone()
    } else {
        let gap = DMatrix::identity(n, n) * (alpha * alpha) - x.matrix();
        let corr = spd::sym_solve(&linalg::symmetrize(&gap), x.matrix())
            .map_err(|_| margin_error(x, alpha))?;
        linalg::symmetrize(&(x.matrix() + x.matrix() * corr))
    };
    gain_from_w(step, &w)
}

fn check_gain_domain(step: &StepData, alpha: f64, x: &SpdMatrix) -> Result<()> {
    if x.dim() != step.dims().0 {
        return Err(Error::dims("X", None, step.dims().0, x.dim()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be positive (got {alpha})"
        )));
    }
    if !below_gamma_sq(x, alpha) {
        return Err(margin_error(x, alpha));
    }
    Ok(())
}

fn margin_error(x: &SpdMatrix, alpha: f64) -> Error {
    Error::Infeasible(format!(
        "X ≺ α²I violated (λ_max(X)={:.6e}, α²={:.6e})",
        x.eig_max(),
        alpha * alpha
    ))
}

fn gain_from_w(step: &StepData, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = step.b();
    let wb = w * b;
    let grad = linalg::symmetrize(&(step.r() + b.transpose() * &wb));
    spd::sym_solve(&grad, &(wb.transpose() * step.a())).map_err(|_| Error::NotPositiveDefinite {
        what: "∇ = R + BᵀWB".into(),
        min_eig: spd::lambda_min(&grad),
    })
}

/// Terms of the completion-of-squares identity
/// `zᵀz − α²wᵀw + x⁺ᵀXx⁺ = xᵀR_α(X)x + (u−u*)ᵀ∇(u−u*) + (w−w*)ᵀ(X−α²I)(w−w*)`,
/// where `u* = −K_α(X)x` and `w* = (α²I − X)⁻¹X(Ax + Bu)` maximizes over `w`
/// for the applied `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationTerms {
    pub supply: f64,
    pub value: f64,
    pub u_term: f64,
    pub w_term: f64,
    pub residual: f64,
    #[serde(with = "linalg::vector")]
    pub u_star: DVector<f64>,
    #[serde(with = "linalg::vector")]
    pub w_star: DVector<f64>,
}

impl DissipationTerms {
    /// Residual relative to the largest term in the identity.
    pub fn relative_residual(&self) -> f64 {
        let scale = [self.supply, self.value, self.u_term, self.w_term]
            .iter()
            .fold(1.0_f64, |m, v| m.max(v.abs()));
        self.residual.abs() / scale
    }
}

pub fn dissipation_terms(
    step: &StepData,
    alpha: f64,
    x_mat: &SpdMatrix,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DissipationTerms> {
    let (n, m) = step.dims();
    if x.len() != n || w.len() != n || u.len() != m {
        return Err(Error::dims(
            "dissipation vectors",
            None,
            format!("x,w: {n}, u: {m}"),
            format!("x: {}, w: {}, u: {}", x.len(), w.len(), u.len()),
        ));
    }
    let xm = x_mat.matrix();
    let a2 = alpha * alpha;
    let next = step.a() * x + step.b() * u + w;
    let z2 = x.dot(&(step.q() * x)) + u.dot(&(step.r() * u));
    let supply = z2 - a2 * w.dot(w) + next.dot(&(xm * &next));
    let value = x.dot(&(riccati_step(step, alpha, xm)? * x));

    let k = feedback_gain(step, alpha, x_mat)?;
    let u_star = -(&k * x);
    let shifted = x_mat.inverse().matrix() - DMatrix::identity(n, n) / a2;
    let wmat = spd::spd_inverse(&linalg::symmetrize(&shifted))?;
    let grad = step.r() + step.b().transpose() * &wmat * step.b();
    let du = u - &u_star;
    let u_term = du.dot(&(grad * &du));

    let gap = DMatrix::identity(n, n) * a2 - xm;
    let w_star = spd::sym_solve(
        &gap,
        &DMatrix::from_column_slice(n, 1, (xm * (step.a() * x + step.b() * u)).as_slice()),
    )?
    .column(0)
    .into_owned();
    let dw = w - &w_star;
    let w_term = -dw.dot(&(gap * &dw));
    let residual = supply - (value + u_term + w_term);
    Ok(DissipationTerms {
        supply,
        value,
        u_term,
        w_term,
        residual,
        u_star,
        w_star,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOptions {
    /// Exit tolerance in the Riemannian distance.
    pub tol: f64,
    pub max_iters: usize,
    /// Lifting steps used to build the terminal-matrix seed. `None` starts
    /// from zero.
    pub seed_d: Option<usize>,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        PeriodicOptions {
            tol: 1e-10,
            max_iters: 10_000,
            seed_d: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seed {
    Terminal,
    Zero,
}

/// Periodic solution `P_t = R_{γ,t}(P_{t+1 mod N})`, `t = 0..N`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub gamma: f64,
    pub p: Vec<SpdMatrix>,
    /// `inf_t λ_min(P_t)`.
    pub lambda_min_inf: f64,
    /// `γ² − max_t λ_max(P_t)`; positive when `P_t − γ²I ⪯ −εI`.
    pub margin: f64,
    pub iterations: usize,
    /// `max_t δ(P_t, R_{γ,t}(P_{t+1}))`.
    pub residual_delta: f64,
    /// Same residual in relative Frobenius norm.
    pub residual_frob: f64,
    pub seed: Seed,
}

impl RiccatiSolution {
    pub fn period(&self) -> usize {
        self.p.len()
    }

    /// `P_t` for any `t`, using periodicity.
    pub fn at(&self, t: usize) -> &SpdMatrix {
        &self.p[t % self.p.len()]
    }
}

fn infeasible_gamma(gamma: f64, detail: impl std::fmt::Display) -> Error {
    Error::Infeasible(format!(
        "baseline gain bound infeasible at this γ={gamma}: {detail}"
    ))
}

/// One backward sweep over a period starting from `P_N`. Returns `P_0..P_N`.
fn sweep(
    source: &impl ModelSource,
    n_period: usize,
    gamma: f64,
    p_end: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let mut out = vec![p_end.clone(); n_period + 1];
    for t in (0..n_period).rev() {
        let next = &out[t + 1];
        if gamma.is_finite() && spd::lambda_max(next) >= gamma * gamma {
            return Err(infeasible_gamma(gamma, format!("λ_max(P_{}) ≥ γ²", t + 1)));
        }
        out[t] = riccati_step(&*source.step(t)?, gamma, next)?;
    }
    Ok(out)
}

fn delta_or_inf(x: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    match (SpdMatrix::new(x.clone()), SpdMatrix::new(p.clone())) {
        (Ok(x), Ok(p)) => riemannian_distance(&x, &p).unwrap_or(f64::INFINITY),
        _ => f64::INFINITY,
    }
}

/// Picard iteration of the one-period backward map.
pub fn solve_periodic(
    source: &impl ModelSource,
    gamma: f64,
    opts: &PeriodicOptions,
) -> Result<RiccatiSolution> {
    let n_period = source
        .period()
        .ok_or_else(|| Error::InvalidInput("solve_periodic needs a periodic model".into()))?;
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "gamma must be positive (got {gamma})"
        )));
    }
    let n = source.dims().0;
    let terminal = match opts.seed_d {
        Some(d) => crate::lifting::terminal_at(source, 0, d, gamma)
            .ok()
            .filter(|x| gamma.is_infinite() || x.eig_max() < gamma * gamma),
        None => None,
    };
    match terminal {
        Some(seed) => iterate(
            source,
            n_period,
            gamma,
            seed.into_inner(),
            Seed::Terminal,
            opts,
        )
        .or_else(|_| {
            iterate(
                source,
                n_period,
                gamma,
                DMatrix::zeros(n, n),
                Seed::Zero,
                opts,
            )
        }),
        None => iterate(
            source,
            n_period,
            gamma,
            DMatrix::zeros(n, n),
            Seed::Zero,
            opts,
        ),
    }
}

fn iterate(
    source: &impl ModelSource,
    n_period: usize,
    gamma: f64,
    seed: DMatrix<f64>,
    seed_kind: Seed,
    opts: &PeriodicOptions,
) -> Result<RiccatiSolution> {
    let mut p_end = seed;
    let mut last_delta = f64::INFINITY;
    for iter in 1..=opts.max_iters {
        let seq = sweep(source, n_period, gamma, &p_end)?;
        let p0 = &seq[0];
        if p0.iter().any(|v| !v.is_finite()) {
            return Err(infeasible_gamma(gamma, "iterate diverged"));
        }
        last_delta = delta_or_inf(p0, &p_end);
        p_end = p0.clone();
        if last_delta <= opts.tol {
            return finish(source, n_period, gamma, &p_end, iter, seed_kind);
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iters,
        residual: last_delta,
    })
}

fn finish(
    source: &impl ModelSource,
    n_period: usize,
    gamma: f64,
    p_end: &DMatrix<f64>,
    iterations: usize,
    seed: Seed,
) -> Result<RiccatiSolution> {
    let mut seq = sweep(source, n_period, gamma, p_end)?;
    seq.truncate(n_period);
    let p = seq
        .into_iter()
        .enumerate()
        .map(|(t, m)| SpdMatrix::labelled(m, &format!("P_{t}")))
        .collect::<Result<Vec<_>>>()?;
    let mut residual_delta: f64 = 0.0;
    let mut residual_frob: f64 = 0.0;
    for t in 0..n_period {
        let img = riccati_step(&*source.step(t)?, gamma, p[(t + 1) % n_period].matrix())?;
        residual_delta = residual_delta.max(delta_or_inf(&img, p[t].matrix()));
        residual_frob = residual_frob.max((&img - p[t].matrix()).norm() / p[t].matrix().norm());
    }
    let lambda_min_inf = p
        .iter()
        .map(SpdMatrix::eig_min)
        .fold(f64::INFINITY, f64::min);
    let lambda_max_sup = p.iter().map(SpdMatrix::eig_max).fold(0.0, f64::max);
    let margin = if gamma.is_infinite() {
        f64::INFINITY
    } else {
        gamma * gamma - lambda_max_sup
    };
    if !(margin > 0.0) {
        return Err(infeasible_gamma(gamma, format!("margin {margin:.3e} ≤ 0")));
    }
    Ok(RiccatiSolution {
        gamma,
        p,
        lambda_min_inf,
        margin,
        iterations,
        residual_delta,
        residual_frob,
        seed,
    })
}
