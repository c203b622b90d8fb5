//! d-step lifted blocks, their γ-transformed data, the lifted Riccati
//! operator and its contraction constants.
//!
//! Block `(t, k)` covers steps `[t + dk, t + d(k+1))`. Its data depend only on
//! the base time `t + dk`, which is what the cache keys on.

mod cache;
mod certificate;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cache::BlockCache;
pub use certificate::{
    certificate, preview_bound, t_chosen, BlockExtremes, Part2Report, PreviewCertificate,
};

use crate::error::{Error, Result};
use crate::linalg::{self, solve_checked, solve_sym_checked};
use crate::model::ModelSource;
use crate::spd::{self, SpdMatrix};

/// Lifted model over one block:
/// `x⁺ = Ă x + B̆ ŭ + F̆ w̆` and `z̆ = [C̆ x + D̆ ŭ + Ĕ w̆; R̆^{1/2} ŭ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedBlock {
    pub t: usize,
    pub k: usize,
    pub d: usize,
    #[serde(with = "linalg::rows")]
    pub a_lift: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub b_lift: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub f_lift: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub c_lift: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub d_lift: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub e_lift: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub r_lift: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub r_lift_sqrt: DMatrix<f64>,
}

impl LiftedBlock {
    /// First absolute time covered by the block.
    pub fn base(&self) -> usize {
        self.t + self.d * self.k
    }

    /// Lifted one-step update.
    pub fn propagate(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a_lift * x + &self.b_lift * u + &self.f_lift * w
    }

    /// Stacked output: the `nd` state rows followed by the `md` input rows.
    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let top = &self.c_lift * x + &self.d_lift * u + &self.e_lift * w;
        let bottom = &self.r_lift_sqrt * u;
        DVector::from_iterator(
            top.len() + bottom.len(),
            top.iter().chain(bottom.iter()).copied(),
        )
    }
}

/// Build block `(t, k)` by propagating the input and disturbance responses
/// forward one step at a time. No inverse is formed.
pub fn lift_block(source: &impl ModelSource, t: usize, k: usize, d: usize) -> Result<LiftedBlock> {
    if d == 0 {
        return Err(Error::Precondition("lifting needs d ≥ 1".into()));
    }
    let (n, m) = source.dims();
    let base = t + d * k;
    let mut phi = DMatrix::<f64>::identity(n, n);
    let mut xu = DMatrix::<f64>::zeros(n, m * d);
    let mut xw = DMatrix::<f64>::zeros(n, n * d);
    let mut c = DMatrix::zeros(n * d, n);
    let mut dl = DMatrix::zeros(n * d, m * d);
    let mut el = DMatrix::zeros(n * d, n * d);
    let mut r = DMatrix::zeros(m * d, m * d);
    let mut r_sqrt = DMatrix::zeros(m * d, m * d);
    for i in 0..d {
        let s = source.step(base + i)?;
        let qs = s.q_sqrt();
        c.view_mut((n * i, 0), (n, n)).copy_from(&(qs * &phi));
        dl.view_mut((n * i, 0), (n, m * d)).copy_from(&(qs * &xu));
        el.view_mut((n * i, 0), (n, n * d)).copy_from(&(qs * &xw));
        r.view_mut((m * i, m * i), (m, m)).copy_from(s.r());
        r_sqrt
            .view_mut((m * i, m * i), (m, m))
            .copy_from(s.r_sqrt());
        phi = s.a() * phi;
        xu = s.a() * xu;
        xu.view_mut((0, m * i), (n, m)).copy_from(s.b());
        xw = s.a() * xw;
        xw.view_mut((0, n * i), (n, n)).fill_with_identity();
    }
    Ok(LiftedBlock {
        t,
        k,
        d,
        a_lift: phi,
        b_lift: xu,
        f_lift: xw,
        c_lift: c,
        d_lift: dl,
        e_lift: el,
        r_lift: r,
        r_lift_sqrt: r_sqrt,
    })
}

/// `ŭ = gain_x·x + gain_w·w̆` with `gain_x = −B̆ᵀ(B̆B̆ᵀ)⁻¹Ă` and
/// `gain_w = −B̆ᵀ(B̆B̆ᵀ)⁻¹F̆`, which zeroes the lifted state in one block.
pub fn deadbeat_gain(block: &LiftedBlock) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let bb = &block.b_lift * block.b_lift.transpose();
    let sol_a = spd::sym_solve(&bb, &block.a_lift).map_err(|_| {
        Error::Infeasible(format!(
            "B̆B̆ᵀ singular at base {} (lifted model not one-step controllable)",
            block.base()
        ))
    })?;
    let sol_f = spd::sym_solve(&bb, &block.f_lift)?;
    let bt = block.b_lift.transpose();
    Ok((-(&bt * sol_a), -(&bt * sol_f)))
}

/// γ-transformed lifted data:
/// `B̃ = [B̆ F̆]`, `R̃ = blockdiag(R̆, −γ²I) + GᵀG`, `Q̃ = C̆ᵀC̆ − C̆ᵀG R̃⁻¹ GᵀC̆`,
/// `Ã = Ă − B̃ R̃⁻¹ GᵀC̆`, with `G = [D̆ Ĕ]`. `S = B̃ R̃⁻¹ B̃ᵀ` is kept
/// because every lifted operator needs it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformedBlock {
    pub gamma: f64,
    pub block: LiftedBlock,
    #[serde(with = "linalg::rows")]
    pub b_til: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub r_til: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub q_til: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub a_til: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub s: DMatrix<f64>,
}

pub fn transform_block(block: LiftedBlock, gamma: f64) -> Result<TransformedBlock> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "gamma must be positive and finite (got {gamma})"
        )));
    }
    let n = block.a_lift.nrows();
    let md = block.b_lift.ncols();
    let nd = block.f_lift.ncols();
    let mut b_til = DMatrix::zeros(n, md + nd);
    b_til.view_mut((0, 0), (n, md)).copy_from(&block.b_lift);
    b_til.view_mut((0, md), (n, nd)).copy_from(&block.f_lift);
    let mut g = DMatrix::zeros(block.d_lift.nrows(), md + nd);
    g.view_mut((0, 0), (g.nrows(), md)).copy_from(&block.d_lift);
    g.view_mut((0, md), (g.nrows(), nd))
        .copy_from(&block.e_lift);

    let mut r_til = g.transpose() * &g;
    let mut top = r_til.view_mut((0, 0), (md, md));
    top += &block.r_lift;
    for i in md..md + nd {
        r_til[(i, i)] -= gamma * gamma;
    }
    let r_til = linalg::symmetrize(&r_til);

    let gtc = g.transpose() * &block.c_lift;
    let mut rhs = DMatrix::zeros(md + nd, n + n);
    rhs.view_mut((0, 0), (md + nd, n)).copy_from(&gtc);
    rhs.view_mut((0, n), (md + nd, n))
        .copy_from(&b_til.transpose());
    let sol = solve_sym_checked(
        &r_til,
        &rhs,
        "R̃ (γ on the boundary of feasibility for this block)",
    )
    .map_err(|e| e.at_block(block.t, block.k))?;
    let r_inv_gtc = sol.columns(0, n);
    let r_inv_bt = sol.columns(n, n);

    let ctc = block.c_lift.transpose() * &block.c_lift;
    let q_til = linalg::symmetrize(&(ctc - gtc.transpose() * r_inv_gtc));
    let a_til = &block.a_lift - &b_til * r_inv_gtc;
    let s = linalg::symmetrize(&(&b_til * r_inv_bt));

    let rc = linalg::rcond(&a_til);
    if !(rc >= linalg::RCOND_MIN) {
        return Err(Error::Singular {
            what: "Ã".into(),
            rcond: rc,
        }
        .at_block(block.t, block.k));
    }
    Ok(TransformedBlock {
        gamma,
        block,
        b_til,
        r_til,
        q_til,
        a_til,
        s,
    })
}

impl TransformedBlock {
    /// `Q̃ + ÃᵀS⁻¹Ã`, the terminal matrix and the upper bound of the lifted
    /// Riccati operator on the PD cone.
    pub fn terminal(&self) -> Result<SpdMatrix> {
        terminal_from(&self.q_til, &self.a_til, &self.s)
            .map_err(|e| e.at_block(self.block.t, self.block.k))
    }

    /// Extreme values used by the part-2 checks: singular values of `R̃`,
    /// eigenvalues of `S` and of `Q̃`.
    pub fn extremes(&self) -> BlockExtremes {
        let (r_sv_min, r_sv_max) = linalg::abs_eig_extremes(&self.r_til);
        let (s_min, s_max) = spd::eig_extremes(&self.s);
        let (q_min, q_max) = spd::eig_extremes(&self.q_til);
        BlockExtremes {
            t: self.block.base(),
            r_sv_min,
            r_sv_max,
            s_min,
            s_max,
            q_min,
            q_max,
        }
    }
}

/// `Q̃ + Ãᵀ(X⁻¹ + S)⁻¹Ã`, evaluated as `Q̃ + ÃᵀL(I + LᵀSL)⁻¹LᵀÃ` with
/// `X = LLᵀ` so no inverse of `X` is formed.
pub fn lifted_riccati(tb: &TransformedBlock, x: &SpdMatrix) -> Result<SpdMatrix> {
    let n = tb.a_til.nrows();
    if x.dim() != n {
        return Err(Error::dims("X", None, n, x.dim()));
    }
    let l = x
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            what: "X".into(),
            min_eig: x.eig_min(),
        })?
        .unpack();
    let inner = linalg::symmetrize(&(DMatrix::identity(n, n) + l.transpose() * &tb.s * &l));
    let lt_a = l.transpose() * &tb.a_til;
    let sol = solve_sym_checked(&inner, &lt_a, "I + LᵀB̃R̃⁻¹B̃ᵀL")?;
    SpdMatrix::labelled(&tb.q_til + lt_a.transpose() * sol, "lifted Riccati image")
        .map_err(|e| e.at_block(tb.block.t, tb.block.k))
}

/// `Q̃ + Ãᵀ(X − XB̃(R̃ + B̃ᵀXB̃)⁻¹B̃ᵀX)Ã`, the general form valid for any
/// symmetric `X` with `R̃ + B̃ᵀXB̃` invertible.
pub fn lifted_riccati_general(tb: &TransformedBlock, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xb = x * &tb.b_til;
    let m = linalg::symmetrize(&(&tb.r_til + tb.b_til.transpose() * &xb));
    let sol = solve_sym_checked(&m, &xb.transpose(), "R̃ + B̃ᵀXB̃")?;
    let inner = x - &xb * sol;
    Ok(linalg::symmetrize(
        &(&tb.q_til + tb.a_til.transpose() * inner * &tb.a_til),
    ))
}

/// Saddle form on the untransformed lifted data:
/// `C̆ᵀC̆ + ĂᵀXĂ − L̆ᵀM̆⁻¹L̆` with `L̆ = GᵀC̆ + B̃ᵀXĂ` and `M̆ = R̃ + B̃ᵀXB̃`.
pub fn lifted_riccati_saddle(tb: &TransformedBlock, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let blk = &tb.block;
    let md = blk.b_lift.ncols();
    let nd = blk.f_lift.ncols();
    let mut g = DMatrix::zeros(blk.d_lift.nrows(), md + nd);
    g.view_mut((0, 0), (g.nrows(), md)).copy_from(&blk.d_lift);
    g.view_mut((0, md), (g.nrows(), nd)).copy_from(&blk.e_lift);
    let l = g.transpose() * &blk.c_lift + tb.b_til.transpose() * x * &blk.a_lift;
    let m = linalg::symmetrize(&(&tb.r_til + tb.b_til.transpose() * x * &tb.b_til));
    let sol = solve_sym_checked(&m, &l, "R̃ + B̃ᵀXB̃")?;
    let out = blk.c_lift.transpose() * &blk.c_lift + blk.a_lift.transpose() * x * &blk.a_lift
        - l.transpose() * sol;
    Ok(linalg::symmetrize(&out))
}

/// Contraction constants of one lifted Riccati operator:
/// `ζ̃ = 1/λ_min(Q̃ + Q̃Ã⁻¹SÃ⁻ᵀQ̃)`, `ε̃ = 1/λ_max(Q̃ + ÃᵀS⁻¹Ã)`,
/// `ρ̃ = ζ̃/(ζ̃ + ε̃)` and `ω̃ = ε̃/ζ̃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionStats {
    pub zeta: f64,
    pub eps: f64,
    pub rho: f64,
    pub omega: f64,
}

pub fn contraction_stats(tb: &TransformedBlock) -> Result<ContractionStats> {
    contraction_stats_from(&tb.q_til, &tb.a_til, &tb.s)
        .map_err(|e| e.at_block(tb.block.t, tb.block.k))
}

/// `Q̃ + ÃᵀS⁻¹Ã` from its three ingredients.
pub fn terminal_from(
    q_til: &DMatrix<f64>,
    a_til: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<SpdMatrix> {
    let sol = spd::sym_solve(s, a_til).map_err(|_| Error::NotPositiveDefinite {
        what: "B̃R̃⁻¹B̃ᵀ".into(),
        min_eig: spd::lambda_min(s),
    })?;
    SpdMatrix::labelled(q_til + a_til.transpose() * sol, "Q̃ + ÃᵀS⁻¹Ã")
}

pub fn contraction_stats_from(
    q_til: &DMatrix<f64>,
    a_til: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<ContractionStats> {
    if !spd::is_strictly_pd(q_til) {
        return Err(Error::NotPositiveDefinite {
            what: "Q̃".into(),
            min_eig: spd::lambda_min(q_til),
        });
    }
    let ainv_q = solve_checked(a_til, q_til, "Ã")?;
    let zm = linalg::symmetrize(&(q_til + ainv_q.transpose() * s * ainv_q));
    let zeta = 1.0 / spd::lambda_min(&zm);
    let eps = 1.0 / terminal_from(q_til, a_til, s)?.eig_max();
    if !(zeta > 0.0 && eps > 0.0) {
        return Err(Error::Infeasible(format!(
            "contraction constants not positive (ζ̃={zeta}, ε̃={eps})"
        )));
    }
    Ok(ContractionStats {
        zeta,
        eps,
        rho: zeta / (zeta + eps),
        omega: eps / zeta,
    })
}

/// Terminal matrix `Q̃ + ÃᵀS⁻¹Ã` of the block starting at `base`.
pub fn terminal_at(
    source: &impl ModelSource,
    base: usize,
    d: usize,
    gamma: f64,
) -> Result<SpdMatrix> {
    transform_block(lift_block(source, base, 0, d)?, gamma)?.terminal()
}

#[cfg(test)]
mod tests;
