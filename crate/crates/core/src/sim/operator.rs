use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::check_gains;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelSource;

/// Finite-horizon closed-loop map `F: (w_0, …, w_{N−1}) ↦ (z_0, …, z_{N−1}, Q_N^{1/2}x_N)`
/// from `x_0 = 0`, with `x_{t+1} = (A_t − B_tK_t)x_t + w_t` and
/// `z_t = [Q_t^{1/2}; −R_t^{1/2}K_t] x_t`.
#[derive(Clone, Debug)]
pub struct ClosedLoopOperator {
    n: usize,
    p: usize,
    acl: Vec<DMatrix<f64>>,
    ccl: Vec<DMatrix<f64>>,
    c_term: DMatrix<f64>,
}

impl ClosedLoopOperator {
    pub fn new(source: &impl ModelSource, gains: &[DMatrix<f64>], horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        check_gains(source, gains, horizon)?;
        let (n, m) = source.dims();
        let mut acl = Vec::with_capacity(horizon);
        let mut ccl = Vec::with_capacity(horizon);
        for (t, k) in gains.iter().enumerate().take(horizon) {
            let s = source.step(t)?;
            acl.push(s.a() - s.b() * k);
            let mut c = DMatrix::zeros(n + m, n);
            c.view_mut((0, 0), (n, n)).copy_from(s.q_sqrt());
            c.view_mut((n, 0), (m, n)).copy_from(&(-(s.r_sqrt() * k)));
            ccl.push(c);
        }
        let c_term = source.step(horizon)?.q_sqrt().clone();
        Ok(ClosedLoopOperator {
            n,
            p: n + m,
            acl,
            ccl,
            c_term,
        })
    }

    pub fn horizon(&self) -> usize {
        self.acl.len()
    }

    pub fn input_len(&self) -> usize {
        self.horizon() * self.n
    }

    pub fn output_len(&self) -> usize {
        self.horizon() * self.p + self.n
    }

    /// `z = F w`.
    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let (n, p) = (self.n, self.p);
        let mut z = DVector::zeros(self.output_len());
        let mut x = DVector::zeros(n);
        for t in 0..self.horizon() {
            z.rows_mut(t * p, p).copy_from(&(&self.ccl[t] * &x));
            x = &self.acl[t] * &x + w.rows(t * n, n);
        }
        let nz = z.len();
        z.rows_mut(nz - n, n).copy_from(&(&self.c_term * &x));
        z
    }

    /// `w = Fᵀz` by the backward costate recursion
    /// `λ_N = C_Nᵀz_N`, `λ_t = C_tᵀz_t + A_tᵀλ_{t+1}`, `(Fᵀz)_t = λ_{t+1}`.
    pub fn apply_transpose(&self, z: &DVector<f64>) -> DVector<f64> {
        let (n, p) = (self.n, self.p);
        let mut w = DVector::zeros(self.input_len());
        let mut lam = self.c_term.transpose() * z.rows(z.len() - n, n);
        for t in (0..self.horizon()).rev() {
            w.rows_mut(t * n, n).copy_from(&lam);
            lam = self.ccl[t].transpose() * z.rows(t * p, p) + self.acl[t].transpose() * &lam;
        }
        w
    }

    /// Dense `F`, one column per input coordinate.
    pub fn dense(&self) -> DMatrix<f64> {
        let cols = self.input_len();
        let mut f = DMatrix::zeros(self.output_len(), cols);
        let mut e = DVector::zeros(cols);
        for j in 0..cols {
            e[j] = 1.0;
            f.set_column(j, &self.apply(&e));
            e[j] = 0.0;
        }
        f
    }

    /// Split a flat input vector into per-step disturbances.
    pub fn unflatten(&self, w: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.horizon())
            .map(|t| w.rows(t * self.n, self.n).into_owned())
            .collect()
    }
}

/// Iteration used for the largest singular value. Both only touch `F`
/// through forward and adjoint passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMethod {
    /// Plain power iteration `v ← FᵀFv/‖FᵀFv‖`.
    Power,
    /// Lanczos on `FᵀF` with full reorthogonalization: the Krylov space of
    /// the power iterates, so never worse per pass.
    Lanczos,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    /// Power: relative change of the estimate. Lanczos: relative residual
    /// `‖FᵀFy − θy‖/θ` of the leading Ritz pair.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Dense cross-check when `N·n` does not exceed this.
    pub dense_limit: usize,
    pub method: GainMethod,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-8,
            max_iters: 500,
            seed: 0,
            dense_limit: 2000,
            method: GainMethod::Lanczos,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    /// Largest singular value found; a lower bound when not converged.
    pub gain: f64,
    pub horizon: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Largest singular value of the dense operator, when assembled.
    pub dense: Option<f64>,
    /// Unit-energy maximizing disturbance.
    #[serde(with = "linalg::vector_seq")]
    pub worst_w: Vec<DVector<f64>>,
}

/// `‖F‖₂` from forward and adjoint passes on `FᵀF`.
pub fn empirical_gain(
    source: &impl ModelSource,
    gains: &[DMatrix<f64>],
    horizon: usize,
    opts: &PowerOptions,
) -> Result<GainEstimate> {
    let op = ClosedLoopOperator::new(source, gains, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v = DVector::from_fn(op.input_len(), |_, _| -> f64 {
        StandardNormal.sample(&mut rng)
    });
    v.normalize_mut();
    let (v, iterations, converged) = match opts.method {
        GainMethod::Power => power(&op, v, opts),
        GainMethod::Lanczos => lanczos(&op, v, opts),
    };
    let gain = op.apply(&v).norm();
    let dense = (op.input_len() <= opts.dense_limit).then(|| {
        let f = op.dense();
        let ftf = linalg::symmetrize(&(f.transpose() * &f));
        ftf.symmetric_eigenvalues().max().max(0.0).sqrt()
    });
    Ok(GainEstimate {
        gain,
        horizon,
        iterations,
        converged,
        dense,
        worst_w: op.unflatten(&v),
    })
}

fn power(
    op: &ClosedLoopOperator,
    mut v: DVector<f64>,
    opts: &PowerOptions,
) -> (DVector<f64>, usize, bool) {
    let mut sigma = 0.0;
    let mut best = (0.0, v.clone());
    for it in 1..=opts.max_iters {
        let z = op.apply(&v);
        let next = z.norm();
        if next > best.0 {
            best = (next, v.clone());
        }
        let g = op.apply_transpose(&z);
        let gn = g.norm();
        if gn == 0.0 {
            return (v, it, true);
        }
        let done = (next - sigma).abs() <= opts.tol * next;
        sigma = next;
        v = g / gn;
        if done {
            return (best.1, it, true);
        }
    }
    (best.1, opts.max_iters, false)
}

fn lanczos(
    op: &ClosedLoopOperator,
    q0: DVector<f64>,
    opts: &PowerOptions,
) -> (DVector<f64>, usize, bool) {
    let dim = q0.len();
    let max = opts.max_iters.min(dim).max(1);
    let mut basis: Vec<DVector<f64>> = vec![q0];
    let (mut alphas, mut betas) = (Vec::<f64>::new(), Vec::<f64>::new());
    let mut best = basis[0].clone();
    for j in 0..max {
        let mut w = op.apply_transpose(&op.apply(&basis[j]));
        alphas.push(basis[j].dot(&w));
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let beta = w.norm();
        let k = j + 1;
        let check = k <= 64 || k % 8 == 0 || k == max || beta == 0.0;
        if check {
            let mut t = DMatrix::from_diagonal(&DVector::from_vec(alphas.clone()));
            for (i, b) in betas.iter().enumerate() {
                t[(i, i + 1)] = *b;
                t[(i + 1, i)] = *b;
            }
            let eig = t.symmetric_eigen();
            let top = eig.eigenvalues.imax();
            let theta = eig.eigenvalues[top];
            let s = eig.eigenvectors.column(top);
            let mut y = DVector::zeros(dim);
            for (q, c) in basis.iter().zip(s.iter()) {
                y.axpy(*c, q, 1.0);
            }
            best = y.normalize();
            if beta == 0.0 || (beta * s[k - 1]).abs() <= opts.tol * theta.abs() {
                return (best, k, true);
            }
        }
        betas.push(beta);
        basis.push(w / beta);
    }
    (best, max, false)
}
