//! Random small instances and the property checks shared by the property
//! suite and the acceptance harness.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use preview_gain::lifting::{
    certificate, contraction_stats, lift_block, lifted_riccati, transform_block, TransformedBlock,
};
use preview_gain::model::{
    check_assumptions, AssumptionTolerances, ModelProvider, ModelSource, StepData, Window,
};
use preview_gain::riccati::{
    dissipation_terms, feedback_gain, feedback_gain_schur, riccati_step, riccati_step_alt,
    solve_periodic, PeriodicOptions,
};
use preview_gain::sim::{empirical_gain, simulate, ClosedLoopOperator, PowerOptions};
use preview_gain::spd::{lambda_max, lambda_min, riemannian_distance};
use preview_gain::synthesis::approximant;
use preview_gain::SpdMatrix;

pub const CASES: u32 = 256;
pub const REL_TOL: f64 = 1e-8;
/// Floor of `δ` evaluated on matrices equal up to rounding.
pub const DELTA_FLOOR: f64 = 1e-12;

/// Periodic model with `n ≤ 4`, `m ≤ 2`, period `≤ 3`, and a lifting length
/// `d ≤ 4` with `dm ≥ n`.
#[derive(Clone, Debug)]
pub struct Instance {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub model: ModelProvider,
}

pub fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn step(n: usize, m: usize) -> impl Strategy<Value = StepData> {
    (
        matrix(n, n),
        matrix(n, m),
        matrix(n, n),
        prop::collection::vec(0.2..2.0f64, m),
    )
        .prop_map(move |(a, b, l, r)| {
            let a = DMatrix::identity(n, n) * 0.8 + a;
            let q = &l * l.transpose() + DMatrix::identity(n, n) * 0.2;
            let r = DMatrix::from_diagonal(&DVector::from_vec(r));
            StepData::new(a, b, q, r).expect("well-formed step")
        })
}

fn raw_instance() -> impl Strategy<Value = Instance> {
    (1usize..=4, 1usize..=2, 1usize..=3).prop_flat_map(|(n, m, period)| {
        let d_min = n.div_ceil(m);
        (d_min..=4, prop::collection::vec(step(n, m), period)).prop_map(move |(d, steps)| {
            Instance {
                n,
                m,
                d,
                model: ModelProvider::periodic(steps).expect("common dims"),
            }
        })
    })
}

/// Instances passing invertibility and the `d`-step Gramian checks with a
/// margin that keeps the lifted data well conditioned.
pub fn instance() -> impl Strategy<Value = Instance> {
    raw_instance().prop_filter("assumptions with margin", |inst| {
        let tol = AssumptionTolerances {
            rcond_min: 1e-2,
            eps_gram: 1e-2,
        };
        check_assumptions(
            &inst.model,
            inst.d,
            Window::resolve(&inst.model, None).unwrap(),
            &tol,
        )
        .map(|r| r.pass)
        .unwrap_or(false)
    })
}

/// SPD matrix `LLᵀ + cI` scaled by `10^e`.
pub fn spd(n: usize) -> impl Strategy<Value = SpdMatrix> {
    (matrix(n, n), 0.05..1.0f64, -1.5..1.5f64).prop_map(move |(l, c, e)| {
        let m = (&l * l.transpose() + DMatrix::identity(n, n) * c) * 10f64.powf(e);
        SpdMatrix::new(m).expect("SPD by construction")
    })
}

pub fn instance_with_pair() -> impl Strategy<Value = (Instance, SpdMatrix, SpdMatrix)> {
    instance().prop_flat_map(|inst| {
        let n = inst.n;
        (Just(inst), spd(n), spd(n))
    })
}

pub const GAMMA: f64 = 60.0;

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

fn fail(msg: impl Into<String>) -> TestCaseError {
    TestCaseError::fail(msg.into())
}

fn ok_or_reject<T>(r: preview_gain::Result<T>, why: &'static str) -> Result<T, TestCaseError> {
    r.map_err(|_| TestCaseError::reject(why))
}

fn block0(inst: &Instance, gamma: f64) -> Result<TransformedBlock, TestCaseError> {
    ok_or_reject(
        transform_block(lift_block(&inst.model, 0, 0, inst.d).unwrap(), gamma),
        "block infeasible at this γ",
    )
}

/// 8. Lifted update and output against a step-by-step simulation.
pub fn lifting_exactness(inst: &Instance, t: usize, seed: &[f64]) -> Result<(), TestCaseError> {
    let (n, m, d) = (inst.n, inst.m, inst.d);
    let blk = lift_block(&inst.model, t, 0, d).map_err(|e| fail(e.to_string()))?;
    let take = |off: usize, len: usize| DVector::from_fn(len, |i, _| seed[(off + i) % seed.len()]);
    let x0 = take(0, n);
    let u = take(n, d * m);
    let w = take(n + d * m, d * n);
    let mut x = x0.clone();
    let mut zx = Vec::new();
    let mut zu = Vec::new();
    for i in 0..d {
        let s = inst.model.step(t + i).unwrap();
        let ui = u.rows(i * m, m).into_owned();
        zx.extend((s.q_sqrt() * &x).iter().copied());
        zu.extend((s.r_sqrt() * &ui).iter().copied());
        x = s.a() * &x + s.b() * &ui + w.rows(i * n, n);
    }
    zx.extend(zu);
    let z = DVector::from_vec(zx);
    let xl = blk.propagate(&x0, &u, &w);
    let zl = blk.output(&x0, &u, &w);
    let scale = 1.0 + x.amax().max(z.amax());
    if (&xl - &x).amax() > 1e-12 * scale || (&zl - &z).amax() > 1e-12 * scale {
        return Err(fail(format!(
            "lifting mismatch: state {:e}, output {:e}",
            (&xl - &x).amax(),
            (&zl - &z).amax()
        )));
    }
    Ok(())
}

/// 9. One lifted Riccati application against `d` per-step applications.
pub fn composition_equivalence(inst: &Instance, x: &SpdMatrix) -> Result<(), TestCaseError> {
    let tb = block0(inst, GAMMA)?;
    let mut p = x.matrix().clone();
    for s in (0..inst.d).rev() {
        if lambda_max(&p) >= GAMMA * GAMMA {
            return Err(TestCaseError::reject("iterate leaves P ≺ γ²I"));
        }
        p = riccati_step(&inst.model.step(s).unwrap(), GAMMA, &p)
            .map_err(|e| fail(e.to_string()))?;
    }
    let lifted = lifted_riccati(&tb, x).map_err(|e| fail(e.to_string()))?;
    let r = rel(lifted.matrix(), &p);
    if r > REL_TOL {
        return Err(fail(format!("lifted vs stepwise relative error {r:e}")));
    }
    Ok(())
}

/// 10. Schur form against the inverse form; Theorem-1 gain against Woodbury.
pub fn riccati_form_equivalence(inst: &Instance, x: &SpdMatrix) -> Result<(), TestCaseError> {
    let step = inst.model.step(0).unwrap();
    let gamma = 2.0 * x.eig_max().sqrt() + 1.0;
    let full = riccati_step(&step, gamma, x.matrix()).map_err(|e| fail(e.to_string()))?;
    let alt = riccati_step_alt(&step, gamma, x).map_err(|e| fail(e.to_string()))?;
    let r = rel(&full, &alt);
    if r > REL_TOL {
        return Err(fail(format!("Schur vs inverse form relative error {r:e}")));
    }
    let k1 = feedback_gain(&step, gamma, x).map_err(|e| fail(e.to_string()))?;
    let k2 = feedback_gain_schur(&step, gamma, x).map_err(|e| fail(e.to_string()))?;
    let r = rel(&k1, &k2);
    if r > REL_TOL {
        return Err(fail(format!("Woodbury vs Schur gain relative error {r:e}")));
    }
    Ok(())
}

/// 11. Contraction, monotonicity and the terminal upper bound.
pub fn contraction_properties(
    inst: &Instance,
    x: &SpdMatrix,
    p: &SpdMatrix,
) -> Result<(), TestCaseError> {
    let tb = block0(inst, GAMMA)?;
    let stats = ok_or_reject(contraction_stats(&tb), "part 2 fails on this block")?;
    let rx = lifted_riccati(&tb, x).map_err(|e| fail(e.to_string()))?;
    let rp = lifted_riccati(&tb, p).map_err(|e| fail(e.to_string()))?;
    let d0 = riemannian_distance(x, p).unwrap();
    let d1 = riemannian_distance(&rx, &rp).unwrap();
    if d1 > stats.rho * d0 * (1.0 + REL_TOL) + DELTA_FLOOR {
        return Err(fail(format!(
            "δ(R̃X, R̃P) = {d1:e} > ρ̃·δ(X,P) = {:e}",
            stats.rho * d0
        )));
    }
    let bigger = SpdMatrix::new(x.matrix() + p.matrix()).unwrap();
    let rb = lifted_riccati(&tb, &bigger).map_err(|e| fail(e.to_string()))?;
    let gap = lambda_min(&(rb.matrix() - rx.matrix()));
    if gap <= -REL_TOL * rb.eig_max() {
        return Err(fail(format!(
            "monotonicity: λ_min(R̃(X+P) − R̃(X)) = {gap:e}"
        )));
    }
    let term = tb.terminal().map_err(|e| fail(e.to_string()))?;
    let gap = lambda_min(&(term.matrix() - rp.matrix()));
    if gap <= -REL_TOL * term.eig_max() {
        return Err(fail(format!("upper bound: λ_min(X̃ − R̃(P)) = {gap:e}")));
    }
    Ok(())
}

/// Property 12: ordering, telescoped distance bound and the sufficient
/// condition at the certified horizon, against the periodic baseline.
pub fn ordering_and_distance(inst: &Instance) -> Result<(), TestCaseError> {
    let beta = 0.25 * GAMMA;
    let cert =
        certificate(&inst.model, inst.d, GAMMA, beta, None).map_err(|e| fail(e.to_string()))?;
    if !cert.feasible {
        return Err(TestCaseError::reject("certificate infeasible"));
    }
    let t_cert = cert
        .t_chosen
        .ok_or_else(|| TestCaseError::reject("no finite T̄"))?;
    if t_cert > 4000 {
        return Err(TestCaseError::reject(
            "certified horizon too long for a property case",
        ));
    }
    let sol = ok_or_reject(
        solve_periodic(&inst.model, GAMMA, &PeriodicOptions::default()),
        "baseline infeasible",
    )?;
    let threshold = (cert.eta * sol.lambda_min_inf).ln_1p();
    let period = inst.model.period().unwrap();
    for horizon in [0, 1, 2, t_cert] {
        for t in 0..period {
            let x = approximant(&inst.model, t, inst.d, horizon, GAMMA)
                .map_err(|e| fail(e.to_string()))?;
            let p = sol.at(t + 1);
            let gap = lambda_min(&(x.matrix() - p.matrix()));
            if gap <= -REL_TOL * x.eig_max() {
                return Err(fail(format!(
                    "T={horizon} t={t}: P ≺ X fails, λ_min(X−P) = {gap:e}"
                )));
            }
            let delta = riemannian_distance(&x, p).unwrap();
            let bound = cert.bound_at(horizon);
            if delta > bound * (1.0 + REL_TOL) + DELTA_FLOOR {
                return Err(fail(format!(
                    "T={horizon} t={t}: δ = {delta:e} > ρ̄ᵀδ̄ = {bound:e}"
                )));
            }
            if horizon == t_cert && delta > threshold {
                return Err(fail(format!(
                    "T={horizon} t={t}: δ = {delta:e} > log(ηλ̲+1) = {threshold:e}"
                )));
            }
        }
    }
    Ok(())
}

/// 13. Metric axioms and invariances of the Riemannian distance.
pub fn metric_properties(
    x: &SpdMatrix,
    p: &SpdMatrix,
    y: &SpdMatrix,
    m: &DMatrix<f64>,
) -> Result<(), TestCaseError> {
    let d = |a: &SpdMatrix, b: &SpdMatrix| riemannian_distance(a, b).unwrap();
    let dxp = d(x, p);
    let tol = |v: f64| REL_TOL * v.max(1.0);
    if (dxp - d(p, x)).abs() > tol(dxp) {
        return Err(fail("symmetry"));
    }
    if (dxp - d(&x.inverse(), &p.inverse())).abs() > tol(dxp) {
        return Err(fail("inverse invariance"));
    }
    if linalg_rcond(m) < 1e-3 {
        return Err(TestCaseError::reject("congruence matrix nearly singular"));
    }
    let (xm, pm) = match (x.congruence(m), p.congruence(m)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => {
            return Err(TestCaseError::reject(
                "congruence lost definiteness numerically",
            ))
        }
    };
    if (dxp - d(&xm, &pm)).abs() > tol(dxp) {
        return Err(fail(format!(
            "congruence invariance: {dxp} vs {}",
            d(&xm, &pm)
        )));
    }
    if dxp > d(x, y) + d(y, p) + tol(dxp) {
        return Err(fail("triangle inequality"));
    }
    Ok(())
}

fn linalg_rcond(m: &DMatrix<f64>) -> f64 {
    preview_gain::linalg::rcond(m)
}

/// 14a. Completion-of-squares identity at one step.
pub fn dissipation_identity(
    inst: &Instance,
    x: &SpdMatrix,
    seed: &[f64],
) -> Result<(), TestCaseError> {
    let step = inst.model.step(0).unwrap();
    let alpha = 1.5 * x.eig_max().sqrt() + 0.5;
    let take = |off: usize, len: usize| DVector::from_fn(len, |i, _| seed[(off + i) % seed.len()]);
    let (xv, u, w) = (
        take(0, inst.n),
        take(inst.n, inst.m),
        take(inst.n + inst.m, inst.n),
    );
    let terms = dissipation_terms(&step, alpha, x, &xv, &u, &w).map_err(|e| fail(e.to_string()))?;
    if terms.relative_residual() > REL_TOL {
        return Err(fail(format!(
            "dissipation residual {:e}",
            terms.relative_residual()
        )));
    }
    if terms.w_term > 1e-12 * terms.supply.abs().max(1.0) {
        return Err(fail("w-term must be nonpositive"));
    }
    Ok(())
}

/// 14b. Adjoint consistency, superposition and monotone gain in `N`.
pub fn operator_properties(
    inst: &Instance,
    gain_scale: f64,
    seed: &[f64],
    horizon: usize,
) -> Result<(), TestCaseError> {
    let (n, m) = (inst.n, inst.m);
    let gains: Vec<DMatrix<f64>> = (0..horizon + 1)
        .map(|t| {
            DMatrix::from_fn(m, n, |i, j| {
                gain_scale * seed[(t * 7 + i * n + j) % seed.len()]
            })
        })
        .collect();
    let op =
        ClosedLoopOperator::new(&inst.model, &gains, horizon).map_err(|e| fail(e.to_string()))?;
    let w = DVector::from_fn(op.input_len(), |i, _| seed[(3 * i + 1) % seed.len()]);
    let z = DVector::from_fn(op.output_len(), |i, _| seed[(5 * i + 2) % seed.len()]);
    let fw = op.apply(&w);
    let ftz = op.apply_transpose(&z);
    let lhs = z.dot(&fw);
    let rhs = ftz.dot(&w);
    let scale = z.norm() * fw.norm() + ftz.norm() * w.norm();
    if (lhs - rhs).abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(fail(format!("adjoint mismatch {lhs} vs {rhs}")));
    }

    let w1: Vec<DVector<f64>> = (0..horizon)
        .map(|t| w.rows(t * n, n).into_owned())
        .collect();
    let w2: Vec<DVector<f64>> = (0..horizon)
        .map(|t| DVector::from_fn(n, |i, _| seed[(t + 11 * i) % seed.len()]))
        .collect();
    let sum: Vec<DVector<f64>> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
    let (t1, t2, ts) = (
        simulate(&inst.model, &gains, &w1, 1.0).unwrap(),
        simulate(&inst.model, &gains, &w2, 1.0).unwrap(),
        simulate(&inst.model, &gains, &sum, 1.0).unwrap(),
    );
    for t in 0..=horizon {
        let s = &t1.x[t] + &t2.x[t];
        if (&ts.x[t] - &s).amax() > 1e-10 * (1.0 + s.amax()) {
            return Err(fail(format!("superposition fails at t={t}")));
        }
    }

    let opts = PowerOptions {
        dense_limit: 0,
        ..Default::default()
    };
    let g1 = empirical_gain(&inst.model, &gains, horizon, &opts).unwrap();
    let g2 = empirical_gain(&inst.model, &gains, horizon + 1, &opts).unwrap();
    if g1.converged && g2.converged && g2.gain < g1.gain * (1.0 - 1e-7) {
        return Err(fail(format!(
            "gain decreased with N: {} → {}",
            g1.gain, g2.gain
        )));
    }
    Ok(())
}

pub fn seed_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 64)
}
