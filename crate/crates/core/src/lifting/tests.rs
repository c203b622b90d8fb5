use approx::assert_relative_eq;
use nalgebra::{dmatrix, DMatrix, DVector};

use super::*;
use crate::model::{unicycle_model, ModelProvider, StepData, UnicycleParams};
use crate::riccati::{riccati_step, riccati_step_alt};

fn scalar(a: f64, b: f64, q: f64, r: f64) -> StepData {
    let s = |v| DMatrix::from_element(1, 1, v);
    StepData::new(s(a), s(b), s(q), s(r)).unwrap()
}

fn unicycle() -> ModelProvider {
    unicycle_model(&UnicycleParams::default()).unwrap()
}

#[test]
fn scalar_two_step_lifting() {
    let p = ModelProvider::stationary(scalar(2.0, 1.0, 1.0, 1.0));
    let b = lift_block(&p, 0, 0, 2).unwrap();
    assert_eq!(b.a_lift, dmatrix![4.0]);
    assert_eq!(b.b_lift, dmatrix![2.0, 1.0]);
    assert_eq!(b.f_lift, dmatrix![2.0, 1.0]);
    assert_eq!(b.c_lift, dmatrix![1.0; 2.0]);
    assert_eq!(b.d_lift, dmatrix![0.0, 0.0; 1.0, 0.0]);
    assert_eq!(b.e_lift, dmatrix![0.0, 0.0; 1.0, 0.0]);
    assert_eq!(b.r_lift, DMatrix::identity(2, 2));
}

#[test]
fn single_step_collapse() {
    let u = unicycle();
    let s = u.step(17).unwrap();
    let b = lift_block(&u, 17, 0, 1).unwrap();
    assert_eq!(&b.a_lift, s.a());
    assert_eq!(&b.b_lift, s.b());
    assert_eq!(b.f_lift, DMatrix::identity(3, 3));
    assert_eq!(&b.c_lift, s.q_sqrt());
    assert!(b.d_lift.iter().all(|v| *v == 0.0));
    assert!(b.e_lift.iter().all(|v| *v == 0.0));
    assert_eq!(&b.r_lift, s.r());

    let tb = transform_block(b, 125.0).unwrap();
    assert_relative_eq!(tb.q_til, s.q().clone(), epsilon = 1e-15);
    assert_relative_eq!(tb.a_til, s.a().clone(), epsilon = 1e-15);
    let mut r_expected = DMatrix::zeros(5, 5);
    r_expected.view_mut((0, 0), (2, 2)).copy_from(s.r());
    r_expected
        .view_mut((2, 2), (3, 3))
        .fill_diagonal(-125.0 * 125.0);
    assert_eq!(tb.r_til, r_expected);
}

#[test]
fn block_index_shifts_base_time() {
    let u = unicycle();
    let a = lift_block(&u, 5, 2, 7).unwrap();
    let b = lift_block(&u, 19, 0, 7).unwrap();
    assert_eq!(a.base(), 19);
    assert_eq!(a.a_lift, b.a_lift);
    assert_relative_eq!(
        a.a_lift.clone(),
        crate::model::transition(&u, 19, 26).unwrap(),
        epsilon = 0.0
    );
}

#[test]
fn lifted_update_matches_stepwise_simulation() {
    let steps = vec![
        StepData::new(
            dmatrix![1.1, 0.3; -0.2, 0.9],
            dmatrix![0.5; 1.0],
            dmatrix![1.0, 0.2; 0.2, 0.5],
            dmatrix![0.7],
        )
        .unwrap(),
        StepData::new(
            dmatrix![0.8, -0.4; 0.1, 1.2],
            dmatrix![0.0; 1.5],
            dmatrix![2.0, 0.0; 0.0, 0.1],
            dmatrix![1.3],
        )
        .unwrap(),
        StepData::new(
            dmatrix![1.0, 0.5; 0.5, 0.7],
            dmatrix![1.0; -1.0],
            dmatrix![0.3, 0.1; 0.1, 0.9],
            dmatrix![0.2],
        )
        .unwrap(),
    ];
    let p = ModelProvider::periodic(steps).unwrap();
    let blk = lift_block(&p, 1, 0, 3).unwrap();
    let x0 = DVector::from_vec(vec![0.3, -1.1]);
    let u = DVector::from_vec(vec![0.4, -0.7, 1.2]);
    let w = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.5, 0.9, -0.6]);
    let mut x = x0.clone();
    let mut z = Vec::new();
    let mut zu = Vec::new();
    for i in 0..3 {
        let s = p.step(1 + i).unwrap();
        z.extend((s.q_sqrt() * &x).iter().copied());
        zu.extend((s.r_sqrt() * u.rows(i, 1)).iter().copied());
        x = s.a() * &x + s.b() * u.rows(i, 1) + w.rows(2 * i, 2);
    }
    z.extend(zu);
    assert_relative_eq!(blk.propagate(&x0, &u, &w), x, epsilon = 1e-12);
    assert_relative_eq!(
        blk.output(&x0, &u, &w),
        DVector::from_vec(z),
        epsilon = 1e-12
    );
}

#[test]
fn large_gamma_limit_of_s() {
    let u = unicycle();
    let s = u.step(3).unwrap();
    let tb = transform_block(lift_block(&u, 3, 0, 1).unwrap(), 1e4).unwrap();
    let brb = s.b() * s.r().clone().try_inverse().unwrap() * s.b().transpose();
    // S = BR⁻¹Bᵀ − γ⁻²I at d = 1.
    assert_relative_eq!(
        tb.s,
        brb.clone() - DMatrix::identity(3, 3) * 1e-8,
        epsilon = 1e-12
    );
    assert_relative_eq!(tb.s, brb, epsilon = 2e-8);
}

#[test]
fn single_step_lifted_riccati_matches_alt_form() {
    let u = unicycle();
    let x = crate::spd::SpdMatrix::new(dmatrix![3.0, 0.5, 0.1; 0.5, 2.0, -0.2; 0.1, -0.2, 1.0])
        .unwrap();
    let tb = transform_block(lift_block(&u, 40, 0, 1).unwrap(), 125.0).unwrap();
    let lifted = lifted_riccati(&tb, &x).unwrap();
    let alt = riccati_step_alt(&u.step(40).unwrap(), 125.0, &x).unwrap();
    assert_relative_eq!(lifted.matrix().clone(), alt, max_relative = 1e-10);
}

#[test]
fn lifted_riccati_composes_single_steps() {
    let u = unicycle();
    let d = 10;
    let x = crate::spd::SpdMatrix::new(dmatrix![3.0, 0.5, 0.1; 0.5, 2.0, -0.2; 0.1, -0.2, 1.0])
        .unwrap();
    let tb = transform_block(lift_block(&u, 100, 0, d).unwrap(), 125.0).unwrap();
    let lifted = lifted_riccati(&tb, &x).unwrap();
    let mut p = x.matrix().clone();
    for s in (100..100 + d).rev() {
        p = riccati_step(&u.step(s).unwrap(), 125.0, &p).unwrap();
    }
    assert_relative_eq!(lifted.matrix().clone(), p, max_relative = 1e-8);
    let general = lifted_riccati_general(&tb, x.matrix()).unwrap();
    let saddle = lifted_riccati_saddle(&tb, x.matrix()).unwrap();
    assert_relative_eq!(general, p, max_relative = 1e-8);
    assert_relative_eq!(saddle, p, max_relative = 1e-8);
}

#[test]
fn identity_contraction_constants() {
    let i = DMatrix::<f64>::identity(2, 2);
    let s = contraction_stats_from(&i, &i, &i).unwrap();
    assert_relative_eq!(s.zeta, 0.5);
    assert_relative_eq!(s.eps, 0.5);
    assert_relative_eq!(s.rho, 0.5);
    assert_relative_eq!(
        terminal_from(&i, &i, &i).unwrap().matrix().clone(),
        &i * 2.0
    );
}

#[test]
fn iterates_contract_at_measured_rate() {
    let u = unicycle();
    let tb = transform_block(lift_block(&u, 0, 0, 10).unwrap(), 125.0).unwrap();
    let st = contraction_stats(&tb).unwrap();
    assert!(st.rho < 1.0);
    let mut a = crate::spd::SpdMatrix::scaled_identity(3, 1e3);
    let mut b = crate::spd::SpdMatrix::scaled_identity(3, 1e-2);
    let mut prev = crate::spd::riemannian_distance(&a, &b).unwrap();
    for _ in 0..5 {
        a = lifted_riccati(&tb, &a).unwrap();
        b = lifted_riccati(&tb, &b).unwrap();
        let dist = crate::spd::riemannian_distance(&a, &b).unwrap();
        assert!(
            dist <= st.rho * prev * (1.0 + 1e-9),
            "{dist} > {} · {prev}",
            st.rho
        );
        prev = dist;
    }
}

#[test]
fn deadbeat_examples() {
    let p = ModelProvider::stationary(scalar(2.0, 1.0, 1.0, 1.0));
    let (gx, gw) = deadbeat_gain(&lift_block(&p, 0, 0, 1).unwrap()).unwrap();
    assert_relative_eq!(gx[(0, 0)], -2.0);
    assert_relative_eq!(gw[(0, 0)], -1.0);

    let u = unicycle();
    let blk = lift_block(&u, 30, 0, 10).unwrap();
    let (gx, gw) = deadbeat_gain(&blk).unwrap();
    assert!((&blk.a_lift + &blk.b_lift * &gx).amax() < 1e-10);
    let x = DVector::from_vec(vec![0.2, -0.4, 0.1]);
    let w = DVector::from_fn(30, |i, _| ((i * 7 % 11) as f64 - 5.0) / 10.0);
    let uu = &gx * &x + &gw * &w;
    assert!(blk.propagate(&x, &uu, &w).amax() < 1e-10);

    let none = ModelProvider::stationary(scalar(1.0, 0.0, 1.0, 1.0));
    assert!(deadbeat_gain(&lift_block(&none, 0, 0, 2).unwrap()).is_err());
}

#[test]
fn synthetic_preview_bound() {
    let t_bar = preview_bound(0.5, 2.0, 0.5f64.exp() - 1.0);
    assert_relative_eq!(t_bar, 2.0, epsilon = 1e-12);
    assert_eq!(t_chosen(t_bar), Some(3));
    assert_eq!(t_chosen(2.5), Some(3));
    assert_eq!(t_chosen(-4.0), Some(1));
    assert_eq!(t_chosen(0.0), Some(1));
    assert_eq!(t_chosen(f64::NAN), None);
}

#[test]
fn unicycle_d10_certificate_is_feasible() {
    let u = unicycle();
    let c = certificate(&u, 10, 125.0, 31.25, None).unwrap();
    assert!(c.feasible, "{:?}", c.reasons);
    assert!(c.part2.pass);
    assert!(c.window.exact);
    assert!(c.rho_up < 1.0 && c.kappa_lo > 0.0);
    assert!(c.delta_up <= c.delta_up_split);
    assert!(c.t_chosen.unwrap() as f64 > c.t_bar);
}

#[test]
fn rebeta_matches_fresh_certificate() {
    let u = unicycle();
    let c = certificate(&u, 10, 125.0, 31.25, None).unwrap();
    for beta in [1.25, 62.5, 0.0] {
        let json = |c: PreviewCertificate| serde_json::to_string(&c).unwrap();
        assert_eq!(
            json(c.with_beta(beta).unwrap()),
            json(certificate(&u, 10, 125.0, beta, None).unwrap())
        );
    }
    assert!(c.with_beta(f64::NAN).is_err());
}

#[test]
fn zero_input_fails_part2() {
    let p = ModelProvider::stationary(scalar(1.0, 0.0, 1.0, 1.0));
    let c = certificate(&p, 2, 10.0, 1.0, None).unwrap();
    assert!(!c.feasible);
}

#[test]
fn cache_returns_identical_blocks() {
    let u = unicycle();
    let cache = BlockCache::new();
    let a = cache.block(&u, 3, 1, 10, 125.0).unwrap();
    let b = cache.block(&u, 413, 0, 10, 125.0).unwrap();
    assert_eq!(cache.len(), 1);
    let fresh = transform_block(lift_block(&u, 13, 0, 10).unwrap(), 125.0).unwrap();
    assert_eq!(a.q_til, fresh.q_til);
    assert_eq!(b.s, fresh.s);
}
