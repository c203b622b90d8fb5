//! Unicycle linearized along a lemniscate, Euler-discretized with step `h`.
//!
//! The disturbance enters the returned model with an identity input matrix.
//! In the original formulation it enters as `h·w_t`, so an ℓ2 gain `γ` here
//! corresponds to `γ·h` with respect to the original `w`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ModelProvider, StepData};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnicycleParams {
    /// Half-width of the lemniscate.
    pub a: f64,
    /// Period `N` in steps.
    pub period: usize,
    /// Sampling interval.
    pub h: f64,
    #[serde(with = "crate::linalg::rows")]
    pub q: DMatrix<f64>,
    #[serde(with = "crate::linalg::rows")]
    pub r: DMatrix<f64>,
}

impl Default for UnicycleParams {
    fn default() -> Self {
        UnicycleParams {
            a: 1.0,
            period: 400,
            h: 0.05,
            q: DMatrix::from_diagonal(&nalgebra::dvector![2.0, 2.0, 0.2]),
            r: DMatrix::from_diagonal(&nalgebra::dvector![0.1, 0.01]),
        }
    }
}

/// Nominal state and input over one period, indices `0..N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnicycleNominal {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub psi: Vec<f64>,
    pub v: Vec<f64>,
    pub r: Vec<f64>,
}

fn lemniscate(a: f64, period: usize, t: usize) -> (f64, f64) {
    let k = 2.0 * PI * (t % period) as f64 / period as f64;
    let (s, c) = k.sin_cos();
    let den = 1.0 + s * s;
    (a * c / den, a * s * c / den)
}

/// Heading from the four-quadrant arctangent of the position increment,
/// unwrapped so consecutive headings differ by less than `π`.
pub fn unicycle_nominal(p: &UnicycleParams) -> Result<UnicycleNominal> {
    if p.period < 3 {
        return Err(Error::Precondition(format!(
            "unicycle period must be ≥ 3 (got {})",
            p.period
        )));
    }
    if !(p.h > 0.0) || !(p.a > 0.0) {
        return Err(Error::Precondition(format!(
            "unicycle needs h > 0 and a > 0 (got h={}, a={})",
            p.h, p.a
        )));
    }
    let n = p.period;
    let pos: Vec<_> = (0..=n + 1).map(|t| lemniscate(p.a, n, t)).collect();
    let mut psi: Vec<f64> = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n);
    for t in 0..=n {
        let dx = pos[t + 1].0 - pos[t].0;
        let dy = pos[t + 1].1 - pos[t].1;
        if dx == 0.0 && dy == 0.0 {
            return Err(Error::InvalidInput(format!(
                "degenerate nominal step at t={}",
                t % n
            )));
        }
        let mut angle = dy.atan2(dx);
        if let Some(&prev) = psi.last() {
            angle += 2.0 * PI * ((prev - angle) / (2.0 * PI)).round();
        }
        psi.push(angle);
        if t < n {
            v.push(dx.hypot(dy) / p.h);
        }
    }
    let r = (0..n).map(|t| (psi[t + 1] - psi[t]) / p.h).collect();
    psi.truncate(n);
    Ok(UnicycleNominal {
        x: pos[..n].iter().map(|q| q.0).collect(),
        y: pos[..n].iter().map(|q| q.1).collect(),
        psi,
        v,
        r,
    })
}

/// Periodic model `(A_t, B_t, Q, R)` over one period of the lemniscate.
pub fn unicycle_model(p: &UnicycleParams) -> Result<ModelProvider> {
    let nom = unicycle_nominal(p)?;
    let h = p.h;
    let steps = (0..p.period)
        .map(|t| {
            let (s, c) = nom.psi[t].sin_cos();
            let v = nom.v[t];
            #[rustfmt::skip]
            let a = DMatrix::from_row_slice(3, 3, &[
                1.0, 0.0, -v * s * h,
                0.0, 1.0, v * c * h,
                0.0, 0.0, 1.0,
            ]);
            #[rustfmt::skip]
            let b = DMatrix::from_row_slice(3, 2, &[
                c * h, 0.0,
                s * h, 0.0,
                0.0, h,
            ]);
            StepData::new(a, b, p.q.clone(), p.r.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    ModelProvider::periodic(steps)
}
