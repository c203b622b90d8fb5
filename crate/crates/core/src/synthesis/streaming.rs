use std::borrow::Cow;
use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{approximant_with, row_from_approximant, ScheduleConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ModelSource, StepData};
use crate::spd::SpdMatrix;

/// Model data held by a receding-horizon controller at time `t`: the current
/// step plus exactly `d(T+1)` steps ahead, covering `[t+1, t+1+d(T+1))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreviewBuffer {
    pub t: usize,
    pub d: usize,
    pub horizon: usize,
    pub current: StepData,
    pub ahead: VecDeque<StepData>,
}

impl PreviewBuffer {
    pub fn required_len(d: usize, horizon: usize) -> usize {
        d * (horizon + 1)
    }

    /// Copy `[t, t+1+d(T+1))` out of a source.
    pub fn from_source(
        source: &impl ModelSource,
        t: usize,
        d: usize,
        horizon: usize,
    ) -> Result<Self> {
        let len = Self::required_len(d, horizon);
        let current = source.step(t)?.into_owned();
        let ahead = (t + 1..t + 1 + len)
            .map(|s| source.step(s).map(Cow::into_owned))
            .collect::<Result<_>>()?;
        Self::new(t, d, horizon, current, ahead)
    }

    pub fn new(
        t: usize,
        d: usize,
        horizon: usize,
        current: StepData,
        ahead: VecDeque<StepData>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("d must be at least 1".into()));
        }
        let len = Self::required_len(d, horizon);
        if ahead.len() != len {
            return Err(Error::Precondition(format!(
                "preview buffer must hold d(T+1) = {len} steps ahead of t={t} (has {})",
                ahead.len()
            )));
        }
        let dims = current.dims();
        if let Some((i, s)) = ahead.iter().enumerate().find(|(_, s)| s.dims() != dims) {
            return Err(Error::dims(
                "preview step",
                Some(t + 1 + i),
                format!("{dims:?}"),
                format!("{:?}", s.dims()),
            ));
        }
        Ok(PreviewBuffer {
            t,
            d,
            horizon,
            current,
            ahead,
        })
    }

    /// The buffer one step later, with `next` appended at the far end.
    fn shifted(&self, next: StepData) -> PreviewBuffer {
        let mut ahead = self.ahead.clone();
        let current = ahead.pop_front().unwrap_or_else(|| next.clone());
        ahead.push_back(next);
        PreviewBuffer {
            t: self.t + 1,
            d: self.d,
            horizon: self.horizon,
            current,
            ahead,
        }
    }
}

impl ModelSource for PreviewBuffer {
    fn dims(&self) -> (usize, usize) {
        self.current.dims()
    }

    fn step(&self, s: usize) -> Result<Cow<'_, StepData>> {
        if s == self.t {
            return Ok(Cow::Borrowed(&self.current));
        }
        s.checked_sub(self.t + 1)
            .and_then(|i| self.ahead.get(i))
            .map(Cow::Borrowed)
            .ok_or_else(|| Error::Unavailable {
                t: s,
                reason: format!(
                    "outside the preview [{}, {})",
                    self.t,
                    self.t + 1 + self.ahead.len()
                ),
            })
    }
}

/// Alias kept for callers that think of the schedule parameters as the
/// controller's certificate reference.
pub type ControllerConfig = ScheduleConfig;

/// Controller state after computing the gain for time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub t: usize,
    #[serde(with = "linalg::rows")]
    pub gain: DMatrix<f64>,
    pub x_next: SpdMatrix,
    pub margin: f64,
    pub config: ControllerConfig,
    pub advisory: bool,
    /// Set when `advance` found no queued model data.
    pub stalled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerSnapshot {
    pub state: ControllerState,
    pub buffer: PreviewBuffer,
    pub pending: VecDeque<StepData>,
}

/// Single-owner receding-horizon controller. Each step recomputes `X_{t+1}`
/// from the buffered preview; nothing is reused across steps.
#[derive(Clone, Debug)]
pub struct StreamingController {
    state: ControllerState,
    buffer: PreviewBuffer,
    pending: VecDeque<StepData>,
}

fn compute(cfg: &ControllerConfig, buffer: &PreviewBuffer) -> Result<ControllerState> {
    let ap = approximant_with(buffer, None, buffer.t, cfg.d, cfg.horizon, cfg.gamma, false)?;
    let x_next = ap.x.clone();
    let row = row_from_approximant(&buffer.current, cfg, ap, None)?;
    Ok(ControllerState {
        t: buffer.t,
        gain: row.gain,
        x_next,
        margin: row.margin,
        config: *cfg,
        advisory: cfg.advisory(),
        stalled: false,
    })
}

impl StreamingController {
    pub fn new(cfg: ControllerConfig, buffer: PreviewBuffer) -> Result<Self> {
        if buffer.d != cfg.d || buffer.horizon != cfg.horizon {
            return Err(Error::Precondition(format!(
                "buffer built for (d={}, T={}) but controller uses (d={}, T={})",
                buffer.d, buffer.horizon, cfg.d, cfg.horizon
            )));
        }
        let state = compute(&cfg, &buffer)?;
        Ok(StreamingController {
            state,
            buffer,
            pending: VecDeque::new(),
        })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn buffer(&self) -> &PreviewBuffer {
        &self.buffer
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.state.gain
    }

    /// `u_t = −K_t x_t`.
    pub fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state.gain.ncols() {
            return Err(Error::dims(
                "state",
                Some(self.state.t),
                self.state.gain.ncols(),
                x.len(),
            ));
        }
        Ok(-(&self.state.gain * x))
    }

    /// Queue the next preview step. Inconsistent dimensions are rejected and
    /// leave the controller untouched.
    pub fn push(&mut self, step: StepData) -> Result<()> {
        let dims = self.buffer.dims();
        if step.dims() != dims {
            let t = self.buffer.t + 1 + self.buffer.ahead.len() + self.pending.len();
            return Err(Error::dims(
                "pushed step",
                Some(t),
                format!("{dims:?}"),
                format!("{:?}", step.dims()),
            ));
        }
        self.pending.push_back(step);
        Ok(())
    }

    /// Move to `t+1` using the oldest queued step. Without queued data the
    /// controller stalls with `PreviewExhausted`; on any error the gain, buffer
    /// and queue are unchanged.
    pub fn advance(&mut self) -> Result<&ControllerState> {
        let Some(next) = self.pending.front().cloned() else {
            self.state.stalled = true;
            return Err(Error::PreviewExhausted {
                t: self.state.t + 1,
            });
        };
        let buffer = self.buffer.shifted(next);
        let state = compute(&self.state.config, &buffer)?;
        self.pending.pop_front();
        self.buffer = buffer;
        self.state = state;
        Ok(&self.state)
    }

    pub fn advance_with(&mut self, step: StepData) -> Result<&ControllerState> {
        self.push(step)?;
        self.advance()
    }

    pub fn snapshot(&self) -> ControllerSnapshot {
        ControllerSnapshot {
            state: self.state.clone(),
            buffer: self.buffer.clone(),
            pending: self.pending.clone(),
        }
    }

    pub fn restore(s: ControllerSnapshot) -> Result<Self> {
        let b = &s.buffer;
        PreviewBuffer::new(b.t, b.d, b.horizon, b.current.clone(), b.ahead.clone())?;
        if s.state.t != b.t {
            return Err(Error::InvalidInput(format!(
                "snapshot state t={} but buffer t={}",
                s.state.t, b.t
            )));
        }
        Ok(StreamingController {
            state: s.state,
            buffer: s.buffer,
            pending: s.pending,
        })
    }
}
