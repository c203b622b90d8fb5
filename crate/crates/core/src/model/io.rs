//! Model JSON format:
//!
//! ```json
//! {"n": 3, "m": 2, "kind": "periodic",
//!  "steps": [{"A": [[..]], "B": [[..]], "Q": [[..]], "R": [[..]]}, ...]}
//! ```
//!
//! Matrices are row-major nested arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelProvider, ModelSource, StepData};
use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Periodic,
    Explicit,
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub A: Vec<Vec<f64>>,
    pub B: Vec<Vec<f64>>,
    pub Q: Vec<Vec<f64>>,
    pub R: Vec<Vec<f64>>,
}

impl From<&StepData> for StepRecord {
    fn from(s: &StepData) -> Self {
        StepRecord {
            A: to_rows(s.a()),
            B: to_rows(s.b()),
            Q: to_rows(s.q()),
            R: to_rows(s.r()),
        }
    }
}

impl StepRecord {
    pub fn into_step(self) -> Result<StepData> {
        StepData::new(
            from_rows(&self.A, "A")?,
            from_rows(&self.B, "B")?,
            from_rows(&self.Q, "Q")?,
            from_rows(&self.R, "R")?,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub m: usize,
    pub kind: ModelKind,
    pub steps: Vec<StepRecord>,
}

impl ModelFile {
    pub fn from_provider(p: &ModelProvider) -> Result<Self> {
        let kind = match p {
            ModelProvider::Periodic(_) => ModelKind::Periodic,
            ModelProvider::Explicit(_) => ModelKind::Explicit,
            ModelProvider::Generator { .. } => {
                return Err(Error::InvalidInput(
                    "generator models cannot be serialized".into(),
                ))
            }
        };
        let (n, m) = p.dims();
        let steps = p
            .steps()
            .unwrap_or_default()
            .iter()
            .map(StepRecord::from)
            .collect();
        Ok(ModelFile { n, m, kind, steps })
    }

    pub fn into_provider(self) -> Result<ModelProvider> {
        let (n, m) = (self.n, self.m);
        let steps = self
            .steps
            .into_iter()
            .enumerate()
            .map(|(t, rec)| {
                let s = rec.into_step()?;
                if s.dims() != (n, m) {
                    return Err(Error::dims(
                        "model file step",
                        Some(t),
                        format!("n={n}, m={m}"),
                        format!("n={}, m={}", s.dims().0, s.dims().1),
                    ));
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        match self.kind {
            ModelKind::Periodic => ModelProvider::periodic(steps),
            ModelKind::Explicit => ModelProvider::explicit(steps),
        }
    }
}

impl ModelProvider {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from_provider(
            self,
        )?)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(s)?.into_provider()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
    }
}
