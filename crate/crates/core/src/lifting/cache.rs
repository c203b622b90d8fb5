use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{contraction_stats, lift_block, transform_block, ContractionStats, TransformedBlock};
use crate::error::Result;
use crate::model::ModelSource;

type Key = (usize, usize, u64);

/// Memo of transformed blocks keyed by base time (reduced mod the period for
/// periodic sources), `d` and `γ`. Entries are computed outside the lock, so
/// concurrent misses may compute the same block twice; results are identical.
#[derive(Default)]
pub struct BlockCache {
    blocks: Mutex<HashMap<Key, Arc<TransformedBlock>>>,
    stats: Mutex<HashMap<Key, ContractionStats>>,
}

impl BlockCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(source: &impl ModelSource, base: usize, d: usize, gamma: f64) -> Key {
        let b = source.period().map_or(base, |p| base % p);
        (b, d, gamma.to_bits())
    }

    /// Transformed block `(t, k)`.
    pub fn block(
        &self,
        source: &impl ModelSource,
        t: usize,
        k: usize,
        d: usize,
        gamma: f64,
    ) -> Result<Arc<TransformedBlock>> {
        let key = Self::key(source, t + d * k, d, gamma);
        if let Some(b) = self.blocks.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(b));
        }
        let tb = Arc::new(transform_block(lift_block(source, t, k, d)?, gamma)?);
        self.blocks
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| Arc::clone(&tb));
        Ok(tb)
    }

    pub fn stats(
        &self,
        source: &impl ModelSource,
        t: usize,
        k: usize,
        d: usize,
        gamma: f64,
    ) -> Result<ContractionStats> {
        let key = Self::key(source, t + d * k, d, gamma);
        if let Some(s) = self.stats.lock().expect("cache lock").get(&key) {
            return Ok(*s);
        }
        let s = contraction_stats(&*self.block(source, t, k, d, gamma)?)?;
        self.stats.lock().expect("cache lock").insert(key, s);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.blocks.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
