//! Single-pass weighted streaming softmax: accumulates softmax-weighted value
//! sums over dataset batches using running maxima, so the full logit matrix is
//! never materialized.

use crate::error::{AdlError, Result};

/// Accumulator state for one output pixel.
#[derive(Debug, Clone, Copy)]
pub struct PixelAccumulator {
    max: f64,
    norm: f64,
    wsum: f64,
}

impl Default for PixelAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl PixelAccumulator {
    pub fn new() -> Self {
        PixelAccumulator {
            max: f64::NEG_INFINITY,
            norm: 0.0,
            wsum: 0.0,
        }
    }

    /// Fold in one (logit, value) pair, rescaling the running sums when a new
    /// maximum logit arrives.
    #[inline]
    pub fn update(&mut self, logit: f64, value: f64) {
        if logit == f64::NEG_INFINITY {
            return;
        }
        if logit > self.max {
            if self.max != f64::NEG_INFINITY {
                let scale = (self.max - logit).exp();
                self.norm *= scale;
                self.wsum *= scale;
            }
            self.max = logit;
            self.norm += 1.0;
            self.wsum += value;
        } else {
            let w = (logit - self.max).exp();
            self.norm += w;
            self.wsum += w * value;
        }
    }

    /// Merge another accumulator (e.g. a per-batch partial result).
    pub fn merge(&mut self, other: &PixelAccumulator) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            if self.max != f64::NEG_INFINITY {
                let scale = (self.max - other.max).exp();
                self.norm *= scale;
                self.wsum *= scale;
            }
            self.max = other.max;
            self.norm += other.norm;
            self.wsum += other.wsum;
        } else {
            let scale = (other.max - self.max).exp();
            self.norm += scale * other.norm;
            self.wsum += scale * other.wsum;
        }
    }

    /// Softmax-weighted value sum; the weights sum to one by construction.
    pub fn value(&self) -> Result<f64> {
        if self.norm <= 0.0 || self.max == f64::NEG_INFINITY {
            return Err(AdlError::Numerical("empty support".into()));
        }
        Ok(self.wsum / self.norm)
    }

    /// Normalizer mass at the running maximum; the largest single softmax
    /// weight equals 1/norm when its logit attains the maximum.
    pub fn normalizer(&self) -> f64 {
        self.norm
    }
}

/// Per-output-pixel streaming accumulators.
#[derive(Debug, Clone)]
pub struct StreamingSoftmaxAccumulator {
    slots: Vec<PixelAccumulator>,
}

impl StreamingSoftmaxAccumulator {
    pub fn new(pixels: usize) -> Self {
        StreamingSoftmaxAccumulator {
            slots: vec![PixelAccumulator::new(); pixels],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// One dataset item: per-pixel logits and values.
    pub fn update(&mut self, logits: &[f64], values: &[f64]) -> Result<()> {
        if logits.len() != self.slots.len() || values.len() != self.slots.len() {
            return Err(AdlError::InvalidArgument(
                "accumulator update shape mismatch".into(),
            ));
        }
        for ((slot, &l), &v) in self.slots.iter_mut().zip(logits).zip(values) {
            slot.update(l, v);
        }
        Ok(())
    }

    /// One dataset item whose logit is shared by every pixel.
    pub fn update_uniform(&mut self, logit: f64, values: &[f64]) -> Result<()> {
        if values.len() != self.slots.len() {
            return Err(AdlError::InvalidArgument(
                "accumulator update shape mismatch".into(),
            ));
        }
        for (slot, &v) in self.slots.iter_mut().zip(values) {
            slot.update(logit, v);
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<Vec<f64>> {
        self.slots.iter().map(|s| s.value()).collect()
    }
}
