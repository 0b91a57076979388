//! Closed-form denoiser families: the optimal empirical denoiser, its
//! per-pixel masked relaxation, the Gaussian (Wiener) denoiser, and the
//! patch-equivariant denoiser.

pub mod patch;
pub mod streaming;

pub use patch::{kamb_patch_schedule, patch_predict, PatchConfig};
pub use streaming::{PixelAccumulator, StreamingSoftmaxAccumulator};

use rayon::prelude::*;

use crate::dataset::ImageDataset;
use crate::error::{AdlError, Result};
use crate::numerics::stable_softmax;
use crate::schedule::NoiseSchedule;
use crate::spectral::{wiener_predict, MaskSet, SpectralModel};

/// A clean-image predictor evaluated at a noisy input and a timestep.
pub trait Denoiser {
    fn predict_x0(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>>;

    /// Short label for manifests and reports.
    fn descriptor(&self) -> String;

    /// Flattened data dimension the denoiser operates on.
    fn dim(&self) -> usize;
}

/// Softmax weights of the optimal denoiser:
/// w_i = softmax_i( -||x - sqrt(ab) x0_i||^2 / (2 sigma^2) ).
pub fn optimal_weights(
    dataset: &ImageDataset,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if x.len() != dataset.dim() {
        return Err(AdlError::InvalidArgument("input dim mismatch".into()));
    }
    if dataset.is_empty() {
        return Err(AdlError::InvalidArgument("empty dataset".into()));
    }
    let sab = sched.sqrt_alpha_bar(t)?;
    let inv_two_sigma2 = 1.0 / (2.0 * (1.0 - sched.alpha_bar(t)?));
    let logits: Vec<f64> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let img = dataset.image(i);
            let d2: f64 = x
                .iter()
                .zip(img)
                .map(|(xi, x0)| {
                    let diff = xi - sab * x0;
                    diff * diff
                })
                .sum();
            -d2 * inv_two_sigma2
        })
        .collect();
    stable_softmax(&logits)
}

/// The exact posterior mean under the empirical data distribution:
/// a softmax-weighted average of the training images.
pub fn optimal_predict(
    dataset: &ImageDataset,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let weights = optimal_weights(dataset, x, t, sched)?;
    let d = dataset.dim();
    let mut out = vec![0.0f64; d];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(dataset.image(i)) {
            *o += w * v;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(AdlError::Numerical("non-finite prediction".into()));
    }
    Ok(out)
}

/// Per-pixel masked denoiser: each output pixel q gets its own softmax over
/// the dataset, with distances restricted to the pixel's binary mask. The
/// dataset is consumed in batches through streaming accumulators, so results
/// are identical (up to 1e-12) for any batch partition.
pub fn masked_predict(
    dataset: &ImageDataset,
    masks: &MaskSet,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    batch: usize,
) -> Result<Vec<f64>> {
    let d = dataset.dim();
    if x.len() != d {
        return Err(AdlError::InvalidArgument("input dim mismatch".into()));
    }
    if dataset.is_empty() {
        return Err(AdlError::InvalidArgument("empty dataset".into()));
    }
    if batch == 0 {
        return Err(AdlError::InvalidArgument("batch size must be >= 1".into()));
    }
    let table = masks.masks_for(t)?;
    if table.len() != d {
        return Err(AdlError::InvalidArgument(format!(
            "mask table has {} pixels, dataset has {d}",
            table.len()
        )));
    }
    let sab = sched.sqrt_alpha_bar(t)?;
    let inv_two_sigma2 = 1.0 / (2.0 * (1.0 - sched.alpha_bar(t)?));
    let n = dataset.len();

    let out: Result<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|q| {
            let mask = &table[q];
            let mut acc = PixelAccumulator::new();
            let mut start = 0usize;
            while start < n {
                let stop = (start + batch).min(n);
                let mut partial = PixelAccumulator::new();
                for i in start..stop {
                    let img = dataset.image(i);
                    let mut d2 = 0.0f64;
                    for &p in mask {
                        let p = p as usize;
                        let diff = x[p] - sab * img[p];
                        d2 += diff * diff;
                    }
                    partial.update(-d2 * inv_two_sigma2, img[q]);
                }
                acc.merge(&partial);
                start = stop;
            }
            acc.value()
        })
        .collect();
    let out = out?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(AdlError::Numerical("non-finite prediction".into()));
    }
    Ok(out)
}

/// Exact empirical posterior-mean denoiser over a fixed dataset.
pub struct OptimalDenoiser<'a> {
    pub dataset: &'a ImageDataset,
}

impl Denoiser for OptimalDenoiser<'_> {
    fn predict_x0(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        optimal_predict(self.dataset, x, t, sched)
    }

    fn descriptor(&self) -> String {
        format!("optimal(n={})", self.dataset.len())
    }

    fn dim(&self) -> usize {
        self.dataset.dim()
    }
}

/// Per-pixel masked denoiser over a fixed dataset and mask table.
pub struct MaskedDenoiser<'a> {
    pub dataset: &'a ImageDataset,
    pub masks: &'a MaskSet,
    pub batch: usize,
}

impl Denoiser for MaskedDenoiser<'_> {
    fn predict_x0(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        masked_predict(self.dataset, self.masks, x, t, sched, self.batch)
    }

    fn descriptor(&self) -> String {
        match self.masks.tau() {
            Some(tau) => format!("masked(n={}, tau={tau})", self.dataset.len()),
            None => format!("masked(n={}, external)", self.dataset.len()),
        }
    }

    fn dim(&self) -> usize {
        self.dataset.dim()
    }
}

/// Gaussian posterior-mean denoiser over a fitted spectral model.
pub struct WienerDenoiser<'a> {
    pub model: &'a SpectralModel,
}

impl Denoiser for WienerDenoiser<'_> {
    fn predict_x0(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        wiener_predict(self.model, x, t, sched)
    }

    fn descriptor(&self) -> String {
        format!("wiener(rank={})", self.model.rank())
    }

    fn dim(&self) -> usize {
        self.model.dim()
    }
}

/// Patch-equivariant denoiser over a dataset and patch-size configuration.
pub struct PatchDenoiser<'a> {
    pub dataset: &'a ImageDataset,
    pub config: &'a PatchConfig,
}

impl Denoiser for PatchDenoiser<'_> {
    fn predict_x0(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        patch_predict(self.dataset, self.config, x, t, sched)
    }

    fn descriptor(&self) -> String {
        format!(
            "patch(n={}, stride={})",
            self.dataset.len(),
            self.config.translation_stride()
        )
    }

    fn dim(&self) -> usize {
        self.dataset.dim()
    }
}
