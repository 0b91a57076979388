//! Patch-based equivariant denoiser: square cyclic patches, translation
//! group realized as toroidal shifts (optionally subsampled by a stride).

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dataset::ImageDataset;
use crate::denoisers::streaming::PixelAccumulator;
use crate::error::{AdlError, Result};
use crate::schedule::NoiseSchedule;

/// Fixed pair-chunk size so that parallel reduction order is independent of
/// the thread count.
const PAIR_CHUNK: usize = 1024;

/// Per-timestep square patch sizes plus a translation-group stride.
#[derive(Debug, Clone)]
pub struct PatchConfig {
    sizes: BTreeMap<usize, usize>,
    translation_stride: usize,
}

impl PatchConfig {
    pub fn new(sizes: BTreeMap<usize, usize>, translation_stride: usize) -> Result<Self> {
        if sizes.is_empty() {
            return Err(AdlError::InvalidArgument("no patch sizes given".into()));
        }
        if translation_stride < 1 {
            return Err(AdlError::InvalidArgument("stride must be >= 1".into()));
        }
        if sizes.values().any(|&s| s < 1) {
            return Err(AdlError::InvalidArgument("patch size must be >= 1".into()));
        }
        Ok(PatchConfig {
            sizes,
            translation_stride,
        })
    }

    /// Same patch size at every timestep.
    pub fn uniform(size: usize, translation_stride: usize) -> Result<Self> {
        let mut sizes = BTreeMap::new();
        sizes.insert(1usize, size);
        Self::new(sizes, translation_stride)
    }

    pub fn translation_stride(&self) -> usize {
        self.translation_stride
    }

    pub fn sizes(&self) -> &BTreeMap<usize, usize> {
        &self.sizes
    }

    /// Patch size for timestep `t`: exact entry, else the nearest grid point
    /// (ties resolve toward the larger timestep).
    pub fn size_for(&self, t: usize) -> usize {
        if let Some(&s) = self.sizes.get(&t) {
            return s;
        }
        let mut best_key = *self.sizes.keys().next().unwrap();
        let mut best_dist = usize::MAX;
        for &k in self.sizes.keys() {
            let dist = k.abs_diff(t);
            if dist < best_dist || (dist == best_dist && k > best_key) {
                best_dist = dist;
                best_key = k;
            }
        }
        self.sizes[&best_key]
    }
}

/// Patch-size presets fitted against trained models, mapped onto the 10-step
/// grid of a T=1000 schedule (timesteps 1000, 900, ..., 100).
pub fn kamb_patch_schedule(dataset_name: &str) -> Result<PatchConfig> {
    const PRESETS: &[(&str, [usize; 10])] = &[
        ("cifar10", [32, 32, 32, 29, 25, 17, 13, 9, 7, 3]),
        ("celeba", [64, 64, 57, 49, 45, 25, 17, 17, 9, 3]),
        ("afhq", [64, 64, 45, 33, 25, 17, 17, 9, 9, 3]),
        ("mnist", [28, 28, 23, 23, 17, 17, 17, 13, 9, 9]),
        ("fashion_mnist", [28, 28, 25, 23, 17, 17, 13, 13, 9, 9]),
    ];
    let key = dataset_name.to_ascii_lowercase().replace('-', "_");
    let key = if key == "celeba_hq" { "celeba".to_string() } else { key };
    for (name, sizes) in PRESETS {
        if *name == key {
            let mut map = BTreeMap::new();
            for (i, &s) in sizes.iter().enumerate() {
                map.insert(1000 - 100 * i, s);
            }
            return PatchConfig::new(map, 1);
        }
    }
    let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
    Err(AdlError::Config(format!(
        "unknown patch preset '{dataset_name}'; known presets: {}",
        known.join(", ")
    )))
}

/// Cyclic translation by (dy, dx): out[y][x] = img[(y - dy) mod H][(x - dx) mod W].
fn shift_image(img: &[f64], h: usize, w: usize, c: usize, dy: usize, dx: usize) -> Vec<f64> {
    if dy == 0 && dx == 0 {
        return img.to_vec();
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        let sy = (y + h - dy) % h;
        for x in 0..w {
            let sx = (x + w - dx) % w;
            let src = (sy * w + sx) * c;
            let dst = (y * w + x) * c;
            out[dst..dst + c].copy_from_slice(&img[src..src + c]);
        }
    }
    out
}

/// Cyclic box sum of a spatial map over p x p windows (separable passes).
fn cyclic_patch_sums(map: &[f64], h: usize, w: usize, p: usize) -> Vec<f64> {
    let hrad = (p - 1) / 2;
    let mut rows = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for k in 0..p {
                let xx = (x + w + k - hrad) % w;
                acc += map[y * w + xx];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for k in 0..p {
                let yy = (y + h + k - hrad) % h;
                acc += rows[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Patch-based optimal denoiser with cyclic translation augmentation: each
/// output pixel is a softmax-weighted average of shifted dataset pixels,
/// weighted by masked distances over a square patch centered at the pixel.
pub fn patch_predict(
    dataset: &ImageDataset,
    cfg: &PatchConfig,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let (h, w, c) = (dataset.height(), dataset.width(), dataset.channels());
    let d = dataset.dim();
    if x.len() != d {
        return Err(AdlError::InvalidArgument("input dim mismatch".into()));
    }
    let p = cfg.size_for(t);
    let full_image = p >= h && p >= w;
    if !full_image {
        if p.is_multiple_of(2) {
            return Err(AdlError::InvalidArgument(format!(
                "even patch size {p}: center pixel undefined"
            )));
        }
        if p > h.min(w) {
            return Err(AdlError::InvalidArgument(format!(
                "patch size {p} exceeds image side"
            )));
        }
    }
    let sab = sched.sqrt_alpha_bar(t)?;
    let sigma2 = 1.0 - sched.alpha_bar(t)?;
    let inv_two_sigma2 = 1.0 / (2.0 * sigma2);
    let stride = cfg.translation_stride;

    let shifts: Vec<(usize, usize)> = (0..h)
        .step_by(stride)
        .flat_map(|dy| (0..w).step_by(stride).map(move |dx| (dy, dx)))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..dataset.len())
        .flat_map(|i| (0..shifts.len()).map(move |g| (i, g)))
        .collect();

    // Fixed-size chunks keep the merge order independent of thread count.
    let partials: Vec<Vec<PixelAccumulator>> = pairs
        .par_chunks(PAIR_CHUNK)
        .map(|chunk| {
            let mut slots = vec![PixelAccumulator::new(); d];
            for &(i, g) in chunk {
                let (dy, dx) = shifts[g];
                let shifted = shift_image(dataset.image(i), h, w, c, dy, dx);
                let mut dist = vec![0.0f64; h * w];
                for pix in 0..h * w {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        let idx = pix * c + ch;
                        let diff = x[idx] - sab * shifted[idx];
                        acc += diff * diff;
                    }
                    dist[pix] = acc;
                }
                let sums = if full_image {
                    let total: f64 = dist.iter().sum();
                    vec![total; h * w]
                } else {
                    cyclic_patch_sums(&dist, h, w, p)
                };
                for pix in 0..h * w {
                    let logit = -sums[pix] * inv_two_sigma2;
                    for ch in 0..c {
                        let idx = pix * c + ch;
                        slots[idx].update(logit, shifted[idx]);
                    }
                }
            }
            slots
        })
        .collect();

    let mut merged = vec![PixelAccumulator::new(); d];
    for partial in &partials {
        for (m, p) in merged.iter_mut().zip(partial) {
            m.merge(p);
        }
    }
    let out: Result<Vec<f64>> = merged.iter().map(|s| s.value()).collect();
    let out = out?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(AdlError::Numerical("non-finite patch prediction".into()));
    }
    Ok(out)
}
