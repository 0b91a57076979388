//! Sensitivity fields: input-output Jacobians of the denoiser families,
//! computed analytically where closed forms exist and by central finite
//! differences as a general oracle, plus grayscale rendering of rows.

use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{save_image, ImageDataset};
use crate::denoisers::{optimal_predict, optimal_weights, Denoiser};
use crate::error::{AdlError, Result};
use crate::numerics::{stable_softmax, DenseMatrix};
use crate::schedule::NoiseSchedule;
use crate::spectral::{wiener_matrix, MaskSet, SpectralModel};

/// Default central-difference step in 64-bit arithmetic.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Row normalization applied when rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationMode {
    /// Each |row| mapped to [0, 1] by its own maximum.
    PerImage,
    /// All |rows| share one maximum.
    Joint,
    /// Absolute values without rescaling.
    Raw,
}

/// A set of Jacobian rows ∂f(x,t)[q]/∂x for selected output pixels.
#[derive(Debug, Clone)]
pub struct SensitivityField {
    rows: Vec<Vec<f64>>,
    pixels: Vec<usize>,
    t: usize,
}

impl SensitivityField {
    pub fn new(rows: Vec<Vec<f64>>, pixels: Vec<usize>, t: usize) -> Result<Self> {
        if rows.len() != pixels.len() {
            return Err(AdlError::InvalidArgument(
                "row/pixel count mismatch".into(),
            ));
        }
        if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(AdlError::Numerical("non-finite sensitivity row".into()));
        }
        Ok(SensitivityField { rows, pixels, t })
    }

    fn full(matrix: &DenseMatrix, t: usize) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..matrix.rows()).map(|q| matrix.row(q).to_vec()).collect();
        let pixels = (0..matrix.rows()).collect();
        SensitivityField::new(rows, pixels, t)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Row for a given output pixel, if present.
    pub fn row_for(&self, pixel: usize) -> Option<&[f64]> {
        self.pixels
            .iter()
            .position(|&p| p == pixel)
            .map(|i| self.rows[i].as_slice())
    }

    /// Square matrix view; requires all d rows in pixel order.
    pub fn to_matrix(&self) -> Result<DenseMatrix> {
        let d = self.rows.first().map(|r| r.len()).unwrap_or(0);
        if self.rows.len() != d || self.pixels.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(AdlError::InvalidArgument(
                "field does not hold a full Jacobian".into(),
            ));
        }
        let mut data = Vec::with_capacity(d * d);
        for r in &self.rows {
            data.extend_from_slice(r);
        }
        DenseMatrix::new(d, d, data)
    }

    /// Rows of the noise-prediction Jacobian, (e_q - sqrt(ab) s^q) / sigma.
    /// Kept only for comparison figures; image-prediction rows are the
    /// reported form.
    pub fn eps_form(&self, sched: &NoiseSchedule) -> Result<SensitivityField> {
        let sab = sched.sqrt_alpha_bar(self.t)?;
        let sig = sched.sigma(self.t)?;
        let rows = self
            .rows
            .iter()
            .zip(&self.pixels)
            .map(|(row, &q)| {
                row.iter()
                    .enumerate()
                    .map(|(p, &v)| {
                        let delta = if p == q { 1.0 } else { 0.0 };
                        (delta - sab * v) / sig
                    })
                    .collect()
            })
            .collect();
        SensitivityField::new(rows, self.pixels.clone(), self.t)
    }
}

/// Exact Jacobian of the optimal denoiser: the softmax-weighted covariance
/// of the training images, J = (sqrt(ab)/sigma^2) (sum_i w_i x0_i x0_i' -
/// x0_hat x0_hat').
pub fn analytic_jacobian_optimal(
    dataset: &ImageDataset,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<SensitivityField> {
    let weights = optimal_weights(dataset, x, t, sched)?;
    let x0_hat = optimal_predict(dataset, x, t, sched)?;
    let d = dataset.dim();
    let scale = sched.sqrt_alpha_bar(t)? / (1.0 - sched.alpha_bar(t)?);
    let mut data = vec![0.0f64; d * d];
    data.par_chunks_mut(d).enumerate().for_each(|(q, row)| {
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let img = dataset.image(i);
            let wq = w * img[q];
            for (p, cell) in row.iter_mut().enumerate() {
                *cell += wq * img[p];
            }
        }
        let hq = x0_hat[q];
        for (p, cell) in row.iter_mut().enumerate() {
            *cell = scale * (*cell - hq * x0_hat[p]);
        }
    });
    SensitivityField::full(&DenseMatrix::new(d, d, data)?, t)
}

/// Exact Jacobian rows of the masked denoiser. Row q uses the pixel's own
/// softmax weights w^q and is supported only on mask_q:
/// s^q = (sqrt(ab)/sigma^2) sum_i w_i^q x0_i[q] (mask_q ⊙ (x0_i - xbar^q)).
pub fn analytic_jacobian_masked(
    dataset: &ImageDataset,
    masks: &MaskSet,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<SensitivityField> {
    let d = dataset.dim();
    if x.len() != d {
        return Err(AdlError::InvalidArgument("input dim mismatch".into()));
    }
    if dataset.is_empty() {
        return Err(AdlError::InvalidArgument("empty dataset".into()));
    }
    let table = masks.masks_for(t)?;
    if table.len() != d {
        return Err(AdlError::InvalidArgument(format!(
            "mask table has {} pixels, dataset has {d}",
            table.len()
        )));
    }
    let sab = sched.sqrt_alpha_bar(t)?;
    let sigma2 = 1.0 - sched.alpha_bar(t)?;
    let scale = sab / sigma2;
    let n = dataset.len();
    let rows: Result<Vec<Vec<f64>>> = (0..d)
        .into_par_iter()
        .map(|q| {
            let mask = &table[q];
            let logits: Vec<f64> = (0..n)
                .map(|i| {
                    let img = dataset.image(i);
                    let mut d2 = 0.0f64;
                    for &p in mask {
                        let p = p as usize;
                        let diff = x[p] - sab * img[p];
                        d2 += diff * diff;
                    }
                    -d2 / (2.0 * sigma2)
                })
                .collect();
            let w = stable_softmax(&logits)?;
            // weighted mean over masked coordinates only
            let mut xbar = vec![0.0f64; mask.len()];
            for (i, &wi) in w.iter().enumerate() {
                let img = dataset.image(i);
                for (k, &p) in mask.iter().enumerate() {
                    xbar[k] += wi * img[p as usize];
                }
            }
            let mut row = vec![0.0f64; d];
            for (i, &wi) in w.iter().enumerate() {
                let img = dataset.image(i);
                let c = wi * img[q];
                if c == 0.0 {
                    continue;
                }
                for (k, &p) in mask.iter().enumerate() {
                    row[p as usize] += c * (img[p as usize] - xbar[k]);
                }
            }
            for v in &mut row {
                *v *= scale;
            }
            Ok(row)
        })
        .collect();
    SensitivityField::new(rows?, (0..d).collect(), t)
}

/// The Wiener denoiser's Jacobian is independent of x:
/// sqrt(ab) Sigma (ab Sigma + sigma^2 I)^-1.
pub fn wiener_sensitivity(
    model: &SpectralModel,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<SensitivityField> {
    SensitivityField::full(&wiener_matrix(model, t, sched)?, t)
}

/// Central-difference Jacobian rows:
/// row_q[p] = [f(x + h e_p)[q] - f(x - h e_p)[q]] / (2h).
pub fn fd_jacobian(
    denoiser: &dyn Denoiser,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rows: &[usize],
    step: f64,
) -> Result<SensitivityField> {
    if step <= 0.0 {
        return Err(AdlError::InvalidArgument("step must be positive".into()));
    }
    let d = denoiser.dim();
    if x.len() != d {
        return Err(AdlError::InvalidArgument("input dim mismatch".into()));
    }
    if let Some(&q) = rows.iter().find(|&&q| q >= d) {
        return Err(AdlError::InvalidArgument(format!(
            "row pixel {q} out of range"
        )));
    }
    let mut out = vec![vec![0.0f64; d]; rows.len()];
    for p in 0..d {
        let mut xp = x.to_vec();
        xp[p] += step;
        let fp = denoiser.predict_x0(&xp, t, sched)?;
        xp[p] = x[p] - step;
        let fm = denoiser.predict_x0(&xp, t, sched)?;
        for (r, &q) in rows.iter().enumerate() {
            out[r][p] = (fp[q] - fm[q]) / (2.0 * step);
        }
    }
    SensitivityField::new(out, rows.to_vec(), t)
}

/// Absolute rows mapped to [0, 1] grayscale buffers, one per row.
pub fn render_field(field: &SensitivityField, mode: NormalizationMode) -> Vec<Vec<f64>> {
    let abs_rows: Vec<Vec<f64>> = field
        .rows()
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).collect())
        .collect();
    match mode {
        NormalizationMode::Raw => abs_rows,
        NormalizationMode::PerImage => abs_rows
            .into_iter()
            .map(|r| {
                let max = r.iter().cloned().fold(0.0f64, f64::max);
                if max > 0.0 {
                    r.iter().map(|v| v / max).collect()
                } else {
                    r
                }
            })
            .collect(),
        NormalizationMode::Joint => {
            let max = abs_rows
                .iter()
                .flat_map(|r| r.iter().cloned())
                .fold(0.0f64, f64::max);
            if max > 0.0 {
                abs_rows
                    .into_iter()
                    .map(|r| r.iter().map(|v| v / max).collect())
                    .collect()
            } else {
                abs_rows
            }
        }
    }
}

/// Render rows and write one PGM per requested pixel into `dir`, named
/// `prefix_t{T}_q{Q}.pgm`. Returns the written paths.
pub fn save_field_images(
    field: &SensitivityField,
    mode: NormalizationMode,
    height: usize,
    width: usize,
    dir: impl AsRef<Path>,
    prefix: &str,
) -> Result<Vec<std::path::PathBuf>> {
    let rendered = render_field(field, mode);
    let mut paths = Vec::with_capacity(rendered.len());
    for (img, &q) in rendered.iter().zip(field.pixels()) {
        if img.len() != height * width {
            return Err(AdlError::InvalidArgument(
                "rendered row does not match image shape".into(),
            ));
        }
        let path = dir
            .as_ref()
            .join(format!("{prefix}_t{}_q{q}.pgm", field.t()));
        save_image(img, height, width, 1, (0.0, 1.0), &path)?;
        paths.push(path);
    }
    Ok(paths)
}
