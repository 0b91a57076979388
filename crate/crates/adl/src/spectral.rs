//! Dataset second-order statistics: mean, covariance eigensystem,
//! per-timestep SNR, Wiener operators, normalized sensitivity projectors,
//! and binarized per-pixel masks.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::ImageDataset;
use crate::error::{AdlError, Result};
use crate::numerics::{clamp_psd_eigenvalues, sym_eigen, DenseMatrix};
use crate::schedule::NoiseSchedule;

const MASK_MAGIC: &[u8; 4] = b"ADMK";
const MAX_SPECTRAL_DIM: usize = 16384;

/// Mean and covariance eigensystem of a dataset.
///
/// Eigenvalues are covariance eigenvalues (per-component variances), sorted
/// descending; eigenvector columns are orthonormal.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    mean: Vec<f64>,
    eigvecs: DenseMatrix, // d x r
    eigvals: Vec<f64>,    // length r
    n_samples: usize,
}

impl SpectralModel {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigvecs(&self) -> &DenseMatrix {
        &self.eigvecs
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    /// z = U' y
    fn project(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let r = self.rank();
        let mut z = vec![0.0; r];
        for k in 0..r {
            let mut acc = 0.0;
            for p in 0..d {
                acc += self.eigvecs.get(p, k) * y[p];
            }
            z[k] = acc;
        }
        z
    }

    /// y = U z
    fn lift(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut y = vec![0.0; d];
        for (k, &zk) in z.iter().enumerate() {
            if zk == 0.0 {
                continue;
            }
            for p in 0..d {
                y[p] += self.eigvecs.get(p, k) * zk;
            }
        }
        y
    }
}

/// Fit mean and covariance eigensystem. When N <= d the N x N Gram matrix is
/// eigendecomposed and lifted; otherwise the d x d covariance is
/// eigendecomposed directly. Rank r = min(N-1, d) is retained, padding the
/// basis with orthonormal fillers for zero eigenvalues.
pub fn fit(dataset: &ImageDataset) -> Result<SpectralModel> {
    let n = dataset.len();
    let d = dataset.dim();
    if n < 2 {
        return Err(AdlError::InvalidArgument("spectral fit needs N >= 2".into()));
    }
    if d > MAX_SPECTRAL_DIM {
        return Err(AdlError::InvalidArgument(format!(
            "flattened dimension {d} exceeds the spectral cap {MAX_SPECTRAL_DIM}; downscale the dataset first"
        )));
    }

    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(dataset.image(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let centered: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            dataset
                .image(i)
                .iter()
                .zip(&mean)
                .map(|(v, m)| v - m)
                .collect()
        })
        .collect();

    let r = (n - 1).min(d);
    let (mut eigvals, eigvecs) = if n <= d {
        fit_gram_route(&centered, d, r)?
    } else {
        fit_covariance_route(&centered, d, r)?
    };

    // Centering leaves O(eps^2)-sized residual variance on numerically
    // identical data; snap anything that far below the raw data scale to an
    // exact zero so degenerate directions stay degenerate.
    let data_scale: f64 = (0..n)
        .map(|i| dataset.image(i).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let floor = data_scale * 1e-24;
    for v in &mut eigvals {
        if *v < floor {
            *v = 0.0;
        }
    }

    Ok(SpectralModel {
        mean,
        eigvecs,
        eigvals,
        n_samples: n,
    })
}

fn fit_gram_route(centered: &[Vec<f64>], d: usize, r: usize) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = centered.len();
    let mut gram = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            gram[i * n + j] = dot;
            gram[j * n + i] = dot;
        }
    }
    let eig = sym_eigen(&DenseMatrix::new(n, n, gram)?)?;
    let mut gvals = eig.eigenvalues.clone();
    clamp_psd_eigenvalues(&mut gvals)?;
    let gmax = gvals.first().cloned().unwrap_or(0.0);
    let tol = gmax * 1e-12;

    let mut eigvals = Vec::with_capacity(r);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(r);
    for k in 0..r {
        let g = gvals[k];
        if g > tol && g > 0.0 {
            // lift: u = Xc' y / sqrt(g)
            let mut u = vec![0.0f64; d];
            for i in 0..n {
                let y = eig.eigenvectors.get(i, k);
                if y == 0.0 {
                    continue;
                }
                for (uc, xc) in u.iter_mut().zip(&centered[i]) {
                    *uc += y * xc;
                }
            }
            let inv = 1.0 / g.sqrt();
            for uc in &mut u {
                *uc *= inv;
            }
            eigvals.push(g / n as f64);
            columns.push(u);
        } else {
            eigvals.push(0.0);
            columns.push(Vec::new()); // filled below
        }
    }
    complete_orthonormal(&mut columns, d)?;

    let mut data = vec![0.0f64; d * r];
    for (k, col) in columns.iter().enumerate() {
        for p in 0..d {
            data[p * r + k] = col[p];
        }
    }
    Ok((eigvals, DenseMatrix::new(d, r, data)?))
}

fn fit_covariance_route(
    centered: &[Vec<f64>],
    d: usize,
    r: usize,
) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = centered.len();
    let mut cov = vec![0.0f64; d * d];
    for row in centered {
        for p in 0..d {
            let xp = row[p];
            if xp == 0.0 {
                continue;
            }
            let dst = &mut cov[p * d..(p + 1) * d];
            for (c, &xq) in dst.iter_mut().zip(row) {
                *c += xp * xq;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for c in &mut cov {
        *c *= inv_n;
    }
    let eig = sym_eigen(&DenseMatrix::new(d, d, cov)?)?;
    let mut vals = eig.eigenvalues.clone();
    clamp_psd_eigenvalues(&mut vals)?;
    // r = d here (N > d), so the full basis is kept
    let mut data = vec![0.0f64; d * r];
    for k in 0..r {
        for p in 0..d {
            data[p * r + k] = eig.eigenvectors.get(p, k);
        }
    }
    Ok((vals[..r].to_vec(), DenseMatrix::new(d, r, data)?))
}

/// Fill the empty slots in `columns` with unit vectors orthogonal to all
/// existing columns (Gram-Schmidt against canonical basis candidates).
fn complete_orthonormal(columns: &mut [Vec<f64>], d: usize) -> Result<()> {
    let mut basis: Vec<Vec<f64>> = columns.iter().filter(|c| !c.is_empty()).cloned().collect();
    let mut candidate = 0usize;
    for slot in columns.iter_mut() {
        if !slot.is_empty() {
            continue;
        }
        loop {
            if candidate >= d {
                return Err(AdlError::Numerical(
                    "failed to complete orthonormal basis".into(),
                ));
            }
            let mut v = vec![0.0f64; d];
            v[candidate] = 1.0;
            candidate += 1;
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                for (vc, bc) in v.iter_mut().zip(b) {
                    *vc -= dot * bc;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                for vc in &mut v {
                    *vc /= norm;
                }
                basis.push(v.clone());
                *slot = v;
                break;
            }
        }
    }
    Ok(())
}

/// Per-component signal-to-noise ratio: SNR_i = alpha_bar_t v_i / (1 - alpha_bar_t).
pub fn snr(model: &SpectralModel, t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let ab = sched.alpha_bar(t)?;
    let noise = 1.0 - ab;
    Ok(model.eigvals.iter().map(|&v| ab * v / noise).collect())
}

/// Gaussian posterior mean:
/// x0_hat = mu + sqrt(ab) Sigma (ab Sigma + sigma^2 I)^-1 (x - sqrt(ab) mu),
/// evaluated in the eigenbasis with factors sqrt(ab) v_i / (ab v_i + sigma^2).
pub fn wiener_predict(
    model: &SpectralModel,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if x.len() != model.dim() {
        return Err(AdlError::InvalidArgument("input dim mismatch".into()));
    }
    let ab = sched.alpha_bar(t)?;
    let sab = ab.sqrt();
    let sig2 = 1.0 - ab;
    let y: Vec<f64> = x.iter().zip(&model.mean).map(|(xi, m)| xi - sab * m).collect();
    let mut z = model.project(&y);
    for (zk, &v) in z.iter_mut().zip(&model.eigvals) {
        let denom = ab * v + sig2;
        *zk *= if denom > 0.0 { sab * v / denom } else { 0.0 };
    }
    let shrunk = model.lift(&z);
    Ok(model
        .mean
        .iter()
        .zip(&shrunk)
        .map(|(m, s)| m + s)
        .collect())
}

/// Per-component shrinkage factors SNR_i / (SNR_i + 1).
pub fn projector_factors(model: &SpectralModel, t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    Ok(snr(model, t, sched)?
        .iter()
        .map(|&s| s / (s + 1.0))
        .collect())
}

/// Normalized sensitivity projector S_t = U diag(SNR/(SNR+1)) U'.
pub fn sensitivity_projector(
    model: &SpectralModel,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<DenseMatrix> {
    let factors = projector_factors(model, t, sched)?;
    scaled_outer(model, &factors)
}

/// The exact Jacobian of the Wiener denoiser:
/// sqrt(ab) Sigma (ab Sigma + sigma^2 I)^-1 = (1/sqrt(ab)) U diag(SNR/(SNR+1)) U'.
pub fn wiener_matrix(model: &SpectralModel, t: usize, sched: &NoiseSchedule) -> Result<DenseMatrix> {
    let ab = sched.alpha_bar(t)?;
    let scale = 1.0 / ab.sqrt();
    let factors: Vec<f64> = projector_factors(model, t, sched)?
        .iter()
        .map(|f| f * scale)
        .collect();
    scaled_outer(model, &factors)
}

fn scaled_outer(model: &SpectralModel, factors: &[f64]) -> Result<DenseMatrix> {
    let d = model.dim();
    let r = model.rank();
    let mut data = vec![0.0f64; d * d];
    data.par_chunks_mut(d).enumerate().for_each(|(p, row)| {
        for k in 0..r {
            let f = factors[k];
            if f == 0.0 {
                continue;
            }
            let upk = model.eigvecs.get(p, k) * f;
            if upk == 0.0 {
                continue;
            }
            for (q, cell) in row.iter_mut().enumerate() {
                *cell += upk * model.eigvecs.get(q, k);
            }
        }
    });
    DenseMatrix::new(d, d, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskProvenance {
    Spectral,
    External,
}

/// Per-timestep, per-output-pixel sparse binary masks.
#[derive(Debug, Clone)]
pub struct MaskSet {
    entries: BTreeMap<u32, Vec<Vec<u32>>>,
    tau: Option<f64>,
    provenance: MaskProvenance,
}

impl MaskSet {
    pub fn from_entries(
        entries: BTreeMap<u32, Vec<Vec<u32>>>,
        tau: Option<f64>,
        provenance: MaskProvenance,
    ) -> Result<Self> {
        let set = MaskSet {
            entries,
            tau,
            provenance,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(AdlError::InvalidArgument("empty timestep table".into()));
        }
        for (t, masks) in &self.entries {
            let d = masks.len() as u32;
            for (q, mask) in masks.iter().enumerate() {
                let q = q as u32;
                if !mask.contains(&q) {
                    return Err(AdlError::InvalidArgument(format!(
                        "diagonal pixel absent: mask for pixel {q} at t={t}"
                    )));
                }
                let mut seen = vec![false; d as usize];
                for &p in mask {
                    if p >= d {
                        return Err(AdlError::InvalidArgument(format!(
                            "mask index {p} out of range at t={t}"
                        )));
                    }
                    if seen[p as usize] {
                        return Err(AdlError::InvalidArgument(format!(
                            "duplicate mask index {p} at t={t}"
                        )));
                    }
                    seen[p as usize] = true;
                }
            }
        }
        Ok(())
    }

    pub fn timesteps(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().cloned()
    }

    pub fn masks_for(&self, t: usize) -> Result<&[Vec<u32>]> {
        self.entries
            .get(&(t as u32))
            .map(|m| m.as_slice())
            .ok_or_else(|| {
                AdlError::InvalidArgument(format!("no masks stored for timestep {t}"))
            })
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn provenance(&self) -> MaskProvenance {
        self.provenance
    }

    /// Merge mask tables for different timesteps.
    pub fn merge(mut self, other: MaskSet) -> Result<MaskSet> {
        self.entries.extend(other.entries);
        self.validate()?;
        Ok(self)
    }
}

/// Binarize projector rows: mask_q = { p : |S[q,p]| >= tau * max_p |S[q,p]| },
/// with the diagonal pixel q always included.
pub fn build_masks(
    model: &SpectralModel,
    t: usize,
    sched: &NoiseSchedule,
    tau: f64,
) -> Result<MaskSet> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(AdlError::InvalidArgument(format!(
            "tau {tau} outside [0, 1]"
        )));
    }
    let s = sensitivity_projector(model, t, sched)?;
    let d = model.dim();
    let masks: Vec<Vec<u32>> = (0..d)
        .into_par_iter()
        .map(|q| {
            let row = s.row(q);
            let max = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let thr = tau * max;
            let mut mask: Vec<u32> = row
                .iter()
                .enumerate()
                .filter(|(p, v)| v.abs() >= thr || *p == q)
                .map(|(p, _)| p as u32)
                .collect();
            mask.sort_unstable();
            mask
        })
        .collect();
    let mut entries = BTreeMap::new();
    entries.insert(t as u32, masks);
    MaskSet::from_entries(entries, Some(tau), MaskProvenance::Spectral)
}

/// Mask file: "ADMK" | u32 T_entries | per entry: u32 timestep, u32 d,
/// then d length-prefixed u32 index lists; little-endian.
pub fn save_masks(masks: &MaskSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MASK_MAGIC)?;
    w.write_all(&(masks.entries.len() as u32).to_le_bytes())?;
    for (t, table) in &masks.entries {
        w.write_all(&t.to_le_bytes())?;
        w.write_all(&(table.len() as u32).to_le_bytes())?;
        for mask in table {
            w.write_all(&(mask.len() as u32).to_le_bytes())?;
            for &p in mask {
                w.write_all(&p.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn load_masks(path: impl AsRef<Path>) -> Result<MaskSet> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut offset = 0u64;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| AdlError::format(0, "truncated mask header"))?;
    offset += 4;
    if &magic != MASK_MAGIC {
        return Err(AdlError::format(0, "mask file magic mismatch"));
    }
    let read_u32 = |r: &mut BufReader<File>, offset: &mut u64, what: &str| -> Result<u32> {
        let mut buf = [0u8; 4];
        let at = *offset;
        r.read_exact(&mut buf)
            .map_err(|_| AdlError::format(at, format!("truncated while reading {what}")))?;
        *offset += 4;
        Ok(u32::from_le_bytes(buf))
    };
    let t_entries = read_u32(&mut r, &mut offset, "entry count")?;
    if t_entries == 0 {
        return Err(AdlError::format(4, "empty timestep table"));
    }
    let mut entries = BTreeMap::new();
    for _ in 0..t_entries {
        let t = read_u32(&mut r, &mut offset, "timestep")?;
        let d = read_u32(&mut r, &mut offset, "pixel count")? as usize;
        let mut table = Vec::with_capacity(d);
        for _ in 0..d {
            let len = read_u32(&mut r, &mut offset, "mask length")? as usize;
            let mut mask = Vec::with_capacity(len);
            for _ in 0..len {
                mask.push(read_u32(&mut r, &mut offset, "mask index")?);
            }
            table.push(mask);
        }
        entries.insert(t, table);
    }
    MaskSet::from_entries(entries, None, MaskProvenance::External)
}
