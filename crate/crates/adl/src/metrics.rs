//! Comparison metrics: MSE, r-squared, normalized nearest-neighbor distance
//! to the training set, and per-step series along sampling trajectories.

use std::io::Write;
use std::path::Path;

use crate::dataset::ImageDataset;
use crate::error::{AdlError, Result};
use crate::sampler::Trajectory;

/// Per-sample metric values with their summary statistics.
#[derive(Debug, Clone)]
pub struct MetricReport {
    name: String,
    values: Vec<f64>,
    mean: f64,
    std: f64,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(AdlError::InvalidArgument("metric needs >= 1 sample".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AdlError::Numerical("non-finite metric value".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(MetricReport {
            name: name.into(),
            values,
            mean,
            std: var.sqrt(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    /// CSV with fixed columns (sample_id, value) and a trailing summary pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out.push_str(&format!("mean,{}\n", self.mean));
        out.push_str(&format!("std,{}\n", self.std));
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path.as_ref())?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

fn check_batch_shapes(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(AdlError::InvalidArgument(
            "batches must be nonempty and equally sized".into(),
        ));
    }
    for (x, y) in a.iter().zip(b) {
        if x.len() != y.len() || x.is_empty() {
            return Err(AdlError::InvalidArgument("sample shape mismatch".into()));
        }
    }
    Ok(())
}

/// Per-sample mean of squared pixel differences.
pub fn mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<MetricReport> {
    check_batch_shapes(a, b)?;
    let values = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(xi, yi)| (xi - yi) * (xi - yi))
                .sum::<f64>()
                / x.len() as f64
        })
        .collect();
    MetricReport::new("mse", values)
}

/// Coefficient of determination per sample:
/// 1 - ||pred - ref||^2 / ||ref - mean(ref)||^2, where mean(ref) is the
/// sample's own scalar pixel mean. Zero means "predict the sample's mean
/// gray"; negative means worse than that baseline.
pub fn r_squared(pred: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<MetricReport> {
    check_batch_shapes(pred, reference)?;
    let mut values = Vec::with_capacity(pred.len());
    for (p, r) in pred.iter().zip(reference) {
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let denom: f64 = r.iter().map(|v| (v - mean) * (v - mean)).sum();
        if denom <= 0.0 {
            return Err(AdlError::InvalidArgument(
                "undefined r^2: constant reference sample".into(),
            ));
        }
        let num: f64 = p.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
        values.push(1.0 - num / denom);
    }
    MetricReport::new("r_squared", values)
}

/// Resolution-comparable distance to the closest training image:
/// ||img - x0_i||_2 / sqrt(d) after mapping the dataset's declared value
/// range onto [0, 1]. Ties break toward the lowest index.
pub fn nearest_neighbor_distance(dataset: &ImageDataset, img: &[f64]) -> Result<(f64, usize)> {
    if dataset.is_empty() {
        return Err(AdlError::InvalidArgument("empty dataset".into()));
    }
    let d = dataset.dim();
    if img.len() != d {
        return Err(AdlError::InvalidArgument("image dim mismatch".into()));
    }
    let (lo, hi) = dataset.value_range();
    let span = hi - lo;
    if span <= 0.0 {
        return Err(AdlError::InvalidArgument("degenerate value range".into()));
    }
    let mut best = (f64::INFINITY, 0usize);
    for i in 0..dataset.len() {
        let x0 = dataset.image(i);
        let d2: f64 = img
            .iter()
            .zip(x0)
            .map(|(a, b)| {
                let diff = (a - b) / span;
                diff * diff
            })
            .sum();
        let dist = (d2 / d as f64).sqrt();
        if dist < best.0 {
            best = (dist, i);
        }
    }
    Ok(best)
}

fn check_grids(trajs: &[&Trajectory]) -> Result<Vec<usize>> {
    let first = trajs
        .first()
        .ok_or_else(|| AdlError::InvalidArgument("no trajectories".into()))?;
    for t in trajs.iter().skip(1) {
        if t.timesteps != first.timesteps {
            return Err(AdlError::InvalidArgument(
                "trajectories use different timestep grids".into(),
            ));
        }
    }
    Ok(first.timesteps.clone())
}

/// Per-grid-point MSE between the clean predictions of two trajectory
/// batches; one report per step.
pub fn trajectory_mse(a: &[Trajectory], b: &[Trajectory]) -> Result<Vec<MetricReport>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(AdlError::InvalidArgument(
            "trajectory batches must be nonempty and equally sized".into(),
        ));
    }
    let refs: Vec<&Trajectory> = a.iter().chain(b.iter()).collect();
    let grid = check_grids(&refs)?;
    let mut out = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let pa: Vec<Vec<f64>> = a.iter().map(|tr| tr.x0_preds[k].clone()).collect();
        let pb: Vec<Vec<f64>> = b.iter().map(|tr| tr.x0_preds[k].clone()).collect();
        let mut report = mse(&pa, &pb)?;
        report.name = format!("mse_t{t}");
        out.push(report);
    }
    Ok(out)
}

/// Per-grid-point nearest-neighbor distance of the clean predictions to the
/// training set; one report per step.
pub fn trajectory_nn(
    trajs: &[Trajectory],
    dataset: &ImageDataset,
) -> Result<Vec<MetricReport>> {
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let grid = check_grids(&refs)?;
    let mut out = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let values: Result<Vec<f64>> = trajs
            .iter()
            .map(|tr| nearest_neighbor_distance(dataset, &tr.x0_preds[k]).map(|(d, _)| d))
            .collect();
        out.push(MetricReport::new(format!("nn_t{t}"), values?)?);
    }
    Ok(out)
}
