//! Command implementations behind the CLI subcommands. Each command resolves
//! a layered key=value configuration, produces its artifacts under `out`, and
//! writes a manifest sufficient to reproduce the run bit-exactly.

use std::path::{Path, PathBuf};

use crate::config::KeyValueConfig;
use crate::dataset::{
    inject_pattern, load_cifar_binary, load_idx, load_raw_tensor, rescale, save_image,
    save_raw_tensor, subset, w_stencil, ImageDataset, PerturbationSpec,
};
use crate::denoisers::{
    kamb_patch_schedule, masked_predict, optimal_predict, patch_predict, Denoiser, PatchConfig,
};
use crate::error::{AdlError, Result};
use crate::manifest::Manifest;
use crate::metrics::{mse, nearest_neighbor_distance, r_squared, MetricReport};
use crate::sampler::{ddim_sample_from, gaussian_noise, timestep_grid, Trajectory};
use crate::schedule::{forward_noise, linear_schedule, NoiseSchedule};
use crate::sensitivity::{
    analytic_jacobian_masked, analytic_jacobian_optimal, fd_jacobian, save_field_images,
    wiener_sensitivity, NormalizationMode, SensitivityField, DEFAULT_FD_STEP,
};
use crate::spectral::{
    build_masks, fit, load_masks, save_masks, snr, wiener_predict, MaskSet, SpectralModel,
};

/// Defaults shared by every subcommand; command-specific keys default inline.
fn base_defaults() -> KeyValueConfig {
    let mut cfg = KeyValueConfig::new();
    cfg.set("t_count", 1000);
    cfg.set("beta_start", 1e-4);
    cfg.set("beta_end", 0.02);
    cfg.set("steps", 10);
    cfg.set("seed", 0);
    cfg.set("tau", 0.02);
    cfg.set("batch", 64);
    cfg.set("stride", 1);
    cfg
}

/// defaults < config file < command-line overrides.
pub fn resolve_config(
    config_file: Option<&Path>,
    overrides: &[String],
) -> Result<KeyValueConfig> {
    let mut cfg = base_defaults();
    if let Some(path) = config_file {
        cfg = cfg.overridden_by(&KeyValueConfig::from_file(path)?);
    }
    cfg = cfg.overridden_by(&KeyValueConfig::from_pairs(overrides)?);
    Ok(cfg)
}

fn out_dir(cfg: &KeyValueConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.require("out")?);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn build_schedule(cfg: &KeyValueConfig) -> Result<NoiseSchedule> {
    linear_schedule(
        cfg.require_parsed("t_count")?,
        cfg.require_parsed("beta_start")?,
        cfg.require_parsed("beta_end")?,
    )
}

fn grid_or_list(cfg: &KeyValueConfig, sched: &NoiseSchedule) -> Result<Vec<usize>> {
    match cfg.get_list::<usize>("timesteps")? {
        Some(ts) if !ts.is_empty() => Ok(ts),
        _ => timestep_grid(sched.steps(), cfg.require_parsed("steps")?),
    }
}

/// Load the dataset named by `dataset`, honoring `dataset_format`
/// (idx | cifar | raw, inferred from the extension when absent), then the
/// optional `subset` / `subset_seed` and `range=lo,hi` keys.
fn load_dataset(cfg: &KeyValueConfig) -> Result<(ImageDataset, PathBuf)> {
    let path = PathBuf::from(cfg.require("dataset")?);
    if !path.exists() {
        return Err(AdlError::Config(format!(
            "dataset file {} does not exist",
            path.display()
        )));
    }
    let format = match cfg.get("dataset_format") {
        Some(f) => f.to_string(),
        None => {
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .unwrap_or("")
                .to_ascii_lowercase();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if ext == "idx" || name.ends_with("-ubyte") {
                "idx".into()
            } else if ext == "bin" {
                "cifar".into()
            } else if ext == "adt" {
                "raw".into()
            } else {
                return Err(AdlError::Config(format!(
                    "cannot infer dataset_format from '{name}'; set dataset_format=idx|cifar|raw"
                )));
            }
        }
    };
    let mut ds = match format.as_str() {
        "idx" => load_idx(&path)?,
        "cifar" => load_cifar_binary(&[&path])?,
        "raw" => load_raw_tensor(&path)?,
        other => {
            return Err(AdlError::Config(format!(
                "unknown dataset_format '{other}' (expected idx|cifar|raw)"
            )))
        }
    };
    if let Some(count) = cfg.get_parsed::<usize>("subset")? {
        let seed = cfg.get_or("subset_seed", 0u64)?;
        ds = subset(&ds, count, seed)?;
    }
    if let Some(range) = cfg.get_list::<f64>("range")? {
        if range.len() != 2 {
            return Err(AdlError::Config("range wants exactly lo,hi".into()));
        }
        ds = rescale(&ds, (range[0], range[1]))?;
    }
    Ok((ds, path))
}

/// Either load `mask_file` or build masks from the dataset's spectral model
/// at every needed timestep.
fn acquire_masks(
    dataset: &ImageDataset,
    model: Option<&SpectralModel>,
    sched: &NoiseSchedule,
    cfg: &KeyValueConfig,
    needed: &[usize],
) -> Result<MaskSet> {
    if let Some(path) = cfg.get("mask_file") {
        let masks = load_masks(path)?;
        for &t in needed {
            masks.masks_for(t)?;
        }
        return Ok(masks);
    }
    let tau: f64 = cfg.require_parsed("tau")?;
    let owned;
    let model = match model {
        Some(m) => m,
        None => {
            owned = fit(dataset)?;
            &owned
        }
    };
    let mut acc: Option<MaskSet> = None;
    for &t in needed {
        let m = build_masks(model, t, sched, tau)?;
        acc = Some(match acc {
            None => m,
            Some(prev) => prev.merge(m)?,
        });
    }
    acc.ok_or_else(|| AdlError::Config("no timesteps requested".into()))
}

fn patch_config(cfg: &KeyValueConfig, dataset: &ImageDataset) -> Result<PatchConfig> {
    let stride: usize = cfg.require_parsed("stride")?;
    if let Some(preset) = cfg.get("patch_preset") {
        let base = kamb_patch_schedule(preset)?;
        return PatchConfig::new(base.sizes().clone(), stride);
    }
    let size = cfg.get_or(
        "patch_size",
        dataset.height().max(dataset.width()),
    )?;
    PatchConfig::uniform(size, stride)
}

/// One denoiser instance with owned auxiliary state, borrowing the dataset.
pub enum AnyDenoiser<'a> {
    Optimal {
        dataset: &'a ImageDataset,
    },
    Masked {
        dataset: &'a ImageDataset,
        masks: MaskSet,
        batch: usize,
    },
    Wiener {
        model: SpectralModel,
    },
    Patch {
        dataset: &'a ImageDataset,
        config: PatchConfig,
    },
}

impl AnyDenoiser<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            AnyDenoiser::Optimal { .. } => "optimal",
            AnyDenoiser::Masked { .. } => "masked",
            AnyDenoiser::Wiener { .. } => "wiener",
            AnyDenoiser::Patch { .. } => "patch",
        }
    }
}

impl Denoiser for AnyDenoiser<'_> {
    fn predict_x0(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        match self {
            AnyDenoiser::Optimal { dataset } => optimal_predict(dataset, x, t, sched),
            AnyDenoiser::Masked {
                dataset,
                masks,
                batch,
            } => masked_predict(dataset, masks, x, t, sched, *batch),
            AnyDenoiser::Wiener { model } => wiener_predict(model, x, t, sched),
            AnyDenoiser::Patch { dataset, config } => patch_predict(dataset, config, x, t, sched),
        }
    }

    fn descriptor(&self) -> String {
        self.name().to_string()
    }

    fn dim(&self) -> usize {
        match self {
            AnyDenoiser::Optimal { dataset } => dataset.dim(),
            AnyDenoiser::Masked { dataset, .. } => dataset.dim(),
            AnyDenoiser::Wiener { model } => model.dim(),
            AnyDenoiser::Patch { dataset, .. } => dataset.dim(),
        }
    }
}

fn build_denoiser<'a>(
    name: &str,
    dataset: &'a ImageDataset,
    model: Option<&SpectralModel>,
    sched: &NoiseSchedule,
    cfg: &KeyValueConfig,
    needed_ts: &[usize],
) -> Result<AnyDenoiser<'a>> {
    match name {
        "optimal" => Ok(AnyDenoiser::Optimal { dataset }),
        "masked" => Ok(AnyDenoiser::Masked {
            dataset,
            masks: acquire_masks(dataset, model, sched, cfg, needed_ts)?,
            batch: cfg.require_parsed("batch")?,
        }),
        "wiener" => Ok(AnyDenoiser::Wiener {
            model: match model {
                Some(m) => m.clone(),
                None => fit(dataset)?,
            },
        }),
        "patch" => Ok(AnyDenoiser::Patch {
            dataset,
            config: patch_config(cfg, dataset)?,
        }),
        other => Err(AdlError::Config(format!(
            "unknown denoiser '{other}' (expected optimal|masked|wiener|patch)"
        ))),
    }
}

fn denoiser_names(cfg: &KeyValueConfig, key: &str, default: &str) -> Result<Vec<String>> {
    let raw = cfg.get(key).unwrap_or(default);
    let names: Vec<String> = raw
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(AdlError::Config(format!("key '{key}' lists no denoisers")));
    }
    Ok(names)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Save one flattened image, choosing PGM or PPM from the channel count.
fn save_image_auto(
    pixels: &[f64],
    dataset: &ImageDataset,
    dir: &Path,
    stem: &str,
) -> Result<PathBuf> {
    let ext = if dataset.channels() == 3 { "ppm" } else { "pgm" };
    let path = dir.join(format!("{stem}.{ext}"));
    save_image(
        pixels,
        dataset.height(),
        dataset.width(),
        dataset.channels(),
        dataset.value_range(),
        &path,
    )?;
    Ok(path)
}

/// Persist a stack of flattened images as an f64 raw tensor.
fn save_rows_tensor(
    rows: &[Vec<f64>],
    h: usize,
    w: usize,
    c: usize,
    path: &Path,
) -> Result<()> {
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    let lo = flat.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if lo < hi { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let ds = ImageDataset::new(flat, h, w, c, range)?;
    save_raw_tensor(&ds, path)
}

/// Spectrum CSV, SNR table, mean image, and top-k eigenvector images —
/// shared by `stats` and `perturb`.
fn stats_artifacts(
    dataset: &ImageDataset,
    model: &SpectralModel,
    sched: &NoiseSchedule,
    grid: &[usize],
    cfg: &KeyValueConfig,
    dir: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let mut spectrum = String::from("component,eigenvalue\n");
    for (k, v) in model.eigvals().iter().enumerate() {
        spectrum.push_str(&format!("{k},{v}\n"));
    }
    let spectrum_path = dir.join("spectrum.csv");
    write_text(&spectrum_path, &spectrum)?;
    manifest.record_artifact("spectrum", &spectrum_path)?;

    let mut snr_csv = String::from("timestep,component,snr\n");
    for &t in grid {
        for (k, s) in snr(model, t, sched)?.iter().enumerate() {
            snr_csv.push_str(&format!("{t},{k},{s}\n"));
        }
    }
    let snr_path = dir.join("snr.csv");
    write_text(&snr_path, &snr_csv)?;
    manifest.record_artifact("snr", &snr_path)?;

    let mean_path = save_image_auto(model.mean(), dataset, dir, "mean")?;
    manifest.record_artifact("mean", &mean_path)?;

    let top_k: usize = cfg.get_or("top_k", 8)?;
    let d = model.dim();
    for k in 0..top_k.min(model.rank()) {
        let col: Vec<f64> = (0..d).map(|p| model.eigvecs().get(p, k)).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = if lo < hi { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let ext = if dataset.channels() == 3 { "ppm" } else { "pgm" };
        let path = dir.join(format!("eigvec_{k}.{ext}"));
        save_image(
            &col,
            dataset.height(),
            dataset.width(),
            dataset.channels(),
            range,
            &path,
        )?;
        manifest.record_artifact(&format!("eigvec_{k}"), &path)?;
    }
    Ok(())
}

/// `stats`: fit the spectral model and emit spectrum, SNR table, mean and
/// eigenvector images.
pub fn cmd_stats(cfg: &KeyValueConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (dataset, dataset_path) = load_dataset(cfg)?;
    let sched = build_schedule(cfg)?;
    let grid = grid_or_list(cfg, &sched)?;
    let model = fit(&dataset)?;

    let mut manifest = Manifest::new("stats", cfg);
    manifest.record_input("dataset", &dataset_path)?;
    stats_artifacts(&dataset, &model, &sched, &grid, cfg, &dir, &mut manifest)?;
    manifest.write(dir.join("manifest.txt"))?;
    Ok(())
}

/// `masks`: binarize projector rows at each requested timestep and store the
/// mask table plus a density summary.
pub fn cmd_masks(cfg: &KeyValueConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (dataset, dataset_path) = load_dataset(cfg)?;
    let sched = build_schedule(cfg)?;
    let grid = grid_or_list(cfg, &sched)?;
    let tau: f64 = cfg.require_parsed("tau")?;
    let model = fit(&dataset)?;

    let mut acc: Option<MaskSet> = None;
    let mut density = String::from("timestep,mean_mask_size\n");
    for &t in &grid {
        let m = build_masks(&model, t, &sched, tau)?;
        let table = m.masks_for(t)?;
        let mean_size: f64 =
            table.iter().map(|mk| mk.len() as f64).sum::<f64>() / table.len() as f64;
        density.push_str(&format!("{t},{mean_size}\n"));
        acc = Some(match acc {
            None => m,
            Some(prev) => prev.merge(m)?,
        });
    }
    let masks = acc.ok_or_else(|| AdlError::Config("no timesteps requested".into()))?;

    let masks_path = dir.join("masks.admk");
    save_masks(&masks, &masks_path)?;
    let density_path = dir.join("mask_density.csv");
    write_text(&density_path, &density)?;

    let mut manifest = Manifest::new("masks", cfg);
    manifest.record_input("dataset", &dataset_path)?;
    manifest.record_artifact("masks", &masks_path)?;
    manifest.record_artifact("mask_density", &density_path)?;
    manifest.write(dir.join("manifest.txt"))?;
    Ok(())
}

/// `sample`: run every configured denoiser from identical seeded initial
/// noise; write final images plus per-denoiser nearest-neighbor CSVs.
pub fn cmd_sample(cfg: &KeyValueConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (dataset, dataset_path) = load_dataset(cfg)?;
    let sched = build_schedule(cfg)?;
    let steps: usize = cfg.require_parsed("steps")?;
    let grid = timestep_grid(sched.steps(), steps)?;
    let count: usize = cfg.get_or("count", 4)?;
    let seed: u64 = cfg.require_parsed("seed")?;
    let names = denoiser_names(cfg, "denoisers", "optimal")?;

    let model = if names.iter().any(|n| n == "wiener" || n == "masked") {
        Some(fit(&dataset)?)
    } else {
        None
    };
    let denoisers: Vec<AnyDenoiser> = names
        .iter()
        .map(|n| build_denoiser(n, &dataset, model.as_ref(), &sched, cfg, &grid))
        .collect::<Result<_>>()?;

    let mut manifest = Manifest::new("sample", cfg);
    manifest.record_input("dataset", &dataset_path)?;
    manifest.set("noise_seed_base", seed);
    manifest.set(
        "noise_seeds",
        (0..count)
            .map(|s| (seed + s as u64).to_string())
            .collect::<Vec<_>>()
            .join(","),
    );

    for den in &denoisers {
        let mut nn_values = Vec::with_capacity(count);
        for s in 0..count {
            let noise = gaussian_noise(seed + s as u64, dataset.dim());
            let traj = ddim_sample_from(den, &sched, steps, noise)?;
            let stem = format!("{}_s{s}", den.name());
            let path = save_image_auto(&traj.sample, &dataset, &dir, &stem)?;
            manifest.record_artifact(&stem, &path)?;
            let (d, _) = nearest_neighbor_distance(&dataset, &traj.sample)?;
            nn_values.push(d);
        }
        let report = MetricReport::new(format!("nn_{}", den.name()), nn_values)?;
        let csv_path = dir.join(format!("{}_nn.csv", den.name()));
        report.write_csv(&csv_path)?;
        manifest.record_artifact(&format!("{}_nn", den.name()), &csv_path)?;
    }
    manifest.write(dir.join("manifest.txt"))?;
    Ok(())
}

fn parse_pixel(cfg: &KeyValueConfig, dataset: &ImageDataset) -> Result<usize> {
    let (h, w, c) = (dataset.height(), dataset.width(), dataset.channels());
    match cfg.get_list::<usize>("pixel")? {
        Some(rc) if rc.len() == 2 => {
            let (r, col) = (rc[0], rc[1]);
            if r >= h || col >= w {
                return Err(AdlError::Config(format!(
                    "pixel {r},{col} outside {h}x{w}"
                )));
            }
            Ok((r * w + col) * c)
        }
        Some(_) => Err(AdlError::Config("pixel wants exactly row,col".into())),
        None => Ok(((h / 2) * w + w / 2) * c),
    }
}

fn render_mode(cfg: &KeyValueConfig) -> Result<NormalizationMode> {
    match cfg.get("render").unwrap_or("per-image") {
        "per-image" => Ok(NormalizationMode::PerImage),
        "joint" => Ok(NormalizationMode::Joint),
        "raw" => Ok(NormalizationMode::Raw),
        other => Err(AdlError::Config(format!(
            "unknown render mode '{other}' (expected per-image|joint|raw)"
        ))),
    }
}

/// `sensitivity`: Jacobian row of one output pixel across timesteps,
/// rendered as PGM heatmaps plus a raw-tensor dump of the rows.
pub fn cmd_sensitivity(cfg: &KeyValueConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (dataset, dataset_path) = load_dataset(cfg)?;
    let sched = build_schedule(cfg)?;
    let grid = grid_or_list(cfg, &sched)?;
    let name = cfg.get("denoiser").unwrap_or("wiener").to_string();
    let q = parse_pixel(cfg, &dataset)?;
    let mode = render_mode(cfg)?;
    let seed: u64 = cfg.require_parsed("seed")?;

    let model = if name == "wiener" || name == "masked" {
        Some(fit(&dataset)?)
    } else {
        None
    };
    let den = build_denoiser(&name, &dataset, model.as_ref(), &sched, cfg, &grid)?;

    let mut manifest = Manifest::new("sensitivity", cfg);
    manifest.record_input("dataset", &dataset_path)?;
    manifest.set("pixel_index", q);

    let mut rows = Vec::with_capacity(grid.len());
    for &t in &grid {
        // nonlinear denoisers are evaluated at a seeded noisy point
        let x = gaussian_noise(seed ^ (t as u64), dataset.dim());
        let field = match &den {
            AnyDenoiser::Optimal { dataset } => {
                analytic_jacobian_optimal(dataset, &x, t, &sched)?
            }
            AnyDenoiser::Masked { dataset, masks, .. } => {
                analytic_jacobian_masked(dataset, masks, &x, t, &sched)?
            }
            AnyDenoiser::Wiener { model } => wiener_sensitivity(model, t, &sched)?,
            AnyDenoiser::Patch { .. } => {
                fd_jacobian(&den, &x, t, &sched, &[q], DEFAULT_FD_STEP)?
            }
        };
        let row = field
            .row_for(q)
            .ok_or_else(|| AdlError::Numerical("requested row missing".into()))?
            .to_vec();
        // channel-aggregated spatial heatmap
        let (h, w, c) = (dataset.height(), dataset.width(), dataset.channels());
        let spatial: Vec<f64> = (0..h * w)
            .map(|p| (0..c).map(|ch| row[p * c + ch].abs()).sum::<f64>())
            .collect();
        let spatial_field = SensitivityField::new(vec![spatial], vec![q], t)?;
        let paths = save_field_images(&spatial_field, mode, h, w, &dir, &name)?;
        for p in &paths {
            manifest.record_artifact(
                p.file_stem().and_then(|s| s.to_str()).unwrap_or("row"),
                p,
            )?;
        }
        rows.push(row);
    }

    let rows_path = dir.join("rows.adt");
    save_rows_tensor(
        &rows,
        dataset.height(),
        dataset.width(),
        dataset.channels(),
        &rows_path,
    )?;
    manifest.record_artifact("rows", &rows_path)?;
    manifest.write(dir.join("manifest.txt"))?;
    Ok(())
}

/// `perturb`: inject the scaled stencil pattern, persist the modified
/// dataset, re-run the spectral artifacts, and tabulate the induced
/// projector sensitivity against its closed-form prediction.
pub fn cmd_perturb(cfg: &KeyValueConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (dataset, dataset_path) = load_dataset(cfg)?;
    let sched = build_schedule(cfg)?;
    let grid = grid_or_list(cfg, &sched)?;
    let gamma: f64 = cfg.get_or("gamma", 0.1)?;
    let pattern_seed: u64 = cfg.get_or("pattern_seed", 0)?;
    let clamp: bool = cfg.get_or("clamp", false)?;

    let stencil = w_stencil(dataset.height(), dataset.width(), dataset.channels());
    let injected = if gamma == 0.0 {
        dataset.clone()
    } else {
        let spec = PerturbationSpec::new(stencil.clone(), gamma, pattern_seed, clamp)?;
        inject_pattern(&dataset, &spec)?
    };

    let injected_path = dir.join("injected.adt");
    save_raw_tensor(&injected, &injected_path)?;

    let model = fit(&injected)?;
    let mut manifest = Manifest::new("perturb", cfg);
    manifest.record_input("dataset", &dataset_path)?;
    manifest.record_artifact("injected", &injected_path)?;
    stats_artifacts(&injected, &model, &sched, &grid, cfg, &dir, &mut manifest)?;

    // alignment of the top eigenpair with the stencil
    let s_norm2: f64 = stencil.iter().map(|v| v * v).sum();
    let predicted_top = gamma * gamma * s_norm2 / 3.0;
    let top = model.eigvals().first().cloned().unwrap_or(0.0);
    let cos: f64 = if s_norm2 > 0.0 {
        (0..model.dim())
            .map(|p| model.eigvecs().get(p, 0) * stencil[p])
            .sum::<f64>()
            / s_norm2.sqrt()
    } else {
        0.0
    };
    let mut align = String::from("quantity,value\n");
    align.push_str(&format!("gamma,{gamma}\n"));
    align.push_str(&format!("top_eigenvalue,{top}\n"));
    align.push_str(&format!("predicted_eigenvalue,{predicted_top}\n"));
    align.push_str(&format!("stencil_cosine,{cos}\n"));
    let align_path = dir.join("alignment.csv");
    write_text(&align_path, &align)?;
    manifest.record_artifact("alignment", &align_path)?;

    // projector sensitivity along the stencil vs the closed form
    // s_w(t) = ab g^2 ||s||^2 / (ab g^2 ||s||^2 + 3 (1 - ab))
    let mut sw = String::from("timestep,measured,predicted\n");
    let unit: Vec<f64> = stencil.iter().map(|v| v / s_norm2.sqrt()).collect();
    for &t in &grid {
        let ab = sched.alpha_bar(t)?;
        let predicted =
            ab * gamma * gamma * s_norm2 / (ab * gamma * gamma * s_norm2 + 3.0 * (1.0 - ab));
        let factors = crate::spectral::projector_factors(&model, t, &sched)?;
        // s' U diag(f) U' s for the unit stencil
        let mut measured = 0.0;
        for (k, f) in factors.iter().enumerate() {
            if *f == 0.0 {
                continue;
            }
            let proj: f64 = (0..model.dim())
                .map(|p| model.eigvecs().get(p, k) * unit[p])
                .sum();
            measured += f * proj * proj;
        }
        sw.push_str(&format!("{t},{measured},{predicted}\n"));
    }
    let sw_path = dir.join("stencil_sensitivity.csv");
    write_text(&sw_path, &sw)?;
    manifest.record_artifact("stencil_sensitivity", &sw_path)?;

    manifest.write(dir.join("manifest.txt"))?;
    Ok(())
}

/// `benchmark`: noise dataset images at grid timesteps and compare the
/// configured denoisers' clean predictions pairwise (MSE and r-squared).
pub fn cmd_benchmark(cfg: &KeyValueConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (dataset, dataset_path) = load_dataset(cfg)?;
    let sched = build_schedule(cfg)?;
    let grid = grid_or_list(cfg, &sched)?;
    let count: usize = cfg.get_or("count", 128)?;
    let seed: u64 = cfg.require_parsed("seed")?;
    let names = denoiser_names(cfg, "denoisers", "")?;

    let model = if names.iter().any(|n| n == "wiener" || n == "masked") {
        Some(fit(&dataset)?)
    } else {
        None
    };
    let denoisers: Vec<AnyDenoiser> = names
        .iter()
        .map(|n| build_denoiser(n, &dataset, model.as_ref(), &sched, cfg, &grid))
        .collect::<Result<_>>()?;

    // optional external prediction source: raw tensor with `count` images
    let mut sources: Vec<(String, Option<usize>)> = denoisers
        .iter()
        .enumerate()
        .map(|(i, d)| (format!("{}{}", d.name(), i), Some(i)))
        .collect();
    let external = match cfg.get("external") {
        Some(path) => {
            let ext = load_raw_tensor(path)?;
            if ext.len() != count || ext.dim() != dataset.dim() {
                return Err(AdlError::Config(format!(
                    "external predictions want {count} images of dim {}, got {} of {}",
                    dataset.dim(),
                    ext.len(),
                    ext.dim()
                )));
            }
            sources.push(("external".into(), None));
            Some(ext)
        }
        None => None,
    };
    if sources.len() < 2 {
        return Err(AdlError::Config(
            "benchmark needs at least two prediction sources".into(),
        ));
    }

    let mut manifest = Manifest::new("benchmark", cfg);
    manifest.record_input("dataset", &dataset_path)?;

    // shared evaluation points: image j mod N, timestep round-robin, seeded noise
    let mut preds: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(count); denoisers.len()];
    for j in 0..count {
        let x0 = dataset.image(j % dataset.len());
        let t = grid[j % grid.len()];
        let eps = gaussian_noise(seed.wrapping_add(j as u64), dataset.dim());
        let x = forward_noise(x0, &eps, t, &sched)?;
        for (i, den) in denoisers.iter().enumerate() {
            preds[i].push(den.predict_x0(&x, t, &sched)?);
        }
    }
    let external_preds: Option<Vec<Vec<f64>>> = external
        .as_ref()
        .map(|ext| (0..count).map(|j| ext.image(j).to_vec()).collect());

    let batch_of = |idx: Option<usize>| -> &Vec<Vec<f64>> {
        match idx {
            Some(i) => &preds[i],
            None => external_preds.as_ref().unwrap(),
        }
    };

    for a in 0..sources.len() {
        for b in (a + 1)..sources.len() {
            let (la, ia) = &sources[a];
            let (lb, ib) = &sources[b];
            let pa = batch_of(*ia);
            let pb = batch_of(*ib);
            let m = mse(pa, pb)?;
            let r2 = r_squared(pa, pb)?;
            for (suffix, rep) in [("mse", &m), ("r2", &r2)] {
                let path = dir.join(format!("{la}_vs_{lb}_{suffix}.csv"));
                rep.write_csv(&path)?;
                manifest.record_artifact(&format!("{la}_vs_{lb}_{suffix}"), &path)?;
            }
        }
    }
    manifest.write(dir.join("manifest.txt"))?;
    Ok(())
}

/// `nn`: nearest-neighbor distance of each image in a raw-tensor file to the
/// training set.
pub fn cmd_nn(cfg: &KeyValueConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let (dataset, dataset_path) = load_dataset(cfg)?;
    let images_path = PathBuf::from(cfg.require("images")?);
    let queries = load_raw_tensor(&images_path)?;
    if queries.dim() != dataset.dim() {
        return Err(AdlError::Config(format!(
            "query dim {} does not match dataset dim {}",
            queries.dim(),
            dataset.dim()
        )));
    }

    let mut values = Vec::with_capacity(queries.len());
    let mut indices = String::from("sample_id,index\n");
    for i in 0..queries.len() {
        let (d, idx) = nearest_neighbor_distance(&dataset, queries.image(i))?;
        values.push(d);
        indices.push_str(&format!("{i},{idx}\n"));
    }
    let report = MetricReport::new("nn", values)?;
    let nn_path = dir.join("nn.csv");
    report.write_csv(&nn_path)?;
    let idx_path = dir.join("nn_indices.csv");
    write_text(&idx_path, &indices)?;

    let mut manifest = Manifest::new("nn", cfg);
    manifest.record_input("dataset", &dataset_path)?;
    manifest.record_input("images", &images_path)?;
    manifest.record_artifact("nn", &nn_path)?;
    manifest.record_artifact("nn_indices", &idx_path)?;
    manifest.write(dir.join("manifest.txt"))?;
    Ok(())
}

/// Trajectory capture reused by tests and external callers.
pub fn sample_trajectories(
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    steps: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..count)
        .map(|s| {
            let noise = gaussian_noise(seed + s as u64, den.dim());
            ddim_sample_from(den, sched, steps, noise)
        })
        .collect()
}
