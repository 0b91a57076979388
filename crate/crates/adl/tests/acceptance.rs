//! End-to-end acceptance gate: one test (and one printed pass line) per
//! release criterion. Each criterion is self-contained and uses only public
//! APIs plus independently coded oracles.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use adl::dataset::{
    inject_pattern, load_idx, subset, w_stencil, ImageDataset, PerturbationSpec,
};
use adl::denoisers::{
    masked_predict, optimal_predict, patch_predict, MaskedDenoiser, OptimalDenoiser,
    PatchConfig, WienerDenoiser,
};
use adl::metrics::nearest_neighbor_distance;
use adl::numerics::{row_space_projection, stable_softmax, sym_eigen, DenseMatrix};
use adl::sampler::{ddim_sample, gaussian_noise, timestep_grid};
use adl::schedule::{linear_schedule, NoiseSchedule};
use adl::sensitivity::{
    analytic_jacobian_masked, analytic_jacobian_optimal, fd_jacobian, wiener_sensitivity,
    DEFAULT_FD_STEP,
};
use adl::spectral::{
    build_masks, fit, projector_factors, snr, wiener_predict, MaskProvenance, MaskSet,
};

fn pass(n: u32, label: &str) {
    // write to the raw stdout descriptor so the line survives the test
    // harness's output capture and shows up in a plain `cargo test` run
    use std::os::fd::{AsRawFd, BorrowedFd};
    let line = format!("ACCEPTANCE {n:02} {label}: pass\n");
    let fd = unsafe { BorrowedFd::borrow_raw(std::io::stdout().as_raw_fd()) };
    let mut f = std::fs::File::from(fd.try_clone_to_owned().unwrap());
    f.write_all(line.as_bytes()).unwrap();
}

/// Deterministic synthetic digit-like images: a few soft blobs per image,
/// quantized to bytes like the classic handwritten-digit files.
fn synthetic_digit_bytes(n: usize, h: usize, w: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * h * w);
    for _ in 0..n {
        let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(2..5))
            .map(|_| {
                (
                    rng.gen_range(4.0..(h as f64 - 4.0)),
                    rng.gen_range(4.0..(w as f64 - 4.0)),
                    rng.gen_range(1.5..4.0),
                    rng.gen_range(0.5..1.0),
                )
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let mut v = 0.0f64;
                for &(cy, cx, r, a) in &blobs {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    v += a * (-d2 / (2.0 * r * r)).exp();
                }
                // sharpen into stroke-like shapes so distinct images stay
                // well separated in pixel space
                let sharp = 1.0 / (1.0 + (-(v - 0.4) * 20.0).exp());
                out.push((sharp.min(1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

fn write_idx(path: &Path, n: usize, h: usize, w: usize, payload: &[u8]) {
    let mut f = std::fs::File::create(path).unwrap();
    f.write_all(&0x0000_0803u32.to_be_bytes()).unwrap();
    for d in [n, h, w] {
        f.write_all(&(d as u32).to_be_bytes()).unwrap();
    }
    f.write_all(payload).unwrap();
}

fn digit_dataset(n: usize, seed: u64) -> ImageDataset {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("digits.idx");
    write_idx(&path, n, 28, 28, &synthetic_digit_bytes(n, 28, 28, seed));
    load_idx(&path).unwrap()
}

fn random_dataset(n: usize, d: usize, seed: u64) -> ImageDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let images = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ImageDataset::new(images, 1, d, 1, (-1.0, 1.0)).unwrap()
}

fn full_masks(t: usize, d: usize) -> MaskSet {
    let all: Vec<u32> = (0..d as u32).collect();
    let mut entries = BTreeMap::new();
    entries.insert(t as u32, vec![all; d]);
    MaskSet::from_entries(entries, None, MaskProvenance::External).unwrap()
}

/// 1. Generated samples land on training images: on a 500-image digit
///    subset, >= 95% of 64 ten-step runs end within 1e-3 normalized RMS of
///    their nearest training image.
#[test]
fn criterion_01_memorization() {
    let ds = digit_dataset(500, 1);
    let sched = linear_schedule(1000, 1e-4, 0.02).unwrap();
    let den = OptimalDenoiser { dataset: &ds };
    let mut hits = 0usize;
    for s in 0..64u64 {
        let traj = ddim_sample(&den, &sched, 10, s).unwrap();
        let (dist, _) = nearest_neighbor_distance(&ds, &traj.sample).unwrap();
        if dist <= 1e-3 {
            hits += 1;
        }
    }
    assert!(hits >= 61, "only {hits}/64 samples memorized");
    pass(1, "memorization");
}

/// Gaussian elimination with partial pivoting; the independent dense solver
/// used by the posterior-mean oracle.
fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        rhs.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 0.0);
        for row in (col + 1)..n {
            let f = m[row][col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    x
}

/// 2. The spectral shrinkage predictor equals the dense-solve Gaussian
///    posterior mean, mu + sqrt(ab) S (ab S + s^2 I)^-1 (x - sqrt(ab) mu),
///    computed from the exact empirical covariance.
#[test]
fn criterion_02_gaussian_oracle() {
    let d = 16usize;
    let n = 40usize;
    // anisotropic Gaussian data via a fixed linear mix of unit normals
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let mix: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .collect();
    let mut images = Vec::with_capacity(n * d);
    for i in 0..n {
        let z = gaussian_noise(1000 + i as u64, d);
        for row in &mix {
            let v: f64 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
            images.push(v);
        }
    }
    let lo = images.iter().cloned().fold(f64::INFINITY, f64::min) - 0.1;
    let hi = images.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.1;
    let ds = ImageDataset::new(images, 1, d, 1, (lo, hi)).unwrap();
    let model = fit(&ds).unwrap();

    // exact empirical mean and covariance, computed directly
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(ds.image(i)) {
            *m += v / n as f64;
        }
    }
    let mut cov = vec![vec![0.0f64; d]; d];
    for i in 0..n {
        let img = ds.image(i);
        for p in 0..d {
            for q in 0..d {
                cov[p][q] += (img[p] - mean[p]) * (img[q] - mean[q]) / n as f64;
            }
        }
    }

    let sched = linear_schedule(1000, 1e-4, 0.02).unwrap();
    let x: Vec<f64> = (0..d).map(|i| 0.3 * (i as f64).sin()).collect();
    for t in timestep_grid(1000, 10).unwrap() {
        let ab = sched.alpha_bar(t).unwrap();
        let sab = ab.sqrt();
        let s2 = 1.0 - ab;
        // dense solve: (ab S + s^2 I) z = x - sqrt(ab) mu; xhat = mu + sqrt(ab) S z
        let mut a = vec![vec![0.0f64; d]; d];
        for p in 0..d {
            for q in 0..d {
                a[p][q] = ab * cov[p][q];
            }
            a[p][p] += s2;
        }
        let rhs: Vec<f64> = x.iter().zip(&mean).map(|(xi, m)| xi - sab * m).collect();
        let z = solve_dense(&a, &rhs);
        let oracle: Vec<f64> = (0..d)
            .map(|p| {
                mean[p] + sab * (0..d).map(|q| cov[p][q] * z[q]).sum::<f64>()
            })
            .collect();

        let got = wiener_predict(&model, &x, t, &sched).unwrap();
        let scale = oracle.iter().map(|v| v.abs()).fold(1e-9, f64::max);
        for (g, o) in got.iter().zip(&oracle) {
            assert!(
                (g - o).abs() <= 1e-6 * scale,
                "t={t}: {g} vs {o} (scale {scale})"
            );
        }
    }
    pass(2, "gaussian oracle");
}

/// 3. Reductions: all-ones masks give back the exact denoiser; a full patch
///    with the identity translation gives back the exact denoiser; a zero
///    threshold yields full masks.
#[test]
fn criterion_03_reduction_identities() {
    let ds = random_dataset(6, 16, 3);
    let sched = linear_schedule(100, 1e-3, 0.05).unwrap();
    let t = 60;
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let want = optimal_predict(&ds, &x, t, &sched).unwrap();

    let masks = full_masks(t, 16);
    let got = masked_predict(&ds, &masks, &x, t, &sched, 4).unwrap();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }

    let img_ds = random_dataset(6, 16, 3); // 1 x 16 layout -> use 4x4 instead
    let images = img_ds.images().to_vec();
    let ds4 = ImageDataset::new(images, 4, 4, 1, (-1.0, 1.0)).unwrap();
    let cfg = PatchConfig::uniform(4, 4).unwrap(); // stride = side -> {identity}
    let got = patch_predict(&ds4, &cfg, &x, t, &sched).unwrap();
    let want4 = optimal_predict(&ds4, &x, t, &sched).unwrap();
    for (a, b) in got.iter().zip(&want4) {
        assert!((a - b).abs() < 1e-10);
    }

    let model = fit(&ds).unwrap();
    let zero_tau = build_masks(&model, t, &sched, 0.0).unwrap();
    for mask in zero_tau.masks_for(t).unwrap() {
        assert_eq!(mask.len(), 16);
    }
    pass(3, "reduction identities");
}

/// 4. Only the binary support matters: the dense reference built from the
///    row-space projection of a random positive diagonal operator equals the
///    binary-mask fast path.
#[test]
fn criterion_04_binary_support_invariance() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    for inst in 0..20 {
        let d = rng.gen_range(4..=32usize);
        let n = rng.gen_range(2..=8usize);
        let ds = random_dataset(n, d, 100 + inst);
        let sched = linear_schedule(100, 1e-3, 0.05).unwrap();
        let t = rng.gen_range(20..=100);
        let sab = sched.sqrt_alpha_bar(t).unwrap();
        let s2 = 1.0 - sched.alpha_bar(t).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // per pixel: random support (q always in), random positive weights
        let mut mask_lists: Vec<Vec<u32>> = Vec::with_capacity(d);
        let mut reference = vec![0.0f64; d];
        for q in 0..d {
            let mut support: Vec<u32> = (0..d as u32)
                .filter(|&p| p as usize == q || rng.gen_bool(0.4))
                .collect();
            support.sort_unstable();

            // dense path: diagonal A with random positive entries on the
            // support, projected onto its row space
            let mut a_data = vec![0.0f64; d * d];
            for &p in &support {
                a_data[p as usize * d + p as usize] = rng.gen_range(0.1..5.0);
            }
            let a = DenseMatrix::new(d, d, a_data).unwrap();
            let proj = row_space_projection(&a).unwrap();
            let logits: Vec<f64> = (0..n)
                .map(|i| {
                    let r: Vec<f64> = x
                        .iter()
                        .zip(ds.image(i))
                        .map(|(xi, x0)| xi - sab * x0)
                        .collect();
                    let pr = proj.matvec(&r);
                    let d2: f64 = pr.iter().map(|v| v * v).sum();
                    -d2 / (2.0 * s2)
                })
                .collect();
            let w = stable_softmax(&logits).unwrap();
            reference[q] = (0..n).map(|i| w[i] * ds.image(i)[q]).sum();
            mask_lists.push(support);
        }
        let mut entries = BTreeMap::new();
        entries.insert(t as u32, mask_lists);
        let masks = MaskSet::from_entries(entries, None, MaskProvenance::External).unwrap();
        let fast = masked_predict(&ds, &masks, &x, t, &sched, n).unwrap();
        for (a, b) in fast.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-10, "instance {inst}: {a} vs {b}");
        }
    }
    pass(4, "binary support invariance");
}

fn cyclic_shift(img: &[f64], h: usize, w: usize, dy: usize, dx: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = img[((y + h - dy) % h) * w + (x + w - dx) % w];
        }
    }
    out
}

/// 5. Translation equivariance of the patch denoiser under the full cyclic
///    group.
#[test]
fn criterion_05_equivariance() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let images: Vec<f64> = (0..4 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ds = ImageDataset::new(images, 8, 8, 1, (-1.0, 1.0)).unwrap();
    let sched = linear_schedule(100, 1e-3, 0.05).unwrap();
    let cfg = PatchConfig::uniform(3, 1).unwrap();
    let t = 70;
    let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let fx = patch_predict(&ds, &cfg, &x, t, &sched).unwrap();
    for _ in 0..10 {
        let dy = rng.gen_range(0..8);
        let dx = rng.gen_range(0..8);
        let fgx = patch_predict(&ds, &cfg, &cyclic_shift(&x, 8, 8, dy, dx), t, &sched).unwrap();
        let gfx = cyclic_shift(&fx, 8, 8, dy, dx);
        for (a, b) in fgx.iter().zip(&gfx) {
            assert!((a - b).abs() < 1e-10, "shift ({dy},{dx})");
        }
    }
    pass(5, "equivariance");
}

fn timestep_with_sigma(sched: &NoiseSchedule, target: f64) -> usize {
    (1..=sched.steps())
        .min_by(|&a, &b| {
            let da = (sched.sigma(a).unwrap() - target).abs();
            let db = (sched.sigma(b).unwrap() - target).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap()
}

/// 6. Closed-form Jacobians agree with central finite differences at low,
///    medium and high noise; the exact denoiser's Jacobian is symmetric PSD.
#[test]
fn criterion_06_jacobian_correctness() {
    let ds = random_dataset(8, 12, 7);
    let sched = linear_schedule(1000, 1e-4, 0.02).unwrap();
    let model = fit(&ds).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let rows: Vec<usize> = (0..12).collect();

    for target in [0.1, 0.5, 0.9] {
        let t = timestep_with_sigma(&sched, target);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let check = |analytic: &[Vec<f64>], fd: &[Vec<f64>]| {
            let scale = analytic
                .iter()
                .chain(fd.iter())
                .flat_map(|r| r.iter().map(|v| v.abs()))
                .fold(1e-12, f64::max);
            for (ra, rf) in analytic.iter().zip(fd) {
                for (a, f) in ra.iter().zip(rf) {
                    assert!((a - f).abs() <= 1e-4 * scale, "sigma {target}: {a} vs {f}");
                }
            }
        };

        let opt = analytic_jacobian_optimal(&ds, &x, t, &sched).unwrap();
        let den = OptimalDenoiser { dataset: &ds };
        let fd = fd_jacobian(&den, &x, t, &sched, &rows, DEFAULT_FD_STEP).unwrap();
        check(opt.rows(), fd.rows());

        // symmetric PSD
        let m = opt.to_matrix().unwrap();
        for q in 0..12 {
            for p in 0..12 {
                assert!((m.get(q, p) - m.get(p, q)).abs() < 1e-10);
            }
        }
        let eig = sym_eigen(&m).unwrap();
        assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-8));

        let masks = build_masks(&model, t, &sched, 0.2).unwrap();
        let masked = analytic_jacobian_masked(&ds, &masks, &x, t, &sched).unwrap();
        let den = MaskedDenoiser {
            dataset: &ds,
            masks: &masks,
            batch: 3,
        };
        let fd = fd_jacobian(&den, &x, t, &sched, &rows, DEFAULT_FD_STEP).unwrap();
        check(masked.rows(), fd.rows());

        let wiener = wiener_sensitivity(&model, t, &sched).unwrap();
        let den = WienerDenoiser { model: &model };
        let fd = fd_jacobian(&den, &x, t, &sched, &rows, DEFAULT_FD_STEP).unwrap();
        check(wiener.rows(), fd.rows());
    }
    pass(6, "jacobian correctness");
}

/// 7. The streaming accumulation is invariant to how the dataset is
///    partitioned into batches.
#[test]
fn criterion_07_streaming_softmax() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    for inst in 0..10 {
        let n = rng.gen_range(8..40usize);
        let d = rng.gen_range(2..10usize);
        let ds = random_dataset(n, d, 200 + inst);
        let sched = linear_schedule(100, 1e-3, 0.05).unwrap();
        let t = rng.gen_range(1..=100);
        let masks = full_masks(t, d);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let whole = masked_predict(&ds, &masks, &x, t, &sched, n).unwrap();
        for batch in [1usize, 7, n] {
            let got = masked_predict(&ds, &masks, &x, t, &sched, batch).unwrap();
            for (a, b) in got.iter().zip(&whole) {
                assert!((a - b).abs() < 1e-12, "instance {inst}, batch {batch}");
            }
        }
    }
    pass(7, "streaming softmax");
}

/// 8. Sensitivity shrinks with noise: the trace of the shrinkage factors is
///    strictly increasing as t decreases on digit-subset statistics.
#[test]
fn criterion_08_shrinking_sensitivity() {
    let ds = digit_dataset(200, 10);
    let small = subset(&ds, 120, 0).unwrap();
    let model = fit(&small).unwrap();
    assert!(model.eigvals().iter().any(|&v| v > 0.0));
    let sched = linear_schedule(1000, 1e-4, 0.02).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for t in timestep_grid(1000, 10).unwrap() {
        let trace: f64 = projector_factors(&model, t, &sched).unwrap().iter().sum();
        assert!(trace > prev, "t={t}: trace {trace} <= {prev}");
        prev = trace;
    }
    pass(8, "shrinking sensitivity");
}

/// 9. Injecting a random-intensity pattern plants a known covariance
///    component: top eigenvalue g^2 ||s||^2 / 3, eigenvector aligned with
///    the pattern, and the predicted projector response at every grid
///    timestep.
#[test]
fn criterion_09_pattern_manipulation() {
    let (h, w) = (16usize, 16usize);
    let d = h * w;
    let n = 10_000usize;
    let base = ImageDataset::new(vec![0.0; n * d], h, w, 1, (-1.0, 1.0)).unwrap();
    let stencil = w_stencil(h, w, 1);
    let gamma = 0.1f64;
    let spec = PerturbationSpec::new(stencil.clone(), gamma, 11, false).unwrap();
    let injected = inject_pattern(&base, &spec).unwrap();
    let model = fit(&injected).unwrap();

    let s_norm2: f64 = stencil.iter().map(|v| v * v).sum();
    let predicted_top = gamma * gamma * s_norm2 / 3.0;
    let top = model.eigvals()[0];
    assert!(
        (top - predicted_top).abs() <= 0.05 * predicted_top,
        "top {top} vs predicted {predicted_top}"
    );

    let cos: f64 = (0..d)
        .map(|p| model.eigvecs().get(p, 0) * stencil[p])
        .sum::<f64>()
        / s_norm2.sqrt();
    assert!(cos.abs() > 0.99, "cosine {cos}");

    let sched = linear_schedule(1000, 1e-4, 0.02).unwrap();
    let unit: Vec<f64> = stencil.iter().map(|v| v / s_norm2.sqrt()).collect();
    for t in timestep_grid(1000, 10).unwrap() {
        let ab = sched.alpha_bar(t).unwrap();
        let predicted =
            ab * gamma * gamma * s_norm2 / (ab * gamma * gamma * s_norm2 + 3.0 * (1.0 - ab));
        let factors = projector_factors(&model, t, &sched).unwrap();
        let mut measured = 0.0;
        for (k, f) in factors.iter().enumerate() {
            if *f == 0.0 {
                continue;
            }
            let proj: f64 = (0..d).map(|p| model.eigvecs().get(p, k) * unit[p]).sum();
            measured += f * proj * proj;
        }
        assert!(
            (measured - predicted).abs() <= 0.05 * predicted.max(1e-12),
            "t={t}: measured {measured} vs predicted {predicted}"
        );
    }
    pass(9, "pattern manipulation");
}

/// 10. The per-component signal-to-noise ratio is exactly
///     ab_t v_i / (1 - ab_t) on the fitted spectrum.
#[test]
fn criterion_10_snr_formula() {
    let ds = random_dataset(10, 6, 12);
    let model = fit(&ds).unwrap();
    let sched = linear_schedule(1000, 1e-4, 0.02).unwrap();
    for t in [1usize, 100, 400, 700, 1000] {
        let ab = sched.alpha_bar(t).unwrap();
        let got = snr(&model, t, &sched).unwrap();
        for (s, &v) in got.iter().zip(model.eigvals()) {
            assert_eq!(*s, ab * v / (1.0 - ab), "t={t}");
        }
    }
    // sanity on a hand-solvable spectrum: two antipodal points have a single
    // component with variance ||a||^2 = 1
    let a = [0.6, -0.8, 0.0, 0.0];
    let images: Vec<f64> = a.iter().cloned().chain(a.iter().map(|v| -v)).collect();
    let ds = ImageDataset::new(images, 1, 4, 1, (-1.0, 1.0)).unwrap();
    let model = fit(&ds).unwrap();
    for t in [10usize, 500] {
        let ab = sched.alpha_bar(t).unwrap();
        let got = snr(&model, t, &sched).unwrap();
        assert!((got[0] - ab / (1.0 - ab)).abs() <= 1e-10 * (ab / (1.0 - ab)));
    }
    pass(10, "snr formula");
}

/// 11. Reruns of the sampling command are byte-identical, independent of the
///     worker thread count.
#[test]
fn criterion_11_determinism_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("digits.idx");
    write_idx(&data_path, 40, 28, 28, &synthetic_digit_bytes(40, 28, 28, 13));

    let run = |out: &Path, threads: &str| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_adl"))
            .env("ADL_THREADS", threads)
            .args([
                "sample",
                &format!("dataset={}", data_path.display()),
                &format!("out={}", out.display()),
                "denoisers=optimal,wiener",
                "count=3",
                "seed=17",
                "t_count=200",
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    run(&a, "1");
    run(&b, "8");
    run(&c, "1"); // plain rerun

    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.txt") // manifests embed output paths
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n.ends_with(".pgm")));
    assert!(names.iter().any(|n| n.ends_with(".csv")));
    for n in &names {
        let bytes_a = std::fs::read(a.join(n)).unwrap();
        let bytes_b = std::fs::read(b.join(n)).unwrap();
        let bytes_c = std::fs::read(c.join(n)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{n} differs between thread counts");
        assert_eq!(bytes_a, bytes_c, "{n} differs between reruns");
    }

    // identical initial noise recorded for every denoiser in the manifest
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("noise_seeds=17,18,19"));
    assert!(manifest.contains("config_sha256="));
    pass(11, "determinism and manifests");
}
