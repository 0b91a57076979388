//! Deterministic DDIM sampling (eta = 0) driven by any clean-image predictor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::denoisers::Denoiser;
use crate::error::{AdlError, Result};
use crate::schedule::{eps_from_x0, NoiseSchedule};

/// Standard-normal draws via Box-Muller from a counter-seeded stream cipher.
pub fn gaussian_noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        if out.len() < n {
            out.push(r * theta.sin());
        }
    }
    out
}

/// Coarse sampling grid: t_k = round(T * (steps - k) / steps), k = 0..steps,
/// required to be strictly decreasing and to start at T.
pub fn timestep_grid(t_total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps < 1 || steps > t_total {
        return Err(AdlError::InvalidArgument(format!(
            "need 1 <= steps <= T, got steps={steps}, T={t_total}"
        )));
    }
    let mut grid = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = ((t_total as f64) * ((steps - k) as f64) / (steps as f64)).round() as usize;
        grid.push(t.max(1));
    }
    for w in grid.windows(2) {
        if w[1] >= w[0] {
            return Err(AdlError::InvalidArgument(format!(
                "grid not strictly decreasing: {} -> {}",
                w[0], w[1]
            )));
        }
    }
    Ok(grid)
}

/// Everything produced along one sampling run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Grid timesteps visited, in order.
    pub timesteps: Vec<usize>,
    /// Noisy state entering each step (states[0] is the initial noise).
    pub states: Vec<Vec<f64>>,
    /// Clean prediction produced at each step.
    pub x0_preds: Vec<Vec<f64>>,
    /// Final output: the last clean prediction.
    pub sample: Vec<f64>,
}

/// Deterministic DDIM update:
/// eps_hat = (x_t - sqrt(ab_t) x0_hat) / sigma_t,
/// x_t' = sqrt(ab_t') x0_hat + sigma_t' eps_hat;
/// the run ends by emitting the final x0_hat directly.
pub fn ddim_sample_from(
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    steps: usize,
    x_init: Vec<f64>,
) -> Result<Trajectory> {
    if x_init.len() != denoiser.dim() {
        return Err(AdlError::InvalidArgument(
            "initial state dim mismatch".into(),
        ));
    }
    let grid = timestep_grid(sched.steps(), steps)?;
    let mut states = Vec::with_capacity(steps);
    let mut x0_preds = Vec::with_capacity(steps);
    let mut x = x_init;
    for (k, &t) in grid.iter().enumerate() {
        let x0_hat = denoiser.predict_x0(&x, t, sched)?;
        if x0_hat.iter().any(|v| !v.is_finite()) {
            return Err(AdlError::Numerical(format!(
                "non-finite prediction at t={t}"
            )));
        }
        states.push(x.clone());
        if k + 1 < grid.len() {
            let eps_hat = eps_from_x0(&x, &x0_hat, t, sched)?;
            let t_next = grid[k + 1];
            let sab = sched.sqrt_alpha_bar(t_next)?;
            let sig = sched.sigma(t_next)?;
            x = x0_hat
                .iter()
                .zip(&eps_hat)
                .map(|(x0, e)| sab * x0 + sig * e)
                .collect();
        }
        x0_preds.push(x0_hat);
    }
    let sample = x0_preds.last().cloned().unwrap();
    Ok(Trajectory {
        timesteps: grid,
        states,
        x0_preds,
        sample,
    })
}

/// DDIM run from seeded standard-normal initial noise.
pub fn ddim_sample(
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let x_init = gaussian_noise(seed, denoiser.dim());
    ddim_sample_from(denoiser, sched, steps, x_init)
}
