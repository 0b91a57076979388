//! Discrete noise schedule, forward noising, and the x0 <-> eps
//! parametrization maps.
//!
//! Timesteps are 1-based, t in {1..T}; t = 0 means "clean".

use crate::error::{AdlError, Result};

const PARAM_GUARD: f64 = 1e-12;

/// Discrete noise schedule: betas, cumulative alpha-bars, and sigmas.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t < 1 || t > self.steps() {
            return Err(AdlError::InvalidArgument(format!(
                "timestep {} out of range 1..={}",
                t,
                self.steps()
            )));
        }
        Ok(t - 1)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.check_t(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.sigmas[self.check_t(t)?])
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar(t)?.sqrt())
    }
}

/// Linear beta schedule, endpoints inclusive.
pub fn linear_schedule(t_count: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_count < 1 {
        return Err(AdlError::InvalidArgument("schedule needs T >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(AdlError::InvalidArgument(format!(
            "beta bounds violated: need 0 < {beta_start} <= {beta_end} < 1"
        )));
    }
    let mut betas = Vec::with_capacity(t_count);
    if t_count == 1 {
        betas.push(beta_start);
    } else {
        for i in 0..t_count {
            let frac = i as f64 / (t_count - 1) as f64;
            betas.push(beta_start + (beta_end - beta_start) * frac);
        }
    }
    let mut alpha_bars = Vec::with_capacity(t_count);
    let mut prod = 1.0f64;
    for &b in &betas {
        prod *= 1.0 - b;
        alpha_bars.push(prod);
    }
    let sigmas = alpha_bars.iter().map(|a| (1.0 - a).sqrt()).collect();
    Ok(NoiseSchedule {
        betas,
        alpha_bars,
        sigmas,
    })
}

/// x_t = sqrt(alpha_bar_t) x0 + sigma_t eps
pub fn forward_noise(x0: &[f64], eps: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(AdlError::InvalidArgument("x0/eps shape mismatch".into()));
    }
    let sa = sched.sqrt_alpha_bar(t)?;
    let sig = sched.sigma(t)?;
    Ok(x0.iter().zip(eps).map(|(a, e)| sa * a + sig * e).collect())
}

/// eps_hat = (x - sqrt(alpha_bar_t) x0_hat) / sigma_t
pub fn eps_from_x0(x: &[f64], x0_hat: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if x.len() != x0_hat.len() {
        return Err(AdlError::InvalidArgument("shape mismatch".into()));
    }
    let sig = sched.sigma(t)?;
    if sig < PARAM_GUARD {
        return Err(AdlError::Numerical("ill-defined parametrization".into()));
    }
    let sa = sched.sqrt_alpha_bar(t)?;
    Ok(x.iter()
        .zip(x0_hat)
        .map(|(xi, x0i)| (xi - sa * x0i) / sig)
        .collect())
}

/// x0_hat = (x - sigma_t eps_hat) / sqrt(alpha_bar_t)
pub fn x0_from_eps(x: &[f64], eps_hat: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if x.len() != eps_hat.len() {
        return Err(AdlError::InvalidArgument("shape mismatch".into()));
    }
    let sa = sched.sqrt_alpha_bar(t)?;
    if sa < PARAM_GUARD {
        return Err(AdlError::Numerical("ill-defined parametrization".into()));
    }
    let sig = sched.sigma(t)?;
    Ok(x.iter()
        .zip(eps_hat)
        .map(|(xi, ei)| (xi - sig * ei) / sa)
        .collect())
}
