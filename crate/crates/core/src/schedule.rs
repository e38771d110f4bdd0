//! Discrete diffusion variance schedules.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule endpoints: need 0 < beta_start <= beta_end < 1, got {start} and {end}")]
    InvalidEndpoints { start: f64, end: f64 },
    #[error("step count must be >= 1")]
    EmptySchedule,
    #[error("time step {t} outside [1, {t_max}]")]
    StepOutOfRange { t: usize, t_max: usize },
}

/// Which per-step sampler noise scale sigma_t to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaKind {
    /// sigma_t = sqrt(beta_t).
    #[default]
    Beta,
    /// sigma_t = sqrt(beta_t * (1 - abar_{t-1}) / (1 - abar_t)), with
    /// abar_0 = 1 so sigma_1 = 0.
    TildeBeta,
}

impl SigmaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SigmaKind::Beta => "beta",
            SigmaKind::TildeBeta => "tilde_beta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "beta" => Some(SigmaKind::Beta),
            "tilde_beta" => Some(SigmaKind::TildeBeta),
            _ => None,
        }
    }
}

/// Everything needed to rebuild a schedule bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma: SigmaKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            t_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma: SigmaKind::Beta,
        }
    }
}

/// Per-step values queried from a [`VarianceSchedule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepValues {
    pub beta: f64,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub sigma: f64,
}

/// Tabulated beta_t, alpha_t = 1 - beta_t, and running product
/// abar_t = prod_{i<=t} alpha_i for t = 1..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linear schedule: beta_t interpolates from `beta_start` at t = 1 to
/// `beta_end` at t = T.
pub fn linear_schedule(
    t_steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<VarianceSchedule, ScheduleError> {
    VarianceSchedule::new(ScheduleConfig {
        t_steps,
        beta_start,
        beta_end,
        sigma: SigmaKind::Beta,
    })
}

impl VarianceSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self, ScheduleError> {
        let t_steps = config.t_steps;
        if t_steps == 0 {
            return Err(ScheduleError::EmptySchedule);
        }
        let (start, end) = (config.beta_start, config.beta_end);
        if !(start > 0.0 && start <= end && end < 1.0) || !start.is_finite() || !end.is_finite() {
            return Err(ScheduleError::InvalidEndpoints { start, end });
        }

        let mut betas = Vec::with_capacity(t_steps);
        let mut alphas = Vec::with_capacity(t_steps);
        let mut alpha_bars = Vec::with_capacity(t_steps);
        let mut running = 1.0;
        for i in 0..t_steps {
            let beta = if t_steps == 1 {
                start
            } else {
                start + (end - start) * (i as f64) / ((t_steps - 1) as f64)
            };
            let alpha = 1.0 - beta;
            running *= alpha;
            betas.push(beta);
            alphas.push(alpha);
            alpha_bars.push(running);
        }
        Ok(VarianceSchedule {
            config,
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn t_steps(&self) -> usize {
        self.config.t_steps
    }

    /// Tabulated values at step `t` (1-based).
    pub fn query(&self, t: usize) -> Result<StepValues, ScheduleError> {
        if t < 1 || t > self.t_steps() {
            return Err(ScheduleError::StepOutOfRange {
                t,
                t_max: self.t_steps(),
            });
        }
        let idx = t - 1;
        let beta = self.betas[idx];
        let alpha_bar = self.alpha_bars[idx];
        let sigma = match self.config.sigma {
            SigmaKind::Beta => beta.sqrt(),
            SigmaKind::TildeBeta => {
                let prev_bar = if idx == 0 { 1.0 } else { self.alpha_bars[idx - 1] };
                (beta * (1.0 - prev_bar) / (1.0 - alpha_bar)).sqrt()
            }
        };
        Ok(StepValues {
            beta,
            alpha: self.alphas[idx],
            alpha_bar,
            sigma,
        })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}
