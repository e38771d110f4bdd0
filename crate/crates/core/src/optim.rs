//! Adam, the cosine-annealing warm-restart learning-rate schedule, and EMA
//! shadow weights.

use std::f64::consts::PI;

use thiserror::Error;

use crate::numerics::{ParamSet, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("gradient for {path:?} is not finite; aborting the step")]
    NonFiniteGradient { path: String },
    #[error("parameter layout mismatch between {0}")]
    LayoutMismatch(&'static str),
    #[error("invalid {what}: {value}")]
    InvalidValue { what: &'static str, value: f64 },
}

/// Optimizer state for [`adam_step`]: per-parameter first/second moments
/// plus the step counter used for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self::with_hyperparams(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(params: &ParamSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            step: 0,
            beta1,
            beta2,
            eps,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Standard bias-corrected Adam update, in place. Rejects non-finite
/// gradients before touching any state, naming the offending parameter.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), OptimError> {
    if !params.same_layout(grads) {
        return Err(OptimError::LayoutMismatch("params and grads"));
    }
    if !params.same_layout(&state.m) {
        return Err(OptimError::LayoutMismatch("params and optimizer state"));
    }
    for (path, g) in grads.iter() {
        if !g.data().iter().all(|v| v.is_finite()) {
            return Err(OptimError::NonFiniteGradient {
                path: path.to_string(),
            });
        }
    }

    let t = state.step + 1;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    for (path, p) in params.iter_mut() {
        let g = grads.get(path).expect("layout checked").data();
        let m = state.m.get_mut(path).expect("layout checked");
        let v = state.v.get_mut(path).expect("layout checked");
        let mut m_data = m.data().to_vec();
        let mut v_data = v.data().to_vec();
        let mut p_data = p.data().to_vec();
        for i in 0..p_data.len() {
            m_data[i] = state.beta1 * m_data[i] + (1.0 - state.beta1) * g[i];
            v_data[i] = state.beta2 * v_data[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m_data[i] / bc1;
            let v_hat = v_data[i] / bc2;
            p_data[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        *m = Tensor::new(m.shape().to_vec(), m_data)?;
        *v = Tensor::new(v.shape().to_vec(), v_data)?;
        *p = Tensor::new(p.shape().to_vec(), p_data)?;
    }
    state.step = t;
    Ok(())
}

/// Cosine annealing with warm restarts: phases of length L, 2L, 4L, ...;
/// within a phase of length P at offset k the rate is
/// `gamma_min + 0.5 (gamma_max - gamma_min) (1 + cos(pi k / P))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub gamma_max: f64,
    pub gamma_min: f64,
    pub first_phase_len: u64,
    pub growth_factor: u64,
}

impl LrSchedule {
    pub fn new(gamma_max: f64, gamma_min: f64, first_phase_len: u64) -> Result<Self, OptimError> {
        if !(gamma_min.is_finite() && gamma_max.is_finite()) || gamma_min > gamma_max {
            return Err(OptimError::InvalidValue {
                what: "learning-rate range",
                value: gamma_max,
            });
        }
        if first_phase_len == 0 {
            return Err(OptimError::InvalidValue {
                what: "first_phase_len",
                value: 0.0,
            });
        }
        Ok(LrSchedule {
            gamma_max,
            gamma_min,
            first_phase_len,
            growth_factor: 2,
        })
    }

    /// Cumulative step at which phase `k` (0-based) begins: L (g^k - 1) for
    /// growth factor g = 2.
    pub fn phase_start(&self, k: u32) -> u64 {
        self.first_phase_len * (self.growth_factor.pow(k) - 1)
    }
}

/// Learning rate at a global step. Restarts land exactly on `gamma_max`.
pub fn lr_at(sched: &LrSchedule, global_step: u64) -> f64 {
    let mut phase_len = sched.first_phase_len;
    let mut offset = global_step;
    while offset >= phase_len {
        offset -= phase_len;
        phase_len *= sched.growth_factor;
    }
    if offset == 0 {
        return sched.gamma_max;
    }
    let theta = PI * offset as f64 / phase_len as f64;
    sched.gamma_min + 0.5 * (sched.gamma_max - sched.gamma_min) * (1.0 + theta.cos())
}

/// EMA shadow of the live parameters with a power-law decay ramp:
/// `decay(t) = 1 - (t + 1)^(-power)`, clamped to [0, 1). At power 0.75 the
/// decay reaches 0.999 exactly on the 10,000th update.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: ParamSet,
    pub power: f64,
    pub step: u64,
}

impl EmaState {
    pub fn new(params: &ParamSet, power: f64) -> Self {
        EmaState {
            shadow: params.clone(),
            power,
            step: 0,
        }
    }

    /// The decay that the next [`ema_update`] call will use.
    pub fn next_decay(&self) -> f64 {
        ema_decay(self.step, self.power)
    }
}

pub fn ema_decay(step: u64, power: f64) -> f64 {
    let d = 1.0 - ((step + 1) as f64).powf(-power);
    d.clamp(0.0, 1.0 - f64::EPSILON)
}

/// `shadow <- decay * shadow + (1 - decay) * params`, then advance the step.
pub fn ema_update(ema: &mut EmaState, params: &ParamSet) -> Result<(), OptimError> {
    if !ema.shadow.same_layout(params) {
        return Err(OptimError::LayoutMismatch("EMA shadow and params"));
    }
    let decay = ema.next_decay();
    for (path, s) in ema.shadow.iter_mut() {
        let p = params.get(path).expect("layout checked").data();
        let data = s
            .data()
            .iter()
            .zip(p)
            .map(|(&sv, &pv)| decay * sv + (1.0 - decay) * pv)
            .collect();
        *s = Tensor::new(s.shape().to_vec(), data)?;
    }
    ema.step += 1;
    Ok(())
}
