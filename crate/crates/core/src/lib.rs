//! Identity-conditioned denoising diffusion at desk scale.
//!
//! The crate trains a small conditional diffusion model over vector data,
//! generates synthetic identity sets from uniform or two-stage contexts, and
//! scores the results with standard biometric verification metrics.
//!
//! Module map:
//!
//! * [`numerics`] — tensors, reverse-mode autodiff, gradient checking
//! * [`schedule`] — the discrete diffusion variance schedule
//! * [`denoiser`] — the conditional noise-prediction MLP
//! * [`diffusion`] — forward diffusion, training loss, reverse sampler
//! * [`context`] — identity contexts: toy encoder, partial dropout, samplers
//! * [`optim`] — Adam, cosine warm-restart schedule, EMA shadow weights
//! * [`biometrics`] — genuine/imposter score sets and verification metrics
//! * [`data`] — toy identity datasets and persistence (CSV, checkpoints)
//! * [`train`] — the batch training loop tying the above together

pub mod biometrics;
pub mod context;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod numerics;
pub mod optim;
pub mod schedule;
pub mod textnum;
pub mod train;
