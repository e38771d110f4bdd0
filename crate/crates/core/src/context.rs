//! Identity-context production: the frozen toy encoder, contextual partial
//! dropout, uniform-hypersphere sampling, two-stage synthetic contexts, and
//! fixed-context identity-set generation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::denoiser::{ConditioningMode, Denoiser};
use crate::diffusion::{self, DiffusionError};
use crate::numerics::{self, Tensor, TensorError};
use crate::schedule::VarianceSchedule;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dropout probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("projection of the input is numerically zero")]
    DegenerateProjection,
    #[error("encoder projection stayed rank-deficient after {0} draws")]
    RankDeficient(usize),
    #[error("two-stage context generation exhausted {attempts} seeds")]
    TwoStageExhausted { attempts: usize },
    #[error("two-stage contexts require an unconditional companion model")]
    NotUnconditional,
    #[error("sampling failed: {0}")]
    Sampling(#[source] Box<DiffusionError>),
}

impl From<DiffusionError> for ContextError {
    fn from(e: DiffusionError) -> Self {
        ContextError::Sampling(Box::new(e))
    }
}

/// How an identity context was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Encoded from a reference sample.
    Authentic,
    /// Drawn uniformly from the unit hypersphere.
    Uniform,
    /// Encoded from an unconditional model's synthetic sample.
    TwoStage,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Authentic => "authentic",
            Provenance::Uniform => "uniform",
            Provenance::TwoStage => "two_stage",
        }
    }
}

/// A unit-norm identity embedding plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityContext {
    embedding: Tensor,
    provenance: Provenance,
}

impl IdentityContext {
    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.embedding.len()
    }
}

/// Contextual-partial-dropout settings: per-component drop probability and
/// whether surviving components are rescaled by 1/(1-p) (inverted dropout,
/// the default) so the training-time expectation matches the full context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpdSettings {
    pub p: f64,
    pub rescale: bool,
}

impl CpdSettings {
    pub fn new(p: f64) -> Result<Self, ContextError> {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(ContextError::BadProbability(p));
        }
        Ok(CpdSettings { p, rescale: true })
    }

    pub fn disabled() -> Self {
        CpdSettings {
            p: 0.0,
            rescale: true,
        }
    }

    pub fn without_rescale(mut self) -> Self {
        self.rescale = false;
        self
    }
}

/// Deterministic dropout core: apply a fixed keep-mask, then rescale.
pub fn apply_cpd_mask(
    c: &Tensor,
    p: f64,
    keep: &[bool],
    rescale: bool,
) -> Result<Tensor, ContextError> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(ContextError::BadProbability(p));
    }
    if keep.len() != c.len() {
        return Err(ContextError::Tensor(TensorError::ShapeMismatch {
            op: "apply_cpd_mask",
            lhs: c.shape().to_vec(),
            rhs: vec![keep.len()],
        }));
    }
    if p >= 1.0 {
        return Ok(Tensor::zeros(c.shape()));
    }
    let gain = if rescale { 1.0 / (1.0 - p) } else { 1.0 };
    let data = c
        .data()
        .iter()
        .zip(keep)
        .map(|(&v, &k)| if k { v * gain } else { 0.0 })
        .collect();
    Ok(Tensor::new(c.shape().to_vec(), data)?)
}

/// Contextual partial dropout: at training time each component survives
/// with probability 1-p (mask redrawn on every call); outside training, or
/// at p = 0, the context passes through unchanged. p = 1 yields the zero
/// vector.
pub fn apply_cpd<R: Rng>(
    c: &Tensor,
    p: f64,
    rng: &mut R,
    training: bool,
) -> Result<Tensor, ContextError> {
    apply_cpd_with(c, &CpdSettings::new(p)?, rng, training)
}

/// [`apply_cpd`] with the rescale switch exposed.
pub fn apply_cpd_with<R: Rng>(
    c: &Tensor,
    cpd: &CpdSettings,
    rng: &mut R,
    training: bool,
) -> Result<Tensor, ContextError> {
    if !(0.0..=1.0).contains(&cpd.p) || !cpd.p.is_finite() {
        return Err(ContextError::BadProbability(cpd.p));
    }
    if !training || cpd.p == 0.0 {
        return Ok(c.clone());
    }
    let keep: Vec<bool> = (0..c.len()).map(|_| rng.random::<f64>() >= cpd.p).collect();
    apply_cpd_mask(c, cpd.p, &keep, cpd.rescale)
}

/// Frozen random projection standing in for a pretrained feature extractor:
/// maps data vectors to unit-norm embeddings, deterministically per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    projection: Tensor,
    seed: u64,
}

impl ToyEncoder {
    /// Draw a `context_dim x data_dim` Gaussian projection from the seed,
    /// redrawing (bounded) if it comes out rank-deficient.
    pub fn new(context_dim: usize, data_dim: usize, seed: u64) -> Result<Self, ContextError> {
        const MAX_DRAWS: usize = 16;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for _ in 0..MAX_DRAWS {
            let data: Vec<f64> = (0..context_dim * data_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let projection = Tensor::new(vec![context_dim, data_dim], data)?;
            // Full row rank is only attainable (and required) for d <= n.
            if context_dim > data_dim || matrix_row_rank(&projection) == context_dim {
                return Ok(ToyEncoder { projection, seed });
            }
        }
        Err(ContextError::RankDeficient(MAX_DRAWS))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn context_dim(&self) -> usize {
        self.projection.shape()[0]
    }

    pub fn data_dim(&self) -> usize {
        self.projection.shape()[1]
    }

    pub fn projection(&self) -> &Tensor {
        &self.projection
    }
}

/// Row rank via Gaussian elimination with partial pivoting.
fn matrix_row_rank(m: &Tensor) -> usize {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut a: Vec<Vec<f64>> = (0..rows).map(|i| m.row(i).unwrap().to_vec()).collect();
    let tol = 1e-10;
    let mut rank = 0;
    let mut col = 0;
    while rank < rows && col < cols {
        let pivot = (rank..rows).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        });
        let Some(p) = pivot else { break };
        if a[p][col].abs() <= tol {
            col += 1;
            continue;
        }
        a.swap(rank, p);
        let (pivot_rows, rest) = a.split_at_mut(rank + 1);
        let pivot_row = &pivot_rows[rank];
        for row in rest {
            let f = row[col] / pivot_row[col];
            for (v, &pv) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *v -= f * pv;
            }
        }
        rank += 1;
        col += 1;
    }
    rank
}

/// Encode a sample: `c = P x / ||P x||`, provenance `authentic`.
pub fn encode(encoder: &ToyEncoder, x: &Tensor) -> Result<IdentityContext, ContextError> {
    let projected = numerics::matvec(&encoder.projection, x)?;
    let norm = projected.l2_norm();
    if norm <= 1e-12 {
        return Err(ContextError::DegenerateProjection);
    }
    let embedding = numerics::scale(&projected, 1.0 / norm)?;
    Ok(IdentityContext {
        embedding,
        provenance: Provenance::Authentic,
    })
}

/// Uniform draw from the unit hypersphere: normalize a spherical Gaussian
/// (redrawing the measure-zero degenerate case).
pub fn sample_uniform_context<R: Rng>(d: usize, rng: &mut R) -> IdentityContext {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            let data = g.into_iter().map(|v| v / norm).collect();
            return IdentityContext {
                embedding: Tensor::new(vec![d], data).expect("normalized gaussian is finite"),
                provenance: Provenance::Uniform,
            };
        }
    }
}

/// Two-stage synthetic context: sample a synthetic reference from the
/// unconditional companion model, then encode it. Degenerate references are
/// retried with consecutive seeds, at most 8 attempts.
pub fn two_stage_context(
    unconditional: &Denoiser,
    schedule: &VarianceSchedule,
    encoder: &ToyEncoder,
    seed: u64,
) -> Result<IdentityContext, ContextError> {
    if unconditional.config().conditioning != ConditioningMode::Unconditional {
        return Err(ContextError::NotUnconditional);
    }
    const MAX_ATTEMPTS: u64 = 8;
    for attempt in 0..MAX_ATTEMPTS {
        let reference = diffusion::sample(unconditional, schedule, None, seed + attempt)?;
        match encode(encoder, &reference) {
            Ok(ctx) => {
                return Ok(IdentityContext {
                    embedding: ctx.embedding,
                    provenance: Provenance::TwoStage,
                })
            }
            Err(ContextError::DegenerateProjection) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(ContextError::TwoStageExhausted {
        attempts: MAX_ATTEMPTS as usize,
    })
}

/// Generate `m` samples of one identity by fixing the context and varying
/// the sampler seed over `base_seed .. base_seed + m`.
pub fn generate_identity_set(
    denoiser: &Denoiser,
    schedule: &VarianceSchedule,
    context: &IdentityContext,
    m: usize,
    base_seed: u64,
) -> Result<Tensor, ContextError> {
    let mut rows = Vec::with_capacity(m);
    for j in 0..m as u64 {
        let x = diffusion::sample(denoiser, schedule, Some(context.embedding()), base_seed + j)?;
        rows.push(x.data().to_vec());
    }
    Ok(Tensor::from_rows(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::schedule::linear_schedule;

    #[test]
    fn encode_normalizes_and_is_scale_invariant() {
        let enc = ToyEncoder::new(4, 6, 7).unwrap();
        let x = Tensor::from_vec(vec![0.3, -1.0, 2.0, 0.1, 0.0, -0.4]).unwrap();
        let c = encode(&enc, &x).unwrap();
        assert!((c.embedding().l2_norm() - 1.0).abs() < 1e-9);
        assert_eq!(c.provenance(), Provenance::Authentic);

        let x2 = numerics::scale(&x, 2.0).unwrap();
        assert_eq!(encode(&enc, &x2).unwrap().embedding(), c.embedding());
    }

    #[test]
    fn encode_identity_projection_hand_case() {
        // with P = I (d = n), x = [3,4] -> c = [0.6, 0.8]
        let enc = ToyEncoder {
            projection: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            seed: 0,
        };
        let c = encode(&enc, &Tensor::from_vec(vec![3.0, 4.0]).unwrap()).unwrap();
        assert!((c.embedding().data()[0] - 0.6).abs() < 1e-15);
        assert!((c.embedding().data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn encode_rejects_degenerate_projection() {
        let enc = ToyEncoder {
            projection: Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap(),
            seed: 0,
        };
        let x = Tensor::from_vec(vec![0.0, 5.0]).unwrap();
        assert!(matches!(
            encode(&enc, &x),
            Err(ContextError::DegenerateProjection)
        ));
    }

    #[test]
    fn encoder_is_deterministic_per_seed() {
        let a = ToyEncoder::new(4, 8, 3).unwrap();
        let b = ToyEncoder::new(4, 8, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cpd_passthrough_and_full_drop() {
        let c = Tensor::from_vec(vec![0.6, 0.8]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let out = apply_cpd(&c, 0.0, &mut rng, true).unwrap();
        assert_eq!(out, c);
        let out = apply_cpd(&c, 0.7, &mut rng, false).unwrap();
        assert_eq!(out, c);
        let out = apply_cpd(&c, 1.0, &mut rng, true).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn cpd_mask_then_scale() {
        // c = [0.6, 0.8], p = 0.5, mask keeps only the first -> [1.2, 0]
        let c = Tensor::from_vec(vec![0.6, 0.8]).unwrap();
        let out = apply_cpd_mask(&c, 0.5, &[true, false], true).unwrap();
        assert_eq!(out.data(), &[1.2, 0.0]);
        let unscaled = apply_cpd_mask(&c, 0.5, &[true, false], false).unwrap();
        assert_eq!(unscaled.data(), &[0.6, 0.0]);
    }

    #[test]
    fn cpd_rejects_bad_probability() {
        let c = Tensor::from_vec(vec![1.0]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(apply_cpd(&c, -0.1, &mut rng, true).is_err());
        assert!(apply_cpd(&c, 1.5, &mut rng, true).is_err());
    }

    #[test]
    fn uniform_context_normalization() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..100 {
            let c = sample_uniform_context(3, &mut rng);
            assert!((c.embedding().l2_norm() - 1.0).abs() < 1e-9);
            assert_eq!(c.provenance(), Provenance::Uniform);
        }
    }

    fn tiny_uncond() -> (Denoiser, VarianceSchedule) {
        let cfg = DenoiserConfig {
            data_dim: 4,
            hidden_dim: 8,
            depth: 1,
            time_embed_dim: 4,
            context_dim: 3,
            conditioning: ConditioningMode::Unconditional,
            attention_heads: 1,
        };
        (
            Denoiser::init(cfg, 17).unwrap(),
            linear_schedule(4, 0.1, 0.4).unwrap(),
        )
    }

    #[test]
    fn two_stage_context_is_seed_deterministic_and_unit_norm() {
        let (den, sched) = tiny_uncond();
        let enc = ToyEncoder::new(3, 4, 5).unwrap();
        let a = two_stage_context(&den, &sched, &enc, 42).unwrap();
        let b = two_stage_context(&den, &sched, &enc, 42).unwrap();
        assert_eq!(a, b);
        assert!((a.embedding().l2_norm() - 1.0).abs() < 1e-9);
        assert_eq!(a.provenance(), Provenance::TwoStage);

        let other = two_stage_context(&den, &sched, &enc, 43).unwrap();
        let cos: f64 = a
            .embedding()
            .data()
            .iter()
            .zip(other.embedding().data())
            .map(|(x, y)| x * y)
            .sum();
        assert!(cos < 1.0 - 1e-12);
    }

    #[test]
    fn two_stage_requires_unconditional_model() {
        let (den, sched) = tiny_uncond();
        let cfg = DenoiserConfig {
            conditioning: ConditioningMode::CrossAttention,
            ..den.config().clone()
        };
        let conditional = Denoiser::init(cfg, 1).unwrap();
        let enc = ToyEncoder::new(3, 4, 5).unwrap();
        assert!(matches!(
            two_stage_context(&conditional, &sched, &enc, 1),
            Err(ContextError::NotUnconditional)
        ));
    }

    #[test]
    fn identity_set_shapes_and_degenerate_case() {
        let (den, sched) = tiny_uncond();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let ctx = sample_uniform_context(3, &mut rng);
        let one = generate_identity_set(&den, &sched, &ctx, 1, 100).unwrap();
        assert_eq!(one.shape(), &[1, 4]);
        let single = diffusion::sample(&den, &sched, Some(ctx.embedding()), 100).unwrap();
        assert_eq!(one.row(0).unwrap(), single.data());

        let many = generate_identity_set(&den, &sched, &ctx, 16, 100).unwrap();
        assert_eq!(many.shape(), &[16, 4]);
        assert!(many.data().iter().all(|v| v.is_finite()));
    }
}
