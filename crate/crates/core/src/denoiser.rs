//! The noise-prediction network: an MLP over vector-valued inputs with a
//! sinusoidal time embedding and a pluggable identity-conditioning mechanism.
//!
//! The time embedding is concatenated to the data vector at the input
//! projection. Each hidden block is `silu(W h + b)` followed by the
//! configured conditioning step:
//!
//! * `adagn` — the block output is modulated `h * (1 + s(c)) + b(c)` with
//!   linear scale/shift projections of the context;
//! * `xattn` — single-token cross-attention whose queries come from the
//!   hidden features and whose key/value token is a learned projection of
//!   the context, added residually;
//! * `unconditional` — the context is ignored entirely.
//!
//! Conditioning output projections are zero-initialized, so an untrained
//! conditional network computes exactly its unconditional trunk.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numerics::{ParamSet, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenoiserError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid denoiser config: {0}")]
    InvalidConfig(String),
    #[error("time embedding dimension must be even, got {0}")]
    OddTimeEmbedDim(usize),
    #[error("time step {t} outside [1, {t_max}]")]
    StepOutOfRange { t: usize, t_max: usize },
    #[error("conditioning mode {mode:?} requires a context vector")]
    MissingContext { mode: ConditioningMode },
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("parameter {path:?}: expected shape {expected:?}, got {got:?}")]
    ParamShape {
        path: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("bad input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConditioningMode {
    AdaGn,
    #[default]
    CrossAttention,
    Unconditional,
}

impl ConditioningMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditioningMode::AdaGn => "adagn",
            ConditioningMode::CrossAttention => "xattn",
            ConditioningMode::Unconditional => "unconditional",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adagn" => Some(ConditioningMode::AdaGn),
            "xattn" => Some(ConditioningMode::CrossAttention),
            "unconditional" => Some(ConditioningMode::Unconditional),
            _ => None,
        }
    }

    pub fn is_conditional(self) -> bool {
        !matches!(self, ConditioningMode::Unconditional)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiserConfig {
    /// Data dimension n.
    pub data_dim: usize,
    pub hidden_dim: usize,
    /// Number of hidden blocks.
    pub depth: usize,
    /// Sinusoidal embedding width (even).
    pub time_embed_dim: usize,
    /// Context dimension d.
    pub context_dim: usize,
    pub conditioning: ConditioningMode,
    /// Heads for cross-attention; must divide `hidden_dim`.
    pub attention_heads: usize,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        let dims = [
            self.data_dim,
            self.hidden_dim,
            self.depth,
            self.time_embed_dim,
            self.context_dim,
            self.attention_heads,
        ];
        if dims.contains(&0) {
            return Err(DenoiserError::InvalidConfig(
                "all dimensions must be >= 1".into(),
            ));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(DenoiserError::OddTimeEmbedDim(self.time_embed_dim));
        }
        if !self.hidden_dim.is_multiple_of(self.attention_heads) {
            return Err(DenoiserError::InvalidConfig(format!(
                "attention_heads {} must divide hidden_dim {}",
                self.attention_heads, self.hidden_dim
            )));
        }
        Ok(())
    }

    /// Total number of scalar parameters, a pure function of the config.
    pub fn param_count(&self) -> usize {
        param_specs(self).iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitKind {
    /// Gaussian with std 1/sqrt(fan_in).
    Gaussian { fan_in: usize },
    Zero,
}

struct ParamSpec {
    path: String,
    shape: Vec<usize>,
    init: InitKind,
}

/// Canonical parameter list in construction order. Initialization draws
/// follow this order, so it is part of the seed-determinism contract.
fn param_specs(cfg: &DenoiserConfig) -> Vec<ParamSpec> {
    let (n, h, d, te) = (cfg.data_dim, cfg.hidden_dim, cfg.context_dim, cfg.time_embed_dim);
    let mut specs = vec![
        ParamSpec {
            path: "in.weight".into(),
            shape: vec![h, n + te],
            init: InitKind::Gaussian { fan_in: n + te },
        },
        ParamSpec {
            path: "in.bias".into(),
            shape: vec![h],
            init: InitKind::Zero,
        },
    ];
    for i in 0..cfg.depth {
        specs.push(ParamSpec {
            path: format!("block{i}.weight"),
            shape: vec![h, h],
            init: InitKind::Gaussian { fan_in: h },
        });
        specs.push(ParamSpec {
            path: format!("block{i}.bias"),
            shape: vec![h],
            init: InitKind::Zero,
        });
        match cfg.conditioning {
            ConditioningMode::Unconditional => {}
            ConditioningMode::AdaGn => {
                // Scale/shift projections are the conditioning output layers:
                // zero-initialized so conditioning starts as a no-op.
                for name in ["scale", "shift"] {
                    specs.push(ParamSpec {
                        path: format!("block{i}.cond.{name}.weight"),
                        shape: vec![h, d],
                        init: InitKind::Zero,
                    });
                    specs.push(ParamSpec {
                        path: format!("block{i}.cond.{name}.bias"),
                        shape: vec![h],
                        init: InitKind::Zero,
                    });
                }
            }
            ConditioningMode::CrossAttention => {
                specs.push(ParamSpec {
                    path: format!("block{i}.attn.wq"),
                    shape: vec![h, h],
                    init: InitKind::Gaussian { fan_in: h },
                });
                specs.push(ParamSpec {
                    path: format!("block{i}.attn.wk"),
                    shape: vec![h, d],
                    init: InitKind::Gaussian { fan_in: d },
                });
                specs.push(ParamSpec {
                    path: format!("block{i}.attn.wv"),
                    shape: vec![h, d],
                    init: InitKind::Gaussian { fan_in: d },
                });
                specs.push(ParamSpec {
                    path: format!("block{i}.attn.wo"),
                    shape: vec![h, h],
                    init: InitKind::Zero,
                });
            }
        }
    }
    specs.push(ParamSpec {
        path: "out.weight".into(),
        shape: vec![n, h],
        init: InitKind::Gaussian { fan_in: h },
    });
    specs.push(ParamSpec {
        path: "out.bias".into(),
        shape: vec![n],
        init: InitKind::Zero,
    });
    specs
}

/// Deterministic parameter initialization: weights from a scaled Gaussian
/// (std = 1/sqrt(fan_in)), biases and conditioning output layers zero.
pub fn init_params(cfg: &DenoiserConfig, seed: u64) -> Result<ParamSet, DenoiserError> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for spec in param_specs(cfg) {
        let len: usize = spec.shape.iter().product();
        let data = match spec.init {
            InitKind::Zero => vec![0.0; len],
            InitKind::Gaussian { fan_in } => {
                let std = 1.0 / (fan_in as f64).sqrt();
                (0..len)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        };
        params.insert(spec.path, Tensor::new(spec.shape, data)?)?;
    }
    Ok(params)
}

/// Sinusoidal time embedding: `dim/2` geometrically spaced frequencies from
/// 1 down to 1e-4, sines first then cosines.
pub fn time_embedding(t: usize, t_max: usize, dim: usize) -> Result<Tensor, DenoiserError> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(DenoiserError::OddTimeEmbedDim(dim));
    }
    if t < 1 || t > t_max {
        return Err(DenoiserError::StepOutOfRange { t, t_max });
    }
    Ok(time_embedding_values(t, dim))
}

fn time_embedding_values(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = vec![0.0; dim];
    for k in 0..half {
        let omega = if half == 1 {
            1.0
        } else {
            10f64.powf(-4.0 * k as f64 / (half - 1) as f64)
        };
        let phase = t as f64 * omega;
        data[k] = phase.sin();
        data[half + k] = phase.cos();
    }
    Tensor::new(vec![dim], data).expect("sin/cos are finite")
}

enum BlockCondVars {
    None,
    AdaGn {
        scale_w: Var,
        scale_b: Var,
        shift_w: Var,
        shift_b: Var,
    },
    XAttn {
        wq: Var,
        wk: Var,
        wv: Var,
        wo: Var,
    },
}

struct BlockVars {
    w: Var,
    b: Var,
    cond: BlockCondVars,
}

/// Tape handles for every parameter of a configured denoiser.
pub struct DenoiserVars {
    in_w: Var,
    in_b: Var,
    blocks: Vec<BlockVars>,
    out_w: Var,
    out_b: Var,
}

impl DenoiserVars {
    /// Register `params` on the tape as named parameters (gradient targets).
    pub fn register(
        cfg: &DenoiserConfig,
        params: &ParamSet,
        tape: &mut Tape,
    ) -> Result<Self, DenoiserError> {
        let mut lookup = |spec: &ParamSpec| -> Result<Var, DenoiserError> {
            let tensor = checked_param(params, spec)?;
            Ok(tape.param(&spec.path, tensor.clone())?)
        };
        Self::build(cfg, &mut lookup)
    }

    /// Record `params` as constants (no gradients); used for inference.
    pub fn constants(
        cfg: &DenoiserConfig,
        params: &ParamSet,
        tape: &mut Tape,
    ) -> Result<Self, DenoiserError> {
        let mut lookup = |spec: &ParamSpec| -> Result<Var, DenoiserError> {
            let tensor = checked_param(params, spec)?;
            Ok(tape.constant(tensor.clone()))
        };
        Self::build(cfg, &mut lookup)
    }

    /// Resolve vars from an existing path -> Var map (gradient-check harness).
    pub fn from_map(
        cfg: &DenoiserConfig,
        map: &std::collections::BTreeMap<String, Var>,
    ) -> Result<Self, DenoiserError> {
        let mut lookup = |spec: &ParamSpec| -> Result<Var, DenoiserError> {
            map.get(&spec.path)
                .copied()
                .ok_or_else(|| DenoiserError::MissingParam(spec.path.clone()))
        };
        Self::build(cfg, &mut lookup)
    }

    fn build(
        cfg: &DenoiserConfig,
        lookup: &mut dyn FnMut(&ParamSpec) -> Result<Var, DenoiserError>,
    ) -> Result<Self, DenoiserError> {
        cfg.validate()?;
        let specs = param_specs(cfg);
        let mut vars = std::collections::BTreeMap::new();
        for spec in &specs {
            vars.insert(spec.path.clone(), lookup(spec)?);
        }
        let get = |p: &str| vars[p];
        let blocks = (0..cfg.depth)
            .map(|i| {
                let cond = match cfg.conditioning {
                    ConditioningMode::Unconditional => BlockCondVars::None,
                    ConditioningMode::AdaGn => BlockCondVars::AdaGn {
                        scale_w: get(&format!("block{i}.cond.scale.weight")),
                        scale_b: get(&format!("block{i}.cond.scale.bias")),
                        shift_w: get(&format!("block{i}.cond.shift.weight")),
                        shift_b: get(&format!("block{i}.cond.shift.bias")),
                    },
                    ConditioningMode::CrossAttention => BlockCondVars::XAttn {
                        wq: get(&format!("block{i}.attn.wq")),
                        wk: get(&format!("block{i}.attn.wk")),
                        wv: get(&format!("block{i}.attn.wv")),
                        wo: get(&format!("block{i}.attn.wo")),
                    },
                };
                BlockVars {
                    w: get(&format!("block{i}.weight")),
                    b: get(&format!("block{i}.bias")),
                    cond,
                }
            })
            .collect();
        Ok(DenoiserVars {
            in_w: get("in.weight"),
            in_b: get("in.bias"),
            blocks,
            out_w: get("out.weight"),
            out_b: get("out.bias"),
        })
    }
}

fn checked_param<'p>(params: &'p ParamSet, spec: &ParamSpec) -> Result<&'p Tensor, DenoiserError> {
    let tensor = params
        .get(&spec.path)
        .ok_or_else(|| DenoiserError::MissingParam(spec.path.clone()))?;
    if tensor.shape() != spec.shape.as_slice() {
        return Err(DenoiserError::ParamShape {
            path: spec.path.clone(),
            expected: spec.shape.clone(),
            got: tensor.shape().to_vec(),
        });
    }
    Ok(tensor)
}

/// Validate that `params` holds exactly the paths and shapes the config
/// requires.
pub fn validate_params(cfg: &DenoiserConfig, params: &ParamSet) -> Result<(), DenoiserError> {
    cfg.validate()?;
    let specs = param_specs(cfg);
    for spec in &specs {
        checked_param(params, spec)?;
    }
    if params.len() != specs.len() {
        return Err(DenoiserError::InvalidConfig(format!(
            "expected {} parameters, got {}",
            specs.len(),
            params.len()
        )));
    }
    Ok(())
}

/// Predicted noise for one item, built on the tape so it can be
/// differentiated with respect to the registered parameters.
pub fn forward_on_tape(
    cfg: &DenoiserConfig,
    vars: &DenoiserVars,
    tape: &mut Tape,
    x: Var,
    t: usize,
    context: Option<Var>,
) -> Result<Var, DenoiserError> {
    if t < 1 {
        return Err(DenoiserError::StepOutOfRange { t, t_max: usize::MAX });
    }
    if tape.value(x).shape() != [cfg.data_dim] {
        return Err(DenoiserError::BadInput(format!(
            "x shape {:?}, expected [{}]",
            tape.value(x).shape(),
            cfg.data_dim
        )));
    }
    let context = match (cfg.conditioning.is_conditional(), context) {
        (true, None) => {
            return Err(DenoiserError::MissingContext {
                mode: cfg.conditioning,
            })
        }
        (true, Some(c)) => {
            if tape.value(c).shape() != [cfg.context_dim] {
                return Err(DenoiserError::BadInput(format!(
                    "context shape {:?}, expected [{}]",
                    tape.value(c).shape(),
                    cfg.context_dim
                )));
            }
            Some(c)
        }
        // Unconditional mode ignores any supplied context entirely.
        (false, _) => None,
    };

    let temb = tape.constant(time_embedding_values(t, cfg.time_embed_dim));
    let z = tape.concat(&[x, temb])?;
    let mut h = tape.matvec(vars.in_w, z)?;
    h = tape.add(h, vars.in_b)?;

    for block in &vars.blocks {
        let lin = tape.matvec(block.w, h)?;
        let lin = tape.add(lin, block.b)?;
        h = tape.silu(lin)?;
        match &block.cond {
            BlockCondVars::None => {}
            BlockCondVars::AdaGn {
                scale_w,
                scale_b,
                shift_w,
                shift_b,
            } => {
                let c = context.expect("conditional mode has context");
                let s = tape.matvec(*scale_w, c)?;
                let s = tape.add(s, *scale_b)?;
                let shift = tape.matvec(*shift_w, c)?;
                let shift = tape.add(shift, *shift_b)?;
                let one = tape.constant(Tensor::ones(&[cfg.hidden_dim]));
                let gain = tape.add(one, s)?;
                let scaled = tape.mul(h, gain)?;
                h = tape.add(scaled, shift)?;
            }
            BlockCondVars::XAttn { wq, wk, wv, wo } => {
                let c = context.expect("conditional mode has context");
                let q = tape.matvec(*wq, h)?;
                let k = tape.matvec(*wk, c)?;
                let v = tape.matvec(*wv, c)?;
                let head_dim = cfg.hidden_dim / cfg.attention_heads;
                let inv_sqrt = tape.constant(Tensor::scalar(1.0 / (head_dim as f64).sqrt())?);
                let mut heads = Vec::with_capacity(cfg.attention_heads);
                for j in 0..cfg.attention_heads {
                    let qj = tape.slice(q, j * head_dim, head_dim)?;
                    let kj = tape.slice(k, j * head_dim, head_dim)?;
                    let vj = tape.slice(v, j * head_dim, head_dim)?;
                    let qk = tape.mul(qj, kj)?;
                    let score = tape.sum(qk)?;
                    let score = tape.mul(score, inv_sqrt)?;
                    // Softmax over the single key/value token: max-shifted,
                    // so the weight is identically one and numerically safe
                    // for any score magnitude.
                    let shifted = tape.sub(score, score)?;
                    let e = tape.exp(shifted)?;
                    let weight = tape.div(e, e)?;
                    heads.push(tape.mul(vj, weight)?);
                }
                let attn = tape.concat(&heads)?;
                let proj = tape.matvec(*wo, attn)?;
                h = tape.add(h, proj)?;
            }
        }
    }

    let out = tape.matvec(vars.out_w, h)?;
    Ok(tape.add(out, vars.out_b)?)
}

/// A configured network together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamSet,
}

impl Denoiser {
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self, DenoiserError> {
        let params = init_params(&config, seed)?;
        Ok(Denoiser { config, params })
    }

    pub fn from_parts(config: DenoiserConfig, params: ParamSet) -> Result<Self, DenoiserError> {
        validate_params(&config, &params)?;
        Ok(Denoiser { config, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Same architecture, different parameter values (e.g. an EMA shadow).
    pub fn with_params(&self, params: ParamSet) -> Result<Self, DenoiserError> {
        Self::from_parts(self.config.clone(), params)
    }

    /// One-shot prediction. For repeated calls prefer [`Denoiser::evaluator`].
    pub fn forward(
        &self,
        x: &Tensor,
        t: usize,
        context: Option<&Tensor>,
    ) -> Result<Tensor, DenoiserError> {
        self.evaluator()?.forward(x, t, context)
    }

    /// Amortized forward pass: the parameters are recorded once and reused
    /// across calls.
    pub fn evaluator(&self) -> Result<DenoiserEvaluator, DenoiserError> {
        DenoiserEvaluator::new(self)
    }
}

pub struct DenoiserEvaluator {
    config: DenoiserConfig,
    tape: Tape,
    vars: DenoiserVars,
    base: usize,
}

impl DenoiserEvaluator {
    pub fn new(denoiser: &Denoiser) -> Result<Self, DenoiserError> {
        let mut tape = Tape::new();
        let vars = DenoiserVars::constants(&denoiser.config, &denoiser.params, &mut tape)?;
        let base = tape.len();
        Ok(DenoiserEvaluator {
            config: denoiser.config.clone(),
            tape,
            vars,
            base,
        })
    }

    pub fn forward(
        &mut self,
        x: &Tensor,
        t: usize,
        context: Option<&Tensor>,
    ) -> Result<Tensor, DenoiserError> {
        self.tape.truncate(self.base);
        let xv = self.tape.constant(x.clone());
        let cv = context.map(|c| self.tape.constant(c.clone()));
        let out = forward_on_tape(&self.config, &self.vars, &mut self.tape, xv, t, cv)?;
        Ok(self.tape.value(out).clone())
    }
}
