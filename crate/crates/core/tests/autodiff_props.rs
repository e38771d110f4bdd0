//! Randomized gradient verification: every differentiable primitive, and the
//! full training loss, against central finite differences.

use std::collections::BTreeMap;

use idkit_core::context::CpdSettings;
use idkit_core::denoiser::{
    ConditioningMode, Denoiser, DenoiserConfig, DenoiserVars,
};
use idkit_core::diffusion::{batch_loss_on_tape, prepare_batch, TrainBatch};
use idkit_core::numerics::{
    finite_difference_check, ParamSet, Tape, Tensor, TensorError, Var,
};
use idkit_core::schedule::linear_schedule;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalarize `out` as sum(out * r) with a fixed random probe r, isolating
/// the primitive's Jacobian.
fn probe_loss(tape: &mut Tape, out: Var, probe: &Tensor) -> Result<Var, TensorError> {
    let r = tape.constant(probe.clone());
    let weighted = tape.mul(out, r)?;
    tape.sum(weighted)
}

#[test]
fn primitives_match_central_differences_over_1000_trials() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xD1FF);
    let kinds = 11usize;
    for trial in 0..1000usize {
        let kind = trial % kinds;
        let dim = 2 + (trial / kinds) % 4;
        let mut params = ParamSet::new();
        let probe;
        match kind {
            0..=2 => {
                params.insert("a", rand_tensor(&mut rng, &[dim], -2.0, 2.0)).unwrap();
                params.insert("b", rand_tensor(&mut rng, &[dim], -2.0, 2.0)).unwrap();
                probe = rand_tensor(&mut rng, &[dim], -1.0, 1.0);
            }
            3 => {
                // matmul
                params.insert("a", rand_tensor(&mut rng, &[2, dim], -1.5, 1.5)).unwrap();
                params.insert("b", rand_tensor(&mut rng, &[dim, 3], -1.5, 1.5)).unwrap();
                probe = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
            }
            4 => {
                // matvec
                params.insert("a", rand_tensor(&mut rng, &[3, dim], -1.5, 1.5)).unwrap();
                params.insert("b", rand_tensor(&mut rng, &[dim], -1.5, 1.5)).unwrap();
                probe = rand_tensor(&mut rng, &[3], -1.0, 1.0);
            }
            5 | 6 => {
                // silu / exp
                params.insert("a", rand_tensor(&mut rng, &[dim], -2.0, 2.0)).unwrap();
                probe = rand_tensor(&mut rng, &[dim], -1.0, 1.0);
            }
            7 => {
                // div with denominator bounded away from zero
                params.insert("a", rand_tensor(&mut rng, &[dim], -2.0, 2.0)).unwrap();
                let mut b = rand_tensor(&mut rng, &[dim], 0.5, 2.0);
                if rng.random::<bool>() {
                    b = Tensor::new(
                        b.shape().to_vec(),
                        b.data().iter().map(|v| -v).collect(),
                    )
                    .unwrap();
                }
                params.insert("b", b).unwrap();
                probe = rand_tensor(&mut rng, &[dim], -1.0, 1.0);
            }
            8 => {
                // scalar broadcast mul
                params.insert("a", rand_tensor(&mut rng, &[dim], -2.0, 2.0)).unwrap();
                params.insert("b", rand_tensor(&mut rng, &[], -2.0, 2.0)).unwrap();
                probe = rand_tensor(&mut rng, &[dim], -1.0, 1.0);
            }
            9 => {
                // concat
                params.insert("a", rand_tensor(&mut rng, &[dim], -2.0, 2.0)).unwrap();
                params.insert("b", rand_tensor(&mut rng, &[dim + 1], -2.0, 2.0)).unwrap();
                probe = rand_tensor(&mut rng, &[2 * dim + 1], -1.0, 1.0);
            }
            _ => {
                // slice + sum composite
                params.insert("a", rand_tensor(&mut rng, &[dim + 2], -2.0, 2.0)).unwrap();
                probe = rand_tensor(&mut rng, &[dim], -1.0, 1.0);
            }
        }

        let report = finite_difference_check::<TensorError, _>(
            |tape: &mut Tape, vars: &BTreeMap<String, Var>| {
                let out = match kind {
                    0 => tape.add(vars["a"], vars["b"])?,
                    1 => tape.sub(vars["a"], vars["b"])?,
                    2 => tape.mul(vars["a"], vars["b"])?,
                    3 => tape.matmul(vars["a"], vars["b"])?,
                    4 => tape.matvec(vars["a"], vars["b"])?,
                    5 => tape.silu(vars["a"])?,
                    6 => tape.exp(vars["a"])?,
                    7 => tape.div(vars["a"], vars["b"])?,
                    8 => tape.mul(vars["a"], vars["b"])?,
                    9 => tape.concat(&[vars["a"], vars["b"]])?,
                    _ => tape.slice(vars["a"], 1, dim)?,
                };
                probe_loss(tape, out, &probe)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(
            report.passed(),
            "trial {trial} kind {kind}: max rel err {} at {:?}",
            report.max_rel_error,
            report.worst_coord
        );
    }
}

fn gradcheck_training_loss(mode: ConditioningMode) {
    let cfg = DenoiserConfig {
        data_dim: 4,
        hidden_dim: 16,
        depth: 1,
        time_embed_dim: 8,
        context_dim: 8,
        conditioning: mode,
        attention_heads: 2,
    };
    let denoiser = Denoiser::init(cfg.clone(), 77).unwrap();
    let schedule = linear_schedule(10, 1e-3, 0.2).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(5);

    let batch_size = 6;
    let x0 = rand_tensor(&mut rng, &[batch_size, 4], -1.0, 1.0);
    let eps = rand_tensor(&mut rng, &[batch_size, 4], -1.0, 1.0);
    let contexts = if mode.is_conditional() {
        let mut rows = Vec::new();
        for _ in 0..batch_size {
            let c = rand_tensor(&mut rng, &[8], -1.0, 1.0);
            let norm = c.l2_norm();
            rows.push(c.data().iter().map(|v| v / norm).collect::<Vec<_>>());
        }
        Some(Tensor::from_rows(&rows).unwrap())
    } else {
        None
    };
    let ts: Vec<usize> = (0..batch_size).map(|_| rng.random_range(1..=10)).collect();
    let batch = TrainBatch {
        x0,
        contexts,
        ts,
        eps,
    };
    // freeze the dropout masks so the checked function is deterministic
    let cpd = CpdSettings::new(0.25).unwrap();
    let prepared = prepare_batch(&batch, &schedule, &cpd, &mut rng).unwrap();

    let report = finite_difference_check::<idkit_core::diffusion::DiffusionError, _>(
        |tape, vars| {
            let dvars = DenoiserVars::from_map(&cfg, vars)?;
            batch_loss_on_tape(&denoiser, &dvars, tape, &prepared)
        },
        denoiser.params(),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(
        report.passed(),
        "{mode:?}: max rel err {} at {:?} over {} coords",
        report.max_rel_error,
        report.worst_coord,
        report.checked
    );
}

#[test]
fn training_loss_gradients_pass_fd_check_xattn() {
    gradcheck_training_loss(ConditioningMode::CrossAttention);
}

#[test]
fn training_loss_gradients_pass_fd_check_adagn() {
    gradcheck_training_loss(ConditioningMode::AdaGn);
}

#[test]
fn training_loss_gradients_pass_fd_check_unconditional() {
    gradcheck_training_loss(ConditioningMode::Unconditional);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn add_and_mul_commute_bitwise(
        (a, b) in (1usize..8).prop_flat_map(|n| (
            proptest::collection::vec(-1e6f64..1e6, n),
            proptest::collection::vec(-1e6f64..1e6, n),
        )),
    ) {
        let ta = Tensor::from_vec(a).unwrap();
        let tb = Tensor::from_vec(b).unwrap();
        prop_assert_eq!(
            idkit_core::numerics::add(&ta, &tb).unwrap(),
            idkit_core::numerics::add(&tb, &ta).unwrap()
        );
        prop_assert_eq!(
            idkit_core::numerics::mul(&ta, &tb).unwrap(),
            idkit_core::numerics::mul(&tb, &ta).unwrap()
        );
    }

    #[test]
    fn backward_is_linear_in_subgraph_count(x in -3.0f64..3.0, n in 2usize..6) {
        // sum of n identical subgraphs: gradient close to n times one copy
        let single = {
            let mut tape = Tape::new();
            let v = tape.param("x", Tensor::scalar(x).unwrap()).unwrap();
            let sq = tape.mul(v, v).unwrap();
            let sil = tape.silu(sq).unwrap();
            let loss = tape.sum(sil).unwrap();
            tape.backward(loss).unwrap().get("x").unwrap().data()[0]
        };
        let mut tape = Tape::new();
        let v = tape.param("x", Tensor::scalar(x).unwrap()).unwrap();
        let mut acc = None;
        for _ in 0..n {
            let sq = tape.mul(v, v).unwrap();
            let sil = tape.silu(sq).unwrap();
            acc = Some(match acc {
                None => sil,
                Some(prev) => tape.add(prev, sil).unwrap(),
            });
        }
        let loss = tape.sum(acc.unwrap()).unwrap();
        let grad = tape.backward(loss).unwrap().get("x").unwrap().data()[0];
        let expect = n as f64 * single;
        prop_assert!((grad - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }
}
