//! Finite-difference check of a whole network's parameter gradients.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward, init_params, ArchitectureConfig, ArchitectureKind, Mode, StackInput};
use crate::error::Result;
use crate::geometry::{LocalizerStack, PhaseAxis};
use crate::nn::gradcheck::{self, GradCheckReport};
use crate::nn::{Params, Tensor};

/// Checks a toy-width network of `kind` on random `size`-pixel stacks with
/// the given slice counts, in 64-bit. Running statistics and BN affine
/// parameters are randomized: inference mode then differs from a fresh
/// network, and a channel normalized over a single element does not sit on
/// the ReLU kink at exactly zero.
pub fn gradient_check(
    kind: ArchitectureKind,
    size: usize,
    slices: &[usize],
    mode: Mode,
    seed: u64,
) -> Result<GradCheckReport> {
    let smax = slices.iter().copied().max().unwrap_or(1);
    let cfg = ArchitectureConfig::toy(kind, size, smax);
    cfg.validate()?;
    let mut params = init_params::<f64>(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    for t in params.buffers.values_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(0.5..1.5);
        }
    }
    for (name, t) in params.trainable.iter_mut() {
        if name.ends_with(".bn.beta") {
            for v in t.data_mut() {
                *v = rng.gen_range(0.1..0.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            }
        } else if name.ends_with(".bn.gamma") {
            for v in t.data_mut() {
                *v = rng.gen_range(0.5..1.5);
            }
        }
    }
    let mut inputs = Vec::with_capacity(slices.len());
    for &k in slices {
        let data = (0..k)
            .map(|_| (0..size * size).map(|_| rng.gen_range(0.0f32..255.0)).collect())
            .collect();
        let stack = LocalizerStack::new(size, size, PhaseAxis::Rows, data)?;
        inputs.push(StackInput::<f64>::from_stack(&stack));
    }
    let target = Tensor::new(
        vec![slices.len(), 2],
        (0..slices.len() * 2).map(|i| 0.2 + 0.15 * i as f64).collect(),
    )?;
    let buffers = params.buffers.clone();
    let trainable = std::mem::take(&mut params.trainable);
    gradcheck::check(&trainable, 1e-5, 1e-6, 6, seed, |g, ts: &BTreeMap<String, Tensor<f64>>| {
        let p = Params {
            trainable: ts.clone(),
            buffers: buffers.clone(),
        };
        let f = forward(&cfg, &p, g, &inputs, mode)?;
        let loss = g.mse(f.output, target.clone())?;
        Ok((loss, f.params))
    })
}
