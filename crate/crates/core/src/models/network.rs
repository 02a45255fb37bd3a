//! Forward passes of the three architectures on a shared tape.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ArchitectureConfig, ArchitectureKind, HeadPool};
use crate::error::{Error, Result};
use crate::geometry::LocalizerStack;
use crate::nn::{BatchNormMode, BatchStats, Element, Graph, Padding, Params, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are reported back for updating.
    Train,
    /// Running statistics.
    Infer,
}

/// One stack, intensity-normalized and flattened slice after slice.
#[derive(Debug, Clone, PartialEq)]
pub struct StackInput<T> {
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Element> StackInput<T> {
    /// Divides every voxel by the stack maximum (left as is when that is 0).
    pub fn from_stack(stack: &LocalizerStack) -> Self {
        let max = stack.max_intensity() as f64;
        let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
        let data = stack
            .slices()
            .iter()
            .flatten()
            .map(|&v| T::from_f64_lossy(v as f64 * scale))
            .collect();
        Self {
            slices: stack.len(),
            height: stack.height(),
            width: stack.width(),
            data,
        }
    }
}

enum Source<'a, T> {
    Borrowed(&'a Params<T>),
    Init { params: Params<T>, rng: Box<ChaCha8Rng> },
}

/// Resolves parameter names to graph variables, creating them on first use
/// when initializing.
pub(crate) struct Binder<'a, T> {
    source: Source<'a, T>,
    vars: BTreeMap<String, Var>,
    mode: Mode,
    stats: Vec<(String, BatchStats<T>)>,
}

enum Init {
    Kernel,
    Zero,
    One,
}

impl<'a, T: Element> Binder<'a, T> {
    fn borrowed(params: &'a Params<T>, mode: Mode) -> Self {
        Self {
            source: Source::Borrowed(params),
            vars: BTreeMap::new(),
            mode,
            stats: Vec::new(),
        }
    }

    fn param(&mut self, g: &mut Graph<T>, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = match &mut self.source {
            Source::Borrowed(p) => p.get(name)?.clone(),
            Source::Init { params, rng } => {
                match init {
                    Init::Kernel => params.init_kernel(name, shape, rng),
                    Init::Zero => params.init_const(name, shape, 0.0),
                    Init::One => params.init_const(name, shape, 1.0),
                }
                params.get(name)?.clone()
            }
        };
        if t.shape() != shape {
            return Err(Error::ArchitectureMismatch {
                expected: format!("{name} {shape:?}"),
                found: format!("{:?}", t.shape()),
            });
        }
        let v = g.param(name, t);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn running(&mut self, name: &str, channels: usize) -> Result<Vec<T>> {
        let t = match &mut self.source {
            Source::Borrowed(p) => p.get(name)?,
            Source::Init { params, .. } => {
                if !params.buffers.contains_key(name) {
                    let v = if name.ends_with("running_var") { T::one() } else { T::zero() };
                    params.buffers.insert(name.to_string(), Tensor::full(&[channels], v));
                }
                params.get(name)?
            }
        };
        if t.shape() != [channels] {
            return Err(Error::ArchitectureMismatch {
                expected: format!("{name} [{channels}]"),
                found: format!("{:?}", t.shape()),
            });
        }
        Ok(t.data().to_vec())
    }

    /// Batch norm over every part jointly: in training, one set of batch
    /// statistics covers all parts.
    fn batch_norm(&mut self, g: &mut Graph<T>, xs: &[Var], prefix: &str) -> Result<Vec<Var>> {
        let c = g.value(xs[0]).shape()[1];
        let gamma = self.param(g, &format!("{prefix}.gamma"), &[c], Init::One)?;
        let beta = self.param(g, &format!("{prefix}.beta"), &[c], Init::Zero)?;
        let mean = self.running(&format!("{prefix}.running_mean"), c)?;
        let var = self.running(&format!("{prefix}.running_var"), c)?;
        match self.mode {
            Mode::Infer => xs
                .iter()
                .map(|&x| Ok(g.batch_norm(x, gamma, beta, BatchNormMode::Infer { mean: &mean, var: &var })?.0))
                .collect(),
            Mode::Train if xs.len() == 1 => {
                let (y, stats) = g.batch_norm(xs[0], gamma, beta, BatchNormMode::Train)?;
                self.stats.extend(stats.map(|s| (prefix.to_string(), s)));
                Ok(vec![y])
            }
            Mode::Train => {
                let packed = g.pack_channels(xs)?;
                let (y, stats) = g.batch_norm(packed, gamma, beta, BatchNormMode::Train)?;
                self.stats.extend(stats.map(|s| (prefix.to_string(), s)));
                let mut offset = 0;
                xs.iter()
                    .map(|&x| {
                        let shape = g.value(x).shape().to_vec();
                        let part = g.unpack_channels(y, offset, &shape)?;
                        offset += g.value(x).len() / c;
                        Ok(part)
                    })
                    .collect()
            }
        }
    }

    /// Convolution (no bias) of each part followed by batch norm and
    /// optionally ReLU.
    #[allow(clippy::too_many_arguments)]
    fn conv_bn(
        &mut self,
        g: &mut Graph<T>,
        xs: &[Var],
        prefix: &str,
        out: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        relu: bool,
    ) -> Result<Vec<Var>> {
        let cin = g.value(xs[0]).shape()[1];
        let w = self.param(
            g,
            &format!("{prefix}.kernel"),
            &[out, cin, kernel[0], kernel[1], kernel[2]],
            Init::Kernel,
        )?;
        let ys = xs
            .iter()
            .map(|&x| g.conv(x, w, None, stride, Padding::Same))
            .collect::<Result<Vec<_>>>()?;
        let ys = self.batch_norm(g, &ys, &format!("{prefix}.bn"))?;
        Ok(if relu { ys.into_iter().map(|y| g.relu(y)).collect() } else { ys })
    }

    fn linear(&mut self, g: &mut Graph<T>, x: Var, prefix: &str, out: usize) -> Result<Var> {
        let din = g.value(x).shape()[1];
        let w = self.param(g, &format!("{prefix}.weight"), &[out, din], Init::Kernel)?;
        let b = self.param(g, &format!("{prefix}.bias"), &[out], Init::Zero)?;
        g.linear(x, w, b)
    }
}

const K2: [usize; 3] = [1, 3, 3];
const K3: [usize; 3] = [3, 3, 3];
const S1: [usize; 3] = [1, 1, 1];
const S2: [usize; 3] = [1, 2, 2];

/// Stem, residual block and the junction convolution, applied to each part.
fn extractor<T: Element>(
    cfg: &ArchitectureConfig,
    b: &mut Binder<'_, T>,
    g: &mut Graph<T>,
    xs: &[Var],
    k: [usize; 3],
) -> Result<Vec<Var>> {
    let [w0, w1, w2, _] = cfg.widths;
    let x = b.conv_bn(g, xs, "ext.conv1", w0, k, S2, true)?;
    let x = b.conv_bn(g, &x, "ext.conv2", w1, k, S2, true)?;
    let r = b.conv_bn(g, &x, "ext.res.conv1", w1, k, S1, true)?;
    let r = b.conv_bn(g, &r, "ext.res.conv2", w1, k, S1, false)?;
    let x = x
        .iter()
        .zip(&r)
        .map(|(&x, &r)| g.add(x, r))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<Var> = x.into_iter().map(|v| g.relu(v)).collect();
    b.conv_bn(g, &x, "ext.conv3", w2, k, S2, true)
}

/// Two strided convolutions, pooling, and the two-output layer; the pooled
/// rows of all parts are stacked in order.
fn head<T: Element>(
    cfg: &ArchitectureConfig,
    b: &mut Binder<'_, T>,
    g: &mut Graph<T>,
    xs: &[Var],
    k: [usize; 3],
) -> Result<Var> {
    let w3 = cfg.widths[3];
    let x = b.conv_bn(g, xs, "head.conv1", w3, k, S2, true)?;
    let x = b.conv_bn(g, &x, "head.conv2", w3, k, S2, true)?;
    let pooled = x
        .into_iter()
        .map(|x| match cfg.head_pool {
            HeadPool::Average => g.global_avg_pool(x),
            HeadPool::Flatten => {
                let s = g.value(x).shape().to_vec();
                let rest: usize = s[1..].iter().product();
                g.reshape(x, &[s[0], rest])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = if pooled.len() == 1 { pooled[0] } else { g.concat_rows(&pooled)? };
    b.linear(g, pooled, "head.fc", 2)
}

/// Result of one forward pass over a batch of stacks.
#[derive(Debug)]
pub struct Forward<T> {
    /// `[stacks, 2]` normalized boundary pair per stack.
    pub output: Var,
    /// Slice weights `[total slices, 1]` (attention model only).
    pub attention: Option<Var>,
    pub segments: Vec<Range<usize>>,
    pub params: BTreeMap<String, Var>,
    pub batch_stats: Vec<(String, BatchStats<T>)>,
}

fn check_inputs<T>(cfg: &ArchitectureConfig, stacks: &[StackInput<T>]) -> Result<()> {
    if stacks.is_empty() {
        return Err(Error::EmptyInput("forward"));
    }
    for s in stacks {
        if s.slices == 0 {
            return Err(Error::EmptyStack);
        }
        if s.height != cfg.height || s.width != cfg.width {
            return Err(Error::ShapeMismatch {
                op: "forward",
                expected: vec![cfg.height, cfg.width],
                got: vec![s.height, s.width],
            });
        }
        if s.slices > cfg.max_slices {
            return Err(Error::StackTooLarge {
                slices: s.slices,
                max: cfg.max_slices,
            });
        }
    }
    Ok(())
}

pub(crate) fn segments_of<T>(stacks: &[StackInput<T>]) -> Vec<Range<usize>> {
    let mut start = 0;
    stacks
        .iter()
        .map(|s| {
            let r = start..start + s.slices;
            start = r.end;
            r
        })
        .collect()
}

fn run<T: Element>(
    cfg: &ArchitectureConfig,
    b: &mut Binder<'_, T>,
    g: &mut Graph<T>,
    stacks: &[StackInput<T>],
) -> Result<(Var, Option<Var>)> {
    check_inputs(cfg, stacks)?;
    let (h, w) = (cfg.height, cfg.width);
    match cfg.kind {
        ArchitectureKind::Attention => {
            let total: usize = stacks.iter().map(|s| s.slices).sum();
            let data: Vec<T> = stacks.iter().flat_map(|s| s.data.iter().copied()).collect();
            let x = g.input(Tensor::new(vec![total, 1, 1, h, w], data)?);
            let feats = extractor(cfg, b, g, &[x], K2)?[0];
            let segs = segments_of(stacks);
            let (alpha, pooled) = attention_pool(cfg, b, g, feats, &segs)?;
            Ok((head(cfg, b, g, &[pooled], K2)?, Some(alpha)))
        }
        ArchitectureKind::Stacked2d => {
            let smax = cfg.max_slices;
            let mut data = vec![T::zero(); stacks.len() * smax * h * w];
            for (i, s) in stacks.iter().enumerate() {
                let base = i * smax * h * w;
                data[base..base + s.data.len()].copy_from_slice(&s.data);
            }
            let x = g.input(Tensor::new(vec![stacks.len(), smax, 1, h, w], data)?);
            let feats = extractor(cfg, b, g, &[x], K2)?;
            Ok((head(cfg, b, g, &feats, K2)?, None))
        }
        ArchitectureKind::Conv3d => {
            // Stacks differ in depth, so each is its own tensor.
            let xs = stacks
                .iter()
                .map(|s| Ok(g.input(Tensor::new(vec![1, 1, s.slices, h, w], s.data.clone())?)))
                .collect::<Result<Vec<_>>>()?;
            let feats = extractor(cfg, b, g, &xs, K3)?;
            Ok((head(cfg, b, g, &feats, K3)?, None))
        }
    }
}

/// Scores each slice from its pooled feature vector, normalizes the scores
/// per stack with a softmax, and returns `(alpha, weighted feature maps)`.
pub(crate) fn attention_pool<T: Element>(
    cfg: &ArchitectureConfig,
    b: &mut Binder<'_, T>,
    g: &mut Graph<T>,
    feats: Var,
    segments: &[Range<usize>],
) -> Result<(Var, Var)> {
    let v = g.global_avg_pool(feats)?;
    let hdn = b.linear(g, v, "attn.fc1", cfg.attention_hidden)?;
    let hdn = g.relu(hdn);
    let logits = b.linear(g, hdn, "attn.fc2", 1)?;
    let alpha = g.segment_softmax(logits, segments)?;
    let pooled = g.segment_weighted_sum(feats, alpha, segments)?;
    Ok((alpha, pooled))
}

/// Records a forward pass of `cfg` over `stacks` on `g`.
pub fn forward<T: Element>(
    cfg: &ArchitectureConfig,
    params: &Params<T>,
    g: &mut Graph<T>,
    stacks: &[StackInput<T>],
    mode: Mode,
) -> Result<Forward<T>> {
    let mut b = Binder::borrowed(params, mode);
    let (output, attention) = run(cfg, &mut b, g, stacks)?;
    Ok(Forward {
        output,
        attention,
        segments: segments_of(stacks),
        params: b.vars,
        batch_stats: b.stats,
    })
}

/// Fresh parameters: fan-in scaled uniform kernels, zero biases, unit scales.
pub fn init_params<T: Element>(cfg: &ArchitectureConfig, seed: u64) -> Result<Params<T>> {
    cfg.validate()?;
    let mut b = Binder {
        source: Source::Init {
            params: Params::new(),
            rng: Box::new(ChaCha8Rng::seed_from_u64(seed)),
        },
        vars: BTreeMap::new(),
        mode: Mode::Train,
        stats: Vec::new(),
    };
    let probe = StackInput {
        slices: 1,
        height: cfg.height,
        width: cfg.width,
        data: vec![T::zero(); cfg.height * cfg.width],
    };
    let mut g = Graph::new();
    run(cfg, &mut b, &mut g, std::slice::from_ref(&probe))?;
    match b.source {
        Source::Init { params, .. } => Ok(params),
        Source::Borrowed(_) => unreachable!("initializing binder"),
    }
}
