//! The three ROI regressors and the two-instance box predictor.

mod check;
mod config;
mod network;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use check::gradient_check;
pub use config::{ArchitectureConfig, ArchitectureKind, BoxAxis, HeadPool};
pub use network::{forward, init_params, Forward, Mode, StackInput};

use crate::error::{Error, Result};
use crate::geometry::{BBox, LocalizerStack};
use crate::nn::io::{self, WeightsFile};
use crate::nn::{Graph, Params, Tensor};

/// Architecture and target recorded in every weights file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub config: ArchitectureConfig,
    pub axis: BoxAxis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub header: ModelHeader,
    pub params: Params<f32>,
}

impl Model {
    pub fn new(config: ArchitectureConfig, axis: BoxAxis, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self {
            header: ModelHeader { config, axis },
            params,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.header.config
    }

    pub fn kind(&self) -> ArchitectureKind {
        self.header.config.kind
    }

    pub fn axis(&self) -> BoxAxis {
        self.header.axis
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Raw normalized output pairs, one per stack, using running statistics.
    pub fn predict_normalized(&self, stacks: &[&LocalizerStack]) -> Result<Vec<[f64; 2]>> {
        let inputs: Vec<StackInput<f32>> = stacks.iter().map(|s| StackInput::from_stack(s)).collect();
        self.predict_inputs(&inputs)
    }

    pub fn predict_inputs(&self, inputs: &[StackInput<f32>]) -> Result<Vec<[f64; 2]>> {
        let mut g = Graph::new();
        let f = forward(self.config(), &self.params, &mut g, inputs, Mode::Infer)?;
        let out = g.value(f.output);
        if !out.all_finite() {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(out
            .data()
            .chunks_exact(2)
            .map(|p| [p[0] as f64, p[1] as f64])
            .collect())
    }

    /// Slice weights of the attention model for one stack.
    pub fn attention_weights(&self, stack: &LocalizerStack) -> Result<Option<Vec<f64>>> {
        let mut g = Graph::new();
        let input = StackInput::<f32>::from_stack(stack);
        let f = forward(self.config(), &self.params, &mut g, std::slice::from_ref(&input), Mode::Infer)?;
        Ok(f.attention.map(|a| g.value(a).to_f64_vec()))
    }

    pub fn to_weights_file(&self) -> Result<WeightsFile> {
        Ok(WeightsFile {
            header: serde_json::to_vec(&self.header)?,
            tensors: self.params.all(),
        })
    }

    pub fn from_weights_file(file: &WeightsFile) -> Result<Self> {
        let header: ModelHeader = serde_json::from_slice(&file.header)
            .map_err(|e| Error::MalformedManifest(format!("weights header: {e}")))?;
        let template = init_params::<f32>(&header.config, 0)?;
        let mut params = Params::new();
        for (name, t) in &template.trainable {
            params.trainable.insert(name.clone(), take(file, name, t)?);
        }
        for (name, t) in &template.buffers {
            params.buffers.insert(name.clone(), take(file, name, t)?);
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        io::write(&mut w, &self.to_weights_file()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_weights_file(&io::read(&mut BufReader::new(File::open(path)?))?)
    }

    /// Loads and checks that the file holds the expected architecture.
    pub fn load_expecting(path: &Path, kind: ArchitectureKind, axis: BoxAxis) -> Result<Self> {
        let m = Self::load(path)?;
        if m.kind() != kind || m.axis() != axis {
            return Err(Error::ArchitectureMismatch {
                expected: format!("{kind}/{axis}"),
                found: format!("{}/{}", m.kind(), m.axis()),
            });
        }
        Ok(m)
    }
}

fn take(file: &WeightsFile, name: &str, like: &Tensor<f32>) -> Result<Tensor<f32>> {
    let t = file.tensor(name)?;
    if t.shape() != like.shape() {
        return Err(Error::ArchitectureMismatch {
            expected: format!("{name} {:?}", like.shape()),
            found: format!("{:?}", t.shape()),
        });
    }
    Ok(t.clone())
}

/// A predicted box along with which instances produced an inverted pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiPrediction {
    pub roi: BBox,
    pub swapped_lr: bool,
    pub swapped_tb: bool,
    pub raw_lr: [f64; 2],
    pub raw_tb: [f64; 2],
}

/// Scales a normalized pair to pixels, clamps it to `[0, size]`, and
/// reorders it if inverted.
pub fn denormalize_pair(raw: [f64; 2], size: usize) -> ([f64; 2], bool) {
    let s = size as f64;
    let a = (raw[0] * s).clamp(0.0, s);
    let b = (raw[1] * s).clamp(0.0, s);
    if a > b {
        ([b, a], true)
    } else {
        ([a, b], false)
    }
}

/// Combines the column and row instances into one box.
pub fn predict_roi(stack: &LocalizerStack, lr: &Model, tb: &Model) -> Result<RoiPrediction> {
    Ok(predict_rois(&[stack], lr, tb)?.remove(0))
}

pub fn predict_rois(stacks: &[&LocalizerStack], lr: &Model, tb: &Model) -> Result<Vec<RoiPrediction>> {
    check_pair(lr, tb)?;
    let cfg = tb.config();
    for s in stacks {
        if s.height() != cfg.height || s.width() != cfg.width {
            return Err(Error::ShapeMismatch {
                op: "predict_roi",
                expected: vec![cfg.height, cfg.width],
                got: vec![s.height(), s.width()],
            });
        }
    }
    let raw_lr = lr.predict_normalized(stacks)?;
    let raw_tb = tb.predict_normalized(stacks)?;
    raw_lr
        .into_iter()
        .zip(raw_tb)
        .map(|(rl, rt)| {
            let ([l, r], swapped_lr) = denormalize_pair(rl, cfg.width);
            let ([t, b], swapped_tb) = denormalize_pair(rt, cfg.height);
            Ok(RoiPrediction {
                roi: BBox::new(t, b, l, r)?,
                swapped_lr,
                swapped_tb,
                raw_lr: rl,
                raw_tb: rt,
            })
        })
        .collect()
}

fn check_pair(lr: &Model, tb: &Model) -> Result<()> {
    lr.config().ensure_matches(tb.config())?;
    for (m, want) in [(lr, BoxAxis::LeftRight), (tb, BoxAxis::TopBottom)] {
        if m.axis() != want {
            return Err(Error::ArchitectureMismatch {
                expected: want.to_string(),
                found: m.axis().to_string(),
            });
        }
    }
    Ok(())
}
