//! Dataset directories: `manifest.json` plus `slices/<id>_<k>.pgm`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::phantom::{generate_phantom, PhantomSpec};
use super::pnm::{quantize_exact, Image};
use crate::error::{Error, Result};
use crate::geometry::{BBox, LocalizerStack, PhaseAxis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::MalformedManifest(format!("unknown split {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub index: u64,
    #[serde(default)]
    pub augmentation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub stack: LocalizerStack,
    pub label: BBox,
    pub split: Split,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub generator: Option<PhantomSpec>,
    /// Free-form run configuration echoed into the manifest.
    pub run: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct LabelJson {
    top: f64,
    bottom: f64,
    left: f64,
    right: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordJson {
    id: String,
    slices: Vec<String>,
    height: usize,
    width: usize,
    phase_axis: PhaseAxis,
    label: LabelJson,
    split: Split,
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestJson {
    format: String,
    version: u32,
    tool_version: String,
    #[serde(default)]
    generator: Option<PhantomSpec>,
    #[serde(default)]
    run: Option<serde_json::Value>,
    records: Vec<RecordJson>,
}

const FORMAT: &str = "scanscribe-dataset";

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Orders ids by hash and cuts 70/10/20 (rounded counts).
pub fn assign_splits(ids: &[String]) -> Vec<Split> {
    let n = ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (fnv1a(ids[i].as_bytes()), ids[i].clone()));
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

pub fn stack_id(index: u64) -> String {
    format!("stack_{index:05}")
}

impl Dataset {
    /// `count` phantoms with indices `0..count`.
    pub fn generate(spec: &PhantomSpec, count: usize) -> Result<Self> {
        let ids: Vec<String> = (0..count as u64).map(stack_id).collect();
        let splits = assign_splits(&ids);
        let records = ids
            .into_iter()
            .zip(splits)
            .enumerate()
            .map(|(i, (id, split))| {
                let p = generate_phantom(spec, i as u64)?;
                Ok(DatasetRecord {
                    id,
                    stack: p.stack,
                    label: p.label,
                    split,
                    provenance: Provenance {
                        seed: spec.seed,
                        index: i as u64,
                        augmentation: Vec::new(),
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            records,
            generator: Some(spec.clone()),
            run: None,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&DatasetRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let slice_dir = dir.join("slices");
        std::fs::create_dir_all(&slice_dir)?;
        let mut records = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let (h, w) = (r.stack.height(), r.stack.width());
            let mut names = Vec::with_capacity(r.stack.len());
            for (k, s) in r.stack.slices().iter().enumerate() {
                let name = format!("slices/{}_{k}.pgm", r.id);
                Image::gray(w, h, quantize_exact(s)?)?.write(&dir.join(&name))?;
                names.push(name);
            }
            records.push(RecordJson {
                id: r.id.clone(),
                slices: names,
                height: h,
                width: w,
                phase_axis: r.stack.phase_axis(),
                label: LabelJson {
                    top: r.label.top,
                    bottom: r.label.bottom,
                    left: r.label.left,
                    right: r.label.right,
                },
                split: r.split,
                provenance: r.provenance.clone(),
            });
        }
        let manifest = ManifestJson {
            format: FORMAT.into(),
            version: 1,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            generator: self.generator.clone(),
            run: self.run.clone(),
            records,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MalformedManifest(format!("{} not found", path.display())),
            _ => Error::Io(e),
        })?;
        let manifest: ManifestJson =
            serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
        if manifest.format != FORMAT {
            return Err(Error::MalformedManifest(format!("format {:?}", manifest.format)));
        }
        let mut seen = BTreeSet::new();
        let mut records = Vec::with_capacity(manifest.records.len());
        for r in manifest.records {
            if !seen.insert(r.id.clone()) {
                return Err(Error::SplitOverlap(r.id));
            }
            if r.slices.is_empty() {
                return Err(Error::MalformedManifest(format!("stack {} lists no slices", r.id)));
            }
            let mut slices = Vec::with_capacity(r.slices.len());
            for name in &r.slices {
                let p: PathBuf = dir.join(name);
                if !p.is_file() {
                    return Err(Error::MissingSlice(p));
                }
                let img = Image::read(&p)?;
                if img.channels != 1 || img.width != r.width || img.height != r.height {
                    return Err(Error::MalformedManifest(format!(
                        "{name} is {}x{}x{}, manifest says {}x{}",
                        img.width, img.height, img.channels, r.width, r.height
                    )));
                }
                slices.push(img.data.iter().map(|&b| b as f32).collect());
            }
            let stack = LocalizerStack::new(r.height, r.width, r.phase_axis, slices)?;
            let l = r.label;
            let label = BBox::new(l.top, l.bottom, l.left, l.right)
                .ok()
                .filter(|b| b.within(r.height as f64, r.width as f64))
                .ok_or_else(|| Error::LabelOutOfBounds(r.id.clone()))?;
            records.push(DatasetRecord {
                id: r.id,
                stack,
                label,
                split: r.split,
                provenance: r.provenance,
            });
        }
        Ok(Self {
            records,
            generator: manifest.generator,
            run: manifest.run,
        })
    }
}
