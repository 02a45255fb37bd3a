use serde::{Deserialize, Serialize};

use crate::data::DatasetRecord;
use crate::error::{Error, Result};
use crate::geometry::{boundary_error, iou, BBox};
use crate::models::{predict_rois, Model};

/// Mean and `n - 1` standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptySplit("summary of no values".into()));
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, std, n })
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub id: String,
    pub predicted: BBox,
    pub label: BBox,
    pub iou: f64,
    pub boundary_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub cases: Vec<CaseMetrics>,
    pub iou: Summary,
    pub boundary_error: Summary,
}

impl MetricsTable {
    pub fn from_cases(cases: Vec<CaseMetrics>) -> Result<Self> {
        let ious: Vec<f64> = cases.iter().map(|c| c.iou).collect();
        let errs: Vec<f64> = cases.iter().map(|c| c.boundary_error).collect();
        Ok(Self {
            iou: Summary::of(&ious)?,
            boundary_error: Summary::of(&errs)?,
            cases,
        })
    }

    /// Scores predicted boxes against labels, pairwise.
    pub fn score(ids: &[String], predicted: &[BBox], labels: &[BBox]) -> Result<Self> {
        let cases = ids
            .iter()
            .zip(predicted)
            .zip(labels)
            .map(|((id, p), l)| CaseMetrics {
                id: id.clone(),
                predicted: *p,
                label: *l,
                iou: iou(p, l),
                boundary_error: boundary_error(p, l),
            })
            .collect();
        Self::from_cases(cases)
    }

    pub fn ious(&self) -> Vec<f64> {
        self.cases.iter().map(|c| c.iou).collect()
    }

    pub fn boundary_errors(&self) -> Vec<f64> {
        self.cases.iter().map(|c| c.boundary_error).collect()
    }

    /// One row per case.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,pred_top,pred_bottom,pred_left,pred_right,label_top,label_bottom,label_left,label_right,iou,boundary_error\n");
        for c in &self.cases {
            let (p, l) = (c.predicted, c.label);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                c.id, p.top, p.bottom, p.left, p.right, l.top, l.bottom, l.left, l.right, c.iou, c.boundary_error
            ));
        }
        out
    }
}

/// Predicts every record with the paired instances and scores it.
pub fn evaluate(lr: &Model, tb: &Model, records: &[&DatasetRecord]) -> Result<MetricsTable> {
    if records.is_empty() {
        return Err(Error::EmptySplit("evaluation split".into()));
    }
    let mut predicted = Vec::with_capacity(records.len());
    for chunk in records.chunks(16) {
        let stacks: Vec<_> = chunk.iter().map(|r| &r.stack).collect();
        predicted.extend(predict_rois(&stacks, lr, tb)?.into_iter().map(|p| p.roi));
    }
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let labels: Vec<BBox> = records.iter().map(|r| r.label).collect();
    MetricsTable::score(&ids, &predicted, &labels)
}
