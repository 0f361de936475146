//! Confusion matrices, per-class IoU and mIoU.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::imageio::{self, ImageError};
use crate::labels::{LabelMap, VOID};
use crate::losses::{pseudo_labels, LossError};
use crate::segnet::{segment, ModelParams, SegNetError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction {pred_width}x{pred_height} and ground truth {gt_width}x{gt_height} differ")]
    Size {
        pred_width: usize,
        pred_height: usize,
        gt_width: usize,
        gt_height: usize,
    },
    #[error("label {0} outside the confusion matrix")]
    Label(u8),
    #[error("mIoU undefined: no scored ground-truth pixels")]
    Empty,
    #[error("classes differ: {0} vs {1}")]
    Classes(usize, usize),
    #[error(transparent)]
    Model(#[from] SegNetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// `N_c × N_c` counts, rows ground truth and columns prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count every pixel whose ground truth is not VOID.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<(), EvalError> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(EvalError::Size {
                pred_width: pred.width(),
                pred_height: pred.height(),
                gt_width: gt.width(),
                gt_height: gt.height(),
            });
        }
        let n = self.num_classes;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == VOID {
                continue;
            }
            if g as usize >= n {
                return Err(EvalError::Label(g));
            }
            if p as usize >= n {
                return Err(EvalError::Label(p));
            }
            self.counts[g as usize * n + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if other.num_classes != self.num_classes {
            return Err(EvalError::Classes(self.num_classes, other.num_classes));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    /// `None` for classes absent from the ground truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Per-class IoU and their mean over classes present in the ground truth.
pub fn miou(cm: &ConfusionMatrix) -> Result<IouReport, EvalError> {
    let n = cm.num_classes;
    let per_class: Vec<Option<f64>> = (0..n)
        .map(|c| {
            let row: u64 = (0..n).map(|p| cm.get(c, p)).sum();
            let col: u64 = (0..n).map(|g| cm.get(g, c)).sum();
            let tp = cm.get(c, c);
            (row > 0).then(|| tp as f64 / (row + col - tp) as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(IouReport {
        miou: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

pub fn predict(params: &ModelParams, image: &Tensor) -> Result<LabelMap, EvalError> {
    Ok(pseudo_labels(&segment(params, image)?)?)
}

/// Score `params` on `(image, ground truth)` pairs.
pub fn evaluate<'a>(
    params: &ModelParams,
    scenes: impl IntoIterator<Item = (&'a Tensor, &'a LabelMap)>,
) -> Result<(ConfusionMatrix, IouReport), EvalError> {
    let mut cm = ConfusionMatrix::new(params.config().num_classes);
    for (image, gt) in scenes {
        cm.accumulate(&predict(params, image)?, gt)?;
    }
    let report = miou(&cm)?;
    Ok((cm, report))
}

/// `class,iou` rows then a final `mIoU` row; absent classes are left blank
/// and unnamed classes go by index.
pub fn write_report_csv<W: Write>(w: &mut W, report: &IouReport, class_names: &[&str]) -> Result<(), EvalError> {
    writeln!(w, "class,iou")?;
    for (c, iou) in report.per_class.iter().enumerate() {
        let name = class_names.get(c).map_or_else(|| c.to_string(), |s| s.to_string());
        match iou {
            Some(v) => writeln!(w, "{name},{v:.6}")?,
            None => writeln!(w, "{name},")?,
        }
    }
    writeln!(w, "mIoU,{:.6}", report.miou)?;
    Ok(())
}

/// Write each prediction as a palette PNG named `<id>.png` under `dir`.
pub fn dump_predictions<'a>(
    dir: &Path,
    params: &ModelParams,
    images: impl IntoIterator<Item = (usize, &'a Tensor)>,
) -> Result<usize, EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut n = 0;
    for (id, image) in images {
        imageio::write_palette_labels(&dir.join(format!("{id:05}.png")), &predict(params, image)?)?;
        n += 1;
    }
    Ok(n)
}
