use crate::error::{shape_err, Result};
use crate::label::LabelMap;

/// Integer intersection/union counts per class, accumulated over any number
/// of images before dividing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IouCounts {
    pub intersection: Vec<u64>,
    pub pixels_gt: Vec<u64>,
    pub pixels_pred: Vec<u64>,
}

impl IouCounts {
    pub fn new(num_classes: usize) -> Self {
        IouCounts {
            intersection: vec![0; num_classes],
            pixels_gt: vec![0; num_classes],
            pixels_pred: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.intersection.len()
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(shape_err!(
                "prediction {:?} and ground truth {:?} differ in extent",
                pred.dims(),
                gt.dims()
            ));
        }
        let c = self.num_classes();
        pred.check_range(c)?;
        gt.check_range(c)?;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            self.pixels_pred[p as usize] += 1;
            self.pixels_gt[g as usize] += 1;
            if p == g {
                self.intersection[p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &IouCounts) {
        for (a, b) in [
            (&mut self.intersection, &other.intersection),
            (&mut self.pixels_gt, &other.pixels_gt),
            (&mut self.pixels_pred, &other.pixels_pred),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn union(&self, class: usize) -> u64 {
        self.pixels_gt[class] + self.pixels_pred[class] - self.intersection[class]
    }

    /// `None` when the class appears in neither prediction nor ground truth.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let u = self.union(class);
        (u > 0).then(|| self.intersection[class] as f64 / u as f64)
    }

    pub fn ious(&self) -> Vec<Option<f64>> {
        (0..self.num_classes()).map(|c| self.iou(c)).collect()
    }

    /// Mean over classes with a defined IoU; undefined classes are skipped.
    pub fn mean_iou(&self) -> Option<f64> {
        mean_defined(self.ious().into_iter())
    }

    /// Mean over defined classes excluding class 0 (background).
    pub fn content_mean_iou(&self) -> Option<f64> {
        mean_defined(self.ious().into_iter().skip(1))
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total: u64 = self.pixels_gt.iter().sum();
        if total == 0 {
            return 0.0;
        }
        self.intersection.iter().sum::<u64>() as f64 / total as f64
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Per-class IoU of one prediction against its ground truth.
pub fn iou_per_class(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<Vec<Option<f64>>> {
    let mut counts = IouCounts::new(num_classes);
    counts.accumulate(pred, gt)?;
    Ok(counts.ious())
}
