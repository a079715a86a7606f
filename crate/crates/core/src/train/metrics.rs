use alloc::vec;
use alloc::vec::Vec;

use crate::partition::Superpoint;
use crate::propagate::SupervisionState;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{pred} predictions for {gt} ground-truth labels")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("class id {0} out of range")]
    ClassOutOfRange(usize),
}

/// Point-level segmentation scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub overall_accuracy: f64,
    pub mean_iou: f64,
    pub mean_accuracy: f64,
    /// `None` for classes absent from both prediction and ground truth.
    pub class_iou: Vec<Option<f64>>,
    /// `None` for classes without ground-truth points.
    pub class_recall: Vec<Option<f64>>,
    /// `confusion[gt][pred]`
    pub confusion: Vec<Vec<u64>>,
}

/// Confusion-matrix metrics; mIoU and mAcc average over classes present in `gt`.
pub fn evaluate(pred: &[usize], gt: &[usize], classes: usize) -> Result<Metrics, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &g) in pred.iter().zip(gt) {
        if p >= classes {
            return Err(MetricsError::ClassOutOfRange(p));
        }
        if g >= classes {
            return Err(MetricsError::ClassOutOfRange(g));
        }
        confusion[g][p] += 1;
    }
    Ok(metrics_from_confusion(confusion))
}

pub fn metrics_from_confusion(confusion: Vec<Vec<u64>>) -> Metrics {
    let classes = confusion.len();
    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let mut class_iou = Vec::with_capacity(classes);
    let mut class_recall = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = (0..classes).map(|g| confusion[g][c]).sum();
        let union = support + predicted - tp;
        class_iou.push((union > 0).then(|| tp as f64 / union as f64));
        class_recall.push((support > 0).then(|| tp as f64 / support as f64));
    }
    let supported: Vec<usize> = (0..classes).filter(|&c| class_recall[c].is_some()).collect();
    let mean = |vals: &[Option<f64>]| {
        if supported.is_empty() {
            0.0
        } else {
            supported.iter().map(|&c| vals[c].unwrap_or(0.0)).sum::<f64>() / supported.len() as f64
        }
    };
    Metrics {
        overall_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        mean_iou: mean(&class_iou),
        mean_accuracy: mean(&class_recall),
        class_iou,
        class_recall,
        confusion,
    }
}

/// Point-level accuracy of pseudo labels over points of extended superpoints;
/// `None` when nothing is extended.
pub fn oa_extended(state: &SupervisionState, superpoints: &[Superpoint], gt: &[usize]) -> Option<f64> {
    let (hits, total) = extended_hits(state, superpoints, gt);
    (total > 0).then(|| hits as f64 / total as f64)
}

/// `(matching points, points)` inside extended superpoints.
pub fn extended_hits(state: &SupervisionState, superpoints: &[Superpoint], gt: &[usize]) -> (usize, usize) {
    state.pseudo_labels().into_iter().fold((0, 0), |(hits, total), (j, z)| {
        let members = &superpoints[j].point_indices;
        let ok = members.iter().filter(|&&i| gt[i] == z).count();
        (hits + ok, total + members.len())
    })
}
