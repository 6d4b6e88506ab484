//! Segmentation evaluation: confusion matrix, per-class IoU, mIoU, and
//! class-subset mIoU.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Row = ground truth, column = prediction. Counts are exact pixel tallies;
/// per-thread matrices merge by summation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            k: num_classes,
            counts: vec![0; num_classes * num_classes],
            ignored: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn ignored_pixels(&self) -> u64 {
        self.ignored
    }

    pub fn total_pixels(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.ignored
    }

    /// Tallies one prediction/ground-truth mask pair. Pixels whose ground
    /// truth is `ignore_index` are skipped (and counted as ignored).
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8], ignore_index: u8) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(CoreError::ShapeMismatch {
                op: "accumulate",
                lhs: vec![pred.len()],
                rhs: vec![gt.len()],
            });
        }
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if g == ignore_index {
                self.ignored += 1;
                continue;
            }
            if g as usize >= self.k || p as usize >= self.k {
                return Err(CoreError::invalid(
                    "accumulate",
                    alloc::format!("invalid class id at pixel {i}: gt={g} pred={p}"),
                ));
            }
            self.counts[g as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.k != other.k {
            return Err(CoreError::invalid("merge", "class count mismatch"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }

    /// Per-class IoU = TP / (TP + FP + FN); classes with a zero denominator
    /// (absent from both prediction and ground truth) report `None`.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let tp = self.count(c, c);
                let fp: u64 = (0..self.k).filter(|&g| g != c).map(|g| self.count(g, c)).sum();
                let fnx: u64 = (0..self.k).filter(|&p| p != c).map(|p| self.count(c, p)).sum();
                let denom = tp + fp + fnx;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over classes with a defined IoU, optionally restricted to a
    /// subset of class ids.
    pub fn miou(&self, subset: Option<&[usize]>) -> Result<f64> {
        if self.counts.iter().all(|&c| c == 0) {
            return Err(CoreError::invalid("miou", "empty confusion matrix"));
        }
        let ious = self.iou();
        let included: Vec<f64> = match subset {
            None => ious.iter().flatten().copied().collect(),
            Some(classes) => classes
                .iter()
                .filter_map(|&c| ious.get(c).copied().flatten())
                .collect(),
        };
        if included.is_empty() {
            return Err(CoreError::invalid("miou", "no class has a defined IoU"));
        }
        Ok(included.iter().sum::<f64>() / included.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn perfect_prediction_is_diagonal_with_unit_iou() {
        let mut cm = ConfusionMatrix::new(3);
        let m = [0u8, 1, 2, 1, 0, 2];
        cm.accumulate(&m, &m, 255).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.count(g, p), if g == p { 2 } else { 0 });
            }
        }
        assert_eq!(cm.miou(None).unwrap(), 1.0);
    }

    #[test]
    fn fully_disjoint_prediction_has_zero_iou() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[1, 1], &[0, 0], 255).unwrap();
        let iou = cm.iou();
        assert_eq!(iou[0], Some(0.0));
        assert_eq!(iou[1], Some(0.0));
    }

    #[test]
    fn all_ignored_counts_nothing() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 1, 0], &[255, 255, 255], 255).unwrap();
        assert_eq!(cm.ignored_pixels(), 3);
        assert_eq!(cm.total_pixels(), 3);
        assert!(cm.miou(None).is_err());
    }

    #[test]
    fn invalid_id_errors_with_pixel_position() {
        let mut cm = ConfusionMatrix::new(2);
        let err = cm.accumulate(&[0, 5], &[0, 1], 255).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("pixel 1"), "{msg}");
    }

    #[test]
    fn hand_case_ious() {
        // TP = (3, 1), FP = (1, 1), FN = (1, 3). The extra target-1 misses go
        // to a third class so FN_1 != FP_0; IoU over {0, 1} is (0.6, 0.2) and
        // the subset mean is 0.4.
        let mut cm = ConfusionMatrix::new(3);
        let gt = [0, 0, 0, 1, 1, 1, 1, 0];
        let pr = [0, 0, 0, 1, 2, 2, 0, 1];
        cm.accumulate(&pr, &gt, 255).unwrap();
        let iou = cm.iou();
        assert_eq!(iou[0], Some(0.6));
        assert_eq!(iou[1], Some(0.2));
        let m = cm.miou(Some(&[0, 1])).unwrap();
        assert!((m - 0.4).abs() < 1e-12);
    }

    #[test]
    fn accumulate_is_order_independent_and_additive() {
        let mut r = rng::stream(9, &[1]);
        let n = 64;
        let pred: Vec<u8> = (0..n).map(|_| r.random_range(0..3u8)).collect();
        let gt: Vec<u8> = (0..n)
            .map(|_| if r.random::<f64>() < 0.1 { 255 } else { r.random_range(0..3u8) })
            .collect();

        let mut whole = ConfusionMatrix::new(3);
        whole.accumulate(&pred, &gt, 255).unwrap();

        let mut split = ConfusionMatrix::new(3);
        split.accumulate(&pred[..20], &gt[..20], 255).unwrap();
        let mut part = ConfusionMatrix::new(3);
        part.accumulate(&pred[20..], &gt[20..], 255).unwrap();
        split.merge(&part).unwrap();
        assert_eq!(whole, split);

        // permuted pixel order
        let mut perm = ConfusionMatrix::new(3);
        let order: Vec<usize> = (0..n).rev().collect();
        let p2: Vec<u8> = order.iter().map(|&i| pred[i]).collect();
        let g2: Vec<u8> = order.iter().map(|&i| gt[i]).collect();
        perm.accumulate(&p2, &g2, 255).unwrap();
        assert_eq!(whole, perm);
    }

    #[test]
    fn miou_equals_mean_of_included_ious() {
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&[0, 1, 1, 2], &[0, 1, 2, 2], 255).unwrap();
        let ious: Vec<f64> = cm.iou().into_iter().flatten().collect();
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        assert!((cm.miou(None).unwrap() - mean).abs() < 1e-12);
    }
}
