//! Confusion matrices and micro / macro / per-class F1 over the fixed
//! 4-class label sets.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::labels::{ClassLabel, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
}

/// `counts[gold][pred]` in canonical class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs<L: ClassLabel>(pairs: impl IntoIterator<Item = (L, L)>) -> Self {
        let mut cm = Self::default();
        for (g, p) in pairs {
            cm.add(g, p);
        }
        cm
    }

    pub fn add<L: ClassLabel>(&mut self, gold: L, pred: L) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum()
    }

    fn gold_count(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    fn pred_count(&self, k: usize) -> u64 {
        (0..NUM_CLASSES).map(|g| self.counts[g][k]).sum()
    }

    /// `F1_k = 2tp / (2tp + fp + fn)`; `None` for classes absent from both
    /// gold and predictions.
    pub fn per_class_f1(&self) -> [Option<f64>; NUM_CLASSES] {
        core::array::from_fn(|k| {
            let tp = self.counts[k][k];
            let fp = self.pred_count(k) - tp;
            let fn_ = self.gold_count(k) - tp;
            let denom = 2 * tp + fp + fn_;
            (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
        })
    }

    /// Equals accuracy for single-label multiclass data.
    pub fn micro_f1(&self) -> Result<f64, MetricsError> {
        let total = self.total();
        if total == 0 {
            return Err(MetricsError::EmptyEvaluation);
        }
        Ok(self.correct() as f64 / total as f64)
    }

    /// Unweighted mean of per-class F1 over present classes.
    pub fn macro_f1(&self) -> Result<f64, MetricsError> {
        if self.total() == 0 {
            return Err(MetricsError::EmptyEvaluation);
        }
        let present: alloc::vec::Vec<f64> = self.per_class_f1().into_iter().flatten().collect();
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Serialized evaluation summary for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Keyed by label code; `null` for classes absent from gold and predictions.
    pub per_class: BTreeMap<String, Option<f64>>,
    pub n: u64,
    /// Instances whose annotation failed or could not be parsed (abstentions).
    pub errors: u64,
    pub macro_excludes_absent_classes: bool,
}

impl MetricsReport {
    pub fn from_confusion<L: ClassLabel>(task: &str, cm: &ConfusionMatrix, errors: u64) -> Result<Self, MetricsError> {
        let per = cm.per_class_f1();
        Ok(Self {
            task: task.into(),
            micro_f1: cm.micro_f1()?,
            macro_f1: cm.macro_f1()?,
            per_class: L::ALL.iter().map(|l| (String::from(l.code()), per[l.index()])).collect(),
            n: cm.total(),
            errors,
            macro_excludes_absent_classes: true,
        })
    }
}
