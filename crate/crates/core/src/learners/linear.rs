use ndarray::{concatenate, Array2, Axis};

use crate::bank::{ClassId, EmbeddingBank};
use crate::error::{Error, Result};

use super::train::train_linear_epochs;
use super::{
    check_new_classes, class_prototype, training_pool, CosineClassifier, Learner, LearnerKind,
    StageBatchPlan,
};

/// Cosine linear head over frozen features, trained with cross-entropy.
///
/// New rows start at the class prototype. In finetune mode only the new
/// classes' rows are in the training pool; in replay mode the exemplar
/// rows are appended.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    replay: bool,
    temperature: f64,
    seen: Vec<ClassId>,
    head: Array2<f64>,
}

impl LinearProbe {
    pub fn finetune(temperature: f64) -> Self {
        Self::with_mode(false, temperature)
    }

    pub fn replay(temperature: f64) -> Self {
        Self::with_mode(true, temperature)
    }

    fn with_mode(replay: bool, temperature: f64) -> Self {
        Self {
            replay,
            temperature,
            seen: Vec::new(),
            head: Array2::zeros((0, 0)),
        }
    }

    pub fn head(&self) -> &Array2<f64> {
        &self.head
    }
}

impl Learner for LinearProbe {
    fn kind(&self) -> LearnerKind {
        if self.replay {
            LearnerKind::ReplayLinear
        } else {
            LearnerKind::FinetuneLinear
        }
    }

    fn seen_classes(&self) -> &[ClassId] {
        &self.seen
    }

    fn observe_stage(
        &mut self,
        train_bank: &EmbeddingBank,
        new_classes: &[ClassId],
        replay_indices: &[usize],
        plan: &StageBatchPlan,
    ) -> Result<()> {
        check_new_classes(&self.seen, new_classes, train_bank)?;
        let dim = train_bank.dim();
        if !self.seen.is_empty() && self.head.ncols() != dim {
            return Err(Error::Validation(format!(
                "bank dim {dim} does not match head dim {}",
                self.head.ncols()
            )));
        }
        let mut init = Array2::zeros((new_classes.len(), dim));
        for (mut row, &c) in init.axis_iter_mut(Axis(0)).zip(new_classes) {
            row.assign(&ndarray::Array1::from(class_prototype(train_bank, c)?));
        }
        let head = if self.seen.is_empty() {
            init
        } else {
            concatenate(Axis(0), &[self.head.view(), init.view()]).expect("same width")
        };
        let mut seen = self.seen.clone();
        seen.extend_from_slice(new_classes);

        let replay: &[usize] = if self.replay { replay_indices } else { &[] };
        let pool = training_pool(train_bank, new_classes, replay)?;
        let labels = pool
            .iter()
            .map(|&r| {
                let label = train_bank.labels()[r];
                seen.iter().position(|&c| c == label).ok_or_else(|| {
                    Error::Validation(format!("replay row {r} has unseen class {label}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let features = train_bank.images().select(Axis(0), &pool).mapv(f64::from);

        self.head = train_linear_epochs(head, features.view(), &labels, plan, self.temperature)?;
        self.seen = seen;
        Ok(())
    }

    fn classifier(&self) -> Result<CosineClassifier> {
        CosineClassifier::new(self.seen.clone(), self.head.clone(), None)
    }

    fn parameters(&self) -> Vec<f64> {
        self.head.iter().copied().collect()
    }
}
