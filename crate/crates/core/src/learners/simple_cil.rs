use ndarray::Array2;

use crate::bank::{ClassId, EmbeddingBank};
use crate::error::Result;

use super::{
    check_new_classes, class_prototype, CosineClassifier, Learner, LearnerKind, StageBatchPlan,
};

/// Prototype classifier: each new class is represented by the normalized
/// mean of its train embeddings. Old prototypes never change.
#[derive(Debug, Clone, Default)]
pub struct SimpleCil {
    seen: Vec<ClassId>,
    prototypes: Vec<Vec<f64>>,
}

impl SimpleCil {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn prototype(&self, class: ClassId) -> Option<&[f64]> {
        let i = self.seen.iter().position(|&c| c == class)?;
        Some(&self.prototypes[i])
    }
}

impl Learner for SimpleCil {
    fn kind(&self) -> LearnerKind {
        LearnerKind::SimpleCil
    }

    fn seen_classes(&self) -> &[ClassId] {
        &self.seen
    }

    fn observe_stage(
        &mut self,
        train_bank: &EmbeddingBank,
        new_classes: &[ClassId],
        _replay_indices: &[usize],
        _plan: &StageBatchPlan,
    ) -> Result<()> {
        check_new_classes(&self.seen, new_classes, train_bank)?;
        let fresh = new_classes
            .iter()
            .map(|&c| class_prototype(train_bank, c))
            .collect::<Result<Vec<_>>>()?;
        self.prototypes.extend(fresh);
        self.seen.extend_from_slice(new_classes);
        Ok(())
    }

    fn classifier(&self) -> Result<CosineClassifier> {
        let dim = self.prototypes.first().map_or(0, Vec::len);
        let weights =
            Array2::from_shape_vec((self.prototypes.len(), dim), self.prototypes.concat())
                .expect("rows share a dimension");
        CosineClassifier::new(self.seen.clone(), weights, None)
    }

    fn parameters(&self) -> Vec<f64> {
        self.prototypes.concat()
    }
}
