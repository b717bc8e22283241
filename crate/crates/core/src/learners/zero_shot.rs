use ndarray::Array2;

use crate::bank::{ClassId, EmbeddingBank};
use crate::error::Result;

use super::{
    check_new_classes, require_text, CosineClassifier, Learner, LearnerKind, StageBatchPlan,
};

/// Frozen zero-shot classifier: cosine between image and class text
/// embeddings. Observing a stage only widens the label space.
#[derive(Debug, Clone, Default)]
pub struct ZeroShotClip {
    seen: Vec<ClassId>,
    text: Vec<Vec<f64>>,
}

impl ZeroShotClip {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Learner for ZeroShotClip {
    fn kind(&self) -> LearnerKind {
        LearnerKind::ZsClip
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
        let text = require_text(train_bank, self.kind())?;
        for &c in new_classes {
            self.text
                .push(text.row(c as usize).iter().map(|&v| f64::from(v)).collect());
            self.seen.push(c);
        }
        Ok(())
    }

    fn classifier(&self) -> Result<CosineClassifier> {
        let dim = self.text.first().map_or(0, Vec::len);
        let weights = Array2::from_shape_vec((self.text.len(), dim), self.text.concat())
            .expect("rows share a dimension");
        CosineClassifier::new(self.seen.clone(), weights, None)
    }

    // Frozen: nothing is learned.
    fn parameters(&self) -> Vec<f64> {
        Vec::new()
    }
}
