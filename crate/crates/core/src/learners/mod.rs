//! Learners over frozen embeddings.
//!
//! Every learner predicts with a cosine classifier restricted to the
//! classes it has seen. They differ in where the class vectors come from:
//!
//! | kind            | class vector                  | query map        |
//! |-----------------|-------------------------------|------------------|
//! | `zs_clip`       | text embedding                | none             |
//! | `simplecil`     | normalized class-mean image   | none             |
//! | `finetune`      | trained linear head row       | none             |
//! | `replay_linear` | trained linear head row       | none             |
//! | `proof_lite`    | `sum_i Q_i t_c`               | `sum_i P_i`      |

mod classifier;
mod linear;
mod proof_lite;
mod simple_cil;
pub mod train;
mod zero_shot;

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::bank::{ClassId, EmbeddingBank};
use crate::error::{Error, Result};

pub use classifier::{argmax_within, CosineClassifier};
pub use linear::LinearProbe;
pub use proof_lite::{projection_ce_loss, ProjectionGrad, ProofLite};
pub use simple_cil::SimpleCil;
pub use train::{cosine_ce_loss, cosine_lr, train_linear_epochs, CosineCeGrad, SgdMomentum};
pub use zero_shot::ZeroShotClip;

/// CLIP-style logit scale.
pub const DEFAULT_TEMPERATURE: f64 = 100.0;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LearnerKind {
    #[serde(rename = "finetune")]
    FinetuneLinear,
    #[serde(rename = "zs_clip")]
    ZsClip,
    #[serde(rename = "simplecil")]
    SimpleCil,
    #[serde(rename = "replay_linear")]
    ReplayLinear,
    #[serde(rename = "proof_lite")]
    ProofLite,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 5] = [
        LearnerKind::FinetuneLinear,
        LearnerKind::ZsClip,
        LearnerKind::SimpleCil,
        LearnerKind::ReplayLinear,
        LearnerKind::ProofLite,
    ];

    /// The name accepted in run configs.
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::FinetuneLinear => "finetune",
            LearnerKind::ZsClip => "zs_clip",
            LearnerKind::SimpleCil => "simplecil",
            LearnerKind::ReplayLinear => "replay_linear",
            LearnerKind::ProofLite => "proof_lite",
        }
    }

    pub fn uses_text(self) -> bool {
        matches!(self, LearnerKind::ZsClip | LearnerKind::ProofLite)
    }

    /// Kinds that rehearse herded exemplars of earlier classes.
    pub fn uses_replay(self) -> bool {
        matches!(self, LearnerKind::ReplayLinear | LearnerKind::ProofLite)
    }

    pub fn is_trainable(self) -> bool {
        matches!(
            self,
            LearnerKind::FinetuneLinear | LearnerKind::ReplayLinear | LearnerKind::ProofLite
        )
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LearnerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = LearnerKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!(
                    "unsupported model_name {s:?}; supported kinds are {}",
                    names.join(", ")
                ))
            })
    }
}

/// Optimization settings for one stage of training.
#[derive(Debug, Clone, PartialEq)]
pub struct StageBatchPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub init_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Seed for this stage; epoch shuffles are keyed by `(seed, epoch)`.
    pub seed: u64,
}

impl Default for StageBatchPlan {
    fn default() -> Self {
        Self {
            epochs: 0,
            batch_size: 32,
            init_lr: 0.05,
            weight_decay: 0.0,
            momentum: DEFAULT_MOMENTUM,
            seed: 0,
        }
    }
}

impl StageBatchPlan {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if !(self.init_lr.is_finite() && self.init_lr >= 0.0) {
            return Err(Error::Validation(format!(
                "init_lr {} is invalid",
                self.init_lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Validation(format!(
                "weight_decay {} is invalid",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation(format!(
                "momentum {} is invalid",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Training rows for a stage: the new classes' rows in bank order, followed
/// by the replayed exemplar rows.
pub fn training_pool(
    bank: &EmbeddingBank,
    new_classes: &[ClassId],
    replay_indices: &[usize],
) -> Result<Vec<usize>> {
    let mut pool = bank
        .subset_by_classes(new_classes.iter().copied())?
        .into_indices();
    if let Some(&bad) = replay_indices.iter().find(|&&i| i >= bank.len()) {
        return Err(Error::Validation(format!(
            "replay row {bad} is outside the bank"
        )));
    }
    pool.extend_from_slice(replay_indices);
    Ok(pool)
}

/// The shared learner interface.
pub trait Learner: Send + Sync {
    fn kind(&self) -> LearnerKind;

    /// Seen classes in the order they arrived.
    fn seen_classes(&self) -> &[ClassId];

    /// Absorb one stage of new classes.
    fn observe_stage(
        &mut self,
        train_bank: &EmbeddingBank,
        new_classes: &[ClassId],
        replay_indices: &[usize],
        plan: &StageBatchPlan,
    ) -> Result<()>;

    /// Snapshot of the current decision rule.
    fn classifier(&self) -> Result<CosineClassifier>;

    /// Every learned parameter, flattened in a fixed order.
    fn parameters(&self) -> Vec<f64>;

    fn predict(&self, queries: ArrayView2<'_, f32>) -> Result<Vec<ClassId>> {
        self.classifier()?.predict(queries)
    }
}

pub fn build_learner(kind: LearnerKind, temperature: f64) -> Result<Box<dyn Learner>> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Validation(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(match kind {
        LearnerKind::ZsClip => Box::new(ZeroShotClip::new()),
        LearnerKind::SimpleCil => Box::new(SimpleCil::new()),
        LearnerKind::FinetuneLinear => Box::new(LinearProbe::finetune(temperature)),
        LearnerKind::ReplayLinear => Box::new(LinearProbe::replay(temperature)),
        LearnerKind::ProofLite => Box::new(ProofLite::new(temperature)),
    })
}

/// Reject class ids outside the bank or already seen.
pub(crate) fn check_new_classes(
    seen: &[ClassId],
    new_classes: &[ClassId],
    bank: &EmbeddingBank,
) -> Result<()> {
    for (i, &c) in new_classes.iter().enumerate() {
        if c as usize >= bank.num_classes() {
            return Err(Error::Validation(format!(
                "class {c} out of range [0, {})",
                bank.num_classes()
            )));
        }
        if seen.contains(&c) || new_classes[..i].contains(&c) {
            return Err(Error::Validation(format!("class {c} was already observed")));
        }
    }
    Ok(())
}

pub(crate) fn require_text(
    bank: &EmbeddingBank,
    kind: LearnerKind,
) -> Result<&ndarray::Array2<f32>> {
    bank.text_embeddings()
        .ok_or_else(|| Error::Validation(format!("{kind} needs text embeddings in the train bank")))
}

/// L2-normalized mean of a class's raw train rows, accumulated in f64.
pub(crate) fn class_prototype(bank: &EmbeddingBank, class: ClassId) -> Result<Vec<f64>> {
    let rows = bank.rows_of_class(class);
    if rows.is_empty() {
        return Err(Error::Validation(format!(
            "class {class} has no train samples"
        )));
    }
    let mut mean = vec![0.0f64; bank.dim()];
    for &r in &rows {
        for (acc, &v) in mean.iter_mut().zip(bank.image(r)) {
            *acc += f64::from(v);
        }
    }
    for v in &mut mean {
        *v /= rows.len() as f64;
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Numeric(format!(
            "class {class} has a zero mean embedding"
        )));
    }
    Ok(mean.into_iter().map(|v| v / norm).collect())
}
