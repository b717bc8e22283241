use ndarray::{Array2, ArrayView2, Axis};

use crate::bank::{ClassId, EmbeddingBank};
use crate::error::{Error, Result};

use super::train::{cosine_ce_loss, run_sgd};
use super::{
    check_new_classes, require_text, training_pool, CosineClassifier, Learner, LearnerKind,
    StageBatchPlan,
};

/// Expandable projections on frozen features.
///
/// Each stage appends a visual projection `P_b` and a textual projection
/// `Q_b`, both starting at the identity. Images map to `f(x) = sum_i P_i x`,
/// class texts to `g(c) = sum_i Q_i t_c`, and logits are
/// `tau * cos(f(x), g(c))`. Only the newest pair is trained; earlier pairs
/// are frozen. There is no cross-modal fusion module.
#[derive(Debug, Clone)]
pub struct ProofLite {
    temperature: f64,
    seen: Vec<ClassId>,
    text: Vec<Vec<f64>>,
    projections: Vec<(Array2<f64>, Array2<f64>)>,
}

/// Loss and gradients for the trainable projection pair.
#[derive(Debug, Clone)]
pub struct ProjectionGrad {
    pub loss: f64,
    pub visual: Array2<f64>,
    pub textual: Array2<f64>,
}

/// Cross-entropy of `tau * cos((F + P) x, (G + Q) t_c)` with gradients for
/// `P` and `Q`, where `F` and `G` are the frozen projection sums.
#[allow(clippy::too_many_arguments)]
pub fn projection_ce_loss(
    frozen_visual: ArrayView2<'_, f64>,
    frozen_textual: ArrayView2<'_, f64>,
    visual: ArrayView2<'_, f64>,
    textual: ArrayView2<'_, f64>,
    images: ArrayView2<'_, f64>,
    texts: ArrayView2<'_, f64>,
    targets: &[usize],
    tau: f64,
) -> Result<ProjectionGrad> {
    let a = &frozen_visual + &visual;
    let b = &frozen_textual + &textual;
    let u = images.dot(&a.t());
    let v = texts.dot(&b.t());
    let g = cosine_ce_loss(u.view(), v.view(), targets, tau)?;
    Ok(ProjectionGrad {
        loss: g.loss,
        visual: g.queries.t().dot(&images),
        textual: g.classes.t().dot(&texts),
    })
}

impl ProofLite {
    pub fn new(temperature: f64) -> Self {
        Self {
            temperature,
            seen: Vec::new(),
            text: Vec::new(),
            projections: Vec::new(),
        }
    }

    pub fn projections(&self) -> &[(Array2<f64>, Array2<f64>)] {
        &self.projections
    }

    fn sums(&self, dim: usize) -> (Array2<f64>, Array2<f64>) {
        let mut visual = Array2::zeros((dim, dim));
        let mut textual = Array2::zeros((dim, dim));
        for (p, q) in &self.projections {
            visual += p;
            textual += q;
        }
        (visual, textual)
    }

    fn text_matrix(&self) -> Array2<f64> {
        let dim = self.text.first().map_or(0, Vec::len);
        Array2::from_shape_vec((self.text.len(), dim), self.text.concat())
            .expect("rows share a dimension")
    }
}

impl Learner for ProofLite {
    fn kind(&self) -> LearnerKind {
        LearnerKind::ProofLite
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
        let text = require_text(train_bank, self.kind())?;
        let dim = train_bank.dim();
        if let Some((p, _)) = self.projections.first() {
            if p.nrows() != dim {
                return Err(Error::Validation(format!(
                    "bank dim {dim} does not match projection dim {}",
                    p.nrows()
                )));
            }
        }

        let mut seen = self.seen.clone();
        seen.extend_from_slice(new_classes);
        let mut texts = self.text.clone();
        for &c in new_classes {
            texts.push(text.row(c as usize).iter().map(|&v| f64::from(v)).collect());
        }
        let text_matrix = Array2::from_shape_vec((texts.len(), dim), texts.concat())
            .expect("rows share a dimension");

        let pool = training_pool(train_bank, new_classes, replay_indices)?;
        let labels = pool
            .iter()
            .map(|&r| {
                let label = train_bank.labels()[r];
                seen.iter().position(|&c| c == label).ok_or_else(|| {
                    Error::Validation(format!("replay row {r} has unseen class {label}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let images = train_bank.images().select(Axis(0), &pool).mapv(f64::from);
        let (frozen_visual, frozen_textual) = self.sums(dim);

        // Trainable pair, flattened as [P_b, Q_b].
        let eye = Array2::<f64>::eye(dim);
        let mut params: Vec<f64> = eye.iter().chain(eye.iter()).copied().collect();
        let block = dim * dim;
        run_sgd(&mut params, pool.len(), plan, |flat, batch| {
            let p = ArrayView2::from_shape((dim, dim), &flat[..block]).expect("square");
            let q = ArrayView2::from_shape((dim, dim), &flat[block..]).expect("square");
            let x = images.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let g = projection_ce_loss(
                frozen_visual.view(),
                frozen_textual.view(),
                p,
                q,
                x.view(),
                text_matrix.view(),
                &y,
                self.temperature,
            )?;
            let mut grad = Vec::with_capacity(2 * block);
            grad.extend(g.visual.iter());
            grad.extend(g.textual.iter());
            Ok((g.loss, grad))
        })?;

        let q = Array2::from_shape_vec((dim, dim), params.split_off(block)).expect("square");
        let p = Array2::from_shape_vec((dim, dim), params).expect("square");
        self.projections.push((p, q));
        self.text = texts;
        self.seen = seen;
        Ok(())
    }

    fn classifier(&self) -> Result<CosineClassifier> {
        let text = self.text_matrix();
        let (visual, textual) = self.sums(text.ncols());
        let class_vectors = text.dot(&textual.t());
        CosineClassifier::new(self.seen.clone(), class_vectors, Some(visual))
    }

    fn parameters(&self) -> Vec<f64> {
        self.projections
            .iter()
            .flat_map(|(p, q)| p.iter().chain(q.iter()).copied())
            .collect()
    }
}
