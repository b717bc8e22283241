use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::bank::ClassId;
use crate::error::{Error, Result};

/// Cosine classifier over a fixed, ordered class list.
///
/// Scores are `cos(M x, w_c)` where `M` is an optional square query map.
/// Class vectors are normalized once at construction.
#[derive(Debug, Clone)]
pub struct CosineClassifier {
    classes: Vec<ClassId>,
    unit_weights: Array2<f64>,
    query_map: Option<Array2<f64>>,
}

impl CosineClassifier {
    pub fn new(
        classes: Vec<ClassId>,
        weights: Array2<f64>,
        query_map: Option<Array2<f64>>,
    ) -> Result<Self> {
        if classes.len() != weights.nrows() {
            return Err(Error::Validation(format!(
                "{} classes for {} weight rows",
                classes.len(),
                weights.nrows()
            )));
        }
        if let Some(map) = &query_map {
            if map.dim() != (weights.ncols(), weights.ncols()) {
                return Err(Error::Validation(format!(
                    "query map is {:?}, expected square of side {}",
                    map.dim(),
                    weights.ncols()
                )));
            }
        }
        let mut unit_weights = weights;
        for (i, mut row) in unit_weights.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::Numeric(format!(
                    "class vector for class {} has norm {norm}",
                    classes[i]
                )));
            }
            row /= norm;
        }
        Ok(Self {
            classes,
            unit_weights,
            query_map,
        })
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.unit_weights.ncols()
    }

    /// Cosine scores of one query against every class, in class-list order.
    pub fn scores(&self, query: ArrayView1<'_, f32>) -> Result<Array1<f64>> {
        if query.len() != self.dim() {
            return Err(Error::Validation(format!(
                "query has dim {}, classifier expects {}",
                query.len(),
                self.dim()
            )));
        }
        let x = query.mapv(f64::from);
        let mapped = match &self.query_map {
            Some(map) => map.dot(&x),
            None => x,
        };
        let norm = mapped.dot(&mapped).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Validation(
                "query has zero or non-finite norm".into(),
            ));
        }
        Ok(self.unit_weights.dot(&mapped) / norm)
    }

    /// Scores for every query row, computed in parallel. Row `i` of the
    /// result does not depend on the thread count.
    pub fn score_matrix(&self, queries: ArrayView2<'_, f32>) -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = (0..queries.nrows())
            .into_par_iter()
            .map(|i| {
                self.scores(queries.row(i))
                    .map_err(|e| Error::Validation(format!("query row {i}: {e}")))
            })
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), self.classes.len()));
        for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
            dst.assign(&src);
        }
        Ok(out)
    }

    /// Arg-max class for every query over all classes.
    pub fn predict(&self, queries: ArrayView2<'_, f32>) -> Result<Vec<ClassId>> {
        if self.classes.is_empty() {
            return Err(Error::State("no classes seen yet".into()));
        }
        let scores = self.score_matrix(queries)?;
        Ok(scores
            .axis_iter(Axis(0))
            .map(|row| argmax_within(row, &self.classes, self.classes.len()))
            .collect())
    }
}

/// Arg-max over the first `limit` classes; equal scores go to the lowest
/// class id.
pub fn argmax_within(scores: ArrayView1<'_, f64>, classes: &[ClassId], limit: usize) -> ClassId {
    let mut best = (f64::NEG_INFINITY, ClassId::MAX);
    for (&s, &c) in scores.iter().zip(classes).take(limit) {
        if s > best.0 || (s == best.0 && c < best.1) {
            best = (s, c);
        }
    }
    best.1
}
