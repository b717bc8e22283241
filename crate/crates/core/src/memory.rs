//! Exemplar memory: herding selection and the per-class exemplar store.

use std::collections::BTreeMap;

use ndarray::ArrayView2;

use crate::bank::{ClassId, EmbeddingBank};
use crate::error::{Error, Result};

/// Default number of exemplars kept per class.
pub const DEFAULT_MEMORY_PER_CLASS: usize = 20;

/// Greedy herding over the L2-normalized rows of `features`.
///
/// At step `t` the row minimizing `|mu - (x_i + S) / t|` is picked, where
/// `mu` is the mean of the normalized rows and `S` the sum of rows picked so
/// far. Ties go to the lowest row index. Returns the picked rows in order.
pub fn herding_select(features: ArrayView2<'_, f32>, k: usize) -> Result<Vec<usize>> {
    let (m, dim) = features.dim();
    if m == 0 {
        return Err(Error::Validation("herding needs at least one row".into()));
    }
    if k > m {
        return Err(Error::Validation(format!(
            "cannot select {k} exemplars from {m} rows"
        )));
    }

    let mut normalized = Vec::with_capacity(m * dim);
    for (i, row) in features.rows().into_iter().enumerate() {
        let norm = row
            .iter()
            .map(|&v| f64::from(v).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Validation(format!(
                "feature row {i} has zero or non-finite norm"
            )));
        }
        normalized.extend(row.iter().map(|&v| f64::from(v) / norm));
    }
    let row = |i: usize| &normalized[i * dim..(i + 1) * dim];

    let mut mean = vec![0.0f64; dim];
    for i in 0..m {
        for (acc, v) in mean.iter_mut().zip(row(i)) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }

    let mut running = vec![0.0f64; dim];
    let mut taken = vec![false; m];
    let mut picked = Vec::with_capacity(k);
    for t in 1..=k {
        let inv_t = t as f64;
        let mut best: Option<(usize, f64)> = None;
        for i in (0..m).filter(|&i| !taken[i]) {
            let dist: f64 = mean
                .iter()
                .zip(&running)
                .zip(row(i))
                .map(|((mu, s), x)| {
                    let d = mu - (x + s) / inv_t;
                    d * d
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (choice, _) = best.expect("k <= m leaves a candidate");
        taken[choice] = true;
        for (acc, v) in running.iter_mut().zip(row(choice)) {
            *acc += v;
        }
        picked.push(choice);
    }
    Ok(picked)
}

/// Per-class exemplar rows, each list in herding priority order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarStore {
    per_class: BTreeMap<ClassId, Vec<usize>>,
    capacity_per_class: usize,
}

impl ExemplarStore {
    pub fn new(capacity_per_class: usize) -> Result<Self> {
        if capacity_per_class == 0 {
            return Err(Error::Validation(
                "memory_per_class must be positive".into(),
            ));
        }
        Ok(Self {
            per_class: BTreeMap::new(),
            capacity_per_class,
        })
    }

    pub fn capacity_per_class(&self) -> usize {
        self.capacity_per_class
    }

    pub fn per_class(&self) -> &BTreeMap<ClassId, Vec<usize>> {
        &self.per_class
    }

    pub fn exemplars(&self, class: ClassId) -> Option<&[usize]> {
        self.per_class.get(&class).map(Vec::as_slice)
    }

    pub fn total(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    /// Herd exemplars for each of `new_classes` from the train bank. Existing
    /// entries are left as they are.
    pub fn update(&mut self, bank: &EmbeddingBank, new_classes: &[ClassId]) -> Result<()> {
        if let Some(c) = new_classes.iter().find(|c| self.per_class.contains_key(c)) {
            return Err(Error::Validation(format!(
                "class {c} already has exemplars"
            )));
        }
        let mut additions = Vec::with_capacity(new_classes.len());
        for &class in new_classes {
            if class as usize >= bank.num_classes() {
                return Err(Error::Validation(format!(
                    "class {class} is not in the bank"
                )));
            }
            let rows = bank.rows_of_class(class);
            if rows.is_empty() {
                return Err(Error::Validation(format!(
                    "class {class} has no train samples"
                )));
            }
            let k = if rows.len() < self.capacity_per_class {
                log::warn!(
                    "class {class} has {} samples, fewer than memory_per_class = {}; keeping all",
                    rows.len(),
                    self.capacity_per_class
                );
                rows.len()
            } else {
                self.capacity_per_class
            };
            let features = bank.images().select(ndarray::Axis(0), &rows);
            let local = herding_select(features.view(), k)?;
            additions.push((class, local.into_iter().map(|i| rows[i]).collect()));
        }
        self.per_class.extend(additions);
        Ok(())
    }

    /// All stored rows, by class id then selection order.
    pub fn replay_view(&self) -> Vec<usize> {
        self.per_class.values().flatten().copied().collect()
    }
}

/// Functional form of [`ExemplarStore::update`].
pub fn update_store(
    mut store: ExemplarStore,
    bank: &EmbeddingBank,
    new_classes: &[ClassId],
) -> Result<ExemplarStore> {
    store.update(bank, new_classes)?;
    Ok(store)
}
