//! Class ordering and the `B-m Inc-n` stage schedule.
//!
//! Stage numbers in this module are 1-based, matching how stages are
//! reported everywhere else in the engine.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::bank::ClassId;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// A permutation of `[0, C)` and the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassOrder {
    order: Vec<ClassId>,
    seed: u64,
}

impl ClassOrder {
    /// The unshuffled order `[0, 1, ..., C-1]`.
    pub fn identity(num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Validation("num_classes must be at least 1".into()));
        }
        Ok(Self {
            order: (0..num_classes as ClassId).collect(),
            seed: 0,
        })
    }

    pub fn as_slice(&self) -> &[ClassId] {
        &self.order
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Seeded Fisher-Yates shuffle of `[0, num_classes)` driven by SplitMix64.
pub fn shuffle_classes(num_classes: usize, seed: u64) -> Result<ClassOrder> {
    let mut order = ClassOrder::identity(num_classes)?;
    Stream::new(seed).shuffle(&mut order.order);
    order.seed = seed;
    Ok(order)
}

/// Class order partitioned into stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageSchedule {
    order: ClassOrder,
    init_cls: usize,
    increment: usize,
    stages: Vec<Vec<ClassId>>,
}

/// Split `order` into an initial stage of `init_cls` classes (or `increment`
/// when `init_cls` is 0) followed by stages of `increment` classes.
pub fn build_schedule(
    order: ClassOrder,
    init_cls: usize,
    increment: usize,
    allow_ragged: bool,
) -> Result<StageSchedule> {
    if increment == 0 {
        return Err(Error::Schedule("increment must be positive".into()));
    }
    let total = order.len();
    let first = if init_cls > 0 { init_cls } else { increment };
    if first > total {
        return Err(Error::Schedule(format!(
            "first stage needs {first} classes but only {total} exist"
        )));
    }
    let rest = total - first;
    if !rest.is_multiple_of(increment) && !allow_ragged {
        return Err(Error::Schedule(format!(
            "{rest} classes after the first stage do not divide into increments of {increment}; \
             set allow_ragged to permit a short final stage"
        )));
    }
    let ids = order.as_slice();
    let mut stages = vec![ids[..first].to_vec()];
    stages.extend(ids[first..].chunks(increment).map(<[ClassId]>::to_vec));
    Ok(StageSchedule {
        order,
        init_cls,
        increment,
        stages,
    })
}

impl StageSchedule {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[Vec<ClassId>] {
        &self.stages
    }

    pub fn order(&self) -> &ClassOrder {
        &self.order
    }

    pub fn init_cls(&self) -> usize {
        self.init_cls
    }

    pub fn increment(&self) -> usize {
        self.increment
    }

    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stages.iter().map(Vec::len).collect()
    }

    /// Classes introduced at stage `b` (1-based).
    pub fn new_classes(&self, b: usize) -> Result<&[ClassId]> {
        self.check_stage(b)?;
        Ok(&self.stages[b - 1])
    }

    /// Classes seen through stage `b`, in stage order.
    pub fn seen_in_order(&self, b: usize) -> Result<Vec<ClassId>> {
        self.check_stage(b)?;
        Ok(self.stages[..b].concat())
    }

    /// `(new_classes, seen_classes)` for stage `b` (1-based).
    pub fn stage_classes(&self, b: usize) -> Result<(Vec<ClassId>, BTreeSet<ClassId>)> {
        let new = self.new_classes(b)?.to_vec();
        let seen = self.stages[..b].iter().flatten().copied().collect();
        Ok((new, seen))
    }

    fn check_stage(&self, b: usize) -> Result<()> {
        if b == 0 || b > self.stages.len() {
            return Err(Error::Validation(format!(
                "stage {b} out of range [1, {}]",
                self.stages.len()
            )));
        }
        Ok(())
    }
}
