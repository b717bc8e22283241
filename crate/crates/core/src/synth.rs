//! Synthetic embedding banks on the unit sphere.
//!
//! Class `c` gets a direction `d_c`, a normalized Gaussian draw scaled by
//! `class_separation`. Samples are `normalize(d_c + within_noise * n)` and the
//! class text embedding is `normalize(d_c + text_noise * n)`. Every vector
//! comes from its own SplitMix64 stream keyed by `(seed, class, role, index)`
//! with Box-Muller normals, so output is independent of generation order.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bank::{
    manifest_path, write_bank, write_manifest, ClassId, EmbeddingBank, Manifest, Split,
};
use crate::error::{Error, Result};
use crate::rng::Stream;

const ROLE_DIRECTION: u64 = 0;
const ROLE_TRAIN: u64 = 1;
const ROLE_TEST: u64 = 2;
const ROLE_TEXT: u64 = 3;

fn default_name() -> String {
    "synth".into()
}

fn default_backbone() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub dim: usize,
    pub class_separation: f64,
    pub within_noise: f64,
    pub text_noise: f64,
    pub seed: u64,
    /// File stem for written banks.
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_backbone")]
    pub backbone_type: String,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.per_class_train == 0 || self.per_class_test == 0 {
            return Err(Error::Validation(
                "num_classes and per-class counts must be positive".into(),
            ));
        }
        if u32::try_from(self.num_classes).is_err() {
            return Err(Error::Validation("num_classes exceeds u32 range".into()));
        }
        if self.dim < 2 {
            return Err(Error::Validation(format!(
                "dim must be at least 2, got {}",
                self.dim
            )));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return Err(Error::Validation(
                "class_separation must be positive".into(),
            ));
        }
        for (name, v) in [
            ("within_noise", self.within_noise),
            ("text_noise", self.text_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn gaussian(stream: &mut Stream, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| stream.normal()).collect()
}

fn normalized(v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Numeric("generated a zero vector".into()));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

fn perturbed(center: &[f64], noise: f64, stream: &mut Stream) -> Result<Vec<f32>> {
    let raw = center
        .iter()
        .zip(gaussian(stream, center.len()))
        .map(|(c, n)| c + noise * n)
        .collect();
    Ok(normalized(raw)?.into_iter().map(|v| v as f32).collect())
}

/// Generate the train bank (with text embeddings) and the test bank.
pub fn generate(spec: &SynthSpec) -> Result<(EmbeddingBank, EmbeddingBank)> {
    spec.validate()?;
    let c = spec.num_classes;
    let dim = spec.dim;
    let directions = (0..c)
        .map(|class| {
            let mut s = Stream::keyed(spec.seed, &[class as u64, ROLE_DIRECTION, 0]);
            normalized(gaussian(&mut s, dim)).map(|d| {
                d.into_iter()
                    .map(|v| v * spec.class_separation)
                    .collect::<Vec<_>>()
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let names: Vec<String> = (0..c).map(|class| format!("class_{class:03}")).collect();

    let mut text = Vec::with_capacity(c * dim);
    for (class, d) in directions.iter().enumerate() {
        let mut s = Stream::keyed(spec.seed, &[class as u64, ROLE_TEXT, 0]);
        text.extend(perturbed(d, spec.text_noise, &mut s)?);
    }
    let text = Array2::from_shape_vec((c, dim), text).expect("c x dim values");

    let split_bank = |role: u64, per_class: usize, split: Split, text: Option<Array2<f32>>| {
        let mut values = Vec::with_capacity(c * per_class * dim);
        let mut labels = Vec::with_capacity(c * per_class);
        for (class, d) in directions.iter().enumerate() {
            for i in 0..per_class {
                let mut s = Stream::keyed(spec.seed, &[class as u64, role, i as u64]);
                values.extend(perturbed(d, spec.within_noise, &mut s)?);
                labels.push(class as ClassId);
            }
        }
        let images = Array2::from_shape_vec((c * per_class, dim), values).expect("rows x dim");
        EmbeddingBank::new(images, labels, names.clone(), text, split)
    };

    let train = split_bank(ROLE_TRAIN, spec.per_class_train, Split::Train, Some(text))?;
    let test = split_bank(ROLE_TEST, spec.per_class_test, Split::Test, None)?;
    Ok((train, test))
}

/// Paths of the train and test banks for a dataset stem.
pub fn bank_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{name}_train.c3eb")),
        dir.join(format!("{name}_test.c3eb")),
    )
}

/// Generate and write both banks plus manifests into `dir`. Returns the
/// bank paths.
pub fn generate_to_dir(spec: &SynthSpec, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = generate(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (train_path, test_path) = bank_paths(dir, &spec.name);
    for (bank, path) in [(&train, &train_path), (&test, &test_path)] {
        write_bank(bank, path)?;
        write_manifest(
            &Manifest::describe(bank, &spec.name, &spec.backbone_type),
            manifest_path(path),
        )?;
    }
    Ok((train_path, test_path))
}
