//! Embedding banks: precomputed image features with labels, class names and
//! optional per-class text features.
//!
//! On-disk layout (`.c3eb`, little-endian throughout):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "C3EB"
//! 4       4     u32 version (= 1)
//! 8       4     u32 dim
//! 12      8     u64 N (image rows)
//! 20      4     u32 C (classes)
//! 24      1     u8 split tag (0 = train, 1 = test)
//! 25      1     u8 has_text (0 / 1)
//! 26      6     reserved, zero
//! 32      ...   N x dim f32 image matrix, row-major
//!               N u32 labels
//!               C names, each u32 byte length + UTF-8 bytes
//!               if has_text: C x dim f32 text matrix, row-major
//! ```
//!
//! Embeddings are stored raw. Normalization is left to the learners.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = u32;

pub const MAGIC: [u8; 4] = *b"C3EB";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Split::Train),
            1 => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split tag {other}"))),
        }
    }
}

/// A validated, immutable embedding bank for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    images: Array2<f32>,
    labels: Vec<ClassId>,
    class_names: Vec<String>,
    text_embeddings: Option<Array2<f32>>,
    split: Split,
}

fn is_zero_row(row: ArrayView1<'_, f32>) -> bool {
    row.iter().all(|&v| v == 0.0)
}

impl EmbeddingBank {
    /// Build a bank, checking every invariant.
    pub fn new(
        images: Array2<f32>,
        labels: Vec<ClassId>,
        class_names: Vec<String>,
        text_embeddings: Option<Array2<f32>>,
        split: Split,
    ) -> Result<Self> {
        let (n, dim) = images.dim();
        let c = class_names.len();
        if dim == 0 {
            return Err(Error::Validation("dim must be positive".into()));
        }
        if c == 0 {
            return Err(Error::Validation("bank has no classes".into()));
        }
        if u32::try_from(c).is_err() {
            return Err(Error::Validation(format!("{c} classes exceed u32 range")));
        }
        if labels.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {n} image rows",
                labels.len()
            )));
        }
        for (row, &label) in labels.iter().enumerate() {
            if label as usize >= c {
                return Err(Error::Validation(format!(
                    "label {label} at row {row} out of range [0, {c})"
                )));
            }
        }
        for (row, values) in images.rows().into_iter().enumerate() {
            if is_zero_row(values) {
                return Err(Error::Validation(format!("image row {row} is all zeros")));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("image row {row} is not finite")));
            }
        }
        if split == Split::Train {
            let mut counts = vec![0usize; c];
            for &label in &labels {
                counts[label as usize] += 1;
            }
            if let Some(class) = counts.iter().position(|&k| k == 0) {
                return Err(Error::Validation(format!(
                    "class {class} has no samples in the train split"
                )));
            }
        }
        if let Some(text) = &text_embeddings {
            if text.dim() != (c, dim) {
                return Err(Error::Validation(format!(
                    "text matrix is {:?}, expected ({c}, {dim})",
                    text.dim()
                )));
            }
            for (row, values) in text.rows().into_iter().enumerate() {
                if is_zero_row(values) {
                    return Err(Error::Validation(format!("text row {row} is all zeros")));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!("text row {row} is not finite")));
                }
            }
        }
        Ok(Self {
            images,
            labels,
            class_names,
            text_embeddings,
            split,
        })
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.images.nrows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn images(&self) -> &Array2<f32> {
        &self.images
    }

    pub fn image(&self, row: usize) -> ArrayView1<'_, f32> {
        self.images.row(row)
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn text_embeddings(&self) -> Option<&Array2<f32>> {
        self.text_embeddings.as_ref()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Row counts per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for &label in &self.labels {
            counts[label as usize] += 1;
        }
        counts
    }

    /// Rows belonging to one class, in increasing order.
    pub fn rows_of_class(&self, class: ClassId) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    /// View over the rows whose label is in `class_ids`.
    pub fn subset_by_classes<I>(&self, class_ids: I) -> Result<ClassSubsetView<'_>>
    where
        I: IntoIterator<Item = ClassId>,
    {
        let class_ids: BTreeSet<ClassId> = class_ids.into_iter().collect();
        if let Some(&bad) = class_ids
            .iter()
            .find(|&&c| c as usize >= self.num_classes())
        {
            return Err(Error::Validation(format!(
                "class id {bad} out of range [0, {})",
                self.num_classes()
            )));
        }
        let mut member = vec![false; self.num_classes()];
        for &c in &class_ids {
            member[c as usize] = true;
        }
        let indices = self
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| member[l as usize].then_some(i))
            .collect();
        Ok(ClassSubsetView {
            bank: self,
            class_ids,
            indices,
        })
    }
}

/// The rows of a bank whose labels fall in a class set.
#[derive(Debug, Clone)]
pub struct ClassSubsetView<'a> {
    bank: &'a EmbeddingBank,
    class_ids: BTreeSet<ClassId>,
    indices: Vec<usize>,
}

impl<'a> ClassSubsetView<'a> {
    pub fn bank(&self) -> &'a EmbeddingBank {
        self.bank
    }

    pub fn class_ids(&self) -> &BTreeSet<ClassId> {
        &self.class_ids
    }

    /// Strictly increasing row indices.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn into_indices(self) -> Vec<usize> {
        self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Encode a bank into the C3EB byte layout.
pub fn encode_bank(bank: &EmbeddingBank) -> Vec<u8> {
    let n = bank.len();
    let dim = bank.dim();
    let c = bank.num_classes();
    let names_len: usize = bank.class_names.iter().map(|s| 4 + s.len()).sum();
    let text_len = if bank.text_embeddings.is_some() {
        c * dim * 4
    } else {
        0
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + n * dim * 4 + n * 4 + names_len + text_len);

    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(c as u32).to_le_bytes());
    buf.push(bank.split.tag());
    buf.push(u8::from(bank.text_embeddings.is_some()));
    buf.extend_from_slice(&[0u8; 6]);

    for v in bank.images.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for label in &bank.labels {
        buf.extend_from_slice(&label.to_le_bytes());
    }
    for name in &bank.class_names {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    if let Some(text) = &bank.text_embeddings {
        for v in text.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let out = &self.data[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Validation(format!(
                "truncated payload reading {what} at byte offset {} (need {len} bytes, {} left)",
                self.pos,
                self.data.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32_matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f32>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|k| k.checked_mul(4))
            .ok_or_else(|| Error::Validation(format!("{what} size overflows")))?;
        let bytes = self.take(len, what)?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked above"))
    }
}

/// Decode and validate a bank from C3EB bytes. Bytes past the end of the
/// payload are ignored.
pub fn decode_bank(data: &[u8]) -> Result<EmbeddingBank> {
    if data.len() < 4 || data[..4] != MAGIC {
        return Err(Error::Format("missing C3EB magic".into()));
    }
    if data.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "header truncated: {} of {HEADER_LEN} bytes",
            data.len()
        )));
    }
    let mut cur = Cursor { data, pos: 4 };
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = cur.u32("dim")? as usize;
    let n = usize::try_from(cur.u64("row count")?)
        .map_err(|_| Error::Format("row count exceeds address space".into()))?;
    let c = cur.u32("class count")? as usize;
    let split = Split::from_tag(cur.take(1, "split tag")?[0])?;
    let has_text = match cur.take(1, "text flag")?[0] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format(format!(
                "text flag must be 0 or 1, got {other}"
            )))
        }
    };
    if cur.take(6, "reserved")?.iter().any(|&b| b != 0) {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }

    let images = cur.f32_matrix(n, dim, "image matrix")?;
    let mut labels = Vec::with_capacity(n.min(data.len() / 4));
    for _ in 0..n {
        labels.push(cur.u32("labels")?);
    }
    let mut class_names = Vec::with_capacity(c.min(data.len() / 4));
    for class in 0..c {
        let len = cur.u32("class name length")? as usize;
        let bytes = cur.take(len, "class name")?;
        let name = std::str::from_utf8(bytes).map_err(|e| {
            Error::Validation(format!("class name {class} is not valid UTF-8: {e}"))
        })?;
        class_names.push(name.to_owned());
    }
    let text = if has_text {
        Some(cur.f32_matrix(c, dim, "text matrix")?)
    } else {
        None
    };
    if cur.pos < data.len() {
        log::debug!("ignoring {} trailing bytes", data.len() - cur.pos);
    }
    EmbeddingBank::new(images, labels, class_names, text, split)
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<EmbeddingBank> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bank(&data)
}

pub fn write_bank(bank: &EmbeddingBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&encode_bank(bank))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// JSON sidecar describing a bank file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: String,
    pub dim: usize,
    pub n: usize,
    pub c: usize,
    pub split: Split,
    pub backbone_type: String,
}

impl Manifest {
    pub fn describe(bank: &EmbeddingBank, dataset: &str, backbone_type: &str) -> Self {
        Self {
            dataset: dataset.to_owned(),
            dim: bank.dim(),
            n: bank.len(),
            c: bank.num_classes(),
            split: bank.split(),
            backbone_type: backbone_type.to_owned(),
        }
    }

    /// Check the manifest against the bank it describes.
    pub fn check(&self, bank: &EmbeddingBank) -> Result<()> {
        let expected = (bank.dim(), bank.len(), bank.num_classes(), bank.split());
        let found = (self.dim, self.n, self.c, self.split);
        if expected != found {
            return Err(Error::Validation(format!(
                "manifest says (dim, n, c, split) = {found:?}, bank has {expected:?}"
            )));
        }
        Ok(())
    }
}

/// `<dir>/<stem>.json` for a bank at `<dir>/<stem>.c3eb`.
pub fn manifest_path(bank_path: &Path) -> PathBuf {
    bank_path.with_extension("json")
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("manifest {}: {e}", path.display())))
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
