//! Activation datasets and the `GSAD` container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes   "GSAD"
//! version      u32       1
//! n_rows       u32
//! d            u32
//! n_concepts   u32       number of label columns
//! dtype_code   u8        0 = IEEE-754 binary32
//! activations  f32 * n_rows * d           row-major
//! labels       f32 * n_rows * n_concepts  row-major
//! trailer_len  u32
//! trailer      UTF-8 JSON {"concept_names":[...]}
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"GSAD";
pub const DATASET_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DATASET_HEADER_LEN: usize = 21;

/// Labels at or above this value count as "concept present".
pub const LABEL_THRESHOLD: f32 = 0.5;

/// Activation rows with per-row concept labels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    /// `N x d` activations.
    pub activations: Array2<f32>,
    /// `N x (c+1)` concept labels.
    pub labels: Array2<f32>,
    pub concept_names: Vec<String>,
}

impl ActivationDataset {
    /// Builds a dataset and checks every invariant.
    pub fn new(
        activations: Array2<f32>,
        labels: Array2<f32>,
        concept_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            activations,
            labels,
            concept_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.nrows() != self.activations.nrows() {
            return Err(Error::validation(format!(
                "label matrix has {} rows but there are {} activation rows",
                self.labels.nrows(),
                self.activations.nrows()
            )));
        }
        if self.labels.ncols() != self.concept_names.len() {
            return Err(Error::validation(format!(
                "{} label columns but {} concept names",
                self.labels.ncols(),
                self.concept_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &self.concept_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate concept name {name:?}"
                )));
            }
        }
        if let Some(((r, c), v)) = self
            .activations
            .indexed_iter()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::validation(format!(
                "non-finite activation {v} at row {r}, column {c}"
            )));
        }
        if let Some(((r, c), v)) = self
            .labels
            .indexed_iter()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::validation(format!(
                "label {v} at row {r}, column {c} is outside [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.activations.nrows()
    }

    pub fn dim(&self) -> usize {
        self.activations.ncols()
    }

    pub fn n_concepts(&self) -> usize {
        self.labels.ncols()
    }

    /// Labels of one concept binarised at [`LABEL_THRESHOLD`].
    pub fn binary_labels(&self, concept_index: usize) -> Result<Vec<bool>> {
        self.check_concept(concept_index)?;
        Ok(self
            .labels
            .column(concept_index)
            .iter()
            .map(|&y| y >= LABEL_THRESHOLD)
            .collect())
    }

    /// New dataset made of the given rows, in the given order (duplicates allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            activations: self.activations.select(Axis(0), rows),
            labels: self.labels.select(Axis(0), rows),
            concept_names: self.concept_names.clone(),
        }
    }

    fn check_concept(&self, concept_index: usize) -> Result<()> {
        if concept_index >= self.n_concepts() {
            return Err(Error::config(format!(
                "concept index {concept_index} out of range for {} concepts",
                self.n_concepts()
            )));
        }
        Ok(())
    }
}

/// Fixed-size prefix of a `GSAD` stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetHeader {
    pub magic: [u8; 4],
    pub version: u32,
    pub n_rows: u32,
    pub d: u32,
    pub n_concepts: u32,
    pub dtype_code: u8,
}

impl DatasetHeader {
    fn to_bytes(self) -> [u8; DATASET_HEADER_LEN] {
        let mut out = [0u8; DATASET_HEADER_LEN];
        out[0..4].copy_from_slice(&self.magic);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.n_rows.to_le_bytes());
        out[12..16].copy_from_slice(&self.d.to_le_bytes());
        out[16..20].copy_from_slice(&self.n_concepts.to_le_bytes());
        out[20] = self.dtype_code;
        out
    }

    /// Parses and checks magic, version and dtype.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic: [u8; 4] = r.take("dataset magic", 4)?.try_into().unwrap();
        if magic != DATASET_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"GSAD\"",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = r.u32("dataset header")?;
        if version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let n_rows = r.u32("dataset header")?;
        let d = r.u32("dataset header")?;
        let n_concepts = r.u32("dataset header")?;
        let dtype_code = r.take("dataset header", 1)?[0];
        if dtype_code != DTYPE_F32 {
            return Err(Error::Format(format!("unknown dtype code {dtype_code}")));
        }
        Ok(Self {
            magic,
            version,
            n_rows,
            d,
            n_concepts,
            dtype_code,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    concept_names: Vec<String>,
}

fn dim_u32(what: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::validation(format!("{what} = {v} does not fit in 32 bits")))
}

/// Serialises `dataset` into `sink`, returning the number of bytes written.
pub fn write_dataset<W: Write>(dataset: &ActivationDataset, sink: &mut W) -> Result<usize> {
    dataset.validate()?;
    let header = DatasetHeader {
        magic: DATASET_MAGIC,
        version: DATASET_VERSION,
        n_rows: dim_u32("N", dataset.n_rows())?,
        d: dim_u32("d", dataset.dim())?,
        n_concepts: dim_u32("n_concepts", dataset.n_concepts())?,
        dtype_code: DTYPE_F32,
    };
    let mut written = 0;
    sink.write_all(&header.to_bytes())?;
    written += DATASET_HEADER_LEN;
    written += write_f32s(sink, dataset.activations.iter())?;
    written += write_f32s(sink, dataset.labels.iter())?;
    let trailer = serde_json::to_vec(&Trailer {
        concept_names: dataset.concept_names.clone(),
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    sink.write_all(&dim_u32("trailer length", trailer.len())?.to_le_bytes())?;
    sink.write_all(&trailer)?;
    written += 4 + trailer.len();
    Ok(written)
}

/// Parses a complete `GSAD` stream.
pub fn read_dataset<R: Read>(source: &mut R) -> Result<ActivationDataset> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes);
    let header = DatasetHeader::parse(r.take("dataset header", DATASET_HEADER_LEN)?)?;
    let n = header.n_rows as usize;
    let d = header.d as usize;
    let c = header.n_concepts as usize;
    let activations = r.f32_matrix("activations", n, d)?;
    let labels = r.f32_matrix("labels", n, c)?;
    let trailer_len = r.u32("trailer length")? as usize;
    let trailer: Trailer = serde_json::from_slice(r.take("trailer", trailer_len)?)
        .map_err(|e| Error::Format(format!("bad trailer JSON: {e}")))?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} unexpected bytes after trailer",
            r.remaining()
        )));
    }
    let ds = ActivationDataset {
        activations,
        labels,
        concept_names: trailer.concept_names,
    };
    ds.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(ds)
}

pub fn save_dataset(dataset: &ActivationDataset, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::path(path, e))?;
    let mut w = BufWriter::new(file);
    let n = write_dataset(dataset, &mut w)?;
    w.flush().map_err(|e| Error::path(path, e))?;
    Ok(n)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ActivationDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::path(path, e))?;
    read_dataset(&mut BufReader::new(file))
}

/// Header plus concept names, read without touching the payload.
pub fn inspect_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<String>, u64)> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::path(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::path(path, e))?.len();
    let mut head = [0u8; DATASET_HEADER_LEN];
    read_exact_or_corrupt(&mut file, &mut head, "dataset header", file_len)?;
    let header = DatasetHeader::parse(&head)?;
    let payload = 4 * (header.n_rows as u64) * (header.d as u64 + header.n_concepts as u64);
    let trailer_at = DATASET_HEADER_LEN as u64 + payload;
    file.seek(SeekFrom::Start(trailer_at))?;
    let mut len = [0u8; 4];
    read_exact_or_corrupt(
        &mut file,
        &mut len,
        "trailer length",
        file_len.saturating_sub(trailer_at),
    )?;
    let mut trailer = vec![0u8; u32::from_le_bytes(len) as usize];
    read_exact_or_corrupt(
        &mut file,
        &mut trailer,
        "trailer",
        file_len.saturating_sub(trailer_at + 4),
    )?;
    let trailer: Trailer = serde_json::from_slice(&trailer)
        .map_err(|e| Error::Format(format!("bad trailer JSON: {e}")))?;
    Ok((header, trailer.concept_names, file_len))
}

pub(crate) fn read_exact_or_corrupt(
    file: &mut File,
    buf: &mut [u8],
    what: &'static str,
    available: u64,
) -> Result<()> {
    if (available as usize) < buf.len() {
        return Err(Error::Corrupt {
            what,
            expected: buf.len(),
            available: available as usize,
        });
    }
    file.read_exact(buf)?;
    Ok(())
}

pub(crate) fn write_f32s<'a, W: Write>(
    sink: &mut W,
    values: impl Iterator<Item = &'a f32>,
) -> Result<usize> {
    let mut n = 0;
    for v in values {
        sink.write_all(&v.to_le_bytes())?;
        n += 4;
    }
    Ok(n)
}

/// Bounds-checked cursor over an in-memory byte buffer.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, what: &'static str, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Corrupt {
                what,
                expected: n,
                available: self.remaining(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(what, 4)?.try_into().unwrap()))
    }

    pub(crate) fn f32_matrix(
        &mut self,
        what: &'static str,
        rows: usize,
        cols: usize,
    ) -> Result<Array2<f32>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("{what} size overflows")))?;
        let raw = self.take(what, len)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked above"))
    }
}

/// Row indices of a stratified train/eval partition, each sorted ascending.
///
/// Each class contributes `round(n_class * eval_fraction)` rows to the eval
/// part, so both parts keep the full positive rate to within half a row.
pub fn stratified_indices(
    labels: &[bool],
    eval_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::config(format!(
            "eval fraction {eval_fraction} must lie in (0, 1)"
        )));
    }
    if labels.is_empty() {
        return Err(Error::config("cannot split an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for class in [false, true] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        let n_eval = (rows.len() as f64 * eval_fraction).round() as usize;
        eval.extend_from_slice(&rows[..n_eval]);
        train.extend_from_slice(&rows[n_eval..]);
    }
    if eval.is_empty() {
        return Err(Error::config(format!(
            "eval fraction {eval_fraction} leaves the eval part empty for {} rows",
            labels.len()
        )));
    }
    if train.is_empty() {
        return Err(Error::config(format!(
            "eval fraction {eval_fraction} leaves the train part empty for {} rows",
            labels.len()
        )));
    }
    train.sort_unstable();
    eval.sort_unstable();
    Ok((train, eval))
}

/// Splits `dataset` into `(train, eval)` stratified on one concept.
pub fn split_stratified(
    dataset: &ActivationDataset,
    eval_fraction: f64,
    concept_index: usize,
    seed: u64,
) -> Result<(ActivationDataset, ActivationDataset)> {
    let labels = dataset.binary_labels(concept_index)?;
    let (train, eval) = stratified_indices(&labels, eval_fraction, seed)?;
    Ok((dataset.select_rows(&train), dataset.select_rows(&eval)))
}

/// Row indices that balance the two classes: all original rows followed by
/// minority rows drawn with replacement.
pub fn oversample_indices(labels: &[bool], seed: u64) -> Result<Vec<usize>> {
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::validation(format!(
            "oversampling needs both classes, got {} positive and {} negative rows",
            positives.len(),
            negatives.len()
        )));
    }
    let (minority, deficit) = if positives.len() < negatives.len() {
        (&positives, negatives.len() - positives.len())
    } else {
        (&negatives, positives.len() - negatives.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = (0..labels.len()).collect();
    out.extend((0..deficit).map(|_| minority[rng.random_range(0..minority.len())]));
    Ok(out)
}

/// Duplicates minority-class rows of one concept until both classes are equal.
pub fn oversample_minority(
    dataset: &ActivationDataset,
    concept_index: usize,
    seed: u64,
) -> Result<ActivationDataset> {
    let labels = dataset.binary_labels(concept_index)?;
    let rows = oversample_indices(&labels, seed)?;
    if rows.len() == dataset.n_rows() {
        return Ok(dataset.clone());
    }
    Ok(dataset.select_rows(&rows))
}
