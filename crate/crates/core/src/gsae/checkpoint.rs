//! `GSAM` checkpoint container.
//!
//! ```text
//! magic "GSAM" | version u32 = 1 | d u32 | m u32 | k u32 | n_conditioned u32
//! W_enc f32[m*d] | b_enc f32[m] | W_dec f32[d*m] | b_dec f32[d]
//! ```
//!
//! Integers and floats are little-endian; matrices are row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array1;
use serde::Serialize;

use super::GsaeModel;
use crate::error::{Error, Result};
use crate::store::{read_exact_or_corrupt, write_f32s, ByteReader};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GSAM";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub d: u32,
    pub m: u32,
    pub k: u32,
    pub n_conditioned: u32,
}

impl CheckpointHeader {
    fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take("checkpoint magic", 4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"GSAM\"",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32("checkpoint header")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(Self {
            version,
            d: r.u32("checkpoint header")?,
            m: r.u32("checkpoint header")?,
            k: r.u32("checkpoint header")?,
            n_conditioned: r.u32("checkpoint header")?,
        })
    }
}

pub fn write_checkpoint<W: Write>(model: &GsaeModel<f32>, sink: &mut W) -> Result<usize> {
    model.validate()?;
    let as_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::validation(format!("{v} does not fit in 32 bits")))
    };
    sink.write_all(&CHECKPOINT_MAGIC)?;
    for v in [
        CHECKPOINT_VERSION,
        as_u32(model.input_dim())?,
        as_u32(model.latent_dim())?,
        as_u32(model.k)?,
        as_u32(model.n_conditioned)?,
    ] {
        sink.write_all(&v.to_le_bytes())?;
    }
    let mut n = HEADER_LEN;
    n += write_f32s(sink, model.w_enc.iter())?;
    n += write_f32s(sink, model.b_enc.iter())?;
    n += write_f32s(sink, model.w_dec.iter())?;
    n += write_f32s(sink, model.b_dec.iter())?;
    Ok(n)
}

pub fn read_checkpoint<R: Read>(source: &mut R) -> Result<GsaeModel<f32>> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes);
    let header = CheckpointHeader::parse(r.take("checkpoint header", HEADER_LEN)?)?;
    let (d, m) = (header.d as usize, header.m as usize);
    let w_enc = r.f32_matrix("W_enc", m, d)?;
    let b_enc: Array1<f32> = r
        .f32_matrix("b_enc", 1, m)?
        .into_shape_with_order(m)
        .unwrap();
    let w_dec = r.f32_matrix("W_dec", d, m)?;
    let b_dec: Array1<f32> = r
        .f32_matrix("b_dec", 1, d)?
        .into_shape_with_order(d)
        .unwrap();
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} unexpected bytes after checkpoint payload",
            r.remaining()
        )));
    }
    let model = GsaeModel {
        w_enc,
        b_enc,
        w_dec,
        b_dec,
        k: header.k as usize,
        n_conditioned: header.n_conditioned as usize,
    };
    model.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(model)
}

pub fn save_checkpoint(model: &GsaeModel<f32>, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::path(path, e))?;
    let mut w = BufWriter::new(file);
    let n = write_checkpoint(model, &mut w)?;
    w.flush().map_err(|e| Error::path(path, e))?;
    Ok(n)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GsaeModel<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::path(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

/// Header and file size, without reading weights.
pub fn inspect_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, u64)> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::path(path, e))?;
    let len = file.metadata().map_err(|e| Error::path(path, e))?.len();
    let mut head = [0u8; HEADER_LEN];
    read_exact_or_corrupt(&mut file, &mut head, "checkpoint header", len)?;
    Ok((CheckpointHeader::parse(&head)?, len))
}
