//! Binary container for toy records.
//!
//! Layout (little-endian): 8-byte magic, version byte, `u32` record count,
//! then per record: `u32`-prefixed caption, `u32`-prefixed CoNLL-U block,
//! six spec bytes, `u32` frames, `u32` channels and the `f32` motion payload
//! in row-major order.

use std::path::Path;

use autograd::ndarray::Array2;

use crate::diffusion::MotionSequence;
use crate::error::{Error, Result};
use crate::io::ByteReader;
use crate::ling_graph::{load_conllu, RelationVocab};

use super::spec::ToyMotionSpec;
use super::DatasetRecord;

pub const MAGIC: &[u8; 8] = b"FGT2MDAT";
pub const VERSION: u8 = 1;

pub fn encode_records(records: &[DatasetRecord], vocab: &RelationVocab) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let count = u32::try_from(records.len()).map_err(|_| Error::Contract("too many records".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for r in records {
        r.spec.validate()?;
        let conllu = r.parse.to_conllu(vocab);
        for s in [r.caption.as_bytes(), conllu.as_bytes()] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s);
        }
        out.extend_from_slice(&r.spec.to_bytes());
        let (t, d) = r.motion.data.dim();
        out.extend_from_slice(&(t as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in r.motion.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_records(bytes: &[u8], vocab: &RelationVocab) -> Result<Vec<DatasetRecord>> {
    let mut r = ByteReader::new(bytes);
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Format {
            offset: 8,
            message: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let start = r.pos as u64;
        let at = |e: Error| match e {
            Error::Format { .. } => e,
            other => Error::Format {
                offset: start,
                message: format!("record {i}: {other}"),
            },
        };
        let caption = r.string("caption")?;
        let conllu = r.string("parse")?;
        let parse = load_conllu(&conllu, vocab).map_err(at)?;
        let spec = ToyMotionSpec::from_bytes(r.take(6, "spec")?.try_into().unwrap()).map_err(at)?;
        let frames = r.u32("frame count")? as usize;
        let channels = r.u32("channel count")? as usize;
        let n = frames
            .checked_mul(channels)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.err("motion shape overflows"))?;
        let payload = r.take(n, "motion payload")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = Array2::from_shape_vec((frames, channels), data).unwrap();
        let motion = MotionSequence::new(data).map_err(at)?;
        records.push(DatasetRecord {
            caption,
            parse,
            motion,
            spec,
        });
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after last record"));
    }
    Ok(records)
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord], vocab: &RelationVocab) -> Result<()> {
    crate::io::atomic_write(path, &encode_records(records, vocab)?)
}

pub fn read_dataset(path: &Path, vocab: &RelationVocab) -> Result<Vec<DatasetRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_records(&bytes, vocab)
}
