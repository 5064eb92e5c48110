//! Attribution record file: `"MIPA"`, u32 version, the producing run's
//! config snapshot as a length-prefixed UTF-8 string, the 32-byte model
//! hash, u64 record count, then per record the sample index, label and
//! target class (u64 each), both logits and the source-signal and
//! attribution tensors.

use std::fs;
use std::path::Path;

use super::AttributionResult;
use crate::codec::{Reader, Writer};
use crate::error::Result;

const MAGIC: &[u8; 4] = b"MIPA";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionRecord {
    pub index: usize,
    pub label: usize,
    pub result: AttributionResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionFile {
    /// Free-form `key = value` lines describing the producing run.
    pub meta: String,
    pub model_hash: [u8; 32],
    pub records: Vec<AttributionRecord>,
}

pub(crate) fn encode(file: &AttributionFile) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.str(&file.meta);
    w.bytes(&file.model_hash);
    w.u64(file.records.len() as u64);
    for r in &file.records {
        w.u64(r.index as u64);
        w.u64(r.label as u64);
        w.u64(r.result.target_class as u64);
        w.f64(r.result.logit_x);
        w.f64(r.result.logit_s);
        w.tensor(&r.result.source_signal);
        w.tensor(&r.result.attribution);
    }
    w.into_bytes()
}

pub(crate) fn decode(bytes: &[u8]) -> Result<AttributionFile> {
    let mut r = Reader::new(bytes, "attribution file");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let meta = r.str()?;
    let model_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let n = r.u64()?;
    let mut records = Vec::new();
    for _ in 0..n {
        let index = r.u64()? as usize;
        let label = r.u64()? as usize;
        let target_class = r.u64()? as usize;
        let logit_x = r.f64()?;
        let logit_s = r.f64()?;
        let source_signal = r.tensor()?;
        let attribution = r.tensor()?;
        records.push(AttributionRecord {
            index,
            label,
            result: AttributionResult {
                source_signal,
                attribution,
                target_class,
                logit_x,
                logit_s,
            },
        });
    }
    r.finish()?;
    Ok(AttributionFile {
        meta,
        model_hash,
        records,
    })
}

pub fn save_attributions(file: &AttributionFile, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(file))?;
    Ok(())
}

pub fn load_attributions(path: impl AsRef<Path>) -> Result<AttributionFile> {
    decode(&fs::read(path)?)
}
