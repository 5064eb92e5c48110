//! Persisted forward traces.
//!
//! File layout (little-endian): `"MIPT"`, u32 version, the 32-byte model
//! hash, u64 record count, then per record a u64 byte length followed by
//! u64 sample index, u32 label, u32 activation count, the activation
//! tensors, the logits tensor and one optional switch mask per layer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::LabeledSet;
use crate::codec::{hex, Reader, Writer};
use crate::error::{Error, Result};
use crate::net::{ForwardTrace, Network};

const MAGIC: &[u8; 4] = b"MIPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub label: usize,
    pub trace: ForwardTrace,
}

/// Forward traces keyed by sample index, tied to the model that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStore {
    model_hash: [u8; 32],
    records: BTreeMap<usize, TraceRecord>,
}

impl TraceStore {
    pub fn new(model_hash: [u8; 32]) -> Self {
        TraceStore {
            model_hash,
            records: BTreeMap::new(),
        }
    }

    /// Traces `set` samples `indices` through `net`.
    pub fn record(net: &Network, set: &LabeledSet, indices: &[usize]) -> Result<Self> {
        let mut store = TraceStore::new(net.content_hash());
        for &i in indices {
            if i >= set.len() {
                return Err(Error::input(format!("sample {i} out of range for {} samples", set.len())));
            }
            let (_, trace) = net.forward_traced(&set.sample(i))?;
            store.insert(i, set.label(i), trace);
        }
        Ok(store)
    }

    pub fn insert(&mut self, index: usize, label: usize, trace: ForwardTrace) {
        self.records.insert(index, TraceRecord { label, trace });
    }

    pub fn model_hash(&self) -> &[u8; 32] {
        &self.model_hash
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&TraceRecord> {
        self.records.get(&index)
    }

    /// Records in ascending sample-index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &TraceRecord)> {
        self.records.iter().map(|(&i, r)| (i, r))
    }

    pub fn indices(&self) -> Vec<usize> {
        self.records.keys().copied().collect()
    }

    /// Errors with [`Error::Stale`] unless the store was produced by `net`.
    pub fn check_model(&self, net: &Network) -> Result<()> {
        let want = net.content_hash();
        if want != self.model_hash {
            return Err(Error::Stale(format!(
                "traces were recorded with model {} but the supplied model is {}; re-run `mipin trace`",
                &hex(&self.model_hash)[..16],
                &hex(&want)[..16]
            )));
        }
        Ok(())
    }

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.bytes(&self.model_hash);
        w.u64(self.records.len() as u64);
        for (&index, rec) in &self.records {
            let mut r = Writer::new();
            r.u64(index as u64);
            r.u32(rec.label as u32);
            r.u32(rec.trace.activations.len() as u32);
            for t in &rec.trace.activations {
                r.tensor(t);
            }
            r.tensor(&rec.trace.logits);
            for sw in &rec.trace.switches {
                match sw {
                    Some(sw) => {
                        r.u8(1);
                        r.switches(sw);
                    }
                    None => r.u8(0),
                }
            }
            let body = r.into_bytes();
            w.u64(body.len() as u64);
            w.bytes(&body);
        }
        w.into_bytes()
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "trace file");
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let model_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let count = r.u64()?;
        let mut store = TraceStore::new(model_hash);
        for _ in 0..count {
            let len = r.u64()? as usize;
            let mut rec = Reader::new(r.take(len)?, "trace record");
            let index = rec.u64()? as usize;
            let label = rec.u32()? as usize;
            let n = rec.u32()? as usize;
            let activations = (0..n).map(|_| rec.tensor()).collect::<Result<Vec<_>>>()?;
            let logits = rec.tensor()?;
            let switches = (0..n)
                .map(|_| match rec.u8()? {
                    0 => Ok(None),
                    1 => rec.switches().map(Some),
                    f => Err(Error::format(format!("bad switch flag {f}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            rec.finish()?;
            store.insert(
                index,
                label,
                ForwardTrace {
                    activations,
                    logits,
                    switches,
                },
            );
        }
        r.finish()?;
        Ok(store)
    }

    fn check_shapes(&self, net: &Network) -> Result<()> {
        let shapes = net.activation_shapes();
        let layers = net.layers().len();
        for (index, rec) in &self.records {
            let t = &rec.trace;
            let ok = t.activations.len() == layers
                && t.switches.len() == layers
                && t.activations.iter().zip(&shapes).all(|(a, s)| a.shape() == s.as_slice())
                && t.logits.shape() == shapes[layers].as_slice();
            if !ok {
                return Err(Error::format(format!(
                    "trace for sample {index} does not match the model's layer shapes"
                )));
            }
        }
        Ok(())
    }
}

pub fn save_traces(store: &TraceStore, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, store.encode())?;
    Ok(())
}

/// Loads a trace file and rejects it unless it was produced by `net`.
pub fn load_traces(path: impl AsRef<Path>, net: &Network) -> Result<TraceStore> {
    let store = TraceStore::decode(&fs::read(path)?)?;
    store.check_model(net)?;
    store.check_shapes(net)?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Architecture;
    use crate::tensor::Tensor;

    fn digits(n: usize) -> LabeledSet {
        let images = Tensor::from_fn(&[n, 1, 28, 28], |i| ((i * 31) % 97) as f64 / 97.0);
        LabeledSet::new(images, (0..n).map(|i| i % 10).collect()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let net = Network::architecture(Architecture::CnnM, 1);
        let store = TraceStore::record(&net, &digits(3), &[0, 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.mipt");
        save_traces(&store, &p).unwrap();
        let back = load_traces(&p, &net).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.encode(), fs::read(&p).unwrap());
        assert!(back.get(2).unwrap().trace.switches[2].is_some());
    }

    #[test]
    fn other_model_is_stale() {
        let net = Network::architecture(Architecture::MlpM, 1);
        let store = TraceStore::record(&net, &digits(1), &[0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.mipt");
        save_traces(&store, &p).unwrap();
        let other = Network::architecture(Architecture::MlpM, 2);
        assert!(matches!(load_traces(&p, &other), Err(Error::Stale(_))));
    }

    #[test]
    fn mlp_store_size() {
        let net = Network::architecture(Architecture::MlpM, 0);
        let store = TraceStore::record(&net, &digits(100), &(0..100).collect::<Vec<_>>()).unwrap();
        // file header, then per record: length, index, label, count, four
        // tensor extents ([1,28,28], [512], [512], [10]) and three switch flags.
        let header = 4 + 4 + 32 + 8;
        let per_record = 8 + 8 + 4 + 4 + (4 + 12) + 3 * (4 + 4) + 3;
        assert_eq!(store.encode().len(), header + 100 * (per_record + (784 + 512 + 512 + 10) * 8));
    }

    #[test]
    fn truncated_file() {
        let net = Network::architecture(Architecture::MlpM, 0);
        let store = TraceStore::record(&net, &digits(2), &[0, 1]).unwrap();
        let bytes = store.encode();
        assert!(matches!(TraceStore::decode(&bytes[..bytes.len() - 9]), Err(Error::Format(_))));
    }
}
