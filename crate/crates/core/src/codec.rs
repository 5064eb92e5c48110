//! Little-endian binary helpers shared by the model, trace, inverse-network
//! and attribution file formats.

use crate::error::{Error, Result};
use crate::tensor::{SwitchMask, Tensor};

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn extents(&mut self, shape: &[usize]) {
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u32(d as u32);
        }
    }

    /// rank, extents, then the raw values.
    pub fn tensor(&mut self, t: &Tensor) {
        self.extents(t.shape());
        self.f64s(t.data());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn switches(&mut self, sw: &SwitchMask) {
        self.extents(&sw.shape());
        self.bytes(&sw.flags().iter().map(|&f| f as u8).collect::<Vec<_>>());
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(format!(
                "{} truncated at byte {} (wanted {n} more)",
                self.what, self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn version(&mut self, want: u32) -> Result<()> {
        let v = self.u32()?;
        if v != want {
            return Err(Error::format(format!(
                "{}: unsupported version {v}, expected {want}",
                self.what
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn extents(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::format(format!("{}: implausible rank {rank}", self.what)));
        }
        (0..rank).map(|_| Ok(self.u32()? as usize)).collect()
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        let shape = self.extents()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::format("tensor extent overflow"))?;
        let data = self.f64s(n)?;
        Tensor::new(&shape, data).map_err(|e| Error::format(format!("{}: {e}", self.what)))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(format!("{}: invalid utf-8 string", self.what)))
    }

    pub fn switches(&mut self) -> Result<SwitchMask> {
        let shape = self.extents()?;
        let shape: [usize; 3] = shape
            .try_into()
            .map_err(|_| Error::format("switch mask must be rank 3"))?;
        let n = shape.iter().product();
        let flags = self.take(n)?.iter().map(|&b| b != 0).collect();
        SwitchMask::new(shape, flags).map_err(|e| Error::format(format!("{}: {e}", self.what)))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn sha256(bytes: &[u8]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
