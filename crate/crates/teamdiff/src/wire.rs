//! Little-endian framing helpers shared by the dataset and checkpoint
//! file formats: length-prefixed records with FNV-1a checksums.

use crate::error::{Error, Result};
use crate::rng::fnv1a64;
use std::io::{Read, Write};

pub struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Writer { inner }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u128(&mut self, v: u128) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn string(&mut self, s: &str) -> Result<()> {
        let b = s.as_bytes();
        self.u32(b.len() as u32)?;
        self.bytes(b)
    }

    /// Writes a length-prefixed record followed by its checksum.
    pub fn record(&mut self, payload: &[u8]) -> Result<()> {
        self.u64(payload.len() as u64)?;
        self.bytes(payload)?;
        self.u64(fnv1a64(payload))
    }
}

pub struct Reader<R: Read> {
    inner: R,
    what: &'static str,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        Reader { inner, what }
    }

    fn corrupt(&self) -> Error {
        Error::data(format!("corrupt {}", self.what))
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| self.corrupt())?;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.bytes(16)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 1 << 20 {
            return Err(self.corrupt());
        }
        String::from_utf8(self.bytes(n)?).map_err(|_| self.corrupt())
    }

    /// Reads a length-prefixed record and verifies its checksum.
    pub fn record(&mut self) -> Result<Vec<u8>> {
        let len = self.u64()? as usize;
        if len > 1 << 32 {
            return Err(self.corrupt());
        }
        let payload = self.bytes(len)?;
        let want = self.u64()?;
        if fnv1a64(&payload) != want {
            return Err(self.corrupt());
        }
        Ok(payload)
    }

    /// Succeeds only if the stream is exhausted.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut buf = [0u8; 1];
        match self.inner.read(&mut buf) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::data(format!("trailing bytes after {}", self.what))),
            Err(_) => Err(self.corrupt()),
        }
    }
}
