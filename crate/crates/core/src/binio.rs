//! Little-endian primitives shared by the binary file formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.inner.write_all(&[v])
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> io::Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Reader that tracks its byte offset so truncation and corruption can be
/// reported precisely.
pub(crate) struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::format(self.offset, msg))
    }

    pub fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(Error::format(self.offset, "unexpected end of file"))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut buf = [0u8; 4];
        self.exact(&mut buf)?;
        if &buf != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&buf),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub fn version(&mut self, supported: u32) -> Result<u32> {
        let at = self.offset;
        let v = self.u32()?;
        if v != supported {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        Ok(v)
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Reads a u64 that will be used as an in-memory count, rejecting
    /// values that cannot plausibly be allocated.
    pub fn count(&mut self, what: &str, limit: u64) -> Result<usize> {
        let at = self.offset;
        let v = self.u64()?;
        if v > limit {
            return Err(Error::format(at, format!("{what} = {v} exceeds limit {limit}")));
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    /// Reads one byte, or `None` at a clean end of stream.
    pub fn try_u8(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(None),
                Ok(_) => {
                    self.offset += 1;
                    return Ok(Some(b[0]));
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
}
