//! Bit-packed binary codes.
//!
//! File layout (little-endian): `"LCMB"`, u32 version=1, u64 n, u64 c, then
//! `n × ⌈c/64⌉` u64 words. Bit `b` of a row lives in word `b/64` at
//! position `b%64`; pad bits past `c` are zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const CODES_MAGIC: &[u8; 4] = b"LCMB";
pub const CODES_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodeMatrix {
    n: usize,
    bits: usize,
    words: usize,
    data: Vec<u64>,
}

impl BinaryCodeMatrix {
    pub fn zeros(n: usize, bits: usize) -> Self {
        let words = bits.div_ceil(64);
        Self {
            n,
            bits,
            words,
            data: vec![0; n * words],
        }
    }

    /// `f(i, b)` is the logical value (`true` = +1) of bit `b` of code `i`.
    pub fn from_fn(n: usize, bits: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(n, bits);
        for i in 0..n {
            for b in 0..bits {
                if f(i, b) {
                    m.data[i * m.words + b / 64] |= 1 << (b % 64);
                }
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn code_length(&self) -> usize {
        self.bits
    }

    pub fn words_per_row(&self) -> usize {
        self.words
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    pub fn bit(&self, i: usize, b: usize) -> bool {
        self.row(i)[b / 64] >> (b % 64) & 1 == 1
    }

    /// Code `i` as a ±1 vector.
    pub fn signs(&self, i: usize) -> Vec<i32> {
        (0..self.bits).map(|b| if self.bit(i, b) { 1 } else { -1 }).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.words);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n: idx.len(),
            bits: self.bits,
            words: self.words,
            data,
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<W> {
        let mut w = Writer::new(out);
        w.bytes(CODES_MAGIC)?;
        w.u32(CODES_VERSION)?;
        w.u64(self.n as u64)?;
        w.u64(self.bits as u64)?;
        for &word in &self.data {
            w.u64(word)?;
        }
        Ok(w.finish()?)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input);
        r.magic(CODES_MAGIC)?;
        r.version(CODES_VERSION)?;
        let n = r.count("n", 1 << 40)?;
        let bits = r.count("code length", 1 << 20)?;
        let mut m = Self::zeros(n, bits);
        let pad_mask = match bits % 64 {
            0 => 0,
            used => !0u64 << used,
        };
        for k in 0..m.data.len() {
            let at = r.offset();
            let word = r.u64()?;
            if k % m.words == m.words - 1 && word & pad_mask != 0 {
                return Err(Error::format(at, "non-zero pad bits"));
            }
            m.data[k] = word;
        }
        if r.try_u8()?.is_some() {
            return r.fail("trailing bytes after codes");
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))?.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

/// One code per column of `v` (`c × n`); bit set iff the entry is `>= 0`.
pub fn binarize(v: &Matrix) -> Result<BinaryCodeMatrix> {
    if !v.is_finite() {
        return Err(Error::Eval("cannot binarize non-finite features".into()));
    }
    Ok(BinaryCodeMatrix::from_fn(v.cols(), v.rows(), |i, b| v[(b, i)] >= 0.0))
}

/// Number of differing bits. Both rows must come from codes of equal length.
#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}
