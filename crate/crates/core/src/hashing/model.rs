//! Model file format (little-endian):
//!
//! ```text
//! "LCMH"  u32 version=1
//! u64 code_length   f64 alpha   f64 beta   u64 head_threshold
//! image embedder, image prototype bank
//! text embedder, text prototype bank
//! u64 n   u64 c   n × ⌈c/64⌉ u64 words   training codes B, one row per sample
//! ```
//!
//! An embedder is its config (u8 η mode, f64 η_max, u8 weight norm, u8
//! memory flag) followed by its networks. A network is a u32 layer count,
//! then per layer `u64 in, u64 out, u8 activation`, then per layer the
//! row-major weights followed by the bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::objective::SignMatrix;
use crate::binio::{Reader, Writer};
use crate::dataset::{split_head_tail, HeadTailPartition};
use crate::embed::{MetaEmbedder, PrototypeBank};
use crate::error::{Error, Result};
use crate::retrieval::{binarize, BinaryCodeMatrix};
use crate::tensor::Matrix;

pub const MODEL_MAGIC: &[u8; 4] = b"LCMH";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "image" | "x" => Ok(Modality::Image),
            "text" | "y" => Ok(Modality::Text),
            _ => Err(Error::config(format!("unknown modality {s:?} (expected image or text)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    pub embedder_x: MetaEmbedder,
    pub embedder_y: MetaEmbedder,
    pub bank_x: PrototypeBank,
    pub bank_y: PrototypeBank,
    /// Training codes, `c × n_train`.
    pub codes: SignMatrix,
    pub alpha: f64,
    pub beta: f64,
    pub head_threshold: usize,
}

impl HashModel {
    pub fn code_length(&self) -> usize {
        self.embedder_x.code_length()
    }

    pub fn embedder(&self, m: Modality) -> &MetaEmbedder {
        match m {
            Modality::Image => &self.embedder_x,
            Modality::Text => &self.embedder_y,
        }
    }

    pub fn bank(&self, m: Modality) -> &PrototypeBank {
        match m {
            Modality::Image => &self.bank_x,
            Modality::Text => &self.bank_y,
        }
    }

    /// Head/tail partition from the training class counts stored with the
    /// prototype banks.
    pub fn partition(&self) -> HeadTailPartition {
        split_head_tail(&self.bank_x.counts, self.head_threshold.max(1)).expect("threshold >= 1")
    }

    /// Meta features (`c × n`) for `features` (`n × d`).
    pub fn features(&self, m: Modality, features: &Matrix) -> Result<Matrix> {
        Ok(self.embedder(m).embed_batch(features, self.bank(m))?.0)
    }

    pub fn encode(&self, m: Modality, features: &Matrix) -> Result<BinaryCodeMatrix> {
        binarize(&self.features(m, features)?)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<W> {
        let mut w = Writer::new(out);
        w.bytes(MODEL_MAGIC)?;
        w.u32(MODEL_VERSION)?;
        w.u64(self.code_length() as u64)?;
        w.f64(self.alpha)?;
        w.f64(self.beta)?;
        w.u64(self.head_threshold as u64)?;
        self.embedder_x.write_to(&mut w)?;
        self.bank_x.write_to(&mut w)?;
        self.embedder_y.write_to(&mut w)?;
        self.bank_y.write_to(&mut w)?;
        let (c, n) = self.codes.shape();
        w.u64(n as u64)?;
        w.u64(c as u64)?;
        let words = c.div_ceil(64);
        for j in 0..n {
            for wi in 0..words {
                let mut word = 0u64;
                for b in wi * 64..c.min(wi * 64 + 64) {
                    if self.codes.get(b, j) > 0 {
                        word |= 1 << (b - wi * 64);
                    }
                }
                w.u64(word)?;
            }
        }
        Ok(w.finish()?)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input);
        r.magic(MODEL_MAGIC)?;
        r.version(MODEL_VERSION)?;
        let code_length = r.count("code length", 1 << 20)?;
        let alpha = r.f64()?;
        let beta = r.f64()?;
        let head_threshold = r.count("head threshold", u64::MAX >> 1)?;
        let embedder_x = MetaEmbedder::read_from(&mut r)?;
        let bank_x = PrototypeBank::read_from(&mut r)?;
        let embedder_y = MetaEmbedder::read_from(&mut r)?;
        let bank_y = PrototypeBank::read_from(&mut r)?;
        let n = r.count("training samples", 1 << 40)?;
        let c = r.count("code length", 1 << 20)?;
        let words = c.div_ceil(64);
        let mut packed = Vec::with_capacity(n * words);
        for _ in 0..n * words {
            packed.push(r.u64()?);
        }
        if r.try_u8()?.is_some() {
            return r.fail("trailing bytes after model");
        }
        let codes = SignMatrix::from_fn(c, n, |b, j| packed[j * words + b / 64] >> (b % 64) & 1 == 1);
        let model = Self {
            embedder_x,
            embedder_y,
            bank_x,
            bank_y,
            codes,
            alpha,
            beta,
            head_threshold,
        };
        model.check(code_length).map_err(|e| Error::format(r.offset(), e.to_string()))?;
        Ok(model)
    }

    fn check(&self, code_length: usize) -> Result<()> {
        let consistent = self.embedder_x.code_length() == code_length
            && self.embedder_y.code_length() == code_length
            && self.codes.rows() == code_length
            && self.bank_x.dim() == code_length
            && self.bank_y.dim() == code_length
            && self.bank_x.num_classes() == self.embedder_x.num_classes()
            && self.bank_y.num_classes() == self.embedder_y.num_classes();
        if consistent {
            Ok(())
        } else {
            Err(Error::config("model components disagree on code length or class count"))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DataSplit, LabelMatrix, MultiModalDataset};
    use crate::hashing::{train, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model() -> (HashModel, MultiModalDataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 15;
        let x = Matrix::random_uniform(n, 5, 1.0, &mut rng);
        let y = Matrix::random_uniform(n, 4, 1.0, &mut rng);
        let rows: Vec<Vec<usize>> = (0..n).map(|i| vec![if i < 10 { 0 } else { 1 + rng.random_range(0..2) }]).collect();
        let ds = MultiModalDataset::new(x, y, LabelMatrix::from_rows(&rows, 3).unwrap(), None).unwrap();
        let split = DataSplit {
            train: (0..n).collect(),
            query: Vec::new(),
            retrieval: Vec::new(),
        };
        let cfg = TrainConfig {
            epochs: 2,
            code_length: 70,
            hidden: vec![6],
            head_threshold: 5,
            batch_columns: 4,
            ..TrainConfig::default()
        };
        (train(&ds, &split, &cfg).unwrap().0, ds)
    }

    #[test]
    fn round_trip() {
        let (model, ds) = small_model();
        let bytes = model.write(Vec::new()).unwrap();
        assert_eq!(&bytes[..4], MODEL_MAGIC);
        let back = HashModel::read(&bytes[..]).unwrap();
        assert_eq!(back, model);
        assert_eq!(
            back.encode(Modality::Text, &ds.y).unwrap(),
            model.encode(Modality::Text, &ds.y).unwrap()
        );
        assert_eq!(model.encode(Modality::Image, &ds.x).unwrap().code_length(), 70);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (model, _) = small_model();
        let bytes = model.write(Vec::new()).unwrap();
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(HashModel::read(&bad[..]), Err(Error::Format { .. })));
        assert!(HashModel::read(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(HashModel::read(&long[..]).is_err());
    }

    #[test]
    fn wrong_input_width() {
        let (model, ds) = small_model();
        assert!(model.encode(Modality::Image, &ds.y).is_err());
    }

    #[test]
    fn modality_names() {
        assert_eq!(Modality::parse("x").unwrap(), Modality::Image);
        assert_eq!(Modality::parse(Modality::Text.name()).unwrap(), Modality::Text);
        assert!(Modality::parse("audio").is_err());
    }
}
