//! Dataset file format (all integers and floats little-endian):
//!
//! ```text
//! "LCMD"  u32 version=1
//! u64 n   u64 d_x   u64 d_y   u64 L
//! f64 × n·d_x   image features, row-major
//! f64 × n·d_y   text features, row-major
//! ⌈n·L/8⌉ bytes labels, bit (i·L + l) at byte (i·L + l)/8, bit (i·L + l)%8
//! optional trailer: 'N', u64 count, then count × (u64 len, UTF-8 bytes)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::labels::LabelMatrix;
use super::MultiModalDataset;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DATASET_MAGIC: &[u8; 4] = b"LCMD";
pub const DATASET_VERSION: u32 = 1;
const NAMES_MARKER: u8 = b'N';
const DIM_LIMIT: u64 = 1 << 32;

pub fn write_dataset<W: Write>(ds: &MultiModalDataset, out: W) -> Result<W> {
    let mut w = Writer::new(out);
    w.bytes(DATASET_MAGIC)?;
    w.u32(DATASET_VERSION)?;
    let n = ds.len();
    let l = ds.num_classes();
    w.u64(n as u64)?;
    w.u64(ds.dim_x() as u64)?;
    w.u64(ds.dim_y() as u64)?;
    w.u64(l as u64)?;
    w.f64s(ds.x.as_slice())?;
    w.f64s(ds.y.as_slice())?;
    let mut packed = vec![0u8; (n * l).div_ceil(8)];
    for i in 0..n {
        for c in 0..l {
            if ds.labels.get(i, c) {
                let bit = i * l + c;
                packed[bit / 8] |= 1 << (bit % 8);
            }
        }
    }
    w.bytes(&packed)?;
    if let Some(names) = &ds.class_names {
        w.u8(NAMES_MARKER)?;
        w.u64(names.len() as u64)?;
        for name in names {
            w.u64(name.len() as u64)?;
            w.bytes(name.as_bytes())?;
        }
    }
    Ok(w.finish()?)
}

pub fn read_dataset<R: Read>(input: R) -> Result<MultiModalDataset> {
    let mut r = Reader::new(input);
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let n = r.count("n", DIM_LIMIT)?;
    let dx = r.count("d_x", DIM_LIMIT)?;
    let dy = r.count("d_y", DIM_LIMIT)?;
    let l = r.count("L", DIM_LIMIT)?;
    let x = Matrix::from_vec(n, dx, r.f64s(n * dx)?)?;
    let y = Matrix::from_vec(n, dy, r.f64s(n * dy)?)?;
    let labels_at = r.offset();
    let mut packed = vec![0u8; (n * l).div_ceil(8)];
    r.exact(&mut packed)?;
    let mut labels = LabelMatrix::new(n, l);
    for i in 0..n {
        for c in 0..l {
            let bit = i * l + c;
            if packed[bit / 8] >> (bit % 8) & 1 == 1 {
                labels.set(i, c, true);
            }
        }
    }
    let class_names = match r.try_u8()? {
        None => None,
        Some(NAMES_MARKER) => {
            let count = r.count("class name count", DIM_LIMIT)?;
            if count != l {
                return r.fail(format!("{count} class names for {l} classes"));
            }
            let mut names = Vec::with_capacity(count);
            for _ in 0..count {
                let len = r.count("class name length", 1 << 16)?;
                let mut buf = vec![0u8; len];
                r.exact(&mut buf)?;
                match String::from_utf8(buf) {
                    Ok(s) => names.push(s),
                    Err(_) => return r.fail("class name is not valid UTF-8"),
                }
            }
            if r.try_u8()?.is_some() {
                return r.fail("trailing bytes after class names");
            }
            Some(names)
        }
        Some(b) => return r.fail(format!("unexpected trailer byte {b:#04x}")),
    };
    MultiModalDataset::new(x, y, labels, class_names).map_err(|e| Error::format(labels_at, e.to_string()))
}

pub fn save_dataset(ds: &MultiModalDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_dataset(ds, BufWriter::new(file))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<MultiModalDataset> {
    let file = File::open(path)?;
    read_dataset(BufReader::new(file))
}

/// Imports comma-separated feature files (one sample per line, no header)
/// and a label file with semicolon-separated class indices per line.
/// `num_classes` defaults to the largest index seen plus one.
pub fn import_csv(
    image_csv: impl AsRef<Path>,
    text_csv: impl AsRef<Path>,
    labels_file: impl AsRef<Path>,
    num_classes: Option<usize>,
) -> Result<MultiModalDataset> {
    let x = read_feature_csv(image_csv.as_ref())?;
    let y = read_feature_csv(text_csv.as_ref())?;
    let text = std::fs::read_to_string(labels_file)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(';')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::config(format!("label line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    let l = num_classes.unwrap_or_else(|| rows.iter().flatten().max().map_or(0, |m| m + 1));
    let labels = LabelMatrix::from_rows(&rows, l)?;
    MultiModalDataset::new(x, y, labels, None)
}

fn read_feature_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::config(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::config(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_long_tailed, LongTailSpec};

    fn sample() -> MultiModalDataset {
        let mut spec = LongTailSpec::from_groups(&[(2, 4), (3, 2)]);
        spec.dim_x = 3;
        spec.dim_y = 2;
        spec.multi_label_fraction = 0.5;
        synthesize_long_tailed(&spec, 9).unwrap()
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let bytes = write_dataset(&ds, Vec::new()).unwrap();
        assert_eq!(read_dataset(bytes.as_slice()).unwrap(), ds);
        let mut unnamed = ds.clone();
        unnamed.class_names = None;
        let bytes = write_dataset(&unnamed, Vec::new()).unwrap();
        assert_eq!(read_dataset(bytes.as_slice()).unwrap(), unnamed);
    }

    #[test]
    fn truncation_and_bad_magic() {
        let bytes = write_dataset(&sample(), Vec::new()).unwrap();
        for cut in [3, 10, 40, 100] {
            assert!(matches!(read_dataset(&bytes[..cut]), Err(Error::Format { .. })));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(bad.as_slice()), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(read_dataset(bad.as_slice()), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn hand_built_file() {
        // n=2, d_x=1, d_y=2, L=3; sample 0 has labels {0,2}, sample 1 has {1}
        let mut b = Vec::new();
        b.extend_from_slice(b"LCMD");
        b.extend_from_slice(&1u32.to_le_bytes());
        for v in [2u64, 1, 2, 3] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in [1.5f64, -2.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in [0.25f64, 0.5, 0.75, 1.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        // bits: 0 (s0,l0), 2 (s0,l2), 4 (s1,l1)
        b.push(0b0001_0101);
        let ds = read_dataset(b.as_slice()).unwrap();
        assert_eq!(ds.x, Matrix::from_rows(&[vec![1.5], vec![-2.0]]).unwrap());
        assert_eq!(ds.y, Matrix::from_rows(&[vec![0.25, 0.5], vec![0.75, 1.0]]).unwrap());
        assert_eq!(ds.labels.row_labels(0), vec![0, 2]);
        assert_eq!(ds.labels.row_labels(1), vec![1]);
        assert!(ds.class_names.is_none());
        assert_eq!(write_dataset(&ds, Vec::new()).unwrap(), b);
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let xp = dir.path().join("x.csv");
        let yp = dir.path().join("y.csv");
        let lp = dir.path().join("labels.txt");
        std::fs::write(&xp, "1.0,2.0\n3.0, 4.0\n").unwrap();
        std::fs::write(&yp, "0.5\n-0.5\n").unwrap();
        std::fs::write(&lp, "0;2\n1\n").unwrap();
        let ds = import_csv(&xp, &yp, &lp, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.x[(1, 1)], 4.0);
        assert_eq!(ds.labels.row_labels(0), vec![0, 2]);
        std::fs::write(&lp, "0;x\n1\n").unwrap();
        assert!(import_csv(&xp, &yp, &lp, None).is_err());
    }
}
