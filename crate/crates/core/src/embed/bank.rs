use std::io::{Read, Write};

use crate::binio::{Reader, Writer};
use crate::dataset::{HeadTailPartition, LabelMatrix};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Per-class centroids of direct features.
///
/// A multi-label sample contributes to every class it carries. Classes with
/// no samples keep a zero centroid and are skipped by the memory and η
/// computations.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    /// `L × c`, row `k` is the centroid of class `k`.
    pub centroids: Matrix,
    pub counts: Vec<usize>,
    pub is_head: Vec<bool>,
}

impl PrototypeBank {
    pub fn num_classes(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    #[inline]
    pub fn is_active(&self, class: usize) -> bool {
        self.counts[class] > 0
    }

    pub fn active_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_classes()).filter(|&k| self.is_active(k))
    }

    pub fn centroid(&self, class: usize) -> &[f64] {
        self.centroids.row(class)
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut Writer<W>) -> std::io::Result<()> {
        w.u64(self.num_classes() as u64)?;
        w.u64(self.dim() as u64)?;
        w.f64s(self.centroids.as_slice())?;
        for &c in &self.counts {
            w.u64(c as u64)?;
        }
        for &h in &self.is_head {
            w.u8(h as u8)?;
        }
        Ok(())
    }

    pub(crate) fn read_from<R: Read>(r: &mut Reader<R>) -> Result<Self> {
        let l = r.count("bank classes", 1 << 24)?;
        let c = r.count("bank dim", 1 << 24)?;
        let centroids = Matrix::from_vec(l, c, r.f64s(l * c)?)?;
        let mut counts = Vec::with_capacity(l);
        for _ in 0..l {
            counts.push(r.count("class count", u64::MAX >> 1)?);
        }
        let mut is_head = Vec::with_capacity(l);
        for _ in 0..l {
            let at = r.offset();
            is_head.push(match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(Error::format(at, format!("bad head flag {b}"))),
            });
        }
        Ok(Self {
            centroids,
            counts,
            is_head,
        })
    }
}

/// `C_k = (1/K) Σ v_j` over the `K` samples (rows of `direct`) labelled `k`.
pub fn compute_prototypes(
    direct: &Matrix,
    labels: &LabelMatrix,
    partition: &HeadTailPartition,
) -> Result<PrototypeBank> {
    if direct.rows() != labels.rows() {
        return Err(Error::shape(
            "compute_prototypes",
            direct.shape(),
            (labels.rows(), labels.num_classes()),
        ));
    }
    if partition.num_classes() != labels.num_classes() {
        return Err(Error::config(format!(
            "partition covers {} classes, labels have {}",
            partition.num_classes(),
            labels.num_classes()
        )));
    }
    let l = labels.num_classes();
    let mut sums = Matrix::zeros(l, direct.cols());
    let mut counts = vec![0usize; l];
    for i in 0..direct.rows() {
        for k in labels.row_labels(i) {
            counts[k] += 1;
            for (s, v) in sums.row_mut(k).iter_mut().zip(direct.row(i)) {
                *s += v;
            }
        }
    }
    for (k, &count) in counts.iter().enumerate() {
        if count > 0 {
            let inv = 1.0 / count as f64;
            sums.row_mut(k).iter_mut().for_each(|v| *v *= inv);
        }
    }
    Ok(PrototypeBank {
        centroids: sums,
        counts,
        is_head: partition.is_head.clone(),
    })
}
