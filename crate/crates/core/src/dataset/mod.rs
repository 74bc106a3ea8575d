//! Paired image/text datasets with multi-hot labels, long-tailed synthesis,
//! affinity construction and train/query/retrieval splitting.

mod io;
mod labels;
mod split;
mod synth;

pub use io::{import_csv, load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use labels::{build_affinity, trim_labels, AffinityMatrix, LabelMatrix};
pub use split::{split_head_tail, split_query_retrieval, DataSplit, HeadTailPartition, SplitConfig};
pub use synth::{synthesize_long_tailed, ClassGroup, LongTailSpec};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Paired modality matrices (`n × d_x` images, `n × d_y` texts) sharing one
/// label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalDataset {
    pub x: Matrix,
    pub y: Matrix,
    pub labels: LabelMatrix,
    pub class_names: Option<Vec<String>>,
}

impl MultiModalDataset {
    pub fn new(x: Matrix, y: Matrix, labels: LabelMatrix, class_names: Option<Vec<String>>) -> Result<Self> {
        if x.rows() != y.rows() || x.rows() != labels.rows() {
            return Err(Error::config(format!(
                "row counts differ: images {}, texts {}, labels {}",
                x.rows(),
                y.rows(),
                labels.rows()
            )));
        }
        if let Some(i) = (0..labels.rows()).find(|&i| labels.row_count(i) == 0) {
            return Err(Error::config(format!("sample {i} has no label")));
        }
        if let Some(names) = &class_names {
            if names.len() != labels.num_classes() {
                return Err(Error::config(format!(
                    "{} class names for {} classes",
                    names.len(),
                    labels.num_classes()
                )));
            }
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::config("features contain NaN or infinite values"));
        }
        Ok(Self {
            x,
            y,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim_x(&self) -> usize {
        self.x.cols()
    }

    pub fn dim_y(&self) -> usize {
        self.y.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    pub fn subset(&self, idx: &[usize]) -> MultiModalDataset {
        MultiModalDataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            labels: self.labels.select_rows(idx),
            class_names: self.class_names.clone(),
        }
    }
}
