use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::LabelMatrix;
use crate::error::{Error, Result};

/// Head/tail flag per class, derived from training counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadTailPartition {
    pub threshold: usize,
    pub counts: Vec<usize>,
    pub is_head: Vec<bool>,
}

impl HeadTailPartition {
    pub fn num_classes(&self) -> usize {
        self.is_head.len()
    }

    pub fn is_head(&self, class: usize) -> bool {
        self.is_head[class]
    }

    pub fn head_classes(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&k| self.is_head[k]).collect()
    }

    pub fn tail_classes(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&k| !self.is_head[k]).collect()
    }
}

/// A class is head iff its training count reaches `threshold`.
pub fn split_head_tail(class_counts: &[usize], threshold: usize) -> Result<HeadTailPartition> {
    if threshold == 0 {
        return Err(Error::config("head threshold must be >= 1"));
    }
    Ok(HeadTailPartition {
        threshold,
        counts: class_counts.to_vec(),
        is_head: class_counts.iter().map(|&c| c >= threshold).collect(),
    })
}

/// Disjoint sample index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub query: Vec<usize>,
    pub retrieval: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    /// Target number of training samples carrying each class.
    pub train_per_class: Vec<usize>,
    pub queries_per_class: usize,
    /// Keep query samples in the retrieval database as well.
    pub retrieval_includes_queries: bool,
}

/// Draws a long-tailed training set, then `queries_per_class` queries per
/// class from the remaining pool. The retrieval set is everything outside
/// training (and outside the queries unless `retrieval_includes_queries`).
///
/// Training samples are picked rarest class first so multi-label samples
/// count toward the scarce classes before the abundant ones.
pub fn split_query_retrieval(labels: &LabelMatrix, cfg: &SplitConfig, seed: u64) -> Result<DataSplit> {
    let n = labels.rows();
    let classes = labels.num_classes();
    if cfg.train_per_class.len() != classes {
        return Err(Error::config(format!(
            "train_per_class has {} entries but the dataset has {classes} classes",
            cfg.train_per_class.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members: Vec<Vec<usize>> = (0..classes)
        .map(|k| (0..n).filter(|&i| labels.get(i, k)).collect())
        .collect();

    #[derive(Clone, Copy, PartialEq)]
    enum Role {
        Pool,
        Train,
        Query,
    }
    let mut role = vec![Role::Pool; n];

    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by_key(|&k| (cfg.train_per_class[k], k));
    let mut carried = vec![0usize; classes];
    for &k in &order {
        let mut candidates: Vec<usize> = members[k].iter().copied().filter(|&i| role[i] == Role::Pool).collect();
        candidates.shuffle(&mut rng);
        for i in candidates {
            if carried[k] >= cfg.train_per_class[k] {
                break;
            }
            role[i] = Role::Train;
            for l in labels.row_labels(i) {
                carried[l] += 1;
            }
        }
    }

    if cfg.queries_per_class > 0 {
        for (k, m) in members.iter().enumerate() {
            if m.iter().all(|&i| role[i] == Role::Train) {
                return Err(Error::config(format!(
                    "class {k} has no samples outside the training set to draw queries from"
                )));
            }
        }
        for m in &members {
            let mut candidates: Vec<usize> = m.iter().copied().filter(|&i| role[i] == Role::Pool).collect();
            candidates.shuffle(&mut rng);
            for &i in candidates.iter().take(cfg.queries_per_class) {
                role[i] = Role::Query;
            }
        }
    }

    let pick = |want: &dyn Fn(Role) -> bool| (0..n).filter(|&i| want(role[i])).collect::<Vec<_>>();
    Ok(DataSplit {
        train: pick(&|r| r == Role::Train),
        query: pick(&|r| r == Role::Query),
        retrieval: if cfg.retrieval_includes_queries {
            pick(&|r| r != Role::Train)
        } else {
            pick(&|r| r == Role::Pool)
        },
    })
}
