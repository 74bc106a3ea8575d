use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::labels::LabelMatrix;
use super::MultiModalDataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassGroup {
    pub num_classes: usize,
    pub samples_per_class: usize,
}

/// Shape of a synthetic long-tailed paired dataset.
///
/// `groups` fix the per-class training counts. Each class additionally gets
/// `holdout_per_class` samples that never enter training; queries and the
/// retrieval database are drawn from those.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTailSpec {
    pub groups: Vec<ClassGroup>,
    pub dim_x: usize,
    pub dim_y: usize,
    pub latent_dim: usize,
    pub holdout_per_class: usize,
    /// Per-sample latent jitter around the class center, shared by both modalities.
    pub intra_class_spread: f64,
    pub noise_x: f64,
    pub noise_y: f64,
    /// Probability that a sample is paired with a second class.
    pub multi_label_fraction: f64,
}

impl LongTailSpec {
    pub fn from_groups(groups: &[(usize, usize)]) -> Self {
        Self {
            groups: groups
                .iter()
                .map(|&(num_classes, samples_per_class)| ClassGroup {
                    num_classes,
                    samples_per_class,
                })
                .collect(),
            dim_x: 64,
            dim_y: 48,
            latent_dim: 16,
            holdout_per_class: 0,
            intra_class_spread: 0.6,
            noise_x: 1.0,
            noise_y: 1.0,
            multi_label_fraction: 0.0,
        }
    }

    /// 4 head classes × 2000, 10 × 200, 10 × 50.
    pub fn flickr() -> Self {
        Self::from_groups(&[(4, 2000), (10, 200), (10, 50)])
    }

    /// 9 head classes × 1000, 35 × 100, 35 × 25.
    pub fn nus_wide() -> Self {
        Self::from_groups(&[(9, 1000), (35, 100), (35, 25)])
    }

    /// Same class groups with every per-class count divided by `divisor`
    /// (rounded up, at least 1).
    pub fn scaled(&self, divisor: usize) -> Self {
        let mut out = self.clone();
        for g in &mut out.groups {
            g.samples_per_class = g.samples_per_class.div_ceil(divisor.max(1)).max(1);
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.groups.iter().map(|g| g.num_classes).sum()
    }

    /// Training count of every class, in class-index order.
    pub fn train_counts(&self) -> Vec<usize> {
        self.groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.samples_per_class, g.num_classes))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::config("long-tail spec has no class groups"));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if g.num_classes == 0 || g.samples_per_class == 0 {
                return Err(Error::config(format!("class group {i} has a zero count")));
            }
        }
        if self
            .groups
            .windows(2)
            .any(|w| w[0].samples_per_class < w[1].samples_per_class)
        {
            return Err(Error::config(
                "class groups must be sorted by descending samples_per_class",
            ));
        }
        if self.dim_x == 0 || self.dim_y == 0 || self.latent_dim == 0 {
            return Err(Error::config("feature and latent dimensions must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.multi_label_fraction) {
            return Err(Error::config("multi_label_fraction must lie in [0, 1]"));
        }
        if self.noise_x < 0.0 || self.noise_y < 0.0 || self.intra_class_spread < 0.0 {
            return Err(Error::config("noise levels must be non-negative"));
        }
        Ok(())
    }
}

/// Generates a paired dataset whose modalities share class structure: every
/// class has a latent center, and each sample's image and text vectors are
/// fixed random linear maps of a common latent plus independent noise.
///
/// Label occurrence counts match the spec exactly (training count plus
/// holdout per class). A multi-label sample consumes one slot from each of
/// two classes, so the sample count is the slot total minus the number of
/// multi-label samples.
pub fn synthesize_long_tailed(spec: &LongTailSpec, seed: u64) -> Result<MultiModalDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = spec.num_classes();
    let latent = spec.latent_dim;

    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..latent).map(|_| gauss(&mut rng)).collect())
        .collect();
    let proj_scale = 1.0 / (latent as f64).sqrt();
    let map_x = Matrix::from_fn(spec.dim_x, latent, |_, _| gauss(&mut rng) * proj_scale);
    let map_y = Matrix::from_fn(spec.dim_y, latent, |_, _| gauss(&mut rng) * proj_scale);

    let mut slots: Vec<usize> = spec
        .train_counts()
        .into_iter()
        .enumerate()
        .flat_map(|(k, c)| std::iter::repeat_n(k, c + spec.holdout_per_class))
        .collect();
    slots.shuffle(&mut rng);

    let mut used = vec![false; slots.len()];
    let mut sample_classes: Vec<Vec<usize>> = Vec::with_capacity(slots.len());
    for i in 0..slots.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let mut classes = vec![slots[i]];
        if spec.multi_label_fraction > 0.0 && rng.random_bool(spec.multi_label_fraction) {
            if let Some(j) = (i + 1..slots.len()).find(|&j| !used[j] && slots[j] != slots[i]) {
                used[j] = true;
                classes.push(slots[j]);
            }
        }
        classes.sort_unstable();
        sample_classes.push(classes);
    }

    let n = sample_classes.len();
    let mut x = Matrix::zeros(n, spec.dim_x);
    let mut y = Matrix::zeros(n, spec.dim_y);
    let mut z = vec![0.0; latent];
    for (s, classes) in sample_classes.iter().enumerate() {
        z.iter_mut().for_each(|v| *v = 0.0);
        for &k in classes {
            for (zv, cv) in z.iter_mut().zip(&centers[k]) {
                *zv += cv / classes.len() as f64;
            }
        }
        for zv in z.iter_mut() {
            *zv += spec.intra_class_spread * gauss(&mut rng);
        }
        project(&map_x, &z, spec.noise_x, x.row_mut(s), &mut rng);
        project(&map_y, &z, spec.noise_y, y.row_mut(s), &mut rng);
    }

    let labels = LabelMatrix::from_rows(&sample_classes, num_classes)?;
    let class_names = (0..num_classes).map(|k| format!("class{k:02}")).collect();
    MultiModalDataset::new(x, y, labels, Some(class_names))
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn project<R: Rng + ?Sized>(map: &Matrix, z: &[f64], noise: f64, out: &mut [f64], rng: &mut R) {
    for (r, o) in out.iter_mut().enumerate() {
        let clean: f64 = map.row(r).iter().zip(z).map(|(a, b)| a * b).sum();
        *o = clean + noise * gauss(rng);
    }
}
