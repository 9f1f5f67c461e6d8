use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{augment, load_image, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 0x5348;
const AUGMENT_STREAM: u64 = 0x4147;

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[n, s, s, 3]` images in [0, 1].
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Positions of the batch members in the sample list.
    pub indices: Vec<usize>,
}

/// Loads samples in batches of `batch_size`; the last batch may be short.
///
/// In training mode the order is shuffled per epoch and every sample draws
/// its augmentation from a stream keyed by (seed, epoch, sample position),
/// so results do not depend on thread count.
pub struct BatchIterator<'a> {
    root: PathBuf,
    samples: &'a [Sample],
    image_size: usize,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    augment: Option<(AugmentConfig, u64, u64)>,
}

impl<'a> BatchIterator<'a> {
    /// Samples in their stored order, without augmentation.
    pub fn sequential(root: &Path, samples: &'a [Sample], image_size: usize, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Data("cannot batch an empty sample list".into()));
        }
        Ok(BatchIterator {
            root: root.to_path_buf(),
            samples,
            image_size,
            batch_size,
            order: (0..samples.len()).collect(),
            cursor: 0,
            augment: None,
        })
    }

    /// Seeded per-epoch shuffle with optional augmentation.
    pub fn training(
        root: &Path,
        samples: &'a [Sample],
        image_size: usize,
        batch_size: usize,
        seed: u64,
        epoch: u64,
        augment: Option<&AugmentConfig>,
    ) -> Result<Self> {
        let mut it = Self::sequential(root, samples, image_size, batch_size)?;
        it.order.shuffle(&mut stream(seed, &[SHUFFLE_STREAM, epoch]));
        it.augment = augment.map(|cfg| (cfg.clone(), seed, epoch));
        Ok(it)
    }

    pub fn batch_count(&self) -> usize {
        self.samples.len().div_ceil(self.batch_size)
    }

    fn load(&self, index: usize) -> Result<Tensor<f32>> {
        let img = load_image(&self.root.join(&self.samples[index].path), self.image_size)?;
        Ok(match &self.augment {
            Some((cfg, seed, epoch)) => augment(&img, cfg, &mut stream(*seed, &[AUGMENT_STREAM, *epoch, index as u64])),
            None => img,
        })
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let images: Result<Vec<Tensor<f32>>> = indices.par_iter().map(|&i| self.load(i)).collect();
        Some(images.and_then(|images| {
            Ok(Batch {
                images: Tensor::stack(&images)?,
                labels: indices.iter().map(|&i| self.samples[i].label).collect(),
                indices,
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::hash_map::DefaultHasher;
    use std::hash::{Hash, Hasher};

    fn tree(n: usize) -> (tempfile::TempDir, Vec<Sample>) {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = Vec::new();
        for i in 0..n {
            let rel = PathBuf::from(format!("{i:03}.png"));
            image::RgbImage::from_fn(8, 8, |x, y| image::Rgb([(i * 9) as u8, (x * 30) as u8, (y * 30) as u8]))
                .save(dir.path().join(&rel))
                .unwrap();
            samples.push(Sample { path: rel, label: i % 3 });
        }
        (dir, samples)
    }

    fn hash(t: &Tensor<f32>) -> u64 {
        let mut h = DefaultHasher::new();
        for v in t.data() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    #[test]
    fn batch_sizes_cover_every_sample_once() {
        let (dir, samples) = tree(176);
        let it = BatchIterator::training(dir.path(), &samples, 4, 32, 1, 0, None).unwrap();
        assert_eq!(it.batch_count(), 6);
        let batches: Vec<Batch> = it.map(Result::unwrap).collect();
        let sizes: Vec<usize> = batches.iter().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, [32, 32, 32, 32, 32, 16]);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..176).collect::<Vec<_>>());
        assert_eq!(batches[0].images.shape(), &[32, 4, 4, 3]);
    }

    #[test]
    fn shuffle_and_augmentation_are_seeded() {
        let (dir, samples) = tree(12);
        let aug = AugmentConfig::default();
        let run = |seed, epoch| -> Vec<u64> {
            BatchIterator::training(dir.path(), &samples, 8, 5, seed, epoch, Some(&aug))
                .unwrap()
                .flat_map(|b| {
                    let b = b.unwrap();
                    (0..b.labels.len()).map(move |i| hash(&b.images.sample(i))).collect::<Vec<_>>()
                })
                .collect()
        };
        assert_eq!(run(4, 0), run(4, 0));
        assert_ne!(run(4, 0), run(4, 1));
        assert_ne!(run(4, 0), run(5, 0));
    }

    #[test]
    fn sequential_loading_leaves_images_untouched() {
        let (dir, samples) = tree(7);
        for b in BatchIterator::sequential(dir.path(), &samples, 8, 3).unwrap() {
            let b = b.unwrap();
            for (k, &i) in b.indices.iter().enumerate() {
                let direct = load_image(&dir.path().join(&samples[i].path), 8).unwrap();
                let mut shape = vec![1];
                shape.extend_from_slice(direct.shape());
                assert_eq!(hash(&b.images.sample(k)), hash(&direct.reshape(&shape).unwrap()));
            }
        }
    }

    #[test]
    fn zero_batch_size_and_empty_part_are_rejected() {
        let one = [Sample { path: "x.png".into(), label: 0 }];
        assert!(matches!(BatchIterator::sequential(Path::new("."), &one, 8, 0), Err(Error::Config(_))));
        assert!(matches!(BatchIterator::sequential(Path::new("."), &[], 8, 4), Err(Error::Data(_))));
    }

    #[test]
    fn epochs_reorder_the_same_sample_set() {
        let (dir, samples) = tree(20);
        let order = |epoch| -> Vec<usize> {
            BatchIterator::training(dir.path(), &samples, 4, 6, 2, epoch, None)
                .unwrap()
                .flat_map(|b| b.unwrap().indices)
                .collect()
        };
        let (a, b) = (order(0), order(1));
        assert_ne!(a, b);
        let (mut sa, mut sb) = (a.clone(), b);
        sa.sort();
        sb.sort();
        assert_eq!(sa, sb);
        assert_eq!(a, order(0));
    }
}
