//! Samples, datasets on disk, resizing and mini-batching.

pub mod augment;
pub mod netpbm;
pub mod synth;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, AugmentConfig, AugmentParams};
pub use synth::{synth_generate, Figure, ShapeKind, SynthSample, SynthSpec};

use crate::error::{Error, Result};
use crate::ops::resize_bilinear;
use crate::tensor::{Shape, Tensor};

/// An RGB image `(1,3,h,w)` in `[0,1]` and its binary mask `(1,1,h,w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl Sample {
    pub fn new(image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let (i, m) = (image.shape(), mask.shape());
        if i.n() != 1 || i.c() != 3 || m.n() != 1 || m.c() != 1 || i.h() != m.h() || i.w() != m.w() {
            return Err(Error::shape("sample", format!("image {i} and mask {m} do not pair up")));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("mask is not binary".into()));
        }
        Ok(Sample { image, mask })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.shape().h(), self.image.shape().w())
    }
}

/// Named samples in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Names follow the on-disk `NNNN` convention.
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        let names = (0..samples.len()).map(|i| format!("{i:04}")).collect();
        Dataset { names, samples }
    }

    pub fn synthetic(spec: &SynthSpec) -> Result<Self> {
        let samples = synth_generate(spec)?.into_iter().map(|s| s.sample).collect();
        Ok(Self::from_samples(samples))
    }

    /// Writes `images/<name>.ppm` and `masks/<name>.pgm` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let (img_dir, mask_dir) = (dir.join("images"), dir.join("masks"));
        for d in [&img_dir, &mask_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for (name, s) in self.names.iter().zip(&self.samples) {
            netpbm::save_tensor(&img_dir.join(format!("{name}.ppm")), &s.image)?;
            netpbm::save_tensor(&mask_dir.join(format!("{name}.pgm")), &s.mask)?;
        }
        Ok(())
    }

    /// Reads a directory written by [`Dataset::save`]. Every image needs a mask of the same stem.
    pub fn load(dir: &Path) -> Result<Self> {
        let images = list_stems(&dir.join("images"), "ppm")?;
        let masks = list_stems(&dir.join("masks"), "pgm")?;
        let unmatched: Vec<&String> = images
            .iter()
            .filter(|n| masks.binary_search(n).is_err())
            .chain(masks.iter().filter(|n| images.binary_search(n).is_err()))
            .collect();
        if !unmatched.is_empty() {
            return Err(Error::Data(format!("{}: unmatched image/mask files: {unmatched:?}", dir.display())));
        }
        if images.is_empty() {
            return Err(Error::Data(format!("{}: no samples found", dir.display())));
        }
        let mut samples = Vec::with_capacity(images.len());
        for name in &images {
            let image = netpbm::load_image(&dir.join("images").join(format!("{name}.ppm")))?;
            let mask = netpbm::load_mask(&dir.join("masks").join(format!("{name}.pgm")))?;
            samples.push(Sample::new(image, mask).map_err(|e| Error::Data(format!("{name}: {e}")))?);
        }
        Ok(Dataset { names: images, samples })
    }

    /// The dataset at `size×size`, resizing only samples of another size.
    pub fn resized_to(&self, size: usize) -> Result<Self> {
        if self.samples.iter().all(|s| s.size() == (size, size)) {
            Ok(self.clone())
        } else {
            self.resized(size)
        }
    }

    /// Every sample resized to `size×size`.
    pub fn resized(&self, size: usize) -> Result<Self> {
        Ok(Dataset {
            names: self.names.clone(),
            samples: self.samples.iter().map(|s| resize(s, size)).collect::<Result<_>>()?,
        })
    }
}

/// Sorted file stems with the given extension.
pub fn list_stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Bilinear resize of the image, nearest-neighbour resize of the mask. No cropping.
pub fn resize(sample: &Sample, size: usize) -> Result<Sample> {
    if size == 0 || !size.is_multiple_of(2) {
        return Err(Error::Invalid(format!("resize target must be even and positive, got {size}")));
    }
    Ok(Sample {
        image: resize_bilinear(&sample.image, size, size)?,
        mask: resize_nearest(&sample.mask, size, size),
    })
}

pub fn resize_nearest(t: &Tensor<f32>, th: usize, tw: usize) -> Tensor<f32> {
    let s = t.shape();
    let src = |o: usize, from: usize, to: usize| (((o as f64 + 0.5) * from as f64 / to as f64) as usize).min(from - 1);
    Tensor::from_fn(Shape::new(s.n(), s.c(), th, tw), |n, c, y, x| {
        t.at(n, c, src(y, s.h(), th), src(x, s.w(), tw))
    })
}

/// Sample indices for one epoch, shuffled deterministically by `seed`.
pub fn epoch_order(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Splits `order` into consecutive chunks of `batch_size`; the last one may be short.
pub fn batch_indices(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Stacks the selected samples into `(images, masks)` batch tensors.
pub fn collate(samples: &[Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

/// Shuffled mini-batches of a dataset, no augmentation.
pub fn batches(dataset: &Dataset, batch_size: usize, shuffle_seed: u64) -> impl Iterator<Item = Result<(Tensor<f32>, Tensor<f32>)>> + '_ {
    let order = epoch_order(dataset.len(), shuffle_seed);
    batch_indices(&order, batch_size).into_iter().map(move |idx| {
        let picked: Vec<Sample> = idx.iter().map(|&i| dataset.samples[i].clone()).collect();
        collate(&picked)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_sizes_keep_the_tail() {
        let order = epoch_order(10, 1);
        let b = batch_indices(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(epoch_order(10, 1), order);
    }

    #[test]
    fn resize_identity_and_checkerboard() {
        let img = Tensor::from_fn(Shape::new(1, 3, 4, 4), |_, _, y, x| ((x + y) % 2) as f32);
        let mask = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| ((x + y) % 2) as f32);
        let s = Sample::new(img, mask).unwrap();
        assert_eq!(resize(&s, 4).unwrap(), s);
        let small = resize(&s, 2).unwrap();
        assert!(small.image.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
        // Nearest picks source pixel (1,1), (1,3), (3,1), (3,3): all on the even-sum diagonal.
        assert_eq!(small.mask.data(), &[0.0, 0.0, 0.0, 0.0]);
        assert!(resize(&s, 3).is_err());
    }

    #[test]
    fn sample_rejects_soft_masks() {
        let img = Tensor::zeros(Shape::new(1, 3, 2, 2));
        assert!(Sample::new(img.clone(), Tensor::full(Shape::new(1, 1, 2, 2), 0.5)).is_err());
        assert!(Sample::new(img, Tensor::zeros(Shape::new(1, 1, 2, 3))).is_err());
    }
}
