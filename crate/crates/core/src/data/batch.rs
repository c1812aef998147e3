use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};
use crate::tensor::Matrix;

const CROP_PAD: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    #[default]
    None,
    /// Horizontal flip with probability 1/2.
    Flip,
    /// Reflect-pad by 4 pixels, then crop at a uniform random offset.
    Crop,
    FlipCrop,
}

impl Augment {
    fn flips(self) -> bool {
        matches!(self, Augment::Flip | Augment::FlipCrop)
    }

    fn crops(self) -> bool {
        matches!(self, Augment::Crop | Augment::FlipCrop)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentOutcome {
    pub flipped: bool,
    /// Top-left corner of the crop window in padded coordinates.
    pub crop_offset: Option<(usize, usize)>,
}

fn reflect(p: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if p < 0 {
        -p
    } else if p >= n {
        2 * (n - 1) - p
    } else {
        p
    };
    r as usize
}

/// Augments one row-major `h × w` image in place.
pub fn augment_image(image: &mut [f64], shape: (usize, usize), augment: Augment, rng: &mut Rng) -> AugmentOutcome {
    let (h, w) = shape;
    let mut outcome = AugmentOutcome {
        flipped: false,
        crop_offset: None,
    };
    if augment.flips() && rng.random_bool(0.5) {
        for row in image.chunks_mut(w) {
            row.reverse();
        }
        outcome.flipped = true;
    }
    if augment.crops() {
        let oy = rng.random_range(0..=2 * CROP_PAD);
        let ox = rng.random_range(0..=2 * CROP_PAD);
        let src = image.to_vec();
        for y in 0..h {
            let sy = reflect(y as isize + oy as isize - CROP_PAD as isize, h);
            for x in 0..w {
                let sx = reflect(x as isize + ox as isize - CROP_PAD as isize, w);
                image[y * w + x] = src[sy * w + sx];
            }
        }
        outcome.crop_offset = Some((oy, ox));
    }
    outcome
}

/// Epoch-wise shuffled mini-batches over a dataset. Epoch `e` is shuffled
/// with stream `(seed, SHUFFLE, e)` and augmented with `(seed, AUGMENT, e)`.
/// The final partial batch is kept.
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    seed: u64,
    augment: Augment,
}

impl<'a> BatchStream<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64, augment: Augment) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if augment != Augment::None {
            match dataset.image_shape {
                None => {
                    return Err(Error::Config(format!(
                        "augmentation {augment:?} requested on non-image data"
                    )))
                }
                Some((h, w)) if h <= CROP_PAD || w <= CROP_PAD => {
                    if augment.crops() {
                        return Err(Error::Config(format!(
                            "{h}x{w} images are too small for reflective padding of {CROP_PAD}"
                        )));
                    }
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            dataset,
            batch_size,
            seed,
            augment,
        })
    }

    pub fn batch_count(&self) -> usize {
        self.dataset.len().div_ceil(self.batch_size)
    }

    pub fn epoch(&self, epoch: usize) -> Vec<Batch> {
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        order.shuffle(&mut rng::stream(self.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut aug_rng = rng::stream(self.seed, &[tag::AUGMENT, epoch as u64]);
        order
            .chunks(self.batch_size)
            .map(|idx| {
                let mut features = self.dataset.features.select_rows(idx);
                if let (Some(shape), true) = (self.dataset.image_shape, self.augment != Augment::None) {
                    for r in 0..features.rows() {
                        augment_image(features.row_mut(r), shape, self.augment, &mut aug_rng);
                    }
                }
                Batch {
                    features,
                    labels: idx.iter().map(|&i| self.dataset.labels[i]).collect(),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(n: usize) -> Dataset {
        Dataset::new(Matrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64), vec![0; n], 2, "t").unwrap()
    }

    fn image_ds(n: usize, h: usize, w: usize) -> Dataset {
        let mut d = Dataset::new(
            Matrix::from_fn(n, h * w, |i, j| (i * 1000 + j) as f64),
            vec![0; n],
            2,
            "img",
        )
        .unwrap();
        d.image_shape = Some((h, w));
        d
    }

    #[test]
    fn batch_sizes_keep_partial_tail() {
        let d = ds(130);
        let stream = BatchStream::new(&d, 64, 1, Augment::None).unwrap();
        let sizes: Vec<usize> = stream.epoch(0).iter().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![64, 64, 2]);
        assert_eq!(stream.batch_count(), 3);
    }

    #[test]
    fn same_seed_same_stream_and_epochs_differ() {
        let d = ds(50);
        let a = BatchStream::new(&d, 8, 4, Augment::None).unwrap();
        let b = BatchStream::new(&d, 8, 4, Augment::None).unwrap();
        assert_eq!(a.epoch(3), b.epoch(3));
        assert_ne!(a.epoch(0), a.epoch(1));
        // every epoch is a permutation
        let mut seen: Vec<f64> = a.epoch(2).iter().flat_map(|b| b.features.column(0)).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..50).map(|i| (2 * i) as f64).collect::<Vec<_>>());
    }

    #[test]
    fn augmentation_requires_images() {
        let d = ds(10);
        assert!(matches!(
            BatchStream::new(&d, 4, 0, Augment::Flip),
            Err(Error::Config(_))
        ));
        let small = image_ds(2, 3, 3);
        assert!(BatchStream::new(&small, 4, 0, Augment::Crop).is_err());
        assert!(BatchStream::new(&small, 4, 0, Augment::Flip).is_ok());
    }

    #[test]
    fn flip_rate_is_one_half() {
        let mut rng = rng::stream(17, &[]);
        let mut img = vec![0.0; 4];
        let flips = (0..10_000)
            .filter(|_| augment_image(&mut img, (2, 2), Augment::Flip, &mut rng).flipped)
            .count();
        let rate = flips as f64 / 10_000.0;
        assert!((rate - 0.5).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn flip_reverses_rows() {
        let mut rng = rng::stream(0, &[]);
        let original = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        loop {
            let mut img = original.clone();
            if augment_image(&mut img, (2, 3), Augment::Flip, &mut rng).flipped {
                assert_eq!(img, vec![3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
                break;
            }
        }
    }

    #[test]
    fn crop_uses_reflective_padding() {
        assert_eq!(reflect(-1, 6), 1);
        assert_eq!(reflect(-4, 6), 4);
        assert_eq!(reflect(6, 6), 4);
        assert_eq!(reflect(9, 6), 1);
        let (h, w) = (6, 6);
        let original: Vec<f64> = (0..36).map(|v| v as f64).collect();
        let mut rng = rng::stream(2, &[]);
        for _ in 0..50 {
            let mut img = original.clone();
            let out = augment_image(&mut img, (h, w), Augment::Crop, &mut rng);
            let (oy, ox) = out.crop_offset.unwrap();
            assert!(oy <= 8 && ox <= 8);
            for y in 0..h {
                for x in 0..w {
                    let sy = reflect(y as isize + oy as isize - 4, h);
                    let sx = reflect(x as isize + ox as isize - 4, w);
                    assert_eq!(img[y * w + x], original[sy * w + sx]);
                }
            }
            if (oy, ox) == (4, 4) {
                assert_eq!(img, original);
            }
        }
    }
}
