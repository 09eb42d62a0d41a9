use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ImageGrid, SamplePair};

/// Paired train-time augmentation. Geometric transforms hit input and
/// target alike; noise touches the input only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub noise: bool,
    /// Standard deviation of the additive Gaussian input noise.
    pub noise_sigma: f32,
    pub flip: bool,
    /// Allowed counter-clockwise quarter turns (subset of 0..=3).
    pub rotations: Vec<u8>,
    /// Uniform range of the isotropic rescale factor applied before cropping.
    pub resize_scale_range: [f32; 2],
    pub crop_size: usize,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            noise: true,
            noise_sigma: 0.1,
            flip: true,
            rotations: vec![0, 1, 2, 3],
            resize_scale_range: [0.9, 1.1],
            crop_size: 448,
        }
    }
}

impl AugmentPolicy {
    /// No augmentation, crop only.
    pub fn identity(crop_size: usize) -> Self {
        Self {
            noise: false,
            noise_sigma: 0.0,
            flip: false,
            rotations: vec![0],
            resize_scale_range: [1.0, 1.0],
            crop_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.resize_scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "resize_scale_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.crop_size == 0 {
            return Err(Error::InvalidArgument("crop_size must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("noise_sigma must be non-negative".into()));
        }
        if self.rotations.iter().any(|&r| r > 3) {
            return Err(Error::InvalidArgument(
                "rotations are quarter turns in 0..=3".into(),
            ));
        }
        Ok(())
    }
}

/// Applies `policy` to `sample`, fully determined by `seed`.
pub fn augment(sample: &SamplePair, policy: &AugmentPolicy, seed: u64) -> Result<SamplePair> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = sample.task.has_mask_target();
    let mut input = sample.input.clone();
    let mut target = sample.target.clone();

    if policy.flip {
        if rng.random_bool(0.5) {
            input = input.flip_horizontal();
            target = target.flip_horizontal();
        }
        if rng.random_bool(0.5) {
            input = input.flip_vertical();
            target = target.flip_vertical();
        }
    }
    if !policy.rotations.is_empty() {
        let k = policy.rotations[rng.random_range(0..policy.rotations.len())];
        input = input.rot90(k);
        target = target.rot90(k);
    }

    let [lo, hi] = policy.resize_scale_range;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    if (scale - 1.0).abs() > f32::EPSILON {
        let h = ((input.height() as f32) * scale).round().max(1.0) as usize;
        let w = ((input.width() as f32) * scale).round().max(1.0) as usize;
        input = input.resize_bilinear(h, w);
        target = if mask {
            target.resize_nearest(h, w)
        } else {
            target.resize_bilinear(h, w)
        };
    }

    let crop = policy.crop_size;
    if crop > input.height() || crop > input.width() {
        return Err(Error::InvalidArgument(format!(
            "crop {crop} exceeds the {}x{} image after resizing",
            input.height(),
            input.width()
        )));
    }
    let top = rng.random_range(0..=input.height() - crop);
    let left = rng.random_range(0..=input.width() - crop);
    input = input.crop(top, left, crop, crop)?;
    target = target.crop(top, left, crop, crop)?;

    if policy.noise && policy.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, policy.noise_sigma)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        input = add_noise(&input, &normal, &mut rng);
    }
    SamplePair::new(input, target, sample.task)
}

pub(crate) fn add_noise(img: &ImageGrid, normal: &Normal<f32>, rng: &mut ChaCha8Rng) -> ImageGrid {
    let values = img.values().iter().map(|&v| v + normal.sample(rng)).collect();
    ImageGrid::new(img.channels(), img.height(), img.width(), values)
        .expect("shape and finiteness preserved")
}

/// Centre crop used at evaluation time.
pub fn center_crop(sample: &SamplePair, size: usize) -> Result<SamplePair> {
    let (h, w) = (sample.input.height(), sample.input.width());
    if size > h || size > w {
        return Err(Error::InvalidArgument(format!(
            "centre crop {size} exceeds the {h}x{w} image"
        )));
    }
    let (top, left) = ((h - size) / 2, (w - size) / 2);
    SamplePair::new(
        sample.input.crop(top, left, size, size)?,
        sample.target.crop(top, left, size, size)?,
        sample.task,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;
    use proptest::prelude::*;

    fn seg_sample(n: usize) -> SamplePair {
        let input = ImageGrid::from_fn(n, n, |r, c| (r * n + c) as f32);
        let mask = ImageGrid::from_fn(n, n, |r, c| if r < n / 3 && c > n / 2 { 1.0 } else { 0.0 });
        SamplePair::new(input, mask, Task::Segmentation).unwrap()
    }

    #[test]
    fn deterministic_under_seed() {
        let policy = AugmentPolicy {
            flip: true,
            ..AugmentPolicy::identity(8)
        };
        let s = seg_sample(8);
        assert_eq!(augment(&s, &policy, 11).unwrap(), augment(&s, &policy, 11).unwrap());
    }

    #[test]
    fn rotation_moves_mask_with_image() {
        let policy = AugmentPolicy {
            rotations: vec![1],
            ..AugmentPolicy::identity(8)
        };
        let s = seg_sample(8);
        let out = augment(&s, &policy, 0).unwrap();
        assert_eq!(out.input, s.input.rot90(1));
        assert_eq!(out.target, s.target.rot90(1));
    }

    #[test]
    fn crop_448_of_512() {
        let policy = AugmentPolicy::identity(448);
        let out = augment(&seg_sample(512), &policy, 3).unwrap();
        assert_eq!((out.input.height(), out.input.width()), (448, 448));
        assert_eq!((out.target.height(), out.target.width()), (448, 448));
    }

    #[test]
    fn oversized_crop_errors() {
        let policy = AugmentPolicy {
            resize_scale_range: [0.5, 0.5],
            ..AugmentPolicy::identity(48)
        };
        assert!(augment(&seg_sample(64), &policy, 0).is_err());
    }

    #[test]
    fn noise_hits_input_only() {
        let policy = AugmentPolicy {
            noise: true,
            noise_sigma: 0.5,
            ..AugmentPolicy::identity(16)
        };
        let s = seg_sample(16);
        let out = augment(&s, &policy, 9).unwrap();
        assert_ne!(out.input, s.input);
        assert_eq!(out.target, s.target);
    }

    #[test]
    fn resize_keeps_mask_binary() {
        let policy = AugmentPolicy {
            resize_scale_range: [1.3, 1.3],
            ..AugmentPolicy::identity(16)
        };
        assert!(augment(&seg_sample(16), &policy, 2).unwrap().target.is_binary());
    }

    proptest! {
        #[test]
        fn geometric_augment_commutes_with_binarization(
            vals in proptest::collection::vec(0f32..1.0, 36),
            seed in 0u64..1000,
        ) {
            let soft = ImageGrid::new(1, 6, 6, vals).unwrap();
            let policy = AugmentPolicy { flip: true, rotations: vec![0, 1, 2, 3], ..AugmentPolicy::identity(6) };
            let as_pair = |t: ImageGrid| SamplePair::new(soft.clone(), t, Task::Denoise).unwrap();
            let a = augment(&as_pair(soft.clone()), &policy, seed).unwrap().target.binarize(0.5);
            let b = augment(&as_pair(soft.binarize(0.5)), &policy, seed).unwrap().target;
            prop_assert_eq!(a, b);
        }
    }
}
