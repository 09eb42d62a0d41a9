use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::augment::add_noise;
use super::{ImageGrid, SamplePair, Task};

/// Pretext-task input corruption. Noise and blur strengths are drawn
/// uniformly per image from the given ranges (standardized units and
/// pixels respectively).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionPolicy {
    pub gaussian_noise_sigma_range: [f32; 2],
    pub blur_sigma_range: [f32; 2],
    pub flip: bool,
    pub rotate: bool,
}

impl Default for CorruptionPolicy {
    fn default() -> Self {
        Self {
            gaussian_noise_sigma_range: [0.0, 0.5],
            blur_sigma_range: [0.0, 2.0],
            flip: true,
            rotate: true,
        }
    }
}

impl CorruptionPolicy {
    /// Leaves images untouched.
    pub fn none() -> Self {
        Self {
            gaussian_noise_sigma_range: [0.0, 0.0],
            blur_sigma_range: [0.0, 0.0],
            flip: false,
            rotate: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("gaussian_noise_sigma_range", self.gaussian_noise_sigma_range),
            ("blur_sigma_range", self.blur_sigma_range),
        ] {
            if !(0.0 <= lo && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

struct Draw {
    flip_h: bool,
    flip_v: bool,
    turns: u8,
    blur: f32,
    noise: f32,
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f32; 2]) -> f32 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn draw(policy: &CorruptionPolicy, rng: &mut ChaCha8Rng) -> Draw {
    let (flip_h, flip_v) = if policy.flip {
        (rng.random_bool(0.5), rng.random_bool(0.5))
    } else {
        (false, false)
    };
    let turns = if policy.rotate { rng.random_range(0..4u8) } else { 0 };
    let blur = uniform(rng, policy.blur_sigma_range);
    let noise = uniform(rng, policy.gaussian_noise_sigma_range);
    Draw {
        flip_h,
        flip_v,
        turns,
        blur,
        noise,
    }
}

fn geometric(img: &ImageGrid, d: &Draw) -> ImageGrid {
    let mut out = img.clone();
    if d.flip_h {
        out = out.flip_horizontal();
    }
    if d.flip_v {
        out = out.flip_vertical();
    }
    out.rot90(d.turns)
}

fn photometric(img: &ImageGrid, d: &Draw, rng: &mut ChaCha8Rng) -> Result<ImageGrid> {
    let blurred = img.gaussian_blur(d.blur);
    if d.noise <= 0.0 {
        return Ok(blurred);
    }
    let normal = Normal::new(0.0f32, d.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(add_noise(&blurred, &normal, rng))
}

/// Corrupted copy of `img`: flips/rotation, then blur, then additive noise.
pub fn corrupt(img: &ImageGrid, policy: &CorruptionPolicy, seed: u64) -> Result<ImageGrid> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = draw(policy, &mut rng);
    photometric(&geometric(img, &d), &d, &mut rng)
}

/// Pretext training pair: the corrupted image as input and the clean image,
/// with the same flips and rotation, as target.
pub fn pretext_pair(img: &ImageGrid, policy: &CorruptionPolicy, seed: u64) -> Result<SamplePair> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = draw(policy, &mut rng);
    let target = geometric(img, &d);
    let input = photometric(&target, &d, &mut rng)?;
    SamplePair::new(input, target, Task::Pretext)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(n: usize) -> ImageGrid {
        ImageGrid::from_fn(n, n, |r, c| ((r * 31 + c * 17) % 23) as f32 / 23.0)
    }

    #[test]
    fn degenerate_policy_is_identity() {
        let x = img(16);
        assert_eq!(corrupt(&x, &CorruptionPolicy::none(), 5).unwrap(), x);
    }

    #[test]
    fn degenerate_policy_with_flips_only_moves_pixels() {
        let x = img(16);
        let policy = CorruptionPolicy {
            flip: true,
            rotate: true,
            ..CorruptionPolicy::none()
        };
        let pair = pretext_pair(&x, &policy, 3).unwrap();
        assert_eq!(pair.input, pair.target);
        let mut a = x.values().to_vec();
        let mut b = pair.input.values().to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_noise_sigma_matches_sample_std() {
        let x = img(512);
        let s = 0.3;
        let policy = CorruptionPolicy {
            gaussian_noise_sigma_range: [s, s],
            ..CorruptionPolicy::none()
        };
        let y = corrupt(&x, &policy, 17).unwrap();
        let diff: Vec<f32> = y.values().iter().zip(x.values()).map(|(a, b)| a - b).collect();
        let diff = ImageGrid::new(1, 512, 512, diff).unwrap();
        let std = diff.std() as f32;
        assert!((std - s).abs() < 0.1 * s, "{std}");
    }

    #[test]
    fn same_seed_same_corruption() {
        let x = img(32);
        let p = CorruptionPolicy::default();
        assert_eq!(corrupt(&x, &p, 8).unwrap(), corrupt(&x, &p, 8).unwrap());
        assert_ne!(corrupt(&x, &p, 8).unwrap(), corrupt(&x, &p, 9).unwrap());
    }

    #[test]
    fn pair_input_matches_corrupt() {
        let x = img(32);
        let p = CorruptionPolicy::default();
        assert_eq!(pretext_pair(&x, &p, 4).unwrap().input, corrupt(&x, &p, 4).unwrap());
    }

    #[test]
    fn inverted_range_rejected() {
        let p = CorruptionPolicy {
            blur_sigma_range: [2.0, 1.0],
            ..CorruptionPolicy::none()
        };
        assert!(corrupt(&img(8), &p, 0).is_err());
    }
}
