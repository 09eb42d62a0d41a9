use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Dataset;

/// A split size: absolute count or fraction of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Amount {
    Count(usize),
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Amount,
    pub val: Amount,
    pub test: Amount,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn counts(train: usize, val: usize, test: usize, seed: u64) -> Self {
        Self {
            train: Amount::Count(train),
            val: Amount::Count(val),
            test: Amount::Count(test),
            seed,
        }
    }

    pub fn fractions(train: f64, val: f64, test: f64, seed: u64) -> Self {
        Self {
            train: Amount::Fraction(train),
            val: Amount::Fraction(val),
            test: Amount::Fraction(test),
            seed,
        }
    }

    /// Resolves sizes for `n` samples. Fractions round to the nearest
    /// count; when all three are fractions summing to one, train absorbs
    /// the rounding remainder so nothing is left out.
    pub fn resolve(&self, n: usize) -> Result<(usize, usize, usize)> {
        let size = |a: Amount| -> Result<usize> {
            match a {
                Amount::Count(c) => Ok(c),
                Amount::Fraction(f) if (0.0..=1.0).contains(&f) => Ok((f * n as f64).round() as usize),
                Amount::Fraction(f) => Err(Error::InvalidArgument(format!(
                    "split fraction {f} outside [0, 1]"
                ))),
            }
        };
        let (tr, va, te) = (size(self.train)?, size(self.val)?, size(self.test)?);
        let tr = match (self.train, self.val, self.test) {
            (Amount::Fraction(a), Amount::Fraction(b), Amount::Fraction(c))
                if ((a + b + c) - 1.0).abs() < 1e-9 =>
            {
                n.checked_sub(va + te).ok_or_else(|| over(va + te, n))?
            }
            _ => tr,
        };
        if tr + va + te > n {
            return Err(over(tr + va + te, n));
        }
        Ok((tr, va, te))
    }
}

fn over(requested: usize, n: usize) -> Error {
    Error::InvalidArgument(format!(
        "split requests {requested} samples but the dataset holds {n}"
    ))
}

/// Seeded shuffle, then consecutive train / val / test slices.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let n = dataset.len();
    let (tr, va, te) = spec.resolve(n)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok((
        dataset.subset(&idx[..tr]),
        dataset.subset(&idx[tr..tr + va]),
        dataset.subset(&idx[tr + va..tr + va + te]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageGrid, SamplePair, Task};
    use std::collections::HashSet;

    fn ds(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let g = ImageGrid::from_fn(1, 1, |_, _| i as f32);
                SamplePair::new(g.clone(), g, Task::Denoise).unwrap()
            })
            .collect();
        Dataset::from_samples(samples)
    }

    fn ids(d: &Dataset) -> HashSet<u32> {
        (0..d.len()).map(|i| d.get(i).unwrap().input.values()[0] as u32).collect()
    }

    #[test]
    fn au10nm_row() {
        let (a, b, c) = split(&ds(1100), &SplitSpec::counts(660, 220, 220, 0)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (660, 220, 220));
        let (ia, ib, ic) = (ids(&a), ids(&b), ids(&c));
        assert!(ia.is_disjoint(&ib) && ia.is_disjoint(&ic) && ib.is_disjoint(&ic));
        assert_eq!(ia.len() + ib.len() + ic.len(), 1100);
    }

    #[test]
    fn fractions_of_ten() {
        let (a, b, c) = split(&ds(10), &SplitSpec::fractions(0.6, 0.2, 0.2, 1)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
    }

    #[test]
    fn fractions_cover_everything() {
        assert_eq!(SplitSpec::fractions(0.6, 0.2, 0.2, 0).resolve(32).unwrap(), (20, 6, 6));
    }

    #[test]
    fn over_allocation_errors() {
        assert!(split(&ds(10), &SplitSpec::counts(20, 0, 0, 0)).is_err());
    }

    #[test]
    fn seeded() {
        let spec = SplitSpec::counts(5, 3, 2, 42);
        let (a1, ..) = split(&ds(10), &spec).unwrap();
        let (a2, ..) = split(&ds(10), &spec).unwrap();
        assert_eq!(ids(&a1), ids(&a2));
    }
}
