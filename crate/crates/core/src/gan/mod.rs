//! Adversarial pretext training: a conditional generator restores corrupted
//! images while a patch discriminator judges (input, image) pairs. Losses are
//! least-squares; the generator additionally minimizes λ-weighted L1.

pub mod pretrain;

use candle_core::Tensor;

use crate::data::ImageGrid;
use crate::error::{Error, Result};

pub use self::pretrain::{pretrain, validate_generator, PretrainOutput, PretrainRun};

fn nonempty(t: &Tensor, what: &str) -> Result<()> {
    if t.elem_count() == 0 {
        return Err(Error::InvalidArgument(format!("{what}: empty score batch")));
    }
    Ok(())
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `0.5·mean((real−1)²) + 0.5·mean(fake²)`.
pub fn lsgan_d_loss(real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    nonempty(real, "lsgan_d_loss")?;
    nonempty(fake, "lsgan_d_loss")?;
    same_shape(real, fake, "lsgan_d_loss")?;
    let r = (real - 1.0)?.sqr()?.mean_all()?;
    let f = fake.sqr()?.mean_all()?;
    Ok(((r + f)? * 0.5)?)
}

/// `0.5·mean((fake−1)²)`.
pub fn lsgan_g_loss(fake: &Tensor) -> Result<Tensor> {
    nonempty(fake, "lsgan_g_loss")?;
    Ok(((fake - 1.0)?.sqr()?.mean_all()? * 0.5)?)
}

/// Mean absolute difference.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target, "l1_loss")?;
    nonempty(pred, "l1_loss")?;
    Ok((pred - target)?.abs()?.mean_all()?)
}

/// L1 between two grids.
pub fn l1_recon_loss(pred: &ImageGrid, target: &ImageGrid) -> Result<f64> {
    crate::metrics::l1(pred, target)
}

/// `g_adv + λ·l1`.
pub fn generator_objective(g_adv: &Tensor, l1: &Tensor, lambda_l1: f64) -> Result<Tensor> {
    if !(lambda_l1 >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_l1 must be >= 0, got {lambda_l1}")));
    }
    Ok((g_adv + (l1 * lambda_l1)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Var};

    fn full(v: f64, n: usize) -> Tensor {
        Tensor::full(v, (1, 1, n, n), &crate::device()).unwrap()
    }

    fn val(t: Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn hand_values() {
        assert_eq!(val(lsgan_d_loss(&full(1.0, 3), &full(0.0, 3)).unwrap()), 0.0);
        assert!((val(lsgan_d_loss(&full(0.5, 3), &full(0.5, 3)).unwrap()) - 0.25).abs() < 1e-12);
        assert!((val(lsgan_d_loss(&full(0.0, 3), &full(1.0, 3)).unwrap()) - 1.0).abs() < 1e-12);
        assert_eq!(val(lsgan_g_loss(&full(1.0, 3)).unwrap()), 0.0);
        assert!((val(lsgan_g_loss(&full(0.0, 3)).unwrap()) - 0.5).abs() < 1e-12);
        assert!((val(lsgan_g_loss(&full(0.5, 3)).unwrap()) - 0.125).abs() < 1e-12);
        let obj = generator_objective(&full(0.5, 1).flatten_all().unwrap(), &full(0.02, 1).flatten_all().unwrap(), 100.0);
        assert!((val(obj.unwrap().sum_all().unwrap()) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn l1_grid_values() {
        let p = ImageGrid::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let t = ImageGrid::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(l1_recon_loss(&p, &t).unwrap(), 0.5);
        assert_eq!(l1_recon_loss(&p.map(|v| v + 1.0), &p).unwrap(), 1.0);
        assert!(l1_recon_loss(&p, &ImageGrid::zeros(1, 2, 2)).is_err());
    }

    #[test]
    fn empty_and_mismatched_rejected() {
        let e = Tensor::zeros((0,), DType::F64, &crate::device()).unwrap();
        assert!(lsgan_g_loss(&e).is_err());
        assert!(lsgan_d_loss(&full(1.0, 3), &full(1.0, 2)).is_err());
        assert!(generator_objective(&full(1.0, 1), &full(1.0, 1), -1.0).is_err());
    }

    /// Central-difference check of `f` at a 3×3 point.
    fn grad_check(f: impl Fn(&Tensor) -> Tensor, x0: &[f64]) {
        let x = Var::from_vec(x0.to_vec(), (1, 1, 3, 3), &crate::device()).unwrap();
        let g = f(x.as_tensor()).backward().unwrap();
        let g = g.get(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let h = 1e-4;
        for i in 0..9 {
            let eval = |d: f64| {
                let mut v = x0.to_vec();
                v[i] += d;
                val(f(&Tensor::from_vec(v, (1, 1, 3, 3), &crate::device()).unwrap()))
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-3, "coord {i}: analytic {} numeric {num}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x0 = [0.3, -0.7, 1.2, 0.05, -1.5, 0.8, 2.1, -0.2, 0.6];
        let t: Vec<f64> = x0.iter().map(|v| v * 0.5 + 0.37).collect();
        let target = Tensor::from_vec(t, (1, 1, 3, 3), &crate::device()).unwrap();
        let other = Tensor::from_vec(x0.iter().map(|v| 1.0 - v).collect::<Vec<_>>(), (1, 1, 3, 3), &crate::device()).unwrap();
        grad_check(|x| lsgan_d_loss(x, &other).unwrap(), &x0);
        grad_check(|x| lsgan_d_loss(&other, x).unwrap(), &x0);
        grad_check(|x| lsgan_g_loss(x).unwrap(), &x0);
        grad_check(|x| l1_loss(x, &target).unwrap(), &x0);
        grad_check(
            |x| {
                let adv = lsgan_g_loss(x).unwrap();
                generator_objective(&adv, &l1_loss(x, &target).unwrap(), 100.0).unwrap()
            },
            &x0,
        );
    }
}
