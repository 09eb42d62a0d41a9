use candle_core::Tensor;

use crate::error::{Error, Result};

/// Pixels whose standard deviation falls below this are treated as constant.
pub const STD_FLOOR: f32 = 1e-8;

/// A dense `channels x height x width` image in channel-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ImageGrid {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {channels}x{height}x{width} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    /// Single-channel grid from a function of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            channels: 1,
            height,
            width,
            values,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f32 {
        self.values[(c * self.height + r) * self.width + col]
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self
            .values
            .iter()
            .map(|&v| (f64::from(v) - m).powi(2))
            .sum::<f64>()
            / self.values.len().max(1) as f64;
        var.sqrt()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Thresholds at `t`: values strictly above become 1, the rest 0.
    pub fn binarize(&self, t: f32) -> Self {
        self.map(|v| if v > t { 1.0 } else { 0.0 })
    }

    fn remap(&self, height: usize, width: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut values = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            for r in 0..height {
                for col in 0..width {
                    let (sr, sc) = src(r, col);
                    values.push(self.get(c, sr, sc));
                }
            }
        }
        Self {
            channels: self.channels,
            height,
            width,
            values,
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        self.remap(self.height, w, |r, c| (r, w - 1 - c))
    }

    pub fn flip_vertical(&self) -> Self {
        let h = self.height;
        self.remap(h, self.width, |r, c| (h - 1 - r, c))
    }

    /// Rotates counter-clockwise by `quarter_turns * 90` degrees.
    pub fn rot90(&self, quarter_turns: u8) -> Self {
        let (h, w) = (self.height, self.width);
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => self.remap(w, h, |r, c| (c, w - 1 - r)),
            2 => self.remap(h, w, |r, c| (h - 1 - r, w - 1 - c)),
            _ => self.remap(w, h, |r, c| (h - 1 - c, r)),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(self.remap(height, width, |r, c| (top + r, left + c)))
    }

    /// Nearest-neighbour resize; keeps binary masks binary.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        let (sh, sw) = (self.height as f64 / height as f64, self.width as f64 / width as f64);
        let (h0, w0) = (self.height, self.width);
        self.remap(height, width, |r, c| {
            let sr = (((r as f64 + 0.5) * sh) as usize).min(h0 - 1);
            let sc = (((c as f64 + 0.5) * sw) as usize).min(w0 - 1);
            (sr, sc)
        })
    }

    /// Bilinear resize with half-pixel centres and edge clamping. Values are
    /// not clamped to any range.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        let (sh, sw) = (self.height as f64 / height as f64, self.width as f64 / width as f64);
        let sample = |len: usize, scale: f64, i: usize| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, (pos - lo as f64) as f32)
        };
        let mut values = Vec::with_capacity(self.channels * height * width);
        for ch in 0..self.channels {
            for r in 0..height {
                let (r0, r1, fr) = sample(self.height, sh, r);
                for c in 0..width {
                    let (c0, c1, fc) = sample(self.width, sw, c);
                    let top = self.get(ch, r0, c0) * (1.0 - fc) + self.get(ch, r0, c1) * fc;
                    let bot = self.get(ch, r1, c0) * (1.0 - fc) + self.get(ch, r1, c1) * fc;
                    values.push(top * (1.0 - fr) + bot * fr);
                }
            }
        }
        Self {
            channels: self.channels,
            height,
            width,
            values,
        }
    }

    /// Separable Gaussian blur with reflected borders. `sigma <= 0` is a copy.
    pub fn gaussian_blur(&self, sigma: f32) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f32 = kernel.iter().sum();
        let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
        let reflect = |i: isize, len: usize| -> usize {
            let n = len as isize;
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let m = i.rem_euclid(period);
            (if m < n { m } else { period - m }) as usize
        };
        let pass = |img: &ImageGrid, horizontal: bool| -> ImageGrid {
            let mut out = img.clone();
            for ch in 0..img.channels {
                for r in 0..img.height {
                    for c in 0..img.width {
                        let mut acc = 0.0;
                        for (k, &wk) in kernel.iter().enumerate() {
                            let off = k as isize - radius;
                            let v = if horizontal {
                                img.get(ch, r, reflect(c as isize + off, img.width))
                            } else {
                                img.get(ch, reflect(r as isize + off, img.height), c)
                            };
                            acc += wk * v;
                        }
                        out.values[(ch * img.height + r) * img.width + c] = acc;
                    }
                }
            }
            out
        };
        pass(&pass(self, true), false)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_slice(
            &self.values,
            (1, self.channels, self.height, self.width),
            &crate::device(),
        )?)
    }

    /// Reads sample `index` of an `(N, C, H, W)` tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4()?;
        let v = t.get(index)?.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?;
        Self::new(c, h, w, v)
    }
}

/// Stacks equally shaped grids into an `(N, C, H, W)` tensor.
pub fn stack(grids: &[&ImageGrid]) -> Result<Tensor> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack an empty batch".into()))?;
    let shape = first.shape();
    let mut data = Vec::with_capacity(grids.len() * first.values.len());
    for g in grids {
        if g.shape() != shape {
            return Err(Error::Shape(format!(
                "batch mixes shapes {:?} and {:?}",
                shape,
                g.shape()
            )));
        }
        data.extend_from_slice(&g.values);
    }
    Ok(Tensor::from_vec(
        data,
        (grids.len(), shape.0, shape.1, shape.2),
        &crate::device(),
    )?)
}

/// Per-image zero mean / unit variance (population statistics, computed over
/// all channels). Constant images map to all zeros.
pub fn standardize(img: &ImageGrid) -> ImageGrid {
    let mean = img.mean();
    let std = img.std();
    if std < f64::from(STD_FLOOR) {
        return ImageGrid::zeros(img.channels, img.height, img.width);
    }
    img.map(|v| ((f64::from(v) - mean) / std) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_standardizes_to_zero() {
        let img = ImageGrid::from_fn(4, 4, |_, _| 3.5);
        assert!(standardize(&img).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_pixels() {
        let img = ImageGrid::new(1, 1, 2, vec![0.0, 2.0]).unwrap();
        assert_eq!(standardize(&img).values(), &[-1.0, 1.0]);
    }

    #[test]
    fn standardized_moments() {
        let img = ImageGrid::from_fn(32, 32, |r, c| ((r * 7 + c * 3) % 11) as f32 * 0.3 + 5.0);
        let s = standardize(&img);
        assert!(s.mean().abs() < 1e-5, "{}", s.mean());
        assert!((s.std() - 1.0).abs() < 1e-5, "{}", s.std());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ImageGrid::new(1, 1, 2, vec![0.0, f32::NAN]).is_err());
    }

    #[test]
    fn rotation_orientation() {
        // 1 2      2 4
        // 3 4  ->  1 3   (counter-clockwise)
        let img = ImageGrid::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(img.rot90(1).values(), &[2.0, 4.0, 1.0, 3.0]);
        assert_eq!(img.rot90(4), img);
        assert_eq!(img.rot90(1).rot90(3), img);
    }

    #[test]
    fn bilinear_identity_size_is_exact() {
        let img = ImageGrid::from_fn(5, 7, |r, c| (r * 7 + c) as f32 - 10.0);
        assert_eq!(img.resize_bilinear(5, 7), img);
    }

    #[test]
    fn blur_preserves_constant() {
        let img = ImageGrid::from_fn(9, 9, |_, _| -2.0);
        assert!(img.gaussian_blur(1.5).values().iter().all(|v| (v + 2.0).abs() < 1e-5));
    }

    proptest! {
        #[test]
        fn standardize_is_idempotent(vals in proptest::collection::vec(-100f32..100.0, 16)) {
            let img = ImageGrid::new(1, 4, 4, vals).unwrap();
            let once = standardize(&img);
            let twice = standardize(&once);
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
