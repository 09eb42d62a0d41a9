//! Receptive-field accounting.
//!
//! The analytic size folds the standard recurrence over the layer sequence:
//! a layer with kernel `k` and dilation `d`, applied where one feature-map
//! step spans `jump` input pixels, widens the field by `(k - 1) * d * jump`;
//! strided layers multiply `jump`, upsampling divides it. Residual blocks
//! count as two convolutions.
//!
//! The empirical size back-propagates from output pixels to the input and
//! measures the bounding box of non-zero gradient, averaged over one stride
//! period of output positions. To avoid
//! accidental cancellation the probe runs on a copy of the network with
//! absolute-valued weights, zero biases and normalization bypassed on an
//! all-ones input, so every structural path contributes a positive term.

use candle_core::{DType, IndexOp, Tensor, Var};

use crate::error::{Error, Result};

use super::network::{cast_params, ForwardOpts, Network};
use super::spec::{LayerKind, ModelSpec};

/// Analytic receptive field of `spec`, in input pixels.
pub fn receptive_field(spec: &ModelSpec) -> Result<usize> {
    let mut rf = 1usize;
    let mut jump = 1usize;
    for l in &spec.stage_layers {
        l.validate()?;
        match l.kind {
            LayerKind::Conv | LayerKind::Down => {
                rf += (l.kernel - 1) * l.dilation * jump;
                jump *= l.stride;
            }
            LayerKind::ResidualBlock => rf += 2 * (l.kernel - 1) * l.dilation * jump,
            LayerKind::Up => {
                if jump % l.stride != 0 {
                    return Err(Error::Spec(format!(
                        "{}: upsampling by {} exceeds the accumulated stride {jump}",
                        spec.name, l.stride
                    )));
                }
                jump /= l.stride;
                rf += (l.kernel - 1) * jump;
            }
            LayerKind::Norm | LayerKind::Activation | LayerKind::SkipMerge => {}
        }
    }
    Ok(rf)
}

/// Spread of the input footprint over one stride period of output pixels.
///
/// With strided downsampling and nearest upsampling the footprint of a
/// single output pixel depends on its position modulo the total stride.
/// `mean` averages the bounding-box side over all such phases; `min` and
/// `max` bound the per-pixel side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

/// Empirical receptive field: the phase-averaged footprint side, growing
/// the probe canvas until the footprint clears the border.
pub fn measure_receptive_field(net: &Network) -> Result<usize> {
    let f = measure_footprint(net)?;
    Ok(f.mean.round() as usize)
}

pub fn measure_footprint(net: &Network) -> Result<Footprint> {
    let div = net.spec().spatial_divisor();
    let mut size = round_up(32, div);
    loop {
        match measure_footprint_at(net, size) {
            Err(Error::InvalidArgument(_)) if size < 4096 => size = round_up(size * 2, div),
            other => return other,
        }
    }
}

/// Footprint probe on a `size x size` canvas. Fails when a footprint
/// reaches the canvas border.
pub fn measure_footprint_at(net: &Network, size: usize) -> Result<Footprint> {
    if !net.spec().is_generator() && net.spec().stage_layers.iter().any(|l| l.stride > 1) {
        return Err(Error::Spec(
            "the receptive-field probe needs an image-to-image network".into(),
        ));
    }
    let period = net.spec().spatial_divisor().max(1);
    if size < 2 * period {
        return Err(Error::InvalidArgument(format!(
            "probe size {size} is below two stride periods; use a larger probe"
        )));
    }
    let probe = cast_params(net.params(), DType::F64, |name, t| {
        if name.ends_with(".weight") {
            Ok(t.abs()?)
        } else {
            Ok(t.zeros_like()?)
        }
    })?;
    let c = net.spec().in_channels;
    let x = Var::from_tensor(&Tensor::ones((1, c, size, size), DType::F64, &crate::device())?)?;
    let y = net.forward_with(
        &probe,
        x.as_tensor(),
        ForwardOpts { bypass_norm: true },
        None,
    )?;
    let (_, _, h, w) = y.dims4()?;
    if (h, w) != (size, size) {
        return Err(Error::Shape(format!(
            "probe output is {h}x{w}, expected {size}x{size}"
        )));
    }
    // Rows and columns are probed together along the diagonal, one
    // backward pass per phase.
    let base = (size / 2) / period * period;
    let mut sides = Vec::with_capacity(period);
    for o in 0..period {
        let p = base + o;
        let out = y.i((0, .., p, p))?.sum_all()?;
        sides.push(footprint_side(&out, &x, size)?);
    }
    let mean = sides.iter().sum::<usize>() as f64 / period as f64;
    Ok(Footprint {
        mean,
        min: *sides.iter().min().expect("period >= 1"),
        max: *sides.iter().max().expect("period >= 1"),
    })
}

fn footprint_side(out: &Tensor, x: &Var, size: usize) -> Result<usize> {
    let grads = out.backward()?;
    let g = grads
        .get(x)
        .ok_or_else(|| Error::Spec("input received no gradient".into()))?
        .abs()?
        .sum(1)?
        .i(0)?
        .to_vec2::<f64>()?;

    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for (r, row) in g.iter().enumerate() {
        for (col, &v) in row.iter().enumerate() {
            if v > 0.0 {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(col);
                c1 = c1.max(col);
            }
        }
    }
    if r0 == usize::MAX {
        return Err(Error::Spec("output pixel depends on no input pixel".into()));
    }
    if r0 == 0 || c0 == 0 || r1 + 1 == size || c1 + 1 == size {
        return Err(Error::InvalidArgument(format!(
            "receptive field reaches the border of the {size}x{size} probe; use a larger probe size"
        )));
    }
    Ok((r1 - r0 + 1).max(c1 - c0 + 1))
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::spec::{Family, LayerSpec};
    use crate::model_zoo::build_generator;

    fn seq(layers: Vec<LayerSpec>) -> ModelSpec {
        ModelSpec {
            name: "probe".into(),
            family: Family::Unet,
            blocks: 0,
            stage_layers: layers,
            target_rf: None,
            in_channels: 1,
            out_channels: 1,
            hrnet: None,
        }
    }

    #[test]
    fn single_conv() {
        assert_eq!(receptive_field(&seq(vec![LayerSpec::conv(3, 1, 1, 1)])).unwrap(), 3);
    }

    #[test]
    fn hand_unrolled_three_layers() {
        let spec = seq(vec![
            LayerSpec::conv(3, 1, 1, 1),
            LayerSpec::conv(3, 2, 1, 1),
            LayerSpec::conv(3, 1, 1, 1),
        ]);
        // 1 + 2*1 + 2*1 + 2*2
        assert_eq!(receptive_field(&spec).unwrap(), 9);
    }

    #[test]
    fn dilation_scales_contribution() {
        assert_eq!(receptive_field(&seq(vec![LayerSpec::conv(3, 1, 4, 1)])).unwrap(), 9);
    }

    #[test]
    fn non_positive_parameters_rejected() {
        assert!(receptive_field(&seq(vec![LayerSpec::conv(3, 1, 0, 1)])).is_err());
    }

    #[test]
    fn discriminator_is_70() {
        assert_eq!(receptive_field(&ModelSpec::patchgan(1, 8)).unwrap(), 70);
    }

    #[test]
    fn identity_network_measures_one() {
        let net = Network::build_unchecked(&seq(vec![LayerSpec::conv(1, 1, 1, 1)]), 0).unwrap();
        assert_eq!(measure_receptive_field(&net).unwrap(), 1);
    }

    #[test]
    fn five_by_five_conv_measures_five() {
        let net = Network::build_unchecked(&seq(vec![LayerSpec::conv(5, 1, 1, 1)]), 3).unwrap();
        assert_eq!(measure_receptive_field(&net).unwrap(), 5);
    }

    #[test]
    fn small_probe_reports_resize_hint() {
        let net = build_generator(&ModelSpec::preset("U-Net_2_116").unwrap(), 0).unwrap();
        let err = measure_footprint_at(&net, 64).unwrap_err().to_string();
        assert!(err.contains("larger probe"), "{err}");
    }

    #[test]
    fn shallow_preset_probe_matches_analytic() {
        let spec = ModelSpec::preset("U-Net_2_44").unwrap();
        let net = build_generator(&spec, 0).unwrap();
        assert_eq!(measure_receptive_field(&net).unwrap(), 44);
    }

    #[test]
    fn deep_preset_footprint_varies_with_phase() {
        // A single pixel's footprint spans 92 or 100 pixels depending on
        // its phase; the average matches the recurrence.
        let spec = ModelSpec::preset_with("U-Net_3_96", 1, 1, Some(2)).unwrap();
        let f = measure_footprint(&build_generator(&spec, 0).unwrap()).unwrap();
        assert_eq!((f.min, f.max), (92, 100));
        assert_eq!(f.mean, 96.0);
    }
}
