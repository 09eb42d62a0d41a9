//! High-resolution network generator.
//!
//! Stream `i` runs at `1/2^i` of the input resolution with `width * 2^i`
//! channels. Stage `k` (1-based) carries `k` streams: a new lower-resolution
//! stream is branched off by a strided 3x3 convolution, every stream runs
//! its residual blocks, and the streams are fused by summing resampled
//! copies of each other. The head upsamples all streams to full resolution,
//! concatenates them and projects back to the output channels, so the image
//! size is preserved.

use candle_core::Tensor;

use crate::error::{Error, Result};

use super::network::{upsample_nearest, Ctx, ParamDecl};
use super::spec::{HrnetSpec, LayerSpec, ModelSpec};

fn cfg(spec: &ModelSpec) -> Result<&HrnetSpec> {
    spec.hrnet
        .as_ref()
        .ok_or_else(|| Error::Spec(format!("{}: missing hrnet section", spec.name)))
}

fn width(cfg: &HrnetSpec, stream: usize) -> usize {
    cfg.width << stream
}

/// Layer sequence along the path that branches down at every transition
/// and comes back up only in the head.
pub(crate) fn deepest_path(cfg: &HrnetSpec, out_channels: usize) -> Vec<LayerSpec> {
    let mut layers = vec![
        LayerSpec::conv(3, 1, 1, cfg.width),
        LayerSpec::norm(),
        LayerSpec::activation(),
        LayerSpec::conv(3, 1, 1, cfg.width),
        LayerSpec::norm(),
        LayerSpec::activation(),
    ];
    for stream in 0..cfg.streams {
        if stream > 0 {
            layers.push(LayerSpec::down(3, 2, width(cfg, stream)));
        }
        for _ in 0..cfg.blocks_per_stage {
            layers.push(LayerSpec::residual(3, 1, width(cfg, stream)));
        }
    }
    if cfg.streams > 1 {
        layers.push(LayerSpec::up(1 << (cfg.streams - 1), cfg.width));
    }
    layers.push(LayerSpec::conv(1, 1, 1, out_channels));
    layers
}

fn residual_decls(prefix: &str, ch: usize, decls: &mut Vec<ParamDecl>) {
    decls.extend(ParamDecl::conv_params(&format!("{prefix}.conv1"), ch, ch, 3));
    decls.extend(ParamDecl::norm_params(&format!("{prefix}.norm1"), ch));
    decls.extend(ParamDecl::conv_params(&format!("{prefix}.conv2"), ch, ch, 3));
    decls.extend(ParamDecl::norm_params(&format!("{prefix}.norm2"), ch));
}

pub(crate) fn head_input_channels(spec: &ModelSpec) -> Result<usize> {
    Ok(cfg(spec)?.width)
}

pub(crate) fn declare_params(spec: &ModelSpec) -> Result<Vec<ParamDecl>> {
    let cfg = cfg(spec)?;
    let mut d = Vec::new();
    d.extend(ParamDecl::conv_params("stem.conv1", cfg.width, spec.in_channels, 3));
    d.extend(ParamDecl::norm_params("stem.norm1", cfg.width));
    d.extend(ParamDecl::conv_params("stem.conv2", cfg.width, cfg.width, 3));
    d.extend(ParamDecl::norm_params("stem.norm2", cfg.width));
    for stage in 1..=cfg.streams {
        if stage > 1 {
            let (src, dst) = (width(cfg, stage - 2), width(cfg, stage - 1));
            d.extend(ParamDecl::conv_params(&format!("t{stage}.conv"), dst, src, 3));
            d.extend(ParamDecl::norm_params(&format!("t{stage}.norm"), dst));
        }
        for i in 0..stage {
            for b in 0..cfg.blocks_per_stage {
                residual_decls(&format!("st{stage}.b{i}.r{b}"), width(cfg, i), &mut d);
            }
        }
        if stage > 1 {
            for j in 0..stage {
                for i in 0..stage {
                    let p = format!("st{stage}.f{i}{j}");
                    if i > j {
                        d.extend(ParamDecl::conv_params(
                            &format!("{p}.conv"),
                            width(cfg, j),
                            width(cfg, i),
                            1,
                        ));
                        d.extend(ParamDecl::norm_params(&format!("{p}.norm"), width(cfg, j)));
                    } else if i < j {
                        for s in 0..(j - i) {
                            let out = if s + 1 == j - i { width(cfg, j) } else { width(cfg, i) };
                            d.extend(ParamDecl::conv_params(
                                &format!("{p}.d{s}"),
                                out,
                                width(cfg, i),
                                3,
                            ));
                            d.extend(ParamDecl::norm_params(&format!("{p}.n{s}"), out));
                        }
                    }
                }
            }
        }
    }
    let total: usize = (0..cfg.streams).map(|i| width(cfg, i)).sum();
    d.extend(ParamDecl::conv_params("final.conv", cfg.width, total, 1));
    d.extend(ParamDecl::norm_params("final.norm", cfg.width));
    d.extend(ParamDecl::conv_params(
        super::network::HEAD_NAME,
        spec.out_channels,
        cfg.width,
        1,
    ));
    Ok(d)
}

fn fuse(ctx: &Ctx<'_>, stage: usize, xs: &[Tensor]) -> Result<Vec<Tensor>> {
    let n = xs.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut acc = xs[j].clone();
        for (i, xi) in xs.iter().enumerate() {
            let p = format!("st{stage}.f{i}{j}");
            if i > j {
                let y = ctx.conv(&format!("{p}.conv"), xi, 1, 0, 1)?;
                let y = ctx.norm(&format!("{p}.norm"), &y)?;
                acc = (acc + upsample_nearest(&y, 1 << (i - j))?)?;
            } else if i < j {
                let mut y = xi.clone();
                for s in 0..(j - i) {
                    y = ctx.conv(&format!("{p}.d{s}"), &y, 2, 1, 1)?;
                    y = ctx.norm(&format!("{p}.n{s}"), &y)?;
                    if s + 1 < j - i {
                        y = ctx.act(&y)?;
                    }
                }
                acc = (acc + y)?;
            }
        }
        out.push(ctx.act(&acc)?);
    }
    Ok(out)
}

pub(crate) fn forward(
    spec: &ModelSpec,
    ctx: &Ctx<'_>,
    x: &Tensor,
    mut trace: Option<&mut Vec<(String, Tensor)>>,
) -> Result<Tensor> {
    let cfg = cfg(spec)?;
    let mut record = |name: String, t: &Tensor| {
        if let Some(tr) = trace.as_deref_mut() {
            tr.push((name, t.clone()));
        }
    };
    let y = ctx.conv("stem.conv1", x, 1, 1, 1)?;
    let y = ctx.act(&ctx.norm("stem.norm1", &y)?)?;
    let y = ctx.conv("stem.conv2", &y, 1, 1, 1)?;
    let y = ctx.act(&ctx.norm("stem.norm2", &y)?)?;
    record("stem".into(), &y);

    let mut streams = vec![y];
    for stage in 1..=cfg.streams {
        if stage > 1 {
            let src = &streams[stage - 2];
            let t = ctx.conv(&format!("t{stage}.conv"), src, 2, 1, 1)?;
            let t = ctx.act(&ctx.norm(&format!("t{stage}.norm"), &t)?)?;
            streams.push(t);
        }
        for (i, s) in streams.iter_mut().enumerate() {
            for b in 0..cfg.blocks_per_stage {
                let block = LayerSpec::residual(3, 1, width(cfg, i));
                *s = ctx.residual(&format!("st{stage}.b{i}.r{b}"), s, &block)?;
            }
        }
        if stage > 1 {
            streams = fuse(ctx, stage, &streams)?;
        }
        for (i, s) in streams.iter().enumerate() {
            record(format!("st{stage}.s{i}"), s);
        }
    }

    let ups = streams
        .iter()
        .enumerate()
        .map(|(i, s)| upsample_nearest(s, 1 << i))
        .collect::<Result<Vec<_>>>()?;
    let cat = Tensor::cat(&ups, 1)?;
    let y = ctx.conv("final.conv", &cat, 1, 0, 1)?;
    let y = ctx.act(&ctx.norm("final.norm", &y)?)?;
    record("final".into(), &y);
    ctx.conv(super::network::HEAD_NAME, &y, 1, 0, 1)
}
