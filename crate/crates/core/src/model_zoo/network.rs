use std::collections::BTreeMap;

use candle_core::{DType, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::spec::{Family, LayerKind, LayerSpec, ModelSpec};

pub const HEAD_NAME: &str = "head";
const NORM_EPS: f64 = 1e-5;
const LEAKY_SLOPE: f64 = 0.2;

/// What the final projection produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadTask {
    /// One channel squashed to a probability.
    Segmentation,
    /// `out_channels` unbounded channels (restoration targets, discriminator scores).
    Regression,
}

impl std::str::FromStr for HeadTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segmentation" => Ok(HeadTask::Segmentation),
            "regression" => Ok(HeadTask::Regression),
            other => Err(Error::InvalidArgument(format!(
                "unknown head task `{other}`; expected `segmentation` or `regression`"
            ))),
        }
    }
}

/// How parameters of a given name are initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamDecl {
    fn conv(prefix: &str, out: usize, inp: usize, k: usize) -> [ParamDecl; 2] {
        let fan_in = inp * k * k;
        [
            ParamDecl {
                name: format!("{prefix}.weight"),
                shape: vec![out, inp, k, k],
                init: Init::Uniform { fan_in },
            },
            ParamDecl {
                name: format!("{prefix}.bias"),
                shape: vec![out],
                init: Init::Uniform { fan_in },
            },
        ]
    }

    fn norm(prefix: &str, ch: usize) -> [ParamDecl; 2] {
        [
            ParamDecl {
                name: format!("{prefix}.weight"),
                shape: vec![ch],
                init: Init::Ones,
            },
            ParamDecl {
                name: format!("{prefix}.bias"),
                shape: vec![ch],
                init: Init::Zeros,
            },
        ]
    }

    pub(crate) fn conv_params(prefix: &str, out: usize, inp: usize, k: usize) -> Vec<ParamDecl> {
        Self::conv(prefix, out, inp, k).to_vec()
    }

    pub(crate) fn norm_params(prefix: &str, ch: usize) -> Vec<ParamDecl> {
        Self::norm(prefix, ch).to_vec()
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Materializes one parameter. Each name draws from its own stream so that
/// adding or removing unrelated layers never shifts other initial values.
pub(crate) fn init_param(decl: &ParamDecl, seed: u64) -> Result<Var> {
    let n: usize = decl.shape.iter().product();
    let data: Vec<f32> = match decl.init {
        Init::Ones => vec![1.0; n],
        Init::Zeros => vec![0.0; n],
        Init::Uniform { fan_in } => {
            let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv1a(&decl.name));
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        }
    };
    let t = Tensor::from_vec(data, decl.shape.as_slice(), &crate::device())?;
    Ok(Var::from_tensor(&t)?)
}

/// Forward-pass switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOpts {
    /// Skip normalization layers. Instance statistics couple every pixel of a
    /// map, so the receptive-field probe runs with them disabled.
    pub bypass_norm: bool,
}

/// A built generator or discriminator with its named parameters.
#[derive(Debug)]
pub struct Network {
    spec: ModelSpec,
    params: BTreeMap<String, Var>,
    head_name: String,
    head_task: HeadTask,
    head_channels: usize,
}

impl Clone for Network {
    /// Deep copy; the clone does not share parameter storage.
    fn clone(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|(k, v)| Ok((k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?)))
            .collect::<Result<BTreeMap<_, _>>>()
            .expect("copying CPU tensors cannot fail");
        Self {
            spec: self.spec.clone(),
            params,
            head_name: self.head_name.clone(),
            head_task: self.head_task,
            head_channels: self.head_channels,
        }
    }
}

/// Builds a generator (`unet` or `hrnet`) with seeded random parameters.
pub fn build_generator(spec: &ModelSpec, seed: u64) -> Result<Network> {
    if !spec.is_generator() {
        return Err(Error::Spec(format!(
            "{}: build_generator needs a unet or hrnet spec, got {:?}",
            spec.name, spec.family
        )));
    }
    spec.validate()?;
    Network::build_unchecked(spec, seed)
}

/// Builds a patch discriminator with seeded random parameters.
pub fn build_discriminator(spec: &ModelSpec, seed: u64) -> Result<Network> {
    if spec.family != Family::PatchganDisc {
        return Err(Error::Spec(format!(
            "{}: build_discriminator needs a patchgan_disc spec, got {:?}",
            spec.name, spec.family
        )));
    }
    spec.validate()?;
    Network::build_unchecked(spec, seed)
}

impl Network {
    /// Builds any layer sequence without family-level validation (layer
    /// parameters are still checked). Used for probes and ad-hoc models.
    pub fn build_unchecked(spec: &ModelSpec, seed: u64) -> Result<Self> {
        for l in &spec.stage_layers {
            l.validate()?;
        }
        let decls = declare_params(spec)?;
        let mut params = BTreeMap::new();
        for decl in &decls {
            if params.insert(decl.name.clone(), init_param(decl, seed)?).is_some() {
                return Err(Error::Spec(format!("duplicate parameter name {}", decl.name)));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            params,
            head_name: HEAD_NAME.to_string(),
            head_task: HeadTask::Regression,
            head_channels: spec.out_channels,
        })
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        params: BTreeMap<String, Var>,
        head_task: HeadTask,
        head_channels: usize,
    ) -> Result<Self> {
        let net = Self {
            spec,
            params,
            head_name: HEAD_NAME.to_string(),
            head_task,
            head_channels,
        };
        let mut expected = net.declare()?;
        expected.sort_by(|a, b| a.name.cmp(&b.name));
        if expected.len() != net.params.len() {
            return Err(Error::Spec(format!(
                "parameter set has {} entries, spec declares {}",
                net.params.len(),
                expected.len()
            )));
        }
        for decl in &expected {
            let var = net.params.get(&decl.name).ok_or_else(|| {
                Error::Spec(format!("missing parameter {}", decl.name))
            })?;
            if var.dims() != decl.shape.as_slice() {
                return Err(Error::Spec(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    decl.name,
                    var.dims(),
                    decl.shape
                )));
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn head_name(&self) -> &str {
        &self.head_name
    }

    pub fn head_task(&self) -> HeadTask {
        self.head_task
    }

    /// Channels emitted by the current head.
    pub fn output_channels(&self) -> usize {
        self.head_channels
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    /// Whether `name` belongs to the task head.
    pub fn is_head_param(&self, name: &str) -> bool {
        name.strip_prefix(self.head_name.as_str())
            .is_some_and(|rest| rest.starts_with('.'))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copy of every parameter tensor.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites parameters in place from a snapshot taken of this network.
    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.params {
            let t = snapshot
                .get(name)
                .ok_or_else(|| Error::Spec(format!("snapshot lacks parameter {name}")))?;
            var.set(t)?;
        }
        Ok(())
    }

    /// Stable digest of all parameter values; used to assert that evaluation
    /// leaves a model untouched.
    pub fn param_digest(&self) -> Result<u64> {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (name, var) in &self.params {
            h ^= fnv1a(name);
            for v in var.as_tensor().flatten_all()?.to_vec1::<f32>()? {
                h ^= u64::from(v.to_bits());
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        Ok(h)
    }

    pub(crate) fn declare(&self) -> Result<Vec<ParamDecl>> {
        let mut decls = declare_params(&self.spec)?;
        let head_in = head_input_channels(&self.spec)?;
        let head = self
            .spec
            .stage_layers
            .last()
            .copied()
            .ok_or_else(|| Error::Spec("empty layer list".into()))?;
        decls.retain(|d| !d.name.starts_with("head."));
        decls.extend(ParamDecl::conv(HEAD_NAME, self.head_channels, head_in, head.kernel));
        Ok(decls)
    }

    pub(crate) fn set_head(
        &mut self,
        task: HeadTask,
        channels: usize,
        seed: u64,
    ) -> Result<()> {
        let head = self
            .spec
            .stage_layers
            .last()
            .copied()
            .ok_or_else(|| Error::Spec("empty layer list".into()))?;
        let head_in = head_input_channels(&self.spec)?;
        self.params.retain(|k, _| !k.starts_with("head."));
        for decl in ParamDecl::conv(HEAD_NAME, channels, head_in, head.kernel) {
            let var = init_param(&decl, seed)?;
            self.params.insert(decl.name, var);
        }
        self.head_task = task;
        self.head_channels = channels;
        Ok(())
    }

    /// Runs the network on an `(N, C, H, W)` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(&self.params, x, ForwardOpts::default(), None)
    }

    /// Forward pass that also returns the output of every body layer, keyed
    /// by its parameter prefix.
    pub fn forward_trace(&self, x: &Tensor) -> Result<(Tensor, Vec<(String, Tensor)>)> {
        let mut trace = Vec::new();
        let y = self.forward_with(&self.params, x, ForwardOpts::default(), Some(&mut trace))?;
        Ok((y, trace))
    }

    pub(crate) fn forward_with(
        &self,
        params: &BTreeMap<String, Var>,
        x: &Tensor,
        opts: ForwardOpts,
        trace: Option<&mut Vec<(String, Tensor)>>,
    ) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "{} expects {} input channels, got {c}",
                self.spec.name, self.spec.in_channels
            )));
        }
        let div = self.spec.spatial_divisor();
        if h % div != 0 || w % div != 0 {
            return Err(Error::Shape(format!(
                "{}: input {h}x{w} is not divisible by {div}",
                self.spec.name
            )));
        }
        let ctx = Ctx {
            params,
            opts,
            leaky: self.spec.family == Family::PatchganDisc,
        };
        let y = match self.spec.family {
            Family::Hrnet => super::hrnet::forward(&self.spec, &ctx, x, trace)?,
            _ => forward_sequential(&self.spec, &ctx, x, trace)?,
        };
        Ok(match self.head_task {
            HeadTask::Segmentation => candle_nn::ops::sigmoid(&y)?,
            HeadTask::Regression => y,
        })
    }
}

/// Parameter lookup plus per-call switches.
pub(crate) struct Ctx<'a> {
    pub params: &'a BTreeMap<String, Var>,
    pub opts: ForwardOpts,
    pub leaky: bool,
}

impl Ctx<'_> {
    fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|v| v.as_tensor())
            .ok_or_else(|| Error::Spec(format!("missing parameter {name}")))
    }

    pub fn conv(
        &self,
        prefix: &str,
        x: &Tensor,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Tensor> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let b = self.get(&format!("{prefix}.bias"))?;
        let y = x.conv2d(w, padding, stride, dilation, 1)?;
        let b = b.reshape((1, b.dim(0)?, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }

    pub fn conv_layer(&self, prefix: &str, x: &Tensor, l: &LayerSpec) -> Result<Tensor> {
        self.conv(prefix, x, l.stride, l.padding(), l.dilation)
    }

    pub fn norm(&self, prefix: &str, x: &Tensor) -> Result<Tensor> {
        if self.opts.bypass_norm {
            return Ok(x.clone());
        }
        let mean = x.mean_keepdim(3)?.mean_keepdim(2)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        let ch = x.dim(1)?;
        let g = self.get(&format!("{prefix}.weight"))?.reshape((1, ch, 1, 1))?;
        let b = self.get(&format!("{prefix}.bias"))?.reshape((1, ch, 1, 1))?;
        Ok(normed.broadcast_mul(&g)?.broadcast_add(&b)?)
    }

    pub fn act(&self, x: &Tensor) -> Result<Tensor> {
        if self.leaky {
            Ok(candle_nn::ops::leaky_relu(x, LEAKY_SLOPE)?)
        } else {
            Ok(x.relu()?)
        }
    }

    /// conv, norm, act, conv, norm, skip add, act.
    pub fn residual(&self, prefix: &str, x: &Tensor, l: &LayerSpec) -> Result<Tensor> {
        let pad = l.padding();
        let y = self.conv(&format!("{prefix}.conv1"), x, 1, pad, l.dilation)?;
        let y = self.act(&self.norm(&format!("{prefix}.norm1"), &y)?)?;
        let y = self.conv(&format!("{prefix}.conv2"), &y, 1, pad, l.dilation)?;
        let y = self.norm(&format!("{prefix}.norm2"), &y)?;
        let proj = format!("{prefix}.proj.weight");
        let skip = if self.params.contains_key(&proj) {
            self.conv(&format!("{prefix}.proj"), x, 1, 0, 1)?
        } else {
            x.clone()
        };
        self.act(&(y + skip)?)
    }
}

/// Nearest-neighbour upsampling built from broadcast + reshape so that the
/// gradient accumulates correctly when the input feeds several branches.
pub(crate) fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, factor, w, factor))?
        .reshape((n, c, h * factor, w * factor))?)
}

fn layer_prefix(i: usize, len: usize) -> String {
    if i + 1 == len {
        HEAD_NAME.to_string()
    } else {
        format!("s{i:02}")
    }
}

fn head_input_channels(spec: &ModelSpec) -> Result<usize> {
    if spec.family == Family::Hrnet {
        return super::hrnet::head_input_channels(spec);
    }
    let mut c = spec.in_channels;
    let mut skips = Vec::new();
    let last = spec.stage_layers.len().saturating_sub(1);
    for l in &spec.stage_layers[..last] {
        c = step_channels(l, c, &mut skips)?;
    }
    Ok(c)
}

fn step_channels(l: &LayerSpec, c: usize, skips: &mut Vec<usize>) -> Result<usize> {
    Ok(match l.kind {
        LayerKind::Conv | LayerKind::Up | LayerKind::ResidualBlock => l.channels,
        LayerKind::Down => {
            skips.push(c);
            l.channels
        }
        LayerKind::SkipMerge => {
            c + skips
                .pop()
                .ok_or_else(|| Error::Spec("skip_merge without a pending skip".into()))?
        }
        LayerKind::Norm | LayerKind::Activation => c,
    })
}

pub(crate) fn declare_params(spec: &ModelSpec) -> Result<Vec<ParamDecl>> {
    if spec.family == Family::Hrnet {
        return super::hrnet::declare_params(spec);
    }
    let mut decls = Vec::new();
    let mut c = spec.in_channels;
    let mut skips = Vec::new();
    let len = spec.stage_layers.len();
    if len == 0 {
        return Err(Error::Spec(format!("{}: empty layer list", spec.name)));
    }
    for (i, l) in spec.stage_layers.iter().enumerate() {
        let p = layer_prefix(i, len);
        match l.kind {
            LayerKind::Conv | LayerKind::Down => {
                decls.extend(ParamDecl::conv(&p, l.channels, c, l.kernel))
            }
            LayerKind::Up => decls.extend(ParamDecl::conv(&p, l.channels, c, 1)),
            LayerKind::Norm => decls.extend(ParamDecl::norm(&p, c)),
            LayerKind::ResidualBlock => {
                let out = l.channels;
                decls.extend(ParamDecl::conv(&format!("{p}.conv1"), out, c, l.kernel));
                decls.extend(ParamDecl::norm(&format!("{p}.norm1"), out));
                decls.extend(ParamDecl::conv(&format!("{p}.conv2"), out, out, l.kernel));
                decls.extend(ParamDecl::norm(&format!("{p}.norm2"), out));
                if out != c {
                    decls.extend(ParamDecl::conv(&format!("{p}.proj"), out, c, 1));
                }
            }
            LayerKind::Activation | LayerKind::SkipMerge => {}
        }
        c = step_channels(l, c, &mut skips)?;
    }
    if !skips.is_empty() {
        return Err(Error::Spec(format!(
            "{}: {} down layers are never merged back",
            spec.name,
            skips.len()
        )));
    }
    Ok(decls)
}

fn forward_sequential(
    spec: &ModelSpec,
    ctx: &Ctx<'_>,
    x: &Tensor,
    mut trace: Option<&mut Vec<(String, Tensor)>>,
) -> Result<Tensor> {
    let len = spec.stage_layers.len();
    let mut x = x.clone();
    let mut skips: Vec<Tensor> = Vec::new();
    for (i, l) in spec.stage_layers.iter().enumerate() {
        let p = layer_prefix(i, len);
        x = match l.kind {
            LayerKind::Conv => ctx.conv_layer(&p, &x, l)?,
            LayerKind::Down => {
                skips.push(x.clone());
                ctx.conv(&p, &x, l.stride, l.padding(), 1)?
            }
            LayerKind::Up => {
                let up = upsample_nearest(&x, l.stride)?;
                ctx.conv(&p, &up, 1, 0, 1)?
            }
            LayerKind::Norm => ctx.norm(&p, &x)?,
            LayerKind::Activation => ctx.act(&x)?,
            LayerKind::ResidualBlock => ctx.residual(&p, &x, l)?,
            LayerKind::SkipMerge => {
                let skip = skips
                    .pop()
                    .ok_or_else(|| Error::Spec("skip_merge without a pending skip".into()))?;
                if skip.dims()[2..] != x.dims()[2..] {
                    return Err(Error::Shape(format!(
                        "skip {:?} does not match decoder {:?}",
                        skip.dims(),
                        x.dims()
                    )));
                }
                Tensor::cat(&[&x, &skip], 1)?
            }
        };
        if i + 1 < len {
            if let Some(t) = trace.as_deref_mut() {
                t.push((p, x.clone()));
            }
        }
    }
    Ok(x)
}

/// Converts parameters to another dtype; used by the receptive-field probe.
pub(crate) fn cast_params(
    params: &BTreeMap<String, Var>,
    dtype: DType,
    f: impl Fn(&str, &Tensor) -> Result<Tensor>,
) -> Result<BTreeMap<String, Var>> {
    params
        .iter()
        .map(|(k, v)| {
            let t = f(k, &v.as_tensor().to_dtype(dtype)?)?;
            Ok((k.clone(), Var::from_tensor(&t)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::spec::{ModelSpec, DISC_PRESET};

    fn input(n: usize, c: usize, h: usize, w: usize) -> Tensor {
        let data: Vec<f32> = (0..n * c * h * w).map(|i| ((i * 37 % 101) as f32) / 50.0 - 1.0).collect();
        Tensor::from_vec(data, (n, c, h, w), &crate::device()).unwrap()
    }

    #[test]
    fn generator_preserves_shape() {
        let spec = ModelSpec::preset("U-Net_2_44").unwrap();
        let net = build_generator(&spec, 0).unwrap();
        let y = net.forward(&input(2, 1, 32, 48)).unwrap();
        assert_eq!(y.dims(), &[2, 1, 32, 48]);
    }

    #[test]
    fn deep_unet_on_448_keeps_448() {
        let spec = ModelSpec::preset_with("U-Net_4_424", 1, 1, Some(2)).unwrap();
        let net = build_generator(&spec, 0).unwrap();
        let y = net.forward(&input(1, 1, 448, 448)).unwrap();
        assert_eq!(y.dims(), &[1, 1, 448, 448]);
    }

    #[test]
    fn output_channels_follow_spec() {
        let spec = ModelSpec::preset_with("U-Net_3_96", 2, 3, None).unwrap();
        let net = build_generator(&spec, 1).unwrap();
        assert_eq!(net.forward(&input(1, 2, 16, 16)).unwrap().dims(), &[1, 3, 16, 16]);
    }

    #[test]
    fn indivisible_input_rejected() {
        let spec = ModelSpec::preset("U-Net_2_44").unwrap();
        let net = build_generator(&spec, 0).unwrap();
        let err = net.forward(&input(1, 1, 30, 32)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn seeded_build_is_bitwise_reproducible() {
        let spec = ModelSpec::preset("U-Net_2_84").unwrap();
        let a = build_generator(&spec, 42).unwrap();
        let b = build_generator(&spec, 42).unwrap();
        let c = build_generator(&spec, 43).unwrap();
        assert_eq!(a.param_digest().unwrap(), b.param_digest().unwrap());
        assert_ne!(a.param_digest().unwrap(), c.param_digest().unwrap());
    }

    #[test]
    fn discriminator_consumes_pairs_and_scores_patches() {
        let spec = ModelSpec::patchgan(1, 4);
        assert_eq!(spec.in_channels, 2);
        let d = build_discriminator(&spec, 0).unwrap();
        let scores = d.forward(&input(1, 2, 256, 256)).unwrap();
        let (_, c, h, w) = scores.dims4().unwrap();
        assert_eq!(c, 1);
        assert!(h >= 1 && w >= 1);
        assert_eq!((h, w), (30, 30));
        let again = build_discriminator(&spec, 0).unwrap();
        assert_eq!(d.param_digest().unwrap(), again.param_digest().unwrap());
    }

    #[test]
    fn discriminator_rejects_unpaired_input() {
        let d = build_discriminator(&ModelSpec::preset(DISC_PRESET).unwrap(), 0).unwrap();
        assert!(matches!(d.forward(&input(1, 1, 64, 64)), Err(Error::Shape(_))));
    }

    #[test]
    fn builders_check_family() {
        let disc = ModelSpec::preset(DISC_PRESET).unwrap();
        assert!(build_generator(&disc, 0).is_err());
        let gen = ModelSpec::preset("U-Net_2_44").unwrap();
        assert!(build_discriminator(&gen, 0).is_err());
    }

    #[test]
    fn parameter_names_unique_and_stable() {
        let spec = ModelSpec::preset("U-Net_3_240").unwrap();
        let decls = declare_params(&spec).unwrap();
        let mut names: Vec<_> = decls.iter().map(|d| d.name.clone()).collect();
        let before = names.len();
        names.sort();
        names.dedup();
        assert_eq!(before, names.len());
        let net = build_generator(&spec, 0).unwrap();
        assert_eq!(net.params().len(), before);
    }

    #[test]
    fn parameter_count_grows_with_depth() {
        let counts: Vec<usize> = ["U-Net_2_44", "U-Net_3_96", "U-Net_4_200"]
            .iter()
            .map(|n| build_generator(&ModelSpec::preset(n).unwrap(), 0).unwrap().parameter_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    }

    #[test]
    fn upsample_gradient_accumulates_across_branches() {
        let x = Var::from_tensor(&input(1, 1, 2, 2)).unwrap();
        let up = upsample_nearest(x.as_tensor(), 2).unwrap();
        let loss = (up.sum_all().unwrap() + x.as_tensor().sum_all().unwrap()).unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(g, vec![5.0; 4]);
    }
}
