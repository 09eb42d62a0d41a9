use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::rf::receptive_field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Unet,
    Hrnet,
    PatchganDisc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Down,
    Up,
    ResidualBlock,
    Norm,
    Activation,
    SkipMerge,
}

/// One entry of a layer sequence.
///
/// `channels` is the output width for layers that change it (`conv`, `down`,
/// `up`, `residual_block`) and is ignored by the others. For `up`, `stride` is
/// the upsampling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default = "one")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub dilation: usize,
    #[serde(default)]
    pub channels: usize,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(kernel: usize, stride: usize, dilation: usize, channels: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            kernel,
            stride,
            dilation,
            channels,
        }
    }

    pub fn down(kernel: usize, stride: usize, channels: usize) -> Self {
        Self {
            kind: LayerKind::Down,
            kernel,
            stride,
            dilation: 1,
            channels,
        }
    }

    pub fn up(factor: usize, channels: usize) -> Self {
        Self {
            kind: LayerKind::Up,
            kernel: 1,
            stride: factor,
            dilation: 1,
            channels,
        }
    }

    pub fn residual(kernel: usize, dilation: usize, channels: usize) -> Self {
        Self {
            kind: LayerKind::ResidualBlock,
            kernel,
            stride: 1,
            dilation,
            channels,
        }
    }

    pub fn norm() -> Self {
        Self::marker(LayerKind::Norm)
    }

    pub fn activation() -> Self {
        Self::marker(LayerKind::Activation)
    }

    pub fn skip_merge() -> Self {
        Self::marker(LayerKind::SkipMerge)
    }

    fn marker(kind: LayerKind) -> Self {
        Self {
            kind,
            kernel: 1,
            stride: 1,
            dilation: 1,
            channels: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::Spec(format!(
                "{:?} layer has non-positive parameters (kernel {}, stride {}, dilation {})",
                self.kind, self.kernel, self.stride, self.dilation
            )));
        }
        let needs_channels = matches!(
            self.kind,
            LayerKind::Conv | LayerKind::Down | LayerKind::Up | LayerKind::ResidualBlock
        );
        if needs_channels && self.channels == 0 {
            return Err(Error::Spec(format!("{:?} layer has zero channels", self.kind)));
        }
        Ok(())
    }

    /// Zero padding giving "same" output size at stride 1.
    pub fn padding(&self) -> usize {
        (self.kernel - 1) * self.dilation / 2
    }
}

/// Multi-resolution stream layout for the HRNet generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HrnetSpec {
    /// Number of parallel resolution streams (stream `i` runs at `1/2^i`).
    pub streams: usize,
    /// Channel width of the full-resolution stream; stream `i` uses `width * 2^i`.
    pub width: usize,
    /// Residual blocks per stream in every stage.
    pub blocks_per_stage: usize,
}

/// Declarative description of a generator or discriminator.
///
/// For `unet` and `patchgan_disc` the network is built by interpreting
/// `stage_layers` in order; the final entry must be a `conv` and becomes the
/// task head. For `hrnet`, the topology comes from `hrnet` and
/// `stage_layers` holds the deepest input-to-output path used for
/// receptive-field accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub family: Family,
    #[serde(default)]
    pub blocks: usize,
    pub stage_layers: Vec<LayerSpec>,
    #[serde(default)]
    pub target_rf: Option<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default)]
    pub hrnet: Option<HrnetSpec>,
}

/// Receptive fields available for each U-Net depth.
pub const UNET_RF_TABLE: [(usize, [usize; 3]); 3] = [
    (2, [44, 84, 116]),
    (3, [96, 176, 240]),
    (4, [200, 360, 424]),
];

/// Default channel width of the full-resolution U-Net stage.
pub const DEFAULT_UNET_WIDTH: usize = 8;
/// Default width of the HRNet full-resolution stream.
pub const DEFAULT_HRNET_WIDTH: usize = 8;
/// Default width of the first discriminator layer.
pub const DEFAULT_DISC_WIDTH: usize = 8;

/// Per-preset layer choices: stem kernel and one dilation per depth level.
///
/// With a 2x2 stride-2 down layer per level and two 3x3 convolutions in
/// every residual block, the receptive field is
/// `stem + 2^B - 1 + 12 * sum_l 2^(l-1) * dilation_l`.
const UNET_LAYOUTS: [(&str, usize, usize, &[usize]); 9] = [
    ("U-Net_2_44", 44, 5, &[1, 1]),
    ("U-Net_2_84", 84, 9, &[2, 2]),
    ("U-Net_2_116", 116, 5, &[3, 3]),
    ("U-Net_3_96", 96, 5, &[1, 1, 1]),
    ("U-Net_3_176", 176, 1, &[2, 2, 2]),
    ("U-Net_3_240", 240, 5, &[1, 3, 3]),
    ("U-Net_4_200", 200, 5, &[1, 1, 1, 1]),
    ("U-Net_4_360", 360, 9, &[2, 1, 2, 2]),
    ("U-Net_4_424", 424, 1, &[2, 2, 3, 2]),
];

pub const HRNET_PRESET: &str = "HRNet";
pub const DISC_PRESET: &str = "PatchGAN_70";

/// Names of every buildable generator preset.
pub fn preset_names() -> Vec<&'static str> {
    UNET_LAYOUTS
        .iter()
        .map(|(name, ..)| *name)
        .chain(std::iter::once(HRNET_PRESET))
        .collect()
}

/// Names of the nine U-Net presets, in ascending depth / receptive field.
pub fn unet_preset_names() -> Vec<&'static str> {
    UNET_LAYOUTS.iter().map(|(name, ..)| *name).collect()
}

fn allowed_rfs(blocks: usize) -> Option<[usize; 3]> {
    UNET_RF_TABLE
        .iter()
        .find(|(b, _)| *b == blocks)
        .map(|(_, rfs)| *rfs)
}

impl ModelSpec {
    /// Looks up a named preset with default widths and single-channel images.
    pub fn preset(name: &str) -> Result<Self> {
        Self::preset_with(name, 1, 1, None)
    }

    /// Looks up a named preset with explicit channel counts. `width`
    /// overrides the base channel width.
    pub fn preset_with(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        width: Option<usize>,
    ) -> Result<Self> {
        if let Some((name, rf, stem, dilations)) =
            UNET_LAYOUTS.iter().find(|(n, ..)| n.eq_ignore_ascii_case(name))
        {
            return Ok(Self::unet(
                name,
                *stem,
                dilations,
                width.unwrap_or(DEFAULT_UNET_WIDTH),
                in_channels,
                out_channels,
                Some(*rf),
            ));
        }
        if name.eq_ignore_ascii_case(HRNET_PRESET) {
            return Ok(Self::hrnet(
                HrnetSpec {
                    streams: 3,
                    width: width.unwrap_or(DEFAULT_HRNET_WIDTH),
                    blocks_per_stage: 1,
                },
                in_channels,
                out_channels,
            ));
        }
        if name.eq_ignore_ascii_case(DISC_PRESET) {
            return Ok(Self::patchgan(
                in_channels,
                width.unwrap_or(DEFAULT_DISC_WIDTH),
            ));
        }
        Err(Error::Spec(format!(
            "unknown model preset `{name}`; available: {}",
            preset_names().join(", ")
        )))
    }

    /// Residual U-Net: a stem convolution, `dilations.len()` encoder levels
    /// (down, residual block) and a mirrored decoder (up, skip merge,
    /// residual block), followed by a 1x1 head.
    pub fn unet(
        name: &str,
        stem_kernel: usize,
        dilations: &[usize],
        width: usize,
        in_channels: usize,
        out_channels: usize,
        target_rf: Option<usize>,
    ) -> Self {
        let blocks = dilations.len();
        let mut layers = vec![
            LayerSpec::conv(stem_kernel, 1, 1, width),
            LayerSpec::norm(),
            LayerSpec::activation(),
        ];
        for (level, &d) in dilations.iter().enumerate() {
            let ch = width << (level + 1);
            layers.push(LayerSpec::down(2, 2, ch));
            layers.push(LayerSpec::norm());
            layers.push(LayerSpec::activation());
            layers.push(LayerSpec::residual(3, d, ch));
        }
        for level in (0..blocks).rev() {
            let ch = width << level;
            layers.push(LayerSpec::up(2, ch));
            layers.push(LayerSpec::skip_merge());
            layers.push(LayerSpec::residual(3, dilations[level], ch));
        }
        layers.push(LayerSpec::conv(1, 1, 1, out_channels));
        Self {
            name: name.to_string(),
            family: Family::Unet,
            blocks,
            stage_layers: layers,
            target_rf,
            in_channels,
            out_channels,
            hrnet: None,
        }
    }

    pub fn hrnet(cfg: HrnetSpec, in_channels: usize, out_channels: usize) -> Self {
        let stage_layers = super::hrnet::deepest_path(&cfg, out_channels);
        Self {
            name: HRNET_PRESET.to_string(),
            family: Family::Hrnet,
            blocks: 0,
            stage_layers,
            target_rf: None,
            in_channels,
            out_channels,
            hrnet: Some(cfg),
        }
    }

    /// 70x70 PatchGAN discriminator over `image_channels`-channel images.
    /// The network consumes the conditioning image concatenated with the
    /// real or generated image, so its input has twice as many channels.
    pub fn patchgan(image_channels: usize, width: usize) -> Self {
        let layers = vec![
            LayerSpec::conv(4, 2, 1, width),
            LayerSpec::activation(),
            LayerSpec::conv(4, 2, 1, width * 2),
            LayerSpec::norm(),
            LayerSpec::activation(),
            LayerSpec::conv(4, 2, 1, width * 4),
            LayerSpec::norm(),
            LayerSpec::activation(),
            LayerSpec::conv(4, 1, 1, width * 8),
            LayerSpec::norm(),
            LayerSpec::activation(),
            LayerSpec::conv(4, 1, 1, 1),
        ];
        Self {
            name: DISC_PRESET.to_string(),
            family: Family::PatchganDisc,
            blocks: 0,
            stage_layers: layers,
            target_rf: Some(70),
            in_channels: image_channels * 2,
            out_channels: 1,
            hrnet: None,
        }
    }

    pub fn is_generator(&self) -> bool {
        matches!(self.family, Family::Unet | Family::Hrnet)
    }

    /// Spatial divisor every input side must be a multiple of.
    pub fn spatial_divisor(&self) -> usize {
        match self.family {
            Family::Hrnet => 1 << self.hrnet.as_ref().map_or(0, |h| h.streams - 1),
            _ => self
                .stage_layers
                .iter()
                .filter(|l| l.kind == LayerKind::Down)
                .map(|l| l.stride)
                .product(),
        }
    }

    /// Checks the family-specific invariants.
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Spec(format!("{}: channel counts must be positive", self.name)));
        }
        for layer in &self.stage_layers {
            layer.validate()?;
        }
        match self.stage_layers.last() {
            Some(l) if l.kind == LayerKind::Conv => {
                if l.channels != self.out_channels {
                    return Err(Error::Spec(format!(
                        "{}: head emits {} channels but out_channels is {}",
                        self.name, l.channels, self.out_channels
                    )));
                }
            }
            _ => {
                return Err(Error::Spec(format!(
                    "{}: the last layer must be a conv head",
                    self.name
                )))
            }
        }
        match self.family {
            Family::Unet => self.validate_unet()?,
            Family::Hrnet => {
                let cfg = self.hrnet.as_ref().ok_or_else(|| {
                    Error::Spec(format!("{}: hrnet family needs an `hrnet` section", self.name))
                })?;
                if cfg.streams == 0 || cfg.width == 0 || cfg.blocks_per_stage == 0 {
                    return Err(Error::Spec(format!(
                        "{}: hrnet streams, width and blocks_per_stage must be positive",
                        self.name
                    )));
                }
            }
            Family::PatchganDisc => {
                if self.in_channels % 2 != 0 {
                    return Err(Error::Spec(format!(
                        "{}: discriminator input must hold a conditioning/target pair \
                         (even channel count), got {}",
                        self.name, self.in_channels
                    )));
                }
            }
        }
        if let Some(target) = self.target_rf {
            let rf = receptive_field(self)?;
            if rf != target {
                return Err(Error::Spec(format!(
                    "{}: layers give receptive field {rf}, target is {target}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    fn validate_unet(&self) -> Result<()> {
        let allowed = allowed_rfs(self.blocks).ok_or_else(|| {
            Error::Spec(format!(
                "{}: U-Net block count must be one of {{2, 3, 4}}, got {}",
                self.name, self.blocks
            ))
        })?;
        if let Some(target) = self.target_rf {
            if !allowed.contains(&target) {
                return Err(Error::Spec(format!(
                    "{}: receptive field {target} is not available for {} blocks; allowed: {:?}",
                    self.name, self.blocks, allowed
                )));
            }
        }
        let count = |k: LayerKind| self.stage_layers.iter().filter(|l| l.kind == k).count();
        let (downs, ups, merges) = (
            count(LayerKind::Down),
            count(LayerKind::Up),
            count(LayerKind::SkipMerge),
        );
        if downs != self.blocks || ups != downs || merges != ups {
            return Err(Error::Spec(format!(
                "{}: expected {} down, up and skip_merge layers each, got {downs}/{ups}/{merges}",
                self.name, self.blocks
            )));
        }
        let mut depth = 0i64;
        for layer in &self.stage_layers {
            match layer.kind {
                LayerKind::Down => depth += 1,
                LayerKind::Up => {
                    depth -= 1;
                    if depth < 0 {
                        return Err(Error::Spec(format!(
                            "{}: up layer without a matching down layer",
                            self.name
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// TOML form of this model description.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("model", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("model", e.to_string()))
    }
}
