//! Generator and discriminator architectures.

pub mod hrnet;
pub mod network;
pub mod rf;
pub mod spec;
pub mod transfer;

pub use network::{build_discriminator, build_generator, ForwardOpts, HeadTask, Network, HEAD_NAME};
pub use rf::{measure_footprint, measure_footprint_at, measure_receptive_field, receptive_field, Footprint};
pub use spec::{
    preset_names, unet_preset_names, Family, HrnetSpec, LayerKind, LayerSpec, ModelSpec,
    DISC_PRESET, HRNET_PRESET, UNET_RF_TABLE,
};
pub use transfer::{replace_head, transfer_weights, TransferReport};
