//! Network assembly: stacked, residual and layer-trajectory variants.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{decode, encode, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use config::{FactorizedGates, Lane, NetworkConfig, Variant, NETWORK_KEYS};
pub use forward::{
    forward_frame, forward_frame_traced, forward_sequence, forward_sequence_traced, layer_scan_batch,
    output_layer_batch, strided, time_lane, FrameStates, FrameTrace, SequenceTrace,
};
pub use params::NetworkParams;
