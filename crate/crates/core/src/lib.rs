//! Patch-rotate MLP segmentation decoder.
//!
//! A DPR-Block predicts which channels of a feature map to rotate
//! ([`dcsm`]), moves those channels' values around inside small spatial
//! patches ([`rotate`], [`prm`]) and then mixes channels with a per-pixel
//! fully connected layer. Stacks of blocks form the single- and multi-scale
//! decoder heads in [`decoder`]. Everything runs on the small reverse-mode
//! autodiff core in [`tensor`].

pub mod checkpoint;
pub mod dcsm;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod prm;
pub mod registry;
pub mod rotate;
pub mod select;
pub mod tensor;

pub use dcsm::{ChannelSelection, DcsmParams, Mode};
pub use decoder::{BackboneOutput, Decoder, DecoderConfig, DecoderOutput, Forward};
pub use error::{Error, Result};
pub use model::Segmenter;
pub use params::ParamStore;
pub use prm::PrmConfig;
pub use rotate::{PlanCache, RotatePlan};
pub use select::ChannelSelector;
pub use tensor::{LabelMap, Shape, Tensor, IGNORE_INDEX};
