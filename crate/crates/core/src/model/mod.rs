//! The shallow/deep feature fusion classifier: bundles, network, training
//! and evaluation.

mod bundle;
mod net;
mod train;

pub use bundle::{FeatureBundle, FeatureMask, Label, NetInput, Normalizer, N_COEFFS, N_SHALLOW};
pub use net::{ForwardCache, TamperNet, TamperNetConfig};
pub use train::{evaluate, predict_labels, train, Confusion, EpochRecord, History, Metrics, TrainConfig, TrainedModel};
