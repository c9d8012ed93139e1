//! Declarative network topologies and the networks built from them.

mod network;
mod spec;

pub use network::{
    build_decoder, build_discriminator, build_encoder, build_reid_backbone, Bound, Network, Param, ReidBackbone,
    ReidOutputs, Init, INIT_STD, REID_INIT,
};
pub use spec::{
    infer_shapes, stack_parameter_count, Activation, FeatureShape, LayerSpec, NetworkProfile, ProfileName,
    LEAKY_SLOPE,
};
