//! Architecture descriptions, the network built from them, and checkpoints.

mod checkpoint;
mod network;
mod spec;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use network::{param_slots_mut, LayerCache, LayerGrads, Model};
pub use spec::{
    builtin_spec, builtin_specs, count_params, published_param_count, CountPolicy, LayerKind, LayerSpec, ModelMode,
    ModelSpec,
};
