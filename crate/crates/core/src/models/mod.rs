//! Layer graphs, the two classifier architectures, and model files.

mod extractor;
mod graph;
mod io;
mod layer;
mod zoo;

pub use extractor::{FeatureExtractor, StubConfig, StubFeatureExtractor};
pub use graph::{GraphBuilder, Gradients, ModelGraph, NodeId, NodeSpec, Trace, WeightStore, BIAS_INIT};
pub use io::{decode_model, encode_model, load_model, load_model_matching, save_model, FORMAT_VERSION, MAGIC};
pub use layer::LayerSpec;
pub use zoo::{
    build_binary_head, build_small_inception, build_transfer_model, inception_module,
    Architecture, InceptionModuleSpec, SmallInceptionConfig, TransferConfig,
};
