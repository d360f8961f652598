//! Minimal deterministic neural-network engine: tensors, a fixed layer set,
//! forward/backward, SGD with momentum, and a finite-difference oracle.

pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod net;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::finite_diff_check;
pub use layer::{check_spec, count_params, FeatureShape, LayerSpec};
pub use loss::{cross_entropy, mse};
pub use net::{backward, forward, forward_only, ForwardCache};
pub use optim::{sgd_step, OptState};
pub use params::{init_params, validate_chain, GradSet, LayerParams, ParamSet};
pub use tensor::Tensor;
