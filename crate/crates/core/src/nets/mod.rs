//! Network components: encoders, heads, the parameter bundle with its
//! momentum update, and checkpoint persistence.

mod bundle;
mod checkpoint;
mod encoder;
mod heads;
mod layers;
mod tensor;

pub use bundle::{EnvCache, ModelBundle, ParamLayout, QueryCache};
pub use checkpoint::{load_checkpoint, params_identical, save_checkpoint, CheckpointMeta};
pub use encoder::{Encoder, EncoderCache};
pub use heads::{Mlp, MlpCache};
pub use layers::{relu, relu_backward, Conv2d, Linear};
pub use tensor::{l2_normalize, l2_normalize_backward, Tensor};
