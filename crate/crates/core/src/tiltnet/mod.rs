//! The tilt classifier: two conv blocks with batchnorm, four linear layers,
//! trained with momentum SGD and a plateau schedule. Everything runs in
//! `f64` on one thread so gradients can be checked numerically and training
//! reruns are bit-identical.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use layers::{BatchNorm, Conv2d, Linear, Mode};
pub use loss::{batch_cross_entropy, cross_entropy, softmax};
pub use model::{batch_input, biframe_input, predict_tilt, LayerSpec, Model, ModelSpec};
pub use optim::{PlateauConfig, PlateauScheduler, SgdMomentum};
pub use tensor::Tensor;
pub use train::{evaluate, fit_dataset, init_seed, train, EpochStats, EvalReport, TrainConfig, TrainReport};
