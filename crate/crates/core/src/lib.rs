//! Convolutional LSTM encoder for cloud-affected satellite image time series,
//! with a synthetic data generator, a from-scratch training loop, gate
//! diagnostics and a command-line front end.

pub mod cli;
pub mod convlstm;
pub mod error;
pub mod metrics;
pub mod synthdata;
pub mod tensor;
pub mod train;
pub mod viz;

pub use convlstm::{CellConfig, ConvLstmParams, EncoderParams, GateTrace};
pub use error::{Error, Result};
pub use synthdata::{CloudMask, Dataset, ImageSequence, LabelMap, SceneConfig};
pub use tensor::Tensor;
pub use train::TrainConfig;
