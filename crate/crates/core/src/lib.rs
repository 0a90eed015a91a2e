pub mod artifact;
pub mod autodiff;
pub mod config;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use autodiff::{grad_check, GradCheckReport, Gradients, Graph, Primitive, Var};
pub use distributions::DiagGaussian;
pub use error::{Error, Result, TensorError};
pub use model::{Ablation, AnchorPolicy, Codes, DecoderVariance, Mode, Model, ModelConfig};
pub use objective::{KlRange, LossBreakdown, ObjectiveConfig};
pub use tensor::Tensor;
