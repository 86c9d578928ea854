pub mod env;
pub mod eval;
pub mod gnn;
pub mod gradcheck;
pub mod graph;
pub mod policy;
pub mod scalar;
pub mod streams;
pub mod tapegrad;
pub mod config;
pub mod train;

pub use scalar::Scalar;

pub type Tensor = tapegrad::Tensor<f64>;
pub type Tensor32 = tapegrad::Tensor<f32>;
pub type Tape = tapegrad::Tape<f64>;
pub type Tape32 = tapegrad::Tape<f32>;
pub type PolicyNets = policy::PolicyNets<f64>;
pub type PolicyNets32 = policy::PolicyNets<f32>;
pub type Trainer = train::Trainer<f64>;
pub type Trainer32 = train::Trainer<f32>;
