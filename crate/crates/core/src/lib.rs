//! Flow-level AllReduce scheduling on data-center topologies.
pub mod baselines;
pub mod env;
pub mod nn;
pub mod policy;
pub mod reference;
pub mod scalar;
pub mod seeds;
pub mod sim;
pub mod topology;
pub mod train;
pub mod workload;

pub use scalar::Scalar;

pub type FtsPolicy = policy::FtsPolicyNet<f64>;
pub type WsPolicy = policy::WsPolicyNet<f64>;
pub type FtsPolicyF32 = policy::FtsPolicyNet<f32>;
pub type WsPolicyF32 = policy::WsPolicyNet<f32>;
pub type Trainer = train::Trainer<f64>;
pub type Checkpoint = train::Checkpoint<f64>;
