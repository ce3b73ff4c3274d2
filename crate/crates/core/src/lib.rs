pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod personalize;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod sample;
pub mod synth;
pub mod taskvec;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
