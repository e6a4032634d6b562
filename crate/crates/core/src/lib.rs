pub mod compliance;
pub mod cot;
pub mod detection;
pub mod error;
pub mod eval;
pub mod gateway;
mod http;
pub mod model;
pub mod overlay;
pub mod synth;
pub mod unionfind;

pub use error::{Error, Result};
pub use http::RetryPolicy;
