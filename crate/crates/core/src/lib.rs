pub mod autodiff;
pub mod error;
pub mod linalg;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub mod experiment;
pub mod mldg;
pub mod models;
pub mod rng;
pub mod rvfl;
pub mod signal;
pub mod sim;
pub mod stream;
