pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod layers;
pub mod model;
pub mod rng;
pub mod snp;
pub mod tdm;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
