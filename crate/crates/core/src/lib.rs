pub mod capacity;
pub mod dirichlet;
pub mod error;
pub mod exec;
pub mod field;
pub mod grid;
pub mod lab;
pub mod measure;
pub mod model;
pub mod psh;
pub mod radial;
pub mod scenario;

pub use error::{Error, ErrorClass, Result};
