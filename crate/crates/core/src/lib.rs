//! Bi-conformal vector fields: detection, structure tensors and maximal spaces.

pub mod error;
pub mod field;
pub mod geometry;
pub mod linalg;
pub mod manifest;
pub mod maximal;
pub mod report;
pub mod scenarios;
pub mod square_root;
pub mod structure;
pub mod symmetry;
pub mod tensor;

pub use error::{Error, Result};
