pub mod checks;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fcn;
pub mod label;
pub mod scenes;
pub mod tensor;
pub mod train;
pub mod valve;

pub use error::{Error, Result};
pub use label::LabelMap;
pub use tensor::{Shape, Tensor};
