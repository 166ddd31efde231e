pub mod attention;
pub mod error;
pub mod metrics;
pub mod sot;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{FeatureTensor, TensorFile};
