pub mod analysis;
pub mod budget;
pub mod env;
pub mod error;
pub mod grpo;
pub mod mask;
pub mod numeric;
pub mod scorer;
pub mod sft;

pub use error::{Error, Result};
pub use mask::RetentionMask;
