pub mod assume;
pub mod cfa;
pub mod collect;
pub mod compare;
pub mod efa;
pub mod error;
pub mod instrument;
pub mod numcore;
pub mod pipeline;

pub use error::{Error, Result};
