pub mod bundle;
pub mod channels;
pub mod error;
pub mod linalg;
pub mod mps;
pub mod soft_torus;
pub mod symmetry;
pub mod walk;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
