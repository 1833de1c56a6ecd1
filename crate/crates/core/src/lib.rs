mod error;
pub mod backbone;
pub mod head;
pub mod nn;
pub mod planner;
pub mod scene;
pub mod seed;

pub use error::{Error, Result};
