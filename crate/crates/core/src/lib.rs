pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod nn;
pub mod optim;
pub mod selfcheck;
pub mod train;
pub mod ve;

pub use error::{Error, Result};
pub use exec::Exec;
