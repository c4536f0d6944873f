pub mod alignment;
pub mod config;
pub mod data;
pub mod eval;
pub mod model;
pub mod nn;
pub mod protocol;
pub mod train;
