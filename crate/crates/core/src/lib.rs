pub mod ablation;
pub mod affine;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod explain;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod proto;
pub mod push;
pub mod synth;
pub mod train;
pub mod types;
