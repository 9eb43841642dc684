pub mod anomaly_detection;
pub mod data_io;
pub mod dictionary_learning;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod online_learning;
pub mod persistence;
pub mod rng;
pub mod sparse_coding;
pub mod supervised_pretrain;

pub use error::{Error, ErrorKind, Result};
