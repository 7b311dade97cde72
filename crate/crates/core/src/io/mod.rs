//! File formats: the STF1 tensor container and the model checkpoint.

pub mod checkpoint;
pub mod stf1;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use stf1::{read_stf1, read_stf1_tensor, write_stf1_bytes, write_stf1_tensor, Stf1Array};
