//! IO, the log-mel frontend, file formats and the command-line driver built
//! on `shiftpool-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod frontend;
pub mod io;
pub mod oracle;
pub mod report;
pub mod wav;

pub use error::{Error, Result};
