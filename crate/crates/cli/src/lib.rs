//! File formats, configuration and command implementations behind the
//! `vidtome` binary.

pub mod bench;
pub mod config;
pub mod error;
pub mod flowmap;
pub mod latent_file;
pub mod run;

pub use error::{CliError, CliResult};
