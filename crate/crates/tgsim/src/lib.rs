//! File formats, benchmarking and the command-line driver for the
//! `tgsim-core` traffic microsimulator.

pub mod bench;
pub mod cli;
pub mod formats;

pub use formats::FormatError;
