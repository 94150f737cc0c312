//! Files, synthetic data and the command-line front end for `resetlp-core`.

pub mod cli;
pub mod io;
pub mod sweep;
pub mod synth;
