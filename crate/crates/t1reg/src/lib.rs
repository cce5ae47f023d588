//! Files, evaluation and the command-line front end around `t1reg-core`.

pub mod cli;
pub mod evaluation;
pub mod io;
pub mod report;

pub use t1reg_core as core;
