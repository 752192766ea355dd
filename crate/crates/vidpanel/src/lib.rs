//! File formats, remote backends, parallel drivers and the command line for `vidpanel`.

pub mod cli;
pub mod goldens;
pub mod io;
pub mod parallel;
pub mod remote;
