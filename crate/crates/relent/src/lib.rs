//! Standard-library side of the relative-energy laboratory: configuration,
//! ensemble scheduling, file output and the `relent` command line.

pub mod config;
pub mod dispatch;
pub mod ensemble;
pub mod output;
