//! File formats, run manifests and the `gmc` command line on top of `gmc-core`.

pub mod cli;
pub mod io;
pub mod manifest;
