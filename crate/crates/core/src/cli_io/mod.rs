//! Configuration, file formats, manifests and the staged command runner.

mod config;
mod dataset;
mod manifest;
mod run;
mod study;

pub use config::*;
pub use dataset::*;
pub use manifest::*;
pub use run::*;
pub use study::*;
