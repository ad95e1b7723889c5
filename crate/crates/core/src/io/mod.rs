//! On-disk formats: named-tensor container, clip directories, PGM/PPM images.

pub mod clipdir;
pub mod container;
pub mod image;
