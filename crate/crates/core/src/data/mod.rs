//! Files in and out: PGM images, CSV manifests, the synthetic generator,
//! in-memory image sets and report writers.

pub mod dataset;
pub mod manifest;
pub mod pgm;
pub mod report;
pub mod synth;

pub use dataset::ImageSet;
pub use manifest::{load_manifest, write_manifest, Label, Manifest, Sample};
pub use pgm::{read_pgm, write_pgm};
pub use synth::{generate_synthetic, SynthConfig};
