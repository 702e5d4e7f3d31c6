//! Dataset sources and the on-disk dataset format.

mod io;
mod modelnet;
mod off;
mod surface;
mod synth;

pub use io::{encode_split, load_dataset, load_manifest, save_dataset, Manifest, SplitEntry, MANIFEST};
pub use modelnet::{load_modelnet_subset, DEFAULT_CLASSES, DEFAULT_POINTS, SUPER_TYPES};
pub use off::{emit_off, parse_off, TriangleMesh};
pub use surface::{sample_surface, surface_points};
pub use synth::{synth_cloud, synth_generate, without_sensitive_region, SynthConfig, ARCHETYPES};
