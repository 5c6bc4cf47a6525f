//! Synthetic deformation data: random warp fields on a 3×3×3 lattice,
//! trajectories built by applying one field repeatedly, and the A–D datasets.

mod dataset;
mod trajectory;
mod warp;

pub use dataset::{
    build_dataset, load_samples, plan_manifest, DatasetId, DatasetManifest, DatasetSpec,
    ManifestEntry, ObjectSource, Sample, Split,
};
pub use trajectory::{generate_trajectory, Trajectory};
pub use warp::{apply_warp, sample_warp_field, thin_plate, warp_displacement, WarpField, LATTICE_NODES};
