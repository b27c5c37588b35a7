//! Synthetic shapes, coarse-volume corruption and posed datasets.

mod corrupt;
mod dataset;
mod shapes;

pub use corrupt::{box_blur_3d, connected_components, corrupt_voxels, thin_components, CorruptParams};
pub use dataset::{
    generate_dataset, load_dataset, load_manifest, load_sample, make_dataset, perturb_pose, rotate_pose, sample_id,
    write_dataset, DatasetConfig, Manifest, NoiseMeta, NoiseSpec, PoseFile, Sample, SampleEntry, SampleFiles, Split,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use shapes::{make_shape, random_shape, Furniture, IndexBox, ShapeKind, ShapeSpec, LEG_VOXELS, MIN_SLAB_VOXELS};
