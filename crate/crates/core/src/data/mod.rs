//! Canonical data model: images, viewer fixations, scanpath files, synthetic
//! datasets and dataset manifests.

pub mod fixations;
pub mod images;
pub mod manifest;
pub mod synthetic;

pub use fixations::{
    denormalize, group_by_image, load_fixations, load_fixations_with_sizes, load_scanpaths, normalize_record, write_scanpaths,
    write_subject_fixations, EyeTrackingRecord, FixationLoad, MethodScanpath, RowError,
};
pub use images::{load_image, load_images, save_png, ImageLoad};
pub use manifest::{export_synthetic, load_dataset, load_labels, Dataset, DatasetManifest, Preprocessing};
pub use synthetic::{
    make_synthetic_dataset, oracle_scanpaths, quadrant_of, OracleViewerConfig, SyntheticConfig, SyntheticKind,
    SyntheticSample, SHAPE_CLASSES,
};
