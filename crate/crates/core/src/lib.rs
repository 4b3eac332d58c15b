//! Sparse-view indoor reconstruction from per-view color, depth and semantic
//! label rasters.
//!
//! The pipeline unprojects every view into a labeled point cloud, removes
//! stray points that fit no dominant plane, and registers the views in
//! sequence against the accumulated scene. Correspondences are scored in a
//! lifted space (position, color, label), a rigid transform is solved in closed
//! form, and each semantic segment is then refined on its own before the
//! overlapping points are averaged together.
//!
//! Besides the reconstruction itself the crate carries the evaluation metrics
//! for depth, segmentation and reconstruction quality, a geocentric (HHA)
//! depth encoder, and a deterministic synthetic scene renderer used to verify
//! the registration end to end.

pub mod encoding;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod registration;
pub mod spatial;
pub mod synth;

pub use geometry::{
    apply_transform, solve_rigid, unproject, GeometryError, Intrinsics, Label, LabeledCloud,
    LabeledPoint, Raster, RigidTransform, View, UNLABELED,
};
pub use registration::{
    align_global, align_local, fuse, match_7d, plane_prefilter, reconstruct, CorrespondenceSet,
    FusedScene, PrefilterParams, RegistrationError, RegistrationParams, SemanticDistance,
};
