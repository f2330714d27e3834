//! Deformable mesh registration, statistical deformation modeling, and
//! kernel-based reconstruction of a hidden target region's motion from the
//! shape features of surrounding organs.
//!
//! The crate is organized around the pipeline:
//!
//! 1. [`mesh`], [`topology`], [`laplacian`], [`bvh`], [`io`]: triangle
//!    surface meshes, the discrete Laplace operator, and geometry queries.
//! 2. [`registration`]: affine pre-alignment plus Laplacian-based shape
//!    matching (LSM) and its deformation-smoothness variant (LDSM), yielding
//!    point-to-point correspondence with a template.
//! 3. [`template`]: surface resampling and mean-template construction.
//! 4. [`sdm`]: statistical deformation models, that is displacement fields,
//!    SVD deformation modes, synthesis, and motion-dynamics statistics.
//! 5. [`features`], [`regression`]: multi-organ shape features and Gaussian
//!    kernel ridge regression with per-patient and per-region training,
//!    leave-one-out evaluation, and sampling/subset sweeps.
//! 6. [`metrics`]: mean distance, Hausdorff distance, Laplacian of the
//!    displacement, and Dice coefficient.
//! 7. [`phantom`]: a synthetic multi-patient, multi-phase cohort with
//!    analytic ground-truth deformation, used as the test oracle.

pub mod bvh;
pub mod features;
pub mod io;
pub mod laplacian;
pub mod mesh;
pub mod metrics;
pub mod phantom;
pub mod registration;
pub mod regression;
pub mod sdm;
pub mod seeding;
pub mod shapes;
pub mod solver;
pub mod template;
pub mod topology;

pub use mesh::{MeshError, SurfaceMesh};
pub use topology::Weighting;
