//! Pocket conformation generation through tiered rigid-group transforms.
//!
//! The engine takes a protein-ligand system with pre-assigned force-field
//! parameters, segments the pocket into micro-groups (residue backbones,
//! sidechains, rotatable-bond-delimited ligand fragments) and macro-groups
//! (contiguous loops, the whole ligand), and optimizes a staged hierarchy of
//! rigid transforms against a differentiable molecular-mechanics energy.
//! Seeded random kicks followed by re-minimization produce diverse pocket
//! conformations; the formation-energy traces feed a screening feature table.
//!
//! Modules follow the pipeline order:
//!
//! * [`molio`] — system/annotation parsing, XYZ and table output
//! * [`segmentation`] — micro/macro group construction and the movable set
//! * [`transform`] — the staged forward map and its adjoint
//! * [`ffenergy`] — force-field energy, forces, neighbor lists
//! * [`gradient`] — energy-through-transform gradients
//! * [`protocol`] — relax / kick / minimize generation procedure
//! * [`features`] — formation-energy traces and feature assembly
//! * [`analysis`] — Kabsch alignment, RMSD, PCA, NEF, AUC-ROC

pub mod analysis;
pub mod features;
pub mod ffenergy;
pub mod gradient;
pub mod molio;
pub mod parallel;
pub mod protocol;
pub mod segmentation;
pub mod testfix;
pub mod transform;

pub use parallel::Parallelism;

/// 3-vector used for coordinates, displacements, and axis angles.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix used for rotations.
pub type Mat3 = nalgebra::Matrix3<f64>;
