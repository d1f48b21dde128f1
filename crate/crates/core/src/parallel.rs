//! Reduction-mode switch shared by the energy and protocol loops.
//!
//! Sequential reduction is the default: it fixes the summation order so that
//! repeated runs are bit-identical. The rayon-backed mode (behind the
//! `parallel` feature) splits work over chunks and must agree with the
//! sequential result to 1e-10 relative; it trades bit-exactness for speed.

/// How batched reductions (pair energies, per-term forces) are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Fixed summation order, bit-reproducible.
    #[default]
    Sequential,
    /// Chunked rayon reduction. Falls back to sequential when the crate is
    /// built without the `parallel` feature.
    Parallel,
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        match self {
            Parallelism::Sequential => false,
            Parallelism::Parallel => cfg!(feature = "parallel"),
        }
    }
}
