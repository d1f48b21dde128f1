//! Energy gradients with respect to transform parameters.
//!
//! Composition of two hand-derived pieces: analytic forces `dE/dr` from
//! [`crate::ffenergy`] and the staged-transform adjoint from
//! [`crate::transform`]. No tape-based autodiff; memory stays O(atoms).

use crate::ffenergy::{EnergyBreakdown, EnergyError, EnergyModel};
use crate::segmentation::SegmentationPlan;
use crate::transform::{self, ForwardTape, TransformError, TransformMode, TransformParams};
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum GradError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("non-finite gradient")]
    NonFiniteGradient,
}

/// Everything one optimizer step needs: the energy at the transformed
/// coordinates, the parameter gradient, and the coordinates themselves.
pub struct CostEval {
    pub energy: EnergyBreakdown,
    pub grad: TransformParams,
    pub coords: Vec<Vec3>,
    pub tape: ForwardTape,
}

/// Evaluate `E(T(params; coords_init))` and its gradient with respect to
/// every transform parameter. `coords_init` is the full atom array; fixed
/// atoms pass through the transform untouched.
pub fn cost_and_grad(
    model: &mut EnergyModel,
    plan: &SegmentationPlan,
    params: &TransformParams,
    coords_init: &[Vec3],
    mode: TransformMode,
) -> Result<CostEval, GradError> {
    let (coords, tape) = transform::forward_with_tape(plan, params, coords_init, mode)?;
    let (energy, forces) = model.energy_and_forces(&coords)?;
    let (grad, _) = transform::backward(plan, params, &tape, &forces);
    if !grad.is_finite() {
        return Err(GradError::NonFiniteGradient);
    }
    Ok(CostEval {
        energy,
        grad,
        coords,
        tape,
    })
}
