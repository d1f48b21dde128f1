//! The staged forward map from transform parameters to final coordinates,
//! and its exact adjoint.
//!
//! Stages, in order:
//!
//! 1. per-atom translation `r += atom_disp`
//! 2. anchored micro-groups rotate by `theta_a` about their anchor axis
//!    (Rodrigues rotation about the line through the axis atom's post-stage-1
//!    position along the a->b bond direction)
//! 3. each micro-group rotates by `R(theta_r_micro)` about its own centre,
//!    then translates by `theta_t_micro`
//! 4. each macro-group rotates member micro-groups by `R(theta_r_macro)`
//!    about each member's own centre (or, for the ligand in whole-body mode,
//!    about the centre of the whole macro-group), then translates by
//!    `theta_t_macro`
//!
//! Rotation composition is `R = Rz * Ry * Rx`. Group centres are arithmetic
//! means of the coordinates entering the stage, and the adjoint propagates
//! gradients through centres and anchor axes. Fixed atoms pass through
//! untouched.

use crate::segmentation::{MacroKind, SegmentationPlan};
use crate::{Mat3, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum TransformError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// How the ligand macro-group rotates in stage 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformMode {
    /// Coordinated rotation of member micro-groups about their own centres.
    #[default]
    Standard,
    /// The ligand macro-group rotates about the centre of the whole ligand.
    LigandWholeBody,
}

/// The full adjustable parameter set for one conformation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    /// Per-movable-atom displacement, A (ordinal order of the movable set).
    pub atom_disp: Vec<Vec3>,
    /// Anchor rotation per anchored micro-group, radians
    /// (order of [`SegmentationPlan::anchored_micro_ids`]).
    pub theta_a: Vec<f64>,
    /// Per-micro-group x/y/z rotation about the group centre, radians.
    pub theta_r_micro: Vec<Vec3>,
    /// Per-micro-group translation, A.
    pub theta_t_micro: Vec<Vec3>,
    /// Per-macro-group rotation, radians.
    pub theta_r_macro: Vec<Vec3>,
    /// Per-macro-group translation, A.
    pub theta_t_macro: Vec<Vec3>,
}

impl TransformParams {
    pub fn zeros(plan: &SegmentationPlan) -> Self {
        Self {
            atom_disp: vec![Vec3::zeros(); plan.movable_atoms.len()],
            theta_a: vec![0.0; plan.anchored_micro_ids().len()],
            theta_r_micro: vec![Vec3::zeros(); plan.micro_groups.len()],
            theta_t_micro: vec![Vec3::zeros(); plan.micro_groups.len()],
            theta_r_macro: vec![Vec3::zeros(); plan.macro_groups.len()],
            theta_t_macro: vec![Vec3::zeros(); plan.macro_groups.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.atom_disp.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.theta_a.iter().all(|x| x.is_finite())
            && [&self.theta_r_micro, &self.theta_t_micro, &self.theta_r_macro, &self.theta_t_macro]
                .iter()
                .all(|vs| vs.iter().all(|v| v.iter().all(|x| x.is_finite())))
    }

    fn check_shapes(&self, plan: &SegmentationPlan) -> Result<(), TransformError> {
        let checks = [
            ("atom_disp", self.atom_disp.len(), plan.movable_atoms.len()),
            ("theta_a", self.theta_a.len(), plan.anchored_micro_ids().len()),
            ("theta_r_micro", self.theta_r_micro.len(), plan.micro_groups.len()),
            ("theta_t_micro", self.theta_t_micro.len(), plan.micro_groups.len()),
            ("theta_r_macro", self.theta_r_macro.len(), plan.macro_groups.len()),
            ("theta_t_macro", self.theta_t_macro.len(), plan.macro_groups.len()),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(TransformError::ShapeMismatch(format!(
                    "{name}: got {got}, plan wants {want}"
                )));
            }
        }
        Ok(())
    }
}

/// `Rz(z) * Ry(y) * Rx(x)`; orthogonal with determinant +1.
pub fn rotation_matrix(theta: Vec3) -> Mat3 {
    rot_z(theta.z) * rot_y(theta.y) * rot_x(theta.x)
}

/// Derivatives of [`rotation_matrix`] with respect to each angle.
fn rotation_matrix_derivs(theta: Vec3) -> [Mat3; 3] {
    let (rx, ry, rz) = (rot_x(theta.x), rot_y(theta.y), rot_z(theta.z));
    [rz * ry * drot_x(theta.x), rz * drot_y(theta.y) * rx, drot_z(theta.z) * ry * rx]
}

fn rot_x(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    Mat3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Rodrigues rotation of `v` by `theta` about unit axis `u`.
fn rodrigues(v: Vec3, u: Vec3, sin_t: f64, cos_t: f64) -> Vec3 {
    v * cos_t + u.cross(&v) * sin_t + u * (u.dot(&v) * (1.0 - cos_t))
}

/// Intermediate coordinates recorded by the forward pass; everything the
/// adjoint needs to run the chain rule backwards.
pub struct ForwardTape {
    /// Coordinates after stage 1 (full array).
    r1: Vec<Vec3>,
    /// After stage 2.
    r2: Vec<Vec3>,
    /// After stage 3.
    r3: Vec<Vec3>,
    mode: TransformMode,
}

/// Apply the staged transform. `coords_init` holds all atoms; movable entries
/// are the optimizable initial coordinates, fixed entries pass through.
pub fn forward(
    plan: &SegmentationPlan,
    params: &TransformParams,
    coords_init: &[Vec3],
    mode: TransformMode,
) -> Result<Vec<Vec3>, TransformError> {
    forward_with_tape(plan, params, coords_init, mode).map(|(r, _)| r)
}

pub fn forward_with_tape(
    plan: &SegmentationPlan,
    params: &TransformParams,
    coords_init: &[Vec3],
    mode: TransformMode,
) -> Result<(Vec<Vec3>, ForwardTape), TransformError> {
    params.check_shapes(plan)?;
    if coords_init.len() != plan.atom_count() {
        return Err(TransformError::ShapeMismatch(format!(
            "coords: got {}, plan wants {}",
            coords_init.len(),
            plan.atom_count()
        )));
    }

    // Stage 1: per-atom displacement.
    let mut r1 = coords_init.to_vec();
    for (ord, &atom) in plan.movable_atoms.iter().enumerate() {
        r1[atom] += params.atom_disp[ord];
    }

    // Stage 2: anchor-axis rotations.
    let mut r2 = r1.clone();
    for (slot, &gid) in plan.anchored_micro_ids().iter().enumerate() {
        if params.theta_a[slot] == 0.0 {
            continue;
        }
        let group = &plan.micro_groups[gid];
        let (a, bq) = group.anchor.unwrap();
        let p = r1[a];
        let q = r1[bq];
        let d = q - p;
        let norm = d.norm();
        let u = d / norm;
        let (s, c) = params.theta_a[slot].sin_cos();
        for &x in &group.atoms {
            r2[x] = p + rodrigues(r1[x] - p, u, s, c);
        }
    }

    // Stage 3: micro-group rotation about own centre, then translation.
    let mut r3 = r2.clone();
    for g in &plan.micro_groups {
        if params.theta_r_micro[g.id] == Vec3::zeros() && params.theta_t_micro[g.id] == Vec3::zeros()
        {
            continue;
        }
        let rot = rotation_matrix(params.theta_r_micro[g.id]);
        let t = params.theta_t_micro[g.id];
        let centre = mean(&r2, &g.atoms);
        for &x in &g.atoms {
            r3[x] = rot * (r2[x] - centre) + centre + t;
        }
    }

    // Stage 4: macro-group coordinated rotation and translation.
    let mut r4 = r3.clone();
    for mg in &plan.macro_groups {
        if params.theta_r_macro[mg.id] == Vec3::zeros() && params.theta_t_macro[mg.id] == Vec3::zeros()
        {
            continue;
        }
        let rot = rotation_matrix(params.theta_r_macro[mg.id]);
        let t = params.theta_t_macro[mg.id];
        let whole_body = mode == TransformMode::LigandWholeBody && mg.kind == MacroKind::Ligand;
        if whole_body {
            let atoms = plan.macro_atoms(mg);
            let centre = mean(&r3, &atoms);
            for &x in &atoms {
                r4[x] = rot * (r3[x] - centre) + centre + t;
            }
        } else {
            for &mid in &mg.micro_ids {
                let atoms = &plan.micro_groups[mid].atoms;
                let centre = mean(&r3, atoms);
                for &x in atoms {
                    r4[x] = rot * (r3[x] - centre) + centre + t;
                }
            }
        }
    }

    Ok((r4, ForwardTape { r1, r2, r3, mode }))
}

fn mean(coords: &[Vec3], atoms: &[usize]) -> Vec3 {
    let mut c = Vec3::zeros();
    for &x in atoms {
        c += coords[x];
    }
    c / atoms.len() as f64
}

/// Adjoint of one rotate-about-centre stage over one group. `grad` holds the
/// output-side cotangents for the group's atoms on entry and the input-side
/// cotangents on exit; angle and translation cotangents are accumulated into
/// `theta_grad` / `t_grad`.
fn backward_rotate_about_centre(
    coords_in: &[Vec3],
    atoms: &[usize],
    rot: &Mat3,
    drots: &[Mat3; 3],
    centre: Vec3,
    grad: &mut [Vec3],
    theta_grad: &mut Vec3,
    t_grad: &mut Vec3,
) {
    let n = atoms.len() as f64;
    let rot_t = rot.transpose();
    let mut sum_g = Vec3::zeros();
    for &x in atoms {
        sum_g += grad[x];
        let v = coords_in[x] - centre;
        for k in 0..3 {
            theta_grad[k] += (drots[k] * v).dot(&grad[x]);
        }
    }
    *t_grad += sum_g;
    // d r_out_x / d r_in_y = R (delta_xy - 1/n) + (1/n) I   (centre is a mean)
    let common = (sum_g - rot_t * sum_g) / n;
    for &x in atoms {
        grad[x] = rot_t * grad[x] + common;
    }
}

/// Propagate cotangents of the final coordinates back to every parameter and
/// to the movable initial coordinates. `grad_final` is a full-length array;
/// entries for fixed atoms are ignored.
pub fn backward(
    plan: &SegmentationPlan,
    params: &TransformParams,
    tape: &ForwardTape,
    grad_final: &[Vec3],
) -> (TransformParams, Vec<Vec3>) {
    let mut grad: Vec<Vec3> = grad_final.to_vec();
    let mut pg = TransformParams::zeros(plan);

    // Stage 4 adjoint.
    for mg in &plan.macro_groups {
        let rot = rotation_matrix(params.theta_r_macro[mg.id]);
        let drots = rotation_matrix_derivs(params.theta_r_macro[mg.id]);
        let whole_body = tape.mode == TransformMode::LigandWholeBody && mg.kind == MacroKind::Ligand;
        let mut theta_grad = Vec3::zeros();
        let mut t_grad = Vec3::zeros();
        if whole_body {
            let atoms = plan.macro_atoms(mg);
            let centre = mean(&tape.r3, &atoms);
            backward_rotate_about_centre(
                &tape.r3, &atoms, &rot, &drots, centre, &mut grad, &mut theta_grad, &mut t_grad,
            );
        } else {
            for &mid in &mg.micro_ids {
                let atoms = &plan.micro_groups[mid].atoms;
                let centre = mean(&tape.r3, atoms);
                backward_rotate_about_centre(
                    &tape.r3, atoms, &rot, &drots, centre, &mut grad, &mut theta_grad, &mut t_grad,
                );
            }
        }
        pg.theta_r_macro[mg.id] = theta_grad;
        pg.theta_t_macro[mg.id] = t_grad;
    }

    // Stage 3 adjoint.
    for g in &plan.micro_groups {
        let rot = rotation_matrix(params.theta_r_micro[g.id]);
        let drots = rotation_matrix_derivs(params.theta_r_micro[g.id]);
        let centre = mean(&tape.r2, &g.atoms);
        let mut theta_grad = Vec3::zeros();
        let mut t_grad = Vec3::zeros();
        backward_rotate_about_centre(
            &tape.r2, &g.atoms, &rot, &drots, centre, &mut grad, &mut theta_grad, &mut t_grad,
        );
        pg.theta_r_micro[g.id] = theta_grad;
        pg.theta_t_micro[g.id] = t_grad;
    }

    // Stage 2 adjoint. Two passes: anchor atoms of one group may belong to
    // another anchored group, so all group cotangents are computed from the
    // stage-2 output side before any slot is rewritten to the input side.
    struct AnchorAdjoint {
        gid: usize,
        new_grads: Vec<Vec3>,
        p_bar: Vec3,
        q_bar: Vec3,
    }
    let anchored = plan.anchored_micro_ids();
    let mut adjoints: Vec<AnchorAdjoint> = Vec::with_capacity(anchored.len());
    for (slot, &gid) in anchored.iter().enumerate() {
        let group = &plan.micro_groups[gid];
        let (a, bq) = group.anchor.unwrap();
        let p = tape.r1[a];
        let q = tape.r1[bq];
        let d = q - p;
        let norm = d.norm();
        let u = d / norm;
        let (s, c) = params.theta_a[slot].sin_cos();

        let mut theta_bar = 0.0;
        let mut u_bar = Vec3::zeros();
        let mut sum_gout = Vec3::zeros();
        let mut sum_wbar = Vec3::zeros();
        let mut new_grads = Vec::with_capacity(group.atoms.len());
        for &x in &group.atoms {
            let w = tape.r1[x] - p;
            let gout = grad[x];
            sum_gout += gout;
            // d(Rodrigues)/d theta
            theta_bar += gout.dot(&(-w * s + u.cross(&w) * c + u * (u.dot(&w) * s)));
            // d/dw: R^T
            let w_bar = gout * c + gout.cross(&u) * s + u * (u.dot(&gout) * (1.0 - c));
            sum_wbar += w_bar;
            new_grads.push(w_bar);
            // d/du
            u_bar += w.cross(&gout) * s + (w * u.dot(&gout) + gout * u.dot(&w)) * (1.0 - c);
        }
        // u = d/|d|: project out the radial component.
        let d_bar = (u_bar - u * u.dot(&u_bar)) / norm;
        let p_bar = sum_gout - sum_wbar - d_bar;
        let q_bar = d_bar;
        adjoints.push(AnchorAdjoint {
            gid,
            new_grads,
            p_bar,
            q_bar,
        });
        pg.theta_a[slot] = theta_bar;
    }
    for adj in &adjoints {
        let group = &plan.micro_groups[adj.gid];
        for (&x, &g_new) in group.atoms.iter().zip(&adj.new_grads) {
            grad[x] = g_new;
        }
    }
    for adj in &adjoints {
        let group = &plan.micro_groups[adj.gid];
        let (a, bq) = group.anchor.unwrap();
        grad[a] += adj.p_bar;
        grad[bq] += adj.q_bar;
    }

    // Stage 1 adjoint: displacement gradient equals the coordinate gradient.
    let mut grad_init = Vec::with_capacity(plan.movable_atoms.len());
    for (ord, &atom) in plan.movable_atoms.iter().enumerate() {
        pg.atom_disp[ord] = grad[atom];
        grad_init.push(grad[atom]);
    }

    (pg, grad_init)
}

// ---------------------------------------------------------------------------
// Flat parameter layout for optimizers
// ---------------------------------------------------------------------------

/// Packing of [`TransformParams`] into a flat vector:
/// `[atom_disp | theta_a | theta_r_micro | theta_t_micro | theta_r_macro | theta_t_macro]`.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    n_movable: usize,
    n_anchored: usize,
    n_micro: usize,
    n_macro: usize,
}

impl ParamLayout {
    pub fn from_plan(plan: &SegmentationPlan) -> Self {
        Self {
            n_movable: plan.movable_atoms.len(),
            n_anchored: plan.anchored_micro_ids().len(),
            n_micro: plan.micro_groups.len(),
            n_macro: plan.macro_groups.len(),
        }
    }

    pub fn len(&self) -> usize {
        3 * self.n_movable + self.n_anchored + 6 * self.n_micro + 6 * self.n_macro
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, p: &TransformParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for v in &p.atom_disp {
            out.extend_from_slice(v.as_slice());
        }
        out.extend_from_slice(&p.theta_a);
        for field in [&p.theta_r_micro, &p.theta_t_micro, &p.theta_r_macro, &p.theta_t_macro] {
            for v in field {
                out.extend_from_slice(v.as_slice());
            }
        }
        debug_assert_eq!(out.len(), self.len());
        out
    }

    pub fn unpack(&self, flat: &[f64]) -> TransformParams {
        assert_eq!(flat.len(), self.len());
        let mut it = flat.iter().copied();
        let take_vec3s = |n: usize, it: &mut dyn Iterator<Item = f64>| -> Vec<Vec3> {
            (0..n)
                .map(|_| {
                    let x = it.next().unwrap();
                    let y = it.next().unwrap();
                    let z = it.next().unwrap();
                    Vec3::new(x, y, z)
                })
                .collect()
        };
        let atom_disp = take_vec3s(self.n_movable, &mut it);
        let theta_a: Vec<f64> = (0..self.n_anchored).map(|_| it.next().unwrap()).collect();
        let theta_r_micro = take_vec3s(self.n_micro, &mut it);
        let theta_t_micro = take_vec3s(self.n_micro, &mut it);
        let theta_r_macro = take_vec3s(self.n_macro, &mut it);
        let theta_t_macro = take_vec3s(self.n_macro, &mut it);
        TransformParams {
            atom_disp,
            theta_a,
            theta_r_micro,
            theta_t_micro,
            theta_r_macro,
            theta_t_macro,
        }
    }

    /// True for entries owned by the ligand: displacements of ligand atoms,
    /// anchor angles and micro parameters of ligand fragments, and the ligand
    /// macro-group parameters.
    pub fn ligand_mask(&self, plan: &SegmentationPlan) -> Vec<bool> {
        use crate::segmentation::MicroKind;
        let mut mask = vec![false; self.len()];
        let ligand_atoms: std::collections::HashSet<usize> = plan.ligand_atoms().into_iter().collect();
        for (ord, &atom) in plan.movable_atoms.iter().enumerate() {
            if ligand_atoms.contains(&atom) {
                for k in 0..3 {
                    mask[3 * ord + k] = true;
                }
            }
        }
        let mut off = 3 * self.n_movable;
        for (slot, &gid) in plan.anchored_micro_ids().iter().enumerate() {
            if plan.micro_groups[gid].kind == MicroKind::LigandFragment {
                mask[off + slot] = true;
            }
        }
        off += self.n_anchored;
        for pass in 0..2 {
            for g in &plan.micro_groups {
                if g.kind == MicroKind::LigandFragment {
                    for k in 0..3 {
                        mask[off + 3 * (pass * self.n_micro + g.id) + k] = true;
                    }
                }
            }
        }
        off += 6 * self.n_micro;
        for pass in 0..2 {
            for mg in &plan.macro_groups {
                if mg.kind == MacroKind::Ligand {
                    for k in 0..3 {
                        mask[off + 3 * (pass * self.n_macro + mg.id) + k] = true;
                    }
                }
            }
        }
        mask
    }
}
