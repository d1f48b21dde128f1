//! Synthetic fixture systems shared by unit tests, integration tests, and
//! the benches. All builders are deterministic.

use crate::molio::{AtomAnnotation, AtomAnnotations, MolecularSystem, SecondaryStructure, SystemBuilder};
use crate::Vec3;

fn ligand_annotation() -> AtomAnnotation {
    AtomAnnotation {
        residue_id: 900,
        residue_name: "LIG".into(),
        is_ligand: true,
        is_backbone: false,
        secondary_structure: SecondaryStructure::None,
        fragment_id: None,
    }
}

fn protein_annotation(residue_id: i64, name: &str, backbone: bool, ss: SecondaryStructure) -> AtomAnnotation {
    AtomAnnotation {
        residue_id,
        residue_name: name.into(),
        is_ligand: false,
        is_backbone: backbone,
        secondary_structure: ss,
        fragment_id: None,
    }
}

/// A chain ligand of `n` atoms spaced 1.5 A along x, bonded consecutively,
/// with `n_rot` rotatable bonds placed from the chain middle outward.
pub fn ligand_only(n: usize, n_rot: usize) -> (MolecularSystem, AtomAnnotations) {
    let mut b = SystemBuilder::new();
    let t = b.atom_type(12.0, 0.05, 3.0);
    let bc = b.bond_coeff(300.0, 1.5);
    let mut idx = Vec::new();
    for i in 0..n {
        idx.push(b.atom(1, t, 0.0, Vec3::new(1.5 * i as f64, 0.0, 0.0)));
    }
    for i in 1..n {
        b.bond(bc, idx[i - 1], idx[i]);
    }
    let sys = b.build();
    let mut rotatable = Vec::new();
    for k in 0..n_rot {
        let a = n / 2 + k;
        assert!(a + 1 < n, "not enough bonds for requested rotatable count");
        rotatable.push((idx[a], idx[a + 1]));
    }
    let ann = AtomAnnotations {
        per_atom: (0..n).map(|_| ligand_annotation()).collect(),
        rotatable_bonds: rotatable,
    };
    (sys, ann)
}

/// Three loop residues (2 backbone + 1 sidechain atoms each) plus a 2-atom
/// ligand fragment sitting above the chain. Everything lies near the origin
/// so the default 20 A cutoff makes the whole system movable.
pub fn tripeptide_with_ligand() -> (MolecularSystem, AtomAnnotations) {
    let mut b = SystemBuilder::new();
    let t = b.atom_type(12.0, 0.05, 3.0);
    let bc = b.bond_coeff(300.0, 1.5);
    let mut ann_rows = Vec::new();
    let mut prev_ca: Option<usize> = None;
    for r in 0..3 {
        let x = 3.0 * r as f64;
        let n_at = b.atom(1, t, -0.2, Vec3::new(x, 0.0, 0.0));
        let ca = b.atom(1, t, 0.1, Vec3::new(x + 1.5, 0.0, 0.0));
        let cb = b.atom(1, t, 0.1, Vec3::new(x + 1.5, 1.5, 0.0));
        b.bond(bc, n_at, ca);
        b.bond(bc, ca, cb);
        if let Some(p) = prev_ca {
            b.bond(bc, p, n_at);
        }
        prev_ca = Some(ca);
        let rid = (r + 1) as i64;
        ann_rows.push(protein_annotation(rid, "ALA", true, SecondaryStructure::Loop));
        ann_rows.push(protein_annotation(rid, "ALA", true, SecondaryStructure::Loop));
        ann_rows.push(protein_annotation(rid, "ALA", false, SecondaryStructure::Loop));
    }
    let l1 = b.atom(2, t, 0.3, Vec3::new(4.0, 4.0, 1.0));
    let l2 = b.atom(2, t, -0.3, Vec3::new(5.5, 4.0, 1.0));
    b.bond(bc, l1, l2);
    ann_rows.push(ligand_annotation());
    ann_rows.push(ligand_annotation());
    let sys = b.build();
    let ann = AtomAnnotations {
        per_atom: ann_rows,
        rotatable_bonds: vec![],
    };
    (sys, ann)
}

/// A compact complex exercising every energy term: a 4-residue pocket (one
/// helix residue, three loop residues) arranged around a 4-atom ligand with
/// one rotatable bond. Carries bonds, angles, a dihedral, an improper, LJ
/// and charges. Small enough for finite-difference gradient checks.
pub fn toy_complex() -> (MolecularSystem, AtomAnnotations) {
    let mut b = SystemBuilder::new();
    let tc = b.atom_type_14(12.0, 0.08, 3.2, 0.04, 3.0);
    let to = b.atom_type(16.0, 0.15, 2.9);
    let bc = b.bond_coeff(250.0, 1.5);
    let ac = b.angle_coeff(40.0, 110.0f64.to_radians());
    let dc = b.dihedral_coeff(vec![crate::molio::DihedralTerm {
        k: 0.8,
        n: 3,
        d: 0.0,
    }]);
    let ic = b.improper_coeff(5.0, 0.0);

    let mut ann_rows = Vec::new();
    // Pocket: residues on a ring of radius 6 A around the origin.
    let ss_of = |r: usize| if r == 0 { SecondaryStructure::Helix } else { SecondaryStructure::Loop };
    for r in 0..4 {
        let phi = std::f64::consts::FRAC_PI_2 * r as f64;
        let (s, c) = phi.sin_cos();
        let base = Vec3::new(6.0 * c, 6.0 * s, 0.0);
        let n_at = b.atom(1, tc, -0.2, base);
        let ca = b.atom(1, tc, 0.1, base + Vec3::new(0.0, 0.0, 1.5));
        let cb = b.atom(1, to, 0.1, base + Vec3::new(-1.4 * s, 1.4 * c, 1.5));
        b.bond(bc, n_at, ca);
        b.bond(bc, ca, cb);
        b.angle(ac, n_at, ca, cb);
        let rid = (r + 1) as i64;
        let name = if r == 1 { "PHE" } else { "ALA" };
        ann_rows.push(protein_annotation(rid, name, true, ss_of(r)));
        ann_rows.push(protein_annotation(rid, name, true, ss_of(r)));
        ann_rows.push(protein_annotation(rid, name, false, ss_of(r)));
    }

    // Ligand: 4-atom chain with a bend, one rotatable bond in the middle.
    let l0 = b.atom(2, tc, 0.25, Vec3::new(-0.8, -0.6, 0.2));
    let l1 = b.atom(2, to, -0.25, Vec3::new(0.7, -0.6, 0.2));
    let l2 = b.atom(2, tc, 0.2, Vec3::new(1.4, 0.7, 0.4));
    let l3 = b.atom(2, to, -0.2, Vec3::new(2.9, 0.8, 0.4));
    b.bond(bc, l0, l1);
    b.bond(bc, l1, l2);
    b.bond(bc, l2, l3);
    b.angle(ac, l0, l1, l2);
    b.angle(ac, l1, l2, l3);
    b.dihedral(dc, l0, l1, l2, l3);
    b.improper(ic, l1, l0, l2, l3);
    for _ in 0..4 {
        ann_rows.push(ligand_annotation());
    }

    let sys = b.build();
    let ann = AtomAnnotations {
        per_atom: ann_rows,
        rotatable_bonds: vec![(l1, l2)],
    };
    (sys, ann)
}
