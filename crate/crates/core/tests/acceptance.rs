//! Acceptance gate: ten criteria covering gradients, transform identities,
//! energy invariances, protocol constants, determinism, basin escape, the
//! feature pipeline, analytics oracles, the aggressive preset, and capacity.
//! Each test prints one `ACCEPTANCE <n> ... PASS` line (visible with
//! `--nocapture`); a failure panics.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ttgen_core::analysis;
use ttgen_core::features::{self, FeatureTrace, ScoreRow};
use ttgen_core::ffenergy::{EnergyBreakdown, EnergyModel, NonbondedSettings};
use ttgen_core::gradient::cost_and_grad;
use ttgen_core::molio::{
    self, AtomAnnotation, AtomAnnotations, DihedralTerm, MolecularSystem, SecondaryStructure,
    SystemBuilder,
};
use ttgen_core::protocol::{self, ProtocolConfig, RunStatus, TraceEntry};
use ttgen_core::segmentation::{build_segmentation, GroupKey, SegmentationConfig, SegmentationPlan};
use ttgen_core::transform::{forward, ParamLayout, TransformMode, TransformParams};
use ttgen_core::{testfix, Vec3};

fn plan_for(
    sys: &MolecularSystem,
    ann: &AtomAnnotations,
) -> SegmentationPlan {
    build_segmentation(sys, ann, SegmentationConfig::default()).unwrap()
}

fn rand_vec3(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness on three fixtures
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_finite_difference() {
    let start = Instant::now();
    let fixtures = [
        ("toy_complex", testfix::toy_complex()),
        ("tripeptide", testfix::tripeptide_with_ligand()),
        ("chain_ligand", testfix::ligand_only(10, 3)),
    ];
    for (name, (sys, ann)) in &fixtures {
        let plan = plan_for(sys, ann);
        let layout = ParamLayout::from_plan(&plan);
        let coords0 = sys.positions();
        let settings = NonbondedSettings::default();
        let mode = TransformMode::Standard;

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut flat: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-0.03..0.03)).collect();

        let mut model = EnergyModel::new(sys, settings);
        let eval = cost_and_grad(&mut model, &plan, &layout.unpack(&flat), &coords0, mode).unwrap();
        let analytic = layout.pack(&eval.grad);

        let mut cost = |x: &[f64]| -> f64 {
            let coords = forward(&plan, &layout.unpack(x), &coords0, mode).unwrap();
            model.energy(&coords).unwrap().e_total
        };
        let h = 1e-5;
        for k in 0..layout.len() {
            let orig = flat[k];
            flat[k] = orig + h;
            let ep = cost(&flat);
            flat[k] = orig - h;
            let em = cost(&flat);
            flat[k] = orig;
            let fd = (ep - em) / (2.0 * h);
            let tol = 1e-5 * fd.abs().max(analytic[k].abs()) + 1e-7;
            assert!(
                (analytic[k] - fd).abs() <= tol,
                "{name} param {k}: analytic {} vs fd {fd}",
                analytic[k]
            );
        }
    }
    assert!(start.elapsed().as_secs() < 60, "over the 1 minute budget");
    println!("ACCEPTANCE 1 gradient vs finite differences on 3 fixtures: PASS");
}

// ---------------------------------------------------------------------------
// 2. Transform identity, rigidity, full turns
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_transform_identity_and_rigidity() {
    let (sys, ann) = testfix::toy_complex();
    let plan = plan_for(&sys, &ann);
    let coords0 = sys.positions();
    let mode = TransformMode::Standard;

    // Exact identity at zero parameters.
    let zero = TransformParams::zeros(&plan);
    let out = forward(&plan, &zero, &coords0, mode).unwrap();
    assert!(out.iter().zip(&coords0).all(|(a, b)| a == b), "zero params moved atoms");

    // Random stage-2/3/4 parameters preserve intra-group distances.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = TransformParams::zeros(&plan);
    for v in params.theta_a.iter_mut() {
        *v = rng.gen_range(-1.5..1.5);
    }
    for list in [
        &mut params.theta_r_micro,
        &mut params.theta_t_micro,
        &mut params.theta_r_macro,
        &mut params.theta_t_macro,
    ] {
        for v in list.iter_mut() {
            *v = rand_vec3(&mut rng, 1.0);
        }
    }
    let moved = forward(&plan, &params, &coords0, mode).unwrap();
    for g in &plan.micro_groups {
        for (i, &a) in g.atoms.iter().enumerate() {
            for &b in &g.atoms[i + 1..] {
                let before = (coords0[a] - coords0[b]).norm();
                let after = (moved[a] - moved[b]).norm();
                assert!(
                    (before - after).abs() <= 1e-9,
                    "group {} pair {a}-{b}: {before} -> {after}",
                    g.id
                );
            }
        }
    }

    // Full-turn rotations are identity to 1e-9.
    let tau = std::f64::consts::TAU;
    let mut turns: Vec<TransformParams> = Vec::new();
    let mut p = TransformParams::zeros(&plan);
    for v in p.theta_a.iter_mut() {
        *v = tau;
    }
    turns.push(p);
    for axis in 0..3 {
        let mut p = TransformParams::zeros(&plan);
        for v in p.theta_r_micro.iter_mut() {
            v[axis] = tau;
        }
        turns.push(p);
        let mut p = TransformParams::zeros(&plan);
        for v in p.theta_r_macro.iter_mut() {
            v[axis] = tau;
        }
        turns.push(p);
    }
    for params in &turns {
        let out = forward(&plan, params, &coords0, mode).unwrap();
        let max_dev = out
            .iter()
            .zip(&coords0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(max_dev <= 1e-9, "full turn deviates by {max_dev}");
    }
    println!("ACCEPTANCE 2 transform identity / rigidity / full turns: PASS");
}

// ---------------------------------------------------------------------------
// 3. Energy invariances and spot values
// ---------------------------------------------------------------------------

/// Test-local Rodrigues rotation, independent of the library's matrices.
fn rodrigues(axis: Vec3, angle: f64, p: Vec3) -> Vec3 {
    let u = axis.normalize();
    let (s, c) = angle.sin_cos();
    p * c + u.cross(&p) * s + u * (u.dot(&p)) * (1.0 - c)
}

/// Test-local switched LJ + Coulomb over all pairs, O(N^2).
fn direct_nonbonded(
    coords: &[Vec3],
    eps: &[f64],
    sig: &[f64],
    q: &[f64],
    inner: f64,
    outer: f64,
) -> f64 {
    let mut e = 0.0;
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let r = (coords[i] - coords[j]).norm();
            if r >= outer {
                continue;
            }
            let s = if r <= inner {
                1.0
            } else {
                let (r2, ri2, ro2) = (r * r, inner * inner, outer * outer);
                (ro2 - r2) * (ro2 - r2) * (ro2 + 2.0 * r2 - 3.0 * ri2)
                    / ((ro2 - ri2) * (ro2 - ri2) * (ro2 - ri2))
            };
            let epsm = (eps[i] * eps[j]).sqrt();
            let sigm = 0.5 * (sig[i] + sig[j]);
            let sr6 = (sigm / r).powi(6);
            let lj = 4.0 * epsm * (sr6 * sr6 - sr6);
            let coul = 332.0637 * q[i] * q[j] / r;
            e += s * (lj + coul);
        }
    }
    e
}

#[test]
fn criterion_03_energy_invariances() {
    let settings = NonbondedSettings::default();

    // Rigid-motion invariance on the toy complex.
    let (sys, _) = testfix::toy_complex();
    let coords = sys.positions();
    let mut model = EnergyModel::new(&sys, settings);
    let e0 = model.energy(&coords).unwrap().e_total;
    let axis = Vec3::new(0.3, -1.1, 0.7);
    let shift = Vec3::new(4.0, -2.5, 1.25);
    let moved: Vec<Vec3> = coords.iter().map(|&p| rodrigues(axis, 1.234, p) + shift).collect();
    let e1 = model.energy(&moved).unwrap().e_total;
    assert!(
        (e0 - e1).abs() <= 1e-7 * e0.abs().max(1.0),
        "rigid motion changed energy: {e0} vs {e1}"
    );

    // Neighbor list vs direct O(N^2) sum on a random charged LJ box.
    let mut b = SystemBuilder::new();
    let t1 = b.atom_type(12.0, 0.09, 3.1);
    let t2 = b.atom_type(16.0, 0.21, 2.8);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..300 {
        let t = if i % 2 == 0 { t1 } else { t2 };
        let q = if i % 2 == 0 { 0.12 } else { -0.12 };
        b.atom(1, t, q, rand_vec3(&mut rng, 18.0));
    }
    let box_sys = b.build();
    let coords = box_sys.positions();
    let mut model = EnergyModel::new(&box_sys, settings);
    let breakdown = model.energy(&coords).unwrap();
    let (eps, sig, q): (Vec<f64>, Vec<f64>, Vec<f64>) = {
        let e = box_sys.atoms.iter().map(|a| box_sys.pair_coeffs[a.type_id - 1].epsilon).collect();
        let s = box_sys.atoms.iter().map(|a| box_sys.pair_coeffs[a.type_id - 1].sigma).collect();
        let q = box_sys.atoms.iter().map(|a| a.charge).collect();
        (e, s, q)
    };
    let direct = direct_nonbonded(&coords, &eps, &sig, &q, 10.0, 12.0);
    let listed = breakdown.e_lj + breakdown.e_coulomb;
    assert!(
        (direct - listed).abs() <= 1e-10 * direct.abs().max(1.0),
        "neighbor list {listed} vs direct {direct}"
    );

    // Spot values.
    let spot = |eps: f64, sigma: f64, q: f64, r: f64| -> EnergyBreakdown {
        let mut b = SystemBuilder::new();
        let t = b.atom_type(1.0, eps, sigma);
        b.atom(1, t, q, Vec3::zeros());
        b.atom(1, t, q, Vec3::new(r, 0.0, 0.0));
        let s = b.build();
        let c = s.positions();
        EnergyModel::new(&s, settings).energy(&c).unwrap()
    };
    let at_min = spot(0.2, 3.0, 0.0, 2.0f64.powf(1.0 / 6.0) * 3.0);
    assert!((at_min.e_lj + 0.2).abs() <= 1e-9, "LJ minimum {}", at_min.e_lj);
    let at_sigma = spot(0.2, 3.0, 0.0, 3.0);
    assert!(at_sigma.e_lj.abs() <= 1e-9, "LJ at sigma {}", at_sigma.e_lj);
    let coul = spot(0.0, 3.0, 1.0, 1.0);
    assert!((coul.e_coulomb - 332.0637).abs() <= 1e-9, "Coulomb {}", coul.e_coulomb);

    let mut b = SystemBuilder::new();
    let t = b.atom_type(1.0, 0.0, 1.0);
    let bc = b.bond_coeff(100.0, 1.0);
    let a0 = b.atom(1, t, 0.0, Vec3::zeros());
    let a1 = b.atom(1, t, 0.0, Vec3::new(1.5, 0.0, 0.0));
    b.bond(bc, a0, a1);
    let s = b.build();
    let e = EnergyModel::new(&s, settings).energy(&s.positions()).unwrap();
    assert!((e.e_bond - 25.0).abs() <= 1e-9, "bond {}", e.e_bond);

    println!("ACCEPTANCE 3 energy invariances and spot values: PASS");
}

// ---------------------------------------------------------------------------
// 4. Protocol constants: trace length, kick bounds, ring flips, seed count
// ---------------------------------------------------------------------------

/// Stem atom plus a rigid bonded triangle behind one rotatable bond; the
/// triangle is ring-flip eligible. `blocker` optionally places a protein
/// atom at the given position.
fn flip_fixture(blocker: Option<Vec3>) -> (MolecularSystem, AtomAnnotations) {
    let mut b = SystemBuilder::new();
    let t = b.atom_type(12.0, 0.0, 3.0);
    let bc = b.bond_coeff(300.0, 1.5);
    let s0 = b.atom(1, t, 0.0, Vec3::new(0.0, 0.0, 0.0));
    let r1 = b.atom(1, t, 0.0, Vec3::new(1.5, 0.0, 0.0));
    let r2 = b.atom(1, t, 0.0, Vec3::new(2.6, 1.1, 0.0));
    let r3 = b.atom(1, t, 0.0, Vec3::new(2.6, -0.4, 1.1));
    b.bond(bc, s0, r1);
    b.bond(bc, r1, r2);
    b.bond(bc, r2, r3);
    b.bond(bc, r3, r1);
    let mut per_atom: Vec<AtomAnnotation> = (0..4)
        .map(|_| AtomAnnotation {
            residue_id: 900,
            residue_name: "LIG".into(),
            is_ligand: true,
            is_backbone: false,
            secondary_structure: SecondaryStructure::None,
            fragment_id: None,
        })
        .collect();
    if let Some(pos) = blocker {
        b.atom(2, t, 0.0, pos);
        per_atom.push(AtomAnnotation {
            residue_id: 1,
            residue_name: "ALA".into(),
            is_ligand: false,
            is_backbone: true,
            secondary_structure: SecondaryStructure::Loop,
            fragment_id: None,
        });
    }
    let sys = b.build();
    let ann = AtomAnnotations {
        per_atom,
        rotatable_bonds: vec![(s0, r1)],
    };
    (sys, ann)
}

#[test]
fn criterion_04_protocol_constants() {
    let settings = NonbondedSettings::default();

    // Trace 2200 = 200 + 2000; 10 seeds -> 10 conformations.
    let (sys, ann) = testfix::toy_complex();
    let plan = plan_for(&sys, &ann);
    let cfg = ProtocolConfig::default();
    assert_eq!(cfg.seeds.len(), 10);
    let records = protocol::generate_conformations(&sys, &plan, &settings, &cfg).unwrap();
    assert_eq!(records.len(), 10, "10 seeds must give 10 conformations");
    for rec in &records {
        assert_ne!(rec.status, RunStatus::Failed, "seed {} failed", rec.seed);
        assert_eq!(rec.trace.len(), 2200, "seed {} trace", rec.seed);
    }

    // Kick bounds.
    let model = EnergyModel::new(&sys, settings);
    let zero = TransformParams::zeros(&plan);
    for seed in 0..100 {
        let kicked = protocol::apply_kick(&model, &plan, &zero, &sys.positions(), &cfg, seed);
        for t in &kicked.theta_t_micro {
            assert!(t.amax() <= 1.5, "translation kick out of range: {t:?}");
        }
        for r in &kicked.theta_r_micro {
            assert!(r.amax() <= 0.15, "rotation kick out of range: {r:?}");
        }
    }

    // Ring flips: 0.5 +- 0.05 empirical frequency over 1000 clash-free
    // trials; zero when an atom sits 0.5 A from the flipped ring.
    let flip_cfg = ProtocolConfig {
        kick_t_range: 1e-6,
        kick_r_range: 1e-6,
        ..ProtocolConfig::default()
    };
    flip_cfg.validate().unwrap();
    let count_flips = |sys: &MolecularSystem, ann: &AtomAnnotations| -> usize {
        let plan = plan_for(sys, ann);
        let model = EnergyModel::new(sys, settings);
        let zero = TransformParams::zeros(&plan);
        let slot = {
            let ring = plan
                .micro_groups
                .iter()
                .find(|g| g.ring_flip_eligible)
                .expect("fixture must carry a flip-eligible group");
            plan.anchored_micro_ids().iter().position(|&id| id == ring.id).unwrap()
        };
        (0..1000u64)
            .filter(|&seed| {
                let kicked =
                    protocol::apply_kick(&model, &plan, &zero, &sys.positions(), &flip_cfg, seed);
                (kicked.theta_a[slot] - std::f64::consts::PI).abs() < 1e-3
            })
            .count()
    };

    let (free_sys, free_ann) = flip_fixture(None);
    let flips = count_flips(&free_sys, &free_ann);
    let freq = flips as f64 / 1000.0;
    assert!((freq - 0.5).abs() <= 0.05, "flip frequency {freq}");

    // Flipped position of r2: rotate about the s0->r1 axis by pi.
    let axis = Vec3::new(1.0, 0.0, 0.0);
    let pivot = Vec3::new(1.5, 0.0, 0.0);
    let flipped_r2 = rodrigues(axis, std::f64::consts::PI, Vec3::new(2.6, 1.1, 0.0) - pivot) + pivot;
    let blocker = flipped_r2 + Vec3::new(0.0, 0.5, 0.0);
    let (clash_sys, clash_ann) = flip_fixture(Some(blocker));
    assert_eq!(count_flips(&clash_sys, &clash_ann), 0, "staged clash must veto every flip");

    println!("ACCEPTANCE 4 protocol constants (2200 trace, kick bounds, ring flips, 10 seeds): PASS");
}

// ---------------------------------------------------------------------------
// 5. Determinism and cross-ligand seed consistency
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_determinism_and_seed_consistency() {
    let settings = NonbondedSettings::default();
    let cfg = ProtocolConfig {
        n_relax_steps: 30,
        n_minimize_steps: 90,
        seeds: vec![3, 8],
        ..ProtocolConfig::default()
    };

    // Byte-identical records across two sequential runs.
    let (sys, ann) = testfix::toy_complex();
    let plan = plan_for(&sys, &ann);
    let a = protocol::generate_conformations(&sys, &plan, &settings, &cfg).unwrap();
    let b = protocol::generate_conformations(&sys, &plan, &settings, &cfg).unwrap();
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra.seed, rb.seed);
        assert_eq!(ra.status, rb.status);
        let bits = |c: &[Vec3]| -> Vec<u64> {
            c.iter().flat_map(|v| [v.x, v.y, v.z]).map(f64::to_bits).collect()
        };
        assert_eq!(bits(&ra.final_coords), bits(&rb.final_coords), "coords differ");
        let trace_bits = |t: &[TraceEntry]| -> Vec<u64> {
            t.iter()
                .flat_map(|e| [e.energy.e_total, e.e_ligand])
                .map(f64::to_bits)
                .collect()
        };
        assert_eq!(trace_bits(&ra.trace), trace_bits(&rb.trace), "traces differ");
    }

    // Same pocket, different ligand: protein micro-groups draw identical
    // kicks, matched by group key.
    let (sys_a, ann_a) = testfix::toy_complex();
    let (mut sys_b, ann_b) = testfix::toy_complex();
    for atom in sys_b.atoms.iter_mut().skip(12) {
        atom.position += Vec3::new(0.4, 0.15, -0.2);
        atom.charge *= 0.5;
    }
    let plan_a = plan_for(&sys_a, &ann_a);
    let plan_b = plan_for(&sys_b, &ann_b);
    let model_a = EnergyModel::new(&sys_a, settings);
    let model_b = EnergyModel::new(&sys_b, settings);
    for seed in [0u64, 1, 17] {
        let ka = protocol::apply_kick(
            &model_a,
            &plan_a,
            &TransformParams::zeros(&plan_a),
            &sys_a.positions(),
            &cfg,
            seed,
        );
        let kb = protocol::apply_kick(
            &model_b,
            &plan_b,
            &TransformParams::zeros(&plan_b),
            &sys_b.positions(),
            &cfg,
            seed,
        );
        let draws = |plan: &SegmentationPlan, k: &TransformParams| -> HashMap<(i64, bool), (Vec3, Vec3)> {
            plan.micro_groups
                .iter()
                .filter_map(|g| match g.key {
                    GroupKey::Protein { residue_id, backbone } => {
                        Some(((residue_id, backbone), (k.theta_t_micro[g.id], k.theta_r_micro[g.id])))
                    }
                    _ => None,
                })
                .collect()
        };
        let da = draws(&plan_a, &ka);
        let db = draws(&plan_b, &kb);
        assert_eq!(da.len(), db.len());
        for (key, va) in &da {
            assert_eq!(Some(va), db.get(key), "protein group {key:?} drew differently");
        }
    }

    println!("ACCEPTANCE 5 byte-identical determinism and protein-draw consistency: PASS");
}

// ---------------------------------------------------------------------------
// 6. Basin escape vs plain gradient descent
// ---------------------------------------------------------------------------

/// Four-atom ligand whose central dihedral has minima at +-pi/2 separated
/// by a ~10 kcal/mol barrier, with the start basin (+pi/2) slightly higher.
fn double_well_ligand() -> (MolecularSystem, AtomAnnotations) {
    let mut b = SystemBuilder::new();
    let t = b.atom_type(12.0, 0.0, 3.0);
    let bc = b.bond_coeff(300.0, 1.5);
    let ac = b.angle_coeff(40.0, 110.0f64.to_radians());
    let dc = b.dihedral_coeff(vec![
        DihedralTerm { k: 5.0, n: 2, d: 0.0 },
        DihedralTerm { k: 0.5, n: 1, d: std::f64::consts::FRAC_PI_2 },
    ]);
    let a0 = b.atom(1, t, 0.0, Vec3::new(-0.5, 1.4, 0.0));
    let a1 = b.atom(1, t, 0.0, Vec3::new(0.0, 0.0, 0.0));
    let a2 = b.atom(1, t, 0.0, Vec3::new(1.5, 0.0, 0.0));
    let a3 = b.atom(1, t, 0.0, Vec3::new(2.0, 0.0, 1.4));
    b.bond(bc, a0, a1);
    b.bond(bc, a1, a2);
    b.bond(bc, a2, a3);
    b.angle(ac, a0, a1, a2);
    b.angle(ac, a1, a2, a3);
    b.dihedral(dc, a0, a1, a2, a3);
    let sys = b.build();
    let ann = AtomAnnotations {
        per_atom: (0..4)
            .map(|_| AtomAnnotation {
                residue_id: 900,
                residue_name: "LIG".into(),
                is_ligand: true,
                is_backbone: false,
                secondary_structure: SecondaryStructure::None,
                fragment_id: None,
            })
            .collect(),
        rotatable_bonds: vec![(a1, a2)],
    };
    (sys, ann)
}

fn dihedral_of(c: &[Vec3]) -> f64 {
    let b1 = c[1] - c[0];
    let b2 = c[2] - c[1];
    let b3 = c[3] - c[2];
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    (n1.cross(&n2).dot(&b2) / b2.norm()).atan2(n1.dot(&n2))
}

#[test]
fn criterion_06_basin_escape() {
    let start = Instant::now();
    let settings = NonbondedSettings::default();
    let (sys, ann) = double_well_ligand();
    let coords0 = sys.positions();
    assert!(dihedral_of(&coords0) > 0.0, "fixture must start in the +pi/2 basin");

    // Plain coordinate gradient descent: no kick, no hierarchy. All ten
    // lightly jittered starts must stay in the starting basin.
    let mut model = EnergyModel::new(&sys, settings);
    for run in 0..10 {
        let mut c = coords0.clone();
        c[3].y += 1e-3 * run as f64;
        for _ in 0..4000 {
            let (_, g) = model.energy_and_forces(&c).unwrap();
            for (ci, gi) in c.iter_mut().zip(&g) {
                *ci -= 1e-4 * gi;
            }
        }
        assert!(
            dihedral_of(&c) > 0.0,
            "plain descent run {run} crossed the barrier"
        );
    }

    // Kicked hierarchical runs: at least one of ten seeds must land in the
    // other basin.
    let plan = plan_for(&sys, &ann);
    let cfg = ProtocolConfig::default();
    let records = protocol::generate_conformations(&sys, &plan, &settings, &cfg).unwrap();
    let escaped = records
        .iter()
        .filter(|r| r.status != RunStatus::Failed && dihedral_of(&r.final_coords) < 0.0)
        .count();
    assert!(escaped >= 1, "no kicked run escaped the starting basin");
    assert!(start.elapsed().as_secs() < 600, "over the 10 minute budget");
    println!("ACCEPTANCE 6 basin escape ({escaped}/10 kicked runs crossed, 0/10 plain descent): PASS");
}

// ---------------------------------------------------------------------------
// 7. Feature pipeline
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_feature_pipeline() {
    // 2200-step trace -> exactly 22 features, scaled by 1000.
    let trace = FeatureTrace {
        delta_e: (0..2200).map(|i| i as f64).collect(),
        e_protein_init: 0.0,
    };
    let feats = features::downsample_trace(&trace, 100, 1000.0).unwrap();
    assert_eq!(feats.len(), 22);
    assert_eq!(feats[0], 99.0 / 1000.0);
    assert_eq!(feats[21], 2199.0 / 1000.0);

    // 10 conformation blocks + 12 scores -> 232 columns.
    let blocks: Vec<Option<Vec<f64>>> = (0..10).map(|c| Some(vec![c as f64; 22])).collect();
    let scores = ScoreRow {
        initial: -1.0,
        relaxed: -2.0,
        per_conf: (0..10).map(|c| -(c as f64)).collect(),
        fallback: false,
    };
    let fv = features::assemble_features("lig", &blocks, &scores).unwrap();
    assert_eq!(fv.values.len(), 232, "expected 232 feature columns");
    assert_eq!(fv.names.len(), 232);

    // Separation limit: with the ligand pulled 1000 A away, the formation
    // energy of the initial state vanishes.
    let (sys, ann) = testfix::toy_complex();
    let plan = plan_for(&sys, &ann);
    let settings = NonbondedSettings {
        skip_fixed_fixed: false,
        ..NonbondedSettings::default()
    };
    let mut model = EnergyModel::new(&sys, settings);
    let mut coords = sys.positions();
    for c in coords.iter_mut().skip(12) {
        *c += Vec3::new(1000.0, 0.0, 0.0);
    }
    let e_complex = model.energy(&coords).unwrap().e_total;
    let ligand: std::collections::HashSet<usize> = plan.ligand_atoms().into_iter().collect();
    let lig_mask: Vec<bool> = (0..sys.atom_count()).map(|i| ligand.contains(&i)).collect();
    let prot_mask: Vec<bool> = lig_mask.iter().map(|m| !m).collect();
    let e_lig = model.energy_subset(&coords, &lig_mask).unwrap().e_total;
    let e_prot = model.energy_subset(&coords, &prot_mask).unwrap().e_total;
    let delta = e_complex - e_lig - e_prot;
    assert!(delta.abs() <= 1e-9, "separation limit delta {delta}");

    println!("ACCEPTANCE 7 feature pipeline (22 features, 232 columns, separation limit): PASS");
}

// ---------------------------------------------------------------------------
// 8. Analytics oracles: Kabsch, NEF/AUC exhaustive, PCA vs Jacobi
// ---------------------------------------------------------------------------

/// NEF by explicit rank counting: item i is in the top block when the
/// number of strictly better scores plus earlier ties is below the block
/// size.
fn nef_oracle(scores: &[f64], labels: &[bool], chi: f64) -> f64 {
    let m = scores.len();
    let top = (chi * m as f64).ceil() as usize;
    let a = labels.iter().filter(|&&l| l).count();
    let mut a_s = 0;
    for i in 0..m {
        let rank = scores.iter().take(i).filter(|&&s| s == scores[i]).count()
            + scores.iter().filter(|&&s| s > scores[i]).count();
        if rank < top && labels[i] {
            a_s += 1;
        }
    }
    a_s as f64 / top.min(a) as f64
}

/// AUC by the Mann-Whitney midrank formula rather than pair counting.
fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let m = scores.len();
    let a = labels.iter().filter(|&&l| l).count();
    let d = m - a;
    let mut rank_sum = 0.0;
    for i in 0..m {
        if !labels[i] {
            continue;
        }
        let below = scores.iter().filter(|&&s| s < scores[i]).count();
        let ties = scores.iter().filter(|&&s| s == scores[i]).count();
        // Midrank, 1-based.
        rank_sum += below as f64 + (ties as f64 + 1.0) / 2.0;
    }
    (rank_sum - (a * (a + 1)) as f64 / 2.0) / (a * d) as f64
}

/// Cyclic Jacobi eigensolver, the PCA oracle.
fn jacobi_eigen(mut m: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p][q] * m[p][q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-18 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| m[i][i]).collect();
    (eigenvalues, v)
}

#[test]
fn criterion_08_analytics_oracles() {
    // Kabsch recovers a random rigid motion.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let reference: Vec<Vec3> = (0..20).map(|_| rand_vec3(&mut rng, 5.0)).collect();
    let axis = rand_vec3(&mut rng, 1.0);
    let shift = rand_vec3(&mut rng, 8.0);
    let mobile: Vec<Vec3> = reference.iter().map(|&p| rodrigues(axis, 0.93, p) + shift).collect();
    let subset: Vec<usize> = (0..20).collect();
    let aligned = analysis::kabsch_align(&reference, &mobile, &subset).unwrap();
    assert!(aligned.rmsd <= 1e-9, "kabsch rmsd {}", aligned.rmsd);

    // NEF and AUC vs oracles, exhaustive over 6-element tables: every score
    // pattern over three tie-prone levels, every mixed label pattern.
    let mut checked = 0usize;
    for code in 0..3usize.pow(6) {
        let mut c = code;
        let scores: Vec<f64> = (0..6)
            .map(|_| {
                let v = (c % 3) as f64;
                c /= 3;
                v
            })
            .collect();
        for lbl in 1..63u32 {
            let labels: Vec<bool> = (0..6).map(|i| lbl >> i & 1 == 1).collect();
            for &chi in &[1.0 / 6.0, 1.0 / 3.0, 0.5, 1.0] {
                let got = analysis::nef(&scores, &labels, chi).unwrap();
                let want = nef_oracle(&scores, &labels, chi);
                assert_eq!(got, want, "nef scores {scores:?} labels {labels:?} chi {chi}");
            }
            let got = analysis::auc_roc(&scores, &labels).unwrap();
            let want = auc_oracle(&scores, &labels);
            assert_eq!(got, want, "auc scores {scores:?} labels {labels:?}");
            checked += 1;
        }
    }
    assert_eq!(checked, 3usize.pow(6) * 62);

    // PCA vs the Jacobi oracle.
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let model = analysis::pca_fit(&rows).unwrap();
    let d = 5;
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let (vals, vecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    for k in 0..2 {
        let oracle: Vec<f64> = (0..d).map(|i| vecs[i][order[k]]).collect();
        let dot: f64 = oracle.iter().zip(&model.components[k]).map(|(a, b)| a * b).sum();
        assert!(
            (dot.abs() - 1.0).abs() <= 1e-8,
            "component {k} misaligned with oracle: |dot| {}",
            dot.abs()
        );
        assert!(
            (vals[order[k]] - model.explained_variance[k]).abs() <= 1e-8,
            "variance {k}: {} vs {}",
            vals[order[k]],
            model.explained_variance[k]
        );
    }

    println!("ACCEPTANCE 8 analytics oracles (Kabsch, exhaustive NEF/AUC, PCA vs Jacobi): PASS");
}

// ---------------------------------------------------------------------------
// 9. Aggressive preset plumbing
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_aggressive_preset() {
    let settings = NonbondedSettings::default();
    let (sys, ann) = testfix::tripeptide_with_ligand();
    let plan = plan_for(&sys, &ann);
    let cfg = ProtocolConfig {
        extension_slope_threshold: Some(0.0),
        ..ProtocolConfig::aggressive()
    };

    // Macro kick: rotation within +-pi, translation equal to the
    // configured vector.
    let model = EnergyModel::new(&sys, settings);
    let mg = plan.ligand_macro().expect("ligand macro-group");
    for seed in 0..50u64 {
        let kicked = protocol::apply_kick(
            &model,
            &plan,
            &TransformParams::zeros(&plan),
            &sys.positions(),
            &cfg,
            seed,
        );
        assert!(kicked.theta_r_macro[mg.id].amax() <= std::f64::consts::PI);
        assert_eq!(kicked.theta_t_macro[mg.id], cfg.ligand_kick_t_vector);
    }

    // Ligand relaxation runs 10,000 steps.
    let relax = protocol::relax_ligand(&sys, &plan, &settings, &cfg).unwrap();
    assert_eq!(relax.trace.len(), 10_000);

    // 30 records; extension adds 5,000 steps on top of relax + minimize.
    let records = protocol::generate_conformations(&sys, &plan, &settings, &cfg).unwrap();
    assert_eq!(records.len(), 30, "aggressive preset must emit 30 records");
    let extended = records
        .iter()
        .filter(|r| r.status == RunStatus::Extended)
        .count();
    assert!(extended >= 1, "no record took the 5000-step extension");
    for rec in &records {
        match rec.status {
            RunStatus::Extended => assert_eq!(rec.trace.len(), 10_000 + 2000 + 5000),
            RunStatus::Converged => assert_eq!(rec.trace.len(), 10_000 + 2000),
            RunStatus::Failed => panic!("seed {} failed", rec.seed),
        }
    }

    println!("ACCEPTANCE 9 aggressive preset plumbing (macro kick, 10k relax, 30 records, +5k extension): PASS");
}

// ---------------------------------------------------------------------------
// 10. Capacity: 69k-atom synthetic system
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_capacity_69k_atoms() {
    // 41^3 lattice protein (68,921 atoms) plus a 4-atom ligand at the
    // centre, round-tripped through the text format.
    let mut b = SystemBuilder::new();
    let tp = b.atom_type(12.0, 0.07, 3.2);
    let tl = b.atom_type(16.0, 0.12, 3.0);
    let bc = b.bond_coeff(300.0, 1.5);
    let n_side = 41usize;
    let spacing = 3.5;
    let mut ann_rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut rid = 0i64;
    for i in 0..n_side {
        for j in 0..n_side {
            for k in 0..n_side {
                let jitter = rand_vec3(&mut rng, 0.2);
                let pos = Vec3::new(i as f64, j as f64, k as f64) * spacing + jitter;
                let q = if (i + j + k) % 2 == 0 { 0.05 } else { -0.05 };
                b.atom(1, tp, q, pos);
                rid += 1;
                ann_rows.push(AtomAnnotation {
                    residue_id: rid,
                    residue_name: "ALA".into(),
                    is_ligand: false,
                    is_backbone: true,
                    secondary_structure: SecondaryStructure::Loop,
                    fragment_id: None,
                });
            }
        }
    }
    let centre = Vec3::new(1.0, 1.0, 1.0) * (spacing * (n_side - 1) as f64 / 2.0)
        + Vec3::new(1.75, 1.75, 1.75);
    let mut lig = Vec::new();
    for m in 0..4 {
        lig.push(b.atom(2, tl, 0.1, centre + Vec3::new(1.5 * m as f64, 0.3, 0.0)));
        ann_rows.push(AtomAnnotation {
            residue_id: 9000,
            residue_name: "LIG".into(),
            is_ligand: true,
            is_backbone: false,
            secondary_structure: SecondaryStructure::None,
            fragment_id: None,
        });
    }
    for w in lig.windows(2) {
        b.bond(bc, w[0], w[1]);
    }
    let built = b.build();
    let n_atoms = built.atom_count();
    assert!(n_atoms >= 68_900, "need a ~69k atom system, built {n_atoms}");

    let parse_start = Instant::now();
    let text = molio::write_system_str(&built);
    let sys = molio::parse_system_str(&text).unwrap();
    let parse_time = parse_start.elapsed();
    assert_eq!(sys.atom_count(), n_atoms);

    let ann = AtomAnnotations {
        per_atom: ann_rows,
        rotatable_bonds: vec![(lig[1], lig[2])],
    };
    let plan = build_segmentation(&sys, &ann, SegmentationConfig::new(centre, 12.0)).unwrap();

    let eval_start = Instant::now();
    let mut model = EnergyModel::new(&sys, NonbondedSettings::default());
    model.set_fixed_atoms(&plan.fixed_atoms);
    let params = TransformParams::zeros(&plan);
    let eval = cost_and_grad(
        &mut model,
        &plan,
        &params,
        &sys.positions(),
        TransformMode::Standard,
    )
    .unwrap();
    let eval_time = eval_start.elapsed();
    assert!(eval.energy.e_total.is_finite());
    assert!(ParamLayout::from_plan(&plan).pack(&eval.grad).iter().all(|g| g.is_finite()));

    println!(
        "ACCEPTANCE 10 capacity: {n_atoms} atoms, parse+round-trip {:.2}s, energy+gradient {:.2}s: PASS",
        parse_time.as_secs_f64(),
        eval_time.as_secs_f64()
    );
}
