use rand::{Rng, SeedableRng};
use ttgen_core::ffenergy::{EnergyModel, NonbondedSettings};
use ttgen_core::molio::{DihedralTerm, SystemBuilder};
use ttgen_core::Vec3;

fn check_forces(sys: &ttgen_core::molio::MolecularSystem, coords: &[Vec3], label: &str) {
    let mut model = EnergyModel::new(sys, NonbondedSettings::default());
    let (_, f) = model.energy_and_forces(coords).unwrap();
    let h = 1e-6;
    let mut c = coords.to_vec();
    for i in 0..c.len() {
        for k in 0..3 {
            let orig = c[i][k];
            c[i][k] = orig + h;
            let ep = model.energy(&c).unwrap().e_total;
            c[i][k] = orig - h;
            let em = model.energy(&c).unwrap().e_total;
            c[i][k] = orig;
            let fd = (ep - em) / (2.0 * h);
            assert!(
                (f[i][k] - fd).abs() < 1e-5 * fd.abs().max(1.0),
                "{label}: atom {i} comp {k}: analytic {} vs fd {}",
                f[i][k],
                fd
            );
        }
    }
}

#[test]
fn dihedral_only() {
    let mut b = SystemBuilder::new();
    let t = b.atom_type(1.0, 0.0, 1.0);
    let dc = b.dihedral_coeff(vec![DihedralTerm { k: 0.8, n: 3, d: 0.5 }]);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let ats: Vec<usize> = (0..4)
        .map(|i| {
            b.atom(
                1,
                t,
                0.0,
                Vec3::new(i as f64 * 1.4, rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
            )
        })
        .collect();
    b.dihedral(dc, ats[0], ats[1], ats[2], ats[3]);
    let sys = b.build();
    check_forces(&sys, &sys.positions(), "dihedral");
}

#[test]
fn improper_only() {
    let mut b = SystemBuilder::new();
    let t = b.atom_type(1.0, 0.0, 1.0);
    let ic = b.improper_coeff(5.0, 0.2);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let ats: Vec<usize> = (0..4)
        .map(|i| {
            b.atom(
                1,
                t,
                0.0,
                Vec3::new(i as f64 * 1.4, rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
            )
        })
        .collect();
    b.improper(ic, ats[0], ats[1], ats[2], ats[3]);
    let sys = b.build();
    check_forces(&sys, &sys.positions(), "improper");
}

#[test]
fn angle_only() {
    let mut b = SystemBuilder::new();
    let t = b.atom_type(1.0, 0.0, 1.0);
    let ac = b.angle_coeff(40.0, 1.9);
    let a0 = b.atom(1, t, 0.0, Vec3::new(-1.2, 0.3, 0.1));
    let a1 = b.atom(1, t, 0.0, Vec3::new(0.0, 0.0, 0.0));
    let a2 = b.atom(1, t, 0.0, Vec3::new(1.1, 0.4, -0.3));
    b.angle(ac, a0, a1, a2);
    let sys = b.build();
    check_forces(&sys, &sys.positions(), "angle");
}

#[test]
fn pair14_only() {
    let mut b = SystemBuilder::new();
    let t = b.atom_type_14(1.0, 0.1, 3.0, 0.05, 2.8);
    let bc = b.bond_coeff(0.0, 1.4);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let ats: Vec<usize> = (0..5)
        .map(|i| {
            b.atom(
                1,
                t,
                0.1,
                Vec3::new(i as f64 * 1.4, rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
            )
        })
        .collect();
    for w in ats.windows(2) {
        b.bond(bc, w[0], w[1]);
    }
    let sys = b.build();
    check_forces(&sys, &sys.positions(), "pair14");
}

#[test]
fn switched_nonbonded() {
    let mut b = SystemBuilder::new();
    let t = b.atom_type(1.0, 0.1, 3.0);
    b.atom(1, t, 0.2, Vec3::zeros());
    b.atom(1, t, -0.3, Vec3::new(11.0, 0.3, -0.2));
    let sys = b.build();
    check_forces(&sys, &sys.positions(), "switched");
}
