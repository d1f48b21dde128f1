//! Sequential vs rayon-parallel nonbonded evaluation on dense random boxes.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};

use ttgen_core::ffenergy::{EnergyModel, NonbondedSettings};
use ttgen_core::molio::{MolecularSystem, SystemBuilder};
use ttgen_core::{Parallelism, Vec3};

fn random_box(n: usize, density: f64, seed: u64) -> MolecularSystem {
    let side = (n as f64 / density).cbrt();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut b = SystemBuilder::new();
    let t = b.atom_type(12.0, 0.1, 3.2);
    for _ in 0..n {
        b.atom(
            1,
            t,
            rng.gen_range(-0.2..0.2),
            Vec3::new(
                rng.gen_range(0.0..side),
                rng.gen_range(0.0..side),
                rng.gen_range(0.0..side),
            ),
        );
    }
    b.build()
}

fn bench_energy_forces(c: &mut Criterion) {
    let mut group = c.benchmark_group("energy_and_forces");
    group.sample_size(20);
    for &n in &[2_000usize, 8_000] {
        let sys = random_box(n, 0.02, 7);
        let coords = sys.positions();
        for par in [Parallelism::Sequential, Parallelism::Parallel] {
            let label = match par {
                Parallelism::Sequential => "sequential",
                Parallelism::Parallel => "parallel",
            };
            group.bench_with_input(BenchmarkId::new(label, n), &n, |bench, _| {
                let mut model = EnergyModel::new(&sys, NonbondedSettings::default());
                model.parallelism = par;
                // Warm the neighbor list outside the timed loop.
                model.energy(&coords).unwrap();
                bench.iter(|| model.energy_and_forces(&coords).unwrap());
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_energy_forces);
criterion_main!(benches);
