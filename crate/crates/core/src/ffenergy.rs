//! Molecular-mechanics energy and analytic forces.
//!
//! Terms: harmonic bonds and angles, multi-term cosine dihedrals, harmonic
//! impropers (improper angle computed as the dihedral over the stored
//! 4-tuple), Lennard-Jones with Lorentz-Berthelot mixing, and Coulomb with
//! constant 332.0637 kcal*A/(mol*e^2). Both nonbonded terms are multiplied
//! by the cubic-in-r^2 switching polynomial between the inner and outer
//! cutoffs, which keeps energy and gradient continuous where pairs leave the
//! cutoff. 1-2 and 1-3 pairs are excluded; 1-4 pairs use the dedicated
//! (epsilon14, sigma14) parameters and unscaled Coulomb.
//!
//! No periodic boundaries, no Ewald, no solvent: vacuum pocket energetics.

use std::collections::{HashMap, HashSet};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::molio::MolecularSystem;
use crate::parallel::Parallelism;
use crate::Vec3;

pub const COULOMB_CONSTANT: f64 = 332.0637;

/// Interacting pair closer than this is treated as a geometry collapse.
pub const SINGULAR_DISTANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EnergyError {
    #[error("singular pair {i}-{j} at r = {r:.3e} A")]
    SingularPair { i: usize, j: usize, r: f64 },
    #[error("non-finite energy in term {term}")]
    NonFiniteEnergy { term: &'static str },
}

type Result<T> = std::result::Result<T, EnergyError>;

#[derive(Debug, Clone, Copy)]
pub struct NonbondedSettings {
    /// kcal*A/(mol*e^2)
    pub coulomb_constant: f64,
    /// End of the switching region, A.
    pub cutoff_outer: f64,
    /// Start of the switching region, A.
    pub cutoff_inner: f64,
    /// Skip nonbonded pairs where both atoms are fixed; energies are then
    /// relative to that constant.
    pub skip_fixed_fixed: bool,
}

impl Default for NonbondedSettings {
    fn default() -> Self {
        Self {
            coulomb_constant: COULOMB_CONSTANT,
            cutoff_outer: 12.0,
            cutoff_inner: 10.0,
            skip_fixed_fixed: true,
        }
    }
}

impl NonbondedSettings {
    fn validate(&self) {
        assert!(
            self.cutoff_inner > 0.0 && self.cutoff_inner < self.cutoff_outer,
            "need 0 < cutoff_inner < cutoff_outer"
        );
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub e_bond: f64,
    pub e_angle: f64,
    pub e_dihedral: f64,
    pub e_improper: f64,
    pub e_lj: f64,
    pub e_coulomb: f64,
    pub e_total: f64,
}

impl EnergyBreakdown {
    fn close_total(mut self) -> Self {
        self.e_total =
            self.e_bond + self.e_angle + self.e_dihedral + self.e_improper + self.e_lj + self.e_coulomb;
        self
    }

    fn check_finite(&self) -> Result<()> {
        for (term, v) in [
            ("bond", self.e_bond),
            ("angle", self.e_angle),
            ("dihedral", self.e_dihedral),
            ("improper", self.e_improper),
            ("lj", self.e_lj),
            ("coulomb", self.e_coulomb),
        ] {
            if !v.is_finite() {
                return Err(EnergyError::NonFiniteEnergy { term });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Switching polynomial
// ---------------------------------------------------------------------------

/// S(r) and dS/dr for the cubic-in-r^2 switch: 1 below the inner cutoff,
/// `(ro^2-r^2)^2 (ro^2+2r^2-3ri^2) / (ro^2-ri^2)^3` between, 0 beyond.
fn switch(r: f64, inner: f64, outer: f64) -> (f64, f64) {
    if r <= inner {
        (1.0, 0.0)
    } else if r >= outer {
        (0.0, 0.0)
    } else {
        let (ri2, ro2, t) = (inner * inner, outer * outer, r * r);
        let denom = (ro2 - ri2).powi(3);
        let s = (ro2 - t).powi(2) * (ro2 + 2.0 * t - 3.0 * ri2) / denom;
        let ds_dt = -6.0 * (ro2 - t) * (t - ri2) / denom;
        (s, 2.0 * r * ds_dt)
    }
}

// ---------------------------------------------------------------------------
// Exclusions (bonded graph distances)
// ---------------------------------------------------------------------------

/// Pairs at bond-graph distance 1-2 are fully excluded from nonbonded terms;
/// distance-3 pairs form the 1-4 list with their own LJ parameters.
#[derive(Debug, Clone, Default)]
pub struct Exclusions {
    /// dist <= 3 pairs, (i, j) with i < j. Not present in the neighbor list.
    excluded: HashSet<(u32, u32)>,
    /// dist == 3 pairs, evaluated with the 1-4 parameters.
    pub pairs14: Vec<(u32, u32)>,
}

impl Exclusions {
    pub fn from_system(system: &MolecularSystem) -> Self {
        let n = system.atom_count();
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for b in &system.bonds {
            adj[b.atoms[0]].push(b.atoms[1] as u32);
            adj[b.atoms[1]].push(b.atoms[0] as u32);
        }
        let mut excluded = HashSet::new();
        let mut pairs14 = Vec::new();
        let mut dist: HashMap<u32, u8> = HashMap::new();
        for start in 0..n as u32 {
            dist.clear();
            dist.insert(start, 0);
            let mut frontier = vec![start];
            for depth in 1..=3u8 {
                let mut next = Vec::new();
                for &x in &frontier {
                    for &y in &adj[x as usize] {
                        if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(y) {
                            e.insert(depth);
                            next.push(y);
                        }
                    }
                }
                frontier = next;
            }
            for (&other, &d) in &dist {
                if other > start {
                    excluded.insert((start, other));
                    if d == 3 {
                        pairs14.push((start, other));
                    }
                }
            }
        }
        pairs14.sort_unstable();
        Self { excluded, pairs14 }
    }

    pub fn is_excluded(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i as u32, j as u32) } else { (j as u32, i as u32) };
        self.excluded.contains(&key)
    }
}

// ---------------------------------------------------------------------------
// Cell-list pair scan and neighbor list
// ---------------------------------------------------------------------------

/// All index pairs (i < j in `atoms` order) within `cutoff`, via a cell list.
fn cell_pairs(coords: &[Vec3], atoms: &[usize], cutoff: f64) -> Vec<(u32, u32)> {
    let inv = 1.0 / cutoff;
    let cutoff2 = cutoff * cutoff;
    let mut cells: HashMap<(i32, i32, i32), Vec<u32>> = HashMap::new();
    let key = |r: &Vec3| {
        (
            (r.x * inv).floor() as i32,
            (r.y * inv).floor() as i32,
            (r.z * inv).floor() as i32,
        )
    };
    for &a in atoms {
        cells.entry(key(&coords[a])).or_default().push(a as u32);
    }
    // Half-space cell offsets so each cell pair is visited once.
    const OFFSETS: [(i32, i32, i32); 13] = [
        (1, 0, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 1, 0),
        (1, -1, 0),
        (1, 0, 1),
        (1, 0, -1),
        (0, 1, 1),
        (0, 1, -1),
        (1, 1, 1),
        (1, 1, -1),
        (1, -1, 1),
        (1, -1, -1),
    ];
    let mut pairs = Vec::new();
    for (&(cx, cy, cz), members) in &cells {
        for (ai, &a) in members.iter().enumerate() {
            for &b in &members[ai + 1..] {
                if (coords[a as usize] - coords[b as usize]).norm_squared() <= cutoff2 {
                    pairs.push(if a < b { (a, b) } else { (b, a) });
                }
            }
        }
        for (dx, dy, dz) in OFFSETS {
            if let Some(other) = cells.get(&(cx + dx, cy + dy, cz + dz)) {
                for &a in members {
                    for &b in other {
                        if (coords[a as usize] - coords[b as usize]).norm_squared() <= cutoff2 {
                            pairs.push(if a < b { (a, b) } else { (b, a) });
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Verlet-style neighbor list: every non-excluded pair within
/// `cutoff_outer + skin`, valid until any atom moves by `skin / 2`.
#[derive(Debug, Clone)]
pub struct NeighborList {
    pub pairs: Vec<(u32, u32)>,
    built_at: Vec<Vec3>,
    skin: f64,
}

impl NeighborList {
    pub fn needs_rebuild(&self, coords: &[Vec3]) -> bool {
        let limit2 = (self.skin / 2.0).powi(2);
        coords.len() != self.built_at.len()
            || coords
                .iter()
                .zip(&self.built_at)
                .any(|(a, b)| (a - b).norm_squared() > limit2)
    }
}

/// Build the neighbor list for the whole system (no fixed-pair skipping).
pub fn build_neighbor_list(
    system: &MolecularSystem,
    coords: &[Vec3],
    settings: &NonbondedSettings,
    skin: f64,
) -> NeighborList {
    let exclusions = Exclusions::from_system(system);
    build_list(coords, settings, skin, &exclusions, None)
}

fn build_list(
    coords: &[Vec3],
    settings: &NonbondedSettings,
    skin: f64,
    exclusions: &Exclusions,
    fixed: Option<&[bool]>,
) -> NeighborList {
    let all: Vec<usize> = (0..coords.len()).collect();
    let mut pairs = cell_pairs(coords, &all, settings.cutoff_outer + skin);
    pairs.retain(|&(a, b)| {
        if exclusions.is_excluded(a as usize, b as usize) {
            return false;
        }
        if settings.skip_fixed_fixed {
            if let Some(fixed) = fixed {
                if fixed[a as usize] && fixed[b as usize] {
                    return false;
                }
            }
        }
        true
    });
    NeighborList {
        pairs,
        built_at: coords.to_vec(),
        skin,
    }
}

// ---------------------------------------------------------------------------
// Bonded term geometry and gradients
// ---------------------------------------------------------------------------

/// Dihedral angle over (r1, r2, r3, r4) and its gradient (Blondel-Karplus).
fn dihedral_angle_grad(r1: Vec3, r2: Vec3, r3: Vec3, r4: Vec3) -> (f64, [Vec3; 4]) {
    let b1 = r2 - r1;
    let b2 = r3 - r2;
    let b3 = r4 - r3;
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    let b2n = b2.norm().max(1e-12);
    let phi = (n1.cross(&n2).dot(&b2) / b2n).atan2(n1.dot(&n2));
    let n1sq = n1.norm_squared().max(1e-12);
    let n2sq = n2.norm_squared().max(1e-12);
    let g1 = -n1 * (b2n / n1sq);
    let g4 = n2 * (b2n / n2sq);
    let c12 = b1.dot(&b2) / (b2n * b2n);
    let c32 = b3.dot(&b2) / (b2n * b2n);
    let g2 = -g1 * (1.0 + c12) + g4 * c32;
    let g3 = -g4 * (1.0 + c32) + g1 * c12;
    (phi, [g1, g2, g3, g4])
}

fn wrap_angle(x: f64) -> f64 {
    let mut y = x % std::f64::consts::TAU;
    if y > std::f64::consts::PI {
        y -= std::f64::consts::TAU;
    } else if y <= -std::f64::consts::PI {
        y += std::f64::consts::TAU;
    }
    y
}

// ---------------------------------------------------------------------------
// Energy model
// ---------------------------------------------------------------------------

/// Evaluator bundling the system topology, exclusion tables, fixed-atom
/// mask, and a cached neighbor list.
pub struct EnergyModel<'a> {
    system: &'a MolecularSystem,
    pub settings: NonbondedSettings,
    pub skin: f64,
    pub parallelism: Parallelism,
    exclusions: Exclusions,
    fixed: Vec<bool>,
    neighbors: Option<NeighborList>,
}

impl<'a> EnergyModel<'a> {
    pub fn new(system: &'a MolecularSystem, settings: NonbondedSettings) -> Self {
        settings.validate();
        Self {
            system,
            settings,
            skin: 2.0,
            parallelism: Parallelism::Sequential,
            exclusions: Exclusions::from_system(system),
            fixed: vec![false; system.atom_count()],
            neighbors: None,
        }
    }

    /// Mark atoms as fixed; with `skip_fixed_fixed` their mutual nonbonded
    /// pairs are dropped from the list.
    pub fn set_fixed_atoms(&mut self, fixed_atoms: &[usize]) {
        self.fixed = vec![false; self.system.atom_count()];
        for &a in fixed_atoms {
            self.fixed[a] = true;
        }
        self.neighbors = None;
    }

    pub fn exclusions(&self) -> &Exclusions {
        &self.exclusions
    }

    fn ensure_neighbors(&mut self, coords: &[Vec3]) {
        let rebuild = match &self.neighbors {
            None => true,
            Some(nl) => nl.needs_rebuild(coords),
        };
        if rebuild {
            self.neighbors = Some(build_list(
                coords,
                &self.settings,
                self.skin,
                &self.exclusions,
                Some(&self.fixed),
            ));
        }
    }

    pub fn energy(&mut self, coords: &[Vec3]) -> Result<EnergyBreakdown> {
        self.energy_and_forces_impl(coords, false).map(|(e, _)| e)
    }

    /// Energy plus `dE/dr` for every atom.
    pub fn energy_and_forces(&mut self, coords: &[Vec3]) -> Result<(EnergyBreakdown, Vec<Vec3>)> {
        self.energy_and_forces_impl(coords, true)
            .map(|(e, g)| (e, g.unwrap()))
    }

    fn energy_and_forces_impl(
        &mut self,
        coords: &[Vec3],
        with_forces: bool,
    ) -> Result<(EnergyBreakdown, Option<Vec<Vec3>>)> {
        assert_eq!(coords.len(), self.system.atom_count());
        self.ensure_neighbors(coords);
        let mut grad = if with_forces {
            Some(vec![Vec3::zeros(); coords.len()])
        } else {
            None
        };
        let mut e = self.bonded_energy(coords, grad.as_deref_mut())?;
        let pairs = &self.neighbors.as_ref().unwrap().pairs;
        let (lj, coul) = self.nonbonded_sum(coords, pairs, false, grad.as_deref_mut())?;
        let (lj14, coul14) = self.pairs14_sum(coords, grad.as_deref_mut())?;
        e.e_lj = lj + lj14;
        e.e_coulomb = coul + coul14;
        let e = e.close_total();
        e.check_finite()?;
        Ok((e, grad))
    }

    fn bonded_energy(&self, coords: &[Vec3], mut grad: Option<&mut [Vec3]>) -> Result<EnergyBreakdown> {
        let sys = self.system;
        let mut e = EnergyBreakdown::default();

        for b in &sys.bonds {
            let c = sys.bond_coeffs[b.coeff];
            let d = coords[b.atoms[0]] - coords[b.atoms[1]];
            let r = d.norm();
            if r < SINGULAR_DISTANCE {
                return Err(EnergyError::SingularPair {
                    i: b.atoms[0],
                    j: b.atoms[1],
                    r,
                });
            }
            let dr = r - c.r0;
            e.e_bond += c.k * dr * dr;
            if let Some(g) = grad.as_deref_mut() {
                let f = d * (2.0 * c.k * dr / r);
                g[b.atoms[0]] += f;
                g[b.atoms[1]] -= f;
            }
        }

        for a in &sys.angles {
            let c = sys.angle_coeffs[a.coeff];
            let [i, j, k] = a.atoms;
            let u = coords[i] - coords[j];
            let v = coords[k] - coords[j];
            let (un, vn) = (u.norm(), v.norm());
            let uh = u / un;
            let vh = v / vn;
            let cos_t = uh.dot(&vh).clamp(-1.0, 1.0);
            let theta = cos_t.acos();
            let dt = theta - c.theta0;
            e.e_angle += c.k * dt * dt;
            if let Some(g) = grad.as_deref_mut() {
                let sin_t = (1.0 - cos_t * cos_t).sqrt().max(1e-8);
                let dth_di = -(vh - uh * cos_t) / (un * sin_t);
                let dth_dk = -(uh - vh * cos_t) / (vn * sin_t);
                let de = 2.0 * c.k * dt;
                g[i] += dth_di * de;
                g[k] += dth_dk * de;
                g[j] -= (dth_di + dth_dk) * de;
            }
        }

        for d in &sys.dihedrals {
            let [i, j, k, l] = d.atoms;
            let (phi, dphi) = dihedral_angle_grad(coords[i], coords[j], coords[k], coords[l]);
            let mut de_dphi = 0.0;
            for term in &sys.dihedral_coeffs[d.coeff] {
                e.e_dihedral += term.k * (1.0 + (term.n as f64 * phi - term.d).cos());
                de_dphi += -term.k * term.n as f64 * (term.n as f64 * phi - term.d).sin();
            }
            if let Some(g) = grad.as_deref_mut() {
                for (idx, gp) in d.atoms.iter().zip(dphi) {
                    g[*idx] += gp * de_dphi;
                }
            }
        }

        for imp in &sys.impropers {
            let c = sys.improper_coeffs[imp.coeff];
            let [i, j, k, l] = imp.atoms;
            let (chi, dchi) = dihedral_angle_grad(coords[i], coords[j], coords[k], coords[l]);
            let dx = wrap_angle(chi - c.chi0);
            e.e_improper += c.k * dx * dx;
            if let Some(g) = grad.as_deref_mut() {
                let de = 2.0 * c.k * dx;
                for (idx, gp) in imp.atoms.iter().zip(dchi) {
                    g[*idx] += gp * de;
                }
            }
        }

        Ok(e)
    }

    /// One nonbonded pair: (e_lj, e_coulomb, dE/dr). `use14` picks the 1-4
    /// LJ parameters.
    fn pair_terms(&self, i: usize, j: usize, r: f64, use14: bool) -> Result<(f64, f64, f64)> {
        if r < SINGULAR_DISTANCE {
            return Err(EnergyError::SingularPair { i, j, r });
        }
        let sys = self.system;
        let pi = sys.pair_coeffs[sys.atoms[i].type_id - 1];
        let pj = sys.pair_coeffs[sys.atoms[j].type_id - 1];
        let (eps, sigma) = if use14 {
            ((pi.epsilon14 * pj.epsilon14).sqrt(), 0.5 * (pi.sigma14 + pj.sigma14))
        } else {
            ((pi.epsilon * pj.epsilon).sqrt(), 0.5 * (pi.sigma + pj.sigma))
        };
        let (s, ds_dr) = switch(r, self.settings.cutoff_inner, self.settings.cutoff_outer);
        let sr6 = (sigma / r).powi(6);
        let lj = 4.0 * eps * (sr6 * sr6 - sr6);
        let dlj_dr = 4.0 * eps * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r;
        let qq = self.settings.coulomb_constant * sys.atoms[i].charge * sys.atoms[j].charge;
        let coul = qq / r;
        let dcoul_dr = -qq / (r * r);
        let de_dr = (dlj_dr + dcoul_dr) * s + (lj + coul) * ds_dr;
        Ok((lj * s, coul * s, de_dr))
    }

    fn nonbonded_sum(
        &self,
        coords: &[Vec3],
        pairs: &[(u32, u32)],
        use14: bool,
        grad: Option<&mut [Vec3]>,
    ) -> Result<(f64, f64)> {
        let cutoff = self.settings.cutoff_outer;
        #[cfg(feature = "parallel")]
        if self.parallelism.is_parallel() {
            let n = coords.len();
            let result = pairs
                .par_iter()
                .fold(
                    || Ok((0.0, 0.0, vec![Vec3::zeros(); n])),
                    |acc: Result<(f64, f64, Vec<Vec3>)>, &(a, b)| {
                        let (mut lj, mut coul, mut g) = acc?;
                        let (i, j) = (a as usize, b as usize);
                        let d = coords[i] - coords[j];
                        let r = d.norm();
                        if r < cutoff {
                            let (elj, ecoul, de_dr) = self.pair_terms(i, j, r, use14)?;
                            lj += elj;
                            coul += ecoul;
                            let f = d * (de_dr / r);
                            g[i] += f;
                            g[j] -= f;
                        }
                        Ok((lj, coul, g))
                    },
                )
                .reduce(
                    || Ok((0.0, 0.0, vec![Vec3::zeros(); n])),
                    |x, y| {
                        let (lx, cx, mut gx) = x?;
                        let (ly, cy, gy) = y?;
                        for (a, b) in gx.iter_mut().zip(gy) {
                            *a += b;
                        }
                        Ok((lx + ly, cx + cy, gx))
                    },
                )?;
            let (lj, coul, g) = result;
            if let Some(out) = grad {
                for (a, b) in out.iter_mut().zip(g) {
                    *a += b;
                }
            }
            return Ok((lj, coul));
        }

        let mut lj = 0.0;
        let mut coul = 0.0;
        let mut grad = grad;
        for &(a, b) in pairs {
            let (i, j) = (a as usize, b as usize);
            let d = coords[i] - coords[j];
            let r = d.norm();
            if r >= cutoff {
                continue;
            }
            let (elj, ecoul, de_dr) = self.pair_terms(i, j, r, use14)?;
            lj += elj;
            coul += ecoul;
            if let Some(g) = grad.as_deref_mut() {
                let f = d * (de_dr / r);
                g[i] += f;
                g[j] -= f;
            }
        }
        Ok((lj, coul))
    }

    fn pairs14_sum(&self, coords: &[Vec3], grad: Option<&mut [Vec3]>) -> Result<(f64, f64)> {
        let pairs: Vec<(u32, u32)> = if self.settings.skip_fixed_fixed {
            self.exclusions
                .pairs14
                .iter()
                .copied()
                .filter(|&(a, b)| !(self.fixed[a as usize] && self.fixed[b as usize]))
                .collect()
        } else {
            self.exclusions.pairs14.clone()
        };
        self.nonbonded_sum(coords, &pairs, true, grad)
    }

    /// Energy restricted to atoms where `mask` is true: bonded terms fully
    /// inside the mask plus nonbonded pairs within it.
    pub fn energy_subset(&self, coords: &[Vec3], mask: &[bool]) -> Result<EnergyBreakdown> {
        assert_eq!(mask.len(), self.system.atom_count());
        let sys = self.system;
        let mut e = EnergyBreakdown::default();

        let inside = |atoms: &[usize]| atoms.iter().all(|&a| mask[a]);
        let sub = MaskedSystemView;
        let _ = sub;

        for b in &sys.bonds {
            if inside(&b.atoms) {
                let c = sys.bond_coeffs[b.coeff];
                let r = (coords[b.atoms[0]] - coords[b.atoms[1]]).norm();
                e.e_bond += c.k * (r - c.r0).powi(2);
            }
        }
        for a in &sys.angles {
            if inside(&a.atoms) {
                let c = sys.angle_coeffs[a.coeff];
                let [i, j, k] = a.atoms;
                let cos_t = (coords[i] - coords[j])
                    .normalize()
                    .dot(&(coords[k] - coords[j]).normalize())
                    .clamp(-1.0, 1.0);
                e.e_angle += c.k * (cos_t.acos() - c.theta0).powi(2);
            }
        }
        for d in &sys.dihedrals {
            if inside(&d.atoms) {
                let [i, j, k, l] = d.atoms;
                let (phi, _) = dihedral_angle_grad(coords[i], coords[j], coords[k], coords[l]);
                for term in &sys.dihedral_coeffs[d.coeff] {
                    e.e_dihedral += term.k * (1.0 + (term.n as f64 * phi - term.d).cos());
                }
            }
        }
        for imp in &sys.impropers {
            if inside(&imp.atoms) {
                let c = sys.improper_coeffs[imp.coeff];
                let [i, j, k, l] = imp.atoms;
                let (chi, _) = dihedral_angle_grad(coords[i], coords[j], coords[k], coords[l]);
                e.e_improper += c.k * wrap_angle(chi - c.chi0).powi(2);
            }
        }

        let subset: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let mut pairs = cell_pairs(coords, &subset, self.settings.cutoff_outer);
        pairs.retain(|&(a, b)| !self.exclusions.is_excluded(a as usize, b as usize));
        if self.settings.skip_fixed_fixed {
            pairs.retain(|&(a, b)| !(self.fixed[a as usize] && self.fixed[b as usize]));
        }
        let (lj, coul) = self.nonbonded_sum(coords, &pairs, false, None)?;
        let pairs14: Vec<(u32, u32)> = self
            .exclusions
            .pairs14
            .iter()
            .copied()
            .filter(|&(a, b)| mask[a as usize] && mask[b as usize])
            .filter(|&(a, b)| {
                !(self.settings.skip_fixed_fixed && self.fixed[a as usize] && self.fixed[b as usize])
            })
            .collect();
        let (lj14, coul14) = self.nonbonded_sum(coords, &pairs14, true, None)?;
        e.e_lj = lj + lj14;
        e.e_coulomb = coul + coul14;
        let e = e.close_total();
        e.check_finite()?;
        Ok(e)
    }

    /// Nonbonded (LJ + Coulomb) cross terms between two disjoint atom sets.
    pub fn interaction_energy(&self, coords: &[Vec3], set_a: &[usize], set_b: &[usize]) -> Result<f64> {
        let in_b: HashSet<usize> = set_b.iter().copied().collect();
        debug_assert!(set_a.iter().all(|a| !in_b.contains(a)), "sets must be disjoint");
        let cutoff2 = self.settings.cutoff_outer.powi(2);
        let mut total = 0.0;
        for &i in set_a {
            for &j in set_b {
                if self.exclusions.is_excluded(i, j) {
                    continue;
                }
                let d2 = (coords[i] - coords[j]).norm_squared();
                if d2 >= cutoff2 {
                    continue;
                }
                let r = d2.sqrt();
                // 1-4 pairs across the sets keep their 1-4 parameters.
                let is14 = self
                    .exclusions
                    .pairs14
                    .binary_search(&if i < j { (i as u32, j as u32) } else { (j as u32, i as u32) })
                    .is_ok();
                let (lj, coul, _) = self.pair_terms(i, j, r, is14)?;
                total += lj + coul;
            }
        }
        Ok(total)
    }

    /// True when any atom of `group` sits closer than `radius` to a
    /// non-excluded atom outside the group.
    pub fn has_clash(&self, coords: &[Vec3], group: &[usize], radius: f64) -> bool {
        let in_group: HashSet<usize> = group.iter().copied().collect();
        let r2 = radius * radius;
        for &g in group {
            for other in 0..coords.len() {
                if in_group.contains(&other) || self.exclusions.is_excluded(g, other) {
                    continue;
                }
                if (coords[g] - coords[other]).norm_squared() < r2 {
                    return true;
                }
            }
        }
        false
    }
}

// `energy_subset` once carried a dedicated view type; kept as a zero-sized
// placeholder so the masked-path helpers stay grouped above.
struct MaskedSystemView;

/// Whole-system energy with every atom movable.
pub fn energy(
    system: &MolecularSystem,
    coords: &[Vec3],
    settings: &NonbondedSettings,
) -> Result<EnergyBreakdown> {
    EnergyModel::new(system, *settings).energy(coords)
}

/// Nonbonded cross-interaction between two atom sets.
pub fn interaction_energy(
    system: &MolecularSystem,
    coords: &[Vec3],
    set_a: &[usize],
    set_b: &[usize],
    settings: &NonbondedSettings,
) -> Result<f64> {
    EnergyModel::new(system, *settings).interaction_energy(coords, set_a, set_b)
}
