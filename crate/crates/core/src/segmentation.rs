//! Two-level micro/macro segmentation of the pocket.
//!
//! Micro-groups are the smallest coordinated units: one per residue backbone
//! half, one per residue sidechain half, and one per rotatable-bond-delimited
//! ligand fragment. Macro-groups coordinate micro-groups: one per contiguous
//! run of loop residues, plus a single macro-group holding the whole ligand.
//! A micro-group is movable iff any of its atoms lies within `r_cutoff` of
//! `r_centre`; whole groups move or none.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::molio::{AtomAnnotations, MolecularSystem, SecondaryStructure};
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum SegError {
    #[error("no atom within {r_cutoff} A of the pocket centre")]
    EmptyMovableSet { r_cutoff: f64 },
    #[error("system has no ligand atoms within the movable region")]
    LigandAbsent,
}

#[derive(Debug, Clone, Copy)]
pub struct SegmentationConfig {
    /// Pocket centre, A.
    pub r_centre: Vec3,
    /// Movability cutoff radius, A. 20.0 by default; 25.0 for large pockets.
    pub r_cutoff: f64,
}

impl SegmentationConfig {
    pub fn new(r_centre: Vec3, r_cutoff: f64) -> Self {
        assert!(r_cutoff > 0.0, "r_cutoff must be positive");
        Self { r_centre, r_cutoff }
    }
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            r_centre: Vec3::zeros(),
            r_cutoff: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicroKind {
    ProteinBackbone,
    ProteinSidechain,
    LigandFragment,
}

/// Identity of a micro-group that is stable across different ligands docked
/// into the same pocket; keys the per-group kick random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKey {
    Protein { residue_id: i64, backbone: bool },
    Ligand { ordinal: usize },
}

#[derive(Debug, Clone)]
pub struct MicroGroup {
    pub id: usize,
    /// Sorted 0-based atom indices.
    pub atoms: Vec<usize>,
    pub kind: MicroKind,
    /// Axis atoms (a, b): rotation about the line through a's current
    /// position along the a->b direction. b is inside the group.
    pub anchor: Option<(usize, usize)>,
    pub ring_flip_eligible: bool,
    pub key: GroupKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacroKind {
    ProteinLoop,
    Ligand,
}

#[derive(Debug, Clone)]
pub struct MacroGroup {
    pub id: usize,
    /// Ids of member micro-groups.
    pub micro_ids: Vec<usize>,
    pub kind: MacroKind,
}

#[derive(Debug, Clone)]
pub struct SegmentationPlan {
    /// Sorted movable atom indices.
    pub movable_atoms: Vec<usize>,
    /// Sorted fixed atom indices.
    pub fixed_atoms: Vec<usize>,
    /// Movable micro-groups, ids ascending by first atom index.
    pub micro_groups: Vec<MicroGroup>,
    pub macro_groups: Vec<MacroGroup>,
    pub config: SegmentationConfig,
    /// atom index -> ordinal within `movable_atoms`, None for fixed atoms.
    movable_ordinal: Vec<Option<usize>>,
    n_atoms: usize,
}

impl SegmentationPlan {
    pub fn atom_count(&self) -> usize {
        self.n_atoms
    }

    pub fn is_movable(&self, atom: usize) -> bool {
        self.movable_ordinal[atom].is_some()
    }

    pub fn movable_ordinal(&self, atom: usize) -> Option<usize> {
        self.movable_ordinal[atom]
    }

    /// Micro-group ids that carry an anchor axis, ascending.
    pub fn anchored_micro_ids(&self) -> Vec<usize> {
        self.micro_groups
            .iter()
            .filter(|g| g.anchor.is_some())
            .map(|g| g.id)
            .collect()
    }

    pub fn ligand_macro(&self) -> Option<&MacroGroup> {
        self.macro_groups.iter().find(|m| m.kind == MacroKind::Ligand)
    }

    /// All atom indices of a macro-group, sorted.
    pub fn macro_atoms(&self, mg: &MacroGroup) -> Vec<usize> {
        let mut atoms: Vec<usize> = mg
            .micro_ids
            .iter()
            .flat_map(|&id| self.micro_groups[id].atoms.iter().copied())
            .collect();
        atoms.sort_unstable();
        atoms
    }

    /// Movable atoms belonging to ligand micro-groups, sorted.
    pub fn ligand_atoms(&self) -> Vec<usize> {
        let mut atoms: Vec<usize> = self
            .micro_groups
            .iter()
            .filter(|g| g.kind == MicroKind::LigandFragment)
            .flat_map(|g| g.atoms.iter().copied())
            .collect();
        atoms.sort_unstable();
        atoms
    }
}

/// Residue names whose sidechains are rigid aromatic rings; ring-flip
/// candidates during the kick.
const RING_FLIP_RESIDUES: &[&str] = &["PHE", "HIS", "TRP", "TYR"];

struct ProtoGroup {
    atoms: Vec<usize>,
    kind: MicroKind,
    anchor: Option<(usize, usize)>,
    ring_flip_eligible: bool,
    key: GroupKey,
}

pub fn build_segmentation(
    system: &MolecularSystem,
    ann: &AtomAnnotations,
    cfg: SegmentationConfig,
) -> Result<SegmentationPlan, SegError> {
    assert_eq!(ann.per_atom.len(), system.atom_count());
    let n = system.atom_count();

    let ligand_atoms: Vec<usize> = (0..n).filter(|&i| ann.per_atom[i].is_ligand).collect();
    if ligand_atoms.is_empty() {
        return Err(SegError::LigandAbsent);
    }
    let ligand_set: HashSet<usize> = ligand_atoms.iter().copied().collect();

    let mut groups: Vec<ProtoGroup> = Vec::new();

    // Protein micro-groups: one per (residue, backbone|sidechain) half.
    let mut residue_atoms: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        if !ann.per_atom[i].is_ligand {
            residue_atoms.entry(ann.per_atom[i].residue_id).or_default().push(i);
        }
    }
    for (&residue_id, atoms) in &residue_atoms {
        let backbone: Vec<usize> = atoms
            .iter()
            .copied()
            .filter(|&i| ann.per_atom[i].is_backbone)
            .collect();
        let sidechain: Vec<usize> = atoms
            .iter()
            .copied()
            .filter(|&i| !ann.per_atom[i].is_backbone)
            .collect();
        if !backbone.is_empty() {
            groups.push(ProtoGroup {
                atoms: backbone.clone(),
                kind: MicroKind::ProteinBackbone,
                anchor: None,
                ring_flip_eligible: false,
                key: GroupKey::Protein {
                    residue_id,
                    backbone: true,
                },
            });
        }
        if !sidechain.is_empty() {
            // Anchor at the backbone-sidechain bond (CA-CB equivalent).
            let side_set: HashSet<usize> = sidechain.iter().copied().collect();
            let back_set: HashSet<usize> = backbone.iter().copied().collect();
            let mut anchor = None;
            for b in &system.bonds {
                let [x, y] = b.atoms;
                if back_set.contains(&x) && side_set.contains(&y) {
                    anchor = match anchor {
                        None => Some((x, y)),
                        Some(prev) => Some(prev.min((x, y))),
                    };
                } else if back_set.contains(&y) && side_set.contains(&x) {
                    anchor = match anchor {
                        None => Some((y, x)),
                        Some(prev) => Some(prev.min((y, x))),
                    };
                }
            }
            let name = ann.per_atom[sidechain[0]].residue_name.as_str();
            groups.push(ProtoGroup {
                atoms: sidechain,
                kind: MicroKind::ProteinSidechain,
                anchor,
                ring_flip_eligible: anchor.is_some() && RING_FLIP_RESIDUES.contains(&name),
                key: GroupKey::Protein {
                    residue_id,
                    backbone: false,
                },
            });
        }
    }

    // Ligand fragments: from the explicit fragment map when present,
    // otherwise connected components after removing rotatable bonds.
    let mut fragments: Vec<Vec<usize>> = if ann.has_fragment_map() {
        let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &ligand_atoms {
            let fid = ann.per_atom[i].fragment_id.unwrap_or(usize::MAX);
            by_id.entry(fid).or_default().push(i);
        }
        by_id.into_values().collect()
    } else {
        let rotatable: HashSet<(usize, usize)> = ann
            .rotatable_bonds
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .collect();
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for b in &system.bonds {
            let [x, y] = b.atoms;
            if ligand_set.contains(&x) && ligand_set.contains(&y) && !rotatable.contains(&(x, y)) {
                adj.entry(x).or_default().push(y);
                adj.entry(y).or_default().push(x);
            }
        }
        connected_components(&ligand_atoms, &adj)
    };
    fragments.sort_by_key(|f| f.iter().copied().min());

    let ligand_bonds_within = |frag: &HashSet<usize>| {
        system
            .bonds
            .iter()
            .filter(|b| frag.contains(&b.atoms[0]) && frag.contains(&b.atoms[1]))
            .count()
    };

    for (ordinal, frag) in fragments.iter().enumerate() {
        let frag_set: HashSet<usize> = frag.iter().copied().collect();
        // Rotatable bonds with exactly one endpoint in this fragment.
        let mut crossing: Vec<(usize, usize)> = Vec::new();
        for &(a, b) in &ann.rotatable_bonds {
            let a_in = frag_set.contains(&a);
            let b_in = frag_set.contains(&b);
            if a_in != b_in {
                // Orient so the in-fragment atom is second.
                crossing.push(if b_in { (a, b) } else { (b, a) });
            }
        }
        let anchor = if crossing.len() == 1 { Some(crossing[0]) } else { None };
        let is_rigid_ring = frag.len() >= 3 && ligand_bonds_within(&frag_set) >= frag.len();
        groups.push(ProtoGroup {
            atoms: frag.clone(),
            kind: MicroKind::LigandFragment,
            anchor,
            ring_flip_eligible: anchor.is_some() && is_rigid_ring,
            key: GroupKey::Ligand { ordinal },
        });
    }

    // Stable ids ascending by first atom index, then movability per group.
    for g in &mut groups {
        g.atoms.sort_unstable();
    }
    groups.sort_by_key(|g| g.atoms[0]);

    let positions = system.positions();
    let within = |i: usize| (positions[i] - cfg.r_centre).norm() <= cfg.r_cutoff;
    let movable_groups: Vec<ProtoGroup> = groups
        .into_iter()
        .filter(|g| g.atoms.iter().any(|&i| within(i)))
        .collect();
    if movable_groups.is_empty() {
        return Err(SegError::EmptyMovableSet { r_cutoff: cfg.r_cutoff });
    }

    let micro_groups: Vec<MicroGroup> = movable_groups
        .into_iter()
        .enumerate()
        .map(|(id, g)| MicroGroup {
            id,
            atoms: g.atoms,
            kind: g.kind,
            anchor: g.anchor,
            ring_flip_eligible: g.ring_flip_eligible,
            key: g.key,
        })
        .collect();

    let mut movable_atoms: Vec<usize> = micro_groups.iter().flat_map(|g| g.atoms.iter().copied()).collect();
    movable_atoms.sort_unstable();
    movable_atoms.dedup();
    let movable_set: HashSet<usize> = movable_atoms.iter().copied().collect();
    let fixed_atoms: Vec<usize> = (0..n).filter(|i| !movable_set.contains(i)).collect();

    // Macro-groups: the whole ligand, plus one per maximal contiguous run of
    // loop residues (runs split at residue-id gaps and non-loop residues).
    let mut proto_macros: Vec<(MacroKind, Vec<usize>)> = Vec::new();

    let ligand_micro_ids: Vec<usize> = micro_groups
        .iter()
        .filter(|g| g.kind == MicroKind::LigandFragment)
        .map(|g| g.id)
        .collect();
    if ligand_micro_ids.is_empty() {
        return Err(SegError::LigandAbsent);
    }
    proto_macros.push((MacroKind::Ligand, ligand_micro_ids));

    let residue_is_loop = |atoms: &[usize]| {
        atoms
            .iter()
            .all(|&i| ann.per_atom[i].secondary_structure == SecondaryStructure::Loop)
    };
    let mut run: Vec<i64> = Vec::new();
    let mut prev_id: Option<i64> = None;
    let flush = |run: &mut Vec<i64>, proto_macros: &mut Vec<(MacroKind, Vec<usize>)>| {
        if run.is_empty() {
            return;
        }
        let ids: Vec<usize> = micro_groups
            .iter()
            .filter(|g| match g.key {
                GroupKey::Protein { residue_id, .. } => run.contains(&residue_id),
                GroupKey::Ligand { .. } => false,
            })
            .map(|g| g.id)
            .collect();
        if !ids.is_empty() {
            proto_macros.push((MacroKind::ProteinLoop, ids));
        }
        run.clear();
    };
    for (&residue_id, atoms) in &residue_atoms {
        let contiguous = prev_id.is_some_and(|p| residue_id == p + 1);
        if !contiguous {
            flush(&mut run, &mut proto_macros);
        }
        if residue_is_loop(atoms) {
            run.push(residue_id);
        } else {
            flush(&mut run, &mut proto_macros);
        }
        prev_id = Some(residue_id);
    }
    flush(&mut run, &mut proto_macros);

    // Order macro-groups by their first atom index for stable ids.
    proto_macros.sort_by_key(|(_, ids)| {
        ids.iter().map(|&id| micro_groups[id].atoms[0]).min().unwrap()
    });
    let macro_groups: Vec<MacroGroup> = proto_macros
        .into_iter()
        .enumerate()
        .map(|(id, (kind, mut micro_ids))| {
            micro_ids.sort_unstable();
            MacroGroup { id, micro_ids, kind }
        })
        .collect();

    let mut movable_ordinal = vec![None; n];
    for (ord, &atom) in movable_atoms.iter().enumerate() {
        movable_ordinal[atom] = Some(ord);
    }

    Ok(SegmentationPlan {
        movable_atoms,
        fixed_atoms,
        micro_groups,
        macro_groups,
        config: cfg,
        movable_ordinal,
        n_atoms: n,
    })
}

fn connected_components(atoms: &[usize], adj: &HashMap<usize, Vec<usize>>) -> Vec<Vec<usize>> {
    let mut seen: HashSet<usize> = HashSet::new();
    let mut components = Vec::new();
    for &start in atoms {
        if seen.contains(&start) {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = Vec::new();
        seen.insert(start);
        while let Some(x) = stack.pop() {
            comp.push(x);
            if let Some(next) = adj.get(&x) {
                for &y in next {
                    if seen.insert(y) {
                        stack.push(y);
                    }
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}
