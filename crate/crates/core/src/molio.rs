//! System and annotation file parsing, conformation and table output.
//!
//! The system data format is a section-based UTF-8 text format: count header
//! lines (`<n> atoms`, `<n> bonds`, ..., `<n> atom types`, ...) followed by
//! blank-line-separated sections titled `Masses`, `Pair Coeffs`,
//! `Bond Coeffs`, `Angle Coeffs`, `Dihedral Coeffs`, `Improper Coeffs`,
//! `Atoms`, `Bonds`, `Angles`, `Dihedrals`, `Impropers`. Sections may appear
//! in any order; unknown section titles are an error. Angles and phases are
//! degrees on disk and radians in memory, converted exactly once here.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum MolError {
    #[error("malformed file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },
    #[error("dangling reference at line {line}: {reason}")]
    DanglingReference { line: usize, reason: String },
    #[error("duplicate id at line {line}: {reason}")]
    DuplicateId { line: usize, reason: String },
    #[error("annotation row count {rows} does not match atom count {atoms}")]
    RowCountMismatch { rows: usize, atoms: usize },
    #[error("unknown secondary structure label '{label}' at line {line}")]
    UnknownSecondaryStructureLabel { label: String, line: usize },
    #[error("rotatable bond {a}-{b} is not a bond in the topology")]
    RotatableBondNotInTopology { a: usize, b: usize },
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, MolError>;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Atom {
    /// 1-based id as written in the file.
    pub id: usize,
    pub molecule_id: i64,
    /// 1-based atom type id.
    pub type_id: usize,
    /// Partial charge in elementary charge units.
    pub charge: f64,
    /// Position in Angstrom.
    pub position: Vec3,
}

/// Lennard-Jones parameters per atom type. `epsilon14`/`sigma14` apply to
/// 1-4 pairs; they default to the plain values when the file omits them.
#[derive(Debug, Clone, Copy)]
pub struct PairCoeff {
    pub epsilon: f64,
    pub sigma: f64,
    pub epsilon14: f64,
    pub sigma14: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BondCoeff {
    /// kcal/mol/A^2
    pub k: f64,
    /// Equilibrium length, A.
    pub r0: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct AngleCoeff {
    /// kcal/mol/rad^2
    pub k: f64,
    /// Equilibrium angle, radians (degrees in the file).
    pub theta0: f64,
}

/// One cosine term of a (possibly multi-term) proper dihedral.
#[derive(Debug, Clone, Copy)]
pub struct DihedralTerm {
    pub k: f64,
    pub n: u32,
    /// Phase, radians (degrees in the file).
    pub d: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ImproperCoeff {
    pub k: f64,
    /// Equilibrium improper angle, radians (degrees in the file).
    pub chi0: f64,
}

/// Bonded term: 0-based coefficient index plus 0-based atom indices.
#[derive(Debug, Clone, Copy)]
pub struct BondedTerm<const ARITY: usize> {
    pub coeff: usize,
    pub atoms: [usize; ARITY],
}

#[derive(Debug, Clone, Default)]
pub struct MolecularSystem {
    /// Atoms in file order.
    pub atoms: Vec<Atom>,
    /// Per-type mass in amu, indexed by `type_id - 1`.
    pub masses: Vec<f64>,
    pub pair_coeffs: Vec<PairCoeff>,
    pub bond_coeffs: Vec<BondCoeff>,
    pub angle_coeffs: Vec<AngleCoeff>,
    /// Multi-term dihedral coefficients, indexed by coeff id.
    pub dihedral_coeffs: Vec<Vec<DihedralTerm>>,
    pub improper_coeffs: Vec<ImproperCoeff>,
    pub bonds: Vec<BondedTerm<2>>,
    pub angles: Vec<BondedTerm<3>>,
    pub dihedrals: Vec<BondedTerm<4>>,
    pub impropers: Vec<BondedTerm<4>>,
    /// Atom id -> index into `atoms`.
    id_to_index: HashMap<usize, usize>,
}

impl MolecularSystem {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn index_of(&self, atom_id: usize) -> Option<usize> {
        self.id_to_index.get(&atom_id).copied()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    /// True when atoms `i` and `j` (0-based) share a bond.
    pub fn bonded(&self, i: usize, j: usize) -> bool {
        self.bonds
            .iter()
            .any(|b| (b.atoms[0] == i && b.atoms[1] == j) || (b.atoms[0] == j && b.atoms[1] == i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondaryStructure {
    Helix,
    Sheet,
    Loop,
    None,
}

#[derive(Debug, Clone)]
pub struct AtomAnnotation {
    pub residue_id: i64,
    pub residue_name: String,
    pub is_ligand: bool,
    pub is_backbone: bool,
    pub secondary_structure: SecondaryStructure,
    /// Optional ligand fragment id from the annotation file.
    pub fragment_id: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct AtomAnnotations {
    /// One entry per atom, in atom order.
    pub per_atom: Vec<AtomAnnotation>,
    /// Rotatable bonds as 0-based index pairs, ordered so the moving side is
    /// the b-side subtree.
    pub rotatable_bonds: Vec<(usize, usize)>,
}

impl AtomAnnotations {
    pub fn has_fragment_map(&self) -> bool {
        self.per_atom.iter().any(|a| a.fragment_id.is_some())
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub label: String,
    pub coordinates: Vec<Vec3>,
}

#[derive(Debug, Clone, Default)]
pub struct ConformationSet {
    pub element_symbols: Vec<String>,
    pub frames: Vec<Frame>,
}

// ---------------------------------------------------------------------------
// System parsing
// ---------------------------------------------------------------------------

fn malformed(line: usize, reason: impl Into<String>) -> MolError {
    MolError::MalformedFile {
        line,
        reason: reason.into(),
    }
}

struct Numbered {
    line: usize,
    text: String,
}

fn parse_fields<T: std::str::FromStr>(ln: &Numbered, text: &str) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| malformed(ln.line, format!("cannot parse field '{t}'")))
        })
        .collect()
}

const SECTION_TITLES: &[&str] = &[
    "Masses",
    "Pair Coeffs",
    "Bond Coeffs",
    "Angle Coeffs",
    "Dihedral Coeffs",
    "Improper Coeffs",
    "Atoms",
    "Bonds",
    "Angles",
    "Dihedrals",
    "Impropers",
];

pub fn parse_system(path: impl AsRef<Path>) -> Result<MolecularSystem> {
    let file = std::fs::File::open(path)?;
    parse_system_from(BufReader::new(file))
}

pub fn parse_system_str(text: &str) -> Result<MolecularSystem> {
    parse_system_from(text.as_bytes())
}

fn parse_system_from(reader: impl Read) -> Result<MolecularSystem> {
    let reader = BufReader::new(reader);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        lines.push(Numbered {
            line: i + 1,
            text: line?,
        });
    }

    // Header: "<n> <what>" count lines until the first section title.
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut pos = 0;
    while pos < lines.len() {
        let text = lines[pos].text.trim();
        if text.is_empty() {
            pos += 1;
            continue;
        }
        if SECTION_TITLES.contains(&text) {
            break;
        }
        let (num, what) = text
            .split_once(char::is_whitespace)
            .ok_or_else(|| malformed(lines[pos].line, "expected '<count> <kind>' header line"))?;
        let n: usize = num
            .parse()
            .map_err(|_| malformed(lines[pos].line, format!("bad count '{num}'")))?;
        let key = what.trim().to_string();
        if counts.insert(key.clone(), n).is_some() {
            return Err(malformed(lines[pos].line, format!("repeated header '{key}'")));
        }
        pos += 1;
    }

    // Split the remainder into titled sections.
    let mut sections: Vec<(&Numbered, Vec<&Numbered>)> = Vec::new();
    while pos < lines.len() {
        let text = lines[pos].text.trim();
        if text.is_empty() {
            pos += 1;
            continue;
        }
        if !SECTION_TITLES.contains(&text) {
            return Err(malformed(lines[pos].line, format!("unknown section '{text}'")));
        }
        let title = &lines[pos];
        pos += 1;
        let mut body = Vec::new();
        while pos < lines.len() {
            let t = lines[pos].text.trim();
            if t.is_empty() {
                break;
            }
            if SECTION_TITLES.contains(&t) {
                break;
            }
            body.push(&lines[pos]);
            pos += 1;
        }
        if sections.iter().any(|(t, _)| t.text.trim() == text) {
            return Err(malformed(title.line, format!("repeated section '{text}'")));
        }
        sections.push((title, body));
    }

    let mut sys = MolecularSystem::default();
    let n_types = counts.get("atom types").copied().unwrap_or(0);
    sys.masses = vec![0.0; n_types];
    sys.pair_coeffs = vec![
        PairCoeff {
            epsilon: 0.0,
            sigma: 1.0,
            epsilon14: 0.0,
            sigma14: 1.0,
        };
        n_types
    ];
    let n_bond_types = counts.get("bond types").copied().unwrap_or(0);
    let n_angle_types = counts.get("angle types").copied().unwrap_or(0);
    let n_dihedral_types = counts.get("dihedral types").copied().unwrap_or(0);
    let n_improper_types = counts.get("improper types").copied().unwrap_or(0);
    sys.bond_coeffs = vec![BondCoeff { k: 0.0, r0: 0.0 }; n_bond_types];
    sys.angle_coeffs = vec![AngleCoeff { k: 0.0, theta0: 0.0 }; n_angle_types];
    sys.dihedral_coeffs = vec![Vec::new(); n_dihedral_types];
    sys.improper_coeffs = vec![ImproperCoeff { k: 0.0, chi0: 0.0 }; n_improper_types];

    // Atoms must be ingested before bonded sections so that id references can
    // be resolved; sections are otherwise order-insensitive.
    let find = |name: &str| sections.iter().find(|(t, _)| t.text.trim() == name);

    if let Some((_, body)) = find("Atoms") {
        for ln in body {
            let f: Vec<f64> = parse_fields(ln, &ln.text)?;
            if f.len() != 7 {
                return Err(malformed(ln.line, "Atoms row needs 7 fields"));
            }
            let id = f[0] as usize;
            let type_id = f[2] as usize;
            if type_id == 0 || type_id > n_types {
                return Err(MolError::DanglingReference {
                    line: ln.line,
                    reason: format!("atom type {type_id} out of range 1..={n_types}"),
                });
            }
            if !f[3].is_finite() {
                return Err(malformed(ln.line, "non-finite charge"));
            }
            let idx = sys.atoms.len();
            if sys.id_to_index.insert(id, idx).is_some() {
                return Err(MolError::DuplicateId {
                    line: ln.line,
                    reason: format!("atom id {id}"),
                });
            }
            sys.atoms.push(Atom {
                id,
                molecule_id: f[1] as i64,
                type_id,
                charge: f[3],
                position: Vec3::new(f[4], f[5], f[6]),
            });
        }
    }
    if let Some(&n) = counts.get("atoms") {
        if n != sys.atoms.len() {
            return Err(malformed(
                0,
                format!("header declares {n} atoms, found {}", sys.atoms.len()),
            ));
        }
    }

    if let Some((_, body)) = find("Masses") {
        for ln in body {
            let f: Vec<f64> = parse_fields(ln, &ln.text)?;
            if f.len() != 2 {
                return Err(malformed(ln.line, "Masses row needs 2 fields"));
            }
            let id = f[0] as usize;
            if id == 0 || id > n_types {
                return Err(MolError::DanglingReference {
                    line: ln.line,
                    reason: format!("mass for unknown type {id}"),
                });
            }
            sys.masses[id - 1] = f[1];
        }
    }

    if let Some((_, body)) = find("Pair Coeffs") {
        for ln in body {
            let f: Vec<f64> = parse_fields(ln, &ln.text)?;
            if f.len() != 3 && f.len() != 5 {
                return Err(malformed(ln.line, "Pair Coeffs row needs 3 or 5 fields"));
            }
            let id = f[0] as usize;
            if id == 0 || id > n_types {
                return Err(MolError::DanglingReference {
                    line: ln.line,
                    reason: format!("pair coeff for unknown type {id}"),
                });
            }
            let (epsilon, sigma) = (f[1], f[2]);
            let (epsilon14, sigma14) = if f.len() == 5 { (f[3], f[4]) } else { (f[1], f[2]) };
            if sigma <= 0.0 || sigma14 <= 0.0 {
                return Err(malformed(ln.line, "sigma must be positive"));
            }
            if epsilon < 0.0 || epsilon14 < 0.0 {
                return Err(malformed(ln.line, "epsilon must be non-negative"));
            }
            sys.pair_coeffs[id - 1] = PairCoeff {
                epsilon,
                sigma,
                epsilon14,
                sigma14,
            };
        }
    }

    if let Some((_, body)) = find("Bond Coeffs") {
        for ln in body {
            let f: Vec<f64> = parse_fields(ln, &ln.text)?;
            if f.len() != 3 {
                return Err(malformed(ln.line, "Bond Coeffs row needs 3 fields"));
            }
            let id = f[0] as usize;
            if id == 0 || id > n_bond_types {
                return Err(MolError::DanglingReference {
                    line: ln.line,
                    reason: format!("bond coeff id {id} out of range"),
                });
            }
            if f[1] < 0.0 {
                return Err(malformed(ln.line, "bond K must be non-negative"));
            }
            sys.bond_coeffs[id - 1] = BondCoeff { k: f[1], r0: f[2] };
        }
    }

    if let Some((_, body)) = find("Angle Coeffs") {
        for ln in body {
            let f: Vec<f64> = parse_fields(ln, &ln.text)?;
            if f.len() != 3 {
                return Err(malformed(ln.line, "Angle Coeffs row needs 3 fields"));
            }
            let id = f[0] as usize;
            if id == 0 || id > n_angle_types {
                return Err(MolError::DanglingReference {
                    line: ln.line,
                    reason: format!("angle coeff id {id} out of range"),
                });
            }
            if f[1] < 0.0 {
                return Err(malformed(ln.line, "angle K must be non-negative"));
            }
            sys.angle_coeffs[id - 1] = AngleCoeff {
                k: f[1],
                theta0: f[2].to_radians(),
            };
        }
    }

    if let Some((_, body)) = find("Dihedral Coeffs") {
        for ln in body {
            let f: Vec<f64> = parse_fields(ln, &ln.text)?;
            if f.len() != 4 {
                return Err(malformed(ln.line, "Dihedral Coeffs row needs 4 fields"));
            }
            let id = f[0] as usize;
            if id == 0 || id > n_dihedral_types {
                return Err(MolError::DanglingReference {
                    line: ln.line,
                    reason: format!("dihedral coeff id {id} out of range"),
                });
            }
            let n = f[2] as u32;
            if n == 0 {
                return Err(malformed(ln.line, "dihedral multiplicity must be positive"));
            }
            sys.dihedral_coeffs[id - 1].push(DihedralTerm {
                k: f[1],
                n,
                d: f[3].to_radians(),
            });
        }
    }

    if let Some((_, body)) = find("Improper Coeffs") {
        for ln in body {
            let f: Vec<f64> = parse_fields(ln, &ln.text)?;
            if f.len() != 3 {
                return Err(malformed(ln.line, "Improper Coeffs row needs 3 fields"));
            }
            let id = f[0] as usize;
            if id == 0 || id > n_improper_types {
                return Err(MolError::DanglingReference {
                    line: ln.line,
                    reason: format!("improper coeff id {id} out of range"),
                });
            }
            if f[1] < 0.0 {
                return Err(malformed(ln.line, "improper K must be non-negative"));
            }
            sys.improper_coeffs[id - 1] = ImproperCoeff {
                k: f[1],
                chi0: f[2].to_radians(),
            };
        }
    }

    fn parse_terms<const ARITY: usize>(
        body: &[&Numbered],
        n_coeffs: usize,
        id_to_index: &HashMap<usize, usize>,
        out: &mut Vec<BondedTerm<ARITY>>,
        what: &str,
    ) -> Result<()> {
        for ln in body {
            let f: Vec<i64> = parse_fields(ln, &ln.text)?;
            if f.len() != 2 + ARITY {
                return Err(malformed(ln.line, format!("{what} row needs {} fields", 2 + ARITY)));
            }
            let coeff = f[1] as usize;
            if coeff == 0 || coeff > n_coeffs {
                return Err(MolError::DanglingReference {
                    line: ln.line,
                    reason: format!("{what} coeff id {coeff} out of range"),
                });
            }
            let mut atoms = [0usize; ARITY];
            for (slot, &id) in atoms.iter_mut().zip(&f[2..]) {
                *slot = *id_to_index.get(&(id as usize)).ok_or_else(|| {
                    MolError::DanglingReference {
                        line: ln.line,
                        reason: format!("{what} references missing atom id {id}"),
                    }
                })?;
            }
            out.push(BondedTerm {
                coeff: coeff - 1,
                atoms,
            });
        }
        Ok(())
    }

    if let Some((_, body)) = find("Bonds") {
        parse_terms(body, n_bond_types, &sys.id_to_index, &mut sys.bonds, "Bonds")?;
    }
    if let Some((_, body)) = find("Angles") {
        parse_terms(body, n_angle_types, &sys.id_to_index, &mut sys.angles, "Angles")?;
    }
    if let Some((_, body)) = find("Dihedrals") {
        parse_terms(
            body,
            n_dihedral_types,
            &sys.id_to_index,
            &mut sys.dihedrals,
            "Dihedrals",
        )?;
    }
    if let Some((_, body)) = find("Impropers") {
        parse_terms(
            body,
            n_improper_types,
            &sys.id_to_index,
            &mut sys.impropers,
            "Impropers",
        )?;
    }

    for (key, list_len) in [
        ("bonds", sys.bonds.len()),
        ("angles", sys.angles.len()),
        ("dihedrals", sys.dihedrals.len()),
        ("impropers", sys.impropers.len()),
    ] {
        if let Some(&n) = counts.get(key) {
            if n != list_len {
                return Err(malformed(
                    0,
                    format!("header declares {n} {key}, found {list_len}"),
                ));
            }
        }
    }

    Ok(sys)
}

/// Serialize a system into the same section-based text format that
/// [`parse_system_str`] reads. Floats use shortest round-trip formatting;
/// angles and phases are converted back to degrees.
pub fn write_system_str(sys: &MolecularSystem) -> String {
    let mut out = String::new();
    writeln!(out, "{} atoms", sys.atoms.len()).unwrap();
    writeln!(out, "{} bonds", sys.bonds.len()).unwrap();
    writeln!(out, "{} angles", sys.angles.len()).unwrap();
    writeln!(out, "{} dihedrals", sys.dihedrals.len()).unwrap();
    writeln!(out, "{} impropers", sys.impropers.len()).unwrap();
    writeln!(out, "{} atom types", sys.masses.len()).unwrap();
    writeln!(out, "{} bond types", sys.bond_coeffs.len()).unwrap();
    writeln!(out, "{} angle types", sys.angle_coeffs.len()).unwrap();
    writeln!(out, "{} dihedral types", sys.dihedral_coeffs.len()).unwrap();
    writeln!(out, "{} improper types", sys.improper_coeffs.len()).unwrap();

    if !sys.masses.is_empty() {
        writeln!(out, "\nMasses").unwrap();
        for (i, m) in sys.masses.iter().enumerate() {
            writeln!(out, "{} {m}", i + 1).unwrap();
        }
        writeln!(out, "\nPair Coeffs").unwrap();
        for (i, p) in sys.pair_coeffs.iter().enumerate() {
            if p.epsilon14 == p.epsilon && p.sigma14 == p.sigma {
                writeln!(out, "{} {} {}", i + 1, p.epsilon, p.sigma).unwrap();
            } else {
                writeln!(
                    out,
                    "{} {} {} {} {}",
                    i + 1,
                    p.epsilon,
                    p.sigma,
                    p.epsilon14,
                    p.sigma14
                )
                .unwrap();
            }
        }
    }
    if !sys.bond_coeffs.is_empty() {
        writeln!(out, "\nBond Coeffs").unwrap();
        for (i, c) in sys.bond_coeffs.iter().enumerate() {
            writeln!(out, "{} {} {}", i + 1, c.k, c.r0).unwrap();
        }
    }
    if !sys.angle_coeffs.is_empty() {
        writeln!(out, "\nAngle Coeffs").unwrap();
        for (i, c) in sys.angle_coeffs.iter().enumerate() {
            writeln!(out, "{} {} {}", i + 1, c.k, c.theta0.to_degrees()).unwrap();
        }
    }
    if sys.dihedral_coeffs.iter().any(|t| !t.is_empty()) {
        writeln!(out, "\nDihedral Coeffs").unwrap();
        for (i, terms) in sys.dihedral_coeffs.iter().enumerate() {
            for t in terms {
                writeln!(out, "{} {} {} {}", i + 1, t.k, t.n, t.d.to_degrees()).unwrap();
            }
        }
    }
    if !sys.improper_coeffs.is_empty() {
        writeln!(out, "\nImproper Coeffs").unwrap();
        for (i, c) in sys.improper_coeffs.iter().enumerate() {
            writeln!(out, "{} {} {}", i + 1, c.k, c.chi0.to_degrees()).unwrap();
        }
    }

    writeln!(out, "\nAtoms").unwrap();
    for a in &sys.atoms {
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            a.id, a.molecule_id, a.type_id, a.charge, a.position.x, a.position.y, a.position.z
        )
        .unwrap();
    }

    fn write_terms<const ARITY: usize>(
        out: &mut String,
        title: &str,
        terms: &[BondedTerm<ARITY>],
        atoms: &[Atom],
    ) {
        if terms.is_empty() {
            return;
        }
        writeln!(out, "\n{title}").unwrap();
        for (i, t) in terms.iter().enumerate() {
            write!(out, "{} {}", i + 1, t.coeff + 1).unwrap();
            for &a in &t.atoms {
                write!(out, " {}", atoms[a].id).unwrap();
            }
            out.push('\n');
        }
    }
    write_terms(&mut out, "Bonds", &sys.bonds, &sys.atoms);
    write_terms(&mut out, "Angles", &sys.angles, &sys.atoms);
    write_terms(&mut out, "Dihedrals", &sys.dihedrals, &sys.atoms);
    write_terms(&mut out, "Impropers", &sys.impropers, &sys.atoms);
    out
}

pub fn write_system(sys: &MolecularSystem, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_system_str(sys))?;
    Ok(())
}

/// Serialize annotations into the format [`parse_annotations_str`] reads.
pub fn write_annotations_str(ann: &AtomAnnotations, sys: &MolecularSystem) -> String {
    let mut out = String::from(
        "atom_id,residue_id,residue_name,is_ligand,is_backbone,secondary_structure,fragment_id\n",
    );
    for (atom, a) in sys.atoms.iter().zip(&ann.per_atom) {
        let ss = match a.secondary_structure {
            SecondaryStructure::Helix => "helix",
            SecondaryStructure::Sheet => "sheet",
            SecondaryStructure::Loop => "loop",
            SecondaryStructure::None => "none",
        };
        let frag = a.fragment_id.map(|f| f.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            atom.id, a.residue_id, a.residue_name, a.is_ligand, a.is_backbone, ss, frag
        )
        .unwrap();
    }
    if !ann.rotatable_bonds.is_empty() {
        out.push_str("ROTATABLE\n");
        for &(a, b) in &ann.rotatable_bonds {
            writeln!(out, "{} {}", sys.atoms[a].id, sys.atoms[b].id).unwrap();
        }
    }
    out
}

pub fn write_annotations(
    ann: &AtomAnnotations,
    sys: &MolecularSystem,
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, write_annotations_str(ann, sys))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Annotation parsing
// ---------------------------------------------------------------------------

pub fn parse_annotations(path: impl AsRef<Path>, system: &MolecularSystem) -> Result<AtomAnnotations> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations_str(&text, system)
}

pub fn parse_annotations_str(text: &str, system: &MolecularSystem) -> Result<AtomAnnotations> {
    let mut rows: Vec<(usize, AtomAnnotation)> = Vec::new();
    let mut rotatable = Vec::new();
    let mut in_rotatable = false;
    let mut header: Option<Vec<String>> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "ROTATABLE" {
            in_rotatable = true;
            continue;
        }
        if in_rotatable {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(malformed(line_no, "ROTATABLE row needs 2 atom ids"));
            }
            let a_id: usize = f[0]
                .parse()
                .map_err(|_| malformed(line_no, "bad rotatable atom id"))?;
            let b_id: usize = f[1]
                .parse()
                .map_err(|_| malformed(line_no, "bad rotatable atom id"))?;
            let a = system
                .index_of(a_id)
                .ok_or(MolError::RotatableBondNotInTopology { a: a_id, b: b_id })?;
            let b = system
                .index_of(b_id)
                .ok_or(MolError::RotatableBondNotInTopology { a: a_id, b: b_id })?;
            if !system.bonded(a, b) {
                return Err(MolError::RotatableBondNotInTopology { a: a_id, b: b_id });
            }
            rotatable.push((a, b));
            continue;
        }
        if header.is_none() {
            header = Some(line.split(',').map(|s| s.trim().to_string()).collect());
            continue;
        }
        let h = header.as_ref().unwrap();
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != h.len() {
            return Err(malformed(line_no, "column count does not match header"));
        }
        let get = |name: &str| -> Option<&str> {
            h.iter().position(|c| c == name).map(|i| f[i])
        };
        let atom_id: usize = get("atom_id")
            .ok_or_else(|| malformed(line_no, "missing atom_id column"))?
            .parse()
            .map_err(|_| malformed(line_no, "bad atom_id"))?;
        let idx = system
            .index_of(atom_id)
            .ok_or_else(|| MolError::DanglingReference {
                line: line_no,
                reason: format!("annotation for missing atom id {atom_id}"),
            })?;
        let residue_id: i64 = get("residue_id")
            .ok_or_else(|| malformed(line_no, "missing residue_id column"))?
            .parse()
            .map_err(|_| malformed(line_no, "bad residue_id"))?;
        let residue_name = get("residue_name")
            .ok_or_else(|| malformed(line_no, "missing residue_name column"))?
            .to_string();
        let parse_bool = |v: &str| match v {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(malformed(line_no, format!("bad boolean '{v}'"))),
        };
        let is_ligand = parse_bool(get("is_ligand").ok_or_else(|| malformed(line_no, "missing is_ligand column"))?)?;
        let is_backbone =
            parse_bool(get("is_backbone").ok_or_else(|| malformed(line_no, "missing is_backbone column"))?)?;
        let ss_label = get("secondary_structure")
            .ok_or_else(|| malformed(line_no, "missing secondary_structure column"))?;
        let secondary_structure = match ss_label {
            "helix" => SecondaryStructure::Helix,
            "sheet" => SecondaryStructure::Sheet,
            "loop" => SecondaryStructure::Loop,
            "none" => SecondaryStructure::None,
            other => {
                return Err(MolError::UnknownSecondaryStructureLabel {
                    label: other.to_string(),
                    line: line_no,
                })
            }
        };
        if is_ligand && secondary_structure != SecondaryStructure::None {
            return Err(malformed(line_no, "ligand atoms must have secondary_structure none"));
        }
        let fragment_id = match get("fragment_id") {
            Some("") | None => None,
            Some(v) => Some(v.parse().map_err(|_| malformed(line_no, "bad fragment_id"))?),
        };
        rows.push((
            idx,
            AtomAnnotation {
                residue_id,
                residue_name,
                is_ligand,
                is_backbone,
                secondary_structure,
                fragment_id,
            },
        ));
    }

    if rows.len() != system.atom_count() {
        return Err(MolError::RowCountMismatch {
            rows: rows.len(),
            atoms: system.atom_count(),
        });
    }
    let mut per_atom: Vec<Option<AtomAnnotation>> = vec![None; system.atom_count()];
    for (idx, ann) in rows {
        if per_atom[idx].is_some() {
            return Err(MolError::DuplicateId {
                line: 0,
                reason: format!("annotation for atom index {idx} repeated"),
            });
        }
        per_atom[idx] = Some(ann);
    }
    Ok(AtomAnnotations {
        per_atom: per_atom.into_iter().map(Option::unwrap).collect(),
        rotatable_bonds: rotatable,
    })
}

// ---------------------------------------------------------------------------
// Conformation output
// ---------------------------------------------------------------------------

/// Write a multi-frame XYZ file. Coordinates carry 6 decimals, so a
/// write/read round trip reproduces them to 1e-6 A.
pub fn write_conformations(set: &ConformationSet, path: impl AsRef<Path>) -> Result<()> {
    assert!(!set.frames.is_empty(), "conformation set has no frames");
    let mut out = String::new();
    for frame in &set.frames {
        assert_eq!(
            frame.coordinates.len(),
            set.element_symbols.len(),
            "frame atom count does not match element symbols"
        );
        writeln!(out, "{}", frame.coordinates.len()).unwrap();
        writeln!(out, "{}", frame.label).unwrap();
        for (el, r) in set.element_symbols.iter().zip(&frame.coordinates) {
            writeln!(out, "{el} {:.6} {:.6} {:.6}", r.x, r.y, r.z).unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_conformations(path: impl AsRef<Path>) -> Result<ConformationSet> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let mut set = ConformationSet::default();
    let mut line_no = 0;
    loop {
        let Some(count_line) = lines.next() else { break };
        line_no += 1;
        let count_line = count_line?;
        if count_line.trim().is_empty() {
            continue;
        }
        let n: usize = count_line
            .trim()
            .parse()
            .map_err(|_| malformed(line_no, "expected atom count"))?;
        let label = lines
            .next()
            .ok_or_else(|| malformed(line_no, "missing comment line"))??;
        line_no += 1;
        let mut coords = Vec::with_capacity(n);
        let mut symbols = Vec::with_capacity(n);
        for _ in 0..n {
            let row = lines
                .next()
                .ok_or_else(|| malformed(line_no, "truncated frame"))??;
            line_no += 1;
            let f: Vec<&str> = row.split_whitespace().collect();
            if f.len() != 4 {
                return Err(malformed(line_no, "XYZ row needs 4 fields"));
            }
            symbols.push(f[0].to_string());
            let xyz: Vec<f64> = f[1..]
                .iter()
                .map(|t| t.parse().map_err(|_| malformed(line_no, "bad coordinate")))
                .collect::<Result<_>>()?;
            coords.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
        }
        if set.frames.is_empty() {
            set.element_symbols = symbols;
        } else if set.element_symbols != symbols {
            return Err(malformed(line_no, "frames disagree on atoms"));
        }
        set.frames.push(Frame {
            label,
            coordinates: coords,
        });
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// One field of a table row. Numbers are written with Rust's shortest
/// round-trip formatting, so read-back is exact.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Text(s) => write!(f, "{s}"),
            Cell::Num(x) => write!(f, "{x}"),
        }
    }
}

pub fn write_table(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{}", header.join(",")).unwrap();
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let fields: Vec<String> = row.iter().map(Cell::to_string).collect();
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a comma-separated table written by [`write_table`]. Returns the
/// header and rows of raw string fields.
pub fn read_table(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    let rows = lines
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .collect();
    Ok((header, rows))
}

// ---------------------------------------------------------------------------
// Programmatic construction (fixtures, tests, synthetic systems)
// ---------------------------------------------------------------------------

/// Incremental builder for in-memory systems. Atom ids are assigned 1-based
/// in insertion order.
#[derive(Debug, Default)]
pub struct SystemBuilder {
    sys: MolecularSystem,
}

impl SystemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register an atom type; returns its 1-based type id.
    pub fn atom_type(&mut self, mass: f64, epsilon: f64, sigma: f64) -> usize {
        self.atom_type_14(mass, epsilon, sigma, epsilon, sigma)
    }

    pub fn atom_type_14(
        &mut self,
        mass: f64,
        epsilon: f64,
        sigma: f64,
        epsilon14: f64,
        sigma14: f64,
    ) -> usize {
        self.sys.masses.push(mass);
        self.sys.pair_coeffs.push(PairCoeff {
            epsilon,
            sigma,
            epsilon14,
            sigma14,
        });
        self.sys.masses.len()
    }

    /// Add an atom; returns its 0-based index.
    pub fn atom(&mut self, molecule_id: i64, type_id: usize, charge: f64, position: Vec3) -> usize {
        let idx = self.sys.atoms.len();
        let id = idx + 1;
        self.sys.id_to_index.insert(id, idx);
        self.sys.atoms.push(Atom {
            id,
            molecule_id,
            type_id,
            charge,
            position,
        });
        idx
    }

    pub fn bond_coeff(&mut self, k: f64, r0: f64) -> usize {
        self.sys.bond_coeffs.push(BondCoeff { k, r0 });
        self.sys.bond_coeffs.len()
    }

    pub fn angle_coeff(&mut self, k: f64, theta0: f64) -> usize {
        self.sys.angle_coeffs.push(AngleCoeff { k, theta0 });
        self.sys.angle_coeffs.len()
    }

    pub fn dihedral_coeff(&mut self, terms: Vec<DihedralTerm>) -> usize {
        self.sys.dihedral_coeffs.push(terms);
        self.sys.dihedral_coeffs.len()
    }

    pub fn improper_coeff(&mut self, k: f64, chi0: f64) -> usize {
        self.sys.improper_coeffs.push(ImproperCoeff { k, chi0 });
        self.sys.improper_coeffs.len()
    }

    /// Add a bond between 0-based atom indices.
    pub fn bond(&mut self, coeff_id: usize, a: usize, b: usize) {
        self.sys.bonds.push(BondedTerm {
            coeff: coeff_id - 1,
            atoms: [a, b],
        });
    }

    pub fn angle(&mut self, coeff_id: usize, a: usize, b: usize, c: usize) {
        self.sys.angles.push(BondedTerm {
            coeff: coeff_id - 1,
            atoms: [a, b, c],
        });
    }

    pub fn dihedral(&mut self, coeff_id: usize, a: usize, b: usize, c: usize, d: usize) {
        self.sys.dihedrals.push(BondedTerm {
            coeff: coeff_id - 1,
            atoms: [a, b, c, d],
        });
    }

    pub fn improper(&mut self, coeff_id: usize, a: usize, b: usize, c: usize, d: usize) {
        self.sys.impropers.push(BondedTerm {
            coeff: coeff_id - 1,
            atoms: [a, b, c, d],
        });
    }

    pub fn build(self) -> MolecularSystem {
        self.sys
    }
}
