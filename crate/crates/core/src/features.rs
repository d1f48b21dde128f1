//! Formation-energy traces and the per-ligand screening feature vector.
//!
//! The formation energy of one optimization step is
//! `dE = E_complex - E_ligand - E_protein_init`: complex energy at the
//! current coordinates, minus the ligand evaluated alone at the same
//! coordinates, minus the protein evaluated alone at the initial
//! coordinates. The per-step trace is downsampled by stride and scaled, then
//! concatenated with a docking-score block into one row per ligand.

use std::collections::HashMap;

use crate::ffenergy::{EnergyError, EnergyModel, NonbondedSettings};
use crate::molio::MolecularSystem;
use crate::protocol::{RunRecord, RunStatus};
use crate::segmentation::SegmentationPlan;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("record for seed {seed} failed; no formation-energy trace")]
    FailedRecord { seed: u64 },
    #[error("trace length {len} not divisible by downsample factor {factor}")]
    LengthNotDivisible { len: usize, factor: usize },
    #[error("score table has {got} per-conformation scores, expected {expected}")]
    ScoreCountMismatch { expected: usize, got: usize },
    #[error("conformation feature blocks disagree in length ({a} vs {b})")]
    BlockLengthMismatch { a: usize, b: usize },
    #[error("score table: {0}")]
    MalformedScoreTable(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

type Result<T> = std::result::Result<T, FeatureError>;

/// Per-step formation energies for one record.
#[derive(Debug, Clone)]
pub struct FeatureTrace {
    pub delta_e: Vec<f64>,
    /// Constant protein-alone reference, identical across records.
    pub e_protein_init: f64,
}

/// Protein-alone energy at the initial coordinates.
pub fn protein_init_energy(
    system: &MolecularSystem,
    plan: &SegmentationPlan,
    settings: &NonbondedSettings,
) -> Result<f64> {
    let mut model = EnergyModel::new(system, *settings);
    model.set_fixed_atoms(&plan.fixed_atoms);
    let ligand: std::collections::HashSet<usize> = plan.ligand_atoms().into_iter().collect();
    let mask: Vec<bool> = (0..plan.atom_count()).map(|i| !ligand.contains(&i)).collect();
    Ok(model.energy_subset(&system.positions(), &mask)?.e_total)
}

/// Formation-energy trace of one non-failed record. The complex and
/// ligand-alone energies were recorded during the run; only the protein
/// reference is evaluated here.
pub fn delta_e_trace(
    system: &MolecularSystem,
    plan: &SegmentationPlan,
    record: &RunRecord,
    settings: &NonbondedSettings,
) -> Result<FeatureTrace> {
    if record.status == RunStatus::Failed {
        return Err(FeatureError::FailedRecord { seed: record.seed });
    }
    let e_protein_init = protein_init_energy(system, plan, settings)?;
    let delta_e = record
        .trace
        .iter()
        .map(|t| t.energy.e_total - t.e_ligand - e_protein_init)
        .collect();
    Ok(FeatureTrace {
        delta_e,
        e_protein_init,
    })
}

/// Stride-downsample: every `factor`-th value starting at index
/// `factor - 1`, divided by `scale`. A 2200-step trace with the default
/// factor 100 and scale 1000 gives 22 values.
pub fn downsample_trace(trace: &FeatureTrace, factor: usize, scale: f64) -> Result<Vec<f64>> {
    assert!(factor > 0 && scale != 0.0);
    let len = trace.delta_e.len();
    if len % factor != 0 {
        return Err(FeatureError::LengthNotDivisible { len, factor });
    }
    Ok(trace
        .delta_e
        .iter()
        .skip(factor - 1)
        .step_by(factor)
        .map(|v| v / scale)
        .collect())
}

/// One ligand's docking-score block.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub initial: f64,
    pub relaxed: f64,
    pub per_conf: Vec<f64>,
    /// True when the scores were substituted by the engine's own
    /// interaction energies instead of an external docking tool.
    pub fallback: bool,
}

/// Assembled per-ligand row: `f` formation-energy features per conformation
/// times `n` conformations, then `n + 2` scores. 232 columns at f = 22,
/// n = 10.
#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub ligand_id: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// True where the value is a placeholder from a failed record.
    pub mask: Vec<bool>,
    pub scores_fallback: bool,
}

/// Concatenate the per-conformation feature blocks (`None` for failed
/// records) and the score block. Failed blocks emit zeros with their mask
/// bits set.
pub fn assemble_features(
    ligand_id: &str,
    conf_features: &[Option<Vec<f64>>],
    scores: &ScoreRow,
) -> Result<FeatureVector> {
    let n = conf_features.len();
    if scores.per_conf.len() != n {
        return Err(FeatureError::ScoreCountMismatch {
            expected: n,
            got: scores.per_conf.len(),
        });
    }
    let mut block_len: Option<usize> = None;
    for f in conf_features.iter().flatten() {
        match block_len {
            None => block_len = Some(f.len()),
            Some(l) if l != f.len() => {
                return Err(FeatureError::BlockLengthMismatch { a: l, b: f.len() })
            }
            _ => {}
        }
    }
    let f = block_len.unwrap_or(22);

    let mut names = Vec::with_capacity(f * n + n + 2);
    let mut values = Vec::with_capacity(f * n + n + 2);
    let mut mask = Vec::with_capacity(f * n + n + 2);
    for (c, block) in conf_features.iter().enumerate() {
        for k in 0..f {
            names.push(format!("de_conf{}_{}", c + 1, k + 1));
            match block {
                Some(b) => {
                    values.push(b[k]);
                    mask.push(false);
                }
                None => {
                    values.push(0.0);
                    mask.push(true);
                }
            }
        }
    }
    names.push("score_initial".into());
    values.push(scores.initial);
    mask.push(false);
    names.push("score_relaxed".into());
    values.push(scores.relaxed);
    mask.push(false);
    for (c, &s) in scores.per_conf.iter().enumerate() {
        names.push(format!("score_conf_{}", c + 1));
        values.push(s);
        mask.push(false);
    }
    Ok(FeatureVector {
        ligand_id: ligand_id.to_string(),
        names,
        values,
        mask,
        scores_fallback: scores.fallback,
    })
}

/// Engine-derived substitute for an external score table: protein-ligand
/// interaction energy on the initial structure, the relaxed structure, and
/// each final conformation.
pub fn fallback_scores(
    system: &MolecularSystem,
    plan: &SegmentationPlan,
    relaxed_coords: &[crate::Vec3],
    records: &[RunRecord],
    settings: &NonbondedSettings,
) -> Result<ScoreRow> {
    let model = EnergyModel::new(system, *settings);
    let ligand = plan.ligand_atoms();
    let protein: Vec<usize> =
        (0..plan.atom_count()).filter(|i| !ligand.contains(i)).collect();
    let score = |coords: &[crate::Vec3]| model.interaction_energy(coords, &protein, &ligand);
    let initial = score(&system.positions())?;
    let relaxed = score(relaxed_coords)?;
    let per_conf = records
        .iter()
        .map(|r| score(&r.final_coords))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(ScoreRow {
        initial,
        relaxed,
        per_conf,
        fallback: true,
    })
}

/// Parse the external score table: comma-separated, header
/// `ligand_id,score_initial,score_relaxed,score_conf_1..score_conf_n`.
pub fn parse_score_table(text: &str) -> Result<HashMap<String, ScoreRow>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| FeatureError::MalformedScoreTable("empty table".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "ligand_id" || cols[1] != "score_initial" || cols[2] != "score_relaxed"
    {
        return Err(FeatureError::MalformedScoreTable(format!(
            "unexpected header `{header}`"
        )));
    }
    let n = cols.len() - 3;
    let mut out = HashMap::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(FeatureError::MalformedScoreTable(format!(
                "line {}: {} fields, header has {}",
                lineno + 1,
                fields.len(),
                cols.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| {
                FeatureError::MalformedScoreTable(format!("line {}: {e}", lineno + 1))
            })
        };
        let per_conf = fields[3..3 + n]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<_>>>()?;
        out.insert(
            fields[0].to_string(),
            ScoreRow {
                initial: parse(fields[1])?,
                relaxed: parse(fields[2])?,
                per_conf,
                fallback: false,
            },
        );
    }
    Ok(out)
}
