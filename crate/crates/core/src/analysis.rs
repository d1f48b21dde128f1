//! Structural and screening analytics: Kabsch superposition, ligand RMSD,
//! conformation selection, 2-component PCA, NEF and AUC-ROC.

use nalgebra::{DMatrix, DVector};

use crate::{Mat3, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("degenerate geometry: alignment subset is collinear or coincident")]
    DegenerateGeometry,
    #[error("atom count mismatch: reference {reference}, candidate {candidate}")]
    CountMismatch { reference: usize, candidate: usize },
    #[error("PCA needs at least 3 rows, got {0}")]
    TooFewRows(usize),
    #[error("PCA rows have unequal lengths")]
    RaggedRows,
    #[error("data has no variance in any direction")]
    RankDeficient,
    #[error("no active labels present")]
    NoActives,
    #[error("both classes must be present")]
    SingleClass,
}

type Result<T> = std::result::Result<T, AnalysisError>;

// ---------------------------------------------------------------------------
// Kabsch alignment and RMSD
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AlignmentResult {
    /// Proper rotation (det +1) taking mobile into the reference frame.
    pub rotation: Mat3,
    pub translation: Vec3,
    /// RMSD over the alignment subset after applying the transform.
    pub rmsd: f64,
}

impl AlignmentResult {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

/// Least-squares optimal rigid superposition of `mobile` onto `reference`
/// over the atoms in `subset` (indices into both arrays).
pub fn kabsch_align(reference: &[Vec3], mobile: &[Vec3], subset: &[usize]) -> Result<AlignmentResult> {
    if reference.len() != mobile.len() {
        return Err(AnalysisError::CountMismatch {
            reference: reference.len(),
            candidate: mobile.len(),
        });
    }
    if subset.len() < 3 {
        return Err(AnalysisError::DegenerateGeometry);
    }
    let n = subset.len() as f64;
    let c_ref: Vec3 = subset.iter().map(|&i| reference[i]).sum::<Vec3>() / n;
    let c_mob: Vec3 = subset.iter().map(|&i| mobile[i]).sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for &i in subset {
        h += (mobile[i] - c_mob) * (reference[i] - c_ref).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // Rank < 2 leaves a rotation about the degenerate axis undetermined.
    let scale = svd.singular_values[0].max(1.0);
    if svd.singular_values[1] <= 1e-8 * scale {
        return Err(AnalysisError::DegenerateGeometry);
    }
    let d = (v_t.transpose() * u.transpose()).determinant().signum();
    let correction = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v_t.transpose() * correction * u.transpose();
    let translation = c_ref - rotation * c_mob;
    let ss: f64 = subset
        .iter()
        .map(|&i| (rotation * mobile[i] + translation - reference[i]).norm_squared())
        .sum();
    Ok(AlignmentResult {
        rotation,
        translation,
        rmsd: (ss / n).sqrt(),
    })
}

/// RMSD between two already-aligned ligand poses; no re-fitting. `mapping`
/// gives the candidate index for each reference atom when the orders differ.
pub fn ligand_rmsd(
    reference: &[Vec3],
    candidate: &[Vec3],
    mapping: Option<&[usize]>,
) -> Result<f64> {
    if reference.len() != candidate.len() {
        return Err(AnalysisError::CountMismatch {
            reference: reference.len(),
            candidate: candidate.len(),
        });
    }
    if let Some(m) = mapping {
        if m.len() != reference.len() {
            return Err(AnalysisError::CountMismatch {
                reference: reference.len(),
                candidate: m.len(),
            });
        }
    }
    let ss: f64 = reference
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let j = mapping.map_or(i, |m| m[i]);
            (r - candidate[j]).norm_squared()
        })
        .sum();
    Ok((ss / reference.len() as f64).sqrt())
}

/// Indices of the `k` lowest-score entries, ties broken by input order.
pub fn select_best_conformations(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    idx.truncate(k);
    idx
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Two orthonormal components, descending variance. Sign fixed so each
    /// component's largest-magnitude coefficient is positive.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

fn fix_sign(v: &mut DVector<f64>) {
    let lead = v
        .iter()
        .cloned()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if lead < 0.0 {
        *v *= -1.0;
    }
}

/// Fit a 2-component PCA: mean-centered sample covariance
/// eigendecomposition. With only one non-trivial variance direction the
/// second component is still a deterministic unit vector from the null
/// space, with variance 0.
pub fn pca_fit(rows: &[Vec<f64>]) -> Result<PcaModel> {
    if rows.len() < 3 {
        return Err(AnalysisError::TooFewRows(rows.len()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(AnalysisError::RaggedRows);
    }
    if d < 2 {
        return Err(AnalysisError::RankDeficient);
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let centered = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1.0);
    let eig = cov.symmetric_eigen();
    // Eigenpairs in descending eigenvalue order.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    if eig.eigenvalues[order[0]] <= 1e-12 {
        return Err(AnalysisError::RankDeficient);
    }
    let mut comps = Vec::new();
    let mut vars = Vec::new();
    for &i in order.iter().take(2) {
        let mut v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        fix_sign(&mut v);
        comps.push(v.iter().cloned().collect::<Vec<f64>>());
        vars.push(eig.eigenvalues[i].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components: [comps[0].clone(), comps[1].clone()],
        explained_variance: [vars[0], vars[1]],
    })
}

/// Project rows onto (PC1, PC2).
pub fn pca_transform(model: &PcaModel, rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let d = model.mean.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(AnalysisError::RaggedRows);
    }
    Ok(rows
        .iter()
        .map(|r| {
            let mut out = [0.0; 2];
            for (k, comp) in model.components.iter().enumerate() {
                out[k] = r
                    .iter()
                    .zip(comp)
                    .zip(&model.mean)
                    .map(|((x, c), m)| (x - m) * c)
                    .sum();
            }
            out
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Screening metrics
// ---------------------------------------------------------------------------

/// Normalized enrichment factor at fraction `chi`: actives found in the
/// top `ceil(chi * m)` by descending score, over the best achievable count.
/// Ties keep input order.
pub fn nef(scores: &[f64], labels: &[bool], chi: f64) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    assert!(chi > 0.0 && chi <= 1.0, "chi must lie in (0, 1]");
    let m = scores.len();
    let a = labels.iter().filter(|&&l| l).count();
    if a == 0 {
        return Err(AnalysisError::NoActives);
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&x, &y| scores[y].partial_cmp(&scores[x]).unwrap());
    let top = (chi * m as f64).ceil() as usize;
    let a_s = idx.iter().take(top).filter(|&&i| labels[i]).count();
    Ok(a_s as f64 / top.min(a) as f64)
}

/// AUC-ROC in Mann-Whitney form: the probability a random active outscores
/// a random decoy, ties counted one half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let actives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let decoys: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    if actives.is_empty() || decoys.is_empty() {
        return Err(AnalysisError::SingleClass);
    }
    let mut wins = 0.0;
    for &a in &actives {
        for &d in &decoys {
            wins += if a > d {
                1.0
            } else if a == d {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (actives.len() * decoys.len()) as f64)
}
