//! Conformation generation: ligand relaxation, seeded energetic kick, and
//! full-pocket minimization, repeated over a seed list.
//!
//! Every step optimizes transform parameters, never raw coordinates; the
//! initial coordinates stay untouched and each record is a pure function of
//! (system, plan, config, seed) in sequential mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::ffenergy::{EnergyBreakdown, EnergyModel, NonbondedSettings};
use crate::gradient::{cost_and_grad, GradError};
use crate::molio::MolecularSystem;
use crate::segmentation::{GroupKey, SegmentationPlan};
use crate::transform::{self, ParamLayout, TransformMode, TransformParams};
use crate::{Parallelism, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Transform(#[from] crate::transform::TransformError),
    #[error(transparent)]
    Energy(#[from] crate::ffenergy::EnergyError),
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

type Result<T> = std::result::Result<T, ProtocolError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Gentle,
    Aggressive,
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub n_relax_steps: usize,
    pub n_minimize_steps: usize,
    /// Micro-group translation kick bound, A (draws in +-range).
    pub kick_t_range: f64,
    /// Micro-group rotation kick bound, radians.
    pub kick_r_range: f64,
    pub ring_flip_probability: f64,
    pub clash_radius: f64,
    pub seeds: Vec<u64>,
    pub learning_rate: f64,
    /// Fractions of the minimize phase at which the step size decays.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    pub preset: Preset,
    // Aggressive-preset extras; ignored under the gentle preset.
    pub ligand_kick_r_range: f64,
    pub ligand_kick_t_vector: Vec3,
    pub ligand_relax_steps: usize,
    pub ligand_lr_multiplier: f64,
    pub ligand_grad_multiplier: f64,
    pub conformations_per_pair: usize,
    pub extension_steps: usize,
    /// Mean |dE/step| over the trailing window above which a finished record
    /// counts as not fully relaxed and gets extended. No extension when
    /// unset.
    pub extension_slope_threshold: Option<f64>,
    pub parallelism: Parallelism,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n_relax_steps: 200,
            n_minimize_steps: 2000,
            kick_t_range: 1.5,
            kick_r_range: 0.15,
            ring_flip_probability: 0.5,
            clash_radius: 1.0,
            seeds: (0..10).collect(),
            learning_rate: 1e-3,
            lr_milestones: vec![0.5, 0.75],
            lr_decay: 0.1,
            preset: Preset::Gentle,
            ligand_kick_r_range: std::f64::consts::PI,
            ligand_kick_t_vector: Vec3::new(-3.0, -9.0, -9.0),
            ligand_relax_steps: 10_000,
            ligand_lr_multiplier: 100.0,
            ligand_grad_multiplier: 3.0,
            conformations_per_pair: 30,
            extension_steps: 5000,
            extension_slope_threshold: None,
            parallelism: Parallelism::Sequential,
        }
    }
}

impl ProtocolConfig {
    pub fn aggressive() -> Self {
        Self {
            preset: Preset::Aggressive,
            ..Default::default()
        }
    }

    pub fn mode(&self) -> TransformMode {
        match self.preset {
            Preset::Gentle => TransformMode::Standard,
            Preset::Aggressive => TransformMode::LigandWholeBody,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_relax_steps == 0 || self.n_minimize_steps == 0 {
            errs.push("step counts must be positive");
        }
        if self.kick_t_range <= 0.0 || self.kick_r_range <= 0.0 {
            errs.push("kick ranges must be positive");
        }
        if !(0.0..=1.0).contains(&self.ring_flip_probability) {
            errs.push("ring_flip_probability must lie in [0,1]");
        }
        if self.learning_rate <= 0.0 {
            errs.push("learning_rate must be positive");
        }
        if self.seeds.is_empty() {
            errs.push("seed list must be non-empty");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ProtocolError::InvalidConfig(errs.join("; ")))
        }
    }

    /// Parse a key-value config file (`key = value`, `#` comments). Keys are
    /// the field names above; list values are comma-separated.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let stripped = raw.split('#').next().unwrap().trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| ProtocolError::BadValue {
                line,
                key: stripped.to_string(),
                reason: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |reason: &str| ProtocolError::BadValue {
                line,
                key: key.to_string(),
                reason: reason.to_string(),
            };
            macro_rules! num {
                ($t:ty) => {
                    value.parse::<$t>().map_err(|e| bad(&e.to_string()))?
                };
            }
            let list = |value: &str| -> std::result::Result<Vec<f64>, ProtocolError> {
                value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|e| bad(&e.to_string())))
                    .collect()
            };
            match key {
                "n_relax_steps" => cfg.n_relax_steps = num!(usize),
                "n_minimize_steps" => cfg.n_minimize_steps = num!(usize),
                "kick_T_range" => cfg.kick_t_range = num!(f64),
                "kick_R_range" => cfg.kick_r_range = num!(f64),
                "ring_flip_probability" => cfg.ring_flip_probability = num!(f64),
                "clash_radius" => cfg.clash_radius = num!(f64),
                "seeds" => {
                    cfg.seeds = value
                        .split(',')
                        .map(|s| s.trim().parse::<u64>().map_err(|e| bad(&e.to_string())))
                        .collect::<std::result::Result<_, _>>()?
                }
                "learning_rate" => cfg.learning_rate = num!(f64),
                "lr_milestones" => cfg.lr_milestones = list(value)?,
                "lr_decay" => cfg.lr_decay = num!(f64),
                "preset" => {
                    cfg.preset = match value {
                        "gentle" => Preset::Gentle,
                        "aggressive" => Preset::Aggressive,
                        other => return Err(bad(&format!("unknown preset `{other}`"))),
                    }
                }
                "ligand_kick_R_range" => cfg.ligand_kick_r_range = num!(f64),
                "ligand_kick_T_vector" => {
                    let v = list(value)?;
                    if v.len() != 3 {
                        return Err(bad("expected three comma-separated numbers"));
                    }
                    cfg.ligand_kick_t_vector = Vec3::new(v[0], v[1], v[2]);
                }
                "ligand_relax_steps" => cfg.ligand_relax_steps = num!(usize),
                "ligand_lr_multiplier" => cfg.ligand_lr_multiplier = num!(f64),
                "ligand_grad_multiplier" => cfg.ligand_grad_multiplier = num!(f64),
                "conformations_per_pair" => cfg.conformations_per_pair = num!(usize),
                "extension_steps" => cfg.extension_steps = num!(usize),
                "extension_slope_threshold" => {
                    cfg.extension_slope_threshold = Some(num!(f64))
                }
                other => {
                    return Err(ProtocolError::UnknownKey {
                        line,
                        key: other.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProtocolError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }
}

// ---------------------------------------------------------------------------
// Adam with multi-step decay
// ---------------------------------------------------------------------------

/// Plain Adam; moments for masked (frozen) entries never accumulate because
/// their gradients arrive pre-zeroed.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            x[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Step size after multi-step decay: `lr * decay^k` where `k` counts the
/// milestone fractions already passed.
pub fn scheduled_lr(base: f64, decay: f64, milestones: &[f64], step: usize, total: usize) -> f64 {
    let passed = milestones
        .iter()
        .filter(|&&f| step >= (f * total as f64).floor() as usize)
        .count();
    base * decay.powi(passed as i32)
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    Extended,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    /// Complex energy at the current parameters (before the update).
    pub energy: EnergyBreakdown,
    /// Ligand-only energy at the same coordinates.
    pub e_ligand: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub trace: Vec<TraceEntry>,
    pub final_coords: Vec<Vec3>,
    pub final_params: TransformParams,
    pub status: RunStatus,
    /// Complex energy right after the kick, before minimization.
    pub e_post_kick: f64,
}

// ---------------------------------------------------------------------------
// Seeded per-group random streams
// ---------------------------------------------------------------------------

/// Stream for one micro-group's kick draws. Keyed by (seed, stable group
/// identity) so protein groups draw identically whatever ligand is present.
fn group_stream(seed: u64, key: &GroupKey) -> ChaCha8Rng {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&seed.to_le_bytes());
    match key {
        GroupKey::Protein { residue_id, backbone } => {
            s[8] = 0;
            s[9] = *backbone as u8;
            s[16..24].copy_from_slice(&residue_id.to_le_bytes());
        }
        GroupKey::Ligand { ordinal } => {
            s[8] = 1;
            s[16..24].copy_from_slice(&(*ordinal as u64).to_le_bytes());
        }
    }
    ChaCha8Rng::from_seed(s)
}

/// Stream for the ligand macro-group kick (aggressive preset).
fn macro_stream(seed: u64) -> ChaCha8Rng {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&seed.to_le_bytes());
    s[8] = 2;
    ChaCha8Rng::from_seed(s)
}

fn uniform(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    rng.gen_range(-range..=range)
}

fn uniform3(rng: &mut ChaCha8Rng, range: f64) -> Vec3 {
    let x = uniform(rng, range);
    let y = uniform(rng, range);
    let z = uniform(rng, range);
    Vec3::new(x, y, z)
}

// ---------------------------------------------------------------------------
// Kick
// ---------------------------------------------------------------------------

/// Perturb the transform parameters: per micro-group translation and
/// rotation draws, then clash-gated ring flips. Draw order is ascending
/// group id, translation before rotation, so the streams line up across
/// ligands. The aggressive preset also kicks the ligand macro-group.
pub fn apply_kick(
    model: &EnergyModel,
    plan: &SegmentationPlan,
    params: &TransformParams,
    coords_init: &[Vec3],
    cfg: &ProtocolConfig,
    seed: u64,
) -> TransformParams {
    let mut out = params.clone();
    for g in &plan.micro_groups {
        let mut rng = group_stream(seed, &g.key);
        out.theta_t_micro[g.id] += uniform3(&mut rng, cfg.kick_t_range);
        out.theta_r_micro[g.id] += uniform3(&mut rng, cfg.kick_r_range);
        if g.ring_flip_eligible && rng.gen_range(0.0..1.0) < cfg.ring_flip_probability {
            let slot = plan
                .anchored_micro_ids()
                .iter()
                .position(|&id| id == g.id)
                .expect("ring-flip eligible group carries an anchor");
            let mut candidate = out.clone();
            candidate.theta_a[slot] += std::f64::consts::PI;
            let flipped = transform::forward(plan, &candidate, coords_init, cfg.mode())
                .expect("shapes already checked");
            if !model.has_clash(&flipped, &g.atoms, cfg.clash_radius) {
                out = candidate;
            }
        }
    }
    if cfg.preset == Preset::Aggressive {
        if let Some(mg) = plan.ligand_macro() {
            let mut rng = macro_stream(seed);
            out.theta_r_macro[mg.id] += uniform3(&mut rng, cfg.ligand_kick_r_range);
            out.theta_t_macro[mg.id] += cfg.ligand_kick_t_vector;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Optimization phases
// ---------------------------------------------------------------------------

struct Phase<'c> {
    steps: usize,
    lr: f64,
    /// None: constant lr. Some: multi-step decay over `steps`.
    milestones: Option<&'c [f64]>,
    lr_decay: f64,
    /// Flat-parameter entries allowed to move; None means all.
    update_mask: Option<Vec<bool>>,
    /// Gradient scaling (mask, factor) applied before the update.
    grad_scale: Option<(Vec<bool>, f64)>,
    start_step: usize,
}

struct PhaseResult {
    x: Vec<f64>,
    trace: Vec<TraceEntry>,
    failed: bool,
}

fn run_phase(
    model: &mut EnergyModel,
    plan: &SegmentationPlan,
    layout: &ParamLayout,
    coords_init: &[Vec3],
    mode: TransformMode,
    mut x: Vec<f64>,
    ligand_atom_mask: &[bool],
    phase: &Phase,
) -> PhaseResult {
    let mut adam = Adam::new(x.len());
    let mut trace = Vec::with_capacity(phase.steps);
    for s in 0..phase.steps {
        let params = layout.unpack(&x);
        let eval = match cost_and_grad(model, plan, &params, coords_init, mode) {
            Ok(e) => e,
            Err(_) => return PhaseResult { x, trace, failed: true },
        };
        let e_ligand = match model.energy_subset(&eval.coords, ligand_atom_mask) {
            Ok(e) => e.e_total,
            Err(_) => return PhaseResult { x, trace, failed: true },
        };
        trace.push(TraceEntry {
            step: phase.start_step + s,
            energy: eval.energy,
            e_ligand,
        });
        let mut g = layout.pack(&eval.grad);
        if let Some((mask, factor)) = &phase.grad_scale {
            for (gi, &m) in g.iter_mut().zip(mask) {
                if m {
                    *gi *= factor;
                }
            }
        }
        if let Some(mask) = &phase.update_mask {
            for (gi, &m) in g.iter_mut().zip(mask) {
                if !m {
                    *gi = 0.0;
                }
            }
        }
        let lr = match phase.milestones {
            Some(ms) => scheduled_lr(phase.lr, phase.lr_decay, ms, s, phase.steps),
            None => phase.lr,
        };
        adam.step(&mut x, &g, lr);
    }
    PhaseResult { x, trace, failed: false }
}

fn ligand_atom_mask(plan: &SegmentationPlan) -> Vec<bool> {
    let mut mask = vec![false; plan.atom_count()];
    for a in plan.ligand_atoms() {
        mask[a] = true;
    }
    mask
}

pub struct RelaxResult {
    pub params: TransformParams,
    pub coords: Vec<Vec3>,
    pub trace: Vec<TraceEntry>,
    pub failed: bool,
}

/// Relax the ligand against the frozen protein: Adam over the ligand-owned
/// parameter entries only. Under the aggressive preset the ligand
/// macro-group is first kicked (rotation uniform in the configured range,
/// translation set by the configured vector) and the longer step count and
/// step-size multiplier apply.
pub fn relax_ligand(
    system: &MolecularSystem,
    plan: &SegmentationPlan,
    settings: &NonbondedSettings,
    cfg: &ProtocolConfig,
) -> Result<RelaxResult> {
    let mut model = EnergyModel::new(system, *settings);
    model.set_fixed_atoms(&plan.fixed_atoms);
    model.parallelism = cfg.parallelism;
    let layout = ParamLayout::from_plan(plan);
    let coords_init = system.positions();
    let mut params = TransformParams::zeros(plan);

    if cfg.preset == Preset::Aggressive {
        if let Some(mg) = plan.ligand_macro() {
            let seed0 = cfg.seeds.first().copied().unwrap_or(0);
            let mut rng = macro_stream(seed0);
            params.theta_r_macro[mg.id] = uniform3(&mut rng, cfg.ligand_kick_r_range);
            params.theta_t_macro[mg.id] = cfg.ligand_kick_t_vector;
        }
    }

    let (steps, lr) = match cfg.preset {
        Preset::Gentle => (cfg.n_relax_steps, cfg.learning_rate),
        Preset::Aggressive => (
            cfg.ligand_relax_steps,
            cfg.learning_rate * cfg.ligand_lr_multiplier,
        ),
    };
    let phase = Phase {
        steps,
        lr,
        milestones: None,
        lr_decay: cfg.lr_decay,
        update_mask: Some(layout.ligand_mask(plan)),
        grad_scale: None,
        start_step: 0,
    };
    let res = run_phase(
        &mut model,
        plan,
        &layout,
        &coords_init,
        cfg.mode(),
        layout.pack(&params),
        &ligand_atom_mask(plan),
        &phase,
    );
    let params = layout.unpack(&res.x);
    let coords = transform::forward(plan, &params, &coords_init, cfg.mode())?;
    Ok(RelaxResult {
        params,
        coords,
        trace: res.trace,
        failed: res.failed,
    })
}

/// Minimize the full pocket from a kicked state; returns one record.
pub fn minimize(
    system: &MolecularSystem,
    plan: &SegmentationPlan,
    params: &TransformParams,
    settings: &NonbondedSettings,
    cfg: &ProtocolConfig,
    start_step: usize,
    seed: u64,
    relax_trace: &[TraceEntry],
) -> Result<RunRecord> {
    let mut model = EnergyModel::new(system, *settings);
    model.set_fixed_atoms(&plan.fixed_atoms);
    model.parallelism = cfg.parallelism;
    let layout = ParamLayout::from_plan(plan);
    let coords_init = system.positions();

    let e_post_kick = {
        let coords = transform::forward(plan, params, &coords_init, cfg.mode())?;
        model.energy(&coords)?.e_total
    };

    let grad_scale = match cfg.preset {
        Preset::Aggressive => Some((layout.ligand_mask(plan), cfg.ligand_grad_multiplier)),
        Preset::Gentle => None,
    };
    let lmask = ligand_atom_mask(plan);
    let phase = Phase {
        steps: cfg.n_minimize_steps,
        lr: cfg.learning_rate,
        milestones: Some(&cfg.lr_milestones),
        lr_decay: cfg.lr_decay,
        update_mask: None,
        grad_scale: grad_scale.clone(),
        start_step,
    };
    let mut res = run_phase(
        &mut model,
        plan,
        &layout,
        &coords_init,
        cfg.mode(),
        layout.pack(params),
        &lmask,
        &phase,
    );
    let mut status = if res.failed { RunStatus::Failed } else { RunStatus::Converged };

    // Not-fully-relaxed extension: trailing energy slope still steeper than
    // the configured threshold.
    if status == RunStatus::Converged && cfg.preset == Preset::Aggressive {
        if let Some(threshold) = cfg.extension_slope_threshold {
            if trailing_slope(&res.trace).abs() > threshold {
                let ext_phase = Phase {
                    steps: cfg.extension_steps,
                    lr: scheduled_lr(
                        cfg.learning_rate,
                        cfg.lr_decay,
                        &cfg.lr_milestones,
                        cfg.n_minimize_steps,
                        cfg.n_minimize_steps,
                    ),
                    milestones: None,
                    lr_decay: cfg.lr_decay,
                    update_mask: None,
                    grad_scale,
                    start_step: start_step + cfg.n_minimize_steps,
                };
                let ext = run_phase(
                    &mut model,
                    plan,
                    &layout,
                    &coords_init,
                    cfg.mode(),
                    res.x,
                    &lmask,
                    &ext_phase,
                );
                res.x = ext.x;
                res.trace.extend(ext.trace);
                status = if ext.failed { RunStatus::Failed } else { RunStatus::Extended };
            }
        }
    }

    let final_params = layout.unpack(&res.x);
    let final_coords = transform::forward(plan, &final_params, &coords_init, cfg.mode())?;
    let mut trace = relax_trace.to_vec();
    trace.extend(res.trace);
    Ok(RunRecord {
        seed,
        trace,
        final_coords,
        final_params,
        status,
        e_post_kick,
    })
}

/// Mean per-step energy change over the trailing 100 steps.
fn trailing_slope(trace: &[TraceEntry]) -> f64 {
    let w = trace.len().min(100);
    if w < 2 {
        return 0.0;
    }
    let last = &trace[trace.len() - 1];
    let first = &trace[trace.len() - w];
    (last.energy.e_total - first.energy.e_total) / (w - 1) as f64
}

/// Full procedure: one shared ligand relaxation, then kick + minimize per
/// seed. Failures stay in their records; the batch never aborts.
pub fn generate_conformations(
    system: &MolecularSystem,
    plan: &SegmentationPlan,
    settings: &NonbondedSettings,
    cfg: &ProtocolConfig,
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let relax = relax_ligand(system, plan, settings, cfg)?;
    if relax.failed {
        return Err(ProtocolError::InvalidConfig(
            "ligand relaxation diverged to a non-finite state".into(),
        ));
    }

    let seeds = effective_seeds(cfg);
    let run_one = |&seed: &u64| -> Result<RunRecord> {
        let mut model = EnergyModel::new(system, *settings);
        model.set_fixed_atoms(&plan.fixed_atoms);
        model.parallelism = cfg.parallelism;
        let coords_init = system.positions();
        let kicked = apply_kick(&model, plan, &relax.params, &coords_init, cfg, seed);
        minimize(
            system,
            plan,
            &kicked,
            settings,
            cfg,
            relax.trace.len(),
            seed,
            &relax.trace,
        )
    };

    #[cfg(feature = "parallel")]
    if cfg.parallelism.is_parallel() {
        return seeds.par_iter().map(run_one).collect();
    }
    seeds.iter().map(|s| run_one(s)).collect()
}

/// Seed list actually run: the configured seeds, extended with consecutive
/// values up to `conformations_per_pair` under the aggressive preset.
pub fn effective_seeds(cfg: &ProtocolConfig) -> Vec<u64> {
    let mut seeds = cfg.seeds.clone();
    if cfg.preset == Preset::Aggressive {
        let mut next = seeds.iter().copied().max().map_or(0, |m| m + 1);
        while seeds.len() < cfg.conformations_per_pair {
            seeds.push(next);
            next += 1;
        }
        seeds.truncate(cfg.conformations_per_pair);
    }
    seeds
}
